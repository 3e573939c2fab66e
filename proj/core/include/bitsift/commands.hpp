#pragma once

#include <string>
#include <vector>

#include "bitsift/config.hpp"
#include "bitsift/pipeline.hpp"

namespace bitsift {

// Command implementations behind the CLI. Each writes its artifacts under
// cfg.out_dir and returns a process exit code (0 on success). run_cli maps
// exceptions onto the documented codes: 2 config, 3 divergence/invariant,
// 4 io/format.
int cmd_pretrain(const RunConfig& cfg);
int cmd_bsq(const RunConfig& cfg);
int cmd_finetune(const RunConfig& cfg);
int cmd_scratch(const RunConfig& cfg);
int cmd_sweep(const RunConfig& cfg, const std::vector<double>& alphas);
int cmd_analyze(const std::vector<std::string>& inputs, const std::string& out_dir);
int cmd_export_scheme(const std::string& checkpoint_path, const std::string& out_path);

int run_cli(int argc, const char* const* argv);

// Shared helpers for metrics emission (used by tests as well).
std::string fmt_g17(double v);
void write_metrics_csv(const std::string& path, const std::vector<TrainRecord>& records);
void write_adjustments_csv(const std::string& path, const std::vector<AdjustEvent>& events);

// The regularization term of a breakdown, alpha * sum coeff*bgl, computed in
// the same operation order as the stored total so ce + reg == total exactly.
double regularization_term(const LossBreakdown& loss);

}  // namespace bitsift
