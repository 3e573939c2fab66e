#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bitsift/data.hpp"
#include "bitsift/model.hpp"
#include "bitsift/precision_adjust.hpp"
#include "bitsift/scheme.hpp"

namespace bitsift {

struct LrSchedule {
    double initial = 0.1;
    std::vector<std::size_t> milestones;  // decay applies from the epoch after each milestone
    double factor = 0.1;

    double at(std::size_t epoch) const;  // epochs are 1-based
    void validate() const;
};

struct TrainConfig {
    std::size_t epochs = 30;
    LrSchedule lr;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t batch_size = 128;
    std::uint64_t seed = 1;

    void validate() const;
};

struct BsqConfig {
    TrainConfig train;
    double alpha = 5e-3;
    std::size_t requant_interval = 10;  // epochs; 0 = only the final adjustment
    int n0 = 8;
    bool reweigh = true;

    void validate() const;
};

struct TrainRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    LossBreakdown loss;
    double eval_accuracy = 0.0;
    std::vector<int> precisions;
    double bits_per_param = 0.0;
    double compression_rate = 0.0;
};

struct AdjustEvent {
    std::size_t epoch = 0;
    AdjustReport report;
};

// 32 / bits-per-parameter; 0 for the degenerate all-skipped model.
double compression_from_bpp(double bits_per_param);

// SGD with momentum and decoupled-by-name weight decay. Buffers are keyed by
// parameter name so plane buffers can be dropped when re-quantization replaces
// the plane identities.
class Sgd {
public:
    Sgd() = default;
    Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

    void step(const std::string& key, Tensor& param, const Tensor& grad, double lr);
    void step(const std::string& key, Tensor& param, const Tensor& grad, double lr,
              double weight_decay);
    void drop_prefix(const std::string& prefix);

    double momentum() const { return momentum_; }
    double weight_decay() const { return weight_decay_; }
    const std::map<std::string, Tensor>& buffers() const { return buffers_; }
    void set_buffer(std::string key, Tensor buffer);
    void set_hyper(double momentum, double weight_decay);

private:
    double momentum_ = 0.9;
    double weight_decay_ = 1e-4;
    std::map<std::string, Tensor> buffers_;
};

// Top-1 accuracy in [0,1]; deterministic and independent of batch size.
double evaluate(Model& model, const Dataset& data, std::size_t batch_size = 256);

struct TrainOutput {
    Model model;  // best-eval checkpoint (the initial state counts as a candidate)
    std::vector<TrainRecord> records;
    double initial_accuracy = 0.0;
    double best_accuracy = 0.0;
    Sgd optimizer;
    std::array<std::uint64_t, 4> rng_state{};
};

// Floating-point pretraining with SGD momentum and milestone decay.
TrainOutput pretrain(Model model, const Dataset& train_set, const Dataset& eval_set,
                     const TrainConfig& cfg);

struct BsqOutput {
    Model model;  // final state after the closing re-quantization
    std::vector<TrainRecord> records;
    std::vector<AdjustEvent> adjustments;
    double final_accuracy = 0.0;
    Sgd optimizer;
    std::array<std::uint64_t, 4> rng_state{};
};

// Bit-representation training under the reweighed group-Lasso objective with
// periodic re-quantization; the model must have bit-plane state attached.
BsqOutput bsq_train(Model model, const Dataset& train_set, const Dataset& eval_set,
                    const BsqConfig& cfg);

// Fixed-scheme quantization-aware finetuning (per-step dynamic range scaling,
// straight-through gradients). Precisions come from the scheme and never move.
TrainOutput finetune(Model model, const QuantScheme& scheme, const Dataset& train_set,
                     const Dataset& eval_set, const TrainConfig& cfg);

// The comparison baseline: same engine as finetune, starting from dense
// weights (random init or a pretrained checkpoint) quantized to the scheme.
TrainOutput train_from_scratch(Model float_model, const QuantScheme& scheme,
                               const Dataset& train_set, const Dataset& eval_set,
                               const TrainConfig& cfg);

}  // namespace bitsift
