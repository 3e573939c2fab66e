#include "bitsift/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "bitsift/checkpoint.hpp"
#include "bitsift/error.hpp"
#include "bitsift/scheme.hpp"
#include "bitsift/version.hpp"

namespace bitsift {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double regularization_term(const LossBreakdown& loss) {
    double acc = 0.0;
    for (std::size_t l = 0; l < loss.per_layer_bgl.size(); ++l) {
        acc += loss.coefficients[l] * loss.per_layer_bgl[l];
    }
    return loss.alpha * acc;
}

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create output directory " + dir + ": " + ec.message());
    }
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void write_results_json(const std::string& path, const ordered_json& j) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << j.dump(2) << "\n";
}

Provenance make_provenance(const RunConfig& cfg, std::uint64_t seed) {
    Provenance p;
    p.config_hash = cfg.hash;
    p.seed = seed;
    p.code_version = kCodeVersion;
    return p;
}

Checkpoint make_checkpoint(const RunConfig& cfg, std::uint64_t seed, Model model, Sgd optimizer,
                           const std::array<std::uint64_t, 4>& rng_state, std::size_t epoch) {
    Checkpoint ckpt;
    ckpt.epoch = epoch;
    ckpt.model = std::move(model);
    ckpt.optimizer = std::move(optimizer);
    ckpt.rng_state = rng_state;
    ckpt.config_hash = cfg.hash;
    ckpt.seed = seed;
    ckpt.code_version = kCodeVersion;
    return ckpt;
}

std::string precisions_field(const std::vector<int>& precisions) {
    std::string s;
    for (std::size_t i = 0; i < precisions.size(); ++i) {
        if (i) s += ';';
        s += std::to_string(precisions[i]);
    }
    return s;
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<TrainRecord>& records) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << "epoch,lr,ce,reg,total,eval_acc,bits_per_param,compression,precisions\n";
    for (const TrainRecord& r : records) {
        out << r.epoch << ',' << fmt_g17(r.lr) << ',' << fmt_g17(r.loss.ce) << ','
            << fmt_g17(regularization_term(r.loss)) << ',' << fmt_g17(r.loss.total) << ','
            << fmt_g17(r.eval_accuracy) << ',' << fmt_g17(r.bits_per_param) << ','
            << fmt_g17(r.compression_rate) << ',' << precisions_field(r.precisions) << "\n";
    }
    if (!out) {
        throw IoError("short write to " + path);
    }
}

void write_adjustments_csv(const std::string& path, const std::vector<AdjustEvent>& events) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << "epoch,layer_id,n_before,n_after,s_before,s_after,msb_removed,lsb_removed,carried\n";
    for (const AdjustEvent& e : events) {
        out << e.epoch << ',' << e.report.layer_id << ',' << e.report.n_before << ','
            << e.report.n_after << ',' << fmt_g17(e.report.s_before) << ','
            << fmt_g17(e.report.s_after) << ',' << e.report.msb_removed << ','
            << e.report.lsb_removed << ',' << (e.report.carried ? 1 : 0) << "\n";
    }
}

int cmd_pretrain(const RunConfig& cfg) {
    ensure_dir(cfg.out_dir);
    auto [train_set, test_set] = load_datasets(cfg.data);
    Rng init_rng = Rng(cfg.pretrain.seed).fork(0x1);
    Model model = build_model(cfg.model, init_rng);
    TrainOutput out = pretrain(std::move(model), train_set, test_set, cfg.pretrain);

    Checkpoint ckpt = make_checkpoint(cfg, cfg.pretrain.seed, out.model, out.optimizer,
                                      out.rng_state, cfg.pretrain.epochs);
    save_checkpoint(join_path(cfg.out_dir, "pretrain.ckpt"), ckpt);
    write_metrics_csv(join_path(cfg.out_dir, "pretrain_metrics.csv"), out.records);
    write_results_json(join_path(cfg.out_dir, "results.json"),
                       {{"command", "pretrain"},
                        {"accuracy", out.best_accuracy},
                        {"initial_accuracy", out.initial_accuracy}});
    std::cout << "pretrain: best eval accuracy " << out.best_accuracy << "\n";
    return 0;
}

int cmd_bsq(const RunConfig& cfg) {
    ensure_dir(cfg.out_dir);
    auto [train_set, test_set] = load_datasets(cfg.data);

    Model model;
    if (!cfg.init_checkpoint.empty()) {
        Checkpoint init = load_checkpoint(cfg.init_checkpoint);
        if (init.model.mode != ModelMode::dense) {
            throw ValueError("bsq: init checkpoint must hold floating-point weights");
        }
        model = std::move(init.model);
    } else {
        Rng init_rng = Rng(cfg.bsq.train.seed).fork(0x1);
        model = build_model(cfg.model, init_rng);
    }
    attach_bsq(model, cfg.bsq.n0);

    BsqOutput out = bsq_train(std::move(model), train_set, test_set, cfg.bsq);
    const QuantScheme scheme =
        scheme_from_model(out.model, make_provenance(cfg, cfg.bsq.train.seed));

    save_scheme(join_path(cfg.out_dir, "scheme.json"), scheme);
    write_metrics_csv(join_path(cfg.out_dir, "metrics.csv"), out.records);
    write_adjustments_csv(join_path(cfg.out_dir, "adjustments.csv"), out.adjustments);
    Checkpoint ckpt = make_checkpoint(cfg, cfg.bsq.train.seed, out.model, out.optimizer,
                                      out.rng_state, cfg.bsq.train.epochs);
    save_checkpoint(join_path(cfg.out_dir, "bsq.ckpt"), ckpt);
    write_results_json(join_path(cfg.out_dir, "results.json"),
                       {{"command", "bsq"},
                        {"accuracy", out.final_accuracy},
                        {"bits_per_param", scheme.bits_per_param},
                        {"compression_rate", scheme.compression_rate}});
    std::cout << "bsq: bits/param " << scheme.bits_per_param << " (compression "
              << scheme.compression_rate << "x), accuracy " << out.final_accuracy << "\n";
    return 0;
}

int cmd_finetune(const RunConfig& cfg) {
    ensure_dir(cfg.out_dir);
    if (cfg.init_checkpoint.empty()) {
        throw ConfigError("config: io.init_checkpoint is required for finetune");
    }
    if (cfg.scheme_path.empty()) {
        throw ConfigError("config: io.scheme is required for finetune");
    }
    auto [train_set, test_set] = load_datasets(cfg.data);
    Checkpoint init = load_checkpoint(cfg.init_checkpoint);
    const QuantScheme scheme = load_scheme(cfg.scheme_path);

    double acc_before = evaluate(init.model, test_set);
    TrainOutput out = finetune(std::move(init.model), scheme, train_set, test_set, cfg.finetune);

    Checkpoint ckpt = make_checkpoint(cfg, cfg.finetune.seed, out.model, out.optimizer,
                                      out.rng_state, cfg.finetune.epochs);
    save_checkpoint(join_path(cfg.out_dir, "finetune.ckpt"), ckpt);
    write_metrics_csv(join_path(cfg.out_dir, "finetune_metrics.csv"), out.records);
    write_results_json(join_path(cfg.out_dir, "results.json"),
                       {{"command", "finetune"},
                        {"acc_before_ft", acc_before},
                        {"acc_after_ft", out.best_accuracy},
                        {"bits_per_param", scheme.bits_per_param},
                        {"compression_rate", scheme.compression_rate}});
    std::cout << "finetune: " << acc_before << " -> " << out.best_accuracy << "\n";
    return 0;
}

int cmd_scratch(const RunConfig& cfg) {
    ensure_dir(cfg.out_dir);
    if (cfg.scheme_path.empty()) {
        throw ConfigError("config: io.scheme is required for scratch");
    }
    auto [train_set, test_set] = load_datasets(cfg.data);
    const QuantScheme scheme = load_scheme(cfg.scheme_path);

    Model model;
    if (cfg.scratch_init == "checkpoint") {
        Checkpoint init = load_checkpoint(cfg.scratch_checkpoint);
        if (init.model.mode != ModelMode::dense) {
            throw ValueError("scratch: init checkpoint must hold floating-point weights");
        }
        model = std::move(init.model);
    } else {
        Rng init_rng = Rng(cfg.scratch.seed).fork(0x5);
        model = build_model(cfg.model, init_rng);
    }

    TrainOutput out = train_from_scratch(std::move(model), scheme, train_set, test_set,
                                         cfg.scratch);

    // Paired comparison row against the BSQ+finetune accuracy, when available.
    double bsq_ft_acc = -1.0;
    if (!cfg.compare_results.empty()) {
        std::ifstream in(cfg.compare_results);
        if (!in) {
            throw IoError("cannot open " + cfg.compare_results);
        }
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("scratch: compare_results is not valid JSON: " + std::string(e.what()));
        }
        if (j.contains("acc_after_ft")) {
            bsq_ft_acc = j["acc_after_ft"].get<double>();
        }
    }
    {
        std::ofstream out_csv(join_path(cfg.out_dir, "comparison.csv"));
        out_csv << "scratch_acc,bsq_ft_acc\n";
        out_csv << fmt_g17(out.best_accuracy) << ','
                << (bsq_ft_acc >= 0.0 ? fmt_g17(bsq_ft_acc) : std::string("")) << "\n";
    }

    Checkpoint ckpt = make_checkpoint(cfg, cfg.scratch.seed, out.model, out.optimizer,
                                      out.rng_state, cfg.scratch.epochs);
    save_checkpoint(join_path(cfg.out_dir, "scratch.ckpt"), ckpt);
    write_metrics_csv(join_path(cfg.out_dir, "scratch_metrics.csv"), out.records);
    write_results_json(join_path(cfg.out_dir, "results.json"),
                       {{"command", "scratch"},
                        {"accuracy", out.best_accuracy},
                        {"bsq_ft_accuracy", bsq_ft_acc}});
    std::cout << "scratch: accuracy " << out.best_accuracy << "\n";
    return 0;
}

int cmd_sweep(const RunConfig& cfg, const std::vector<double>& alphas_arg) {
    std::vector<double> alphas = alphas_arg.empty() ? cfg.sweep.alphas : alphas_arg;
    if (alphas.size() < 2) {
        throw ConfigError("sweep: need at least 2 alpha values");
    }
    std::vector<std::uint64_t> seeds = cfg.sweep.seeds;
    if (seeds.empty()) {
        seeds.push_back(cfg.bsq.train.seed);
    }
    ensure_dir(cfg.out_dir);

    std::ofstream table(join_path(cfg.out_dir, "sweep.csv"));
    if (!table) {
        throw IoError("cannot write sweep.csv");
    }
    table << "alpha,seed,bits_per_param,compression,acc_before_ft,acc_after_ft\n";

    std::size_t failures = 0, runs = 0;
    for (std::uint64_t seed : seeds) {
        // One pretraining per seed, shared across the alpha grid.
        RunConfig seed_cfg = cfg;
        seed_cfg.apply_seed_override(seed);
        const std::string seed_dir = join_path(cfg.out_dir, "seed_" + std::to_string(seed));
        std::string pretrain_ckpt;
        try {
            seed_cfg.out_dir = seed_dir;
            ensure_dir(seed_dir);
            if (cfg.init_checkpoint.empty()) {
                cmd_pretrain(seed_cfg);
                pretrain_ckpt = join_path(seed_dir, "pretrain.ckpt");
            } else {
                pretrain_ckpt = cfg.init_checkpoint;
            }
        } catch (const std::exception& e) {
            std::cerr << "sweep: pretraining for seed " << seed << " failed: " << e.what() << "\n";
            failures += alphas.size();
            runs += alphas.size();
            continue;
        }

        for (double alpha : alphas) {
            ++runs;
            RunConfig sub = seed_cfg;
            sub.bsq.alpha = alpha;
            sub.out_dir = join_path(seed_dir, "alpha_" + fmt_g17(alpha));
            sub.init_checkpoint = pretrain_ckpt;
            try {
                ensure_dir(sub.out_dir);
                cmd_bsq(sub);

                RunConfig ft = sub;
                ft.init_checkpoint = join_path(sub.out_dir, "bsq.ckpt");
                ft.scheme_path = join_path(sub.out_dir, "scheme.json");
                cmd_finetune(ft);

                std::ifstream bsq_res(join_path(sub.out_dir, "results.json"));
                nlohmann::json jb;
                bsq_res >> jb;
                std::ifstream ft_res(join_path(ft.out_dir, "results.json"));
                nlohmann::json jf;
                ft_res >> jf;

                table << fmt_g17(alpha) << ',' << seed << ','
                      << fmt_g17(jb["bits_per_param"].get<double>()) << ','
                      << fmt_g17(jb["compression_rate"].get<double>()) << ','
                      << fmt_g17(jf["acc_before_ft"].get<double>()) << ','
                      << fmt_g17(jf["acc_after_ft"].get<double>()) << "\n";
                table.flush();
            } catch (const std::exception& e) {
                std::cerr << "sweep: alpha " << alpha << " seed " << seed
                          << " failed: " << e.what() << "\n";
                ++failures;
            }
        }
    }
    if (failures == runs) {
        std::cerr << "sweep: all sub-runs failed\n";
        return 3;
    }
    std::cout << "sweep: " << (runs - failures) << "/" << runs << " sub-runs succeeded\n";
    return 0;
}

namespace {

struct SchemeSummary {
    std::string file;
    double bpp = 0.0;
    double stored = 0.0;
    double computed = 0.0;
    bool mismatch = false;
};

void analyze_scheme_file(const std::string& path, std::ofstream& layers_csv,
                         std::vector<SchemeSummary>& summaries) {
    QuantScheme scheme;
    try {
        scheme = load_scheme(path, /*strict=*/false);
    } catch (const FormatError& e) {
        throw ConfigError(std::string("analyze: ") + e.what());
    }
    for (const SchemeLayer& l : scheme.layers) {
        layers_csv << path << ',' << l.layer_id << ',' << l.weight_bits << ',' << l.activation_bits
                   << ',' << l.param_count << ',' << fmt_g17(l.scale) << ','
                   << (l.skippable ? 1 : 0) << "\n";
    }
    SchemeSummary s;
    s.file = path;
    s.bpp = scheme.bits_per_param;
    s.stored = scheme.compression_rate;
    s.computed = compression_from_bpp(scheme.bits_per_param);
    s.mismatch = std::fabs(s.stored - s.computed) > 0.01;
    summaries.push_back(s);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

void analyze_csv_file(const std::string& path, std::ofstream& precisions_csv,
                      std::vector<SchemeSummary>& summaries) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    std::string header;
    std::getline(in, header);
    const std::vector<std::string> cols = split_csv_line(header);
    std::string line;
    if (!cols.empty() && cols[0] == "epoch") {
        // metrics file: export the per-epoch precision vectors
        std::size_t prec_col = cols.size();
        std::size_t bpp_col = cols.size();
        for (std::size_t i = 0; i < cols.size(); ++i) {
            if (cols[i] == "precisions") prec_col = i;
            if (cols[i] == "bits_per_param") bpp_col = i;
        }
        if (prec_col == cols.size() || bpp_col == cols.size()) {
            throw ConfigError("analyze: " + path + " lacks metrics columns");
        }
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto fields = split_csv_line(line);
            if (fields.size() != cols.size()) {
                throw ConfigError("analyze: " + path + " has a malformed row");
            }
            std::string prec = fields[prec_col];
            for (char& c : prec) {
                if (c == ';') c = ' ';
            }
            precisions_csv << path << ',' << fields[0] << ',' << fields[bpp_col] << ",\"" << prec
                           << "\"\n";
        }
    } else if (!cols.empty() && cols[0] == "alpha") {
        // sweep table: verify the 32/bpp convention row by row
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto fields = split_csv_line(line);
            if (fields.size() != cols.size()) {
                throw ConfigError("analyze: " + path + " has a malformed row");
            }
            SchemeSummary s;
            s.file = path + ":alpha=" + fields[0];
            s.bpp = std::strtod(fields[2].c_str(), nullptr);
            s.stored = std::strtod(fields[3].c_str(), nullptr);
            s.computed = compression_from_bpp(s.bpp);
            s.mismatch = std::fabs(s.stored - s.computed) > 1e-9;
            summaries.push_back(s);
        }
    } else {
        throw ConfigError("analyze: " + path + " is neither a metrics nor a sweep table");
    }
}

}  // namespace

int cmd_analyze(const std::vector<std::string>& inputs, const std::string& out_dir) {
    if (inputs.empty()) {
        throw ConfigError("analyze: no input files");
    }
    ensure_dir(out_dir);
    std::ofstream layers_csv(join_path(out_dir, "analyze_layers.csv"));
    layers_csv << "file,layer_id,weight_bits,activation_bits,param_count,scale,skippable\n";
    std::ofstream precisions_csv(join_path(out_dir, "analyze_precisions.csv"));
    precisions_csv << "file,epoch,bits_per_param,precisions\n";

    std::vector<SchemeSummary> summaries;
    for (const std::string& path : inputs) {
        if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
            analyze_scheme_file(path, layers_csv, summaries);
        } else {
            analyze_csv_file(path, precisions_csv, summaries);
        }
    }

    std::ofstream summary_csv(join_path(out_dir, "analyze_summary.csv"));
    summary_csv << "file,bits_per_param,compression_stored,compression_computed,mismatch\n";
    for (const SchemeSummary& s : summaries) {
        summary_csv << s.file << ',' << fmt_g17(s.bpp) << ',' << fmt_g17(s.stored) << ','
                    << fmt_g17(s.computed) << ',' << (s.mismatch ? 1 : 0) << "\n";
        std::cout << s.file << ": bits/param " << s.bpp << " -> compression " << s.computed
                  << "x";
        if (s.mismatch) {
            std::cout << " (stored value " << s.stored
                      << " disagrees with the 32/bpp convention)";
        }
        std::cout << "\n";
    }
    return 0;
}

int cmd_export_scheme(const std::string& checkpoint_path, const std::string& out_path) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    Provenance prov;
    prov.config_hash = ckpt.config_hash;
    prov.seed = ckpt.seed;
    prov.code_version = ckpt.code_version;
    const QuantScheme scheme = scheme_from_model(ckpt.model, std::move(prov));
    save_scheme(out_path, scheme);
    std::cout << "exported scheme: bits/param " << scheme.bits_per_param << "\n";
    return 0;
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Bit-level sparsity quantization trainer"};
    app.require_subcommand(1);

    std::string config_path, out_dir, ckpt_path, scheme_out = "scheme.json";
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::vector<double> alphas;
    std::vector<std::string> analyze_inputs;

    auto add_run_options = [&](CLI::App* sub, bool needs_config = true) {
        auto* opt = sub->add_option("--config", config_path, "JSON configuration file");
        if (needs_config) {
            opt->required();
        }
        sub->add_option("--out", out_dir, "output directory (overrides config)");
        sub->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
            seed_set = true;
        });
    };

    CLI::App* pre = app.add_subcommand("pretrain", "floating-point pretraining");
    add_run_options(pre);
    CLI::App* bsq = app.add_subcommand("bsq", "bit-level sparsity training");
    add_run_options(bsq);
    CLI::App* ft = app.add_subcommand("finetune", "fixed-scheme finetuning");
    add_run_options(ft);
    CLI::App* sc = app.add_subcommand("scratch", "train the scheme from scratch (baseline)");
    add_run_options(sc);
    CLI::App* sw = app.add_subcommand("sweep", "alpha-grid tradeoff sweep");
    add_run_options(sw);
    sw->add_option("--alphas", alphas, "alpha values (overrides config)")->delimiter(',');
    CLI::App* an = app.add_subcommand("analyze", "summarize schemes and metrics");
    an->add_option("inputs", analyze_inputs, "scheme/metrics/sweep files")->required();
    an->add_option("--out", out_dir, "output directory");
    CLI::App* ex = app.add_subcommand("export-scheme", "extract the scheme from a checkpoint");
    ex->add_option("checkpoint", ckpt_path, "checkpoint file")->required();
    ex->add_option("--out", scheme_out, "output scheme path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (an->parsed()) {
            return cmd_analyze(analyze_inputs, out_dir.empty() ? "." : out_dir);
        }
        if (ex->parsed()) {
            return cmd_export_scheme(ckpt_path, scheme_out);
        }
        RunConfig cfg = load_run_config(config_path);
        if (!out_dir.empty()) {
            cfg.out_dir = out_dir;
        }
        if (seed_set) {
            cfg.apply_seed_override(seed);
        }
        if (pre->parsed()) return cmd_pretrain(cfg);
        if (bsq->parsed()) return cmd_bsq(cfg);
        if (ft->parsed()) return cmd_finetune(cfg);
        if (sc->parsed()) return cmd_scratch(cfg);
        if (sw->parsed()) return cmd_sweep(cfg, alphas);
        throw ConfigError("no subcommand selected");
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ValueError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace bitsift
