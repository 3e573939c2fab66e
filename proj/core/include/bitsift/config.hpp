#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bitsift/data.hpp"
#include "bitsift/model.hpp"
#include "bitsift/pipeline.hpp"

namespace bitsift {

struct DataConfig {
    std::string kind = "synth-digits";  // mnist | cifar10 | synth-blobs | synth-digits
    std::string train_images, train_labels, test_images, test_labels;
    std::vector<std::string> cifar_train, cifar_test;
    std::size_t limit_train = 0;  // 0 = use everything
    std::size_t limit_test = 0;
    double normalize_mean = 0.0;
    double normalize_stddev = 1.0;

    std::size_t blob_classes = 3, blob_per_class = 200, blob_dim = 16;
    double blob_spacing = 6.0;
    std::uint64_t blob_seed = 9001;

    std::size_t digits_train = 10000, digits_test = 2000;
    std::uint64_t digits_seed = 77;

    Normalization normalization() const { return {normalize_mean, normalize_stddev}; }
};

struct SweepConfig {
    std::vector<double> alphas;
    std::vector<std::uint64_t> seeds;  // empty = just the train seed
    bool run_scratch = false;
};

// Parsed and validated run configuration. Per-phase sections inherit the
// `train` block and may override epochs / learning-rate schedule.
struct RunConfig {
    ModelSpec model;
    DataConfig data;
    TrainConfig pretrain;
    BsqConfig bsq;
    TrainConfig finetune;
    TrainConfig scratch;
    SweepConfig sweep;

    std::string out_dir = "out";
    std::string init_checkpoint;   // pretrained input for bsq / bsq input for finetune
    std::string scheme_path;       // finetune / scratch scheme file
    std::string compare_results;   // finetune results.json for the scratch comparison row
    std::string scratch_init = "random";  // random | checkpoint
    std::string scratch_checkpoint;

    std::string hash;  // canonical hash of the config file content

    void apply_seed_override(std::uint64_t seed);
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// FNV-1a 64 over the canonical (key-sorted) dump, as a hex string.
std::string config_hash(const nlohmann::json& j);

// Loads the datasets named by the config (train and eval splits).
std::pair<Dataset, Dataset> load_datasets(const DataConfig& cfg);

}  // namespace bitsift
