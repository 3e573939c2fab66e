#include "bitsift/config.hpp"

#include <fstream>
#include <set>

#include "bitsift/error.hpp"

namespace bitsift {

namespace {

using nlohmann::json;

// Typed field access with config-path error messages and unknown-key checks.
class Section {
public:
    Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {}

    bool present() const { return j_ != nullptr; }

    Section child(const std::string& key) const {
        if (!j_ || !j_->contains(key)) {
            return Section(nullptr, path_ + key + ".");
        }
        const json& sub = j_->at(key);
        if (!sub.is_object()) {
            throw ConfigError("config: " + path_ + key + " must be an object");
        }
        return Section(&sub, path_ + key + ".");
    }

    void allow(const std::set<std::string>& keys) const {
        if (!j_) return;
        for (const auto& item : j_->items()) {
            if (!keys.count(item.key())) {
                throw ConfigError("config: unknown field '" + path_ + item.key() + "'");
            }
        }
    }

    template <typename T>
    T get(const std::string& key, T fallback) const {
        if (!j_ || !j_->contains(key)) {
            return fallback;
        }
        try {
            return j_->at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config: field '" + path_ + key + "' has the wrong type");
        }
    }

    std::string str(const std::string& key, const std::string& fallback) const {
        return get<std::string>(key, fallback);
    }

private:
    const json* j_;
    std::string path_;
};

void read_train_overrides(const Section& s, TrainConfig& cfg) {
    cfg.epochs = s.get<std::size_t>("epochs", cfg.epochs);
    cfg.lr.initial = s.get<double>("lr", cfg.lr.initial);
    cfg.lr.milestones = s.get<std::vector<std::size_t>>("milestones", cfg.lr.milestones);
    cfg.lr.factor = s.get<double>("lr_decay", cfg.lr.factor);
    cfg.momentum = s.get<double>("momentum", cfg.momentum);
    cfg.weight_decay = s.get<double>("weight_decay", cfg.weight_decay);
    cfg.batch_size = s.get<std::size_t>("batch_size", cfg.batch_size);
    cfg.seed = s.get<std::uint64_t>("seed", cfg.seed);
}

const std::set<std::string> kTrainKeys = {"epochs",       "lr",         "milestones",
                                          "lr_decay",     "momentum",   "weight_decay",
                                          "batch_size",   "seed"};

std::set<std::string> with_extra(std::set<std::string> base, std::set<std::string> extra) {
    base.merge(extra);
    return base;
}

template <typename Fn>
void validated(const std::string& field, Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        throw ConfigError("config: " + field + ": " + e.what());
    }
}

}  // namespace

void RunConfig::apply_seed_override(std::uint64_t seed) {
    pretrain.seed = seed;
    bsq.train.seed = seed;
    finetune.seed = seed;
    scratch.seed = seed;
}

std::string config_hash(const nlohmann::json& j) {
    const std::string canonical = j.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : canonical) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

RunConfig parse_run_config(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw ConfigError("config: top level must be an object");
    }
    Section root(&j, "");
    root.allow({"model", "act", "data", "train", "pretrain", "bsq", "finetune", "scratch", "sweep",
                "io"});

    RunConfig cfg;
    cfg.hash = config_hash(j);

    const Section model = root.child("model");
    model.allow({"arch", "input", "classes", "hidden", "channels", "blocks_per_stage"});
    cfg.model.arch = model.str("arch", cfg.model.arch);
    {
        const auto input = model.get<std::vector<std::size_t>>(
            "input", std::vector<std::size_t>(cfg.model.input_shape));
        cfg.model.input_shape = Shape(input.begin(), input.end());
    }
    cfg.model.num_classes = model.get<std::size_t>("classes", cfg.model.num_classes);
    cfg.model.hidden = model.get<std::vector<std::size_t>>("hidden", cfg.model.hidden);
    cfg.model.channels = model.get<std::vector<std::size_t>>("channels", cfg.model.channels);
    cfg.model.blocks_per_stage =
        model.get<std::size_t>("blocks_per_stage", cfg.model.blocks_per_stage);

    const Section act = root.child("act");
    act.allow({"bits", "first", "last", "pact_below_bits", "pact_clip_init", "clip_weight_decay"});
    cfg.model.act_bits = act.get<int>("bits", cfg.model.act_bits);
    cfg.model.act_bits_first = act.get<int>("first", cfg.model.act_bits_first);
    cfg.model.act_bits_last = act.get<int>("last", cfg.model.act_bits_last);
    cfg.model.pact_below_bits = act.get<int>("pact_below_bits", cfg.model.pact_below_bits);
    cfg.model.pact_clip_init = act.get<double>("pact_clip_init", cfg.model.pact_clip_init);
    cfg.model.clip_weight_decay =
        act.get<double>("clip_weight_decay", cfg.model.clip_weight_decay);

    const Section data = root.child("data");
    data.allow({"kind", "train_images", "train_labels", "test_images", "test_labels",
                "cifar_train", "cifar_test", "limit_train", "limit_test", "normalize_mean",
                "normalize_std", "blob_classes", "blob_per_class", "blob_dim", "blob_spacing",
                "blob_seed", "digits_train", "digits_test", "digits_seed"});
    cfg.data.kind = data.str("kind", cfg.data.kind);
    cfg.data.train_images = data.str("train_images", "");
    cfg.data.train_labels = data.str("train_labels", "");
    cfg.data.test_images = data.str("test_images", "");
    cfg.data.test_labels = data.str("test_labels", "");
    cfg.data.cifar_train = data.get<std::vector<std::string>>("cifar_train", {});
    cfg.data.cifar_test = data.get<std::vector<std::string>>("cifar_test", {});
    cfg.data.limit_train = data.get<std::size_t>("limit_train", 0);
    cfg.data.limit_test = data.get<std::size_t>("limit_test", 0);
    cfg.data.normalize_mean = data.get<double>("normalize_mean", cfg.data.normalize_mean);
    cfg.data.normalize_stddev = data.get<double>("normalize_std", cfg.data.normalize_stddev);
    cfg.data.blob_classes = data.get<std::size_t>("blob_classes", cfg.data.blob_classes);
    cfg.data.blob_per_class = data.get<std::size_t>("blob_per_class", cfg.data.blob_per_class);
    cfg.data.blob_dim = data.get<std::size_t>("blob_dim", cfg.data.blob_dim);
    cfg.data.blob_spacing = data.get<double>("blob_spacing", cfg.data.blob_spacing);
    cfg.data.blob_seed = data.get<std::uint64_t>("blob_seed", cfg.data.blob_seed);
    cfg.data.digits_train = data.get<std::size_t>("digits_train", cfg.data.digits_train);
    cfg.data.digits_test = data.get<std::size_t>("digits_test", cfg.data.digits_test);
    cfg.data.digits_seed = data.get<std::uint64_t>("digits_seed", cfg.data.digits_seed);

    static const std::set<std::string> kKinds = {"mnist", "cifar10", "synth-blobs", "synth-digits"};
    if (!kKinds.count(cfg.data.kind)) {
        throw ConfigError("config: data.kind '" + cfg.data.kind + "' is not a known dataset kind");
    }
    if (cfg.data.kind == "mnist") {
        for (const auto& [field, value] :
             {std::pair{"data.train_images", cfg.data.train_images},
              {"data.train_labels", cfg.data.train_labels},
              {"data.test_images", cfg.data.test_images},
              {"data.test_labels", cfg.data.test_labels}}) {
            if (value.empty()) {
                throw ConfigError(std::string("config: ") + field + " is required for kind=mnist");
            }
        }
    }
    if (cfg.data.normalize_stddev <= 0.0) {
        throw ConfigError("config: data.normalize_std must be positive");
    }

    TrainConfig base;
    const Section train = root.child("train");
    train.allow(kTrainKeys);
    read_train_overrides(train, base);

    cfg.pretrain = base;
    const Section pre = root.child("pretrain");
    pre.allow(kTrainKeys);
    read_train_overrides(pre, cfg.pretrain);

    cfg.bsq.train = base;
    const Section bsq = root.child("bsq");
    bsq.allow(with_extra(kTrainKeys, {"alpha", "requant_interval", "n0", "reweigh"}));
    read_train_overrides(bsq, cfg.bsq.train);
    cfg.bsq.alpha = bsq.get<double>("alpha", cfg.bsq.alpha);
    cfg.bsq.requant_interval = bsq.get<std::size_t>("requant_interval", cfg.bsq.requant_interval);
    cfg.bsq.n0 = bsq.get<int>("n0", cfg.bsq.n0);
    cfg.bsq.reweigh = bsq.get<bool>("reweigh", cfg.bsq.reweigh);

    cfg.finetune = base;
    const Section ft = root.child("finetune");
    ft.allow(kTrainKeys);
    read_train_overrides(ft, cfg.finetune);

    cfg.scratch = base;
    const Section sc = root.child("scratch");
    sc.allow(with_extra(kTrainKeys, {"init", "checkpoint"}));
    read_train_overrides(sc, cfg.scratch);
    cfg.scratch_init = sc.str("init", cfg.scratch_init);
    cfg.scratch_checkpoint = sc.str("checkpoint", "");
    if (cfg.scratch_init != "random" && cfg.scratch_init != "checkpoint") {
        throw ConfigError("config: scratch.init must be 'random' or 'checkpoint'");
    }
    if (cfg.scratch_init == "checkpoint" && cfg.scratch_checkpoint.empty()) {
        throw ConfigError("config: scratch.checkpoint is required when scratch.init=checkpoint");
    }

    const Section sweep = root.child("sweep");
    sweep.allow({"alphas", "seeds", "run_scratch"});
    cfg.sweep.alphas = sweep.get<std::vector<double>>("alphas", {});
    cfg.sweep.seeds = sweep.get<std::vector<std::uint64_t>>("seeds", {});
    cfg.sweep.run_scratch = sweep.get<bool>("run_scratch", false);

    const Section io = root.child("io");
    io.allow({"out_dir", "init_checkpoint", "scheme", "compare_results"});
    cfg.out_dir = io.str("out_dir", cfg.out_dir);
    cfg.init_checkpoint = io.str("init_checkpoint", "");
    cfg.scheme_path = io.str("scheme", "");
    cfg.compare_results = io.str("compare_results", "");

    validated("model", [&] { cfg.model.validate(); });
    validated("pretrain", [&] { cfg.pretrain.validate(); });
    validated("bsq", [&] { cfg.bsq.validate(); });
    validated("finetune", [&] { cfg.finetune.validate(); });
    validated("scratch", [&] { cfg.scratch.validate(); });
    if (cfg.bsq.n0 != cfg.model.init_bits) {
        cfg.model.init_bits = cfg.bsq.n0;  // one knob; bsq.n0 wins
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("config: cannot open " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j);
}

std::pair<Dataset, Dataset> load_datasets(const DataConfig& cfg) {
    Dataset train, test;
    if (cfg.kind == "mnist") {
        train = load_mnist_idx(cfg.train_images, cfg.train_labels, cfg.normalization());
        test = load_mnist_idx(cfg.test_images, cfg.test_labels, cfg.normalization());
    } else if (cfg.kind == "cifar10") {
        train = load_cifar10(cfg.cifar_train, cfg.normalization());
        test = load_cifar10(cfg.cifar_test, cfg.normalization());
    } else if (cfg.kind == "synth-blobs") {
        train = synth_blobs(cfg.blob_classes, cfg.blob_per_class, cfg.blob_dim, cfg.blob_seed,
                            cfg.blob_spacing);
        test = synth_blobs(cfg.blob_classes, std::max<std::size_t>(1, cfg.blob_per_class / 4),
                           cfg.blob_dim, cfg.blob_seed + 1, cfg.blob_spacing);
    } else if (cfg.kind == "synth-digits") {
        train = synth_digits(cfg.digits_train, cfg.digits_seed, cfg.normalization());
        test = synth_digits(cfg.digits_test, cfg.digits_seed + 1, cfg.normalization());
    } else {
        throw ConfigError("config: data.kind '" + cfg.kind + "' is not a known dataset kind");
    }
    if (cfg.limit_train > 0) {
        train = train.take(cfg.limit_train);
    }
    if (cfg.limit_test > 0) {
        test = test.take(cfg.limit_test);
    }
    train.split = "train";
    test.split = "test";
    return {std::move(train), std::move(test)};
}

}  // namespace bitsift
