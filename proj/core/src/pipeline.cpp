#include "bitsift/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "bitsift/error.hpp"
#include "bitsift/ops.hpp"
#include "bitsift/rng.hpp"

namespace bitsift {

double LrSchedule::at(std::size_t epoch) const {
    double lr = initial;
    for (std::size_t m : milestones) {
        if (epoch > m) {
            lr *= factor;
        }
    }
    return lr;
}

void LrSchedule::validate() const {
    if (!(initial > 0.0)) {
        throw ValueError("lr schedule: initial rate must be positive");
    }
    if (!(factor > 0.0 && factor <= 1.0)) {
        throw ValueError("lr schedule: decay factor must be in (0,1]");
    }
    for (std::size_t i = 1; i < milestones.size(); ++i) {
        if (milestones[i] <= milestones[i - 1]) {
            throw ValueError("lr schedule: milestones must be strictly increasing");
        }
    }
}

void TrainConfig::validate() const {
    lr.validate();
    if (batch_size == 0) {
        throw ValueError("train config: batch size must be positive");
    }
    if (momentum < 0.0 || momentum >= 1.0) {
        throw ValueError("train config: momentum must be in [0,1)");
    }
    if (weight_decay < 0.0) {
        throw ValueError("train config: weight decay must be non-negative");
    }
}

void BsqConfig::validate() const {
    train.validate();
    if (alpha < 0.0) {
        throw ValueError("bsq config: alpha must be non-negative");
    }
    if (n0 < 1 || n0 > 16) {
        throw ValueError("bsq config: initial precision must be in [1,16]");
    }
}

double compression_from_bpp(double bits_per_param) {
    return bits_per_param > 0.0 ? 32.0 / bits_per_param : 0.0;
}

void Sgd::step(const std::string& key, Tensor& param, const Tensor& grad, double lr) {
    step(key, param, grad, lr, weight_decay_);
}

void Sgd::step(const std::string& key, Tensor& param, const Tensor& grad, double lr,
               double weight_decay) {
    require_same_shape(param, grad, "sgd step");
    auto [it, inserted] = buffers_.try_emplace(key, Tensor::zeros(param.shape));
    Tensor& buf = it->second;
    if (!inserted && buf.shape != param.shape) {
        throw ShapeError("sgd step: stale momentum buffer for " + key);
    }
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad.data[i] + weight_decay * param.data[i];
        buf.data[i] = momentum_ * buf.data[i] + g;
        param.data[i] -= lr * buf.data[i];
    }
}

void Sgd::drop_prefix(const std::string& prefix) {
    for (auto it = buffers_.lower_bound(prefix); it != buffers_.end();) {
        if (it->first.compare(0, prefix.size(), prefix) != 0) {
            break;
        }
        it = buffers_.erase(it);
    }
}

void Sgd::set_buffer(std::string key, Tensor buffer) {
    buffers_[std::move(key)] = std::move(buffer);
}

void Sgd::set_hyper(double momentum, double weight_decay) {
    momentum_ = momentum;
    weight_decay_ = weight_decay;
}

double evaluate(Model& model, const Dataset& data, std::size_t batch_size) {
    if (data.size() == 0) {
        throw ValueError("evaluate: empty dataset");
    }
    if (batch_size == 0) {
        throw ValueError("evaluate: batch size must be positive");
    }
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
        const std::size_t count = std::min(batch_size, data.size() - begin);
        auto [images, labels] = data.slice(begin, count);
        const Tensor logits = model_logits(model, images);
        const std::size_t classes = logits.shape[1];
        for (std::size_t i = 0; i < count; ++i) {
            const double* row = logits.data.data() + i * classes;
            std::size_t arg = 0;
            for (std::size_t j = 1; j < classes; ++j) {
                if (row[j] > row[arg]) {
                    arg = j;
                }
            }
            if (static_cast<int>(arg) == labels[i]) {
                ++correct;
            }
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

void check_finite_loss(double value, const char* phase) {
    if (!std::isfinite(value)) {
        throw DivergenceError(std::string(phase) + ": loss is not finite, training diverged");
    }
}

// Updates shared by every regime: biases, batchnorm affine, PACT clip levels.
void apply_aux_updates(Model& model, const ForwardPass& fp, const Gradients& grads, Sgd& opt,
                       double lr) {
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        QuantLayer& layer = model.layers[l];
        if (layer.bias && fp.layer_ids[l].bias != kNoNode) {
            opt.step(layer.layer_id + ".b", *layer.bias, grads.at(fp.layer_ids[l].bias), lr);
        }
    }
    for (std::size_t b = 0; b < model.bns.size(); ++b) {
        if (fp.bn_ids[b].first == kNoNode) {
            continue;
        }
        BatchNormLayer& bn = model.bns[b];
        opt.step(bn.id + ".g", bn.gamma, grads.at(fp.bn_ids[b].first), lr);
        opt.step(bn.id + ".b", bn.beta, grads.at(fp.bn_ids[b].second), lr);
    }
    for (std::size_t s = 0; s < model.act_sites.size(); ++s) {
        if (fp.clip_ids[s] == kNoNode) {
            continue;
        }
        ActSite& site = model.act_sites[s];
        Tensor clip = Tensor::scalar(site.q.clip_level);
        opt.step(site.id + ".clip", clip, grads.at(fp.clip_ids[s]), lr, site.q.clip_weight_decay);
        site.q.clip_level = std::max(clip.data[0], 1e-6);  // clip must stay positive
    }
}

std::vector<int> current_precisions(const Model& model) {
    std::vector<int> bits;
    bits.reserve(model.layers.size());
    for (const LayerStats& s : layer_stats(model)) {
        bits.push_back(s.precision);
    }
    return bits;
}

TrainRecord make_record(Model& model, std::size_t epoch, double lr, LossBreakdown loss,
                        double accuracy) {
    TrainRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = std::move(loss);
    rec.eval_accuracy = accuracy;
    rec.precisions = current_precisions(model);
    rec.bits_per_param = model_bits_per_param(model);
    rec.compression_rate = compression_from_bpp(rec.bits_per_param);
    return rec;
}

// Shared engine for dense pretraining and fixed-scheme DoReFa training; the
// two differ only in how model_forward produces the effective weights.
TrainOutput run_sgd_phase(Model model, const Dataset& train_set, const Dataset& eval_set,
                          const TrainConfig& cfg, const char* phase) {
    cfg.validate();
    train_set.validate();
    eval_set.validate();

    TrainOutput out;
    out.optimizer = Sgd(cfg.momentum, cfg.weight_decay);
    Rng shuffle_rng = Rng(cfg.seed).fork(std::hash<std::string>{}(phase));

    out.initial_accuracy = evaluate(model, eval_set);
    out.best_accuracy = out.initial_accuracy;
    out.model = model;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = cfg.lr.at(epoch);
        shuffle_rng.shuffle(order);
        double ce_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - begin);
            auto [images, labels] = train_set.gather(order, begin, count);
            Tape tape;
            const ForwardPass fp = model_forward(model, tape, images, /*training=*/true);
            const NodeId loss = ops::cross_entropy(tape, fp.logits, labels);
            const double ce = tape.value(loss).scalar_value();
            check_finite_loss(ce, phase);
            ce_sum += ce;
            ++steps;

            const Gradients grads = tape.backward(loss);
            for (std::size_t l = 0; l < model.layers.size(); ++l) {
                QuantLayer& layer = model.layers[l];
                if (model.mode == ModelMode::dorefa && layer.dorefa_bits == 0) {
                    continue;  // skipped layer: weights stay exactly zero
                }
                out.optimizer.step(layer.layer_id + ".w", layer.weights,
                                   grads.at(fp.layer_ids[l].weight), lr);
            }
            apply_aux_updates(model, fp, grads, out.optimizer, lr);
        }

        const double acc = evaluate(model, eval_set);
        LossBreakdown breakdown;
        breakdown.ce = steps > 0 ? ce_sum / static_cast<double>(steps) : 0.0;
        breakdown.total = breakdown.ce;
        out.records.push_back(make_record(model, epoch, lr, std::move(breakdown), acc));
        if (acc > out.best_accuracy) {
            out.best_accuracy = acc;
            out.model = model;
        }
    }
    out.rng_state = shuffle_rng.state();
    return out;
}

}  // namespace

TrainOutput pretrain(Model model, const Dataset& train_set, const Dataset& eval_set,
                     const TrainConfig& cfg) {
    if (model.mode != ModelMode::dense) {
        throw ValueError("pretrain: model must carry floating-point weights");
    }
    return run_sgd_phase(std::move(model), train_set, eval_set, cfg, "pretrain");
}

BsqOutput bsq_train(Model model, const Dataset& train_set, const Dataset& eval_set,
                    const BsqConfig& cfg) {
    cfg.validate();
    train_set.validate();
    eval_set.validate();
    if (model.mode != ModelMode::bit_planes) {
        throw ValueError("bsq_train: attach_bsq must be applied first");
    }

    BsqOutput out;
    out.optimizer = Sgd(cfg.train.momentum, cfg.train.weight_decay);
    Rng shuffle_rng = Rng(cfg.train.seed).fork(std::hash<std::string>{}("bsq"));

    std::vector<LayerStats> stats = layer_stats(model);
    std::vector<double> coeffs =
        cfg.reweigh ? reweigh_coefficients(stats) : std::vector<double>(stats.size(), 1.0);

    // Small frozen batch used to assert that re-quantization leaves the
    // forward pass bitwise unchanged.
    const Tensor frozen_images =
        train_set.slice(0, std::min<std::size_t>(64, train_set.size())).first;

    auto adjust_all = [&](std::size_t epoch) {
        const Tensor before = model_logits(model, frozen_images);
        for (QuantLayer& layer : model.layers) {
            auto [adjusted, report] = adjust_layer(layer.bit_state, layer.layer_id);
            layer.bit_state = std::move(adjusted);
            out.adjustments.push_back({epoch, report});
            out.optimizer.drop_prefix(layer.layer_id + ".pos");
            out.optimizer.drop_prefix(layer.layer_id + ".neg");
        }
        const Tensor after = model_logits(model, frozen_images);
        if (before.data.size() != after.data.size() ||
            std::memcmp(before.data.data(), after.data.data(),
                        before.data.size() * sizeof(double)) != 0) {
            throw DivergenceError("bsq_train: re-quantization changed the forward pass");
        }
        stats = layer_stats(model);
        coeffs = cfg.reweigh ? reweigh_coefficients(stats)
                             : std::vector<double>(stats.size(), 1.0);
    };

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
        const double lr = cfg.train.lr.at(epoch);
        shuffle_rng.shuffle(order);
        double ce_sum = 0.0;
        std::vector<double> bgl_sums(model.layers.size(), 0.0);
        std::size_t steps = 0;

        for (std::size_t begin = 0; begin < order.size(); begin += cfg.train.batch_size) {
            const std::size_t count = std::min(cfg.train.batch_size, order.size() - begin);
            auto [images, labels] = train_set.gather(order, begin, count);
            Tape tape;
            const ForwardPass fp = model_forward(model, tape, images, /*training=*/true);
            const NodeId loss = ops::cross_entropy(tape, fp.logits, labels);
            const double ce = tape.value(loss).scalar_value();
            check_finite_loss(ce, "bsq_train");
            ++steps;
            ce_sum += ce;

            const Gradients grads = tape.backward(loss);
            for (std::size_t l = 0; l < model.layers.size(); ++l) {
                QuantLayer& layer = model.layers[l];
                BitTensor& bt = layer.bit_state;
                bgl_sums[l] += bit_group_lasso(bt);
                if (bt.bits == 0) {
                    continue;
                }
                // Regularizer subgradients act on the continuous planes
                // directly and add to the STE gradients at the plane level.
                const PlaneGrads sub = bgl_subgradient(bt);
                const double reg = cfg.alpha * coeffs[l];
                for (int b = 0; b < bt.bits; ++b) {
                    Tensor gpos = grads.at(fp.layer_ids[l].pos[static_cast<std::size_t>(b)]);
                    add_scaled(gpos, sub.pos[static_cast<std::size_t>(b)], reg);
                    out.optimizer.step(layer.layer_id + ".pos." + std::to_string(b),
                                       bt.pos_planes[static_cast<std::size_t>(b)], gpos, lr);
                    Tensor gneg = grads.at(fp.layer_ids[l].neg[static_cast<std::size_t>(b)]);
                    add_scaled(gneg, sub.neg[static_cast<std::size_t>(b)], reg);
                    out.optimizer.step(layer.layer_id + ".neg." + std::to_string(b),
                                       bt.neg_planes[static_cast<std::size_t>(b)], gneg, lr);
                    // Trim after the step so the planes stay inside [0,2].
                    clamp_inplace(bt.pos_planes[static_cast<std::size_t>(b)], 0.0, 2.0);
                    clamp_inplace(bt.neg_planes[static_cast<std::size_t>(b)], 0.0, 2.0);
                }
            }
            apply_aux_updates(model, fp, grads, out.optimizer, lr);
        }

        for (const QuantLayer& layer : model.layers) {
            for (int b = 0; b < layer.bit_state.bits; ++b) {
                if (!layer.bit_state.pos_planes[static_cast<std::size_t>(b)].all_finite() ||
                    !layer.bit_state.neg_planes[static_cast<std::size_t>(b)].all_finite()) {
                    throw DivergenceError("bsq_train: plane state is not finite after epoch " +
                                          std::to_string(epoch));
                }
            }
        }

        // Periodic adjustment when due, and always once at the end.
        const bool due = epoch == cfg.train.epochs ||
                         (cfg.requant_interval > 0 && epoch % cfg.requant_interval == 0);
        std::vector<double> epoch_coeffs = coeffs;  // the ones the steps actually used
        if (due) {
            adjust_all(epoch);
        }

        const double acc = evaluate(model, eval_set);
        std::vector<double> bgl_means(bgl_sums.size(), 0.0);
        for (std::size_t l = 0; l < bgl_sums.size(); ++l) {
            bgl_means[l] = steps > 0 ? bgl_sums[l] / static_cast<double>(steps) : 0.0;
        }
        const LossBreakdown breakdown = total_loss_with_coefficients(
            steps > 0 ? ce_sum / static_cast<double>(steps) : 0.0, epoch_coeffs, bgl_means,
            cfg.alpha);
        out.records.push_back(make_record(model, epoch, lr, breakdown, acc));
    }

    if (cfg.train.epochs == 0) {
        adjust_all(0);
    }
    out.final_accuracy = out.records.empty() ? evaluate(model, eval_set)
                                             : out.records.back().eval_accuracy;
    out.model = std::move(model);
    out.rng_state = shuffle_rng.state();
    return out;
}

namespace {

void check_scheme_matches(const Model& model, const QuantScheme& scheme, bool require_same_bits) {
    if (scheme.layers.size() != model.layers.size()) {
        throw ValueError("scheme lists " + std::to_string(scheme.layers.size()) +
                         " layers, model has " + std::to_string(model.layers.size()));
    }
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        if (scheme.layers[l].layer_id != model.layers[l].layer_id) {
            throw ValueError("scheme layer '" + scheme.layers[l].layer_id +
                             "' does not match model layer '" + model.layers[l].layer_id + "'");
        }
        if (scheme.layers[l].param_count != model.layers[l].param_count()) {
            throw ValueError("scheme parameter count mismatch at layer " +
                             model.layers[l].layer_id);
        }
        if (require_same_bits && model.mode == ModelMode::bit_planes &&
            scheme.layers[l].weight_bits != model.layers[l].bit_state.bits) {
            throw ValueError("scheme precision mismatch at layer " + model.layers[l].layer_id);
        }
    }
}

}  // namespace

TrainOutput finetune(Model model, const QuantScheme& scheme, const Dataset& train_set,
                     const Dataset& eval_set, const TrainConfig& cfg) {
    scheme.validate();
    if (model.mode == ModelMode::dense) {
        throw ValueError("finetune: expected a BSQ-trained model, not floating-point weights");
    }
    check_scheme_matches(model, scheme, /*require_same_bits=*/true);
    if (model.mode == ModelMode::bit_planes) {
        to_dorefa(model, scheme.per_layer_bits());
    }
    return run_sgd_phase(std::move(model), train_set, eval_set, cfg, "finetune");
}

TrainOutput train_from_scratch(Model float_model, const QuantScheme& scheme,
                               const Dataset& train_set, const Dataset& eval_set,
                               const TrainConfig& cfg) {
    scheme.validate();
    if (float_model.mode != ModelMode::dense) {
        throw ValueError("train_from_scratch: expected floating-point starting weights");
    }
    check_scheme_matches(float_model, scheme, /*require_same_bits=*/false);
    to_dorefa(float_model, scheme.per_layer_bits());
    return run_sgd_phase(std::move(float_model), train_set, eval_set, cfg, "scratch");
}

}  // namespace bitsift
