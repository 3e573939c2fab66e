#include "bitsift/model.hpp"

#include <cmath>

#include "bitsift/error.hpp"

namespace bitsift {

namespace {

constexpr int kConvKernel = 3;

Tensor init_weights(const Shape& shape, std::size_t fan_in, Rng& rng) {
    Tensor w = Tensor::zeros(shape);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : w.data) {
        v = stddev * rng.normal();
    }
    return w;
}

QuantLayer make_linear(std::string id, std::size_t in, std::size_t out, Rng& rng) {
    QuantLayer l;
    l.layer_id = std::move(id);
    l.kind = LayerKind::linear;
    l.weight_shape = {out, in};
    l.weights = init_weights(l.weight_shape, in, rng);
    l.bias = Tensor::zeros({out});
    return l;
}

QuantLayer make_conv(std::string id, std::size_t in_ch, std::size_t out_ch, int stride, int padding,
                     bool bias, Rng& rng, int kernel = kConvKernel) {
    QuantLayer l;
    l.layer_id = std::move(id);
    l.kind = LayerKind::conv2d;
    l.weight_shape = {out_ch, in_ch, static_cast<std::size_t>(kernel),
                      static_cast<std::size_t>(kernel)};
    l.stride = stride;
    l.padding = padding;
    l.has_bias = bias;
    l.weights = init_weights(l.weight_shape, in_ch * kernel * kernel, rng);
    if (bias) {
        l.bias = Tensor::zeros({out_ch});
    }
    return l;
}

BatchNormLayer make_bn(std::string id, std::size_t channels) {
    BatchNormLayer bn;
    bn.id = std::move(id);
    bn.gamma = Tensor::full({channels}, 1.0);
    bn.beta = Tensor::zeros({channels});
    bn.state.running_mean = Tensor::zeros({channels});
    bn.state.running_var = Tensor::full({channels}, 1.0);
    return bn;
}

ActSite make_site(std::string id, int bits, const ModelSpec& spec) {
    ActSite site;
    site.id = std::move(id);
    site.q.bits = bits;
    site.q.kind = bits < spec.pact_below_bits ? ActKind::pact : ActKind::relu6_uniform;
    site.q.clip_level = spec.pact_clip_init;
    site.q.clip_weight_decay = spec.clip_weight_decay;
    return site;
}

int layer_act_bits(const ModelSpec& spec, std::size_t layer_index, std::size_t layer_total) {
    if (layer_index == 0) return spec.act_bits_first;
    if (layer_index + 1 == layer_total) return spec.act_bits_last;
    return spec.act_bits;
}

}  // namespace

void ModelSpec::validate() const {
    if (arch != "mlp" && arch != "cnn" && arch != "resnet") {
        throw ValueError("model spec: unknown architecture '" + arch + "'");
    }
    if (input_shape.size() != 3 || shape_size(input_shape) == 0) {
        throw ValueError("model spec: input shape must be [C,H,W] with nonzero volume");
    }
    if (num_classes < 2) {
        throw ValueError("model spec: need at least 2 classes");
    }
    if ((arch == "cnn" || arch == "resnet") && channels.empty()) {
        throw ValueError("model spec: " + arch + " needs a channel list");
    }
    if (arch == "resnet" && blocks_per_stage == 0) {
        throw ValueError("model spec: resnet needs at least one block per stage");
    }
    if (init_bits < 1 || init_bits > 16) {
        throw ValueError("model spec: initial precision must be in [1,16]");
    }
    if (act_bits < 1 || act_bits_first < 1 || act_bits_last < 1) {
        throw ValueError("model spec: activation precisions must be at least 1 bit");
    }
    if (pact_clip_init <= 0.0) {
        throw ValueError("model spec: PACT clip init must be positive");
    }
}

Model build_model(const ModelSpec& spec, Rng& rng) {
    spec.validate();
    Model model;
    model.spec = spec;

    if (spec.arch == "mlp") {
        const std::size_t in_dim = shape_size(spec.input_shape);
        std::vector<std::size_t> widths{in_dim};
        widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
        widths.push_back(spec.num_classes);
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            model.layers.push_back(
                make_linear("fc" + std::to_string(l), widths[l], widths[l + 1], rng));
        }
    } else if (spec.arch == "cnn") {
        std::size_t in_ch = spec.input_shape[0];
        std::size_t h = spec.input_shape[1], w = spec.input_shape[2];
        for (std::size_t i = 0; i < spec.channels.size(); ++i) {
            const int stride = i == 0 ? 1 : 2;
            model.layers.push_back(make_conv("conv" + std::to_string(i), in_ch, spec.channels[i],
                                             stride, 1, /*bias=*/true, rng));
            in_ch = spec.channels[i];
            h = (h + 2 - kConvKernel) / stride + 1;
            w = (w + 2 - kConvKernel) / stride + 1;
            if (h == 0 || w == 0) {
                throw ValueError("model spec: cnn downsampling exhausted the input resolution");
            }
        }
        model.layers.push_back(make_linear("fc", in_ch * h * w, spec.num_classes, rng));
    } else {  // resnet
        model.layers.push_back(
            make_conv("stem", spec.input_shape[0], spec.channels[0], 1, 1, /*bias=*/false, rng));
        model.bns.push_back(make_bn("stem.bn", spec.channels[0]));
        std::size_t in_ch = spec.channels[0];
        for (std::size_t s = 0; s < spec.channels.size(); ++s) {
            const std::size_t width = spec.channels[s];
            for (std::size_t b = 0; b < spec.blocks_per_stage; ++b) {
                const std::string tag = "s" + std::to_string(s) + "b" + std::to_string(b);
                const int stride = (s > 0 && b == 0) ? 2 : 1;
                model.layers.push_back(
                    make_conv(tag + ".conv1", in_ch, width, stride, 1, /*bias=*/false, rng));
                model.bns.push_back(make_bn(tag + ".bn1", width));
                model.layers.push_back(
                    make_conv(tag + ".conv2", width, width, 1, 1, /*bias=*/false, rng));
                model.bns.push_back(make_bn(tag + ".bn2", width));
                if (stride != 1 || in_ch != width) {
                    model.layers.push_back(make_conv(tag + ".down", in_ch, width, stride, 0,
                                                     /*bias=*/false, rng, /*kernel=*/1));
                    model.bns.push_back(make_bn(tag + ".down.bn", width));
                }
                in_ch = width;
            }
        }
        model.layers.push_back(make_linear("fc", in_ch, spec.num_classes, rng));
    }

    // Quantized-activation sites, one per nonlinearity of the quantized model.
    if (spec.arch == "mlp" || spec.arch == "cnn") {
        for (std::size_t l = 1; l < model.layers.size(); ++l) {
            const int bits = layer_act_bits(spec, l, model.layers.size());
            model.act_sites.push_back(make_site("act." + model.layers[l].layer_id, bits, spec));
        }
    } else {
        model.act_sites.push_back(make_site("act.stem", spec.act_bits, spec));
        for (std::size_t s = 0; s < spec.channels.size(); ++s) {
            for (std::size_t b = 0; b < spec.blocks_per_stage; ++b) {
                const std::string tag = "s" + std::to_string(s) + "b" + std::to_string(b);
                model.act_sites.push_back(make_site("act." + tag + ".inner", spec.act_bits, spec));
                model.act_sites.push_back(make_site("act." + tag + ".out", spec.act_bits, spec));
            }
        }
        model.act_sites.push_back(make_site("act.fc", spec.act_bits_last, spec));
    }

    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        model.layers[l].act_bits = layer_act_bits(spec, l, model.layers.size());
    }
    return model;
}

void attach_bsq(Model& model, int n0) {
    if (model.mode != ModelMode::dense) {
        throw ValueError("attach_bsq: model must carry floating-point weights");
    }
    for (QuantLayer& layer : model.layers) {
        layer.bit_state = to_bit_representation(layer.weights, n0);
        layer.weights = Tensor{};
    }
    model.spec.init_bits = n0;
    model.mode = ModelMode::bit_planes;
}

void to_dorefa(Model& model, const std::vector<int>& per_layer_bits) {
    if (per_layer_bits.size() != model.layers.size()) {
        throw ValueError("to_dorefa: scheme lists " + std::to_string(per_layer_bits.size()) +
                         " layers, model has " + std::to_string(model.layers.size()));
    }
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        QuantLayer& layer = model.layers[l];
        if (model.mode == ModelMode::bit_planes) {
            layer.weights = represented_weights(layer.bit_state);
            layer.bit_state = BitTensor{};
        }
        layer.dorefa_bits = per_layer_bits[l];
        if (layer.dorefa_bits == 0) {
            layer.weights = Tensor::zeros(layer.weight_shape);
        }
    }
    model.mode = ModelMode::dorefa;
}

namespace {

// Shared forward machinery. Activation sites are quantizers in the quantized
// modes and plain relu during dense pretraining.
struct ForwardBuilder {
    Model& model;
    Tape& tape;
    bool training;
    ForwardPass out;

    NodeId weight_node(std::size_t l) {
        QuantLayer& layer = model.layers[l];
        LayerTapeIds& ids = out.layer_ids[l];
        switch (model.mode) {
            case ModelMode::dense: {
                ids.weight = tape.leaf(layer.weights, layer.layer_id + ".w");
                return ids.weight;
            }
            case ModelMode::bit_planes: {
                const BitTensor& bt = layer.bit_state;
                if (bt.bits == 0) {
                    return tape.leaf(Tensor::zeros(layer.weight_shape), layer.layer_id + ".zero");
                }
                for (int b = 0; b < bt.bits; ++b) {
                    ids.pos.push_back(tape.leaf(bt.pos_planes[b], layer.layer_id + ".p"));
                    ids.neg.push_back(tape.leaf(bt.neg_planes[b], layer.layer_id + ".n"));
                }
                return bit_ste_weight_node(tape, bt, ids.pos, ids.neg);
            }
            case ModelMode::dorefa: {
                ids.weight = tape.leaf(layer.weights, layer.layer_id + ".w");
                return dorefa_weight_node(tape, ids.weight, layer.dorefa_bits);
            }
        }
        throw ValueError("model_forward: unknown mode");
    }

    NodeId apply_layer(std::size_t l, NodeId x) {
        QuantLayer& layer = model.layers[l];
        LayerTapeIds& ids = out.layer_ids[l];
        const NodeId w = weight_node(l);
        std::optional<NodeId> bias;
        if (layer.bias) {
            ids.bias = tape.leaf(*layer.bias, layer.layer_id + ".b");
            bias = ids.bias;
        }
        if (layer.kind == LayerKind::linear) {
            return ops::linear(tape, x, w, bias);
        }
        return ops::conv2d(tape, x, w, bias, layer.stride, layer.padding);
    }

    NodeId apply_bn(std::size_t bn_index, NodeId x) {
        BatchNormLayer& bn = model.bns[bn_index];
        const NodeId gamma = tape.leaf(bn.gamma, bn.id + ".g");
        const NodeId beta = tape.leaf(bn.beta, bn.id + ".b");
        out.bn_ids[bn_index] = {gamma, beta};
        return ops::batchnorm(tape, x, gamma, beta, bn.state, training);
    }

    NodeId apply_act(std::size_t site_index, NodeId x) {
        if (model.mode == ModelMode::dense) {
            return ops::relu(tape, x);
        }
        ActSite& site = model.act_sites[site_index];
        if (site.q.kind == ActKind::pact) {
            const NodeId clip = tape.leaf(Tensor::scalar(site.q.clip_level), site.id + ".clip");
            out.clip_ids[site_index] = clip;
            return act_quant_pact_node(tape, x, clip, site.q.bits);
        }
        return act_quant_relu6_node(tape, x, site.q.bits);
    }
};

}  // namespace

ForwardPass model_forward(Model& model, Tape& tape, const Tensor& batch, bool training) {
    const ModelSpec& spec = model.spec;
    if (batch.shape.size() != 4 || batch.shape[1] != spec.input_shape[0] ||
        batch.shape[2] != spec.input_shape[1] || batch.shape[3] != spec.input_shape[2]) {
        throw ShapeError("model_forward: batch " + shape_str(batch.shape) +
                         " does not match input shape " + shape_str(spec.input_shape));
    }
    const std::size_t n = batch.shape[0];
    if (n == 0) {
        throw ValueError("model_forward: empty batch");
    }

    ForwardBuilder fb{model, tape, training, {}};
    fb.out.layer_ids.resize(model.layers.size());
    fb.out.bn_ids.resize(model.bns.size(), {kNoNode, kNoNode});
    fb.out.clip_ids.resize(model.act_sites.size(), kNoNode);

    NodeId x = tape.leaf(batch, "input");

    if (spec.arch == "mlp") {
        x = ops::reshape(tape, x, {n, shape_size(spec.input_shape)});
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            if (l >= 1) {
                x = fb.apply_act(l - 1, x);
            }
            x = fb.apply_layer(l, x);
        }
    } else if (spec.arch == "cnn") {
        for (std::size_t l = 0; l + 1 < model.layers.size(); ++l) {
            if (l >= 1) {
                x = fb.apply_act(l - 1, x);
            }
            x = fb.apply_layer(l, x);
        }
        x = fb.apply_act(model.layers.size() - 2, x);
        const Tensor& feat = tape.value(x);
        x = ops::reshape(tape, x, {n, feat.size() / n});
        x = fb.apply_layer(model.layers.size() - 1, x);
    } else {  // resnet
        std::size_t li = 0, bi = 0, si = 0;
        x = fb.apply_layer(li++, x);  // stem
        x = fb.apply_bn(bi++, x);
        x = fb.apply_act(si++, x);
        std::size_t in_ch = spec.channels[0];
        for (std::size_t s = 0; s < spec.channels.size(); ++s) {
            const std::size_t width = spec.channels[s];
            for (std::size_t b = 0; b < spec.blocks_per_stage; ++b) {
                const int stride = (s > 0 && b == 0) ? 2 : 1;
                const NodeId block_in = x;
                NodeId y = fb.apply_layer(li++, block_in);  // conv1
                y = fb.apply_bn(bi++, y);
                y = fb.apply_act(si++, y);
                y = fb.apply_layer(li++, y);  // conv2
                y = fb.apply_bn(bi++, y);
                NodeId shortcut = block_in;
                if (stride != 1 || in_ch != width) {
                    shortcut = fb.apply_layer(li++, block_in);  // down
                    shortcut = fb.apply_bn(bi++, shortcut);
                }
                x = ops::add(tape, y, shortcut);
                x = fb.apply_act(si++, x);
                in_ch = width;
            }
        }
        x = ops::global_avg_pool(tape, x);
        x = fb.apply_act(si++, x);
        x = fb.apply_layer(li++, x);  // fc
    }

    fb.out.logits = x;
    return fb.out;
}

Tensor model_logits(Model& model, const Tensor& batch) {
    Tape tape;
    const ForwardPass fp = model_forward(model, tape, batch, /*training=*/false);
    return tape.value(fp.logits);
}

std::vector<LayerStats> layer_stats(const Model& model) {
    std::vector<LayerStats> stats;
    stats.reserve(model.layers.size());
    for (const QuantLayer& layer : model.layers) {
        LayerStats s;
        s.layer_id = layer.layer_id;
        s.param_count = layer.param_count();
        switch (model.mode) {
            case ModelMode::dense: s.precision = 32; break;
            case ModelMode::bit_planes: s.precision = layer.bit_state.bits; break;
            case ModelMode::dorefa: s.precision = layer.dorefa_bits; break;
        }
        stats.push_back(std::move(s));
    }
    return stats;
}

std::size_t quantizable_param_count(const Model& model) {
    std::size_t total = 0;
    for (const QuantLayer& layer : model.layers) {
        total += layer.param_count();
    }
    return total;
}

std::size_t auxiliary_param_count(const Model& model) {
    std::size_t total = 0;
    for (const QuantLayer& layer : model.layers) {
        if (layer.bias) {
            total += layer.bias->size();
        }
    }
    for (const BatchNormLayer& bn : model.bns) {
        total += bn.gamma.size() + bn.beta.size();
    }
    return total;
}

double model_bits_per_param(const Model& model) {
    const std::vector<LayerStats> stats = layer_stats(model);
    double bits = 0.0, params = 0.0;
    for (const LayerStats& s : stats) {
        bits += static_cast<double>(s.param_count) * static_cast<double>(s.precision);
        params += static_cast<double>(s.param_count);
    }
    return bits / params;
}

}  // namespace bitsift
