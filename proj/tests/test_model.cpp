#include <doctest.h>

#include <cmath>
#include <cstring>

#include "bitsift/error.hpp"
#include "bitsift/model.hpp"
#include "bitsift/ops.hpp"
#include "bitsift/precision_adjust.hpp"

using namespace bitsift;

namespace {

ModelSpec mlp_spec(std::vector<std::size_t> hidden = {16, 12}) {
    ModelSpec spec;
    spec.arch = "mlp";
    spec.input_shape = {1, 4, 4};
    spec.num_classes = 3;
    spec.hidden = std::move(hidden);
    return spec;
}

Tensor random_batch(const ModelSpec& spec, std::size_t n, Rng& rng) {
    Tensor batch = Tensor::zeros({n, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]});
    for (double& v : batch.data) {
        v = rng.uniform(0.0, 1.0);
    }
    return batch;
}

// Independent dense forward for the zero-input CNN oracle: plain loops with an
// explicitly padded buffer, structured differently from the library conv.
Tensor oracle_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const std::size_t C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const std::size_t F = w.shape[0], KH = w.shape[2], KW = w.shape[3];
    const std::size_t PH = H + 2 * pad, PW = W + 2 * pad;
    std::vector<double> padded(C * PH * PW, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t xx = 0; xx < W; ++xx) {
                padded[(c * PH + y + pad) * PW + xx + pad] = x.data[(c * H + y) * W + xx];
            }
        }
    }
    const std::size_t OH = (PH - KH) / stride + 1, OW = (PW - KW) / stride + 1;
    Tensor out = Tensor::zeros({1, F, OH, OW});
    for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t oy = 0; oy < OH; ++oy) {
            for (std::size_t ox = 0; ox < OW; ++ox) {
                double acc = b.data[f];
                for (std::size_t c = 0; c < C; ++c) {
                    for (std::size_t ky = 0; ky < KH; ++ky) {
                        for (std::size_t kx = 0; kx < KW; ++kx) {
                            acc += padded[(c * PH + oy * stride + ky) * PW + ox * stride + kx] *
                                   w.data[((f * C + c) * KH + ky) * KW + kx];
                        }
                    }
                }
                out.data[(f * OH + oy) * OW + ox] = acc;
            }
        }
    }
    return out;
}

}  // namespace

TEST_CASE("mlp parameter accounting") {
    ModelSpec spec;
    spec.arch = "mlp";
    spec.input_shape = {1, 28, 28};
    spec.num_classes = 10;
    spec.hidden = {};
    Rng rng(1);
    Model model = build_model(spec, rng);
    CHECK(model.layers.size() == 1);
    CHECK(quantizable_param_count(model) == 7840);
    CHECK(auxiliary_param_count(model) == 10);
    CHECK(quantizable_param_count(model) + auxiliary_param_count(model) == 7850);
}

TEST_CASE("broken shape chains are rejected") {
    ModelSpec spec;
    spec.arch = "cnn";
    spec.input_shape = {1, 2, 2};
    spec.channels = {4, 8, 16, 32};  // stride-2 stack exhausts a 2x2 input
    spec.num_classes = 3;
    Rng rng(2);
    CHECK_THROWS_AS(build_model(spec, rng), ValueError);
}

TEST_CASE("cnn forward on a zero image follows the bias chain") {
    ModelSpec spec;
    spec.arch = "cnn";
    spec.input_shape = {1, 8, 8};
    spec.channels = {3, 5};
    spec.num_classes = 4;
    Rng rng(3);
    Model model = build_model(spec, rng);
    // give the biases distinctive values so the chain is visible
    Rng brng(17);
    for (QuantLayer& l : model.layers) {
        for (double& v : l.bias->data) v = brng.uniform(-0.5, 0.5);
    }

    const Tensor zero = Tensor::zeros({1, 1, 8, 8});
    const Tensor logits = model_logits(model, zero);

    // independent trace through the same constants
    Tensor a = oracle_conv(zero, model.layers[0].weights, *model.layers[0].bias, 1, 1);
    for (double& v : a.data) v = std::max(v, 0.0);
    Tensor b = oracle_conv(a, model.layers[1].weights, *model.layers[1].bias, 2, 1);
    for (double& v : b.data) v = std::max(v, 0.0);
    const QuantLayer& fc = model.layers[2];
    Tensor expected = Tensor::zeros({1, spec.num_classes});
    for (std::size_t o = 0; o < spec.num_classes; ++o) {
        double acc = fc.bias->data[o];
        for (std::size_t i = 0; i < b.size(); ++i) {
            acc += b.data[i] * fc.weights.data[o * b.size() + i];
        }
        expected.data[o] = acc;
    }
    REQUIRE(logits.shape == expected.shape);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        CHECK(logits.data[i] == doctest::Approx(expected.data[i]).epsilon(1e-10));
    }
}

TEST_CASE("attach_bsq installs n0 planes per sign and keeps aux float") {
    Rng rng(4);
    Model model = build_model(mlp_spec(), rng);
    attach_bsq(model, 8);
    CHECK(model.mode == ModelMode::bit_planes);
    for (const QuantLayer& l : model.layers) {
        CHECK(l.bit_state.bits == 8);
        CHECK(l.bit_state.pos_planes.size() == 8);
        CHECK(l.bit_state.neg_planes.size() == 8);
        CHECK(l.bias.has_value());
    }
    CHECK_THROWS_AS(attach_bsq(model, 8), ValueError);  // already attached
}

TEST_CASE("quantization error shrinks as the initial precision grows") {
    Rng rng(5);
    const ModelSpec spec = mlp_spec();
    Model float_model = build_model(spec, rng);
    Rng brng(6);
    const Tensor batch = random_batch(spec, 8, brng);
    const Tensor float_logits = model_logits(float_model, batch);

    auto max_diff = [&](int n0) {
        Model q = float_model;
        attach_bsq(q, n0);
        const Tensor logits = model_logits(q, batch);
        double m = 0.0;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            m = std::max(m, std::fabs(logits.data[i] - float_logits.data[i]));
        }
        return m;
    };
    const double d4 = max_diff(4), d8 = max_diff(8), d16 = max_diff(16);
    CHECK(d8 <= d4);
    CHECK(d16 <= d8);
    CHECK(d16 < d4);
}

TEST_CASE("frozen-batch logits are bitwise stable across precision adjustment") {
    Rng rng(7);
    const ModelSpec spec = mlp_spec({16, 12});  // 3 weighted layers
    Model model = build_model(spec, rng);
    attach_bsq(model, 6);
    // perturb the planes like mid-training state, staying inside [0,2]
    Rng prng(8);
    for (QuantLayer& l : model.layers) {
        for (int b = 0; b < l.bit_state.bits; ++b) {
            for (std::size_t i = 0; i < l.bit_state.size(); ++i) {
                l.bit_state.pos_planes[b].data[i] =
                    std::clamp(l.bit_state.pos_planes[b].data[i] + prng.uniform(-0.4, 0.4), 0.0, 2.0);
                l.bit_state.neg_planes[b].data[i] =
                    std::clamp(l.bit_state.neg_planes[b].data[i] + prng.uniform(-0.4, 0.4), 0.0, 2.0);
            }
        }
    }
    Rng brng(9);
    const Tensor batch = random_batch(spec, 16, brng);
    const Tensor before = model_logits(model, batch);
    for (QuantLayer& l : model.layers) {
        auto [adjusted, report] = adjust_layer(l.bit_state, l.layer_id);
        CHECK(report.n_after <= report.n_before + 1);
        l.bit_state = std::move(adjusted);
    }
    const Tensor after = model_logits(model, batch);
    REQUIRE(before.size() == after.size());
    REQUIRE(std::memcmp(before.data.data(), after.data.data(),
                        before.size() * sizeof(double)) == 0);
}

TEST_CASE("mlp zero input with zero biases gives chance-level cross entropy") {
    Rng rng(10);
    Model model = build_model(mlp_spec(), rng);
    const Tensor zero = Tensor::zeros({2, 1, 4, 4});
    const Tensor logits = model_logits(model, zero);
    for (double v : logits.data) {
        CHECK(v == 0.0);
    }
    Tape tape;
    const NodeId ln = tape.leaf(logits);
    const NodeId ce = ops::cross_entropy(tape, ln, {0, 2});
    CHECK(tape.value(ce).scalar_value() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("thin resnet with one 0-bit block still works and passes gradient") {
    ModelSpec spec;
    spec.arch = "resnet";
    spec.input_shape = {1, 8, 8};
    spec.channels = {4, 8};
    spec.blocks_per_stage = 1;
    spec.num_classes = 3;
    Rng rng(11);
    Model model = build_model(spec, rng);
    attach_bsq(model, 4);

    // zero out the second stage's residual convs and collapse them to 0 bits
    for (QuantLayer& l : model.layers) {
        if (l.layer_id.rfind("s1b0.conv", 0) == 0) {
            for (int b = 0; b < l.bit_state.bits; ++b) {
                std::fill(l.bit_state.pos_planes[b].data.begin(),
                          l.bit_state.pos_planes[b].data.end(), 0.0);
                std::fill(l.bit_state.neg_planes[b].data.begin(),
                          l.bit_state.neg_planes[b].data.end(), 0.0);
            }
            auto [adjusted, report] = adjust_layer(l.bit_state, l.layer_id);
            CHECK(report.n_after == 0);
            l.bit_state = std::move(adjusted);
        }
    }

    Rng brng(12);
    const Tensor batch = random_batch(spec, 4, brng);
    Tape tape;
    const ForwardPass fp = model_forward(model, tape, batch, /*training=*/true);
    const Tensor& logits = tape.value(fp.logits);
    CHECK(logits.all_finite());

    const NodeId loss = ops::cross_entropy(tape, fp.logits, {0, 1, 2, 0});
    const Gradients grads = tape.backward(loss);
    // gradient still reaches the stem through the shortcut
    double stem_norm = 0.0;
    for (NodeId id : fp.layer_ids[0].pos) {
        for (double v : grads.at(id).data) stem_norm += v * v;
    }
    CHECK(stem_norm > 0.0);
}

TEST_CASE("activation precision map and PACT switch") {
    ModelSpec spec = mlp_spec({16, 12});
    spec.act_bits = 2;           // below the PACT threshold
    spec.pact_below_bits = 4;
    Rng rng(13);
    Model model = build_model(spec, rng);
    CHECK(model.layers.front().act_bits == spec.act_bits_first);
    CHECK(model.layers.back().act_bits == spec.act_bits_last);
    CHECK(model.layers[1].act_bits == 2);
    REQUIRE(model.act_sites.size() == 2);
    CHECK(model.act_sites[0].q.kind == ActKind::pact);             // 2-bit site
    CHECK(model.act_sites[1].q.kind == ActKind::relu6_uniform);    // 8-bit site
}

TEST_CASE("model stats reflect the mode") {
    Rng rng(14);
    Model model = build_model(mlp_spec(), rng);
    for (const LayerStats& s : layer_stats(model)) {
        CHECK(s.precision == 32);
    }
    CHECK(model_bits_per_param(model) == 32.0);
    attach_bsq(model, 5);
    for (const LayerStats& s : layer_stats(model)) {
        CHECK(s.precision == 5);
    }
    CHECK(model_bits_per_param(model) == 5.0);
}
