#include <doctest.h>

#include <cmath>

#include "bitsift/error.hpp"
#include "bitsift/ops.hpp"
#include "bitsift/rng.hpp"
#include "bitsift/ste.hpp"
#include "support/gradcheck.hpp"

using namespace bitsift;

namespace {

BitTensor make_bt(int bits, double scale, const Shape& shape) {
    BitTensor bt;
    bt.shape = shape;
    bt.bits = bits;
    bt.scale = scale;
    for (int b = 0; b < bits; ++b) {
        bt.pos_planes.push_back(Tensor::zeros(shape));
        bt.neg_planes.push_back(Tensor::zeros(shape));
    }
    return bt;
}

}  // namespace

TEST_CASE("bit_ste_forward rounds the plane recomposition") {
    BitTensor bt = make_bt(2, 1.0, {1});
    bt.pos_planes[0].data[0] = 1.4;
    bt.pos_planes[1].data[0] = 0.6;
    CHECK(bit_ste_forward(bt).data[0] == 1.0);  // Round(1.4 + 1.2)/3

    BitTensor binary = make_bt(3, 1.0, {1});
    binary.pos_planes[0].data[0] = 1.0;
    binary.pos_planes[2].data[0] = 1.0;  // code 5
    CHECK(bit_ste_forward(binary).data[0] == 5.0 / 7.0);

    BitTensor zero = make_bt(3, 1.0, {2});
    CHECK(bit_ste_forward(zero).data == std::vector<double>{0.0, 0.0});

    BitTensor bad = make_bt(1, 1.0, {1});
    bad.pos_planes[0].data[0] = 2.5;  // missed trim
    CHECK_THROWS_AS(bit_ste_forward(bad), ValueError);
}

TEST_CASE("bit_ste_backward applies exactly 2^b/(2^n-1)") {
    const Tensor g({1}, {3.0});
    CHECK(bit_ste_backward(g, 2, 3).data[0] == 3.0 * 4.0 / 7.0);
    CHECK(bit_ste_backward(g, 0, 1).data[0] == 3.0);
    CHECK(bit_ste_backward(Tensor({1}, {0.0}), 3, 8).data[0] == 0.0);
    CHECK_THROWS_AS(bit_ste_backward(g, 3, 3), ValueError);
    CHECK_THROWS_AS(bit_ste_backward(g, -1, 3), ValueError);

    // Rational identity: feeding k*(2^n-1) must return exactly k*2^b.
    for (int n = 1; n <= 16; ++n) {
        const double denom = static_cast<double>((1 << n) - 1);
        for (int b = 0; b < n; ++b) {
            for (double k : {1.0, -3.0, 7.0}) {
                const Tensor up({1}, {k * denom});
                REQUIRE(bit_ste_backward(up, b, n).data[0] == k * std::ldexp(1.0, b));
            }
            // and the general case is the correctly rounded rational
            REQUIRE(bit_ste_backward(Tensor({1}, {1.0}), b, n).data[0] ==
                    std::ldexp(1.0, b) / denom);
        }
    }
}

TEST_CASE("effective weights equal represented weights on binary planes") {
    Rng rng(31);
    for (int rep = 0; rep < 100; ++rep) {
        Tensor w = Tensor::zeros({8});
        for (double& v : w.data) v = rng.normal();
        const BitTensor bt = to_bit_representation(w, 1 + static_cast<int>(rng.uniform_int(8)));
        const Tensor eff = ste_effective_weights(bt);
        const Tensor rep_w = represented_weights(bt);
        for (std::size_t i = 0; i < eff.size(); ++i) {
            REQUIRE(eff.data[i] == rep_w.data[i]);
        }
    }
}

TEST_CASE("dorefa_ste forward and passthrough backward") {
    CHECK(dorefa_ste(Tensor({1}, {1.0}), 2).data[0] == 1.0);
    CHECK(dorefa_ste(Tensor({1}, {0.3}), 2).data[0] == 1.0 / 3.0);
    CHECK(dorefa_ste(Tensor({1}, {1.7}), 2).data[0] == 1.0);   // clamped
    CHECK(dorefa_ste(Tensor({1}, {-0.2}), 2).data[0] == 0.0);  // clamped

    Tape tape;
    const NodeId w = tape.leaf(Tensor({2}, {0.4, -0.9}));
    const NodeId q = dorefa_weight_node(tape, w, 3);
    const NodeId loss = ops::sum(tape, ops::scale(tape, q, 2.5));
    const Gradients grads = tape.backward(loss);
    CHECK(grads.at(w).data == std::vector<double>{2.5, 2.5});  // straight through
}

TEST_CASE("dorefa weight node applies the per-step dynamic range") {
    Tape tape;
    const NodeId w = tape.leaf(Tensor({2}, {0.5, -2.0}));
    const NodeId q = dorefa_weight_node(tape, w, 2);
    // s_t = 2; magnitudes {0.25,1} -> codes {1,3} -> {2/3, 2} with signs
    CHECK(tape.value(q).data[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(tape.value(q).data[1] == doctest::Approx(-2.0).epsilon(1e-15));

    // 0-bit layers produce zeros and block the gradient
    Tape t0;
    const NodeId w0 = t0.leaf(Tensor({2}, {0.5, -2.0}));
    const NodeId q0 = dorefa_weight_node(t0, w0, 0);
    CHECK(t0.value(q0).data == std::vector<double>{0.0, 0.0});
    const Gradients g0 = t0.backward(ops::sum(t0, q0));
    CHECK(g0.at(w0).data == std::vector<double>{0.0, 0.0});
}

TEST_CASE("relu6 activation quantizer") {
    CHECK(act_quant_relu6(Tensor({1}, {7.0}), 4).data[0] == 6.0);
    CHECK(act_quant_relu6(Tensor({1}, {3.0}), 4).data[0] == doctest::Approx(3.2).epsilon(1e-15));
    CHECK(act_quant_relu6(Tensor({1}, {-1.0}), 4).data[0] == 0.0);

    Tape tape;
    const NodeId x = tape.leaf(Tensor({3}, {-1.0, 3.0, 7.0}));
    const NodeId y = act_quant_relu6_node(tape, x, 4);
    const Gradients grads = tape.backward(ops::sum(tape, y));
    CHECK(grads.at(x).data == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("pact activation quantizer and clip gradient") {
    CHECK(act_quant_pact(Tensor({1}, {0.4}), 1.0, 2).data[0] == doctest::Approx(1.0 / 3.0));
    CHECK_THROWS_AS(act_quant_pact(Tensor({1}, {0.4}), 0.0, 2), ValueError);

    Tape tape;
    const NodeId x = tape.leaf(Tensor({4}, {-0.5, 0.4, 1.0, 2.0}));
    const NodeId clip = tape.leaf(Tensor::scalar(1.0));
    const NodeId y = act_quant_pact_node(tape, x, clip, 2);
    CHECK(tape.value(y).data[2] == doctest::Approx(1.0));  // boundary maps to clip level
    const Gradients grads = tape.backward(ops::sum(tape, y));
    // x-gradient passes only strictly inside (0, clip)
    CHECK(grads.at(x).data == std::vector<double>{0.0, 1.0, 0.0, 0.0});
    // clip collects the upstream over x >= clip (two elements here)
    CHECK(grads.at(clip).data[0] == doctest::Approx(2.0));

    Tape neg;
    const NodeId xn = neg.leaf(Tensor({3}, {-1.0, -0.2, -5.0}));
    const NodeId cn = neg.leaf(Tensor::scalar(1.0));
    const NodeId yn = act_quant_pact_node(neg, xn, cn, 2);
    CHECK(neg.value(yn).data == std::vector<double>(3, 0.0));
    const Gradients gn = neg.backward(ops::sum(neg, yn));
    CHECK(gn.at(cn).data[0] == 0.0);
}

TEST_CASE("pact clip gradient matches finite differences of the clamp surrogate") {
    // All inputs >= clip: the pre-rounding surrogate sum clamp(x,0,a) has
    // slope (number of clipped elements) in a.
    const Tensor x({3}, {1.5, 2.0, 3.0});
    const double a = 1.0;
    Tape tape;
    const NodeId xn = tape.leaf(x);
    const NodeId cn = tape.leaf(Tensor::scalar(a));
    const Gradients grads = tape.backward(ops::sum(tape, act_quant_pact_node(tape, xn, cn, 4)));
    const double analytic = grads.at(cn).data[0];

    const double h = 1e-5;
    auto surrogate = [&](double clip) {
        double s = 0.0;
        for (double v : x.data) s += std::clamp(v, 0.0, clip);
        return s;
    };
    const double numeric = (surrogate(a + h) - surrogate(a - h)) / (2.0 * h);
    CHECK(testutil::grad_error(analytic, numeric) <= 1e-6);
}

TEST_CASE("activation quantizers are idempotent") {
    Rng rng(13);
    for (int rep = 0; rep < 200; ++rep) {
        const int bits = 1 + static_cast<int>(rng.uniform_int(8));
        Tensor x = Tensor::zeros({16});
        for (double& v : x.data) v = rng.uniform(-2.0, 9.0);

        const Tensor once = act_quant_relu6(x, bits);
        const Tensor twice = act_quant_relu6(once, bits);
        REQUIRE(once.data == twice.data);

        const double clip = rng.uniform(0.5, 4.0);
        const Tensor p1 = act_quant_pact(x, clip, bits);
        const Tensor p2 = act_quant_pact(p1, clip, bits);
        REQUIRE(p1.data == p2.data);
    }
}
