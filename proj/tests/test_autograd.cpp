#include <doctest.h>

#include <cstring>

#include "bitsift/error.hpp"
#include "bitsift/ops.hpp"
#include "bitsift/rng.hpp"
#include "support/gradcheck.hpp"

using namespace bitsift;
using testutil::max_grad_check_error;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.data) {
        v = rng.uniform(lo, hi);
    }
    return t;
}

}  // namespace

TEST_CASE("record computes eagerly and validates shapes") {
    Tape tape;
    const NodeId a = tape.leaf(Tensor({2}, {1.0, 2.0}));
    const NodeId b = tape.leaf(Tensor({2}, {3.0, 4.0}));
    const NodeId sum = ops::add(tape, a, b);
    CHECK(tape.value(sum).data == std::vector<double>{4.0, 6.0});

    const NodeId m1 = tape.leaf(Tensor::zeros({2, 3}));
    const NodeId m2 = tape.leaf(Tensor::zeros({3, 1}));
    const NodeId mm = ops::matmul(tape, m1, m2);
    CHECK(tape.value(mm).shape == Shape{2, 1});

    const NodeId bad = tape.leaf(Tensor::zeros({4, 2}));
    CHECK_THROWS_AS(ops::matmul(tape, m1, bad), ShapeError);
    CHECK_THROWS_AS(ops::add(tape, a, m1), ShapeError);
}

TEST_CASE("custom identity backward rule passes gradients straight through") {
    Tape tape;
    const NodeId x = tape.leaf(Tensor::scalar(1.25));
    const NodeId y = tape.record(
        "identity_ste", {x},
        [](const std::vector<const Tensor*>& in) { return *in[0]; },
        [](const Tensor& g, const std::vector<const Tensor*>&, const Tensor&) {
            return std::vector<Tensor>{g};
        });
    const NodeId loss = ops::scale(tape, y, 0.7);
    const Gradients grads = tape.backward(loss);
    CHECK(grads.at(x).data[0] == doctest::Approx(0.7));
}

TEST_CASE("backward of sum of squares") {
    Tape tape;
    const NodeId x = tape.leaf(Tensor({3}, {1.0, 2.0, 3.0}));
    const NodeId sq = ops::mul(tape, x, x);
    const NodeId loss = ops::sum(tape, sq);
    const Gradients grads = tape.backward(loss);
    CHECK(grads.at(x).data == std::vector<double>{2.0, 4.0, 6.0});
}

TEST_CASE("backward rejects non-scalar losses") {
    Tape tape;
    const NodeId x = tape.leaf(Tensor({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(tape.backward(x), ShapeError);
}

TEST_CASE("a leaf the loss never touches gets an all-zero gradient") {
    Tape tape;
    const NodeId x = tape.leaf(Tensor({2}, {1.0, 2.0}));
    const NodeId unused = tape.leaf(Tensor({4}, {1.0, 1.0, 1.0, 1.0}));
    const NodeId loss = ops::sum(tape, x);
    const Gradients grads = tape.backward(loss);
    CHECK(grads.at(unused).shape == Shape{4});
    CHECK(grads.at(unused).data == std::vector<double>(4, 0.0));
}

TEST_CASE("fan-out accumulates gradients from every consumer") {
    // loss = sum(x*a) + sum(x*b) => dloss/dx = a + b
    Tape tape;
    const NodeId x = tape.leaf(Tensor({2}, {1.5, -0.5}));
    const NodeId a = tape.leaf(Tensor({2}, {2.0, 3.0}));
    const NodeId b = tape.leaf(Tensor({2}, {-1.0, 4.0}));
    const NodeId loss =
        ops::add(tape, ops::sum(tape, ops::mul(tape, x, a)), ops::sum(tape, ops::mul(tape, x, b)));
    const Gradients grads = tape.backward(ops::sum(tape, loss));
    CHECK(grads.at(x).data[0] == doctest::Approx(1.0));
    CHECK(grads.at(x).data[1] == doctest::Approx(7.0));
}

TEST_CASE("matmul chain matches finite differences") {
    Rng rng(11);
    for (int rep = 0; rep < 3; ++rep) {
        std::vector<Tensor> leaves{random_tensor({4, 4}, rng), random_tensor({4, 4}, rng),
                                   random_tensor({4, 4}, rng)};
        const double err = max_grad_check_error(leaves, [](Tape& t, const std::vector<NodeId>& id) {
            return ops::sum(t, ops::matmul(t, ops::matmul(t, id[0], id[1]), id[2]));
        });
        CHECK(err <= 1e-6);
    }
}

TEST_CASE("every primitive passes the finite-difference oracle") {
    Rng rng(7);
    for (int rep = 0; rep < 5; ++rep) {
        // linear with bias
        {
            std::vector<Tensor> leaves{random_tensor({3, 5}, rng), random_tensor({4, 5}, rng),
                                       random_tensor({4}, rng)};
            CHECK(max_grad_check_error(leaves, [](Tape& t, const std::vector<NodeId>& id) {
                      return ops::sum(t, ops::linear(t, id[0], id[1], id[2]));
                  }) <= 1e-6);
        }
        // conv2d stride 2, padding 1
        {
            std::vector<Tensor> leaves{random_tensor({2, 2, 5, 5}, rng),
                                       random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)};
            CHECK(max_grad_check_error(leaves, [](Tape& t, const std::vector<NodeId>& id) {
                      return ops::sum(t, ops::conv2d(t, id[0], id[1], id[2], 2, 1));
                  }) <= 1e-6);
        }
        // relu away from the kink
        {
            Tensor x = random_tensor({8}, rng);
            for (double& v : x.data) {
                if (std::fabs(v) < 1e-3) v = 0.5;
            }
            CHECK(max_grad_check_error({x}, [](Tape& t, const std::vector<NodeId>& id) {
                      return ops::sum(t, ops::relu(t, id[0]));
                  }) <= 1e-6);
        }
        // batchnorm, training and inference
        for (bool training : {true, false}) {
            ops::BatchNormState state;
            state.running_mean = random_tensor({3}, rng);
            state.running_var = random_tensor({3}, rng, 0.5, 2.0);
            std::vector<Tensor> leaves{random_tensor({4, 3, 2, 2}, rng), random_tensor({3}, rng, 0.5, 1.5),
                                       random_tensor({3}, rng)};
            CHECK(max_grad_check_error(leaves, [&state, training](Tape& t,
                                                                  const std::vector<NodeId>& id) {
                      ops::BatchNormState local = state;  // keep the oracle reentrant
                      return ops::sum(t, ops::batchnorm(t, id[0], id[1], id[2], local, training));
                  }) <= 1e-6);
        }
        // cross entropy
        {
            Tensor logits = random_tensor({4, 3}, rng, -2.0, 2.0);
            const std::vector<int> labels{0, 2, 1, 2};
            CHECK(max_grad_check_error({logits}, [labels](Tape& t, const std::vector<NodeId>& id) {
                      return ops::cross_entropy(t, id[0], labels);
                  }) <= 1e-6);
        }
        // global average pool + reshape + elementwise ops
        {
            std::vector<Tensor> leaves{random_tensor({2, 3, 4, 4}, rng),
                                       random_tensor({2, 3}, rng)};
            CHECK(max_grad_check_error(leaves, [](Tape& t, const std::vector<NodeId>& id) {
                      const NodeId pooled = ops::global_avg_pool(t, id[0]);
                      const NodeId mixed = ops::mul(t, pooled, id[1]);
                      const NodeId reshaped = ops::reshape(t, mixed, {6});
                      return ops::sum(t, ops::scale(t, reshaped, 1.7));
                  }) <= 1e-6);
        }
    }
}

TEST_CASE("cross entropy examples and domain errors") {
    Tape tape;
    const NodeId logits = tape.leaf(Tensor({1, 2}, {0.0, 0.0}));
    const NodeId loss = ops::cross_entropy(tape, logits, {0});
    CHECK(tape.value(loss).scalar_value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    CHECK_THROWS_AS(ops::cross_entropy(tape, logits, {2}), ValueError);
    CHECK_THROWS_AS(ops::cross_entropy(tape, logits, {-1}), ValueError);
    const NodeId empty = tape.leaf(Tensor::zeros({0, 2}));
    CHECK_THROWS_AS(ops::cross_entropy(tape, empty, {}), ValueError);
}

TEST_CASE("conv2d full-overlap sums the input") {
    Rng rng(3);
    Tensor x = random_tensor({1, 1, 3, 3}, rng);
    Tape tape;
    const NodeId xn = tape.leaf(x);
    const NodeId w = tape.leaf(Tensor::full({1, 1, 3, 3}, 1.0));
    const NodeId y = ops::conv2d(tape, xn, w, std::nullopt, 1, 0);
    double total = 0.0;
    for (double v : x.data) total += v;
    CHECK(tape.value(y).shape == Shape{1, 1, 1, 1});
    CHECK(tape.value(y).data[0] == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("batchnorm normalizes to the hand-computed oracle") {
    // batch {3,7}: mean 5, biased variance 4 -> output (x-5)/2
    ops::BatchNormState state;
    state.running_mean = Tensor::zeros({1});
    state.running_var = Tensor::full({1}, 1.0);
    Tape tape;
    const NodeId x = tape.leaf(Tensor({2, 1}, {3.0, 7.0}));
    const NodeId gamma = tape.leaf(Tensor::full({1}, 1.0));
    const NodeId beta = tape.leaf(Tensor::zeros({1}));
    const NodeId y = ops::batchnorm(tape, x, gamma, beta, state, /*training=*/true);
    CHECK(tape.value(y).data[0] == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(tape.value(y).data[1] == doctest::Approx(1.0).epsilon(1e-5));
    // running statistics move toward the batch statistics
    CHECK(state.running_mean.data[0] == doctest::Approx(0.5));
    CHECK(state.running_var.data[0] == doctest::Approx(0.9 + 0.1 * 4.0));
}

TEST_CASE("identical seeds give bitwise identical outputs and gradients") {
    auto run = [] {
        Rng rng(42);
        Tensor x = random_tensor({4, 6}, rng);
        Tensor w = random_tensor({3, 6}, rng);
        Tape tape;
        const NodeId xn = tape.leaf(x);
        const NodeId wn = tape.leaf(w);
        const NodeId loss = ops::cross_entropy(tape, ops::linear(tape, xn, wn, std::nullopt),
                                               {0, 1, 2, 0});
        const Gradients grads = tape.backward(loss);
        return std::pair{tape.value(loss).data[0], grads.at(wn).data};
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.first == b.first);
    CHECK(std::memcmp(a.second.data(), b.second.data(), a.second.size() * sizeof(double)) == 0);
}
