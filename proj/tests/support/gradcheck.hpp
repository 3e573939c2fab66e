#pragma once

// Central finite-difference oracle for gradient checks. Kept independent of
// any backward implementation: losses are re-evaluated from scratch with
// perturbed leaves.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "bitsift/autograd.hpp"

namespace bitsift::testutil {

// Builds the scalar loss node on the given tape from freshly created leaves.
using LossBuilder = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

inline double eval_loss(const std::vector<Tensor>& leaves, const LossBuilder& build) {
    Tape tape;
    std::vector<NodeId> ids;
    ids.reserve(leaves.size());
    for (const Tensor& t : leaves) {
        ids.push_back(tape.leaf(t));
    }
    const NodeId loss = build(tape, ids);
    return tape.value(loss).scalar_value();
}

inline double grad_error(double analytic, double numeric) {
    const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
    return std::fabs(analytic - numeric) / denom;
}

// Largest elementwise mismatch between the tape gradients and central finite
// differences with the given step.
inline double max_grad_check_error(std::vector<Tensor> leaves, const LossBuilder& build,
                                   double h = 1e-5) {
    Tape tape;
    std::vector<NodeId> ids;
    ids.reserve(leaves.size());
    for (const Tensor& t : leaves) {
        ids.push_back(tape.leaf(t));
    }
    const NodeId loss = build(tape, ids);
    const Gradients grads = tape.backward(loss);

    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        for (std::size_t i = 0; i < leaves[li].size(); ++i) {
            const double orig = leaves[li].data[i];
            leaves[li].data[i] = orig + h;
            const double up = eval_loss(leaves, build);
            leaves[li].data[i] = orig - h;
            const double down = eval_loss(leaves, build);
            leaves[li].data[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            worst = std::max(worst, grad_error(grads.at(ids[li]).data[i], numeric));
        }
    }
    return worst;
}

}  // namespace bitsift::testutil
