#pragma once

#include <optional>
#include <vector>

#include "bitsift/autograd.hpp"

namespace bitsift::ops {

// Per-channel batchnorm statistics, kept in full precision outside the tape.
// Training-mode forwards refresh the running estimates in place.
struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

NodeId add(Tape& tape, NodeId a, NodeId b);
NodeId sub(Tape& tape, NodeId a, NodeId b);
NodeId mul(Tape& tape, NodeId a, NodeId b);
NodeId scale(Tape& tape, NodeId a, double factor);
NodeId sum(Tape& tape, NodeId a);

// a:[m,k] x b:[k,n] -> [m,n]
NodeId matmul(Tape& tape, NodeId a, NodeId b);

// x:[N,in], w:[out,in], bias:[out] -> [N,out]
NodeId linear(Tape& tape, NodeId x, NodeId w, std::optional<NodeId> bias);

// x:[N,C,H,W], w:[F,C,kh,kw], bias:[F]; zero padding.
NodeId conv2d(Tape& tape, NodeId x, NodeId w, std::optional<NodeId> bias, int stride, int padding);

// Gradient at exactly 0 is defined as 0.
NodeId relu(Tape& tape, NodeId x);

// x rank 2 [N,F] (per-feature) or rank 4 [N,C,H,W] (per-channel).
NodeId batchnorm(Tape& tape, NodeId x, NodeId gamma, NodeId beta, BatchNormState& state,
                 bool training);

// [N,C,H,W] -> [N,C]
NodeId global_avg_pool(Tape& tape, NodeId x);

NodeId reshape(Tape& tape, NodeId x, const Shape& shape);

// Mean over the batch of -log softmax(logits)[label]; labels are class indices.
NodeId cross_entropy(Tape& tape, NodeId logits, const std::vector<int>& labels);

}  // namespace bitsift::ops
