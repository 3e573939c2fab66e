#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bitsift/tensor.hpp"

namespace bitsift {

using NodeId = std::size_t;

// Computes the node output from its input tensors. Runs eagerly at record time.
using ForwardFn = std::function<Tensor(const std::vector<const Tensor*>&)>;

// Maps the upstream gradient to one gradient per input. Custom rules (the
// straight-through estimators) plug in here.
using BackwardRule = std::function<std::vector<Tensor>(
    const Tensor& upstream, const std::vector<const Tensor*>& inputs, const Tensor& output)>;

struct TapeNode {
    NodeId id = 0;
    std::string op;
    std::vector<NodeId> inputs;
    Tensor output;
    BackwardRule backward;  // empty for leaves
};

// Gradient of the loss with respect to every node's output, indexed by node id.
// Nodes the loss does not reach keep an all-zero gradient of the right shape.
class Gradients {
public:
    explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}

    const Tensor& at(NodeId id) const;
    Tensor& at(NodeId id);
    std::size_t size() const { return grads_.size(); }

private:
    std::vector<Tensor> grads_;
};

// Single-threaded eager tape. Nodes are appended in execution order, so ids
// form a topological order by construction and backward is one reverse sweep.
class Tape {
public:
    NodeId leaf(Tensor value, std::string name = "leaf");
    NodeId record(std::string op_kind, std::vector<NodeId> inputs, const ForwardFn& forward,
                  BackwardRule backward);

    // Reverse-mode sweep from a scalar loss. The loss's own gradient is 1.
    Gradients backward(NodeId loss) const;

    const Tensor& value(NodeId id) const { return node(id).output; }
    const TapeNode& node(NodeId id) const;
    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<const Tensor*> input_values(const TapeNode& n) const;
    std::vector<TapeNode> nodes_;
};

}  // namespace bitsift
