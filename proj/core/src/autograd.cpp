#include "bitsift/autograd.hpp"

#include "bitsift/error.hpp"

namespace bitsift {

const Tensor& Gradients::at(NodeId id) const {
    if (id >= grads_.size()) {
        throw ValueError("gradients: node id " + std::to_string(id) + " out of range");
    }
    return grads_[id];
}

Tensor& Gradients::at(NodeId id) {
    if (id >= grads_.size()) {
        throw ValueError("gradients: node id " + std::to_string(id) + " out of range");
    }
    return grads_[id];
}

NodeId Tape::leaf(Tensor value, std::string name) {
    TapeNode n;
    n.id = nodes_.size();
    n.op = std::move(name);
    n.output = std::move(value);
    nodes_.push_back(std::move(n));
    return nodes_.back().id;
}

NodeId Tape::record(std::string op_kind, std::vector<NodeId> inputs, const ForwardFn& forward,
                    BackwardRule backward) {
    TapeNode n;
    n.id = nodes_.size();
    for (NodeId in : inputs) {
        if (in >= n.id) {
            throw ValueError("tape: input id " + std::to_string(in) + " does not precede node " +
                             std::to_string(n.id));
        }
    }
    n.op = std::move(op_kind);
    n.inputs = std::move(inputs);
    n.output = forward(input_values(n));
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return nodes_.back().id;
}

const TapeNode& Tape::node(NodeId id) const {
    if (id >= nodes_.size()) {
        throw ValueError("tape: node id " + std::to_string(id) + " out of range");
    }
    return nodes_[id];
}

std::vector<const Tensor*> Tape::input_values(const TapeNode& n) const {
    std::vector<const Tensor*> vals;
    vals.reserve(n.inputs.size());
    for (NodeId in : n.inputs) {
        vals.push_back(&nodes_[in].output);
    }
    return vals;
}

Gradients Tape::backward(NodeId loss) const {
    const TapeNode& loss_node = node(loss);
    if (loss_node.output.size() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss_node.output.shape));
    }

    std::vector<Tensor> grads;
    grads.reserve(nodes_.size());
    for (const TapeNode& n : nodes_) {
        grads.push_back(Tensor::zeros(n.output.shape));
    }
    std::vector<char> reached(nodes_.size(), 0);
    grads[loss].data[0] = 1.0;
    reached[loss] = 1;

    for (std::size_t idx = loss + 1; idx-- > 0;) {
        const TapeNode& n = nodes_[idx];
        if (!reached[idx] || !n.backward || n.inputs.empty()) {
            continue;
        }
        const std::vector<Tensor> input_grads = n.backward(grads[idx], input_values(n), n.output);
        if (input_grads.size() != n.inputs.size()) {
            throw ShapeError("backward(" + n.op + "): rule produced " +
                             std::to_string(input_grads.size()) + " gradients for " +
                             std::to_string(n.inputs.size()) + " inputs");
        }
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            const NodeId in = n.inputs[k];
            if (input_grads[k].shape != nodes_[in].output.shape) {
                throw ShapeError("backward(" + n.op + "): gradient shape " +
                                 shape_str(input_grads[k].shape) + " does not match input shape " +
                                 shape_str(nodes_[in].output.shape));
            }
            add_scaled(grads[in], input_grads[k], 1.0);
            reached[in] = 1;
        }
    }
    return Gradients(std::move(grads));
}

}  // namespace bitsift
