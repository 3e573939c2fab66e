#include "bitsift/ste.hpp"

#include <cmath>

#include "bitsift/error.hpp"

namespace bitsift {

namespace {

double levels(int bits) {
    return static_cast<double>((1ULL << bits) - 1ULL);
}

void check_bits(int bits, const char* op) {
    if (bits < 0 || bits > 32) {
        throw ValueError(std::string(op) + ": precision " + std::to_string(bits) +
                         " outside supported range [0,32]");
    }
}

}  // namespace

Tensor ste_round_numerator(const BitTensor& bt) {
    bt.validate();
    Tensor numer = Tensor::zeros(bt.shape);
    for (std::size_t i = 0; i < numer.size(); ++i) {
        double acc = 0.0;
        for (int b = 0; b < bt.bits; ++b) {
            acc += std::ldexp(bt.pos_planes[b].data[i] - bt.neg_planes[b].data[i], b);
        }
        numer.data[i] = static_cast<double>(round_ties_away(acc));
    }
    return numer;
}

Tensor bit_ste_forward(const BitTensor& bt) {
    Tensor numer = ste_round_numerator(bt);
    if (bt.bits == 0) {
        return numer;  // already zeros
    }
    const double denom = levels(bt.bits);
    for (double& v : numer.data) {
        v /= denom;
    }
    return numer;
}

Tensor bit_ste_backward(const Tensor& grad_wq, int bit, int bits) {
    check_bits(bits, "bit_ste_backward");
    if (bit < 0 || bit >= bits) {
        throw ValueError("bit_ste_backward: bit " + std::to_string(bit) + " outside [0," +
                         std::to_string(bits) + ")");
    }
    const double denom = levels(bits);
    Tensor out = grad_wq;
    for (double& v : out.data) {
        v = std::ldexp(v, bit) / denom;
    }
    return out;
}

Tensor ste_effective_weights(const BitTensor& bt) {
    Tensor numer = ste_round_numerator(bt);
    const double step = bt.weight_step();
    for (double& v : numer.data) {
        v *= step;
    }
    return numer;
}

Tensor dorefa_ste(const Tensor& w, int bits) {
    check_bits(bits, "dorefa_ste");
    if (bits == 0) {
        return Tensor::zeros(w.shape);
    }
    const double m = levels(bits);
    Tensor out = w;
    for (double& v : out.data) {
        const double clamped = std::clamp(v, 0.0, 1.0);
        v = static_cast<double>(round_ties_away(clamped * m)) / m;
    }
    return out;
}

NodeId bit_ste_weight_node(Tape& tape, const BitTensor& bt, const std::vector<NodeId>& pos_leaves,
                           const std::vector<NodeId>& neg_leaves) {
    if (bt.bits < 1) {
        throw ValueError("bit_ste_weight_node: layer has no planes");
    }
    if (pos_leaves.size() != static_cast<std::size_t>(bt.bits) ||
        neg_leaves.size() != static_cast<std::size_t>(bt.bits)) {
        throw ValueError("bit_ste_weight_node: leaf count does not match precision");
    }
    const int n = bt.bits;
    const double s = bt.scale;
    const double step = bt.weight_step();
    std::vector<NodeId> inputs = pos_leaves;
    inputs.insert(inputs.end(), neg_leaves.begin(), neg_leaves.end());
    return tape.record(
        "bit_ste_weights", std::move(inputs),
        [n, step](const std::vector<const Tensor*>& in) {
            const std::size_t size = in[0]->size();
            Tensor out = Tensor::zeros(in[0]->shape);
            for (std::size_t i = 0; i < size; ++i) {
                double acc = 0.0;
                for (int b = 0; b < n; ++b) {
                    const double p = in[static_cast<std::size_t>(b)]->data[i];
                    const double q = in[static_cast<std::size_t>(n + b)]->data[i];
                    if (!(p >= 0.0 && p <= 2.0) || !(q >= 0.0 && q <= 2.0)) {
                        throw ValueError("bit_ste_weights: plane value outside [0,2]");
                    }
                    acc += std::ldexp(p - q, b);
                }
                out.data[i] = step * static_cast<double>(round_ties_away(acc));
            }
            return out;
        },
        [n, s](const Tensor& g, const std::vector<const Tensor*>&, const Tensor&) {
            const Tensor grad_wq = scaled(g, s);  // chain through W = s * W_q
            std::vector<Tensor> grads;
            grads.reserve(2 * static_cast<std::size_t>(n));
            for (int b = 0; b < n; ++b) {
                grads.push_back(bit_ste_backward(grad_wq, b, n));
            }
            for (int b = 0; b < n; ++b) {
                grads.push_back(scaled(grads[static_cast<std::size_t>(b)], -1.0));
            }
            return grads;
        });
}

NodeId dorefa_weight_node(Tape& tape, NodeId w, int bits) {
    check_bits(bits, "dorefa_weight_node");
    return tape.record(
        "dorefa_weights", {w},
        [bits](const std::vector<const Tensor*>& in) {
            const Tensor& wt = *in[0];
            if (bits == 0) {
                return Tensor::zeros(wt.shape);
            }
            double s = wt.max_abs();
            if (s == 0.0) {
                s = 1.0;
            }
            Tensor mag = wt;
            for (double& v : mag.data) {
                v = std::fabs(v) / s;
            }
            Tensor q = dorefa_ste(mag, bits);
            for (std::size_t i = 0; i < q.size(); ++i) {
                const double sign = wt.data[i] < 0.0 ? -1.0 : 1.0;
                q.data[i] = sign * (s * q.data[i]);
            }
            return q;
        },
        [bits](const Tensor& g, const std::vector<const Tensor*>&, const Tensor&) {
            if (bits == 0) {
                return std::vector<Tensor>{Tensor::zeros(g.shape)};
            }
            return std::vector<Tensor>{g};  // straight through
        });
}

namespace {

Tensor range_quantize(const Tensor& x, double range, int bits) {
    const double m = levels(bits);
    Tensor out = x;
    for (double& v : out.data) {
        const double y = std::clamp(v, 0.0, range);
        const long long code = round_ties_away(y / range * m);
        v = static_cast<double>(code) * range / m;
    }
    return out;
}

}  // namespace

Tensor act_quant_relu6(const Tensor& x, int bits) {
    check_bits(bits, "act_quant_relu6");
    if (bits < 1) {
        throw ValueError("act_quant_relu6: need at least 1 bit");
    }
    return range_quantize(x, 6.0, bits);
}

NodeId act_quant_relu6_node(Tape& tape, NodeId x, int bits) {
    check_bits(bits, "act_quant_relu6");
    if (bits < 1) {
        throw ValueError("act_quant_relu6: need at least 1 bit");
    }
    return tape.record(
        "act_relu6", {x},
        [bits](const std::vector<const Tensor*>& in) { return range_quantize(*in[0], 6.0, bits); },
        [](const Tensor& g, const std::vector<const Tensor*>& in, const Tensor&) {
            Tensor dx = g;
            for (std::size_t i = 0; i < dx.size(); ++i) {
                const double v = in[0]->data[i];
                if (v <= 0.0 || v >= 6.0) {
                    dx.data[i] = 0.0;
                }
            }
            return std::vector<Tensor>{std::move(dx)};
        });
}

Tensor act_quant_pact(const Tensor& x, double clip_level, int bits) {
    check_bits(bits, "act_quant_pact");
    if (bits < 1) {
        throw ValueError("act_quant_pact: need at least 1 bit");
    }
    if (clip_level <= 0.0) {
        throw ValueError("act_quant_pact: clip level must be positive");
    }
    return range_quantize(x, clip_level, bits);
}

NodeId act_quant_pact_node(Tape& tape, NodeId x, NodeId clip, int bits) {
    check_bits(bits, "act_quant_pact");
    if (bits < 1) {
        throw ValueError("act_quant_pact: need at least 1 bit");
    }
    if (!tape.value(clip).is_scalar()) {
        throw ShapeError("act_quant_pact: clip level must be a scalar leaf");
    }
    return tape.record(
        "act_pact", {x, clip},
        [bits](const std::vector<const Tensor*>& in) {
            const double a = in[1]->data[0];
            if (a <= 0.0) {
                throw ValueError("act_quant_pact: clip level must be positive");
            }
            return range_quantize(*in[0], a, bits);
        },
        [](const Tensor& g, const std::vector<const Tensor*>& in, const Tensor&) {
            const double a = in[1]->data[0];
            Tensor dx = g;
            double dclip = 0.0;
            for (std::size_t i = 0; i < dx.size(); ++i) {
                const double v = in[0]->data[i];
                if (v >= a) {
                    dclip += g.data[i];
                    dx.data[i] = 0.0;
                } else if (v <= 0.0) {
                    dx.data[i] = 0.0;
                }
            }
            return std::vector<Tensor>{std::move(dx), Tensor::scalar(dclip)};
        });
}

}  // namespace bitsift
