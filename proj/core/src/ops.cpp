#include "bitsift/ops.hpp"

#include <cmath>

#include "bitsift/error.hpp"
#include "bitsift/parallel.hpp"

namespace bitsift::ops {

namespace {

Tensor matmul_values(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor out = Tensor::zeros({m, n});
    parallel_for(m, [&](std::size_t i) {
        const double* arow = a.data.data() + i * k;
        double* orow = out.data.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b.data.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                orow[j] += av * brow[j];
            }
        }
    });
    return out;
}

Tensor matmul_at_b(const Tensor& a, const Tensor& b) {
    // a:[m,k], b:[m,n] -> a^T b :[k,n]
    const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor out = Tensor::zeros({k, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data.data() + i * k;
        const double* brow = b.data.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* orow = out.data.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                orow[j] += av * brow[j];
            }
        }
    }
    return out;
}

Tensor matmul_a_bt(const Tensor& a, const Tensor& b) {
    // a:[m,n], b:[k,n] -> a b^T :[m,k]
    const std::size_t m = a.shape[0], n = a.shape[1], k = b.shape[0];
    Tensor out = Tensor::zeros({m, k});
    parallel_for(m, [&](std::size_t i) {
        const double* arow = a.data.data() + i * n;
        double* orow = out.data.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b.data.data() + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                acc += arow[j] * brow[j];
            }
            orow[p] = acc;
        }
    });
    return out;
}

struct ConvDims {
    std::size_t n, c, h, w, f, kh, kw, oh, ow;
    int stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& wt, int stride, int pad) {
    if (x.shape.size() != 4 || wt.shape.size() != 4) {
        throw ShapeError("conv2d: expected rank-4 input and kernel, got " + shape_str(x.shape) +
                         " and " + shape_str(wt.shape));
    }
    if (stride < 1 || pad < 0) {
        throw ValueError("conv2d: stride must be >= 1 and padding >= 0");
    }
    ConvDims d{};
    d.n = x.shape[0];
    d.c = x.shape[1];
    d.h = x.shape[2];
    d.w = x.shape[3];
    d.f = wt.shape[0];
    d.kh = wt.shape[2];
    d.kw = wt.shape[3];
    d.stride = stride;
    d.pad = pad;
    if (wt.shape[1] != d.c) {
        throw ShapeError("conv2d: kernel expects " + std::to_string(wt.shape[1]) +
                         " channels, input has " + std::to_string(d.c));
    }
    const long long ih = static_cast<long long>(d.h) + 2 * pad;
    const long long iw = static_cast<long long>(d.w) + 2 * pad;
    if (ih < static_cast<long long>(d.kh) || iw < static_cast<long long>(d.kw)) {
        throw ShapeError("conv2d: kernel " + shape_str(wt.shape) + " larger than padded input " +
                         shape_str(x.shape));
    }
    d.oh = static_cast<std::size_t>((ih - d.kh) / stride + 1);
    d.ow = static_cast<std::size_t>((iw - d.kw) / stride + 1);
    return d;
}

Tensor conv_forward(const Tensor& x, const Tensor& wt, const Tensor* bias, const ConvDims& d) {
    Tensor out = Tensor::zeros({d.n, d.f, d.oh, d.ow});
    parallel_for(d.n * d.f, [&](std::size_t nf) {
        const std::size_t n = nf / d.f;
        const std::size_t f = nf % d.f;
        const double b = bias ? bias->data[f] : 0.0;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
            for (std::size_t ox = 0; ox < d.ow; ++ox) {
                double acc = b;
                for (std::size_t c = 0; c < d.c; ++c) {
                    for (std::size_t ky = 0; ky < d.kh; ++ky) {
                        const long long iy =
                            static_cast<long long>(oy) * d.stride - d.pad + static_cast<long long>(ky);
                        if (iy < 0 || iy >= static_cast<long long>(d.h)) continue;
                        for (std::size_t kx = 0; kx < d.kw; ++kx) {
                            const long long ix = static_cast<long long>(ox) * d.stride - d.pad +
                                                 static_cast<long long>(kx);
                            if (ix < 0 || ix >= static_cast<long long>(d.w)) continue;
                            const double xv =
                                x.data[((n * d.c + c) * d.h + iy) * d.w + static_cast<std::size_t>(ix)];
                            const double wv = wt.data[((f * d.c + c) * d.kh + ky) * d.kw + kx];
                            acc += xv * wv;
                        }
                    }
                }
                out.data[((n * d.f + f) * d.oh + oy) * d.ow + ox] = acc;
            }
        }
    });
    return out;
}

std::size_t bn_channels(const Tensor& x) {
    if (x.shape.size() == 2) return x.shape[1];
    if (x.shape.size() == 4) return x.shape[1];
    throw ShapeError("batchnorm: expected rank-2 or rank-4 input, got " + shape_str(x.shape));
}

// Iterates x as (outer, channel, inner) so rank-2 and rank-4 share one path.
struct BnLayout {
    std::size_t outer, channels, inner;
};

BnLayout bn_layout(const Tensor& x) {
    if (x.shape.size() == 2) return {x.shape[0], x.shape[1], 1};
    return {x.shape[0], x.shape[1], x.shape[2] * x.shape[3]};
}

}  // namespace

NodeId add(Tape& tape, NodeId a, NodeId b) {
    require_same_shape(tape.value(a), tape.value(b), "add");
    return tape.record(
        "add", {a, b},
        [](const std::vector<const Tensor*>& in) {
            Tensor out = *in[0];
            add_scaled(out, *in[1], 1.0);
            return out;
        },
        [](const Tensor& g, const std::vector<const Tensor*>&, const Tensor&) {
            return std::vector<Tensor>{g, g};
        });
}

NodeId sub(Tape& tape, NodeId a, NodeId b) {
    require_same_shape(tape.value(a), tape.value(b), "sub");
    return tape.record(
        "sub", {a, b},
        [](const std::vector<const Tensor*>& in) {
            Tensor out = *in[0];
            add_scaled(out, *in[1], -1.0);
            return out;
        },
        [](const Tensor& g, const std::vector<const Tensor*>&, const Tensor&) {
            return std::vector<Tensor>{g, scaled(g, -1.0)};
        });
}

NodeId mul(Tape& tape, NodeId a, NodeId b) {
    require_same_shape(tape.value(a), tape.value(b), "mul");
    return tape.record(
        "mul", {a, b},
        [](const std::vector<const Tensor*>& in) {
            Tensor out = *in[0];
            for (std::size_t i = 0; i < out.size(); ++i) {
                out.data[i] *= in[1]->data[i];
            }
            return out;
        },
        [](const Tensor& g, const std::vector<const Tensor*>& in, const Tensor&) {
            Tensor ga = g, gb = g;
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga.data[i] *= in[1]->data[i];
                gb.data[i] *= in[0]->data[i];
            }
            return std::vector<Tensor>{std::move(ga), std::move(gb)};
        });
}

NodeId scale(Tape& tape, NodeId a, double factor) {
    return tape.record(
        "scale", {a},
        [factor](const std::vector<const Tensor*>& in) { return scaled(*in[0], factor); },
        [factor](const Tensor& g, const std::vector<const Tensor*>&, const Tensor&) {
            return std::vector<Tensor>{scaled(g, factor)};
        });
}

NodeId sum(Tape& tape, NodeId a) {
    return tape.record(
        "sum", {a},
        [](const std::vector<const Tensor*>& in) {
            double acc = 0.0;
            for (double v : in[0]->data) acc += v;
            return Tensor::scalar(acc);
        },
        [](const Tensor& g, const std::vector<const Tensor*>& in, const Tensor&) {
            return std::vector<Tensor>{Tensor::full(in[0]->shape, g.data[0])};
        });
}

NodeId matmul(Tape& tape, NodeId a, NodeId b) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    if (av.shape.size() != 2 || bv.shape.size() != 2 || av.shape[1] != bv.shape[0]) {
        throw ShapeError("matmul: expected [m,k]x[k,n], got " + shape_str(av.shape) + " and " +
                         shape_str(bv.shape));
    }
    return tape.record(
        "matmul", {a, b},
        [](const std::vector<const Tensor*>& in) { return matmul_values(*in[0], *in[1]); },
        [](const Tensor& g, const std::vector<const Tensor*>& in, const Tensor&) {
            return std::vector<Tensor>{matmul_a_bt(g, *in[1]), matmul_at_b(*in[0], g)};
        });
}

NodeId linear(Tape& tape, NodeId x, NodeId w, std::optional<NodeId> bias) {
    const Tensor& xv = tape.value(x);
    const Tensor& wv = tape.value(w);
    if (xv.shape.size() != 2 || wv.shape.size() != 2 || xv.shape[1] != wv.shape[1]) {
        throw ShapeError("linear: expected x:[N,in], w:[out,in], got " + shape_str(xv.shape) +
                         " and " + shape_str(wv.shape));
    }
    const std::size_t out_dim = wv.shape[0];
    if (bias && tape.value(*bias).shape != Shape{out_dim}) {
        throw ShapeError("linear: bias shape " + shape_str(tape.value(*bias).shape) +
                         " does not match output width " + std::to_string(out_dim));
    }
    std::vector<NodeId> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    const bool has_bias = bias.has_value();
    return tape.record(
        "linear", std::move(inputs),
        [has_bias](const std::vector<const Tensor*>& in) {
            const Tensor& xt = *in[0];
            const Tensor& wt = *in[1];
            const std::size_t n = xt.shape[0], k = xt.shape[1], m = wt.shape[0];
            Tensor out = Tensor::zeros({n, m});
            parallel_for(n, [&](std::size_t i) {
                const double* xrow = xt.data.data() + i * k;
                double* orow = out.data.data() + i * m;
                for (std::size_t o = 0; o < m; ++o) {
                    const double* wrow = wt.data.data() + o * k;
                    double acc = has_bias ? in[2]->data[o] : 0.0;
                    for (std::size_t j = 0; j < k; ++j) {
                        acc += xrow[j] * wrow[j];
                    }
                    orow[o] = acc;
                }
            });
            return out;
        },
        [has_bias](const Tensor& g, const std::vector<const Tensor*>& in, const Tensor&) {
            const Tensor& xt = *in[0];
            const Tensor& wt = *in[1];
            std::vector<Tensor> grads;
            grads.push_back(matmul_values(g, wt));  // dX = g * W
            grads.push_back(matmul_at_b(g, xt));    // dW = g^T * X
            if (has_bias) {
                const std::size_t n = g.shape[0], m = g.shape[1];
                Tensor db = Tensor::zeros({m});
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t o = 0; o < m; ++o) {
                        db.data[o] += g.data[i * m + o];
                    }
                }
                grads.push_back(std::move(db));
            }
            return grads;
        });
}

NodeId conv2d(Tape& tape, NodeId x, NodeId w, std::optional<NodeId> bias, int stride, int padding) {
    const ConvDims dims = conv_dims(tape.value(x), tape.value(w), stride, padding);
    if (bias && tape.value(*bias).shape != Shape{dims.f}) {
        throw ShapeError("conv2d: bias shape " + shape_str(tape.value(*bias).shape) +
                         " does not match filter count " + std::to_string(dims.f));
    }
    std::vector<NodeId> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    const bool has_bias = bias.has_value();
    return tape.record(
        "conv2d", std::move(inputs),
        [stride, padding, has_bias](const std::vector<const Tensor*>& in) {
            const ConvDims d = conv_dims(*in[0], *in[1], stride, padding);
            return conv_forward(*in[0], *in[1], has_bias ? in[2] : nullptr, d);
        },
        [stride, padding, has_bias](const Tensor& g, const std::vector<const Tensor*>& in,
                                    const Tensor&) {
            const Tensor& xt = *in[0];
            const Tensor& wt = *in[1];
            const ConvDims d = conv_dims(xt, wt, stride, padding);
            Tensor dx = Tensor::zeros(xt.shape);
            Tensor dw = Tensor::zeros(wt.shape);
            Tensor db = Tensor::zeros({d.f});
            for (std::size_t n = 0; n < d.n; ++n) {
                for (std::size_t f = 0; f < d.f; ++f) {
                    for (std::size_t oy = 0; oy < d.oh; ++oy) {
                        for (std::size_t ox = 0; ox < d.ow; ++ox) {
                            const double gv = g.data[((n * d.f + f) * d.oh + oy) * d.ow + ox];
                            db.data[f] += gv;
                            if (gv == 0.0) continue;
                            for (std::size_t c = 0; c < d.c; ++c) {
                                for (std::size_t ky = 0; ky < d.kh; ++ky) {
                                    const long long iy = static_cast<long long>(oy) * d.stride -
                                                         d.pad + static_cast<long long>(ky);
                                    if (iy < 0 || iy >= static_cast<long long>(d.h)) continue;
                                    for (std::size_t kx = 0; kx < d.kw; ++kx) {
                                        const long long ix = static_cast<long long>(ox) * d.stride -
                                                             d.pad + static_cast<long long>(kx);
                                        if (ix < 0 || ix >= static_cast<long long>(d.w)) continue;
                                        const std::size_t xi =
                                            ((n * d.c + c) * d.h + iy) * d.w +
                                            static_cast<std::size_t>(ix);
                                        const std::size_t wi =
                                            ((f * d.c + c) * d.kh + ky) * d.kw + kx;
                                        dx.data[xi] += gv * wt.data[wi];
                                        dw.data[wi] += gv * xt.data[xi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            std::vector<Tensor> grads;
            grads.push_back(std::move(dx));
            grads.push_back(std::move(dw));
            if (has_bias) grads.push_back(std::move(db));
            return grads;
        });
}

NodeId relu(Tape& tape, NodeId x) {
    return tape.record(
        "relu", {x},
        [](const std::vector<const Tensor*>& in) {
            Tensor out = *in[0];
            for (double& v : out.data) {
                v = v > 0.0 ? v : 0.0;
            }
            return out;
        },
        [](const Tensor& g, const std::vector<const Tensor*>& in, const Tensor&) {
            Tensor dx = g;
            for (std::size_t i = 0; i < dx.size(); ++i) {
                if (in[0]->data[i] <= 0.0) {
                    dx.data[i] = 0.0;
                }
            }
            return std::vector<Tensor>{std::move(dx)};
        });
}

NodeId batchnorm(Tape& tape, NodeId x, NodeId gamma, NodeId beta, BatchNormState& state,
                 bool training) {
    const Tensor& xv = tape.value(x);
    const std::size_t channels = bn_channels(xv);
    if (tape.value(gamma).shape != Shape{channels} || tape.value(beta).shape != Shape{channels}) {
        throw ShapeError("batchnorm: gamma/beta must have shape [" + std::to_string(channels) + "]");
    }
    if (state.running_mean.size() != channels || state.running_var.size() != channels) {
        throw ShapeError("batchnorm: running statistics do not match channel count");
    }

    const BnLayout lay = bn_layout(xv);
    const double eps = state.eps;

    // Batch statistics are computed once here and shared by forward and
    // backward via captured copies (the rule needs the same mean/var).
    Tensor mean = Tensor::zeros({lay.channels});
    Tensor var = Tensor::zeros({lay.channels});
    if (training) {
        const double count = static_cast<double>(lay.outer * lay.inner);
        if (count == 0.0) {
            throw ValueError("batchnorm: empty batch");
        }
        for (std::size_t o = 0; o < lay.outer; ++o) {
            for (std::size_t c = 0; c < lay.channels; ++c) {
                const double* base = xv.data.data() + (o * lay.channels + c) * lay.inner;
                for (std::size_t i = 0; i < lay.inner; ++i) {
                    mean.data[c] += base[i];
                }
            }
        }
        for (std::size_t c = 0; c < lay.channels; ++c) {
            mean.data[c] /= count;
        }
        for (std::size_t o = 0; o < lay.outer; ++o) {
            for (std::size_t c = 0; c < lay.channels; ++c) {
                const double* base = xv.data.data() + (o * lay.channels + c) * lay.inner;
                for (std::size_t i = 0; i < lay.inner; ++i) {
                    const double d = base[i] - mean.data[c];
                    var.data[c] += d * d;
                }
            }
        }
        for (std::size_t c = 0; c < lay.channels; ++c) {
            var.data[c] /= count;
        }
        for (std::size_t c = 0; c < lay.channels; ++c) {
            state.running_mean.data[c] =
                (1.0 - state.momentum) * state.running_mean.data[c] + state.momentum * mean.data[c];
            state.running_var.data[c] =
                (1.0 - state.momentum) * state.running_var.data[c] + state.momentum * var.data[c];
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    return tape.record(
        "batchnorm", {x, gamma, beta},
        [lay, mean, var, eps](const std::vector<const Tensor*>& in) {
            const Tensor& xt = *in[0];
            const Tensor& gm = *in[1];
            const Tensor& bt = *in[2];
            Tensor out = Tensor::zeros(xt.shape);
            for (std::size_t o = 0; o < lay.outer; ++o) {
                for (std::size_t c = 0; c < lay.channels; ++c) {
                    const double inv = 1.0 / std::sqrt(var.data[c] + eps);
                    const double* base = xt.data.data() + (o * lay.channels + c) * lay.inner;
                    double* obase = out.data.data() + (o * lay.channels + c) * lay.inner;
                    for (std::size_t i = 0; i < lay.inner; ++i) {
                        obase[i] = gm.data[c] * (base[i] - mean.data[c]) * inv + bt.data[c];
                    }
                }
            }
            return out;
        },
        [lay, mean, var, eps, training](const Tensor& g, const std::vector<const Tensor*>& in,
                                        const Tensor&) {
            const Tensor& xt = *in[0];
            const Tensor& gm = *in[1];
            const std::size_t C = lay.channels;
            const double count = static_cast<double>(lay.outer * lay.inner);
            Tensor dgamma = Tensor::zeros({C});
            Tensor dbeta = Tensor::zeros({C});
            Tensor sum_g = Tensor::zeros({C});
            Tensor sum_gx = Tensor::zeros({C});
            for (std::size_t o = 0; o < lay.outer; ++o) {
                for (std::size_t c = 0; c < C; ++c) {
                    const double inv = 1.0 / std::sqrt(var.data[c] + eps);
                    const std::size_t off = (o * C + c) * lay.inner;
                    for (std::size_t i = 0; i < lay.inner; ++i) {
                        const double xhat = (xt.data[off + i] - mean.data[c]) * inv;
                        const double gv = g.data[off + i];
                        dgamma.data[c] += gv * xhat;
                        dbeta.data[c] += gv;
                        sum_g.data[c] += gv;
                        sum_gx.data[c] += gv * xhat;
                    }
                }
            }
            Tensor dx = Tensor::zeros(xt.shape);
            for (std::size_t o = 0; o < lay.outer; ++o) {
                for (std::size_t c = 0; c < C; ++c) {
                    const double inv = 1.0 / std::sqrt(var.data[c] + eps);
                    const std::size_t off = (o * C + c) * lay.inner;
                    for (std::size_t i = 0; i < lay.inner; ++i) {
                        const double gv = g.data[off + i];
                        if (training) {
                            const double xhat = (xt.data[off + i] - mean.data[c]) * inv;
                            dx.data[off + i] = gm.data[c] * inv *
                                               (gv - sum_g.data[c] / count -
                                                xhat * sum_gx.data[c] / count);
                        } else {
                            dx.data[off + i] = gm.data[c] * inv * gv;
                        }
                    }
                }
            }
            std::vector<Tensor> grads;
            grads.push_back(std::move(dx));
            grads.push_back(std::move(dgamma));
            grads.push_back(std::move(dbeta));
            return grads;
        });
}

NodeId global_avg_pool(Tape& tape, NodeId x) {
    const Tensor& xv = tape.value(x);
    if (xv.shape.size() != 4) {
        throw ShapeError("global_avg_pool: expected rank-4 input, got " + shape_str(xv.shape));
    }
    return tape.record(
        "global_avg_pool", {x},
        [](const std::vector<const Tensor*>& in) {
            const Tensor& xt = *in[0];
            const std::size_t n = xt.shape[0], c = xt.shape[1];
            const std::size_t hw = xt.shape[2] * xt.shape[3];
            Tensor out = Tensor::zeros({n, c});
            for (std::size_t i = 0; i < n * c; ++i) {
                double acc = 0.0;
                const double* base = xt.data.data() + i * hw;
                for (std::size_t j = 0; j < hw; ++j) {
                    acc += base[j];
                }
                out.data[i] = acc / static_cast<double>(hw);
            }
            return out;
        },
        [](const Tensor& g, const std::vector<const Tensor*>& in, const Tensor&) {
            const Tensor& xt = *in[0];
            const std::size_t hw = xt.shape[2] * xt.shape[3];
            Tensor dx = Tensor::zeros(xt.shape);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = g.data[i] / static_cast<double>(hw);
                double* base = dx.data.data() + i * hw;
                for (std::size_t j = 0; j < hw; ++j) {
                    base[j] = v;
                }
            }
            return std::vector<Tensor>{std::move(dx)};
        });
}

NodeId reshape(Tape& tape, NodeId x, const Shape& shape) {
    const Tensor& xv = tape.value(x);
    if (shape_size(shape) != xv.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(xv.shape) + " as " + shape_str(shape));
    }
    const Shape from = xv.shape;
    return tape.record(
        "reshape", {x},
        [shape](const std::vector<const Tensor*>& in) {
            return Tensor(shape, in[0]->data);
        },
        [from](const Tensor& g, const std::vector<const Tensor*>&, const Tensor&) {
            return std::vector<Tensor>{Tensor(from, g.data)};
        });
}

NodeId cross_entropy(Tape& tape, NodeId logits, const std::vector<int>& labels) {
    const Tensor& lv = tape.value(logits);
    if (lv.shape.size() != 2) {
        throw ShapeError("cross_entropy: expected logits [N,K], got " + shape_str(lv.shape));
    }
    const std::size_t n = lv.shape[0], k = lv.shape[1];
    if (n == 0) {
        throw ValueError("cross_entropy: empty batch");
    }
    if (labels.size() != n) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(n));
    }
    for (int lab : labels) {
        if (lab < 0 || static_cast<std::size_t>(lab) >= k) {
            throw ValueError("cross_entropy: label " + std::to_string(lab) + " out of range [0," +
                             std::to_string(k) + ")");
        }
    }
    return tape.record(
        "cross_entropy", {logits},
        [labels](const std::vector<const Tensor*>& in) {
            const Tensor& lt = *in[0];
            const std::size_t N = lt.shape[0], K = lt.shape[1];
            double loss = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
                const double* row = lt.data.data() + i * K;
                double mx = row[0];
                for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
                double denom = 0.0;
                for (std::size_t j = 0; j < K; ++j) denom += std::exp(row[j] - mx);
                loss += std::log(denom) - (row[static_cast<std::size_t>(labels[i])] - mx);
            }
            return Tensor::scalar(loss / static_cast<double>(N));
        },
        [labels](const Tensor& g, const std::vector<const Tensor*>& in, const Tensor&) {
            const Tensor& lt = *in[0];
            const std::size_t N = lt.shape[0], K = lt.shape[1];
            const double gscale = g.data[0] / static_cast<double>(N);
            Tensor dl = Tensor::zeros(lt.shape);
            for (std::size_t i = 0; i < N; ++i) {
                const double* row = lt.data.data() + i * K;
                double mx = row[0];
                for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
                double denom = 0.0;
                for (std::size_t j = 0; j < K; ++j) denom += std::exp(row[j] - mx);
                for (std::size_t j = 0; j < K; ++j) {
                    double p = std::exp(row[j] - mx) / denom;
                    if (j == static_cast<std::size_t>(labels[i])) p -= 1.0;
                    dl.data[i * K + j] = gscale * p;
                }
            }
            return std::vector<Tensor>{std::move(dl)};
        });
}

}  // namespace bitsift::ops
