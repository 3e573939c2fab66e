#include "bitsift/bitrep.hpp"

#include <cmath>

#include "bitsift/error.hpp"

namespace bitsift {

namespace {

double bits_denom(int bits) {
    return static_cast<double>((1ULL << bits) - 1ULL);
}

}  // namespace

double BitTensor::weight_step() const {
    if (bits == 0) {
        return 0.0;
    }
    return scale / bits_denom(bits);
}

void BitTensor::validate(bool require_binary) const {
    if (bits < 0) {
        throw ValueError("bit tensor: negative precision");
    }
    if (scale < 0.0 || !std::isfinite(scale)) {
        throw ValueError("bit tensor: scale must be finite and non-negative");
    }
    if (pos_planes.size() != static_cast<std::size_t>(bits) ||
        neg_planes.size() != static_cast<std::size_t>(bits)) {
        throw ValueError("bit tensor: expected " + std::to_string(bits) + " planes per sign, got " +
                         std::to_string(pos_planes.size()) + "/" + std::to_string(neg_planes.size()));
    }
    for (int b = 0; b < bits; ++b) {
        if (pos_planes[b].shape != shape || neg_planes[b].shape != shape) {
            throw ShapeError("bit tensor: plane " + std::to_string(b) + " does not match shape " +
                             shape_str(shape));
        }
        for (std::size_t i = 0; i < pos_planes[b].size(); ++i) {
            const double p = pos_planes[b].data[i];
            const double q = neg_planes[b].data[i];
            if (!(p >= 0.0 && p <= 2.0) || !(q >= 0.0 && q <= 2.0)) {
                throw ValueError("bit tensor: plane value outside [0,2] at bit " + std::to_string(b));
            }
            if (require_binary) {
                if ((p != 0.0 && p != 1.0) || (q != 0.0 && q != 1.0)) {
                    throw ValueError("bit tensor: plane not binary at bit " + std::to_string(b));
                }
                if (p != 0.0 && q != 0.0) {
                    throw ValueError("bit tensor: pos and neg planes overlap at bit " +
                                     std::to_string(b));
                }
            }
        }
    }
}

long long round_ties_away(double v) {
    return std::llround(v);
}

std::pair<double, Tensor> extract_scale(const Tensor& w) {
    if (!w.all_finite()) {
        throw ValueError("extract_scale: non-finite weight entries");
    }
    double s = w.max_abs();
    if (s == 0.0) {
        s = 1.0;  // any scale represents the zero tensor; 1 avoids dividing by zero
    }
    Tensor w_s = w;
    for (double& v : w_s.data) {
        v /= s;
    }
    return {s, std::move(w_s)};
}

SignSplit sign_split(const Tensor& w_s) {
    for (double v : w_s.data) {
        if (std::fabs(v) > 1.0) {
            throw ValueError("sign_split: |element| exceeds 1");
        }
    }
    SignSplit split{Tensor::zeros(w_s.shape), Tensor::zeros(w_s.shape)};
    for (std::size_t i = 0; i < w_s.size(); ++i) {
        const double v = w_s.data[i];
        if (v >= 0.0) {
            split.pos.data[i] = v;
        } else {
            split.neg.data[i] = -v;
        }
    }
    return split;
}

IntTensor quantize_uniform(const Tensor& x, int bits) {
    if (bits < 1) {
        throw ValueError("quantize_uniform: need at least 1 bit");
    }
    const double levels = bits_denom(bits);
    IntTensor codes;
    codes.shape = x.shape;
    codes.data.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x.data[i];
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ValueError("quantize_uniform: element outside [0,1]");
        }
        codes.data[i] = round_ties_away(v * levels);
    }
    return codes;
}

std::vector<Tensor> decompose_bits(const IntTensor& codes, int bits) {
    if (bits < 0) {
        throw ValueError("decompose_bits: negative precision");
    }
    const long long max_code = static_cast<long long>((1ULL << bits)) - 1;
    for (long long c : codes.data) {
        if (c < 0 || c > max_code) {
            throw ValueError("decompose_bits: code " + std::to_string(c) + " outside [0," +
                             std::to_string(max_code) + "]");
        }
    }
    std::vector<Tensor> planes;
    planes.reserve(static_cast<std::size_t>(bits));
    for (int b = 0; b < bits; ++b) {
        Tensor plane = Tensor::zeros(codes.shape);
        for (std::size_t i = 0; i < codes.data.size(); ++i) {
            plane.data[i] = static_cast<double>((codes.data[i] >> b) & 1LL);
        }
        planes.push_back(std::move(plane));
    }
    return planes;
}

BitTensor to_bit_representation(const Tensor& w, int bits) {
    if (bits < 1) {
        throw ValueError("to_bit_representation: need at least 1 bit");
    }
    auto [s, w_s] = extract_scale(w);
    const SignSplit split = sign_split(w_s);
    const IntTensor pos_codes = quantize_uniform(split.pos, bits);
    const IntTensor neg_codes = quantize_uniform(split.neg, bits);

    BitTensor bt;
    bt.shape = w.shape;
    bt.bits = bits;
    bt.scale = s;
    bt.pos_planes = decompose_bits(pos_codes, bits);
    bt.neg_planes = decompose_bits(neg_codes, bits);
    return bt;
}

Tensor represented_weights(const BitTensor& bt) {
    Tensor out = Tensor::zeros(bt.shape);
    if (bt.bits == 0) {
        return out;
    }
    const double step = bt.weight_step();
    for (std::size_t i = 0; i < out.size(); ++i) {
        double numer = 0.0;
        for (int b = 0; b < bt.bits; ++b) {
            numer += std::ldexp(bt.pos_planes[b].data[i] - bt.neg_planes[b].data[i], b);
        }
        out.data[i] = step * numer;
    }
    return out;
}

}  // namespace bitsift
