#include "bitsift/precision_adjust.hpp"

#include <bit>
#include <cmath>
#include <limits>

#include "bitsift/error.hpp"
#include "bitsift/ste.hpp"

namespace bitsift {

IntTensor requantize(const BitTensor& bt) {
    bt.validate();
    const Tensor numer = ste_round_numerator(bt);
    IntTensor codes;
    codes.shape = bt.shape;
    codes.data.resize(numer.size());
    for (std::size_t i = 0; i < numer.size(); ++i) {
        codes.data[i] = static_cast<long long>(numer.data[i]);
    }
    return codes;
}

double scale_for_step(double step, long long denom) {
    if (step == 0.0) {
        return 0.0;
    }
    double s = step * static_cast<double>(denom);
    // Correctly rounded division moves by at most one output ulp per input
    // ulp, so walking s settles on an exact preimage within a few steps.
    for (int iter = 0; iter < 64; ++iter) {
        const double q = s / static_cast<double>(denom);
        if (q == step) {
            return s;
        }
        s = std::nextafter(s, q < step ? std::numeric_limits<double>::infinity()
                                       : -std::numeric_limits<double>::infinity());
    }
    throw ValueError("scale_for_step: no scale reproduces the requested step");
}

StripResult strip_zero_planes(const IntTensor& codes, double scale, int n_orig) {
    if (n_orig < 0 || n_orig > 32) {
        throw ValueError("strip_zero_planes: precision outside supported range");
    }
    if (scale < 0.0 || !std::isfinite(scale)) {
        throw ValueError("strip_zero_planes: scale must be finite and non-negative");
    }
    const long long limit = (1LL << (n_orig + 1));
    unsigned long long occupied = 0;
    for (long long c : codes.data) {
        const long long mag = c < 0 ? -c : c;
        if (mag >= limit) {
            throw ValueError("strip_zero_planes: |code| " + std::to_string(mag) +
                             " exceeds working width " + std::to_string(n_orig + 1));
        }
        occupied |= static_cast<unsigned long long>(mag);
    }

    StripResult res;
    if (occupied == 0) {
        // Skipped layer: every weight is zero, precision collapses to 0 bits.
        res.codes = codes;
        res.scale = scale;
        res.bits = 0;
        res.msb_removed = n_orig + 1;
        res.lsb_removed = 0;
        return res;
    }

    if (n_orig == 0) {
        // A 0-bit layer encodes only zeros; nonzero codes have no scale to inherit.
        throw ValueError("strip_zero_planes: nonzero codes with no source planes");
    }

    const int width = std::bit_width(occupied);
    const int shift = std::countr_zero(occupied);
    res.msb_removed = (n_orig + 1) - width;
    res.lsb_removed = shift;
    res.bits = width - shift;

    res.codes.shape = codes.shape;
    res.codes.data.resize(codes.data.size());
    const long long div = 1LL << shift;
    for (std::size_t i = 0; i < codes.data.size(); ++i) {
        res.codes.data[i] = codes.data[i] / div;  // exact: low planes are empty
    }

    const double step_before = (n_orig == 0)
                                   ? 0.0
                                   : scale / static_cast<double>((1ULL << n_orig) - 1ULL);
    const double step_after = std::ldexp(step_before, shift);
    res.scale = scale_for_step(step_after, static_cast<long long>((1ULL << res.bits) - 1ULL));
    return res;
}

BitTensor resplit(const IntTensor& codes, int bits, double scale) {
    if (bits < 0 || bits > 32) {
        throw ValueError("resplit: precision outside supported range");
    }
    const long long max_code = static_cast<long long>((1ULL << bits)) - 1;
    BitTensor bt;
    bt.shape = codes.shape;
    bt.bits = bits;
    bt.scale = scale;
    for (int b = 0; b < bits; ++b) {
        bt.pos_planes.push_back(Tensor::zeros(codes.shape));
        bt.neg_planes.push_back(Tensor::zeros(codes.shape));
    }
    for (std::size_t i = 0; i < codes.data.size(); ++i) {
        const long long c = codes.data[i];
        const long long mag = c < 0 ? -c : c;
        if (mag > max_code) {
            throw ValueError("resplit: |code| " + std::to_string(mag) + " exceeds " +
                             std::to_string(bits) + "-bit range");
        }
        auto& planes = c < 0 ? bt.neg_planes : bt.pos_planes;
        for (int b = 0; b < bits; ++b) {
            planes[b].data[i] = static_cast<double>((mag >> b) & 1LL);
        }
    }
    return bt;
}

std::pair<BitTensor, AdjustReport> adjust_layer(const BitTensor& bt, std::string layer_id) {
    const IntTensor codes = requantize(bt);
    const StripResult stripped = strip_zero_planes(codes, bt.scale, bt.bits);
    BitTensor adjusted = resplit(stripped.codes, stripped.bits, stripped.scale);

    AdjustReport report;
    report.layer_id = std::move(layer_id);
    report.n_before = bt.bits;
    report.n_after = stripped.bits;
    report.s_before = bt.scale;
    report.s_after = stripped.scale;
    report.msb_removed = stripped.msb_removed;
    report.lsb_removed = stripped.lsb_removed;
    report.carried = stripped.bits > 0 && stripped.msb_removed == 0;
    return {std::move(adjusted), report};
}

}  // namespace bitsift
