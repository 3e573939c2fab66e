#pragma once

#include <utility>
#include <vector>

#include "bitsift/tensor.hpp"

namespace bitsift {

// Positive / negative magnitude halves of a scaled weight tensor.
// pos - neg reconstructs the input; the two never overlap.
struct SignSplit {
    Tensor pos;
    Tensor neg;
};

// Bit-level weight state of one layer: `bits` planes per sign, LSB first
// (plane b carries coefficient 2^b), plus the layer scaling factor.
//
// Freshly converted state is exactly binary and sign-disjoint; during training
// the planes drift continuously inside [0,2].
struct BitTensor {
    Shape shape;
    int bits = 0;       // n; 0 means the layer encodes all-zero weights
    double scale = 1.0; // s
    std::vector<Tensor> pos_planes;
    std::vector<Tensor> neg_planes;

    std::size_t size() const { return shape_size(shape); }

    // Value of one integer code unit, s/(2^n-1). This single division is the
    // only place the scale meets the code grid; precision adjustment moves it
    // by exact powers of two, which is what keeps the forward pass bitwise
    // stable across adjustments.
    double weight_step() const;

    // Shape/range checks. With require_binary also demands {0,1} planes and
    // sign-disjointness (the fresh-state invariants).
    void validate(bool require_binary = false) const;
};

// Shared rounding rule for every quantizer: ties round away from zero.
long long round_ties_away(double v);

// s = max|W| (1 for the all-zero tensor), W_s = W/s.
std::pair<double, Tensor> extract_scale(const Tensor& w);

// pos = max(W_s,0), neg = max(-W_s,0); zeros land on the pos side.
SignSplit sign_split(const Tensor& w_s);

// codes = Round(x*(2^n-1)) for x in [0,1].
IntTensor quantize_uniform(const Tensor& x, int bits);

// plane b = bit b of each code, as {0,1} reals.
std::vector<Tensor> decompose_bits(const IntTensor& codes, int bits);

// Full conversion pipeline: scaling, sign split, uniform quantization of each
// half, binary decomposition.
BitTensor to_bit_representation(const Tensor& w, int bits);

// weight_step * sum_b (pos_b - neg_b) 2^b, without rounding: the exact real
// value the bit state encodes.
Tensor represented_weights(const BitTensor& bt);

}  // namespace bitsift
