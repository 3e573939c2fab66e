#pragma once

#include <string>
#include <utility>

#include "bitsift/bitrep.hpp"

namespace bitsift {

// One layer's re-quantization outcome, emitted to the metrics stream.
struct AdjustReport {
    std::string layer_id;
    int n_before = 0;
    int n_after = 0;
    double s_before = 0.0;
    double s_after = 0.0;
    int msb_removed = 0;
    int lsb_removed = 0;
    bool carried = false;  // some code occupied bit n, so the widened plane survived
};

// Snaps the trained planes to signed integer codes:
// Round(sum pos_b 2^b - sum neg_b 2^b), |code| <= 2^(n+1)-2.
IntTensor requantize(const BitTensor& bt);

struct StripResult {
    IntTensor codes;
    double scale = 0.0;
    int bits = 0;
    int msb_removed = 0;
    int lsb_removed = 0;
};

// Precision adjustment on signed codes of working width n_orig+1: drop all-zero
// magnitude planes from the MSB down to the first occupied plane, then from the
// LSB up (each LSB drop halves the codes), and compensate the scale so the
// represented weights are unchanged: s' = s * 2^k * (2^n' - 1)/(2^n_orig - 1).
//
// The compensated scale is constructed so that the code step s'/(2^n'-1)
// equals the old step times 2^k *as a double*, which is what makes forward
// passes bitwise identical across an adjustment; this can move s' by one ulp
// relative to the textbook formula.
StripResult strip_zero_planes(const IntTensor& codes, double scale, int n_orig);

// Rebuilds exact binary sign-disjoint planes from signed codes.
BitTensor resplit(const IntTensor& codes, int bits, double scale);

// requantize + strip + resplit; the output represents exactly the same weights
// as the rounded input state.
std::pair<BitTensor, AdjustReport> adjust_layer(const BitTensor& bt, std::string layer_id = "");

// Smallest search for a scale whose correctly rounded division by denom yields
// exactly `step`. Exposed for tests.
double scale_for_step(double step, long long denom);

}  // namespace bitsift
