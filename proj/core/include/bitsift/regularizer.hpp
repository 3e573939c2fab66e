#pragma once

#include <string>
#include <vector>

#include "bitsift/bitrep.hpp"

namespace bitsift {

// Per-layer size/precision snapshot feeding the reweigh coefficients and the
// compression metrics. param_count excludes biases and batchnorm parameters
// (they are never quantized and are reported separately).
struct LayerStats {
    std::string layer_id;
    std::size_t param_count = 0;
    int precision = 0;
};

struct LossBreakdown {
    double ce = 0.0;
    std::vector<double> per_layer_bgl;
    std::vector<double> coefficients;
    double alpha = 0.0;
    double total = 0.0;
};

// Bit-level group Lasso of one layer: sum over bits of the Euclidean norm of
// the concatenated pos/neg planes.
double bit_group_lasso(const BitTensor& bt);

// Subgradient of bit_group_lasso with respect to every plane entry:
// entry / plane_norm, or 0 for an all-zero plane.
struct PlaneGrads {
    std::vector<Tensor> pos;
    std::vector<Tensor> neg;
};
PlaneGrads bgl_subgradient(const BitTensor& bt);

// Memory-consumption-aware coefficients: param_count_l * precision_l divided
// by the total parameter count over all layers.
std::vector<double> reweigh_coefficients(const std::vector<LayerStats>& stats);

// Assembles the training objective ce + alpha * sum coeff_l * bgl_l.
LossBreakdown total_loss(double ce, const std::vector<LayerStats>& stats,
                         const std::vector<double>& bgls, double alpha);
LossBreakdown total_loss_with_coefficients(double ce, const std::vector<double>& coefficients,
                                           const std::vector<double>& bgls, double alpha);

}  // namespace bitsift
