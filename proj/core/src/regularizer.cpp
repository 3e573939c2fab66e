#include "bitsift/regularizer.hpp"

#include <cmath>

#include "bitsift/error.hpp"

namespace bitsift {

namespace {

double plane_pair_norm(const Tensor& pos, const Tensor& neg) {
    double sq = 0.0;
    for (double v : pos.data) sq += v * v;
    for (double v : neg.data) sq += v * v;
    return std::sqrt(sq);
}

}  // namespace

double bit_group_lasso(const BitTensor& bt) {
    double total = 0.0;
    for (int b = 0; b < bt.bits; ++b) {
        total += plane_pair_norm(bt.pos_planes[b], bt.neg_planes[b]);
    }
    return total;
}

PlaneGrads bgl_subgradient(const BitTensor& bt) {
    PlaneGrads grads;
    grads.pos.reserve(static_cast<std::size_t>(bt.bits));
    grads.neg.reserve(static_cast<std::size_t>(bt.bits));
    for (int b = 0; b < bt.bits; ++b) {
        const double r = plane_pair_norm(bt.pos_planes[b], bt.neg_planes[b]);
        if (r > 0.0) {
            grads.pos.push_back(scaled(bt.pos_planes[b], 1.0 / r));
            grads.neg.push_back(scaled(bt.neg_planes[b], 1.0 / r));
        } else {
            // Subgradient choice at the origin: keep sparse planes at zero.
            grads.pos.push_back(Tensor::zeros(bt.shape));
            grads.neg.push_back(Tensor::zeros(bt.shape));
        }
    }
    return grads;
}

std::vector<double> reweigh_coefficients(const std::vector<LayerStats>& stats) {
    if (stats.empty()) {
        throw ValueError("reweigh_coefficients: no layers");
    }
    double total_params = 0.0;
    for (const LayerStats& s : stats) {
        if (s.param_count == 0) {
            throw ValueError("reweigh_coefficients: layer " + s.layer_id + " has no parameters");
        }
        if (s.precision < 0) {
            throw ValueError("reweigh_coefficients: layer " + s.layer_id + " has negative precision");
        }
        total_params += static_cast<double>(s.param_count);
    }
    std::vector<double> coeffs;
    coeffs.reserve(stats.size());
    for (const LayerStats& s : stats) {
        coeffs.push_back(static_cast<double>(s.param_count) * static_cast<double>(s.precision) /
                         total_params);
    }
    return coeffs;
}

LossBreakdown total_loss(double ce, const std::vector<LayerStats>& stats,
                         const std::vector<double>& bgls, double alpha) {
    return total_loss_with_coefficients(ce, reweigh_coefficients(stats), bgls, alpha);
}

LossBreakdown total_loss_with_coefficients(double ce, const std::vector<double>& coefficients,
                                           const std::vector<double>& bgls, double alpha) {
    if (coefficients.size() != bgls.size()) {
        throw ValueError("total_loss: " + std::to_string(coefficients.size()) +
                         " coefficients for " + std::to_string(bgls.size()) + " B_GL values");
    }
    LossBreakdown breakdown;
    breakdown.ce = ce;
    breakdown.per_layer_bgl = bgls;
    breakdown.coefficients = coefficients;
    breakdown.alpha = alpha;
    double reg = 0.0;
    for (std::size_t l = 0; l < bgls.size(); ++l) {
        if (bgls[l] < 0.0) {
            throw ValueError("total_loss: negative B_GL value");
        }
        reg += coefficients[l] * bgls[l];
    }
    breakdown.total = ce + alpha * reg;
    return breakdown;
}

}  // namespace bitsift
