#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bitsift/bitrep.hpp"
#include "bitsift/ops.hpp"
#include "bitsift/regularizer.hpp"
#include "bitsift/rng.hpp"
#include "bitsift/ste.hpp"

namespace bitsift {

enum class LayerKind { linear, conv2d };

// Weight storage of the whole model:
//   dense      - floating-point master weights (pretraining, scratch init)
//   bit_planes - BitTensor state trained with the bit-level STE
//   dorefa     - floating-point masters quantized per step at fixed precision
enum class ModelMode { dense, bit_planes, dorefa };

struct QuantLayer {
    std::string layer_id;
    LayerKind kind = LayerKind::linear;
    Shape weight_shape;
    int stride = 1;
    int padding = 0;
    bool has_bias = true;

    Tensor weights;      // dense / dorefa master
    BitTensor bit_state; // bit_planes mode
    int dorefa_bits = 0; // dorefa mode; 0 marks a skipped layer

    std::optional<Tensor> bias;
    int act_bits = 0;    // input-activation precision, for reporting

    std::size_t param_count() const { return shape_size(weight_shape); }
};

struct BatchNormLayer {
    std::string id;
    Tensor gamma;
    Tensor beta;
    ops::BatchNormState state;
};

// One quantized-activation site (a nonlinearity in the quantized model).
struct ActSite {
    std::string id;
    ActQuantizer q;
};

struct ModelSpec {
    std::string arch = "mlp";  // mlp | cnn | resnet
    Shape input_shape = {1, 28, 28};
    std::size_t num_classes = 10;
    std::vector<std::size_t> hidden = {128};        // mlp hidden widths (may be empty)
    std::vector<std::size_t> channels = {8, 16, 32};// cnn conv widths / resnet stage widths
    std::size_t blocks_per_stage = 2;               // resnet
    int act_bits = 4;
    int act_bits_first = 8;
    int act_bits_last = 8;
    int pact_below_bits = 4;   // PACT when site bits fall below this, ReLU6 otherwise
    double pact_clip_init = 6.0;
    double clip_weight_decay = 1e-4;
    int init_bits = 8;         // n0

    void validate() const;
};

struct Model {
    ModelSpec spec;
    ModelMode mode = ModelMode::dense;
    std::vector<QuantLayer> layers;
    std::vector<BatchNormLayer> bns;
    std::vector<ActSite> act_sites;
};

inline constexpr NodeId kNoNode = static_cast<NodeId>(-1);

// Tape leaf ids of one layer's trainables for the step that built the tape.
struct LayerTapeIds {
    std::vector<NodeId> pos;
    std::vector<NodeId> neg;
    NodeId weight = kNoNode;
    NodeId bias = kNoNode;
};

struct ForwardPass {
    NodeId logits = 0;
    std::vector<LayerTapeIds> layer_ids;
    std::vector<std::pair<NodeId, NodeId>> bn_ids;  // (gamma, beta) per batchnorm
    std::vector<NodeId> clip_ids;                   // per act site; kNoNode unless PACT
};

// Fan-in-scaled normal init for weights, zero biases, unit batchnorm.
Model build_model(const ModelSpec& spec, Rng& rng);

// Converts every layer's dense weights to the bit representation with n0 bits.
// Biases and batchnorm stay in floating point.
void attach_bsq(Model& model, int n0);

// Switches to fixed-scheme DoReFa training. Masters come from the current
// weights (dense source) or the represented bit state (bit_planes source).
void to_dorefa(Model& model, const std::vector<int>& per_layer_bits);

ForwardPass model_forward(Model& model, Tape& tape, const Tensor& batch, bool training);

// Eval-mode logits on a private tape; no state is touched.
Tensor model_logits(Model& model, const Tensor& batch);

std::vector<LayerStats> layer_stats(const Model& model);
std::size_t quantizable_param_count(const Model& model);
std::size_t auxiliary_param_count(const Model& model);  // biases + batchnorm affine
double model_bits_per_param(const Model& model);

}  // namespace bitsift
