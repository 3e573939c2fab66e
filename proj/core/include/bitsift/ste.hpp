#pragma once

#include "bitsift/autograd.hpp"
#include "bitsift/bitrep.hpp"

namespace bitsift {

enum class ActKind { relu6_uniform, pact };

// Activation quantizer attached to one activation site. The PACT clip level is
// trainable and owned by the training loop; everything else is fixed config.
struct ActQuantizer {
    ActKind kind = ActKind::relu6_uniform;
    int bits = 4;                    // n_act
    double clip_level = 6.0;         // PACT only
    double clip_weight_decay = 1e-4; // PACT only
};

// Round(sum_b (pos_b - neg_b) 2^b) per element, ties away from zero.
Tensor ste_round_numerator(const BitTensor& bt);

// Eq-3 forward: W_q = numerator / (2^n - 1). The caller applies the scale.
Tensor bit_ste_forward(const BitTensor& bt);

// Eq-3 backward: (2^b / (2^n - 1)) * upstream, exactly (power-of-two scaling
// followed by one correctly rounded division). The pos plane takes this value,
// the neg plane its negation.
Tensor bit_ste_backward(const Tensor& grad_wq, int bit, int bits);

// The effective weights the model consumes, s*W_q evaluated as
// weight_step * numerator. Equals represented_weights exactly when the planes
// are binary and disjoint.
Tensor ste_effective_weights(const BitTensor& bt);

// Eq-1 magnitude path: Round(w*(2^n-1))/(2^n-1) on [0,1]; out-of-range input
// is clamped first. bits==0 returns zeros.
Tensor dorefa_ste(const Tensor& w, int bits);

// Tape node producing the layer's effective weights from its plane leaves
// (pos_leaves then neg_leaves, LSB first). Backward scales the upstream by s
// and applies bit_ste_backward per plane. Requires bt.bits >= 1.
NodeId bit_ste_weight_node(Tape& tape, const BitTensor& bt, const std::vector<NodeId>& pos_leaves,
                           const std::vector<NodeId>& neg_leaves);

// Tape node for DoReFa finetuning: per-step dynamic scale s_t = max|w|,
// quantized magnitude times sign, gradient passed straight through.
NodeId dorefa_weight_node(Tape& tape, NodeId w, int bits);

// clamp to [0,6], then uniform quantization of the clamped value; gradient is
// identity strictly inside (0,6) and zero outside.
NodeId act_quant_relu6_node(Tape& tape, NodeId x, int bits);
Tensor act_quant_relu6(const Tensor& x, int bits);

// PACT: clamp to [0,clip], quantize on the clip range. clip is a rank-0 leaf;
// it collects the upstream gradient over elements with x >= clip.
NodeId act_quant_pact_node(Tape& tape, NodeId x, NodeId clip, int bits);
Tensor act_quant_pact(const Tensor& x, double clip_level, int bits);

}  // namespace bitsift
