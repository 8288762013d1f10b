#pragma once

#include "gnnmoe/experts.hpp"

#include <array>
#include <optional>

namespace gnnmoe {

struct LayerNorm {
  Tensor gain;  // 1 x d', ones at init
  Tensor bias;  // 1 x d', zeros at init

  static LayerNorm init(std::ptrdiff_t width);
  Tensor operator()(const Tensor& h, double eps) const { return layernorm_rows(h, gain, bias, eps); }
};

// Per-node expert allocation: softmax(relu(h W1) W2), one simplex row per node.
struct SoftGate {
  Tensor w1;  // d' x d_g
  Tensor w2;  // d_g x 4

  static SoftGate init(std::ptrdiff_t width, std::ptrdiff_t gate_hidden, Rng& rng);
};

Tensor soft_gate(const SoftGate& gate, const Tensor& h);

// Soft-gated mixture of the four message-passing experts, followed by the
// adaptive initial residual and layer normalization.
struct PtBlock {
  SoftGate gate;
  std::array<Expert, 4> experts;  // indexed by ExpertKind
  Tensor alpha_raw;               // 1 x 1, alpha = sigmoid(alpha_raw)
  LayerNorm ln;
  Attention attention;  // defined only for GatLike models

  static PtBlock init(std::ptrdiff_t width, std::ptrdiff_t gate_hidden, bool with_attention, Rng& rng);
  double alpha() const;
};

enum class DropoutSite { Experts, BlockOutput, None };

struct BlockOptions {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
  double dropout = 0.0;
  DropoutSite dropout_site = DropoutSite::Experts;
  std::optional<ExpertKind> forced_expert;
  bool ablate_residual = false;
  double ln_eps = 1e-5;
  double attention_slope = 0.2;
};

// Inverted dropout; identity outside training or at rate 0.
Tensor dropout(const Tensor& h, double rate, bool training, Rng* rng);

// `gate_weights`, when given, receives the |V| x 4 allocation used.
Tensor pt_block_forward(const PtBlock& block, PropKind kind, const Graph& g, const Tensor& h_prev,
                        const Tensor& h0, const BlockOptions& options, Tensor* gate_weights = nullptr);

enum class GluKind { SwishGlu = 0, GeGlu = 1, ReGlu = 2 };
inline constexpr std::array<GluKind, 3> kAllGlu{GluKind::SwishGlu, GluKind::GeGlu, GluKind::ReGlu};
const char* to_string(GluKind kind);
ActivationKind glu_activation(GluKind kind);

// (sigma(h W3) * h W4) W5, bias-free.
struct GluExpert {
  GluKind kind = GluKind::SwishGlu;
  Tensor w3, w4, w5;  // d' x d'

  static GluExpert init(GluKind kind, std::ptrdiff_t width, Rng& rng);
};

Tensor glu_expert(const GluExpert& e, const Tensor& h);

struct EnhancedFfn {
  Tensor gate_weight;  // d' x 3
  std::array<GluExpert, 3> experts;
  Tensor beta_raw;  // 1 x 1, beta = sigmoid(beta_raw)
  LayerNorm ln;
  double temperature = 1.0;

  static EnhancedFfn init(std::ptrdiff_t width, double temperature, Rng& rng);
  double beta() const;
};

// Standard Gumbel(0, 1) draw from a 53-bit uniform in (0, 1).
double sample_gumbel(Rng& rng);

// Index of the largest entry; ties go to the lowest index.
std::ptrdiff_t argmax_row(const Matrix& row);

// Fixes the stochastic parts of the hard gate, for verification.
struct HardGateControl {
  // Used instead of drawing from the stream in training mode.
  std::optional<std::array<double, 3>> noise;
  // Straight-through surrogate: mask = onehot(anchor_index) + soft - anchor_soft.
  std::optional<std::ptrdiff_t> anchor_index;
  std::optional<Matrix> anchor_soft;
};

struct HardGateResult {
  std::ptrdiff_t index = 0;
  Tensor logits;  // 1 x 3, pooled h times the gate weight
  Tensor soft;    // 1 x 3, softmax((logits + noise) / tau); undefined in evaluation
  Tensor mask;    // 1 x 3, one-hot forward value
  std::array<double, 3> noise{};
};

// Mean-pools h over nodes and picks one GLU expert for the whole graph.
// Training: straight-through Gumbel-Softmax; evaluation: argmax of logits.
HardGateResult hard_gate(const EnhancedFfn& ffn, const Tensor& h, Rng* rng, bool training,
                         const HardGateControl* control = nullptr);

struct FfnOptions {
  bool training = false;
  Rng* rng = nullptr;
  bool ablate_residual = false;
  double ln_eps = 1e-5;
  const HardGateControl* control = nullptr;
};

Tensor ffn_forward(const EnhancedFfn& ffn, const Tensor& h, const Tensor& h0, const FfnOptions& options,
                   HardGateResult* selection = nullptr);

}  // namespace gnnmoe
