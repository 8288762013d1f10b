#include "gnnmoe/moe_blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace gnnmoe {

LayerNorm LayerNorm::init(std::ptrdiff_t width) {
  return {Tensor(Matrix::Ones(1, width), true), Tensor::zeros(1, width, true)};
}

SoftGate SoftGate::init(std::ptrdiff_t width, std::ptrdiff_t gate_hidden, Rng& rng) {
  return {Tensor(glorot_uniform(width, gate_hidden, rng), true), Tensor(glorot_uniform(gate_hidden, 4, rng), true)};
}

Tensor soft_gate(const SoftGate& gate, const Tensor& h) {
  if (h.cols() != gate.w1.rows()) {
    throw DimensionError("soft_gate: input width " + std::to_string(h.cols()) + ", gate expects " +
                         std::to_string(gate.w1.rows()));
  }
  return softmax_rows(matmul(relu(matmul(h, gate.w1)), gate.w2));
}

PtBlock PtBlock::init(std::ptrdiff_t width, std::ptrdiff_t gate_hidden, bool with_attention, Rng& rng) {
  PtBlock b;
  b.gate = SoftGate::init(width, gate_hidden, rng);
  for (ExpertKind k : kAllExperts) b.experts[static_cast<std::size_t>(k)] = Expert::init(k, width, rng);
  b.alpha_raw = Tensor::scalar(0.0, true);
  b.ln = LayerNorm::init(width);
  if (with_attention) {
    b.attention.source = Tensor(glorot_uniform(width, 1, rng), true);
    b.attention.target = Tensor(glorot_uniform(width, 1, rng), true);
  }
  return b;
}

double PtBlock::alpha() const { return 1.0 / (1.0 + std::exp(-alpha_raw.item())); }

Tensor dropout(const Tensor& h, double rate, bool training, Rng* rng) {
  if (!training || rate <= 0.0) return h;
  if (rate >= 1.0) throw ContractError("dropout: rate must be in [0, 1)");
  if (rng == nullptr) throw ContractError("dropout: training mode needs a random stream");
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  Matrix mask(h.rows(), h.cols());
  for (std::ptrdiff_t i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? scale : 0.0;
  return apply_mask(h, mask);
}

namespace {

Tensor residual_mix(const Tensor& raw, const Tensor& h0, const Tensor& h) {
  const Tensor weight = sigmoid(raw);
  return add(scale(h0, weight), scale(h, affine(weight, -1.0, 1.0)));
}

}  // namespace

Tensor pt_block_forward(const PtBlock& block, PropKind kind, const Graph& g, const Tensor& h_prev,
                        const Tensor& h0, const BlockOptions& options, Tensor* gate_weights) {
  if (h_prev.rows() != g.num_nodes() || h0.rows() != h_prev.rows() || h0.cols() != h_prev.cols()) {
    throw DimensionError("pt_block_forward: h_prev " + std::to_string(h_prev.rows()) + "x" +
                         std::to_string(h_prev.cols()) + ", h0 " + std::to_string(h0.rows()) + "x" +
                         std::to_string(h0.cols()) + ", graph " + std::to_string(g.num_nodes()) + " nodes");
  }
  const Propagation prop{kind, Attention{block.attention.source, block.attention.target, options.attention_slope}};
  const double expert_dropout = options.dropout_site == DropoutSite::Experts ? options.dropout : 0.0;

  Tensor mixed;
  if (options.forced_expert) {
    const auto idx = static_cast<std::size_t>(*options.forced_expert);
    mixed = dropout(apply_expert(block.experts[idx], prop, g, h_prev), expert_dropout, options.training, options.rng);
    if (gate_weights != nullptr) {
      Matrix w = Matrix::Zero(g.num_nodes(), 4);
      w.col(static_cast<std::ptrdiff_t>(idx)).setOnes();
      *gate_weights = Tensor(std::move(w));
    }
  } else {
    const Tensor weights = soft_gate(block.gate, h_prev);
    for (ExpertKind k : kAllExperts) {
      const auto idx = static_cast<std::size_t>(k);
      Tensor out = dropout(apply_expert(block.experts[idx], prop, g, h_prev), expert_dropout, options.training,
                           options.rng);
      Tensor term = mul_column(out, weights, static_cast<std::ptrdiff_t>(idx));
      mixed = mixed.defined() ? add(mixed, term) : term;
    }
    if (gate_weights != nullptr) *gate_weights = weights;
  }

  Tensor pre_norm = options.ablate_residual ? mixed : residual_mix(block.alpha_raw, h0, mixed);
  Tensor out = block.ln(pre_norm, options.ln_eps);
  if (options.dropout_site == DropoutSite::BlockOutput) {
    out = dropout(out, options.dropout, options.training, options.rng);
  }
  return out;
}

const char* to_string(GluKind kind) {
  switch (kind) {
    case GluKind::SwishGlu:
      return "SwishGLU";
    case GluKind::GeGlu:
      return "GEGLU";
    case GluKind::ReGlu:
      return "REGLU";
  }
  return "?";
}

ActivationKind glu_activation(GluKind kind) {
  switch (kind) {
    case GluKind::SwishGlu:
      return ActivationKind::Swish;
    case GluKind::GeGlu:
      return ActivationKind::Gelu;
    case GluKind::ReGlu:
      return ActivationKind::Relu;
  }
  return ActivationKind::Relu;
}

GluExpert GluExpert::init(GluKind kind, std::ptrdiff_t width, Rng& rng) {
  GluExpert e;
  e.kind = kind;
  e.w3 = Tensor(glorot_uniform(width, width, rng), true);
  e.w4 = Tensor(glorot_uniform(width, width, rng), true);
  e.w5 = Tensor(glorot_uniform(width, width, rng), true);
  return e;
}

Tensor glu_expert(const GluExpert& e, const Tensor& h) {
  if (h.cols() != e.w3.rows()) {
    throw DimensionError("glu_expert: input width " + std::to_string(h.cols()) + ", expert expects " +
                         std::to_string(e.w3.rows()));
  }
  const Tensor gate = activation(matmul(h, e.w3), glu_activation(e.kind));
  return matmul(mul(gate, matmul(h, e.w4)), e.w5);
}

EnhancedFfn EnhancedFfn::init(std::ptrdiff_t width, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw ContractError("EnhancedFfn: temperature must be positive");
  EnhancedFfn f;
  f.gate_weight = Tensor(glorot_uniform(width, 3, rng), true);
  for (GluKind k : kAllGlu) f.experts[static_cast<std::size_t>(k)] = GluExpert::init(k, width, rng);
  f.beta_raw = Tensor::scalar(0.0, true);
  f.ln = LayerNorm::init(width);
  f.temperature = temperature;
  return f;
}

double EnhancedFfn::beta() const { return 1.0 / (1.0 + std::exp(-beta_raw.item())); }

double sample_gumbel(Rng& rng) {
  const double u = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  return -std::log(-std::log(u));
}

std::ptrdiff_t argmax_row(const Matrix& row) {
  std::ptrdiff_t best = 0;
  for (std::ptrdiff_t j = 1; j < row.size(); ++j) {
    if (row(0, j) > row(0, best)) best = j;
  }
  return best;
}

HardGateResult hard_gate(const EnhancedFfn& ffn, const Tensor& h, Rng* rng, bool training,
                         const HardGateControl* control) {
  if (!(ffn.temperature > 0.0)) throw ContractError("hard_gate: temperature must be positive");
  HardGateResult r;
  r.logits = matmul(mean_rows(h), ffn.gate_weight);
  if (!training) {
    r.index = argmax_row(r.logits.value());
    Matrix onehot = Matrix::Zero(1, 3);
    onehot(0, r.index) = 1.0;
    r.mask = Tensor(std::move(onehot));
    return r;
  }

  if (control != nullptr && control->noise) {
    r.noise = *control->noise;
  } else {
    if (rng == nullptr) throw ContractError("hard_gate: training mode needs a random stream");
    for (double& g : r.noise) g = sample_gumbel(*rng);
  }
  Matrix noise(1, 3);
  for (std::ptrdiff_t j = 0; j < 3; ++j) noise(0, j) = r.noise[static_cast<std::size_t>(j)];
  r.soft = softmax_rows(affine(add(r.logits, Tensor(std::move(noise))), 1.0 / ffn.temperature));
  if (control != nullptr && control->anchor_index && control->anchor_soft) {
    r.index = *control->anchor_index;
    r.mask = straight_through_anchored(r.soft, r.index, *control->anchor_soft);
  } else {
    r.index = argmax_row(r.soft.value());
    r.mask = straight_through(r.soft, r.index);
  }
  return r;
}

Tensor ffn_forward(const EnhancedFfn& ffn, const Tensor& h, const Tensor& h0, const FfnOptions& options,
                   HardGateResult* selection) {
  if (h.cols() != ffn.gate_weight.rows() || h0.rows() != h.rows() || h0.cols() != h.cols()) {
    throw DimensionError("ffn_forward: shape mismatch");
  }
  HardGateResult gate = hard_gate(ffn, h, options.rng, options.training, options.control);
  Tensor z;
  const bool anchored = options.control != nullptr && options.control->anchor_soft.has_value();
  if (gate.mask.requires_grad() || anchored) {
    // Every expert is weighted by its mask entry so the straight-through
    // gradient reaches all three logits; the forward value equals the selected expert's output.
    // The anchored surrogate takes this path even without a tape so finite differences see it.
    for (GluKind k : kAllGlu) {
      const auto j = static_cast<std::ptrdiff_t>(k);
      Tensor term = scale(glu_expert(ffn.experts[static_cast<std::size_t>(j)], h), element(gate.mask, 0, j));
      z = z.defined() ? add(z, term) : term;
    }
  } else {
    z = glu_expert(ffn.experts[static_cast<std::size_t>(gate.index)], h);
  }
  if (!options.ablate_residual) z = residual_mix(ffn.beta_raw, h0, z);
  Tensor out = ffn.ln(z, options.ln_eps);
  if (selection != nullptr) *selection = std::move(gate);
  return out;
}

}  // namespace gnnmoe
