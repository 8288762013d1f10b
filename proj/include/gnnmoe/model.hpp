#pragma once

#include "gnnmoe/moe_blocks.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gnnmoe {

struct GnnMoeConfig {
  std::ptrdiff_t hidden_dim = 64;
  int num_blocks = 2;
  PropKind prop_kind = PropKind::GcnLike;
  double dropout = 0.1;
  DropoutSite dropout_site = DropoutSite::Experts;
  double tau = 1.0;
  bool ablate_ffn = false;
  bool ablate_residual = false;
  std::ptrdiff_t gate_hidden = 16;
  // Replaces every soft gate with a constant one-hot on this expert.
  std::optional<ExpertKind> forced_expert;
  double attention_slope = 0.2;
  double ln_eps = 1e-5;

  void validate() const;
  // "full", "w/o FFN", "w/o AIR/AR", "w/o FFN, AIR/AR"; forced experts append "[PP]" etc.
  std::string variant_name() const;
};

struct ForwardTrace {
  std::vector<Tensor> gate_weights;  // one |V| x 4 allocation per block
  std::optional<HardGateResult> hard_gate;
};

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;
  const HardGateControl* hard_gate = nullptr;
  ForwardTrace* trace = nullptr;
};

using NamedTensor = std::pair<std::string, Tensor>;

class GnnMoeModel {
 public:
  static GnnMoeModel init(const GnnMoeConfig& config, std::ptrdiff_t feature_dim, int num_classes, Rng& rng);

  // Logits |V| x C; softmax is left to the loss and to `predict`.
  Tensor forward(const Graph& g, const ForwardOptions& options = {}) const;

  // Every learnable tensor with a stable name, in a fixed order.
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad() const;

  // Independent copy of all parameter values.
  GnnMoeModel clone() const;
  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& values) const;

  const GnnMoeConfig& config() const { return config_; }
  std::ptrdiff_t feature_dim() const { return feature_dim_; }
  int num_classes() const { return num_classes_; }

  Tensor embed_weight;  // d x d'
  Tensor embed_bias;    // 1 x d'
  std::vector<PtBlock> blocks;
  EnhancedFfn ffn;
  Tensor head;  // d' x C

 private:
  GnnMoeConfig config_;
  std::ptrdiff_t feature_dim_ = 0;
  int num_classes_ = 0;
};

// Mean over `mask` of -log softmax(logits)[i, label_i].
Tensor loss(const Tensor& logits, std::span<const int> labels, std::span<const int> mask);

// Row-wise argmax; ties go to the lowest class index.
std::vector<int> predict(const Matrix& logits);

double accuracy(std::span<const int> predictions, std::span<const int> labels, std::span<const int> mask);

// Flat little-endian float64 blob `<stem>.bin` plus text manifest `<stem>.manifest`
// with one "name rows cols offset" line per tensor.
void save_checkpoint(const GnnMoeModel& model, const std::filesystem::path& stem);
// Loads into `model`, whose config fixes the expected names and shapes.
void load_checkpoint(const GnnMoeModel& model, const std::filesystem::path& stem);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gnnmoe
