#pragma once

#include "gnnmoe/graph.hpp"

#include <array>
#include <random>
#include <string>
#include <vector>

namespace gnnmoe {

using Rng = std::mt19937_64;

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(std::ptrdiff_t fan_in, std::ptrdiff_t fan_out, Rng& rng);

// T(h) = relu(h W + b), square in the hidden width.
struct TransformOp {
  Tensor weight;  // d' x d'
  Tensor bias;    // 1 x d'

  static TransformOp init(std::ptrdiff_t width, Rng& rng);
  Tensor operator()(const Tensor& h) const;
};

// Message-passing experts; letters list primitives in application order.
enum class ExpertKind { PP = 0, PT = 1, TP = 2, TT = 3 };
inline constexpr std::array<ExpertKind, 4> kAllExperts{ExpertKind::PP, ExpertKind::PT, ExpertKind::TP,
                                                       ExpertKind::TT};

struct Expert {
  ExpertKind kind = ExpertKind::PP;
  std::vector<TransformOp> t_ops;  // one per 'T' in the name

  static Expert init(ExpertKind kind, std::ptrdiff_t width, Rng& rng);
};

std::size_t transform_count(ExpertKind kind);
const char* to_string(ExpertKind kind);
ExpertKind expert_kind_from_string(const std::string& s);

Tensor apply_expert(const Expert& e, const Propagation& p, const Graph& g, const Tensor& h);

}  // namespace gnnmoe
