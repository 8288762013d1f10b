#include "gnnmoe/experts.hpp"

#include <cmath>
#include <stdexcept>

namespace gnnmoe {

Matrix glorot_uniform(std::ptrdiff_t fan_in, std::ptrdiff_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(fan_in, fan_out);
  for (std::ptrdiff_t i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return w;
}

TransformOp TransformOp::init(std::ptrdiff_t width, Rng& rng) {
  return {Tensor(glorot_uniform(width, width, rng), true), Tensor::zeros(1, width, true)};
}

Tensor TransformOp::operator()(const Tensor& h) const {
  if (h.cols() != weight.rows()) {
    throw DimensionError("transform: input width " + std::to_string(h.cols()) + " but weight is " +
                         std::to_string(weight.rows()) + "x" + std::to_string(weight.cols()));
  }
  return relu(add_row(matmul(h, weight), bias));
}

std::size_t transform_count(ExpertKind kind) {
  switch (kind) {
    case ExpertKind::PP:
      return 0;
    case ExpertKind::PT:
    case ExpertKind::TP:
      return 1;
    case ExpertKind::TT:
      return 2;
  }
  return 0;
}

Expert Expert::init(ExpertKind kind, std::ptrdiff_t width, Rng& rng) {
  Expert e{kind, {}};
  for (std::size_t i = 0; i < transform_count(kind); ++i) e.t_ops.push_back(TransformOp::init(width, rng));
  return e;
}

const char* to_string(ExpertKind kind) {
  switch (kind) {
    case ExpertKind::PP:
      return "PP";
    case ExpertKind::PT:
      return "PT";
    case ExpertKind::TP:
      return "TP";
    case ExpertKind::TT:
      return "TT";
  }
  return "?";
}

ExpertKind expert_kind_from_string(const std::string& s) {
  for (ExpertKind k : kAllExperts) {
    if (s == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown expert '" + s + "' (expected PP, PT, TP or TT)");
}

Tensor apply_expert(const Expert& e, const Propagation& p, const Graph& g, const Tensor& h) {
  if (e.t_ops.size() != transform_count(e.kind)) {
    throw ContractError(std::string("apply_expert: ") + to_string(e.kind) + " holds " +
                        std::to_string(e.t_ops.size()) + " transforms");
  }
  if (h.rows() != g.num_nodes()) {
    throw DimensionError("apply_expert: h has " + std::to_string(h.rows()) + " rows for " +
                         std::to_string(g.num_nodes()) + " nodes");
  }
  switch (e.kind) {
    case ExpertKind::PP:
      return propagate(p, g, propagate(p, g, h));
    case ExpertKind::PT:
      return e.t_ops[0](propagate(p, g, h));
    case ExpertKind::TP:
      return propagate(p, g, e.t_ops[0](h));
    case ExpertKind::TT:
      return e.t_ops[1](e.t_ops[0](h));
  }
  throw ContractError("apply_expert: unknown kind");
}

}  // namespace gnnmoe
