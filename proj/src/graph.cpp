#include "gnnmoe/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace gnnmoe {

Matrix SparseMatrix::to_dense() const {
  Matrix d = Matrix::Zero(rows, cols);
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    for (auto k = row_ptr[i]; k < row_ptr[i + 1]; ++k) d(i, col_idx[k]) += values[k];
  }
  return d;
}

Matrix SparseMatrix::multiply(const Matrix& dense) const {
  if (dense.rows() != cols) throw DimensionError("SparseMatrix::multiply: inner dimension mismatch");
  Matrix out = Matrix::Zero(rows, dense.cols());
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    for (auto k = row_ptr[i]; k < row_ptr[i + 1]; ++k) out.row(i) += values[k] * dense.row(col_idx[k]);
  }
  return out;
}

Matrix SparseMatrix::multiply_transposed(const Matrix& dense) const {
  if (dense.rows() != rows) throw DimensionError("SparseMatrix::multiply_transposed: dimension mismatch");
  Matrix out = Matrix::Zero(cols, dense.cols());
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    for (auto k = row_ptr[i]; k < row_ptr[i + 1]; ++k) out.row(col_idx[k]) += values[k] * dense.row(i);
  }
  return out;
}

namespace {

SparseMatrix build_csr(std::ptrdiff_t n, std::vector<Edge> arcs) {
  std::sort(arcs.begin(), arcs.end());
  arcs.erase(std::unique(arcs.begin(), arcs.end()), arcs.end());
  SparseMatrix m;
  m.rows = m.cols = n;
  m.row_ptr.assign(static_cast<std::size_t>(n) + 1, 0);
  m.col_idx.reserve(arcs.size());
  m.values.assign(arcs.size(), 1.0);
  for (const auto& [s, t] : arcs) {
    ++m.row_ptr[static_cast<std::size_t>(s) + 1];
    m.col_idx.push_back(t);
  }
  std::partial_sum(m.row_ptr.begin(), m.row_ptr.end(), m.row_ptr.begin());
  return m;
}

// A + I with the self-loop merged into each sorted row.
SparseMatrix with_self_loops(const SparseMatrix& a) {
  SparseMatrix m;
  m.rows = a.rows;
  m.cols = a.cols;
  m.row_ptr.assign(static_cast<std::size_t>(a.rows) + 1, 0);
  m.col_idx.reserve(a.nnz() + static_cast<std::size_t>(a.rows));
  for (std::ptrdiff_t i = 0; i < a.rows; ++i) {
    bool placed = false;
    for (auto k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) {
      const auto j = a.col_idx[k];
      if (j == i) continue;
      if (!placed && j > i) {
        m.col_idx.push_back(static_cast<std::int32_t>(i));
        placed = true;
      }
      m.col_idx.push_back(j);
    }
    if (!placed) m.col_idx.push_back(static_cast<std::int32_t>(i));
    m.row_ptr[static_cast<std::size_t>(i) + 1] = static_cast<std::int64_t>(m.col_idx.size());
  }
  m.values.assign(m.col_idx.size(), 1.0);
  return m;
}

}  // namespace

SparseMatrix normalize_gcn(const SparseMatrix& adjacency) {
  SparseMatrix m = with_self_loops(adjacency);
  std::vector<double> deg(static_cast<std::size_t>(m.rows));
  for (std::ptrdiff_t i = 0; i < m.rows; ++i) {
    deg[static_cast<std::size_t>(i)] = static_cast<double>(m.row_ptr[i + 1] - m.row_ptr[i]);
  }
  // One rounding per entry: 1/sqrt(d_i d_j) is exact wherever the product is a square.
  for (std::ptrdiff_t i = 0; i < m.rows; ++i) {
    for (auto k = m.row_ptr[i]; k < m.row_ptr[i + 1]; ++k) {
      m.values[k] = 1.0 / std::sqrt(deg[static_cast<std::size_t>(i)] * deg[static_cast<std::size_t>(m.col_idx[k])]);
    }
  }
  return m;
}

SparseMatrix normalize_sage(const SparseMatrix& adjacency) {
  SparseMatrix m = with_self_loops(adjacency);
  for (std::ptrdiff_t i = 0; i < m.rows; ++i) {
    const double inv = 1.0 / static_cast<double>(m.row_ptr[i + 1] - m.row_ptr[i]);
    for (auto k = m.row_ptr[i]; k < m.row_ptr[i + 1]; ++k) m.values[k] = inv;
  }
  return m;
}

Graph::Graph(Matrix features, std::vector<int> labels, std::span<const Edge> edges, bool undirected,
             int num_classes)
    : features_(std::move(features)), labels_(std::move(labels)), undirected_(undirected) {
  const auto n = features_.rows();
  if (static_cast<std::ptrdiff_t>(labels_.size()) != n) {
    throw DimensionError("Graph: " + std::to_string(labels_.size()) + " labels for " + std::to_string(n) +
                         " feature rows");
  }
  int max_label = -1;
  for (int y : labels_) {
    if (y < 0) throw ContractError("Graph: negative label");
    max_label = std::max(max_label, y);
  }
  num_classes_ = num_classes < 0 ? max_label + 1 : num_classes;
  if (max_label >= num_classes_) throw ContractError("Graph: label exceeds num_classes");

  std::vector<Edge> arcs;
  arcs.reserve(edges.size() * (undirected ? 2 : 1));
  for (const auto& [s, t] : edges) {
    if (s < 0 || s >= n || t < 0 || t >= n) {
      throw ContractError("Graph: edge (" + std::to_string(s) + ", " + std::to_string(t) +
                          ") outside [0, " + std::to_string(n) + ")");
    }
    if (s == t) continue;
    arcs.emplace_back(s, t);
    if (undirected) arcs.emplace_back(t, s);
  }
  adjacency_ = build_csr(n, std::move(arcs));
  gcn_ = normalize_gcn(adjacency_);
  sage_ = normalize_sage(adjacency_);
}

std::vector<Edge> Graph::arcs() const {
  std::vector<Edge> out;
  out.reserve(adjacency_.nnz());
  for (std::ptrdiff_t i = 0; i < adjacency_.rows; ++i) {
    for (auto k = adjacency_.row_ptr[i]; k < adjacency_.row_ptr[i + 1]; ++k) {
      out.emplace_back(static_cast<std::int32_t>(i), adjacency_.col_idx[k]);
    }
  }
  return out;
}

bool Graph::operator==(const Graph& other) const {
  return features_ == other.features_ && labels_ == other.labels_ && num_classes_ == other.num_classes_ &&
         adjacency_.row_ptr == other.adjacency_.row_ptr && adjacency_.col_idx == other.adjacency_.col_idx;
}

Tensor spmm(const SparseMatrix& m, const Tensor& h) {
  if (h.rows() != m.cols) {
    throw DimensionError("propagate: h has " + std::to_string(h.rows()) + " rows, graph has " +
                         std::to_string(m.cols) + " nodes");
  }
  Tensor out(m.multiply(h.value()), grad_enabled() && h.requires_grad());
  if (out.requires_grad()) {
    auto hn = h.node();
    auto on = out.node();
    const SparseMatrix* mp = &m;
    Tape::current().record([mp, hn, on]() {
      if (on->grad.size() == 0) return;
      Tensor(hn).accumulate_grad(mp->multiply_transposed(on->grad));
    });
  }
  return out;
}

std::vector<double> attention_weights(const Graph& g, const Matrix& h, const Matrix& source,
                                      const Matrix& target, double slope) {
  const SparseMatrix& s = g.sage_matrix();
  const Eigen::VectorXd src = h * source;
  const Eigen::VectorXd dst = h * target;
  std::vector<double> alpha(s.nnz());
  for (std::ptrdiff_t i = 0; i < s.rows; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (auto k = s.row_ptr[i]; k < s.row_ptr[i + 1]; ++k) {
      alpha[k] = activate(src(i) + dst(s.col_idx[k]), ActivationKind::LeakyRelu, slope);
      m = std::max(m, alpha[k]);
    }
    double z = 0.0;
    for (auto k = s.row_ptr[i]; k < s.row_ptr[i + 1]; ++k) {
      alpha[k] = std::exp(alpha[k] - m);
      z += alpha[k];
    }
    for (auto k = s.row_ptr[i]; k < s.row_ptr[i + 1]; ++k) alpha[k] /= z;
  }
  return alpha;
}

Tensor attention_propagate(const Graph& g, const Tensor& h, const Attention& att) {
  const SparseMatrix& s = g.sage_matrix();
  if (h.rows() != s.rows) {
    throw DimensionError("propagate: h has " + std::to_string(h.rows()) + " rows, graph has " +
                         std::to_string(s.rows) + " nodes");
  }
  if (!att.source.defined() || !att.target.defined() || att.source.rows() != h.cols() ||
      att.target.rows() != h.cols() || att.source.cols() != 1 || att.target.cols() != 1) {
    throw DimensionError("propagate: attention vectors must be " + std::to_string(h.cols()) + "x1");
  }
  std::vector<double> alpha = attention_weights(g, h.value(), att.source.value(), att.target.value(), att.slope);
  Matrix out = Matrix::Zero(h.rows(), h.cols());
  for (std::ptrdiff_t i = 0; i < s.rows; ++i) {
    for (auto k = s.row_ptr[i]; k < s.row_ptr[i + 1]; ++k) out.row(i) += alpha[k] * h.value().row(s.col_idx[k]);
  }

  const bool record = grad_enabled() && (h.requires_grad() || att.source.requires_grad() ||
                                         att.target.requires_grad());
  Tensor result(std::move(out), record);
  if (!record) return result;

  auto hn = h.node(), sn = att.source.node(), tn = att.target.node(), on = result.node();
  const SparseMatrix* sp = &s;
  const double slope = att.slope;
  Tape::current().record([sp, hn, sn, tn, on, slope, alpha = std::move(alpha)]() {
    if (on->grad.size() == 0) return;
    const SparseMatrix& s = *sp;
    const Matrix& h = hn->value;
    const Matrix& G = on->grad;
    const Eigen::VectorXd src = h * sn->value;
    const Eigen::VectorXd dst = h * tn->value;
    Matrix gh = Matrix::Zero(h.rows(), h.cols());
    Eigen::VectorXd g_src = Eigen::VectorXd::Zero(h.rows());
    Eigen::VectorXd g_dst = Eigen::VectorXd::Zero(h.rows());
    std::vector<double> g_alpha;
    for (std::ptrdiff_t i = 0; i < s.rows; ++i) {
      const auto begin = s.row_ptr[i], end = s.row_ptr[i + 1];
      g_alpha.assign(static_cast<std::size_t>(end - begin), 0.0);
      double weighted = 0.0;
      for (auto k = begin; k < end; ++k) {
        const auto j = s.col_idx[k];
        g_alpha[static_cast<std::size_t>(k - begin)] = G.row(i).dot(h.row(j));
        weighted += alpha[k] * g_alpha[static_cast<std::size_t>(k - begin)];
        gh.row(j) += alpha[k] * G.row(i);
      }
      for (auto k = begin; k < end; ++k) {
        const auto j = s.col_idx[k];
        const double g_logit = alpha[k] * (g_alpha[static_cast<std::size_t>(k - begin)] - weighted);
        const double g_pre = g_logit * activate_derivative(src(i) + dst(j), ActivationKind::LeakyRelu, slope);
        g_src(i) += g_pre;
        g_dst(j) += g_pre;
      }
    }
    if (hn->requires_grad) {
      gh += g_src * sn->value.transpose();
      gh += g_dst * tn->value.transpose();
      Tensor(hn).accumulate_grad(gh);
    }
    if (sn->requires_grad) Tensor(sn).accumulate_grad(h.transpose() * g_src);
    if (tn->requires_grad) Tensor(tn).accumulate_grad(h.transpose() * g_dst);
  });
  return result;
}

Tensor propagate(const Propagation& p, const Graph& g, const Tensor& h) {
  switch (p.kind) {
    case PropKind::GcnLike:
      return spmm(g.gcn_matrix(), h);
    case PropKind::SageLike:
      return spmm(g.sage_matrix(), h);
    case PropKind::GatLike:
      return attention_propagate(g, h, p.attention);
  }
  throw ContractError("propagate: unknown kind");
}

std::vector<int> invert_permutation(std::span<const int> perm) {
  const auto n = perm.size();
  std::vector<int> inv(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const int p = perm[i];
    if (p < 0 || static_cast<std::size_t>(p) >= n || inv[static_cast<std::size_t>(p)] != -1) {
      throw ContractError("permute: not a bijection on [0, " + std::to_string(n) + ")");
    }
    inv[static_cast<std::size_t>(p)] = static_cast<int>(i);
  }
  return inv;
}

Matrix permute_rows(const Matrix& m, std::span<const int> perm) {
  if (static_cast<std::ptrdiff_t>(perm.size()) != m.rows()) throw DimensionError("permute_rows: size mismatch");
  invert_permutation(perm);
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(perm[i]) = m.row(static_cast<std::ptrdiff_t>(i));
  return out;
}

Graph permute(const Graph& g, std::span<const int> perm) {
  if (static_cast<std::ptrdiff_t>(perm.size()) != g.num_nodes()) {
    throw ContractError("permute: permutation size " + std::to_string(perm.size()) + " for " +
                        std::to_string(g.num_nodes()) + " nodes");
  }
  invert_permutation(perm);
  std::vector<int> labels(g.labels().size());
  for (std::size_t i = 0; i < perm.size(); ++i) labels[static_cast<std::size_t>(perm[i])] = g.labels()[i];
  std::vector<Edge> arcs = g.arcs();
  for (auto& [s, t] : arcs) {
    s = perm[static_cast<std::size_t>(s)];
    t = perm[static_cast<std::size_t>(t)];
  }
  return Graph(permute_rows(g.features(), perm), std::move(labels), arcs, g.undirected(), g.num_classes());
}

const char* to_string(PropKind kind) {
  switch (kind) {
    case PropKind::GcnLike:
      return "gcn";
    case PropKind::SageLike:
      return "sage";
    case PropKind::GatLike:
      return "gat";
  }
  return "?";
}

PropKind prop_kind_from_string(const std::string& s) {
  if (s == "gcn") return PropKind::GcnLike;
  if (s == "sage") return PropKind::SageLike;
  if (s == "gat") return PropKind::GatLike;
  throw std::invalid_argument("unknown propagation kind '" + s + "' (expected gcn, sage or gat)");
}

}  // namespace gnnmoe
