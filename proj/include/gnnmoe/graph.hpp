#pragma once

#include "gnnmoe/tensor.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace gnnmoe {

// Compressed-row sparse matrix. Column indices are sorted within each row.
struct SparseMatrix {
  std::ptrdiff_t rows = 0;
  std::ptrdiff_t cols = 0;
  std::vector<std::int64_t> row_ptr;
  std::vector<std::int32_t> col_idx;
  std::vector<double> values;

  std::size_t nnz() const { return col_idx.size(); }
  Matrix to_dense() const;
  // this * dense
  Matrix multiply(const Matrix& dense) const;
  // this^T * dense
  Matrix multiply_transposed(const Matrix& dense) const;
};

using Edge = std::pair<std::int32_t, std::int32_t>;

// Node features, labels and a static adjacency. Self-loops are never stored;
// the normalized propagation matrices add them and are computed once here.
class Graph {
 public:
  // Edges are taken as given (directed pairs); `undirected` symmetrizes.
  // Duplicates and self-loops are dropped. Indices outside [0, |V|) throw.
  Graph(Matrix features, std::vector<int> labels, std::span<const Edge> edges, bool undirected,
        int num_classes = -1);

  std::ptrdiff_t num_nodes() const { return features_.rows(); }
  std::ptrdiff_t feature_dim() const { return features_.cols(); }
  int num_classes() const { return num_classes_; }
  bool undirected() const { return undirected_; }

  const Matrix& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  const SparseMatrix& adjacency() const { return adjacency_; }
  std::size_t num_arcs() const { return adjacency_.nnz(); }

  // D^-1/2 (A + I) D^-1/2 with D the degree of A + I.
  const SparseMatrix& gcn_matrix() const { return gcn_; }
  // D^-1 (A + I), the mean over N(i) and i.
  const SparseMatrix& sage_matrix() const { return sage_; }

  // Directed arc list in row-major order.
  std::vector<Edge> arcs() const;

  bool operator==(const Graph& other) const;

 private:
  Matrix features_;
  std::vector<int> labels_;
  int num_classes_;
  bool undirected_;
  SparseMatrix adjacency_;
  SparseMatrix gcn_;
  SparseMatrix sage_;
};

SparseMatrix normalize_gcn(const SparseMatrix& adjacency);
SparseMatrix normalize_sage(const SparseMatrix& adjacency);

enum class PropKind { GcnLike, SageLike, GatLike };

// Attention vectors for GatLike propagation; unused by the other kinds.
struct Attention {
  Tensor source;  // d' x 1, scores the receiving node
  Tensor target;  // d' x 1, scores the neighbor
  double slope = 0.2;
};

struct Propagation {
  PropKind kind = PropKind::GcnLike;
  Attention attention;
};

// Parameter-free sparse product with a constant matrix.
Tensor spmm(const SparseMatrix& m, const Tensor& h);

// Single-head additive attention over N(i) and i:
// e_ij = leaky_relu(h_i.a_s + h_j.a_t), out_i = sum_j softmax_j(e_ij) h_j.
Tensor attention_propagate(const Graph& g, const Tensor& h, const Attention& att);

// Per-arc attention coefficients laid out like g.sage_matrix().
std::vector<double> attention_weights(const Graph& g, const Matrix& h, const Matrix& source,
                                      const Matrix& target, double slope);

Tensor propagate(const Propagation& p, const Graph& g, const Tensor& h);

// perm[i] is the new index of node i.
Graph permute(const Graph& g, std::span<const int> perm);
std::vector<int> invert_permutation(std::span<const int> perm);
// Rows of `m` moved so that row i lands at perm[i].
Matrix permute_rows(const Matrix& m, std::span<const int> perm);

const char* to_string(PropKind kind);
PropKind prop_kind_from_string(const std::string& s);

}  // namespace gnnmoe
