#pragma once

// Dense matrices with a reverse-mode tape.
//
// A Tensor is a cheap handle onto shared storage; copies alias the same
// values and gradient. Operations record a backward closure on the calling
// thread's tape whenever any input requires a gradient, and `backward`
// replays the tape in reverse and clears it.

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gnnmoe {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct TensorNode {
  Matrix value;
  Matrix grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(std::ptrdiff_t rows, std::ptrdiff_t cols, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  std::ptrdiff_t rows() const { return node_->value.rows(); }
  std::ptrdiff_t cols() const { return node_->value.cols(); }

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  double item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  const Matrix& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.resize(0, 0); }

  // Adds `g` into the gradient, allocating it on first use.
  void accumulate_grad(const Matrix& g) const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(BackwardFn fn) { ops_.push_back(std::move(fn)); }
  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded rule once, newest first.
  void backward(const Tensor& loss);

  // Tape of the calling thread.
  static Tape& current();

 private:
  std::vector<BackwardFn> ops_;
};

// Disables recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

void backward(const Tensor& loss);

enum class ActivationKind { Relu, Gelu, GeluErf, Swish, LeakyRelu, Sigmoid };

// Products and sums.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// a (r x c) plus a 1 x c row vector added to every row.
Tensor add_row(const Tensor& a, const Tensor& row);
// a (r x c) with row i scaled by column(i) of `weights` (r x k).
Tensor mul_column(const Tensor& a, const Tensor& weights, std::ptrdiff_t column);
// a scaled by a 1 x 1 tensor.
Tensor scale(const Tensor& a, const Tensor& s);
// factor * a + offset, elementwise with constants.
Tensor affine(const Tensor& a, double factor, double offset = 0.0);

Tensor activation(const Tensor& a, ActivationKind kind, double slope = 0.01);
inline Tensor relu(const Tensor& a) { return activation(a, ActivationKind::Relu); }
inline Tensor sigmoid(const Tensor& a) { return activation(a, ActivationKind::Sigmoid); }

Tensor softmax_rows(const Tensor& a);
Tensor layernorm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// 1 x 1 view of entry (r, c).
Tensor element(const Tensor& a, std::ptrdiff_t r, std::ptrdiff_t c);
// 1 x c mean over rows.
Tensor mean_rows(const Tensor& a);
// 1 x 1 sum of all entries.
Tensor sum(const Tensor& a);

// Forward value is the one-hot at `index`, gradient passes to `soft` unchanged.
Tensor straight_through(const Tensor& soft, std::ptrdiff_t index);
// Forward value is onehot(index) + soft - anchor, gradient passes to `soft`.
// At soft == anchor the value is the exact one-hot.
Tensor straight_through_anchored(const Tensor& soft, std::ptrdiff_t index, const Matrix& anchor);

// Multiplies entries by a fixed mask (already scaled for inverted dropout).
Tensor apply_mask(const Tensor& a, const Matrix& mask);

// Mean negative log-likelihood of `labels` under row-softmax of `logits`,
// restricted to the rows in `rows`.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, std::span<const int> rows);

// Elementwise activation on plain values (shared by ops and oracles).
double activate(double x, ActivationKind kind, double slope = 0.01);
double activate_derivative(double x, ActivationKind kind, double slope = 0.01);

}  // namespace gnnmoe
