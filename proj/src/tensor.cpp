#include "gnnmoe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gnnmoe {

namespace {

thread_local bool g_grad_enabled = true;

constexpr double kGeluTanhScale = 0.7978845608;  // sqrt(2 / pi)
constexpr double kGeluCubic = 0.044715;

using NodePtr = std::shared_ptr<TensorNode>;

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void accumulate(const NodePtr& node, const Matrix& g) {
  if (!node->requires_grad) return;
  if (node->grad.size() == 0) {
    node->grad = g;
  } else {
    node->grad += g;
  }
}

template <typename Fn>
Tensor finish(Matrix value, bool record, Fn&& rule) {
  Tensor out(std::move(value), record);
  if (record) {
    NodePtr out_node = out.node();
    Tape::current().record([out_node, rule = std::forward<Fn>(rule)]() {
      if (out_node->grad.size() == 0) return;
      rule(out_node->grad);
    });
  }
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

void require_row_vector(const Tensor& v, std::ptrdiff_t width, const char* op) {
  if (v.rows() != 1 || v.cols() != width) {
    throw DimensionError(std::string(op) + ": expected 1x" + std::to_string(width) + " row vector, got " +
                         std::to_string(v.rows()) + "x" + std::to_string(v.cols()));
  }
}

}  // namespace

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<TensorNode>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::ptrdiff_t rows, std::ptrdiff_t cols, bool requires_grad) {
  return Tensor(Matrix::Zero(rows, cols), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m), requires_grad);
}

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) throw ContractError("item: tensor is not 1x1");
  return node_->value(0, 0);
}

void Tensor::accumulate_grad(const Matrix& g) const { accumulate(node_, g); }

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ContractError("backward: loss must be 1x1, got " + std::to_string(loss.rows()) + "x" +
                        std::to_string(loss.cols()));
  }
  if (loss.requires_grad()) {
    loss.accumulate_grad(Matrix::Ones(1, 1));
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }
  ops_.clear();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Tensor& loss) { Tape::current().backward(loss); }

double activate(double x, ActivationKind kind, double slope) {
  switch (kind) {
    case ActivationKind::Relu:
      return x > 0.0 ? x : 0.0;
    case ActivationKind::LeakyRelu:
      return x > 0.0 ? x : slope * x;
    case ActivationKind::Sigmoid:
      return 1.0 / (1.0 + std::exp(-x));
    case ActivationKind::Swish:
      return x / (1.0 + std::exp(-x));
    case ActivationKind::Gelu: {
      const double u = kGeluTanhScale * (x + kGeluCubic * x * x * x);
      return 0.5 * x * (1.0 + std::tanh(u));
    }
    case ActivationKind::GeluErf:
      return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
  }
  return x;
}

double activate_derivative(double x, ActivationKind kind, double slope) {
  switch (kind) {
    case ActivationKind::Relu:
      return x > 0.0 ? 1.0 : 0.0;
    case ActivationKind::LeakyRelu:
      return x > 0.0 ? 1.0 : slope;
    case ActivationKind::Sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
    case ActivationKind::Swish: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s + x * s * (1.0 - s);
    }
    case ActivationKind::Gelu: {
      const double u = kGeluTanhScale * (x + kGeluCubic * x * x * x);
      const double t = std::tanh(u);
      const double du = kGeluTanhScale * (1.0 + 3.0 * kGeluCubic * x * x);
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    }
    case ActivationKind::GeluErf: {
      constexpr double kInvSqrt2Pi = 0.39894228040143267794;
      return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
    }
  }
  return 1.0;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " by " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  const bool record = should_record({&a, &b});
  NodePtr an = a.node(), bn = b.node();
  return finish(std::move(out), record, [an, bn](const Matrix& g) {
    if (an->requires_grad) {
      Matrix ga(an->value.rows(), an->value.cols());
      ga.noalias() = g * bn->value.transpose();
      accumulate(an, ga);
    }
    if (bn->requires_grad) {
      Matrix gb(bn->value.rows(), bn->value.cols());
      gb.noalias() = an->value.transpose() * g;
      accumulate(bn, gb);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool record = should_record({&a, &b});
  NodePtr an = a.node(), bn = b.node();
  return finish(a.value() + b.value(), record, [an, bn](const Matrix& g) {
    accumulate(an, g);
    accumulate(bn, g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const bool record = should_record({&a, &b});
  NodePtr an = a.node(), bn = b.node();
  return finish(a.value() - b.value(), record, [an, bn](const Matrix& g) {
    accumulate(an, g);
    if (bn->requires_grad) accumulate(bn, -g);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const bool record = should_record({&a, &b});
  NodePtr an = a.node(), bn = b.node();
  return finish(a.value().cwiseProduct(b.value()), record, [an, bn](const Matrix& g) {
    if (an->requires_grad) accumulate(an, g.cwiseProduct(bn->value));
    if (bn->requires_grad) accumulate(bn, g.cwiseProduct(an->value));
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_row_vector(row, a.cols(), "add_row");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  const bool record = should_record({&a, &row});
  NodePtr an = a.node(), rn = row.node();
  return finish(std::move(out), record, [an, rn](const Matrix& g) {
    accumulate(an, g);
    if (rn->requires_grad) accumulate(rn, g.colwise().sum());
  });
}

Tensor mul_column(const Tensor& a, const Tensor& weights, std::ptrdiff_t column) {
  if (weights.rows() != a.rows() || column < 0 || column >= weights.cols()) {
    throw DimensionError("mul_column: weights " + std::to_string(weights.rows()) + "x" +
                         std::to_string(weights.cols()) + " do not match " + std::to_string(a.rows()) +
                         " rows / column " + std::to_string(column));
  }
  Matrix out = a.value().array().colwise() * weights.value().col(column).array();
  const bool record = should_record({&a, &weights});
  NodePtr an = a.node(), wn = weights.node();
  return finish(std::move(out), record, [an, wn, column](const Matrix& g) {
    if (an->requires_grad) {
      Matrix ga = g.array().colwise() * wn->value.col(column).array();
      accumulate(an, ga);
    }
    if (wn->requires_grad) {
      Matrix gw = Matrix::Zero(wn->value.rows(), wn->value.cols());
      gw.col(column) = g.cwiseProduct(an->value).rowwise().sum();
      accumulate(wn, gw);
    }
  });
}

Tensor scale(const Tensor& a, const Tensor& s) {
  if (s.rows() != 1 || s.cols() != 1) throw DimensionError("scale: factor must be 1x1");
  const double factor = s.value()(0, 0);
  const bool record = should_record({&a, &s});
  NodePtr an = a.node(), sn = s.node();
  return finish(a.value() * factor, record, [an, sn](const Matrix& g) {
    if (an->requires_grad) accumulate(an, g * sn->value(0, 0));
    if (sn->requires_grad) {
      Matrix gs(1, 1);
      gs(0, 0) = g.cwiseProduct(an->value).sum();
      accumulate(sn, gs);
    }
  });
}

Tensor affine(const Tensor& a, double factor, double offset) {
  Matrix out = (a.value().array() * factor + offset).matrix();
  const bool record = should_record({&a});
  NodePtr an = a.node();
  return finish(std::move(out), record, [an, factor](const Matrix& g) { accumulate(an, g * factor); });
}

Tensor activation(const Tensor& a, ActivationKind kind, double slope) {
  const Matrix& x = a.value();
  Matrix out = x.unaryExpr([kind, slope](double v) { return activate(v, kind, slope); });
  const bool record = should_record({&a});
  NodePtr an = a.node();
  return finish(std::move(out), record, [an, kind, slope](const Matrix& g) {
    Matrix d = an->value.unaryExpr([kind, slope](double v) { return activate_derivative(v, kind, slope); });
    accumulate(an, g.cwiseProduct(d));
  });
}

Tensor softmax_rows(const Tensor& a) {
  Matrix out(a.rows(), a.cols());
  for (std::ptrdiff_t i = 0; i < a.rows(); ++i) {
    const double m = a.value().row(i).maxCoeff();
    out.row(i) = (a.value().row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  const bool record = should_record({&a});
  NodePtr an = a.node();
  Matrix y = record ? out : Matrix();
  return finish(std::move(out), record, [an, y = std::move(y)](const Matrix& g) {
    Matrix gy = g.cwiseProduct(y);
    Eigen::VectorXd dots = gy.rowwise().sum();
    Matrix ga = gy - (y.array().colwise() * dots.array()).matrix();
    accumulate(an, ga);
  });
}

Tensor layernorm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  require_row_vector(gain, a.cols(), "layernorm_rows gain");
  require_row_vector(bias, a.cols(), "layernorm_rows bias");
  if (!(eps > 0.0)) throw ContractError("layernorm_rows: eps must be positive");
  const std::ptrdiff_t n = a.rows(), d = a.cols();
  Matrix normalized(n, d);
  Eigen::VectorXd inv_std(n);
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const double mean = a.value().row(i).mean();
    const auto centered = a.value().row(i).array() - mean;
    const double var = centered.square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    normalized.row(i) = centered * inv_std(i);
  }
  Matrix out = (normalized.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);

  const bool record = should_record({&a, &gain, &bias});
  NodePtr an = a.node(), gn = gain.node(), bn = bias.node();
  return finish(std::move(out), record,
                [an, gn, bn, normalized = std::move(normalized), inv_std = std::move(inv_std)](const Matrix& g) {
                  if (gn->requires_grad) accumulate(gn, g.cwiseProduct(normalized).colwise().sum());
                  if (bn->requires_grad) accumulate(bn, g.colwise().sum());
                  if (!an->requires_grad) return;
                  Matrix gx = g.array().rowwise() * gn->value.row(0).array();
                  Matrix ga(gx.rows(), gx.cols());
                  for (std::ptrdiff_t i = 0; i < gx.rows(); ++i) {
                    const double mean_g = gx.row(i).mean();
                    const double mean_gx = gx.row(i).cwiseProduct(normalized.row(i)).mean();
                    ga.row(i) = inv_std(i) *
                                (gx.row(i).array() - mean_g - normalized.row(i).array() * mean_gx);
                  }
                  accumulate(an, ga);
                });
}

Tensor element(const Tensor& a, std::ptrdiff_t r, std::ptrdiff_t c) {
  if (r < 0 || r >= a.rows() || c < 0 || c >= a.cols()) throw DimensionError("element: index out of range");
  const bool record = should_record({&a});
  NodePtr an = a.node();
  return finish(Tensor::scalar(a.value()(r, c)).value(), record, [an, r, c](const Matrix& g) {
    Matrix ga = Matrix::Zero(an->value.rows(), an->value.cols());
    ga(r, c) = g(0, 0);
    accumulate(an, ga);
  });
}

Tensor mean_rows(const Tensor& a) {
  if (a.rows() == 0) throw ContractError("mean_rows: empty tensor");
  const double n = static_cast<double>(a.rows());
  Matrix out = a.value().colwise().sum() / n;
  const bool record = should_record({&a});
  NodePtr an = a.node();
  return finish(std::move(out), record, [an, n](const Matrix& g) {
    Matrix ga = (g / n).replicate(an->value.rows(), 1);
    accumulate(an, ga);
  });
}

Tensor sum(const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const bool record = should_record({&a});
  NodePtr an = a.node();
  return finish(std::move(out), record, [an](const Matrix& g) {
    accumulate(an, Matrix::Constant(an->value.rows(), an->value.cols(), g(0, 0)));
  });
}

Tensor straight_through(const Tensor& soft, std::ptrdiff_t index) {
  if (index < 0 || index >= soft.cols() || soft.rows() != 1) {
    throw DimensionError("straight_through: index out of range or soft is not a row vector");
  }
  Matrix out = Matrix::Zero(1, soft.cols());
  out(0, index) = 1.0;
  const bool record = should_record({&soft});
  NodePtr sn = soft.node();
  return finish(std::move(out), record, [sn](const Matrix& g) { accumulate(sn, g); });
}

Tensor straight_through_anchored(const Tensor& soft, std::ptrdiff_t index, const Matrix& anchor) {
  if (index < 0 || index >= soft.cols() || soft.rows() != 1 || anchor.rows() != 1 ||
      anchor.cols() != soft.cols()) {
    throw DimensionError("straight_through_anchored: shape mismatch");
  }
  Matrix out = soft.value() - anchor;
  out(0, index) += 1.0;
  const bool record = should_record({&soft});
  NodePtr sn = soft.node();
  return finish(std::move(out), record, [sn](const Matrix& g) { accumulate(sn, g); });
}

Tensor apply_mask(const Tensor& a, const Matrix& mask) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) throw DimensionError("apply_mask: shape mismatch");
  const bool record = should_record({&a});
  NodePtr an = a.node();
  return finish(a.value().cwiseProduct(mask), record, [an, mask](const Matrix& g) {
    accumulate(an, g.cwiseProduct(mask));
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, std::span<const int> rows) {
  if (rows.empty()) throw ContractError("cross_entropy: empty node mask");
  if (static_cast<std::ptrdiff_t>(labels.size()) != logits.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.rows()) + " rows");
  }
  const Matrix& z = logits.value();
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  double total = 0.0;
  Matrix probs(static_cast<std::ptrdiff_t>(rows.size()), z.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const int r = rows[k];
    if (r < 0 || r >= z.rows()) throw DimensionError("cross_entropy: row out of range");
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= z.cols()) throw DimensionError("cross_entropy: label out of range");
    const double m = z.row(r).maxCoeff();
    const auto e = (z.row(r).array() - m).exp();
    const double s = e.sum();
    probs.row(static_cast<std::ptrdiff_t>(k)) = e / s;
    total += (m + std::log(s)) - z(r, y);
  }
  const bool record = should_record({&logits});
  NodePtr ln = logits.node();
  std::vector<int> kept_rows(rows.begin(), rows.end());
  std::vector<int> kept_labels(labels.begin(), labels.end());
  return finish(Tensor::scalar(total * inv_n).value(), record,
                [ln, probs = std::move(probs), kept_rows = std::move(kept_rows),
                 kept_labels = std::move(kept_labels), inv_n](const Matrix& g) {
                  Matrix gz = Matrix::Zero(ln->value.rows(), ln->value.cols());
                  const double scale = g(0, 0) * inv_n;
                  for (std::size_t k = 0; k < kept_rows.size(); ++k) {
                    const int r = kept_rows[k];
                    gz.row(r) += scale * probs.row(static_cast<std::ptrdiff_t>(k));
                    gz(r, kept_labels[static_cast<std::size_t>(r)]) -= scale;
                  }
                  accumulate(ln, gz);
                });
}

}  // namespace gnnmoe
