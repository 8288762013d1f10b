#pragma once

#include "gnnmoe/data_io.hpp"
#include "gnnmoe/experts.hpp"
#include "gnnmoe/graph.hpp"
#include "gnnmoe/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace testing {

using gnnmoe::Matrix;
using gnnmoe::Rng;
using gnnmoe::Tensor;

inline Matrix random_matrix(std::ptrdiff_t rows, std::ptrdiff_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (std::ptrdiff_t i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Erdos-Renyi style undirected graph with random features and labels.
inline gnnmoe::Graph random_graph(int nodes, double edge_prob, int dim, int classes, Rng& rng) {
  std::bernoulli_distribution coin(edge_prob);
  std::uniform_int_distribution<int> label(0, classes - 1);
  std::vector<gnnmoe::Edge> edges;
  for (int i = 0; i < nodes; ++i) {
    for (int j = i + 1; j < nodes; ++j) {
      if (coin(rng)) edges.emplace_back(i, j);
    }
  }
  std::vector<int> labels(static_cast<std::size_t>(nodes));
  for (int& y : labels) y = label(rng);
  return gnnmoe::Graph(random_matrix(nodes, dim, rng), std::move(labels), edges, true, classes);
}

inline std::vector<int> random_permutation(int n, Rng& rng) {
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

// |a - b| / max(|a|, |b|, floor). The floor keeps gradients that are zero up
// to rounding (dead ReLU units, exactly cancelling terms) from dividing noise by noise.
inline double relative_error(double a, double b, double floor = 1e-7) {
  const double scale = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / scale;
}

struct GradCheck {
  double worst = 0.0;
  std::ptrdiff_t worst_index = -1;
  std::size_t entries = 0;
  std::size_t failures = 0;
  std::size_t refined = 0;  // entries re-measured with a smaller step after a kink was detected
};

// Compares `analytic` with central differences of `f` over every entry of `param`.
// When the central difference misses and the two one-sided slopes disagree, a
// ReLU-type kink lies inside the stencil and the difference measures nothing;
// the step is then shrunk tenfold (down to 1e-8) until the slopes agree.
inline GradCheck check_gradient(Tensor param, const Matrix& analytic, const std::function<double()>& f,
                                double tolerance, double step = 1e-5, double floor = 1e-7) {
  GradCheck out;
  Matrix& value = param.mutable_value();
  for (std::ptrdiff_t i = 0; i < value.size(); ++i) {
    const double saved = value.data()[i];
    const double expected = analytic.size() == 0 ? 0.0 : analytic.data()[i];
    double err = 0.0, center = 0.0;
    bool have_center = false;
    for (double h = step; h >= 1e-8 * (1.0 - 1e-9); h /= 10.0) {
      value.data()[i] = saved + h;
      const double up = f();
      value.data()[i] = saved - h;
      const double down = f();
      value.data()[i] = saved;
      err = relative_error(expected, (up - down) / (2.0 * h), floor);
      if (err < tolerance) break;
      if (!have_center) {
        center = f();
        have_center = true;
      }
      const bool kink = relative_error((up - center) / h, (center - down) / h, floor) >= tolerance;
      if (!kink) break;
      ++out.refined;
    }
    ++out.entries;
    if (err >= tolerance) ++out.failures;
    if (err > out.worst) {
      out.worst = err;
      out.worst_index = i;
    }
  }
  return out;
}

// Scalar test loss sum(t * weights) with fixed random weights, so every
// output entry carries a distinct upstream gradient.
inline Tensor weighted_sum(const Tensor& t, const Matrix& weights) {
  return gnnmoe::sum(gnnmoe::mul(t, Tensor(weights)));
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("gnnmoe_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
