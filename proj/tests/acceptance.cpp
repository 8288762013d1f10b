// Acceptance run: one PASS/FAIL line per criterion, also written to
// acceptance_report.txt. Arguments select criteria by number; with none, all
// ten run. Exit status is nonzero if any fail.

#include "support.hpp"

#include "gnnmoe/cli.hpp"
#include "gnnmoe/data_io.hpp"
#include "gnnmoe/model.hpp"
#include "gnnmoe/training.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace gnnmoe;

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::array<PropKind, 3> kAllPropKinds{PropKind::GcnLike, PropKind::SageLike, PropKind::GatLike};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::vector<int> all_nodes(std::ptrdiff_t n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

Verdict gradient_check() {
  const auto start = Clock::now();
  std::size_t entries = 0, failures = 0, refined = 0;
  double worst = 0.0;
  std::string worst_name;
  for (PropKind kind : kAllPropKinds) {
    Rng rng(1000 + static_cast<int>(kind));
    const Graph g = testing::random_graph(20, 0.2, 5, 3, rng);
    GnnMoeConfig cfg;
    cfg.hidden_dim = 8;
    cfg.num_blocks = 2;
    cfg.prop_kind = kind;
    cfg.dropout = 0.0;
    const GnnMoeModel m = GnnMoeModel::init(cfg, 5, 3, rng);

    // Freeze the Gumbel noise, then pin the straight-through surrogate to the
    // selection it produces so the loss is a smooth function of every parameter.
    HardGateControl control;
    control.noise = std::array<double, 3>{0.25, -0.6, 0.4};
    ForwardTrace trace;
    {
      NoGradGuard off;
      m.forward(g, {.training = true, .hard_gate = &control, .trace = &trace});
    }
    control.anchor_index = trace.hard_gate->index;
    control.anchor_soft = trace.hard_gate->soft.value();
    const ForwardOptions opts{.training = true, .hard_gate = &control};
    const std::vector<int> train = all_nodes(20);

    m.zero_grad();
    backward(loss(m.forward(g, opts), g.labels(), train));
    auto f = [&]() {
      NoGradGuard off;
      return loss(m.forward(g, opts), g.labels(), train).item();
    };
    for (const auto& [name, t] : m.parameters()) {
      const Matrix analytic = t.has_grad() ? t.grad() : Matrix::Zero(t.rows(), t.cols());
      const auto r = testing::check_gradient(t, analytic, f, 1e-4);
      entries += r.entries;
      failures += r.failures;
      refined += r.refined;
      if (r.worst > worst) {
        worst = r.worst;
        worst_name = std::string(to_string(kind)) + ":" + name;
      }
    }
    m.zero_grad();
  }
  const double secs = seconds_since(start);
  return {failures == 0 && secs < 120.0,
          fmt("%zu/%zu entries within 1e-4, worst %.2e (%s), %zu step refinements at kinks, %.1f s",
              entries - failures, entries, worst, worst_name.c_str(), refined, secs)};
}

Verdict gate_invariants() {
  Rng rng(2000);
  double worst_row = 0.0;
  int bad_masks = 0, rows = 0;
  for (int pass = 0; pass < 1000; ++pass) {
    const int n = std::uniform_int_distribution<int>(4, 40)(rng);
    const Graph g = testing::random_graph(n, 0.15, 6, 3, rng);
    GnnMoeConfig cfg;
    cfg.hidden_dim = 16;
    cfg.num_blocks = 1 + pass % 3;
    cfg.prop_kind = kAllPropKinds[static_cast<std::size_t>(pass % 3)];
    const GnnMoeModel m = GnnMoeModel::init(cfg, 6, 3, rng);
    ForwardTrace trace;
    NoGradGuard off;
    m.forward(g, {.training = pass % 4 != 0, .rng = &rng, .trace = &trace});
    for (const Tensor& w : trace.gate_weights) {
      for (std::ptrdiff_t i = 0; i < w.rows(); ++i) {
        worst_row = std::max(worst_row, std::abs(w.value().row(i).sum() - 1.0));
        ++rows;
      }
    }
    const Matrix& mask = trace.hard_gate->mask.value();
    int ones = 0, zeros = 0;
    for (std::ptrdiff_t j = 0; j < mask.cols(); ++j) {
      ones += mask(0, j) == 1.0;
      zeros += mask(0, j) == 0.0;
    }
    if (mask.cols() != 3 || ones != 1 || zeros != 2) ++bad_masks;
  }
  return {worst_row <= 1e-9 && bad_masks == 0,
          fmt("%d soft-gate rows, max |sum - 1| = %.2e; %d of 1000 hard masks not one-hot", rows, worst_row,
              bad_masks)};
}

Verdict gumbel_frequencies() {
  Rng init(0);
  EnhancedFfn f = EnhancedFfn::init(1, 1.0, init);
  f.gate_weight.mutable_value() << 1.0, 0.0, -1.0;
  const Tensor one(Matrix::Ones(1, 1));
  Rng rng(3000);
  std::array<int, 3> counts{};
  const int n = 100000;
  NoGradGuard off;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(hard_gate(f, one, &rng, true).index)];
  const double z = std::exp(1.0) + 1.0 + std::exp(-1.0);
  const std::array<double, 3> expected{std::exp(1.0) / z, 1.0 / z, std::exp(-1.0) / z};
  double worst = 0.0;
  std::array<double, 3> freq{};
  for (std::size_t j = 0; j < 3; ++j) {
    freq[j] = static_cast<double>(counts[j]) / n;
    worst = std::max(worst, std::abs(freq[j] - expected[j]));
  }
  return {worst <= 0.01, fmt("frequencies (%.4f, %.4f, %.4f) vs (%.4f, %.4f, %.4f), max deviation %.4f", freq[0],
                             freq[1], freq[2], expected[0], expected[1], expected[2], worst)};
}

Verdict equivariance() {
  Rng rng(4000);
  const Graph g = testing::random_graph(30, 0.15, 6, 3, rng);
  double worst = 0.0;
  for (PropKind kind : kAllPropKinds) {
    GnnMoeConfig cfg;
    cfg.prop_kind = kind;
    const GnnMoeModel m = GnnMoeModel::init(cfg, 6, 3, rng);
    NoGradGuard off;
    const Matrix base = m.forward(g).value();
    for (int trial = 0; trial < 20; ++trial) {
      const auto perm = testing::random_permutation(30, rng);
      const Matrix lhs = m.forward(permute(g, perm)).value();
      worst = std::max(worst, (lhs - permute_rows(base, perm)).cwiseAbs().maxCoeff());
    }
  }
  return {worst <= 1e-8, fmt("60 relabelings, max |difference| = %.2e", worst)};
}

Verdict overfit() {
  const auto start = Clock::now();
  SyntheticSpec spec;
  spec.num_nodes = 50;
  spec.num_classes = 2;
  spec.feature_dim = 4;
  spec.homophily = 1.0;
  spec.mean_degree = 4.0;
  spec.feature_noise = 0.1;
  spec.seed = 5;
  const Graph g = generate_synthetic(spec);
  const std::vector<int> nodes = all_nodes(g.num_nodes());

  Rng init = make_stream(0, 1), rng = make_stream(0, 2);
  const GnnMoeModel m = GnnMoeModel::init(GnnMoeConfig{}, g.feature_dim(), g.num_classes(), init);
  std::vector<Tensor> params;
  for (const auto& [name, t] : m.parameters()) params.push_back(t);
  AdamWState opt;
  const TrainConfig tc;
  int reached = 0;
  for (int epoch = 1; epoch <= 200 && reached == 0; ++epoch) {
    m.zero_grad();
    backward(loss(m.forward(g, {.training = true, .rng = &rng}), g.labels(), nodes));
    adamw_step(params, opt, tc.lr, tc.weight_decay);
    if (evaluate(m, g, nodes) == 1.0) reached = epoch;
  }
  const double secs = seconds_since(start);
  return {reached > 0 && secs < 30.0,
          reached > 0 ? fmt("100%% training accuracy at epoch %d, %.1f s", reached, secs)
                      : fmt("not separated within 200 epochs, %.1f s", secs)};
}

// The synthetic suite for criteria 6 to 8: 1000 nodes, four classes, 16
// features, mean degree 10, feature noise 0.5. Hyperparameters are the defaults.
Graph suite(double homophily) {
  SyntheticSpec spec;
  spec.homophily = homophily;
  spec.feature_noise = 0.5;
  spec.seed = 1;
  return generate_synthetic(spec);
}

// Per-seed test accuracies, cached so that criteria sharing a configuration
// train it once.
class SuiteRuns {
 public:
  double mean(double h, const GnnMoeConfig& cfg, int seeds) {
    double total = 0.0;
    for (int s = 0; s < seeds; ++s) total += test_acc(h, cfg, static_cast<std::uint64_t>(s));
    return total / seeds;
  }

 private:
  double test_acc(double h, const GnnMoeConfig& cfg, std::uint64_t seed) {
    std::ostringstream key;
    key << h << '|' << cfg.variant_name() << '|' << cfg.num_blocks << '|' << seed;
    auto it = cache_.find(key.str());
    if (it != cache_.end()) return it->second;
    auto g = graphs_.find(h);
    if (g == graphs_.end()) g = graphs_.emplace(h, suite(h)).first;
    TrainConfig tc;
    tc.seeds = {seed};
    const double acc = run_seeds(cfg, tc, g->second).runs.front().test_acc;
    cache_.emplace(key.str(), acc);
    return acc;
  }

  std::map<std::string, double> cache_;
  std::map<double, Graph> graphs_;
};

SuiteRuns& suite_runs() {
  static SuiteRuns runs;
  return runs;
}

Verdict depth_stability() {
  const auto start = Clock::now();
  auto at_depth = [](int depth, bool baseline) {
    GnnMoeConfig cfg;
    cfg.num_blocks = depth;
    if (baseline) {
      cfg.forced_expert = ExpertKind::PP;
      cfg.ablate_residual = true;
    }
    return suite_runs().mean(0.8, cfg, 5);
  };
  const double full2 = at_depth(2, false), full16 = at_depth(16, false);
  const double base2 = at_depth(2, true), base16 = at_depth(16, true);
  const double secs = seconds_since(start);
  const bool pass = std::abs(full16 - full2) <= 0.03 && base2 - base16 > 0.05 && secs < 900.0;
  return {pass, fmt("GNNMoE L=2 %.3f, L=16 %.3f (change %+.3f); baseline L=2 %.3f, L=16 %.3f (change %+.3f); "
                    "%.0f s",
                    full2, full16, full16 - full2, base2, base16, base16 - base2, secs)};
}

Verdict heterophily() {
  const double full = suite_runs().mean(0.1, GnnMoeConfig{}, 5);
  double best = 0.0, pp = 0.0;
  std::string forced;
  for (ExpertKind kind : kAllExperts) {
    GnnMoeConfig cfg;
    cfg.forced_expert = kind;
    const double acc = suite_runs().mean(0.1, cfg, 5);
    if (kind == ExpertKind::PP) pp = acc;
    best = std::max(best, acc);
    forced += fmt(" %s %.3f", to_string(kind), acc);
  }
  return {full >= best - 0.01 && full > pp,
          fmt("full %.3f; forced:%s; best forced %.3f, margin %+.3f", full, forced.c_str(), best, full - best)};
}

Verdict ablation_ordering() {
  bool pass = true;
  std::string detail;
  for (double h : {0.8, 0.1}) {
    GnnMoeConfig no_ffn, no_res;
    no_ffn.ablate_ffn = true;
    no_res.ablate_residual = true;
    const double full = suite_runs().mean(h, GnnMoeConfig{}, 10);
    const double a = suite_runs().mean(h, no_ffn, 10);
    const double b = suite_runs().mean(h, no_res, 10);
    pass = pass && full >= a && full >= b;
    detail += fmt("%sh=%.1f: full %.4f, w/o FFN %.4f (margin %+.4f), w/o AIR/AR %.4f (margin %+.4f)",
                  detail.empty() ? "" : "; ", h, full, a, full - a, b, full - b);
  }
  return {pass, detail};
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "gnnmoe");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

std::string summary_metrics(const std::filesystem::path& file) {
  std::ifstream in(file);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.rfind("timing.", 0) != 0) kept += line + '\n';
  }
  return kept;
}

Verdict determinism() {
  testing::TempDir dir;
  const auto data = dir / "data", first = dir / "first", second = dir / "second";
  if (run_cli({"gen", "--nodes", "300", "--homophily", "0.6", "--seed", "9", "--out", data.string()}) != 0 ||
      run_cli({"train", "--data", data.string(), "--seeds", "0,1,2", "--set", "hidden_dim=16", "--set",
               "max_epochs=60", "--set", "patience=20", "--out", first.string()}) != 0) {
    return {false, "first run failed"};
  }
  const auto manifest = (first / "manifest.txt").string();
  if (run_cli({"train", "--config", manifest, "--out", second.string()}) != 0) return {false, "replay failed"};
  const std::string a = summary_metrics(first / "summary.txt"), b = summary_metrics(second / "summary.txt");
  const auto lines = std::count(a.begin(), a.end(), '\n');
  return {!a.empty() && a == b, fmt("%ld summary metric lines %s on manifest replay", static_cast<long>(lines),
                                    a == b ? "identical" : "differ")};
}

Verdict loss_oracle() {
  Rng rng(10000);
  double worst_loop = 0.0, worst_trace = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = std::uniform_int_distribution<int>(5, 60)(rng);
    const int classes = std::uniform_int_distribution<int>(2, 8)(rng);
    const Matrix z = testing::random_matrix(n, classes, rng, -6.0, 6.0);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int& y : labels) y = std::uniform_int_distribution<int>(0, classes - 1)(rng);
    std::vector<int> mask;
    for (int i = 0; i < n; ++i) {
      if (std::bernoulli_distribution(0.5)(rng)) mask.push_back(i);
    }
    if (mask.empty()) mask.push_back(0);

    long double acc = 0.0L;
    for (int i : mask) {
      long double denom = 0.0L;
      for (int c = 0; c < classes; ++c) denom += std::exp(static_cast<long double>(z(i, c)));
      acc -= std::log(std::exp(static_cast<long double>(z(i, labels[static_cast<std::size_t>(i)]))) / denom);
    }
    const double loop = static_cast<double>(acc / static_cast<long double>(mask.size()));

    const auto rows = static_cast<std::ptrdiff_t>(mask.size());
    Matrix y = Matrix::Zero(rows, classes), log_p(rows, classes);
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
      const int i = mask[static_cast<std::size_t>(r)];
      y(r, labels[static_cast<std::size_t>(i)]) = 1.0;
      const Matrix zr = z.row(i);
      log_p.row(r) = zr.array() - std::log(zr.array().exp().sum());
    }
    const double trace = -(y.transpose() * log_p).trace() / static_cast<double>(rows);

    const double mean_form = loss(Tensor(z), labels, mask).item();
    worst_loop = std::max(worst_loop, std::abs(mean_form - loop));
    worst_trace = std::max(worst_trace, std::abs(mean_form - trace));
  }
  return {worst_loop <= 1e-12 && worst_trace <= 1e-12,
          fmt("200 instances, max deviation %.2e from the scalar loop, %.2e from the trace form", worst_loop,
              worst_trace)};
}

struct Criterion {
  const char* name;
  std::function<Verdict()> check;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"gradient correctness", gradient_check},
      {"gate invariants", gate_invariants},
      {"Gumbel selection frequencies", gumbel_frequencies},
      {"permutation equivariance", equivariance},
      {"overfit sanity", overfit},
      {"depth stability", depth_stability},
      {"heterophily adaptivity", heterophily},
      {"ablation ordering", ablation_ordering},
      {"determinism", determinism},
      {"loss oracle", loss_oracle},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const int k = std::atoi(argv[i]);
    if (k < 1 || k > static_cast<int>(criteria.size())) {
      std::cerr << "usage: acceptance [criterion numbers 1-" << criteria.size() << "]\n";
      return 2;
    }
    selected.insert(k);
  }
  if (selected.empty()) {
    for (int k = 1; k <= static_cast<int>(criteria.size()); ++k) selected.insert(k);
  }

  std::ofstream report("acceptance_report.txt");
  int failed = 0;
  for (int k : selected) {
    const Criterion& c = criteria[static_cast<std::size_t>(k - 1)];
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    const std::string line = std::string(v.pass ? "PASS" : "FAIL") + ' ' + std::to_string(k) + ' ' + c.name + ": " + v.detail;
    std::cout << line << std::endl;
    report << line << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
