#include "gnnmoe/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <ostream>
#include <thread>

namespace gnnmoe {

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ContractError("train config: lr must be nonnegative");
  if (!(weight_decay >= 0.0)) throw ContractError("train config: weight_decay must be nonnegative");
  if (max_epochs < 1) throw ContractError("train config: max_epochs must be >= 1");
  if (patience < 1 || patience > max_epochs) throw ContractError("train config: patience must be in [1, max_epochs]");
  if (seeds.empty()) throw ContractError("train config: at least one seed is required");
  if (jobs < 1) throw ContractError("train config: jobs must be >= 1");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ContractError("train config: split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("train config: split fractions must sum to 1");
}

Rng make_stream(std::uint64_t seed, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), 0x9e3779b9u};
  return Rng(seq);
}

Splits make_splits(const Graph& g, const std::array<double, 3>& fractions, std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ContractError("make_splits: fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("make_splits: fractions must sum to 1");

  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(g.num_classes()));
  for (std::size_t i = 0; i < g.labels().size(); ++i) {
    by_class[static_cast<std::size_t>(g.labels()[i])].push_back(static_cast<int>(i));
  }
  Rng rng = make_stream(seed, 0);
  Splits s;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& nodes = by_class[c];
    if (nodes.empty()) continue;
    if (nodes.size() < 3) {
      throw ContractError("make_splits: class " + std::to_string(c) + " has " + std::to_string(nodes.size()) +
                          " nodes, at least 3 are needed to stratify");
    }
    std::shuffle(nodes.begin(), nodes.end(), rng);
    const auto n = static_cast<long>(nodes.size());
    long n_train = std::clamp(std::lround(fractions[0] * static_cast<double>(n)), 1L, n - 2);
    long n_val = std::clamp(std::lround(fractions[1] * static_cast<double>(n)), 1L, n - n_train - 1);
    s.train.insert(s.train.end(), nodes.begin(), nodes.begin() + n_train);
    s.val.insert(s.val.end(), nodes.begin() + n_train, nodes.begin() + n_train + n_val);
    s.test.insert(s.test.end(), nodes.begin() + n_train + n_val, nodes.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

void adamw_step(std::span<const Tensor> params, AdamWState& state, double lr, double weight_decay) {
  if (state.first_moment.size() != params.size()) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (const Tensor& p : params) {
      state.first_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
      state.second_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  ++state.step;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    Matrix& value = p.mutable_value();
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    if (m.rows() != value.rows() || m.cols() != value.cols()) throw DimensionError("adamw_step: moment shape mismatch");
    value *= (1.0 - lr * weight_decay);
    if (!p.has_grad()) continue;
    const Matrix& g = p.grad();
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    value.array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + state.eps);
  }
}

double evaluate(const GnnMoeModel& model, const Graph& g, std::span<const int> mask) {
  if (mask.empty()) throw ContractError("evaluate: empty node mask");
  NoGradGuard no_grad;
  const Tensor logits = model.forward(g);
  return accuracy(predict(logits.value()), g.labels(), mask);
}

TrainResult train_one(const GnnMoeModel& model, const Graph& g, const Splits& splits, const TrainConfig& cfg,
                      Rng& rng, std::ostream* log) {
  cfg.validate();
  if (splits.train.empty() || splits.val.empty()) throw ContractError("train_one: empty train or validation set");
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();

  std::vector<Tensor> params;
  for (const auto& [name, t] : model.parameters()) params.push_back(t);

  TrainState state;
  TrainResult result;
  for (state.epoch = 1; state.epoch <= cfg.max_epochs; ++state.epoch) {
    model.zero_grad();
    Tape::current().clear();
    const Tensor logits = model.forward(g, {.training = true, .rng = &rng});
    const Tensor train_loss = loss(logits, g.labels(), splits.train);
    if (!std::isfinite(train_loss.item())) {
      Tape::current().clear();
      throw DivergenceError("training diverged at epoch " + std::to_string(state.epoch) +
                            ": train loss is " + std::to_string(train_loss.item()));
    }
    backward(train_loss);
    adamw_step(params, state.optimizer, cfg.lr, cfg.weight_decay);

    EpochRecord rec;
    rec.epoch = state.epoch;
    rec.train_loss = train_loss.item();
    {
      NoGradGuard no_grad;
      const Tensor eval_logits = model.forward(g);
      rec.val_acc = accuracy(predict(eval_logits.value()), g.labels(), splits.val);
      rec.val_loss = loss(eval_logits, g.labels(), splits.val).item();
    }
    rec.elapsed_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    result.history.push_back(rec);
    if (log != nullptr) {
      *log << "epoch=" << rec.epoch << " train_loss=" << std::setprecision(17) << rec.train_loss
           << " val_acc=" << rec.val_acc << " val_loss=" << rec.val_loss << " elapsed_ms=" << std::setprecision(6)
           << rec.elapsed_ms << '\n';
    }

    const double score = cfg.stop_metric == StopMetric::ValAccuracy ? rec.val_acc : -rec.val_loss;
    if (state.epoch == 1 || score > state.best_score) {
      state.best_score = score;
      state.best_epoch = state.epoch;
      state.best_snapshot = model.snapshot();
      state.epochs_since_improvement = 0;
    } else if (++state.epochs_since_improvement >= cfg.patience) {
      break;
    }
  }
  model.restore(state.best_snapshot);
  model.zero_grad();
  result.best_epoch = state.best_epoch;
  result.best_val_acc = result.history[static_cast<std::size_t>(state.best_epoch - 1)].val_acc;
  result.total_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  return result;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw ContractError("mean_std: no values");
  MeanStd r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return r;
}

namespace {

struct SeedJob {
  SeedResult result;
  TrainResult training;
  std::optional<GnnMoeModel> model;
  std::exception_ptr error;
};

void run_one_seed(const GnnMoeConfig& model_cfg, const TrainConfig& cfg, const Graph& g, const SeedHooks& hooks,
                  std::uint64_t seed, SeedJob& job) {
  try {
    const Splits splits = hooks.splits ? *hooks.splits : make_splits(g, cfg.fractions, seed);
    Rng init_rng = make_stream(seed, 1);
    Rng train_rng = make_stream(seed, 2);
    GnnMoeModel model = GnnMoeModel::init(model_cfg, g.feature_dim(), g.num_classes(), init_rng);
    job.training = train_one(model, g, splits, cfg, train_rng);

    NoGradGuard no_grad;
    const std::vector<int> pred = predict(model.forward(g).value());
    job.result.seed = seed;
    job.result.train_acc = accuracy(pred, g.labels(), splits.train);
    job.result.val_acc = accuracy(pred, g.labels(), splits.val);
    job.result.test_acc = splits.test.empty() ? 0.0 : accuracy(pred, g.labels(), splits.test);
    job.result.epochs = static_cast<int>(job.training.history.size());
    job.result.best_epoch = job.training.best_epoch;
    job.result.train_ms = job.training.total_ms;
    job.model = std::move(model);
  } catch (...) {
    job.error = std::current_exception();
  }
}

}  // namespace

Summary run_seeds(const GnnMoeConfig& model_cfg, const TrainConfig& cfg, const Graph& g, const SeedHooks& hooks) {
  cfg.validate();
  model_cfg.validate();
  std::vector<SeedJob> jobs(cfg.seeds.size());
  if (cfg.jobs <= 1 || cfg.seeds.size() == 1) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) run_one_seed(model_cfg, cfg, g, hooks, cfg.seeds[i], jobs[i]);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> workers;
    const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), cfg.seeds.size());
    for (std::size_t w = 0; w < n_workers; ++w) {
      workers.emplace_back([&]() {
        for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
          run_one_seed(model_cfg, cfg, g, hooks, cfg.seeds[i], jobs[i]);
        }
      });
    }
  }

  Summary s;
  for (auto& job : jobs) {
    if (job.error) std::rethrow_exception(job.error);
  }
  std::vector<double> test, val, train, epochs;
  for (auto& job : jobs) {
    s.runs.push_back(job.result);
    test.push_back(job.result.test_acc);
    val.push_back(job.result.val_acc);
    train.push_back(job.result.train_acc);
    epochs.push_back(job.result.epochs);
    s.total_ms += job.result.train_ms;
    if (hooks.on_finished) hooks.on_finished(job.result, *job.model, job.training);
  }
  s.test_acc = mean_std(test);
  s.val_acc = mean_std(val);
  s.train_acc = mean_std(train);
  s.epochs = mean_std(epochs);
  return s;
}

}  // namespace gnnmoe
