#pragma once

#include "gnnmoe/model.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

namespace gnnmoe {

enum class StopMetric { ValAccuracy, ValLoss };

struct TrainConfig {
  double lr = 0.01;
  double weight_decay = 5e-4;
  int max_epochs = 500;
  int patience = 100;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::array<double, 3> fractions{0.48, 0.32, 0.20};
  StopMetric stop_metric = StopMetric::ValAccuracy;
  int jobs = 1;

  void validate() const;
};

struct Splits {
  std::vector<int> train, val, test;
};

// Stratified by class: each class is shuffled under `seed` and cut at the
// fraction boundaries. Every class needs at least three nodes.
Splits make_splits(const Graph& g, const std::array<double, 3>& fractions, std::uint64_t seed);

struct AdamWState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled decay (p -= lr * wd * p) followed by a bias-corrected Adam step.
// Parameters without a gradient are only decayed.
void adamw_step(std::span<const Tensor> params, AdamWState& state, double lr, double weight_decay);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double val_loss = 0.0;
  double elapsed_ms = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_acc = 0.0;
  double total_ms = 0.0;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainState {
  AdamWState optimizer;
  int epoch = 0;
  double best_score = 0.0;
  int best_epoch = 0;
  std::vector<Matrix> best_snapshot;
  int epochs_since_improvement = 0;
};

// Full-batch training with early stopping. On return the model holds the
// weights of the best validation epoch (first occurrence on ties).
// `log`, when given, receives one "epoch=... train_loss=... val_acc=... elapsed_ms=..." line per epoch.
TrainResult train_one(const GnnMoeModel& model, const Graph& g, const Splits& splits, const TrainConfig& cfg,
                      Rng& rng, std::ostream* log = nullptr);

double evaluate(const GnnMoeModel& model, const Graph& g, std::span<const int> mask);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample (n - 1) standard deviation, 0 for one value
};

MeanStd mean_std(std::span<const double> values);

struct SeedResult {
  std::uint64_t seed = 0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  int epochs = 0;
  int best_epoch = 0;
  double train_ms = 0.0;
};

struct Summary {
  std::vector<SeedResult> runs;
  MeanStd test_acc;
  MeanStd val_acc;
  MeanStd train_acc;
  MeanStd epochs;
  double total_ms = 0.0;
};

struct SeedHooks {
  // Called after each seed finishes, with the model at its best epoch.
  std::function<void(const SeedResult&, const GnnMoeModel&, const TrainResult&)> on_finished;
  // Fixed splits shared by all seeds instead of per-seed stratified ones.
  std::optional<Splits> splits;
};

// Per seed: splits, fresh model, training and test evaluation. Seeds may run
// on `cfg.jobs` threads; results are reported in seed order.
Summary run_seeds(const GnnMoeConfig& model_cfg, const TrainConfig& cfg, const Graph& g,
                  const SeedHooks& hooks = {});

// Independent streams derived from one run seed.
Rng make_stream(std::uint64_t seed, std::uint64_t purpose);

}  // namespace gnnmoe
