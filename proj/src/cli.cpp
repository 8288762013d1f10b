#include "gnnmoe/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cinttypes>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace gnnmoe::cli {

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(trim(cur));
  return parts;
}

[[noreturn]] void bad_value(const std::string& key, const Setting& s, const std::string& expected) {
  throw ConfigError(s.origin + ": key '" + key + "': invalid value '" + s.value + "' (expected " + expected + ")");
}

double real_value(const std::string& key, const Setting& s) {
  double v = 0.0;
  const char* b = s.value.data();
  auto [ptr, ec] = std::from_chars(b, b + s.value.size(), v);
  if (ec != std::errc() || ptr != b + s.value.size() || !std::isfinite(v)) bad_value(key, s, "a real number");
  return v;
}

long long int_value(const std::string& key, const Setting& s) {
  long long v = 0;
  const char* b = s.value.data();
  auto [ptr, ec] = std::from_chars(b, b + s.value.size(), v);
  if (ec != std::errc() || ptr != b + s.value.size()) bad_value(key, s, "an integer");
  return v;
}

bool bool_value(const std::string& key, const Setting& s) {
  if (s.value == "true" || s.value == "1") return true;
  if (s.value == "false" || s.value == "0") return false;
  bad_value(key, s, "true or false");
}

std::string hex64(std::uint64_t v) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << v;
  return o.str();
}

const char* to_string(DropoutSite site) {
  switch (site) {
    case DropoutSite::Experts:
      return "experts";
    case DropoutSite::BlockOutput:
      return "block";
    case DropoutSite::None:
      return "none";
  }
  return "?";
}

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? "," : "") + std::to_string(seeds[i]);
  return s;
}

}  // namespace

std::string format_real(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const std::string& part : split(text, ',')) {
    const auto dash = part.find('-');
    auto parse = [&](const std::string& t) {
      std::uint64_t v = 0;
      auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
        throw ConfigError("invalid seed list '" + text + "'");
      }
      return v;
    };
    if (dash == std::string::npos) {
      seeds.push_back(parse(part));
    } else {
      const auto lo = parse(part.substr(0, dash)), hi = parse(part.substr(dash + 1));
      if (hi < lo) throw ConfigError("invalid seed range '" + part + "'");
      for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
    }
  }
  if (seeds.empty()) throw ConfigError("empty seed list");
  return seeds;
}

void Settings::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    const std::string origin = path.string() + ":" + std::to_string(line_no);
    if (eq == std::string::npos || eq == 0) throw ConfigError(origin + ": expected key=value");
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)), origin);
  }
}

void Settings::set(const std::string& assignment, const std::string& origin) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(origin + ": expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), origin);
}

void Settings::set(const std::string& key, const std::string& value, const std::string& origin) {
  values_[key] = Setting{value, origin};
}

const Setting* Settings::find(const std::string& key) const {
  auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

RunConfig resolve(const Settings& settings) {
  RunConfig cfg;
  std::optional<std::filesystem::path> data_dir;
  bool undirected = true;
  std::optional<std::filesystem::path> edges, features, labels, splits;

  for (const auto& [key, s] : settings.all()) {
    try {
      if (key == "data") {
        data_dir = s.value;
      } else if (key == "edges") {
        edges = s.value;
      } else if (key == "features") {
        features = s.value;
      } else if (key == "labels") {
        labels = s.value;
      } else if (key == "splits") {
        if (!s.value.empty()) splits = s.value;
      } else if (key == "undirected") {
        undirected = bool_value(key, s);
      } else if (key == "hidden_dim") {
        cfg.model.hidden_dim = int_value(key, s);
      } else if (key == "num_blocks") {
        cfg.model.num_blocks = static_cast<int>(int_value(key, s));
      } else if (key == "prop") {
        cfg.model.prop_kind = prop_kind_from_string(s.value);
      } else if (key == "dropout") {
        cfg.model.dropout = real_value(key, s);
      } else if (key == "dropout_site") {
        if (s.value == "experts") {
          cfg.model.dropout_site = DropoutSite::Experts;
        } else if (s.value == "block") {
          cfg.model.dropout_site = DropoutSite::BlockOutput;
        } else if (s.value == "none") {
          cfg.model.dropout_site = DropoutSite::None;
        } else {
          bad_value(key, s, "experts, block or none");
        }
      } else if (key == "tau") {
        cfg.model.tau = real_value(key, s);
      } else if (key == "gate_hidden") {
        cfg.model.gate_hidden = int_value(key, s);
      } else if (key == "ablate_ffn") {
        cfg.model.ablate_ffn = bool_value(key, s);
      } else if (key == "ablate_residual") {
        cfg.model.ablate_residual = bool_value(key, s);
      } else if (key == "forced_expert") {
        if (s.value == "none") {
          cfg.model.forced_expert.reset();
        } else {
          cfg.model.forced_expert = expert_kind_from_string(s.value);
        }
      } else if (key == "attention_slope") {
        cfg.model.attention_slope = real_value(key, s);
      } else if (key == "ln_eps") {
        cfg.model.ln_eps = real_value(key, s);
      } else if (key == "lr") {
        cfg.train.lr = real_value(key, s);
      } else if (key == "weight_decay") {
        cfg.train.weight_decay = real_value(key, s);
      } else if (key == "max_epochs") {
        cfg.train.max_epochs = static_cast<int>(int_value(key, s));
      } else if (key == "patience") {
        cfg.train.patience = static_cast<int>(int_value(key, s));
      } else if (key == "seeds") {
        cfg.train.seeds = parse_seed_list(s.value);
      } else if (key == "fractions") {
        const auto parts = split(s.value, ',');
        if (parts.size() != 3) bad_value(key, s, "three comma-separated fractions");
        for (std::size_t i = 0; i < 3; ++i) cfg.train.fractions[i] = real_value(key, Setting{parts[i], s.origin});
      } else if (key == "stop_metric") {
        if (s.value == "val_acc") {
          cfg.train.stop_metric = StopMetric::ValAccuracy;
        } else if (s.value == "val_loss") {
          cfg.train.stop_metric = StopMetric::ValLoss;
        } else {
          bad_value(key, s, "val_acc or val_loss");
        }
      } else if (key == "jobs") {
        cfg.train.jobs = static_cast<int>(int_value(key, s));
      } else if (key == "fingerprint") {
        std::uint64_t v = 0;
        auto [ptr, ec] = std::from_chars(s.value.data(), s.value.data() + s.value.size(), v, 16);
        if (ec != std::errc() || ptr != s.value.data() + s.value.size()) bad_value(key, s, "16 hex digits");
        cfg.expected_fingerprint = v;
      } else {
        throw ConfigError(s.origin + ": unknown key '" + key + "'");
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(s.origin + ": key '" + key + "': " + e.what());
    }
  }

  if (data_dir) cfg.data = DatasetOnDisk::in_directory(*data_dir, undirected);
  cfg.data.undirected = undirected;
  if (edges) cfg.data.edges = *edges;
  if (features) cfg.data.features = *features;
  if (labels) cfg.data.labels = *labels;
  if (splits) cfg.data.splits = *splits;

  try {
    cfg.model.validate();
    cfg.train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  return cfg;
}

std::vector<std::pair<std::string, std::string>> to_key_values(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("edges", cfg.data.edges.string());
  kv.emplace_back("features", cfg.data.features.string());
  kv.emplace_back("labels", cfg.data.labels.string());
  kv.emplace_back("splits", cfg.data.splits ? cfg.data.splits->string() : "");
  kv.emplace_back("undirected", cfg.data.undirected ? "true" : "false");
  kv.emplace_back("hidden_dim", std::to_string(cfg.model.hidden_dim));
  kv.emplace_back("num_blocks", std::to_string(cfg.model.num_blocks));
  kv.emplace_back("prop", to_string(cfg.model.prop_kind));
  kv.emplace_back("dropout", format_real(cfg.model.dropout));
  kv.emplace_back("dropout_site", to_string(cfg.model.dropout_site));
  kv.emplace_back("tau", format_real(cfg.model.tau));
  kv.emplace_back("gate_hidden", std::to_string(cfg.model.gate_hidden));
  kv.emplace_back("ablate_ffn", cfg.model.ablate_ffn ? "true" : "false");
  kv.emplace_back("ablate_residual", cfg.model.ablate_residual ? "true" : "false");
  kv.emplace_back("forced_expert", cfg.model.forced_expert ? gnnmoe::to_string(*cfg.model.forced_expert) : "none");
  kv.emplace_back("attention_slope", format_real(cfg.model.attention_slope));
  kv.emplace_back("ln_eps", format_real(cfg.model.ln_eps));
  kv.emplace_back("lr", format_real(cfg.train.lr));
  kv.emplace_back("weight_decay", format_real(cfg.train.weight_decay));
  kv.emplace_back("max_epochs", std::to_string(cfg.train.max_epochs));
  kv.emplace_back("patience", std::to_string(cfg.train.patience));
  kv.emplace_back("seeds", join_seeds(cfg.train.seeds));
  kv.emplace_back("fractions", format_real(cfg.train.fractions[0]) + "," + format_real(cfg.train.fractions[1]) + "," +
                                   format_real(cfg.train.fractions[2]));
  kv.emplace_back("stop_metric", cfg.train.stop_metric == StopMetric::ValAccuracy ? "val_acc" : "val_loss");
  kv.emplace_back("jobs", std::to_string(cfg.train.jobs));
  return kv;
}

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::string data;
  std::string edges, features, labels;
  std::vector<std::string> ablate;
  std::string prop;
  std::string seeds;
  int jobs = 0;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "key=value config file (a run manifest replays a run)");
  cmd->add_option("--set", o.sets, "override, key=value (repeatable)");
  cmd->add_option("--data", o.data, "dataset directory with edges.tsv, features.csv, labels.txt");
  cmd->add_option("--edges", o.edges, "edge list file");
  cmd->add_option("--features", o.features, "feature file (.csv or .bin)");
  cmd->add_option("--labels", o.labels, "label file");
  cmd->add_option("--ablate", o.ablate, "ablate a component: ffn or residual (repeatable)")
      ->check(CLI::IsMember({"ffn", "residual"}));
  cmd->add_option("--prop", o.prop, "propagation: gcn, sage or gat")->check(CLI::IsMember({"gcn", "sage", "gat"}));
  cmd->add_option("--seeds", o.seeds, "seed list, e.g. 0-9 or 1,5,7");
  cmd->add_option("--jobs", o.jobs, "seeds trained concurrently")->check(CLI::PositiveNumber);
}

RunConfig resolve_common(const CommonOptions& o) {
  Settings s;
  if (!o.config.empty()) s.load_file(o.config);
  for (const auto& a : o.sets) s.set(a, "--set");
  if (!o.data.empty()) {
    // --data supersedes individual files from the config file.
    for (const char* k : {"edges", "features", "labels", "splits"}) s.erase(k);
    s.set("data", o.data, "--data");
  }
  if (!o.edges.empty()) s.set("edges", o.edges, "--edges");
  if (!o.features.empty()) s.set("features", o.features, "--features");
  if (!o.labels.empty()) s.set("labels", o.labels, "--labels");
  for (const auto& a : o.ablate) s.set(a == "ffn" ? "ablate_ffn" : "ablate_residual", "true", "--ablate");
  if (!o.prop.empty()) s.set("prop", o.prop, "--prop");
  if (!o.seeds.empty()) s.set("seeds", o.seeds, "--seeds");
  if (o.jobs > 0) s.set("jobs", std::to_string(o.jobs), "--jobs");

  RunConfig cfg = resolve(s);
  if (cfg.data.edges.empty() || cfg.data.features.empty() || cfg.data.labels.empty()) {
    throw ConfigError("no dataset given: use --data or --edges/--features/--labels");
  }
  return cfg;
}

Graph load_checked(const RunConfig& cfg) {
  for (const auto& p : {cfg.data.edges, cfg.data.features, cfg.data.labels}) {
    if (!std::filesystem::exists(p)) throw ParseError(p, 0, "file not found");
  }
  if (cfg.expected_fingerprint) {
    const auto actual = fingerprint(cfg.data);
    if (actual != *cfg.expected_fingerprint) {
      throw ConfigError("dataset fingerprint " + hex64(actual) + " does not match manifest " +
                        hex64(*cfg.expected_fingerprint));
    }
  }
  return load_dataset(cfg.data);
}

void write_manifest(const RunConfig& cfg, std::uint64_t fp, const std::filesystem::path& out_dir) {
  std::ofstream m(out_dir / "manifest.txt");
  if (!m) throw std::runtime_error("cannot write " + (out_dir / "manifest.txt").string());
  m << "# run manifest; replay with: gnnmoe train --config <this file> --out <dir>\n";
  m << "# out=" << out_dir.string() << '\n';
  for (const auto& [k, v] : to_key_values(cfg)) m << k << '=' << v << '\n';
  m << "fingerprint=" << hex64(fp) << '\n';
}

void write_summary(std::ostream& o, const RunConfig& cfg, const Summary& s) {
  o << "variant=" << cfg.model.variant_name() << '\n';
  o << "prop=" << to_string(cfg.model.prop_kind) << '\n';
  o << "num_blocks=" << cfg.model.num_blocks << '\n';
  o << "num_seeds=" << s.runs.size() << '\n';
  o << "test_acc_mean=" << format_real(s.test_acc.mean) << '\n';
  o << "test_acc_std=" << format_real(s.test_acc.std) << '\n';
  o << "val_acc_mean=" << format_real(s.val_acc.mean) << '\n';
  o << "val_acc_std=" << format_real(s.val_acc.std) << '\n';
  o << "train_acc_mean=" << format_real(s.train_acc.mean) << '\n';
  o << "epochs_mean=" << format_real(s.epochs.mean) << '\n';
  for (const auto& r : s.runs) {
    const std::string p = "seed." + std::to_string(r.seed) + ".";
    o << p << "test_acc=" << format_real(r.test_acc) << '\n';
    o << p << "val_acc=" << format_real(r.val_acc) << '\n';
    o << p << "train_acc=" << format_real(r.train_acc) << '\n';
    o << p << "epochs=" << r.epochs << '\n';
    o << p << "best_epoch=" << r.best_epoch << '\n';
  }
  o << "timing.total_ms=" << format_real(s.total_ms) << '\n';
  for (const auto& r : s.runs) o << "timing.seed." << r.seed << ".ms=" << format_real(r.train_ms) << '\n';
}

Summary train_with_outputs(const RunConfig& cfg, const Graph& g, const std::filesystem::path& out_dir) {
  SeedHooks hooks;
  hooks.splits = load_splits(cfg.data, static_cast<std::size_t>(g.num_nodes()));
  hooks.on_finished = [&](const SeedResult& r, const GnnMoeModel& model, const TrainResult& tr) {
    const std::string stem = "seed_" + std::to_string(r.seed);
    save_checkpoint(model, out_dir / stem);
    std::ofstream log(out_dir / ("history_" + stem + ".log"));
    for (const auto& e : tr.history) {
      log << "epoch=" << e.epoch << " train_loss=" << format_real(e.train_loss)
          << " val_acc=" << format_real(e.val_acc) << " val_loss=" << format_real(e.val_loss)
          << " elapsed_ms=" << format_real(e.elapsed_ms) << '\n';
    }
  };
  return run_seeds(cfg.model, cfg.train, g, hooks);
}

int cmd_gen(const SyntheticSpec& spec, const std::string& out, bool binary, std::ostream& os) {
  const Graph g = generate_synthetic(spec);
  const std::filesystem::path dir(out);
  write_dataset(g, dir);
  if (binary) {
    std::filesystem::remove(dir / "features.csv");
    save_binary_features(g.features(), dir / "features.bin");
  }
  std::ofstream echo(dir / "spec.txt");
  echo << "nodes=" << spec.num_nodes << "\nclasses=" << spec.num_classes << "\ndim=" << spec.feature_dim
       << "\nhomophily=" << format_real(spec.homophily) << "\ndegree=" << format_real(spec.mean_degree)
       << "\nnoise=" << format_real(spec.feature_noise) << "\nseed=" << spec.seed
       << "\nmeasured_homophily=" << format_real(measure_homophily(g)) << '\n';
  os << "wrote " << g.num_nodes() << " nodes, " << g.num_arcs() / 2 << " edges to " << dir.string() << '\n';
  return 0;
}

int cmd_train(const CommonOptions& o, const std::string& out, std::ostream& os) {
  const RunConfig cfg = resolve_common(o);
  const Graph g = load_checked(cfg);
  const std::filesystem::path dir(out);
  std::filesystem::create_directories(dir);
  write_manifest(cfg, fingerprint(cfg.data), dir);
  const Summary s = train_with_outputs(cfg, g, dir);
  std::ofstream summary(dir / "summary.txt");
  write_summary(summary, cfg, s);
  os << cfg.model.variant_name() << ": test accuracy " << format_real(s.test_acc.mean) << " +- "
     << format_real(s.test_acc.std) << " over " << s.runs.size() << " seeds\n";
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& split_name,
             std::uint64_t split_seed, std::ostream& os) {
  const RunConfig cfg = resolve_common(o);
  const Graph g = load_checked(cfg);
  Rng scratch(0);
  const GnnMoeModel model = GnnMoeModel::init(cfg.model, g.feature_dim(), g.num_classes(), scratch);
  load_checkpoint(model, checkpoint);
  std::vector<int> mask;
  if (split_name == "all") {
    mask.resize(static_cast<std::size_t>(g.num_nodes()));
    std::iota(mask.begin(), mask.end(), 0);
  } else {
    const auto fixed = load_splits(cfg.data, static_cast<std::size_t>(g.num_nodes()));
    const Splits s = fixed ? *fixed : make_splits(g, cfg.train.fractions, split_seed);
    mask = split_name == "train" ? s.train : split_name == "val" ? s.val : s.test;
  }
  os << "split=" << split_name << "\naccuracy=" << format_real(evaluate(model, g, mask)) << "\nnodes=" << mask.size()
     << '\n';
  return 0;
}

int cmd_sweep_depth(const CommonOptions& o, const std::vector<int>& depths, const std::string& out_csv,
                    std::ostream& os) {
  if (depths.empty()) throw ConfigError("sweep-depth: empty depth list");
  const RunConfig base = resolve_common(o);
  const Graph g = load_checked(base);
  std::ostringstream table;
  table << "variant,depth,mean_acc,std_acc,mean_epochs\n";
  for (const bool baseline : {false, true}) {
    for (int depth : depths) {
      RunConfig cfg = base;
      cfg.model.num_blocks = depth;
      if (baseline) {
        cfg.model.forced_expert = ExpertKind::PP;
        cfg.model.ablate_residual = true;
      }
      SeedHooks hooks;
      hooks.splits = load_splits(cfg.data, static_cast<std::size_t>(g.num_nodes()));
      const Summary s = run_seeds(cfg.model, cfg.train, g, hooks);
      table << (baseline ? "baseline" : "gnnmoe") << ',' << depth << ',' << format_real(s.test_acc.mean) << ','
            << format_real(s.test_acc.std) << ',' << format_real(s.epochs.mean) << '\n';
    }
  }
  os << table.str();
  if (!out_csv.empty()) {
    std::ofstream f(out_csv);
    if (!f) throw std::runtime_error("cannot write " + out_csv);
    f << table.str();
  }
  return 0;
}

int cmd_bench(const CommonOptions& o, std::ostream& os) {
  const RunConfig cfg = resolve_common(o);
  const Graph g = load_checked(cfg);
  SeedHooks hooks;
  hooks.splits = load_splits(cfg.data, static_cast<std::size_t>(g.num_nodes()));
  const Summary s = run_seeds(cfg.model, cfg.train, g, hooks);
  double epochs = 0.0;
  for (const auto& r : s.runs) epochs += r.epochs;
  os << "nodes=" << g.num_nodes() << '\n'
     << "edges=" << g.num_arcs() / (g.undirected() ? 2 : 1) << '\n'
     << "seeds=" << s.runs.size() << '\n'
     << "epochs_to_stop=" << format_real(s.epochs.mean) << '\n'
     << "train_ms=" << format_real(s.total_ms / static_cast<double>(s.runs.size())) << '\n'
     << "ms_per_epoch=" << format_real(s.total_ms / epochs) << '\n'
     << "test_acc_mean=" << format_real(s.test_acc.mean) << '\n';
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"GNNMoE node classification: synthetic data, training and experiments"};
  app.require_subcommand(1);

  SyntheticSpec spec;
  std::string gen_out;
  bool gen_binary = false;
  auto* gen = app.add_subcommand("gen", "generate a synthetic graph with controlled homophily");
  gen->add_option("--nodes", spec.num_nodes, "number of nodes")->check(CLI::Range(2, 100000000));
  gen->add_option("--classes", spec.num_classes, "number of classes")->check(CLI::Range(1, 1000000));
  gen->add_option("--dim", spec.feature_dim, "feature dimension (>= classes)")->check(CLI::Range(1, 1000000));
  gen->add_option("--homophily", spec.homophily, "edge homophily in [0, 1]")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--degree", spec.mean_degree, "mean degree")->check(CLI::Range(1.0, 1e9));
  gen->add_option("--noise", spec.feature_noise, "feature noise std")->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", spec.seed, "generator seed");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_flag("--binary-features", gen_binary, "write features.bin instead of features.csv");

  CommonOptions train_opts;
  std::string train_out;
  auto* train = app.add_subcommand("train", "train over seeds and write summary, manifest and checkpoints");
  add_common(train, train_opts);
  train->add_option("--out", train_out, "run directory")->required();

  CommonOptions eval_opts;
  std::string eval_ckpt, eval_split = "test";
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint stem (without .bin/.manifest)")->required();
  eval->add_option("--split", eval_split, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  eval->add_option("--split-seed", eval_seed, "seed used to regenerate the split");

  CommonOptions sweep_opts;
  std::vector<int> depths{2, 4, 8, 16};
  std::string sweep_csv;
  auto* sweep = app.add_subcommand("sweep-depth", "accuracy versus number of blocks, with an over-smoothing baseline");
  add_common(sweep, sweep_opts);
  sweep->add_option("--depths", depths, "block counts")->delimiter(',')->check(CLI::PositiveNumber);
  sweep->add_option("--out", sweep_csv, "also write the table to this CSV file");

  CommonOptions bench_opts;
  auto* bench = app.add_subcommand("bench", "epochs to early stop and training wall-clock");
  add_common(bench, bench_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (gen->parsed()) return cmd_gen(spec, gen_out, gen_binary, out);
    if (train->parsed()) return cmd_train(train_opts, train_out, out);
    if (eval->parsed()) return cmd_eval(eval_opts, eval_ckpt, eval_split, eval_seed, out);
    if (sweep->parsed()) return cmd_sweep_depth(sweep_opts, depths, sweep_csv, out);
    if (bench->parsed()) return cmd_bench(bench_opts, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace gnnmoe::cli
