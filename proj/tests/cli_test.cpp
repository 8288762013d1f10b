#include "support.hpp"

#include "gnnmoe/cli.hpp"

#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

using namespace gnnmoe;
using testing::TempDir;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "gnnmoe");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos && line[0] != '#') kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

// Summary metrics without the wall-clock lines.
std::string metrics_only(const std::filesystem::path& summary) {
  std::istringstream in(read_file(summary));
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.rfind("timing.", 0) != 0) out += line + '\n';
  }
  return out;
}

void gen(const std::filesystem::path& dir, int nodes, double h, int seed = 1) {
  const Outcome r = run_cli({"gen", "--nodes", std::to_string(nodes), "--classes", "3", "--dim", "6", "--homophily",
                             cli::format_real(h), "--degree", "6", "--noise", "0.5", "--seed",
                             std::to_string(seed), "--out", dir.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
}

const std::vector<std::string> kQuick{"--set", "hidden_dim=8", "--set", "gate_hidden=4", "--set", "max_epochs=12",
                                      "--set", "patience=12"};

std::vector<std::string> with_quick(std::vector<std::string> args) {
  args.insert(args.end(), kQuick.begin(), kQuick.end());
  return args;
}

}  // namespace

TEST_CASE("gen writes a deterministic dataset") {
  TempDir a, b;
  const Outcome r = run_cli({"gen", "--nodes", "100", "--classes", "2", "--dim", "4", "--homophily", "0.7",
                             "--seed", "3", "--out", a.path().string()});
  REQUIRE(r.code == 0);
  for (const char* f : {"edges.tsv", "features.csv", "labels.txt", "spec.txt"}) CHECK(std::filesystem::exists(a / f));
  const std::string labels = read_file(a / "labels.txt");
  CHECK(std::count(labels.begin(), labels.end(), '\n') == 100);
  CHECK(key_values(read_file(a / "spec.txt"))["nodes"] == "100");

  REQUIRE(run_cli({"gen", "--nodes", "100", "--classes", "2", "--dim", "4", "--homophily", "0.7", "--seed", "3",
                   "--out", b.path().string()})
              .code == 0);
  for (const char* f : {"edges.tsv", "features.csv", "labels.txt"}) CHECK(read_file(a / f) == read_file(b / f));

  TempDir bin;
  REQUIRE(run_cli({"gen", "--nodes", "50", "--classes", "2", "--dim", "4", "--binary-features", "--out",
                   bin.path().string()})
              .code == 0);
  CHECK(std::filesystem::exists(bin / "features.bin"));
  CHECK_FALSE(std::filesystem::exists(bin / "features.csv"));
}

TEST_CASE("gen rejects invalid flags") {
  TempDir dir;
  CHECK(run_cli({"gen", "--homophily", "1.5", "--out", dir.path().string()}).code != 0);
  CHECK(run_cli({"gen", "--nodes", "10"}).code != 0);
  CHECK(run_cli({"gen", "--classes", "5", "--dim", "3", "--out", dir.path().string()}).code != 0);
  CHECK(run_cli({"frobnicate"}).code != 0);
}

TEST_CASE("train writes manifest, summary, checkpoints and histories") {
  TempDir data, out;
  gen(data.path(), 200, 0.9);
  const Outcome r = run_cli(with_quick({"train", "--data", data.path().string(), "--seeds", "0,1", "--out",
                                        out.path().string()}));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("full: test accuracy") != std::string::npos);
  for (const char* f : {"manifest.txt", "summary.txt", "seed_0.bin", "seed_0.manifest", "seed_1.bin",
                        "history_seed_1.log"}) {
    CHECK_MESSAGE(std::filesystem::exists(out / f), f);
  }
  auto summary = key_values(read_file(out / "summary.txt"));
  CHECK(summary["variant"] == "full");
  CHECK(summary["num_seeds"] == "2");
  // Three balanced classes: the majority baseline is about 1/3.
  CHECK(std::stod(summary["test_acc_mean"]) > 0.4);
  CHECK(summary.count("timing.total_ms") == 1);

  auto manifest = key_values(read_file(out / "manifest.txt"));
  CHECK(manifest["hidden_dim"] == "8");
  CHECK(manifest["seeds"] == "0,1");
  CHECK(manifest["fingerprint"].size() == 16);

  SUBCASE("replaying the manifest reproduces the metrics bitwise") {
    TempDir again;
    const Outcome rr =
        run_cli({"train", "--config", (out / "manifest.txt").string(), "--out", again.path().string()});
    REQUIRE_MESSAGE(rr.code == 0, rr.err);
    CHECK(metrics_only(out / "summary.txt") == metrics_only(again / "summary.txt"));
    CHECK(read_file(out / "seed_0.bin") == read_file(again / "seed_0.bin"));
  }

  SUBCASE("a changed dataset fails the fingerprint check on replay") {
    {
      std::string labels = read_file(data / "labels.txt");
      labels[0] = labels[0] == '0' ? '1' : '0';
      std::ofstream(data / "labels.txt", std::ios::binary) << labels;
    }
    TempDir again;
    const Outcome rr =
        run_cli({"train", "--config", (out / "manifest.txt").string(), "--out", again.path().string()});
    CHECK(rr.code != 0);
    CHECK(rr.err.find("fingerprint") != std::string::npos);
  }

  SUBCASE("eval reproduces the per-seed test accuracy from the checkpoint") {
    const Outcome e = run_cli(with_quick({"eval", "--data", data.path().string(), "--checkpoint",
                                          (out / "seed_1").string(), "--split", "test", "--split-seed", "1"}));
    REQUIRE_MESSAGE(e.code == 0, e.err);
    CHECK(key_values(e.out)["accuracy"] == summary["seed.1.test_acc"]);
  }
}

TEST_CASE("ablation flags label the summary") {
  TempDir data, out, out2;
  gen(data.path(), 120, 0.8);
  REQUIRE(run_cli(with_quick({"train", "--data", data.path().string(), "--seeds", "0", "--ablate", "ffn", "--out",
                              out.path().string()}))
              .code == 0);
  CHECK(key_values(read_file(out / "summary.txt"))["variant"] == "w/o FFN");
  REQUIRE(run_cli(with_quick({"train", "--data", data.path().string(), "--seeds", "0", "--ablate", "residual",
                              "--prop", "gat", "--out", out2.path().string()}))
              .code == 0);
  auto kv = key_values(read_file(out2 / "summary.txt"));
  CHECK(kv["variant"] == "w/o AIR/AR");
  CHECK(kv["prop"] == "gat");
}

TEST_CASE("errors name their source") {
  TempDir data, out;
  gen(data.path(), 60, 0.5);
  std::filesystem::remove(data / "labels.txt");
  Outcome r = run_cli(with_quick({"train", "--data", data.path().string(), "--seeds", "0", "--out",
                                  out.path().string()}));
  CHECK(r.code != 0);
  CHECK(r.err.find((data / "labels.txt").string()) != std::string::npos);

  gen(data.path(), 60, 0.5);
  {
    std::ofstream cfg(data / "bad.cfg");
    cfg << "# comment\nhidden_dim=8\nlearning_rate=0.1\n";
  }
  r = run_cli({"train", "--config", (data / "bad.cfg").string(), "--data", data.path().string(), "--out",
               out.path().string()});
  CHECK(r.code != 0);
  CHECK(r.err.find("learning_rate") != std::string::npos);
  CHECK(r.err.find("bad.cfg:3") != std::string::npos);

  r = run_cli(with_quick({"train", "--data", data.path().string(), "--set", "dropout=abc", "--out",
                          out.path().string()}));
  CHECK(r.code != 0);
  CHECK(r.err.find("dropout") != std::string::npos);
}

TEST_CASE("settings precedence") {
  TempDir dir;
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << "hidden_dim=16\nlr=0.05\nseeds=0-3\n";
  }
  cli::Settings s;
  s.load_file(dir / "run.cfg");
  s.set("lr=0.1");
  const cli::RunConfig cfg = cli::resolve(s);
  CHECK(cfg.model.hidden_dim == 16);
  CHECK(cfg.train.lr == 0.1);
  CHECK(cfg.train.seeds == std::vector<std::uint64_t>{0, 1, 2, 3});
  CHECK(s.find("lr")->origin == "command line");
  CHECK(s.find("hidden_dim")->origin == (dir / "run.cfg").string() + ":1");

  CHECK(cli::parse_seed_list("0-2,7") == std::vector<std::uint64_t>{0, 1, 2, 7});
  CHECK_THROWS(cli::parse_seed_list("3-1"));
  CHECK_THROWS(cli::parse_seed_list("x"));
  CHECK_THROWS(s.set("novalue"));

  // Canonical key-values resolve back to the same configuration.
  cli::Settings replay;
  for (const auto& [k, v] : cli::to_key_values(cfg)) replay.set(k, v, "replay");
  CHECK(cli::to_key_values(cli::resolve(replay)) == cli::to_key_values(cfg));
}

TEST_CASE("sweep-depth emits model and baseline rows") {
  TempDir data, out;
  gen(data.path(), 60, 0.8);
  const Outcome r = run_cli({"sweep-depth", "--data", data.path().string(), "--seeds", "0", "--depths", "2,4,8,16",
                             "--set", "hidden_dim=4", "--set", "gate_hidden=2", "--set", "max_epochs=2", "--set",
                             "patience=2", "--out", (out / "depth.csv").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "variant,depth,mean_acc,std_acc,mean_epochs");
  int gnnmoe_rows = 0, baseline_rows = 0;
  while (std::getline(lines, line)) {
    gnnmoe_rows += line.rfind("gnnmoe,", 0) == 0;
    baseline_rows += line.rfind("baseline,", 0) == 0;
  }
  CHECK(gnnmoe_rows == 4);
  CHECK(baseline_rows == 4);
  CHECK(read_file(out / "depth.csv") == r.out);
}

TEST_CASE("bench reports bounded, deterministic epoch counts and scales with size") {
  std::vector<double> ms_per_epoch;
  for (int nodes : {500, 1000, 2000}) {
    TempDir data;
    gen(data.path(), nodes, 0.8);
    const std::vector<std::string> args{"bench", "--data", data.path().string(), "--seeds", "0", "--set",
                                        "hidden_dim=16", "--set", "max_epochs=15", "--set", "patience=5"};
    const Outcome a = run_cli(args);
    REQUIRE_MESSAGE(a.code == 0, a.err);
    auto kv = key_values(a.out);
    const double epochs = std::stod(kv["epochs_to_stop"]);
    CHECK(epochs >= 1.0);
    CHECK(epochs <= 15.0);
    CHECK(std::stoi(kv["nodes"]) == nodes);
    CHECK(key_values(run_cli(args).out)["epochs_to_stop"] == kv["epochs_to_stop"]);
    ms_per_epoch.push_back(std::stod(kv["ms_per_epoch"]));
  }
  CHECK(ms_per_epoch[0] < ms_per_epoch[1]);
  CHECK(ms_per_epoch[1] < ms_per_epoch[2]);
}
