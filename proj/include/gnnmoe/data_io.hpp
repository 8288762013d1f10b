#pragma once

#include "gnnmoe/graph.hpp"
#include "gnnmoe/training.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

namespace gnnmoe {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::filesystem::path& file, std::size_t line, const std::string& what);
  const std::filesystem::path& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::filesystem::path file_;
  std::size_t line_;
};

struct DatasetOnDisk {
  std::filesystem::path edges;     // "src<TAB>dst" per line, '#' starts a comment line
  std::filesystem::path features;  // comma-separated reals per row, or *.bin (see below)
  std::filesystem::path labels;    // one integer per line
  std::optional<std::filesystem::path> splits;  // one of train/val/test per line
  bool undirected = true;

  // <dir>/edges.tsv, <dir>/features.csv, <dir>/labels.txt, and splits.txt when present.
  static DatasetOnDisk in_directory(const std::filesystem::path& dir, bool undirected = true);
};

Graph load_dataset(const DatasetOnDisk& spec);
std::optional<Splits> load_splits(const DatasetOnDisk& spec, std::size_t num_nodes);

// Binary features: a text header line "rows cols\n" followed by rows*cols
// little-endian float32 values in row-major order.
Matrix load_binary_features(const std::filesystem::path& path);
void save_binary_features(const Matrix& features, const std::filesystem::path& path);

// Writes edges.tsv (each undirected edge once, src < dst), features.csv and
// labels.txt into `dir` with full round-trip precision.
void write_dataset(const Graph& g, const std::filesystem::path& dir);

struct SyntheticSpec {
  int num_nodes = 1000;
  int num_classes = 4;
  int feature_dim = 16;
  double homophily = 0.8;
  double mean_degree = 10.0;
  double feature_noise = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Round-robin labels, features = e_class + N(0, noise^2), and |V|k/2 undirected
// edges whose partner shares the endpoint's class with probability h.
Graph generate_synthetic(const SyntheticSpec& spec);

// Fraction of edges whose endpoints share a label.
double measure_homophily(const Graph& g);

// FNV-1a over the files' bytes, in a fixed order.
std::uint64_t fingerprint(const DatasetOnDisk& spec);

}  // namespace gnnmoe
