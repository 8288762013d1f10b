#include "gnnmoe/data_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <system_error>

namespace gnnmoe {

ParseError::ParseError(const std::filesystem::path& file, std::size_t line, const std::string& what)
    : std::runtime_error(file.string() + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + what),
      file_(file),
      line_(line) {}

namespace {

std::ifstream open_input(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw ParseError(path, 0, "cannot open file");
  return in;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  if (text.empty()) return false;
  const char* begin = text.data();
  const char* end = begin + text.size();
  if constexpr (std::is_floating_point_v<T>) {
    // from_chars rejects a leading '+'; so do we.
    auto [ptr, ec] = std::from_chars(begin, end, out, std::chars_format::general);
    return ec == std::errc() && ptr == end && std::isfinite(out);
  } else {
    auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end;
  }
}

bool skip_line(const std::string& line) { return line.empty() || line.front() == '#'; }

std::vector<Edge> read_edges(const std::filesystem::path& path, std::size_t num_nodes) {
  auto in = open_input(path);
  std::vector<Edge> edges;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw ParseError(path, line_no, "expected \"src<TAB>dst\"");
    }
    std::int32_t s = 0, t = 0;
    if (!parse_number(std::string_view(line).substr(0, tab), s) ||
        !parse_number(std::string_view(line).substr(tab + 1), t)) {
      throw ParseError(path, line_no, "node indices must be integers");
    }
    if (s < 0 || t < 0 || static_cast<std::size_t>(s) >= num_nodes || static_cast<std::size_t>(t) >= num_nodes) {
      throw ParseError(path, line_no, "node index outside [0, " + std::to_string(num_nodes) + ")");
    }
    edges.emplace_back(s, t);
  }
  return edges;
}

Matrix read_text_features(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) throw ParseError(path, line_no, "empty feature row");
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const auto field = std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      double v = 0.0;
      if (!parse_number(field, v)) throw ParseError(path, line_no, "invalid real '" + std::string(field) + "'");
      row.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError(path, line_no, "ragged row: " + std::to_string(row.size()) + " values, expected " +
                                          std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(path, 0, "no feature rows");
  Matrix m(static_cast<std::ptrdiff_t>(rows.size()), static_cast<std::ptrdiff_t>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<std::ptrdiff_t>(i), static_cast<std::ptrdiff_t>(j)) = rows[i][j];
    }
  }
  return m;
}

std::vector<int> read_labels(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    int y = 0;
    if (!parse_number(std::string_view(line), y) || y < 0) {
      throw ParseError(path, line_no, "expected a nonnegative integer label");
    }
    labels.push_back(y);
  }
  return labels;
}

}  // namespace

DatasetOnDisk DatasetOnDisk::in_directory(const std::filesystem::path& dir, bool undirected) {
  DatasetOnDisk d;
  d.edges = dir / "edges.tsv";
  d.features = std::filesystem::exists(dir / "features.bin") && !std::filesystem::exists(dir / "features.csv")
                   ? dir / "features.bin"
                   : dir / "features.csv";
  d.labels = dir / "labels.txt";
  if (std::filesystem::exists(dir / "splits.txt")) d.splits = dir / "splits.txt";
  d.undirected = undirected;
  return d;
}

Matrix load_binary_features(const std::filesystem::path& path) {
  auto in = open_input(path, std::ios::binary);
  std::string header;
  if (!std::getline(in, header)) throw ParseError(path, 1, "missing \"rows cols\" header");
  std::istringstream hs(header);
  long rows = 0, cols = 0;
  std::string extra;
  if (!(hs >> rows >> cols) || (hs >> extra) || rows <= 0 || cols <= 0) {
    throw ParseError(path, 1, "malformed \"rows cols\" header");
  }
  Matrix m(rows, cols);
  for (std::ptrdiff_t i = 0; i < m.size(); ++i) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw ParseError(path, 0, "truncated float32 data");
    const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    m.data()[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(path, 0, "trailing bytes after float32 data");
  return m;
}

void save_binary_features(const Matrix& features, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << features.rows() << ' ' << features.cols() << '\n';
  for (std::ptrdiff_t i = 0; i < features.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(features.data()[i]));
    const char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                       static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
    out.write(b, 4);
  }
}

Graph load_dataset(const DatasetOnDisk& spec) {
  Matrix features = spec.features.extension() == ".bin" ? load_binary_features(spec.features)
                                                        : read_text_features(spec.features);
  std::vector<int> labels = read_labels(spec.labels);
  if (static_cast<std::ptrdiff_t>(labels.size()) != features.rows()) {
    throw ParseError(spec.labels, 0, std::to_string(labels.size()) + " labels but " +
                                         std::to_string(features.rows()) + " feature rows in " +
                                         spec.features.string());
  }
  const std::vector<Edge> edges = read_edges(spec.edges, labels.size());
  return Graph(std::move(features), std::move(labels), edges, spec.undirected);
}

std::optional<Splits> load_splits(const DatasetOnDisk& spec, std::size_t num_nodes) {
  if (!spec.splits) return std::nullopt;
  auto in = open_input(*spec.splits);
  Splits s;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const int node = static_cast<int>(line_no - 1);
    if (line == "train") {
      s.train.push_back(node);
    } else if (line == "val") {
      s.val.push_back(node);
    } else if (line == "test") {
      s.test.push_back(node);
    } else {
      throw ParseError(*spec.splits, line_no, "expected train, val or test");
    }
  }
  if (line_no != num_nodes) {
    throw ParseError(*spec.splits, 0, std::to_string(line_no) + " entries for " + std::to_string(num_nodes) + " nodes");
  }
  return s;
}

void write_dataset(const Graph& g, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream edges(dir / "edges.tsv");
  std::ofstream features(dir / "features.csv");
  std::ofstream labels(dir / "labels.txt");
  if (!edges || !features || !labels) throw std::runtime_error("cannot write dataset into " + dir.string());
  for (const auto& [s, t] : g.arcs()) {
    if (!g.undirected() || s < t) edges << s << '\t' << t << '\n';
  }
  char buf[32];
  for (std::ptrdiff_t i = 0; i < g.num_nodes(); ++i) {
    for (std::ptrdiff_t j = 0; j < g.feature_dim(); ++j) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), g.features()(i, j));
      if (j > 0) features << ',';
      features.write(buf, ptr - buf);
    }
    features << '\n';
  }
  for (int y : g.labels()) labels << y << '\n';
}

void SyntheticSpec::validate() const {
  if (num_nodes < 2) throw ContractError("synthetic: num_nodes must be >= 2");
  if (num_classes < 1) throw ContractError("synthetic: num_classes must be >= 1");
  if (feature_dim < num_classes) throw ContractError("synthetic: feature_dim must be >= num_classes");
  if (!(homophily >= 0.0 && homophily <= 1.0)) throw ContractError("synthetic: homophily must be in [0, 1]");
  if (!(mean_degree >= 1.0)) throw ContractError("synthetic: mean_degree must be >= 1");
  if (!(feature_noise >= 0.0)) throw ContractError("synthetic: feature_noise must be >= 0");
}

Graph generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const int n = spec.num_nodes;
  const int c = spec.num_classes;
  Rng rng = make_stream(spec.seed, 100);

  std::vector<int> labels(static_cast<std::size_t>(n));
  std::vector<std::vector<int>> members(static_cast<std::size_t>(c));
  for (int i = 0; i < n; ++i) {
    labels[static_cast<std::size_t>(i)] = i % c;
    members[static_cast<std::size_t>(i % c)].push_back(i);
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  Matrix features(n, spec.feature_dim);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < spec.feature_dim; ++j) {
      const double mean = j == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
      features(i, j) = mean + spec.feature_noise * noise(rng);
    }
  }

  const auto target = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.mean_degree / 2.0));
  std::size_t same_pairs = 0;
  for (const auto& m : members) same_pairs += m.size() * (m.size() - 1) / 2;
  const std::size_t all_pairs = static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2;
  const std::size_t cross_pairs = all_pairs - same_pairs;
  if (target > all_pairs || (spec.homophily == 1.0 && target > same_pairs) ||
      (spec.homophily == 0.0 && target > cross_pairs)) {
    throw ContractError("synthetic: " + std::to_string(target) + " edges requested but the graph admits only " +
                        std::to_string(spec.homophily == 1.0 ? same_pairs
                                       : spec.homophily == 0.0 ? cross_pairs
                                                               : all_pairs));
  }
  if (c == 1 && spec.homophily < 1.0) throw ContractError("synthetic: a single class admits no cross-class edges");

  std::uniform_int_distribution<int> any_node(0, n - 1);
  std::bernoulli_distribution same_class(spec.homophily);
  std::set<std::pair<int, int>> seen;
  std::vector<Edge> edges;
  edges.reserve(target);
  const std::size_t max_attempts = 1000 * target + 100000;
  for (std::size_t attempt = 0; edges.size() < target; ++attempt) {
    if (attempt >= max_attempts) throw ContractError("synthetic: could not place the requested edges");
    const int u = any_node(rng);
    const int cu = labels[static_cast<std::size_t>(u)];
    int v = 0;
    if (same_class(rng)) {
      const auto& pool = members[static_cast<std::size_t>(cu)];
      v = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    } else {
      do {
        v = any_node(rng);
      } while (labels[static_cast<std::size_t>(v)] == cu);
    }
    if (u == v) continue;
    const auto key = std::minmax(u, v);
    if (!seen.insert(key).second) continue;
    edges.emplace_back(key.first, key.second);
  }
  return Graph(std::move(features), std::move(labels), edges, true, c);
}

double measure_homophily(const Graph& g) {
  if (g.num_arcs() == 0) throw ContractError("measure_homophily: graph has no edges");
  std::size_t same = 0;
  for (const auto& [s, t] : g.arcs()) {
    if (g.labels()[static_cast<std::size_t>(s)] == g.labels()[static_cast<std::size_t>(t)]) ++same;
  }
  return static_cast<double>(same) / static_cast<double>(g.num_arcs());
}

std::uint64_t fingerprint(const DatasetOnDisk& spec) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ParseError(p, 0, "cannot open file");
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
      for (std::streamsize i = 0; i < in.gcount(); ++i) {
        h ^= static_cast<unsigned char>(buf[i]);
        h *= 0x100000001b3ull;
      }
    }
    h ^= 0xff;  // file separator
    h *= 0x100000001b3ull;
  };
  feed(spec.edges);
  feed(spec.features);
  feed(spec.labels);
  if (spec.splits) feed(*spec.splits);
  return h;
}

}  // namespace gnnmoe
