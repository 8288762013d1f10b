#include "gnnmoe/model.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

namespace gnnmoe {

void GnnMoeConfig::validate() const {
  if (hidden_dim < 1) throw ContractError("config: hidden_dim must be >= 1");
  if (num_blocks < 1) throw ContractError("config: num_blocks must be >= 1");
  if (gate_hidden < 1) throw ContractError("config: gate_hidden must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("config: dropout must be in [0, 1)");
  if (!(tau > 0.0)) throw ContractError("config: tau must be positive");
  if (!(ln_eps > 0.0)) throw ContractError("config: ln_eps must be positive");
}

std::string GnnMoeConfig::variant_name() const {
  std::string name;
  if (ablate_ffn && ablate_residual) {
    name = "w/o FFN, AIR/AR";
  } else if (ablate_ffn) {
    name = "w/o FFN";
  } else if (ablate_residual) {
    name = "w/o AIR/AR";
  } else {
    name = "full";
  }
  if (forced_expert) name += std::string(" [") + to_string(*forced_expert) + "]";
  return name;
}

GnnMoeModel GnnMoeModel::init(const GnnMoeConfig& config, std::ptrdiff_t feature_dim, int num_classes, Rng& rng) {
  config.validate();
  if (feature_dim < 1 || num_classes < 1) throw ContractError("model: feature_dim and num_classes must be >= 1");
  GnnMoeModel m;
  m.config_ = config;
  m.feature_dim_ = feature_dim;
  m.num_classes_ = num_classes;
  const auto width = config.hidden_dim;
  m.embed_weight = Tensor(glorot_uniform(feature_dim, width, rng), true);
  m.embed_bias = Tensor::zeros(1, width, true);
  for (int l = 0; l < config.num_blocks; ++l) {
    m.blocks.push_back(PtBlock::init(width, config.gate_hidden, config.prop_kind == PropKind::GatLike, rng));
  }
  m.ffn = EnhancedFfn::init(width, config.tau, rng);
  m.head = Tensor(glorot_uniform(width, num_classes, rng), true);
  return m;
}

Tensor GnnMoeModel::forward(const Graph& g, const ForwardOptions& options) const {
  if (g.feature_dim() != feature_dim_) {
    throw DimensionError("forward: graph has " + std::to_string(g.feature_dim()) + " features, model expects " +
                         std::to_string(feature_dim_));
  }
  const Tensor x(g.features());
  const Tensor x_in = dropout(x, config_.dropout, options.training, options.rng);
  const Tensor h0 = relu(add_row(matmul(x_in, embed_weight), embed_bias));

  BlockOptions block_options;
  block_options.training = options.training;
  block_options.rng = options.rng;
  block_options.dropout = config_.dropout;
  block_options.dropout_site = config_.dropout_site;
  block_options.forced_expert = config_.forced_expert;
  block_options.ablate_residual = config_.ablate_residual;
  block_options.ln_eps = config_.ln_eps;
  block_options.attention_slope = config_.attention_slope;

  Tensor h = h0;
  for (const PtBlock& block : blocks) {
    Tensor weights;
    h = pt_block_forward(block, config_.prop_kind, g, h, h0, block_options,
                         options.trace != nullptr ? &weights : nullptr);
    if (options.trace != nullptr) options.trace->gate_weights.push_back(weights);
  }

  if (!config_.ablate_ffn) {
    FfnOptions ffn_options;
    ffn_options.training = options.training;
    ffn_options.rng = options.rng;
    ffn_options.ablate_residual = config_.ablate_residual;
    ffn_options.ln_eps = config_.ln_eps;
    ffn_options.control = options.hard_gate;
    HardGateResult selection;
    h = ffn_forward(ffn, h, h0, ffn_options, &selection);
    if (options.trace != nullptr) options.trace->hard_gate = std::move(selection);
  }
  return matmul(h, head);
}

std::vector<NamedTensor> GnnMoeModel::parameters() const {
  std::vector<NamedTensor> out;
  out.emplace_back("embed.weight", embed_weight);
  out.emplace_back("embed.bias", embed_bias);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const PtBlock& b = blocks[l];
    const std::string p = "block" + std::to_string(l) + ".";
    out.emplace_back(p + "gate.w1", b.gate.w1);
    out.emplace_back(p + "gate.w2", b.gate.w2);
    for (const Expert& e : b.experts) {
      for (std::size_t t = 0; t < e.t_ops.size(); ++t) {
        const std::string q = p + "expert." + to_string(e.kind) + ".t" + std::to_string(t) + ".";
        out.emplace_back(q + "weight", e.t_ops[t].weight);
        out.emplace_back(q + "bias", e.t_ops[t].bias);
      }
    }
    out.emplace_back(p + "alpha_raw", b.alpha_raw);
    out.emplace_back(p + "ln.gain", b.ln.gain);
    out.emplace_back(p + "ln.bias", b.ln.bias);
    if (b.attention.source.defined()) {
      out.emplace_back(p + "attention.source", b.attention.source);
      out.emplace_back(p + "attention.target", b.attention.target);
    }
  }
  out.emplace_back("ffn.gate", ffn.gate_weight);
  for (const GluExpert& e : ffn.experts) {
    const std::string q = std::string("ffn.") + to_string(e.kind) + ".";
    out.emplace_back(q + "w3", e.w3);
    out.emplace_back(q + "w4", e.w4);
    out.emplace_back(q + "w5", e.w5);
  }
  out.emplace_back("ffn.beta_raw", ffn.beta_raw);
  out.emplace_back("ffn.ln.gain", ffn.ln.gain);
  out.emplace_back("ffn.ln.bias", ffn.ln.bias);
  out.emplace_back("head.weight", head);
  return out;
}

std::size_t GnnMoeModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += static_cast<std::size_t>(t.value().size());
  return n;
}

void GnnMoeModel::zero_grad() const {
  for (const auto& [name, t] : parameters()) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

std::vector<Matrix> GnnMoeModel::snapshot() const {
  std::vector<Matrix> values;
  for (const auto& [name, t] : parameters()) values.push_back(t.value());
  return values;
}

void GnnMoeModel::restore(const std::vector<Matrix>& values) const {
  auto params = parameters();
  if (values.size() != params.size()) throw ContractError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor handle = params[i].second;
    if (values[i].rows() != handle.rows() || values[i].cols() != handle.cols()) {
      throw DimensionError("restore: shape mismatch for " + params[i].first);
    }
    handle.mutable_value() = values[i];
  }
}

GnnMoeModel GnnMoeModel::clone() const {
  Rng scratch(0);
  GnnMoeModel copy = init(config_, feature_dim_, num_classes_, scratch);
  copy.restore(snapshot());
  return copy;
}

Tensor loss(const Tensor& logits, std::span<const int> labels, std::span<const int> mask) {
  return cross_entropy(logits, labels, mask);
}

std::vector<int> predict(const Matrix& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (std::ptrdiff_t i = 0; i < logits.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = static_cast<int>(argmax_row(logits.row(i)));
  }
  return out;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels, std::span<const int> mask) {
  if (mask.empty()) throw ContractError("accuracy: empty node mask");
  std::size_t correct = 0;
  for (int i : mask) {
    const auto k = static_cast<std::size_t>(i);
    if (k >= predictions.size() || k >= labels.size()) throw DimensionError("accuracy: node index out of range");
    if (predictions[k] == labels[k]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(mask.size());
}

void save_checkpoint(const GnnMoeModel& model, const std::filesystem::path& stem) {
  std::filesystem::path bin = stem;
  bin += ".bin";
  std::filesystem::path manifest = stem;
  manifest += ".manifest";
  std::ofstream data(bin, std::ios::binary);
  std::ofstream text(manifest);
  if (!data || !text) throw CheckpointError("cannot write checkpoint " + stem.string());
  std::uint64_t offset = 0;
  for (const auto& [name, t] : model.parameters()) {
    text << name << ' ' << t.rows() << ' ' << t.cols() << ' ' << offset << '\n';
    for (std::ptrdiff_t i = 0; i < t.value().size(); ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(t.value().data()[i]);
      char bytes[8];
      for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
      data.write(bytes, 8);
      offset += 8;
    }
  }
  if (!data || !text) throw CheckpointError("failed writing checkpoint " + stem.string());
}

void load_checkpoint(const GnnMoeModel& model, const std::filesystem::path& stem) {
  std::filesystem::path bin = stem;
  bin += ".bin";
  std::filesystem::path manifest = stem;
  manifest += ".manifest";
  std::ifstream text(manifest);
  if (!text) throw CheckpointError("cannot read checkpoint manifest " + manifest.string());
  std::ifstream data(bin, std::ios::binary);
  if (!data) throw CheckpointError("cannot read checkpoint data " + bin.string());
  std::vector<char> blob((std::istreambuf_iterator<char>(data)), std::istreambuf_iterator<char>());

  struct Entry {
    std::ptrdiff_t rows, cols;
    std::uint64_t offset;
  };
  std::map<std::string, Entry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(text, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string name;
    Entry e{};
    std::string extra;
    if (!(in >> name >> e.rows >> e.cols >> e.offset) || (in >> extra)) {
      throw CheckpointError(manifest.string() + ":" + std::to_string(line_no) + ": malformed manifest line");
    }
    entries[name] = e;
  }

  auto params = model.parameters();
  if (entries.size() != params.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(entries.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
  }
  for (auto& [name, t] : params) {
    auto it = entries.find(name);
    if (it == entries.end()) throw CheckpointError("checkpoint is missing tensor " + name);
    const Entry& e = it->second;
    if (e.rows != t.rows() || e.cols != t.cols()) {
      throw CheckpointError("checkpoint tensor " + name + " is " + std::to_string(e.rows) + "x" +
                            std::to_string(e.cols) + ", config expects " + std::to_string(t.rows()) + "x" +
                            std::to_string(t.cols()));
    }
    const std::uint64_t bytes = static_cast<std::uint64_t>(e.rows * e.cols) * 8;
    if (e.offset + bytes > blob.size()) throw CheckpointError("checkpoint tensor " + name + " exceeds data file");
    Matrix m(e.rows, e.cols);
    for (std::ptrdiff_t i = 0; i < m.size(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[e.offset + 8 * static_cast<std::uint64_t>(i) + b]))
                << (8 * b);
      }
      m.data()[i] = std::bit_cast<double>(bits);
    }
    t.mutable_value() = std::move(m);
  }
}

}  // namespace gnnmoe
