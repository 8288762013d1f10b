#pragma once

#include "gnnmoe/data_io.hpp"
#include "gnnmoe/model.hpp"
#include "gnnmoe/training.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace gnnmoe::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Setting {
  std::string value;
  std::string origin;  // "path:line" or "command line"
};

// Flat key=value settings; later sources override earlier ones.
class Settings {
 public:
  // Lines "key=value"; blank lines and lines starting with '#' are skipped.
  void load_file(const std::filesystem::path& path);
  // "key=value" from the command line.
  void set(const std::string& assignment, const std::string& origin = "command line");
  void set(const std::string& key, const std::string& value, const std::string& origin);

  void erase(const std::string& key) { values_.erase(key); }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const Setting* find(const std::string& key) const;
  const std::map<std::string, Setting>& all() const { return values_; }

 private:
  std::map<std::string, Setting> values_;
};

struct RunConfig {
  GnnMoeConfig model;
  TrainConfig train;
  DatasetOnDisk data;
  std::optional<std::uint64_t> expected_fingerprint;
};

// Interprets known keys, rejecting unknown keys and malformed values with the key's origin.
RunConfig resolve(const Settings& settings);
// Canonical key=value lines reproducing `cfg` (the RunManifest body).
std::vector<std::pair<std::string, std::string>> to_key_values(const RunConfig& cfg);

std::string format_real(double v);
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

// Entry point shared by the executable and the tests. Returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gnnmoe::cli
