#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcvae/flows/causal_flow.hpp"
#include "dcvae/train/trainer.hpp"

namespace dcvae::cli {

/// Bad flags, bad config files, missing inputs. Maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

struct KeySpec {
  std::string key;
  std::string default_value;
  std::string help;
};

/// Every key a config file may set, with its default.
const std::vector<KeySpec>& known_keys();

/// String-valued settings keyed by known_keys(). Typed getters raise
/// UsageError naming the key when a value does not parse.
class RunConfig {
 public:
  RunConfig();

  /// `key=value` lines; blank lines and lines starting with '#' are skipped.
  static RunConfig from_file(const std::filesystem::path& path);
  /// Applies one `key=value` override.
  void apply(const std::string& assignment);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// Model and optimizer settings. Reads the mask file when mask=file.
  train::TrainConfig train_config() const;

  std::string to_text() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> values_;
};

/// `parent,child` per line, 1-based; '#' comments.
std::vector<model::Edge> read_edge_file(const std::filesystem::path& path);

/// "a,b,c" with each element parsed as T.
std::vector<double> parse_double_list(const std::string& text, const std::string& what);
std::vector<std::size_t> parse_index_list(const std::string& text, const std::string& what);

/// "dim=value" with 1-based dim; result dim is 0-based.
flows::Intervention parse_do(const std::string& text);

}  // namespace dcvae::cli
