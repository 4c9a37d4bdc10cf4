#pragma once

// Flat `section.key = value` run configuration.
// Precedence: built-in defaults < config file < EDGE_ASSET_DIR < explicit sets.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "edge/data.hpp"
#include "edge/evaluation.hpp"
#include "edge/knowledge.hpp"
#include "edge/model.hpp"
#include "edge/synthgen.hpp"
#include "edge/training.hpp"

namespace edge {

class RunConfig {
 public:
  // Every known key with its default value.
  RunConfig();

  // Reads `key = value` lines; blank lines and `#` comments are skipped.
  // Unknown keys raise ConfigError.
  void merge_file(const std::string& path);
  void merge_text(const std::string& text, const std::string& source);
  // Applies EDGE_ASSET_DIR when set.
  void merge_environment();
  void set(const std::string& key, const std::string& value);  // ConfigError on unknown key

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  Hyperparams hyperparams() const;
  TrainConfig train_config() const;
  EvalOptions eval_options() const;
  int eval_episodes() const;
  int eval_n_pos() const;
  int eval_n_neg() const;
  Ablation ablation() const;
  GeneratorSpec generator_spec() const;
  YearCutoffs cutoffs() const;
  // Explicit file keys win over the asset directory.
  AssetPaths asset_paths() const;

  // Sorted `key = value` lines; merge_text of the output reproduces the config.
  std::string serialize() const;
  void write_snapshot(const std::string& path) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace edge
