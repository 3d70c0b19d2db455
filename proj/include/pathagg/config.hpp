#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathagg/kg.hpp"
#include "pathagg/rules.hpp"
#include "pathagg/tiny_lm.hpp"
#include "pathagg/walk_corpus.hpp"

namespace pathagg {

struct DatasetConfig {
  std::string name = "dataset";
  std::string train;
  std::string test;
  std::string valid;                 // optional
  bool add_inverse = false;
  UnknownPolicy unknown = UnknownPolicy::kSkip;
  bool index_includes_valid = false; // add valid triples to the correct-answer index
};

struct WalkSettings {
  std::vector<std::size_t> l_max{1, 3, 5};
  std::size_t walk_count = 0;        // 0: derived from tokens_per_triple
  double tokens_per_triple = 50.0;
  std::size_t chunk_len = 256;       // also the LM context length
  WalkLengthMode mode = WalkLengthMode::kExact;
};

struct RuleSettings {
  std::vector<std::size_t> n_max{1, 2, 3};
  MineOptions mine;
  LogisticOptions logistic;
  double temperature = 0.01;
};

struct AnalysisSettings {
  bool per_query = false;
  std::vector<std::pair<std::size_t, std::size_t>> prop1_sizes{{5, 3}, {10, 6}, {30, 10}};
  std::size_t prop1_trials = 1000;
};

struct CotSettings {
  std::string input;
  std::string vectors;               // empty: hash provider
  std::size_t dim = 64;
  std::size_t k = 100;
  std::size_t kmeans_iters = 100;
  std::size_t l_max = 10;
  std::size_t segment_cap = 0;       // 0: l_max
  std::size_t paths = 1000;
  std::size_t m = 500;
  std::size_t n = 2500;
  bool size_weighted_init = false;
  bool prefix_question = false;
};

/// Everything a run depends on. LM and training seeds come from `seed`.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;              // not part of the hash: outputs do not depend on it
  DatasetConfig dataset;
  WalkSettings walk;
  LmConfig lm;
  TrainConfig train;
  RuleSettings rules;
  AnalysisSettings analysis;
  CotSettings cot;

  /// Throws ConfigError on bad values or missing input files.
  void validate() const;
  /// LM config with vocab size, context length and seed filled in.
  LmConfig lm_config(std::size_t vocab_size) const;
  TrainConfig train_config() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
/// Unknown keys and type mismatches raise ConfigError. Relative paths are resolved against `base_dir`.
ExperimentConfig config_from_json(const nlohmann::json& js, const std::filesystem::path& base_dir = {});

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

/// Applies "section.key=value"; value is parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& js, const std::string& assignment);

/// 16 hex digits of FNV-1a over the canonical JSON, excluding `jobs`.
std::string config_hash(const ExperimentConfig& config);

/// Built-in dataset configs for the bundled data directory.
ExperimentConfig preset_config(const std::string& name, const std::filesystem::path& data_dir);

}  // namespace pathagg
