#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pathagg/analysis.hpp"
#include "pathagg/config.hpp"
#include "pathagg/kg.hpp"

namespace pathagg {

inline constexpr const char* kRunRootEnv = "PATHAGG_RUN_ROOT";

/// $PATHAGG_RUN_ROOT, or "runs" under the working directory.
std::filesystem::path default_run_root();

/// A run directory <root>/<config hash>/ holding config.json and every stage's outputs.
struct RunContext {
  ExperimentConfig config;
  std::string hash;
  std::filesystem::path dir;
  bool force = false;   // recompute outputs that already exist
  bool quiet = false;

  std::filesystem::path path(const std::string& rel) const { return dir / rel; }
};

/// Validates the config, creates the run directory and writes config.json.
RunContext open_run(const ExperimentConfig& config, const std::filesystem::path& root);

DatasetSplit load_dataset(const ExperimentConfig& config);

/// Relations that occur in the test split, ascending.
std::vector<RelationId> test_relations(const DatasetSplit& split);

// Every stage writes under ctx.dir and skips outputs that already exist unless ctx.force.
void cmd_ingest(const RunContext& ctx);
void cmd_gen_corpus(const RunContext& ctx);
/// Trains one checkpoint per walk.l_max (or only `only_l_max`).
void cmd_train_lm(const RunContext& ctx, std::optional<std::size_t> only_l_max = std::nullopt);
void cmd_mine_rules(const RunContext& ctx);
void cmd_learn_weights(const RunContext& ctx);
void cmd_eval(const RunContext& ctx);
void cmd_kl_grid(const RunContext& ctx);
void cmd_prop1_check(const RunContext& ctx);
void cmd_cot_graph(const RunContext& ctx);
void cmd_cot_walk(const RunContext& ctx);
void cmd_cot_plan(const RunContext& ctx);

/// Rule-predictor accuracies straight from the rules stage, no LM needed.
struct RuleAccuracy {
  std::size_t n_max = 0;
  double weighted = 0.0;
  double unweighted = 0.0;
};
std::vector<RuleAccuracy> rule_accuracies(const RunContext& ctx);

// Output locations relative to the run directory.
std::string corpus_file(std::size_t l_max);
std::string checkpoint_file(std::size_t l_max);
std::string rule_sets_file(std::size_t n_max);
std::string rule_weights_file(std::size_t n_max);

}  // namespace pathagg
