#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pathagg/distribution.hpp"
#include "pathagg/kg.hpp"
#include "pathagg/rng.hpp"
#include "pathagg/rules.hpp"

namespace pathagg {

/// KL(p || q) in nats with 0 ln 0 = 0. Throws NumericError when some p_i > 0 meets q_i = 0.
double kl(std::span<const double> p, std::span<const double> q);
inline double kl(const EntityDistribution& p, const EntityDistribution& q) { return kl(p.probs, q.probs); }

/// (e1, r) -> sorted set of correct tails.
class QueryAnswerIndex {
 public:
  QueryAnswerIndex() = default;
  /// Built from the train graph plus the given extra triples (normally the test split).
  QueryAnswerIndex(const KnowledgeGraph& train, std::span<const Triple> extra);

  void add(const Triple& t);
  bool has_query(EntityId e1, RelationId r) const;
  /// Throws DataError for an unknown query.
  const std::vector<EntityId>& answers(EntityId e1, RelationId r) const;
  bool is_correct(EntityId e1, RelationId r, EntityId e2) const;
  std::size_t query_count() const noexcept { return map_.size(); }

 private:
  std::map<std::pair<EntityId, RelationId>, std::vector<EntityId>> map_;
};

/// P*: uniform over the correct answers of (e1, r).
EntityDistribution reference_dist(const QueryAnswerIndex& index, EntityId e1, RelationId r,
                                  std::size_t entity_count);

/// P_u: uniform over all entities.
EntityDistribution uniform_dist(std::size_t entity_count);

using Predictor = std::function<EntityId(EntityId, RelationId)>;

/// Fraction of test triples whose predicted tail is a correct answer.
double accuracy(const Predictor& predictor, std::span<const Triple> test, const QueryAnswerIndex& index);

/// Same, from precomputed predictions aligned with `test`.
double accuracy(std::span<const EntityId> predictions, std::span<const Triple> test, const QueryAnswerIndex& index);

/// Indices of the triples to average over: all of them, or the first triple of each distinct (e1, r).
std::vector<std::size_t> averaging_indices(std::span<const Triple> test, bool per_query);

/// One column of the KL grid: a distribution per test triple.
struct KlColumn {
  std::string name;
  std::vector<EntityDistribution> dists;
};

/// One row of the KL grid: the LM checkpoint for one L_max and the columns
/// compared against it. P_u is typically included as a column.
struct KlRowInput {
  std::size_t l_max = 0;
  std::vector<EntityDistribution> lm;  // per test triple
  std::vector<KlColumn> columns;
};

struct KlGrid {
  std::vector<std::size_t> l_max;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> mean;                // [row][col]
  std::vector<std::vector<std::vector<double>>> raw;    // [row][col][test triple]

  double at(std::size_t l, std::string_view column) const;
};

/// mean over test triples of kl(column, P_LM) for every row and column.
/// All rows must carry the same column names.
KlGrid kl_grid(std::span<const KlRowInput> rows, std::span<const Triple> test, bool per_query = false);

void write_kl_grid_csv(const KlGrid& grid, const std::filesystem::path& path, const std::string& config_hash = {});
void write_kl_raw_csv(const KlGrid& grid, const KnowledgeGraph& graph, std::span<const Triple> test,
                      const std::filesystem::path& path, const std::string& config_hash = {});

struct AccuracyPoint {
  std::string dataset;
  std::string predictor;  // "LM", "Weighted", "Unweighted"
  std::size_t length = 0; // L_max for the LM, N_max for the rule predictors
  double accuracy = 0.0;
};

void write_accuracy_curve_csv(std::span<const AccuracyPoint> points, const std::filesystem::path& path,
                              const std::string& config_hash = {});

struct RelationLengthStat {
  RelationId relation = 0;
  std::size_t support_length = 0;  // length of the rule with the most valid paths
  std::size_t weight_length = 0;   // length of the rule with the largest learned weight
};

struct RuleLengthReport {
  std::vector<RelationLengthStat> relations;
  std::vector<RelationId> excluded;  // relations with empty rule sets
  double mean_support_length = 0.0;
  double mean_weight_length = 0.0;
};

/// Per-relation argmax-support and argmax-weight rule lengths and their means.
/// `weights` is matched to `sets` by target relation; ties keep the first rule.
RuleLengthReport rule_length_stats(std::span<const RuleSet> sets, std::span<const RuleWeights> weights);

void write_rule_stats_csv(const RuleLengthReport& report, const KnowledgeGraph& graph,
                          const std::filesystem::path& path, const std::string& config_hash = {});

struct Prop1Report {
  std::size_t entity_count = 0;
  std::size_t rule_count = 0;
  std::size_t trials = 0;
  std::size_t violations = 0;
  double max_slack = 0.0;  // max over trials of KL(entity) - KL(rule); <= 0 when the bound holds
};

/// Entity-level KL of the two marginals sum_h P(e|h) P(h) against the rule-level
/// KL of the two rule distributions, on random tables.
Prop1Report prop1_check(std::size_t entity_count, std::size_t rule_count, std::size_t trials, Rng& rng,
                        double tolerance = 1e-12);

/// The two KLs for one explicit decomposition: {entity-level, rule-level}.
std::pair<double, double> prop1_pair(std::span<const std::vector<double>> p_e_given_h, std::span<const double> p_w,
                                     std::span<const double> p_lm);

void write_prop1_csv(std::span<const Prop1Report> reports, const std::filesystem::path& path,
                     const std::string& config_hash = {});

/// "%.17g" formatting used for every CSV number.
std::string format_double(double v);

}  // namespace pathagg
