#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pathagg/distribution.hpp"
#include "pathagg/kg.hpp"

namespace pathagg {

/// Conjunctive rule h = [r_1, ..., r_n].
struct Rule {
  std::vector<RelationId> relations;

  std::size_t length() const noexcept { return relations.size(); }
  friend bool operator==(const Rule&, const Rule&) = default;
  friend auto operator<=>(const Rule&, const Rule&) = default;
};

/// Sparse entity -> probability (or score) map, sorted by entity id.
using SparseDist = std::vector<std::pair<EntityId, double>>;

/// P(e_n | e0, h) under uniform walks: mass starts at e0 and is pushed along
/// every edge labelled r_i, scaled by 1/|C(current)|. When `masked` is set that
/// edge is removed from the graph for this computation (degrees shrink).
SparseDist rule_prob(const KnowledgeGraph& graph, EntityId e0, std::span<const RelationId> rule,
                     const Triple* masked = nullptr);

/// Evaluates many rules from one source entity, sharing common prefixes.
class RuleEvaluator {
 public:
  explicit RuleEvaluator(std::span<const Rule> rules);

  /// One SparseDist per rule, in constructor order.
  std::vector<SparseDist> evaluate(const KnowledgeGraph& graph, EntityId e0, const Triple* masked = nullptr) const;

  std::size_t rule_count() const noexcept { return rule_count_; }

 private:
  struct Node {
    RelationId relation = 0;
    std::vector<std::size_t> children;
    std::vector<std::size_t> rule_ids;  // rules ending here (duplicates allowed)
  };
  std::vector<Node> nodes_;  // nodes_[0] is the root
  std::size_t rule_count_ = 0;
};

struct RuleStat {
  Rule rule;
  std::size_t support = 0;
};

/// H_r: mined rules for one target relation.
struct RuleSet {
  RelationId target = 0;
  std::size_t n_max = 0;
  std::size_t min_support = 0;
  std::vector<RuleStat> rules;

  std::vector<Rule> rule_list() const;
};

enum class SupportMode { kInstances, kDistinctPairs };

struct MineOptions {
  std::size_t n_max = 3;
  std::size_t min_support = 1;                  // keep rules with support > min_support
  SupportMode support = SupportMode::kInstances;
  bool leave_one_out = true;                    // mask (e1, r, e2) while enumerating its paths
  bool include_direct_rule = false;             // keep the length-1 rule [r]
  std::size_t path_cap = 10000;                 // per-pair path enumeration cap
};

struct MineReport {
  std::size_t pairs = 0;
  std::size_t truncated_pairs = 0;
};

/// Enumerates relation-labelled paths e1 ~> e2 of length <= n_max for every
/// train triple (e1, r, e2) and keeps sequences whose support exceeds min_support.
RuleSet mine_rules(const KnowledgeGraph& graph, RelationId r, const MineOptions& options,
                   MineReport* report = nullptr);

/// w_r(h) for h in H_r; rules outside the set weigh 0.
struct RuleWeights {
  RelationId target = 0;
  std::vector<Rule> rules;
  std::vector<double> weights;

  double weight(const Rule& rule) const;
  static RuleWeights ones(const RuleSet& set);
};

/// S_w(. | e1, r) = sum_h w_r(h) P(. | e1, h); entities reached by no rule are absent.
SparseDist score(const KnowledgeGraph& graph, const RuleWeights& weights, EntityId e1);

/// P_w = softmax(S_w / T) over all entities.
EntityDistribution weighted_dist(const KnowledgeGraph& graph, const RuleWeights& weights, EntityId e1,
                                 double temperature = 0.01);

/// P_s: weighted_dist with every rule in the set weighted 1.
EntityDistribution unweighted_dist(const KnowledgeGraph& graph, const RuleSet& set, EntityId e1,
                                   double temperature = 0.01);

enum class WeightNorm { kL1, kL2Squared };

struct LogisticOptions {
  double lambda = 0.01;
  WeightNorm norm = WeightNorm::kL1;
  std::size_t negatives_per_positive = 4;
  bool leave_one_out = true;
  double learning_rate = 0.1;
  std::size_t max_iters = 5000;
  double tolerance = 1e-10;
  std::uint64_t seed = 0;
};

/// Training examples for the rule-weight logistic regression.
struct FeatureMatrix {
  std::vector<Triple> examples;
  std::vector<int> labels;                   // 1 for relation == target
  std::vector<std::vector<double>> rows;     // rows[i][k] = P(e2_i | e1_i, h_k)

  std::size_t size() const noexcept { return examples.size(); }
};

/// Positives: train triples with the target relation. Negatives: sampled
/// uniformly from triples with other relations. With leave_one_out each
/// example's own edge is masked while its features are computed.
FeatureMatrix build_features(const KnowledgeGraph& graph, const RuleSet& set, const LogisticOptions& options);

/// -sum_i [y_i ln p_i + (1-y_i) ln(1-p_i)] + lambda * |w|, p_i = sigmoid(x_i . w).
double logistic_loss(const FeatureMatrix& features, std::span<const double> w, double lambda, WeightNorm norm,
                     std::vector<double>* grad = nullptr);

struct LearnReport {
  std::size_t iterations = 0;
  bool converged = false;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// Full-batch gradient descent from w = 0 with step halving whenever the loss
/// does not decrease. Returns the best iterate.
RuleWeights fit_weights(const FeatureMatrix& features, const RuleSet& set, const LogisticOptions& options,
                        LearnReport* report = nullptr);

RuleWeights learn_weights(const KnowledgeGraph& graph, const RuleSet& set, const LogisticOptions& options,
                          LearnReport* report = nullptr);

// JSON: [{"relation": name, "relation_id": id, "n_max": n, "min_support": m,
//         "rules": [{"rule": [ids], "names": [...], "support": s, "weight": w}]}]
void write_rules_json(const KnowledgeGraph& graph, std::span<const RuleSet> sets,
                      std::span<const RuleWeights> weights, const std::filesystem::path& path,
                      const std::string& config_hash = {});
std::vector<RuleSet> read_rule_sets(const std::filesystem::path& path);
std::vector<RuleWeights> read_rule_weights(const std::filesystem::path& path);

void write_features_csv(const KnowledgeGraph& graph, const RuleSet& set, const FeatureMatrix& features,
                        const std::filesystem::path& path);

}  // namespace pathagg
