#include "pathagg/rules.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "pathagg/error.hpp"
#include "pathagg/rng.hpp"

namespace pathagg {

namespace {

std::span<const Edge> edges_with_relation(std::span<const Edge> edges, RelationId r) {
  auto lo = std::lower_bound(edges.begin(), edges.end(), Edge{r, 0});
  auto hi = std::upper_bound(lo, edges.end(), Edge{r, std::numeric_limits<EntityId>::max()});
  return {lo, hi};
}

bool is_masked(const Triple* masked, EntityId from, const Edge& e) {
  return masked && masked->head == from && masked->relation == e.relation && masked->tail == e.tail;
}

std::size_t effective_degree(const KnowledgeGraph& g, EntityId e, const Triple* masked) {
  std::size_t deg = g.out_degree(e);
  if (masked && masked->head == e && g.contains(*masked)) --deg;
  return deg;
}

// One DP step: push mass along r-labelled edges, scaled by 1/|C(a)|.
class Stepper {
 public:
  Stepper(const KnowledgeGraph& g, const Triple* masked) : g_(g), masked_(masked), acc_(g.entity_count(), 0.0) {}

  SparseDist step(const SparseDist& frontier, RelationId r) {
    touched_.clear();
    for (const auto& [a, mass] : frontier) {
      const std::size_t deg = effective_degree(g_, a, masked_);
      if (deg == 0) continue;
      const double share = mass / static_cast<double>(deg);
      for (const auto& e : edges_with_relation(g_.outgoing(a), r)) {
        if (is_masked(masked_, a, e)) continue;
        if (acc_[e.tail] == 0.0) touched_.push_back(e.tail);
        acc_[e.tail] += share;
      }
    }
    std::sort(touched_.begin(), touched_.end());
    SparseDist out;
    out.reserve(touched_.size());
    for (const auto e : touched_) {
      out.emplace_back(e, acc_[e]);
      acc_[e] = 0.0;
    }
    return out;
  }

 private:
  const KnowledgeGraph& g_;
  const Triple* masked_;
  std::vector<double> acc_;
  std::vector<EntityId> touched_;
};

}  // namespace

SparseDist rule_prob(const KnowledgeGraph& graph, EntityId e0, std::span<const RelationId> rule,
                     const Triple* masked) {
  if (e0 >= graph.entity_count()) throw std::out_of_range("entity id out of range");
  if (rule.empty()) throw std::invalid_argument("rule must have at least one relation");
  Stepper stepper(graph, masked);
  SparseDist frontier{{e0, 1.0}};
  for (const auto r : rule) {
    frontier = stepper.step(frontier, r);
    if (frontier.empty()) break;
  }
  return frontier;
}

RuleEvaluator::RuleEvaluator(std::span<const Rule> rules) : nodes_(1), rule_count_(rules.size()) {
  for (std::size_t id = 0; id < rules.size(); ++id) {
    if (rules[id].relations.empty()) throw std::invalid_argument("rule must have at least one relation");
    std::size_t node = 0;
    for (const auto r : rules[id].relations) {
      std::size_t next = 0;
      for (const auto c : nodes_[node].children)
        if (nodes_[c].relation == r) next = c;
      if (next == 0) {
        next = nodes_.size();
        nodes_.push_back(Node{r, {}, {}});
        nodes_[node].children.push_back(next);
      }
      node = next;
    }
    nodes_[node].rule_ids.push_back(id);
  }
}

std::vector<SparseDist> RuleEvaluator::evaluate(const KnowledgeGraph& graph, EntityId e0, const Triple* masked) const {
  if (e0 >= graph.entity_count()) throw std::out_of_range("entity id out of range");
  std::vector<SparseDist> out(rule_count_);
  Stepper stepper(graph, masked);
  auto visit = [&](auto&& self, std::size_t node, const SparseDist& frontier) -> void {
    for (const auto id : nodes_[node].rule_ids) out[id] = frontier;
    for (const auto c : nodes_[node].children) {
      auto next = stepper.step(frontier, nodes_[c].relation);
      if (!next.empty()) self(self, c, next);
    }
  };
  visit(visit, 0, SparseDist{{e0, 1.0}});
  return out;
}

std::vector<Rule> RuleSet::rule_list() const {
  std::vector<Rule> out;
  out.reserve(rules.size());
  for (const auto& s : rules) out.push_back(s.rule);
  return out;
}

RuleSet mine_rules(const KnowledgeGraph& graph, RelationId r, const MineOptions& options, MineReport* report) {
  if (options.n_max == 0) throw ConfigError("N_max must be >= 1");
  if (r >= graph.relation_count()) throw std::out_of_range("relation id out of range");
  std::map<std::vector<RelationId>, std::size_t> counts;
  MineReport rep;
  std::vector<RelationId> seq;
  std::map<std::vector<RelationId>, std::size_t> pair_counts;

  for (const auto& t : graph.triples()) {
    if (t.relation != r) continue;
    ++rep.pairs;
    const Triple* masked = options.leave_one_out ? &t : nullptr;
    pair_counts.clear();
    std::size_t found = 0;
    bool truncated = false;
    auto dfs = [&](auto&& self, EntityId node, std::size_t depth) -> void {
      for (const auto& e : graph.outgoing(node)) {
        if (truncated) return;
        if (is_masked(masked, node, e)) continue;
        seq.push_back(e.relation);
        if (e.tail == t.tail) {
          ++pair_counts[seq];
          if (++found >= options.path_cap) truncated = true;
        }
        if (depth + 1 < options.n_max && !truncated) self(self, e.tail, depth + 1);
        seq.pop_back();
      }
    };
    dfs(dfs, t.head, 0);
    seq.clear();
    if (truncated) ++rep.truncated_pairs;
    for (const auto& [s, c] : pair_counts) counts[s] += options.support == SupportMode::kInstances ? c : 1;
  }
  if (rep.truncated_pairs > 0)
    std::cerr << "warning: path cap " << options.path_cap << " truncated enumeration for " << rep.truncated_pairs
              << " pairs of relation " << graph.relation_name(r) << "\n";

  RuleSet set{r, options.n_max, options.min_support, {}};
  for (const auto& [s, c] : counts) {
    if (c <= options.min_support) continue;
    if (!options.include_direct_rule && s.size() == 1 && s[0] == r) continue;
    set.rules.push_back({Rule{s}, c});
  }
  std::stable_sort(set.rules.begin(), set.rules.end(),
                   [](const RuleStat& a, const RuleStat& b) { return a.support > b.support; });
  if (report) *report = rep;
  return set;
}

double RuleWeights::weight(const Rule& rule) const {
  for (std::size_t i = 0; i < rules.size(); ++i)
    if (rules[i] == rule) return weights[i];
  return 0.0;
}

RuleWeights RuleWeights::ones(const RuleSet& set) {
  RuleWeights w{set.target, set.rule_list(), {}};
  w.weights.assign(w.rules.size(), 1.0);
  return w;
}

SparseDist score(const KnowledgeGraph& graph, const RuleWeights& weights, EntityId e1) {
  if (weights.rules.size() != weights.weights.size()) throw std::invalid_argument("rule/weight count mismatch");
  std::map<EntityId, double> acc;
  const RuleEvaluator evaluator(weights.rules);
  const auto probs = evaluator.evaluate(graph, e1);
  for (std::size_t k = 0; k < probs.size(); ++k)
    for (const auto& [e, p] : probs[k]) acc[e] += weights.weights[k] * p;
  return SparseDist(acc.begin(), acc.end());
}

EntityDistribution weighted_dist(const KnowledgeGraph& graph, const RuleWeights& weights, EntityId e1,
                                 double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  std::vector<double> logits(graph.entity_count(), 0.0);
  for (const auto& [e, s] : score(graph, weights, e1)) logits[e] = s;
  return {stable_softmax(logits, temperature), DistKind::kWeighted, temperature};
}

EntityDistribution unweighted_dist(const KnowledgeGraph& graph, const RuleSet& set, EntityId e1, double temperature) {
  auto d = weighted_dist(graph, RuleWeights::ones(set), e1, temperature);
  d.kind = DistKind::kUnweighted;
  return d;
}

FeatureMatrix build_features(const KnowledgeGraph& graph, const RuleSet& set, const LogisticOptions& options) {
  FeatureMatrix fm;
  std::vector<Triple> negatives_pool;
  for (const auto& t : graph.triples()) {
    if (t.relation == set.target) {
      fm.examples.push_back(t);
      fm.labels.push_back(1);
    } else {
      negatives_pool.push_back(t);
    }
  }
  const std::size_t positives = fm.examples.size();
  const std::size_t wanted = std::min(negatives_pool.size(), positives * options.negatives_per_positive);
  Rng rng = stream_rng(options.seed, set.target);
  // Partial Fisher-Yates: the first `wanted` slots become a uniform sample without replacement.
  for (std::size_t i = 0; i < wanted; ++i) {
    std::swap(negatives_pool[i], negatives_pool[i + uniform_index(rng, negatives_pool.size() - i)]);
    fm.examples.push_back(negatives_pool[i]);
    fm.labels.push_back(0);
  }

  const RuleEvaluator evaluator(set.rule_list());
  fm.rows.reserve(fm.examples.size());
  for (const auto& ex : fm.examples) {
    const Triple* masked = options.leave_one_out ? &ex : nullptr;
    const auto probs = evaluator.evaluate(graph, ex.head, masked);
    std::vector<double> row(probs.size(), 0.0);
    for (std::size_t k = 0; k < probs.size(); ++k) {
      auto it = std::lower_bound(probs[k].begin(), probs[k].end(), std::pair<EntityId, double>{ex.tail, -1.0});
      if (it != probs[k].end() && it->first == ex.tail) row[k] = it->second;
    }
    fm.rows.push_back(std::move(row));
  }
  return fm;
}

double logistic_loss(const FeatureMatrix& features, std::span<const double> w, double lambda, WeightNorm norm,
                     std::vector<double>* grad) {
  if (grad) grad->assign(w.size(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& x = features.rows[i];
    double s = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) s += x[k] * w[k];
    const double y = features.labels[i];
    // -[y ln sigmoid(s) + (1-y) ln(1 - sigmoid(s))] = softplus(s) - y s
    loss += std::max(s, 0.0) + std::log1p(std::exp(-std::abs(s))) - y * s;
    if (grad) {
      const double p = s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
      for (std::size_t k = 0; k < w.size(); ++k) (*grad)[k] += (p - y) * x[k];
    }
  }
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (norm == WeightNorm::kL1) {
      loss += lambda * std::abs(w[k]);
      if (grad) (*grad)[k] += lambda * (w[k] > 0 ? 1.0 : (w[k] < 0 ? -1.0 : 0.0));
    } else {
      loss += lambda * w[k] * w[k];
      if (grad) (*grad)[k] += 2.0 * lambda * w[k];
    }
  }
  return loss;
}

RuleWeights fit_weights(const FeatureMatrix& features, const RuleSet& set, const LogisticOptions& options,
                        LearnReport* report) {
  if (options.lambda < 0.0) throw ConfigError("lambda must be >= 0");
  const std::size_t k = set.rules.size();
  std::vector<double> w(k, 0.0), grad, trial(k);
  LearnReport rep;
  double loss = logistic_loss(features, w, options.lambda, options.norm, &grad);
  rep.initial_loss = loss;
  double lr = options.learning_rate;
  std::size_t it = 0;
  for (; it < options.max_iters && k > 0; ++it) {
    bool accepted = false;
    while (lr > 1e-14) {
      for (std::size_t j = 0; j < k; ++j) trial[j] = w[j] - lr * grad[j];
      const double trial_loss = logistic_loss(features, trial, options.lambda, options.norm);
      if (trial_loss < loss) {
        const double gain = loss - trial_loss;
        w.swap(trial);
        loss = logistic_loss(features, w, options.lambda, options.norm, &grad);
        accepted = true;
        // Let the step recover toward the initial rate after a successful move.
        lr = std::min(options.learning_rate, lr * 2.0);
        if (gain <= options.tolerance * std::max(1.0, std::abs(loss))) rep.converged = true;
        break;
      }
      lr *= 0.5;
    }
    if (!accepted) {
      rep.converged = true;
      break;
    }
    if (rep.converged) break;
  }
  if (k == 0) rep.converged = true;
  rep.iterations = it;
  rep.final_loss = loss;
  // Callers that ask for the report handle non-convergence themselves.
  if (!rep.converged && !report)
    std::cerr << "warning: rule-weight regression did not converge in " << options.max_iters << " iterations\n";
  if (report) *report = rep;
  return RuleWeights{set.target, set.rule_list(), std::move(w)};
}

RuleWeights learn_weights(const KnowledgeGraph& graph, const RuleSet& set, const LogisticOptions& options,
                          LearnReport* report) {
  if (set.rules.empty()) {
    if (report) *report = LearnReport{0, true, 0.0, 0.0};
    return RuleWeights{set.target, {}, {}};
  }
  return fit_weights(build_features(graph, set, options), set, options, report);
}

void write_rules_json(const KnowledgeGraph& graph, std::span<const RuleSet> sets, std::span<const RuleWeights> weights,
                      const std::filesystem::path& path, const std::string& config_hash) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& set : sets) {
    const RuleWeights* w = nullptr;
    for (const auto& cand : weights)
      if (cand.target == set.target) w = &cand;
    nlohmann::json js{{"relation", graph.relation_name(set.target)},
                      {"relation_id", set.target},
                      {"n_max", set.n_max},
                      {"min_support", set.min_support}};
    if (!config_hash.empty()) js["config_hash"] = config_hash;
    auto rules = nlohmann::json::array();
    for (const auto& s : set.rules) {
      nlohmann::json names = nlohmann::json::array();
      for (const auto r : s.rule.relations) names.push_back(graph.relation_name(r));
      nlohmann::json jr{{"rule", s.rule.relations}, {"names", names}, {"support", s.support}};
      if (w) jr["weight"] = w->weight(s.rule);
      rules.push_back(std::move(jr));
    }
    js["rules"] = std::move(rules);
    out.push_back(std::move(js));
  }
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << out.dump(1) << '\n';
}

namespace {

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace

std::vector<RuleSet> read_rule_sets(const std::filesystem::path& path) {
  std::vector<RuleSet> out;
  for (const auto& js : read_json(path)) {
    RuleSet set{js.at("relation_id").get<RelationId>(), js.at("n_max").get<std::size_t>(),
                js.at("min_support").get<std::size_t>(), {}};
    for (const auto& jr : js.at("rules"))
      set.rules.push_back({Rule{jr.at("rule").get<std::vector<RelationId>>()}, jr.at("support").get<std::size_t>()});
    out.push_back(std::move(set));
  }
  return out;
}

std::vector<RuleWeights> read_rule_weights(const std::filesystem::path& path) {
  std::vector<RuleWeights> out;
  for (const auto& js : read_json(path)) {
    RuleWeights w{js.at("relation_id").get<RelationId>(), {}, {}};
    for (const auto& jr : js.at("rules")) {
      if (!jr.contains("weight")) throw DataError(path.string() + " has no learned weights");
      w.rules.push_back(Rule{jr.at("rule").get<std::vector<RelationId>>()});
      w.weights.push_back(jr.at("weight").get<double>());
    }
    out.push_back(std::move(w));
  }
  return out;
}

void write_features_csv(const KnowledgeGraph& graph, const RuleSet& set, const FeatureMatrix& features,
                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "head,relation,tail,label";
  for (const auto& s : set.rules) {
    out << ",";
    for (std::size_t i = 0; i < s.rule.relations.size(); ++i)
      out << (i ? "|" : "") << graph.relation_name(s.rule.relations[i]);
  }
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& t = features.examples[i];
    out << graph.entity_name(t.head) << ',' << graph.relation_name(t.relation) << ',' << graph.entity_name(t.tail)
        << ',' << features.labels[i];
    for (const double v : features.rows[i]) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace pathagg
