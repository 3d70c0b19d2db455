#pragma once

// Independent reference computations shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "pathagg/kg.hpp"
#include "pathagg/rng.hpp"
#include "pathagg/rules.hpp"
#include "pathagg/tiny_lm.hpp"

namespace oracle {

using namespace pathagg;

/// Random graph with the given entity/relation counts; each (h, r, t) is present with probability `density`.
inline KnowledgeGraph random_graph(Rng& rng, std::size_t entities, std::size_t relations, double density) {
  std::vector<std::array<std::string, 3>> rows;
  for (std::size_t h = 0; h < entities; ++h)
    for (std::size_t r = 0; r < relations; ++r)
      for (std::size_t t = 0; t < entities; ++t)
        if (uniform_unit(rng) < density)
          rows.push_back({"e" + std::to_string(h), "r" + std::to_string(r), "e" + std::to_string(t)});
  SymbolTable es, rs;
  for (std::size_t e = 0; e < entities; ++e) es.intern("e" + std::to_string(e));
  for (std::size_t r = 0; r < relations; ++r) rs.intern("r" + std::to_string(r));
  std::vector<Triple> triples;
  for (const auto& row : rows)
    triples.push_back({*es.find(row[0]), *rs.find(row[1]), *es.find(row[2])});
  return KnowledgeGraph(es, rs, triples);
}

/// Enumerates every entity sequence e0 -> e1 -> ... -> en and sums, over the
/// labelled edges realising it, the product of 1/|C(e_{i-1})|. Works from the
/// flat triple list only.
inline std::map<EntityId, double> brute_rule_prob(const KnowledgeGraph& g, EntityId e0,
                                                  const std::vector<RelationId>& rule,
                                                  const Triple* masked = nullptr) {
  const auto triples = g.triples();
  auto live = [&](const Triple& t) { return !(masked && t == *masked); };
  std::vector<double> degree(g.entity_count(), 0.0);
  for (const auto& t : triples)
    if (live(t)) degree[t.head] += 1.0;
  std::map<EntityId, double> out;
  std::vector<EntityId> seq{e0};
  auto rec = [&](auto&& self, double prob) -> void {
    const std::size_t depth = seq.size() - 1;
    if (depth == rule.size()) {
      out[seq.back()] += prob;
      return;
    }
    const EntityId a = seq.back();
    for (EntityId b = 0; b < g.entity_count(); ++b) {
      double edges = 0.0;
      for (const auto& t : triples)
        if (live(t) && t.head == a && t.relation == rule[depth] && t.tail == b) edges += 1.0;
      if (edges == 0.0) continue;
      seq.push_back(b);
      self(self, prob * edges / degree[a]);
      seq.pop_back();
    }
  };
  rec(rec, 1.0);
  return out;
}

/// All relation sequences of length 1..n_max over `relations` symbols.
inline std::vector<std::vector<RelationId>> all_rules(std::size_t relations, std::size_t n_max) {
  std::vector<std::vector<RelationId>> out;
  std::vector<std::vector<RelationId>> frontier{{}};
  for (std::size_t n = 1; n <= n_max; ++n) {
    std::vector<std::vector<RelationId>> next;
    for (const auto& f : frontier)
      for (RelationId r = 0; r < relations; ++r) {
        auto g = f;
        g.push_back(r);
        next.push_back(g);
      }
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

/// Maximum |a - b| between a sparse result and the brute-force map.
inline double max_abs_diff(const SparseDist& dp, const std::map<EntityId, double>& brute) {
  double worst = 0.0;
  std::map<EntityId, double> merged = brute;
  for (const auto& [e, p] : dp) merged[e] -= p;
  for (const auto& [e, d] : merged) worst = std::max(worst, std::abs(d));
  return worst;
}

/// |a - n| / max(|a|, |n|, floor): relative error with an absolute floor for near-zero components.
inline double rel_err(double a, double n, double floor = 1e-8) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Central-difference check of the double-precision transformer loss at one
/// random parameter point. Returns the worst relative error over `coords`
/// sampled coordinates plus one coordinate from every tensor.
inline double lm_gradcheck(std::uint64_t seed, std::size_t coords = 40) {
  LmConfig c;
  c.layers = 1;
  c.heads = 2;
  c.model_dim = 8;
  c.ff_dim = 16;
  c.context_len = 8;
  c.vocab_size = 12;
  c.dropout = 0.0;
  c.seed = seed;
  TransformerLm<double> model(c);
  Rng rng = stream_rng(seed, 99);
  // Move off the initial point: perturb every parameter, including unit gains and zero biases.
  for (auto& p : model.params()) p += 0.1 * standard_normal(rng);
  const std::size_t batch = 2, len = 8;
  std::vector<TokenId> tokens(batch * len);
  for (auto& t : tokens) t = static_cast<TokenId>(uniform_index(rng, c.vocab_size));
  std::vector<double> grad;
  model.loss(tokens, len, &grad);
  std::vector<std::size_t> picks;
  for (const auto& s : model.layout()) picks.push_back(s.offset + uniform_index(rng, s.size()));
  for (std::size_t i = 0; i < coords; ++i) picks.push_back(uniform_index(rng, model.params().size()));
  double worst = 0.0;
  const double h = 1e-5;
  for (const auto i : picks) {
    const double orig = model.params()[i];
    model.params()[i] = orig + h;
    const double up = model.loss(tokens, len);
    model.params()[i] = orig - h;
    const double down = model.loss(tokens, len);
    model.params()[i] = orig;
    worst = std::max(worst, rel_err(grad[i], (up - down) / (2 * h)));
  }
  return worst;
}

/// Central-difference check of the logistic rule-weight loss on random features.
/// h = 1e-4 balances truncation against round-off for losses of order 10.
inline double logistic_gradcheck(std::uint64_t seed, WeightNorm norm, double h = 1e-4) {
  Rng rng = stream_rng(seed, 7);
  const std::size_t k = 2 + uniform_index(rng, 6), n = 10 + uniform_index(rng, 30);
  FeatureMatrix fm;
  for (std::size_t i = 0; i < n; ++i) {
    fm.examples.push_back({0, 0, 0});
    fm.labels.push_back(uniform_unit(rng) < 0.4 ? 1 : 0);
    std::vector<double> row(k);
    for (auto& x : row) x = uniform_unit(rng) < 0.3 ? 0.0 : uniform_unit(rng);
    fm.rows.push_back(row);
  }
  std::vector<double> w(k);
  // Keep weights away from 0 where the L1 term is not differentiable.
  for (auto& x : w) {
    x = 3.0 * standard_normal(rng);
    if (std::abs(x) < 0.05) x = 0.05;
  }
  const double lambda = 0.01 + uniform_unit(rng);
  std::vector<double> grad;
  logistic_loss(fm, w, lambda, norm, &grad);
  double worst = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double orig = w[j];
    w[j] = orig + h;
    const double up = logistic_loss(fm, w, lambda, norm);
    w[j] = orig - h;
    const double down = logistic_loss(fm, w, lambda, norm);
    w[j] = orig;
    worst = std::max(worst, rel_err(grad[j], (up - down) / (2 * h)));
  }
  return worst;
}

/// One emitted latent-graph path as stored on disk: (example index, begin, end) triples.
struct StoredSegment {
  std::size_t example = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Independent check of the segment and junction invariants of a latent-graph
/// walk. `step_counts[i]` is the number of steps of example i and `node_of(i, j)`
/// the latent node of its step j. Returns an empty string when the path is valid.
template <typename NodeOf>
std::string check_stored_path(std::size_t initial_node, const std::vector<StoredSegment>& segments,
                              const std::vector<std::size_t>& step_counts, NodeOf node_of, std::size_t l_max,
                              std::size_t cap) {
  if (segments.empty()) return "no segments";
  std::size_t total = 0;
  std::size_t node = initial_node;
  for (std::size_t k = 0; k < segments.size(); ++k) {
    const auto& s = segments[k];
    if (s.example >= step_counts.size()) return "unknown example";
    const std::size_t last = step_counts[s.example] - 1;
    if (s.begin > s.end || s.end > last) return "segment outside its example";
    const std::size_t span = s.end - s.begin;
    // end = min(begin + m, last) with 1 <= m <= cap.
    if (span > cap) return "segment longer than the cap";
    if (span == 0 && s.end != last) return "empty advance before the final step";
    if (node_of(s.example, s.begin) != node) return "segment does not start in the current node";
    if (total >= l_max) return "segment appended after reaching L_max";
    total += span + 1;
    node = node_of(s.example, s.end);
  }
  if (total < l_max) return "path shorter than L_max";
  return {};
}

}  // namespace oracle
