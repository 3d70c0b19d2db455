#include "pathagg/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <stdexcept>

#include "pathagg/error.hpp"

namespace pathagg {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl: support sizes differ");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) throw NumericError("kl: infinite divergence at index " + std::to_string(i));
    total += p[i] * std::log(p[i] / q[i]);
  }
  // Rounding can leave tiny negatives for p == q.
  return std::max(total, 0.0);
}

QueryAnswerIndex::QueryAnswerIndex(const KnowledgeGraph& train, std::span<const Triple> extra) {
  for (const auto& t : train.triples()) add(t);
  for (const auto& t : extra) add(t);
}

void QueryAnswerIndex::add(const Triple& t) {
  auto& tails = map_[{t.head, t.relation}];
  auto it = std::lower_bound(tails.begin(), tails.end(), t.tail);
  if (it == tails.end() || *it != t.tail) tails.insert(it, t.tail);
}

bool QueryAnswerIndex::has_query(EntityId e1, RelationId r) const { return map_.contains({e1, r}); }

const std::vector<EntityId>& QueryAnswerIndex::answers(EntityId e1, RelationId r) const {
  auto it = map_.find({e1, r});
  if (it == map_.end())
    throw DataError("unknown query (entity " + std::to_string(e1) + ", relation " + std::to_string(r) + ")");
  return it->second;
}

bool QueryAnswerIndex::is_correct(EntityId e1, RelationId r, EntityId e2) const {
  auto it = map_.find({e1, r});
  return it != map_.end() && std::binary_search(it->second.begin(), it->second.end(), e2);
}

EntityDistribution reference_dist(const QueryAnswerIndex& index, EntityId e1, RelationId r,
                                  std::size_t entity_count) {
  const auto& ans = index.answers(e1, r);
  EntityDistribution d{std::vector<double>(entity_count, 0.0), DistKind::kReference, 0.0};
  for (const auto e : ans) {
    if (e >= entity_count) throw std::out_of_range("answer entity out of range");
    d.probs[e] = 1.0 / static_cast<double>(ans.size());
  }
  return d;
}

EntityDistribution uniform_dist(std::size_t entity_count) {
  if (entity_count == 0) throw std::invalid_argument("uniform_dist over zero entities");
  return {std::vector<double>(entity_count, 1.0 / static_cast<double>(entity_count)), DistKind::kUniform, 0.0};
}

double accuracy(const Predictor& predictor, std::span<const Triple> test, const QueryAnswerIndex& index) {
  std::vector<EntityId> pred;
  pred.reserve(test.size());
  for (const auto& t : test) pred.push_back(predictor(t.head, t.relation));
  return accuracy(pred, test, index);
}

double accuracy(std::span<const EntityId> predictions, std::span<const Triple> test, const QueryAnswerIndex& index) {
  if (predictions.size() != test.size()) throw std::invalid_argument("accuracy: prediction count mismatch");
  if (test.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (index.is_correct(test[i].head, test[i].relation, predictions[i])) ++ok;
  return static_cast<double>(ok) / static_cast<double>(test.size());
}

std::vector<std::size_t> averaging_indices(std::span<const Triple> test, bool per_query) {
  std::vector<std::size_t> idx;
  std::set<std::pair<EntityId, RelationId>> seen;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (!per_query || seen.insert({test[i].head, test[i].relation}).second) idx.push_back(i);
  return idx;
}

double KlGrid::at(std::size_t l, std::string_view column) const {
  const auto r = std::find(l_max.begin(), l_max.end(), l);
  const auto c = std::find(columns.begin(), columns.end(), column);
  if (r == l_max.end() || c == columns.end())
    throw std::out_of_range("kl grid has no cell (" + std::to_string(l) + ", " + std::string(column) + ")");
  return mean[r - l_max.begin()][c - columns.begin()];
}

KlGrid kl_grid(std::span<const KlRowInput> rows, std::span<const Triple> test, bool per_query) {
  KlGrid grid;
  if (rows.empty()) return grid;
  for (const auto& c : rows.front().columns) grid.columns.push_back(c.name);
  const auto idx = averaging_indices(test, per_query);
  for (const auto& row : rows) {
    if (row.lm.size() != test.size())
      throw DataError("LM distributions for L_max=" + std::to_string(row.l_max) + " do not cover the test set");
    if (row.columns.size() != grid.columns.size()) throw std::invalid_argument("kl grid rows disagree on columns");
    grid.l_max.push_back(row.l_max);
    std::vector<double> means;
    std::vector<std::vector<double>> raws;
    for (std::size_t c = 0; c < row.columns.size(); ++c) {
      const auto& col = row.columns[c];
      if (col.name != grid.columns[c]) throw std::invalid_argument("kl grid rows disagree on columns");
      if (col.dists.size() != test.size()) throw DataError("column " + col.name + " does not cover the test set");
      std::vector<double> raw(test.size());
      for (std::size_t i = 0; i < test.size(); ++i) raw[i] = kl(col.dists[i], row.lm[i]);
      double sum = 0.0;
      for (const auto i : idx) sum += raw[i];
      means.push_back(idx.empty() ? 0.0 : sum / static_cast<double>(idx.size()));
      raws.push_back(std::move(raw));
    }
    grid.mean.push_back(std::move(means));
    grid.raw.push_back(std::move(raws));
  }
  return grid;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path, const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  if (!config_hash.empty()) out << "# config_hash=" << config_hash << '\n';
  return out;
}

}  // namespace

void write_kl_grid_csv(const KlGrid& grid, const std::filesystem::path& path, const std::string& config_hash) {
  auto out = open_csv(path, config_hash);
  out << "L_max";
  for (const auto& c : grid.columns) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < grid.l_max.size(); ++r) {
    out << grid.l_max[r];
    for (const double v : grid.mean[r]) out << ',' << format_double(v);
    out << '\n';
  }
}

void write_kl_raw_csv(const KlGrid& grid, const KnowledgeGraph& graph, std::span<const Triple> test,
                      const std::filesystem::path& path, const std::string& config_hash) {
  auto out = open_csv(path, config_hash);
  out << "L_max,column,index,head,relation,tail,kl\n";
  for (std::size_t r = 0; r < grid.l_max.size(); ++r)
    for (std::size_t c = 0; c < grid.columns.size(); ++c)
      for (std::size_t i = 0; i < test.size(); ++i)
        out << grid.l_max[r] << ',' << grid.columns[c] << ',' << i << ',' << graph.entity_name(test[i].head) << ','
            << graph.relation_name(test[i].relation) << ',' << graph.entity_name(test[i].tail) << ','
            << format_double(grid.raw[r][c][i]) << '\n';
}

void write_accuracy_curve_csv(std::span<const AccuracyPoint> points, const std::filesystem::path& path,
                              const std::string& config_hash) {
  auto out = open_csv(path, config_hash);
  out << "dataset,predictor,L_max,accuracy\n";
  for (const auto& p : points)
    out << p.dataset << ',' << p.predictor << ',' << p.length << ',' << format_double(p.accuracy) << '\n';
}

RuleLengthReport rule_length_stats(std::span<const RuleSet> sets, std::span<const RuleWeights> weights) {
  RuleLengthReport rep;
  double support_sum = 0.0, weight_sum = 0.0;
  for (const auto& set : sets) {
    if (set.rules.empty()) {
      std::cerr << "warning: relation " << set.target << " has an empty rule set; excluded from length stats\n";
      rep.excluded.push_back(set.target);
      continue;
    }
    RelationLengthStat st{set.target, 0, 0};
    std::size_t best_support = 0;
    for (const auto& s : set.rules)
      if (st.support_length == 0 || s.support > best_support) {
        best_support = s.support;
        st.support_length = s.rule.length();
      }
    const RuleWeights* w = nullptr;
    for (const auto& cand : weights)
      if (cand.target == set.target) w = &cand;
    if (w && !w->rules.empty()) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < w->weights.size(); ++k)
        if (w->weights[k] > w->weights[best]) best = k;
      st.weight_length = w->rules[best].length();
    } else {
      st.weight_length = st.support_length;
      std::cerr << "warning: relation " << set.target << " has no learned weights; using support length\n";
    }
    support_sum += static_cast<double>(st.support_length);
    weight_sum += static_cast<double>(st.weight_length);
    rep.relations.push_back(st);
  }
  if (!rep.relations.empty()) {
    rep.mean_support_length = support_sum / static_cast<double>(rep.relations.size());
    rep.mean_weight_length = weight_sum / static_cast<double>(rep.relations.size());
  }
  return rep;
}

void write_rule_stats_csv(const RuleLengthReport& report, const KnowledgeGraph& graph,
                          const std::filesystem::path& path, const std::string& config_hash) {
  auto out = open_csv(path, config_hash);
  out << "relation,support_length,weight_length\n";
  for (const auto& s : report.relations)
    out << graph.relation_name(s.relation) << ',' << s.support_length << ',' << s.weight_length << '\n';
  out << "mean," << format_double(report.mean_support_length) << ',' << format_double(report.mean_weight_length)
      << '\n';
}

std::pair<double, double> prop1_pair(std::span<const std::vector<double>> p_e_given_h, std::span<const double> p_w,
                                     std::span<const double> p_lm) {
  if (p_e_given_h.size() != p_w.size() || p_w.size() != p_lm.size() || p_w.empty())
    throw std::invalid_argument("prop1_pair: rule counts differ");
  const std::size_t n = p_e_given_h.front().size();
  std::vector<double> ew(n, 0.0), elm(n, 0.0);
  for (std::size_t h = 0; h < p_w.size(); ++h) {
    if (p_e_given_h[h].size() != n) throw std::invalid_argument("prop1_pair: ragged table");
    for (std::size_t e = 0; e < n; ++e) {
      ew[e] += p_w[h] * p_e_given_h[h][e];
      elm[e] += p_lm[h] * p_e_given_h[h][e];
    }
  }
  return {kl(ew, elm), kl(p_w, p_lm)};
}

namespace {

// Random simplex point. Cubing exponential draws skews the mass so that some
// coordinates are tiny, and with `allow_zero` a few are dropped entirely.
std::vector<double> random_simplex(std::size_t n, Rng& rng, bool allow_zero) {
  std::vector<double> v(n);
  double total = 0.0;
  while (total <= 0.0) {
    total = 0.0;
    for (auto& x : v) {
      double u = uniform_unit(rng);
      while (u <= 0.0) u = uniform_unit(rng);
      x = std::pow(-std::log(u), 3.0);
      if (allow_zero && uniform_unit(rng) < 0.25) x = 0.0;
      total += x;
    }
  }
  for (auto& x : v) x /= total;
  return v;
}

}  // namespace

Prop1Report prop1_check(std::size_t entity_count, std::size_t rule_count, std::size_t trials, Rng& rng,
                        double tolerance) {
  if (entity_count < 2 || rule_count < 2) throw ConfigError("prop1_check needs at least 2 entities and 2 rules");
  Prop1Report rep{entity_count, rule_count, trials, 0, -std::numeric_limits<double>::infinity()};
  std::vector<std::vector<double>> table(rule_count);
  for (std::size_t t = 0; t < trials; ++t) {
    for (auto& row : table) row = random_simplex(entity_count, rng, true);
    const auto pw = random_simplex(rule_count, rng, true);
    const auto plm = random_simplex(rule_count, rng, false);
    const auto [ke, kr] = prop1_pair(table, pw, plm);
    const double slack = ke - kr;
    rep.max_slack = std::max(rep.max_slack, slack);
    if (slack > tolerance) ++rep.violations;
  }
  if (trials == 0) rep.max_slack = 0.0;
  return rep;
}

void write_prop1_csv(std::span<const Prop1Report> reports, const std::filesystem::path& path,
                     const std::string& config_hash) {
  auto out = open_csv(path, config_hash);
  out << "entity_count,rule_count,trials,violations,max_slack\n";
  for (const auto& r : reports)
    out << r.entity_count << ',' << r.rule_count << ',' << r.trials << ',' << r.violations << ','
        << format_double(r.max_slack) << '\n';
}

}  // namespace pathagg
