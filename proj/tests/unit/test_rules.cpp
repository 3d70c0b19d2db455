#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "pathagg/error.hpp"
#include "pathagg/rules.hpp"

using namespace pathagg;
namespace fs = std::filesystem;

namespace {

KnowledgeGraph graph_of(std::vector<std::array<std::string, 3>> rows) { return make_graph(rows); }

double prob_of(const SparseDist& d, EntityId e) {
  for (const auto& [k, p] : d)
    if (k == e) return p;
  return 0.0;
}

RelationId rel(const KnowledgeGraph& g, const char* name) { return *g.relations().find(name); }
EntityId ent(const KnowledgeGraph& g, const char* name) { return *g.entities().find(name); }

// A -r1-> B1 -r2-> C, A -r1-> B2 -r2-> C, plus the target edge A -r3-> C when `with_target`.
KnowledgeGraph diamond(bool with_target) {
  std::vector<std::array<std::string, 3>> rows{{"A", "r1", "B1"}, {"A", "r1", "B2"}, {"B1", "r2", "C"}, {"B2", "r2", "C"}};
  if (with_target) rows.push_back({"A", "r3", "C"});
  return graph_of(rows);
}

}  // namespace

TEST_CASE("rule_prob hand examples") {
  SUBCASE("fan") {
    const auto g = graph_of({{"A", "r1", "B"}, {"A", "r2", "C"}});
    const std::vector<RelationId> rule{rel(g, "r1")};
    const auto d = rule_prob(g, ent(g, "A"), rule);
    REQUIRE(d.size() == 1);
    CHECK(d[0].first == ent(g, "B"));
    CHECK(d[0].second == doctest::Approx(0.5));
  }
  SUBCASE("diamond") {
    const auto g = diamond(false);
    const std::vector<RelationId> rule{rel(g, "r1"), rel(g, "r2")};
    const auto d = rule_prob(g, ent(g, "A"), rule);
    REQUIRE(d.size() == 1);
    CHECK(d[0].first == ent(g, "C"));
    CHECK(d[0].second == doctest::Approx(1.0));
  }
  SUBCASE("mixed relations") {
    const auto g = graph_of({{"A", "r1", "B"}, {"A", "r2", "X"}, {"B", "r1", "C"}, {"B", "r2", "D"}});
    const std::vector<RelationId> rule{rel(g, "r1"), rel(g, "r2")};
    const auto d = rule_prob(g, ent(g, "A"), rule);
    REQUIRE(d.size() == 1);
    CHECK(d[0].first == ent(g, "D"));
    CHECK(d[0].second == doctest::Approx(0.25));
  }
  SUBCASE("unreachable rule and bad input") {
    const auto g = diamond(false);
    const std::vector<RelationId> rule{rel(g, "r2")};
    CHECK(rule_prob(g, ent(g, "A"), rule).empty());
    CHECK_THROWS(rule_prob(g, ent(g, "A"), std::vector<RelationId>{}));
  }
}

TEST_CASE("rule_prob matches exhaustive enumeration on random graphs") {
  Rng rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t ne = 2 + uniform_index(rng, 7), nr = 1 + uniform_index(rng, 3);
    const double density = 0.2 + 0.4 * uniform_unit(rng);
    const auto g = oracle::random_graph(rng, ne, nr, density / static_cast<double>(nr));
    if (g.triple_count() == 0) continue;
    const auto rules = oracle::all_rules(g.relation_count(), 3);
    const Triple* masked = trial % 2 ? &g.triples()[0] : nullptr;
    std::vector<Rule> rule_objs;
    for (const auto& r : rules) rule_objs.push_back(Rule{r});
    const RuleEvaluator evaluator(rule_objs);
    for (EntityId e = 0; e < g.entity_count(); ++e) {
      const auto shared = evaluator.evaluate(g, e, masked);
      for (std::size_t k = 0; k < rules.size(); ++k) {
        const auto dp = rule_prob(g, e, rules[k], masked);
        const auto brute = oracle::brute_rule_prob(g, e, rules[k], masked);
        CHECK(oracle::max_abs_diff(dp, brute) <= 1e-12);
        CHECK(oracle::max_abs_diff(shared[k], brute) <= 1e-12);
        double mass = 0.0;
        for (const auto& [x, p] : dp) mass += p;
        CHECK(mass <= 1.0 + 1e-12);
      }
    }
  }
}

TEST_CASE("mass is one when no walk can die") {
  // Every entity has exactly the edges r->next and r->prev on a ring.
  std::vector<std::array<std::string, 3>> rows;
  for (int i = 0; i < 5; ++i) {
    rows.push_back({"e" + std::to_string(i), "r", "e" + std::to_string((i + 1) % 5)});
    rows.push_back({"e" + std::to_string(i), "r", "e" + std::to_string((i + 4) % 5)});
  }
  const auto g = make_graph(rows);
  const auto d = rule_prob(g, 0, std::vector<RelationId>{0, 0, 0});
  double mass = 0.0;
  for (const auto& [e, p] : d) mass += p;
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mining") {
  const auto g = diamond(true);
  MineOptions opts;
  opts.n_max = 2;
  opts.min_support = 1;
  const auto set = mine_rules(g, rel(g, "r3"), opts);
  REQUIRE(set.rules.size() == 1);
  CHECK(set.rules[0].rule.relations == std::vector<RelationId>{rel(g, "r1"), rel(g, "r2")});
  CHECK(set.rules[0].support == 2);

  opts.min_support = 2;
  CHECK(mine_rules(g, rel(g, "r3"), opts).rules.empty());

  opts.min_support = 0;
  opts.support = SupportMode::kDistinctPairs;
  const auto pairs = mine_rules(g, rel(g, "r3"), opts);
  REQUIRE(pairs.rules.size() == 1);
  CHECK(pairs.rules[0].support == 1);

  opts = MineOptions{};
  opts.n_max = 1;
  opts.min_support = 0;
  opts.leave_one_out = false;
  CHECK(mine_rules(g, rel(g, "r3"), opts).rules.empty());
  opts.include_direct_rule = true;
  CHECK(mine_rules(g, rel(g, "r3"), opts).rules.size() == 1);

  opts = MineOptions{};
  opts.n_max = 2;
  opts.min_support = 0;
  opts.path_cap = 1;
  MineReport rep;
  const auto capped = mine_rules(g, rel(g, "r3"), opts, &rep);
  CHECK(rep.truncated_pairs == 1);
  CHECK(capped.rules.front().support == 1);
}

TEST_CASE("raising m never adds rules") {
  const fs::path data = PATHAGG_DATA_DIR;
  const auto split = load_split(data / "countries_s3/train.txt", data / "countries_s3/test.txt");
  const auto located = rel(split.train, "locatedIn");
  std::vector<Rule> prev;
  for (std::size_t m : {0, 1, 2, 5, 10, 50}) {
    MineOptions opts;
    opts.n_max = 3;
    opts.min_support = m;
    const auto set = mine_rules(split.train, located, opts);
    const auto rules = set.rule_list();
    for (const auto& s : set.rules) CHECK(s.support > m);
    if (!prev.empty())
      for (const auto& r : rules) CHECK(std::find(prev.begin(), prev.end(), r) != prev.end());
    prev = rules;
    if (m == 1) {
      bool has_len3 = false;
      for (const auto& r : rules) has_len3 |= r.length() == 3;
      CHECK(has_len3);
    }
  }
}

TEST_CASE("scores and distributions") {
  const auto g = diamond(false);
  const Rule h1{{rel(g, "r1")}}, h2{{rel(g, "r1"), rel(g, "r2")}};
  const EntityId a = ent(g, "A");

  RuleWeights zero{0, {h1, h2}, {0.0, 0.0}};
  for (const auto& [e, s] : score(g, zero, a)) CHECK(s == 0.0);

  RuleWeights one{0, {h2}, {1.0}};
  const auto s1 = score(g, one, a);
  const auto p1 = rule_prob(g, a, h2.relations);
  REQUIRE(s1.size() == p1.size());
  CHECK(s1[0].second == p1[0].second);

  RuleWeights mix{0, {h1, h2}, {2.0, -1.0}};
  const auto sm = score(g, mix, a);
  CHECK(prob_of(sm, ent(g, "B1")) == doctest::Approx(2.0 * 0.5));
  CHECK(prob_of(sm, ent(g, "B2")) == doctest::Approx(2.0 * 0.5));
  CHECK(prob_of(sm, ent(g, "C")) == doctest::Approx(-1.0));

  // Uniform when every score is equal.
  const auto uni = weighted_dist(g, zero, a);
  for (const double p : uni.probs) CHECK(p == doctest::Approx(1.0 / g.entity_count()));

  // Scores (0.02, 0.01, 0) at T = 0.01 give softmax(2, 1, 0).
  const auto g3 = graph_of({{"X", "p", "Y"}, {"X", "q", "Z"}, {"Y", "p", "X"}});
  const Rule hp{{rel(g3, "p")}}, hq{{rel(g3, "q")}};
  // From X: P(Y|p) = 0.5, P(Z|q) = 0.5; weights 0.04 and 0.02 give scores 0.02 and 0.01 at Y and Z.
  RuleWeights w3{0, {hp, hq}, {0.04, 0.02}};
  const auto d3 = weighted_dist(g3, w3, ent(g3, "X"), 0.01);
  const double z = std::exp(2.0) + std::exp(1.0) + 1.0;
  CHECK(d3.probs[ent(g3, "Y")] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-12));
  CHECK(d3.probs[ent(g3, "Z")] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
  CHECK(d3.probs[ent(g3, "X")] == doctest::Approx(1.0 / z).epsilon(1e-12));
  CHECK(d3.kind == DistKind::kWeighted);

  // Unweighted: empty set is uniform, single rule equals weight 1, concentrates on C.
  RuleSet empty{0, 2, 1, {}};
  for (const double p : unweighted_dist(g, empty, a).probs) CHECK(p == doctest::Approx(1.0 / g.entity_count()));
  RuleSet single{0, 2, 1, {{h2, 2}}};
  const auto ps = unweighted_dist(g, single, a);
  CHECK(ps.probs == weighted_dist(g, one, a).probs);
  CHECK(ps.kind == DistKind::kUnweighted);
  CHECK(ps.probs[ent(g, "C")] > 0.99);
  CHECK(unweighted_dist(g, single, a, 1.0).probs[ent(g, "C")] < 0.5);

  // Argmax does not depend on T.
  for (double t : {0.001, 0.01, 0.1, 1.0, 10.0}) CHECK(weighted_dist(g, mix, a, t).argmax() == ent(g, "B1"));
  CHECK_THROWS_AS(weighted_dist(g, mix, a, 0.0), ConfigError);
}

TEST_CASE("logistic loss") {
  SUBCASE("zero features give p = 0.5") {
    FeatureMatrix fm{{{0, 0, 0}, {0, 0, 0}}, {1, 0}, {{0.0, 0.0}, {0.0, 0.0}}};
    const std::vector<double> w{1.5, -2.0};
    CHECK(logistic_loss(fm, w, 0.0, WeightNorm::kL1) == doctest::Approx(2.0 * std::log(2.0)));
  }
  SUBCASE("finite differences") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      CHECK(oracle::logistic_gradcheck(s, WeightNorm::kL1) <= 1e-6);
      CHECK(oracle::logistic_gradcheck(s, WeightNorm::kL2Squared) <= 1e-6);
    }
  }
  SUBCASE("separable single feature in quadratic mode") {
    FeatureMatrix fm;
    for (int i = 0; i < 20; ++i) {
      fm.examples.push_back({0, 0, 0});
      fm.labels.push_back(i % 2);
      fm.rows.push_back({i % 2 ? 1.0 : 0.0});
    }
    RuleSet set{0, 1, 0, {{Rule{{0}}, 10}}};
    LogisticOptions opts;
    opts.norm = WeightNorm::kL2Squared;
    LearnReport rep;
    const auto w = fit_weights(fm, set, opts, &rep);
    CHECK(std::isfinite(w.weights[0]));
    CHECK(w.weights[0] > 0.0);
    CHECK(rep.initial_loss == doctest::Approx(20.0 * std::log(2.0)));
    CHECK(rep.final_loss < rep.initial_loss);
    CHECK(rep.converged);
  }
}

TEST_CASE("learned weights on Countries") {
  const fs::path data = PATHAGG_DATA_DIR;
  const auto split = load_split(data / "countries_s3/train.txt", data / "countries_s3/test.txt");
  const auto located = rel(split.train, "locatedIn");
  MineOptions mo;
  mo.n_max = 3;
  const auto set = mine_rules(split.train, located, mo);
  REQUIRE_FALSE(set.rules.empty());
  LogisticOptions lo;
  const auto fm = build_features(split.train, set, lo);
  std::size_t pos = 0;
  for (const auto y : fm.labels) pos += static_cast<std::size_t>(y);
  CHECK(fm.size() - pos == std::min<std::size_t>(4 * pos, split.train.triple_count() - pos));
  LearnReport rep;
  const auto w = fit_weights(fm, set, lo, &rep);
  CHECK(rep.final_loss < rep.initial_loss);
  for (const double x : w.weights) CHECK(std::isfinite(x));
  // Determinism of sampling and fitting.
  const auto w2 = learn_weights(split.train, set, lo);
  CHECK(w2.weights == w.weights);

  const auto dir = fs::temp_directory_path() / "pathagg_rules";
  fs::create_directories(dir);
  const std::vector<RuleSet> sets{set};
  const std::vector<RuleWeights> ws{w};
  write_rules_json(split.train, sets, ws, dir / "r.json", "hash");
  const auto back_sets = read_rule_sets(dir / "r.json");
  const auto back_w = read_rule_weights(dir / "r.json");
  REQUIRE(back_sets.size() == 1);
  CHECK(back_sets[0].rule_list() == set.rule_list());
  CHECK(back_w[0].weights == w.weights);
  write_rules_json(split.train, sets, {}, dir / "s.json");
  CHECK_THROWS_AS(read_rule_weights(dir / "s.json"), DataError);
  write_features_csv(split.train, set, fm, dir / "f.csv");
  CHECK(fs::file_size(dir / "f.csv") > 0);

  RuleSet empty{located, 3, 1, {}};
  CHECK(learn_weights(split.train, empty, lo).weights.empty());
}
