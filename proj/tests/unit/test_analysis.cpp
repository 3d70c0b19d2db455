#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "pathagg/analysis.hpp"
#include "pathagg/error.hpp"

using namespace pathagg;
namespace fs = std::filesystem;

namespace {

const fs::path kData = PATHAGG_DATA_DIR;

EntityDistribution dist(std::vector<double> p) { return {std::move(p), DistKind::kReference, 0.0}; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("kl") {
  const std::vector<double> p{0.2, 0.3, 0.5};
  CHECK(std::abs(kl(p, p)) <= 1e-12);
  for (std::size_t n : {2, 5, 227}) {
    std::vector<double> point(n, 0.0), uni(n, 1.0 / static_cast<double>(n));
    point[1] = 1.0;
    CHECK(kl(point, uni) == doctest::Approx(std::log(static_cast<double>(n))).epsilon(1e-12));
  }
  const std::vector<double> u4(4, 0.25), q{0.7, 0.1, 0.1, 0.1};
  double direct = 0.0;
  for (int i = 0; i < 4; ++i) direct += u4[i] * std::log(u4[i] / q[i]);
  CHECK(kl(u4, q) == doctest::Approx(direct).epsilon(1e-14));
  CHECK(kl(q, u4) >= 0.0);

  const std::vector<double> zero_q{0.5, 0.5, 0.0}, zero_p{0.5, 0.0, 0.5};
  CHECK_THROWS_AS(kl(zero_p, zero_q), NumericError);
  CHECK(std::isfinite(kl(std::vector<double>{0.5, 0.5, 0.0}, std::vector<double>{0.4, 0.4, 0.2})));
  CHECK_THROWS(kl(std::vector<double>{1.0}, std::vector<double>{0.5, 0.5}));
}

TEST_CASE("reference and uniform distributions") {
  const std::array<std::string, 3> rows[] = {{"A", "r", "B"}, {"A", "r", "C"}, {"A", "r", "D"}, {"B", "q", "C"}};
  const auto g = make_graph(rows);
  const std::vector<Triple> test{{0, 0, 0}};
  const QueryAnswerIndex index(g, test);
  const auto four = reference_dist(index, 0, 0, g.entity_count());
  for (EntityId e = 0; e < 4; ++e) CHECK(four.probs[e] == doctest::Approx(0.25));
  const auto one = reference_dist(index, 1, 1, g.entity_count());
  CHECK(one.probs[2] == 1.0);
  CHECK(one.sum() == 1.0);
  CHECK_THROWS_AS(reference_dist(index, 2, 0, g.entity_count()), DataError);
  CHECK(index.is_correct(0, 0, 0));
  CHECK_FALSE(index.is_correct(1, 0, 0));

  CHECK(uniform_dist(1).probs == std::vector<double>{1.0});
  const auto u = uniform_dist(227);
  for (const double p : u.probs) CHECK(p == 1.0 / 227.0);
  CHECK(std::abs(u.sum() - 1.0) <= 1e-12);

  const auto split = load_split(kData / "umls/train.txt", kData / "umls/test.txt");
  const QueryAnswerIndex full(split.train, split.test);
  for (const auto& t : split.test) {
    const auto ref = reference_dist(full, t.head, t.relation, split.train.entity_count());
    std::size_t support = 0;
    for (const double p : ref.probs) support += p > 0.0 ? 1 : 0;
    CHECK(support == full.answers(t.head, t.relation).size());
    CHECK(std::abs(ref.sum() - 1.0) <= 1e-9);
    CHECK(full.is_correct(t.head, t.relation, t.tail));
  }
}

TEST_CASE("accuracy") {
  const auto split = load_split(kData / "countries_s3/train.txt", kData / "countries_s3/test.txt");
  const QueryAnswerIndex index(split.train, split.test);
  CHECK(accuracy([&](EntityId e, RelationId r) { return index.answers(e, r).front(); }, split.test, index) == 1.0);

  // An entity that is never a tail of a test query.
  EntityId outside = 0;
  while (true) {
    bool hit = false;
    for (const auto& t : split.test) hit |= index.is_correct(t.head, t.relation, outside);
    if (!hit) break;
    ++outside;
  }
  CHECK(accuracy([&](EntityId, RelationId) { return outside; }, split.test, index) == 0.0);

  // Random predictor against (mean answer-set size) / |E|.
  const auto n = split.train.entity_count();
  double expected = 0.0;
  for (const auto& t : split.test) expected += static_cast<double>(index.answers(t.head, t.relation).size());
  expected /= static_cast<double>(split.test.size()) * static_cast<double>(n);
  Rng rng(17);
  double total = 0.0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i)
    total += accuracy([&](EntityId, RelationId) { return static_cast<EntityId>(uniform_index(rng, n)); }, split.test,
                      index);
  CHECK(std::abs(total / trials - expected) <= 0.01);

  const std::vector<EntityId> preds(split.test.size(), outside);
  CHECK(accuracy(preds, split.test, index) == 0.0);
}

TEST_CASE("averaging indices") {
  const std::vector<Triple> test{{0, 0, 1}, {0, 0, 2}, {1, 0, 2}};
  CHECK(averaging_indices(test, false) == std::vector<std::size_t>{0, 1, 2});
  CHECK(averaging_indices(test, true) == std::vector<std::size_t>{0, 2});
}

TEST_CASE("kl grid") {
  const std::vector<Triple> test{{0, 0, 1}, {1, 0, 2}};
  auto row = [](std::size_t l, double tilt) {
    KlRowInput in;
    in.l_max = l;
    in.lm = {dist({0.5 + tilt, 0.3, 0.2 - tilt}), dist({0.2, 0.5, 0.3})};
    in.columns = {{"P_w@N1", {dist({0.6, 0.3, 0.1}), dist({0.1, 0.8, 0.1})}},
                  {"P_u", {uniform_dist(3), uniform_dist(3)}}};
    return in;
  };
  SUBCASE("1x1") {
    KlRowInput in = row(1, 0.0);
    in.columns.pop_back();
    const std::vector<KlRowInput> rows{in};
    const auto grid = kl_grid(rows, test);
    REQUIRE(grid.mean.size() == 1);
    REQUIRE(grid.mean[0].size() == 1);
    CHECK(std::isfinite(grid.mean[0][0]));
    const double a = kl(in.columns[0].dists[0], in.lm[0]), b = kl(in.columns[0].dists[1], in.lm[1]);
    CHECK(grid.at(1, "P_w@N1") == doctest::Approx((a + b) / 2).epsilon(1e-14));
    CHECK(grid.raw[0][0] == std::vector<double>{a, b});
  }
  SUBCASE("distinct checkpoints give distinct uniform columns") {
    const std::vector<KlRowInput> rows{row(1, 0.0), row(3, 0.1)};
    const auto grid = kl_grid(rows, test);
    CHECK(grid.at(1, "P_u") != grid.at(3, "P_u"));
    for (const auto& r : grid.mean)
      for (const double v : r) CHECK(v >= 0.0);
    CHECK_THROWS(grid.at(2, "P_u"));

    const auto dir = fs::temp_directory_path() / "pathagg_grid";
    fs::create_directories(dir);
    write_kl_grid_csv(grid, dir / "a.csv", "h");
    write_kl_grid_csv(kl_grid(rows, test), dir / "b.csv", "h");
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
    CHECK(slurp(dir / "a.csv").find("L_max,P_w@N1,P_u") != std::string::npos);
  }
  SUBCASE("mismatched columns") {
    auto b = row(3, 0.0);
    b.columns[1].name = "other";
    const std::vector<KlRowInput> rows{row(1, 0.0), b};
    CHECK_THROWS(kl_grid(rows, test));
  }
}

TEST_CASE("rule length stats") {
  SUBCASE("single rule of length 2") {
    const std::vector<RuleSet> sets{{0, 2, 0, {{Rule{{1, 2}}, 5}}}};
    const std::vector<RuleWeights> ws{{0, {Rule{{1, 2}}}, {0.3}}};
    const auto rep = rule_length_stats(sets, ws);
    CHECK(rep.mean_support_length == 2.0);
    CHECK(rep.mean_weight_length == 2.0);
  }
  SUBCASE("hand-built sets") {
    // Relation 0: support argmax is length 3, weight argmax length 1.
    // Relation 1: support argmax length 1, weight argmax length 2.
    // Relation 2: empty, excluded.
    const RuleSet s0{0, 3, 0, {{Rule{{1, 1, 1}}, 9}, {Rule{{2}}, 4}, {Rule{{1, 2}}, 4}}};
    const RuleSet s1{1, 3, 0, {{Rule{{0}}, 7}, {Rule{{0, 0}}, 7}}};
    const RuleSet s2{2, 3, 0, {}};
    const std::vector<RuleSet> sets{s0, s1, s2};
    const std::vector<RuleWeights> ws{{0, s0.rule_list(), {0.1, 2.0, -3.0}},
                                      {1, s1.rule_list(), {0.5, 0.9}},
                                      {2, {}, {}}};
    const auto rep = rule_length_stats(sets, ws);
    REQUIRE(rep.relations.size() == 2);
    CHECK(rep.excluded == std::vector<RelationId>{2});
    CHECK(rep.mean_support_length == doctest::Approx((3.0 + 1.0) / 2));
    CHECK(rep.mean_weight_length == doctest::Approx((1.0 + 2.0) / 2));
  }
}

TEST_CASE("proposition 1 surrogate") {
  SUBCASE("equal rule distributions give zero") {
    const std::vector<std::vector<double>> table{{0.5, 0.5, 0.0}, {0.1, 0.2, 0.7}};
    const std::vector<double> p{0.3, 0.7};
    const auto [ke, kr] = prop1_pair(table, p, p);
    CHECK(ke == doctest::Approx(0.0).scale(1e-15));
    CHECK(kr == doctest::Approx(0.0).scale(1e-15));
  }
  SUBCASE("injective deterministic map keeps the divergence") {
    const std::vector<std::vector<double>> table{{0, 1, 0}, {0, 0, 1}, {1, 0, 0}};
    const std::vector<double> pw{0.2, 0.5, 0.3}, plm{0.4, 0.4, 0.2};
    const auto [ke, kr] = prop1_pair(table, pw, plm);
    CHECK(ke == doctest::Approx(kr).epsilon(1e-14));
    CHECK(kr > 0.0);
  }
  SUBCASE("merging rules can only shrink the divergence") {
    const std::vector<std::vector<double>> table{{1, 0}, {1, 0}, {0, 1}};
    const std::vector<double> pw{0.6, 0.1, 0.3}, plm{0.1, 0.6, 0.3};
    const auto [ke, kr] = prop1_pair(table, pw, plm);
    CHECK(ke == doctest::Approx(0.0).scale(1e-15));
    CHECK(kr > 0.1);
  }
  SUBCASE("random trials") {
    Rng rng(3);
    const auto rep = prop1_check(10, 6, 1000, rng);
    CHECK(rep.trials == 1000);
    CHECK(rep.violations == 0);
    CHECK(rep.max_slack <= 1e-12);
  }
}
