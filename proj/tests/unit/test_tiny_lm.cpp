#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "pathagg/error.hpp"
#include "pathagg/tiny_lm.hpp"

using namespace pathagg;
namespace fs = std::filesystem;

namespace {

LmConfig small_config(std::size_t vocab, std::uint64_t seed = 0) {
  LmConfig c;
  c.layers = 2;
  c.heads = 2;
  c.model_dim = 32;
  c.ff_dim = 64;
  c.context_len = 16;
  c.vocab_size = vocab;
  c.dropout = 0.0;
  c.seed = seed;
  return c;
}

// Graph where each entity has exactly one outgoing edge, so every prompt has one answer.
KnowledgeGraph deterministic_graph() {
  std::vector<std::array<std::string, 3>> rows{{"A", "r", "B"}, {"B", "r", "A"}};
  return make_graph(rows);
}

}  // namespace

TEST_CASE("config validation") {
  LmConfig c = small_config(10);
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(10);
  c.context_len = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  TrainConfig t;
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("initialisation") {
  const TinyLm a(small_config(20, 3)), b(small_config(20, 3)), c(small_config(20, 4));
  CHECK(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  CHECK_FALSE(std::equal(a.params().begin(), a.params().end(), c.params().begin()));
  const auto& wte = a.slot("wte");
  CHECK(wte.rows == 20);
  CHECK(wte.cols == 32);

  // Closed form for 2 layers, dim 64, vocab 300, ff 4*dim, context 256:
  // wte + wpe + per layer (2 layer norms, qkv, proj, 2 MLP matrices with biases) + final norm.
  LmConfig big;
  big.layers = 2;
  big.heads = 4;
  big.model_dim = 64;
  big.ff_dim = 256;
  big.context_len = 256;
  big.vocab_size = 300;
  const std::size_t d = 64, f = 256, per_layer = 2 * 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + (d * f + f) + (f * d + d);
  const std::size_t expected = 300 * d + 256 * d + 2 * per_layer + 2 * d;
  CHECK(TinyLm::parameter_count(big) == expected);
  CHECK(TinyLm(big).params().size() == expected);

  const auto ln = a.slot("lnf.g");
  for (std::size_t i = ln.offset; i < ln.offset + ln.size(); ++i) CHECK(a.params()[i] == 1.0f);
}

TEST_CASE("loss at init is near ln V") {
  const std::size_t vocab = 50;
  const TinyLm m(small_config(vocab, 1));
  Rng rng(5);
  std::vector<TokenId> tokens(4 * 16);
  for (auto& t : tokens) t = static_cast<TokenId>(uniform_index(rng, vocab));
  const double loss = m.loss(tokens, 16);
  CHECK(std::abs(loss - std::log(50.0)) / std::log(50.0) < 0.05);
  tokens[3] = static_cast<TokenId>(vocab);
  CHECK_THROWS_AS(m.loss(tokens, 16), std::out_of_range);
}

TEST_CASE("gradients match finite differences in double precision") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) CHECK(oracle::lm_gradcheck(seed) <= 1e-4);
}

TEST_CASE("causality") {
  const TinyLm m(small_config(12, 2));
  std::vector<TokenId> a{1, 2, 3, 4, 5, 6, 7, 8}, b = a;
  b[6] = 11;
  b[7] = 0;
  const auto la = m.logits(a), lb = m.logits(b);
  for (Eigen::Index t = 0; t < 6; ++t) CHECK((la.row(t) - lb.row(t)).cwiseAbs().maxCoeff() <= 1e-6f);
  CHECK((la.row(6) - lb.row(6)).cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("memorise a repeated token") {
  TinyLm m(small_config(8, 0));
  TokenCorpus corpus;
  corpus.chunk_len = 16;
  corpus.tokens.assign(16 * 4, 3);
  TrainConfig t;
  t.batch_size = 4;
  t.steps = 200;
  t.learning_rate = 3e-3;
  t.weight_decay = 0.0;
  LmTrainer trainer(m, t);
  trainer.train(corpus);
  CHECK(m.loss(corpus.tokens, 16) < 0.01);
}

TEST_CASE("training contract") {
  const auto g = deterministic_graph();
  const Vocabulary v(g);
  // Single-triple paragraphs plus EOS fill 5 tokens, so every 10-token chunk starts with a query.
  const auto corpus = build_corpus(g, v, 400, 1, 10, 1);
  const TinyLm init(small_config(v.size(), 9));

  SUBCASE("zero steps leave parameters unchanged") {
    TrainConfig t;
    t.steps = 0;
    const auto out = train(init, corpus, t);
    CHECK(std::equal(out.params().begin(), out.params().end(), init.params().begin()));
  }
  SUBCASE("same seeds give identical runs") {
    TrainConfig t;
    t.steps = 20;
    t.batch_size = 4;
    std::vector<TrainLogRow> la, lb;
    const auto a = train(init, corpus, t, &la);
    const auto b = train(init, corpus, t, &lb);
    CHECK(la.back().loss == lb.back().loss);
    CHECK(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  }
  SUBCASE("untrained distribution is near uniform and normalised") {
    const auto d = lm_entity_distribution(init, v, 0, 0);
    CHECK(d.size() == v.entity_count());
    CHECK(std::abs(d.sum() - 1.0) <= 1e-9);
    const auto [lo, hi] = std::minmax_element(d.probs.begin(), d.probs.end());
    CHECK(*lo > 0.0);
    CHECK(*hi / *lo < 3.0);
  }
  SUBCASE("overfit deterministic graph") {
    TrainConfig t;
    t.steps = 150;
    t.batch_size = 8;
    t.learning_rate = 3e-3;
    const auto m = train(init, corpus, t);
    CHECK(lm_entity_distribution(m, v, 0, 0).probs[1] > 0.9);
    CHECK(lm_entity_distribution(m, v, 1, 0).probs[0] > 0.9);
    for (const auto& tr : g.triples()) CHECK(predict(m, v, tr.head, tr.relation) == tr.tail);
  }
}

TEST_CASE("argmax tie rule") {
  EntityDistribution d{{0.1, 0.1, 0.1, 0.3, 0.0, 0.0, 0.0, 0.3}, DistKind::kLm, 0.0};
  CHECK(d.argmax() == 3);
}

TEST_CASE("checkpoint round trip and nan guard") {
  const auto dir = fs::temp_directory_path() / "pathagg_lm";
  fs::create_directories(dir);
  const TinyLm m(small_config(10, 4));
  AdamState s;
  s.step = 7;
  s.m.assign(m.params().size(), 0.5f);
  s.v.assign(m.params().size(), 0.25f);
  save_checkpoint(m, s, dir / "m.palm", "abc");
  AdamState back;
  const auto r = load_checkpoint(dir / "m.palm", &back);
  CHECK(std::equal(r.params().begin(), r.params().end(), m.params().begin()));
  CHECK(back.step == 7);
  CHECK(back.m == s.m);
  CHECK(r.config().vocab_size == 10);

  TinyLm bad(small_config(10, 4));
  for (auto& p : bad.params()) p = std::numeric_limits<float>::quiet_NaN();
  TokenCorpus corpus;
  corpus.chunk_len = 16;
  corpus.tokens.assign(32, 1);
  TrainConfig t;
  t.steps = 3;
  t.batch_size = 2;
  LmTrainer trainer(bad, t);
  CHECK_THROWS_AS(trainer.train(corpus), NumericError);
}
