#include "pathagg/walk_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "pathagg/error.hpp"

namespace pathagg {

Vocabulary::Vocabulary(const KnowledgeGraph& graph)
    : entity_names_(graph.entities().names()), relation_names_(graph.relations().names()) {}

TokenId Vocabulary::entity(EntityId e) const {
  if (e >= entity_count()) throw std::out_of_range("entity id out of vocabulary");
  return static_cast<TokenId>(e);
}

TokenId Vocabulary::relation(RelationId r) const {
  if (r >= relation_count()) throw std::out_of_range("relation id out of vocabulary");
  return static_cast<TokenId>(entity_count() + r);
}

const std::string& Vocabulary::surface(TokenId t) const {
  if (t < 0 || static_cast<std::size_t>(t) >= size()) throw std::out_of_range("token id out of vocabulary");
  auto idx = static_cast<std::size_t>(t);
  if (idx < entity_count()) return entity_names_[idx];
  idx -= entity_count();
  if (idx < relation_count()) return relation_names_[idx];
  return specials_[idx - relation_count()];
}

std::string Vocabulary::detokenize(std::span<const TokenId> tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += surface(tokens[i]);
  }
  return out;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (TokenId t = 0; static_cast<std::size_t>(t) < size(); ++t) {
    const auto& s = surface(t);
    h = fnv1a(s.data(), s.size(), h);
    const char sep = '\n';
    h = fnv1a(&sep, 1, h);
  }
  return h;
}

WalkSampler::WalkSampler(const KnowledgeGraph& graph) : graph_(&graph) {
  if (graph.triple_count() == 0) throw DataError("random walk requested on a graph with no edges");
}

WalkPath WalkSampler::sample(std::size_t l_max, Rng& rng, WalkLengthMode mode) const {
  if (l_max == 0) throw ConfigError("L_max must be >= 1");
  const auto& g = *graph_;
  std::size_t length = l_max;
  if (mode == WalkLengthMode::kUniform) length = 1 + uniform_index(rng, l_max);

  EntityId current;
  do {
    current = static_cast<EntityId>(uniform_index(rng, g.entity_count()));
  } while (g.out_degree(current) == 0);

  WalkPath path;
  path.steps.reserve(length);
  for (std::size_t i = 0; i < length; ++i) {
    auto edges = g.outgoing(current);
    if (edges.empty()) break;
    const auto& edge = edges[uniform_index(rng, edges.size())];
    path.steps.push_back({current, edge.relation, edge.tail});
    current = edge.tail;
  }
  return path;
}

WalkPath sample_walk(const KnowledgeGraph& graph, std::size_t l_max, Rng& rng, WalkLengthMode mode) {
  return WalkSampler(graph).sample(l_max, rng, mode);
}

std::vector<WalkPath> sample_walks(const KnowledgeGraph& graph, std::size_t count, std::size_t l_max,
                                   std::uint64_t seed, WalkLengthMode mode, unsigned jobs) {
  WalkSampler sampler(graph);
  std::vector<WalkPath> walks(count);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto rng = stream_rng(seed, i);
      walks[i] = sampler.sample(l_max, rng, mode);
    }
  };
  jobs = std::max(1u, jobs);
  if (jobs == 1 || count < 2 * jobs) {
    work(0, count);
    return walks;
  }
  std::vector<std::jthread> threads;
  const std::size_t per = (count + jobs - 1) / jobs;
  for (unsigned j = 0; j < jobs; ++j) {
    const std::size_t b = j * per, e = std::min(count, b + per);
    if (b < e) threads.emplace_back(work, b, e);
  }
  return walks;
}

std::size_t default_walk_count(const KnowledgeGraph& graph, std::size_t l_max, double tokens_per_triple) {
  const double tokens = tokens_per_triple * static_cast<double>(graph.triple_count());
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(tokens / (4.0 * static_cast<double>(l_max) + 1.0))));
}

std::vector<TokenId> verbalize(const Vocabulary& vocab, const WalkPath& path) {
  std::vector<TokenId> out;
  out.reserve(4 * path.steps.size());
  for (const auto& t : path.steps) {
    out.push_back(vocab.entity(t.head));
    out.push_back(vocab.relation(t.relation));
    out.push_back(vocab.entity(t.tail));
    out.push_back(vocab.period());
  }
  return out;
}

std::vector<TokenId> make_query_prompt(const Vocabulary& vocab, EntityId e1, RelationId r) {
  return {vocab.entity(e1), vocab.relation(r)};
}

TokenCorpus pack_chunks(std::span<const std::vector<TokenId>> paragraphs, std::size_t chunk_len, TokenId eos) {
  if (chunk_len < 2) throw ConfigError("chunk length must be >= 2");
  TokenCorpus corpus;
  corpus.chunk_len = chunk_len;
  for (const auto& p : paragraphs) {
    corpus.tokens.insert(corpus.tokens.end(), p.begin(), p.end());
    corpus.tokens.push_back(eos);
  }
  corpus.tokens.resize(corpus.tokens.size() / chunk_len * chunk_len);
  return corpus;
}

TokenCorpus build_corpus(const KnowledgeGraph& graph, const Vocabulary& vocab, std::size_t walk_count,
                         std::size_t l_max, std::size_t chunk_len, std::uint64_t seed, WalkLengthMode mode,
                         unsigned jobs) {
  const auto walks = sample_walks(graph, walk_count, l_max, seed, mode, jobs);
  std::vector<std::vector<TokenId>> paragraphs;
  paragraphs.reserve(walks.size());
  for (const auto& w : walks) paragraphs.push_back(verbalize(vocab, w));
  auto corpus = pack_chunks(paragraphs, chunk_len, vocab.eos());
  corpus.meta = {vocab.hash(), seed, static_cast<std::uint32_t>(l_max), walk_count};
  return corpus;
}

namespace {

constexpr char kCorpusMagic[4] = {'P', 'A', 'G', 'C'};
constexpr std::uint32_t kCorpusVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("truncated corpus file " + path.string());
  return v;
}

}  // namespace

void write_corpus(const TokenCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kCorpusMagic, 4);
  put(out, kCorpusVersion);
  put(out, corpus.meta.vocab_hash);
  put(out, static_cast<std::uint64_t>(corpus.chunk_len));
  put(out, corpus.meta.seed);
  put(out, corpus.meta.l_max);
  put(out, corpus.meta.walk_count);
  put(out, static_cast<std::uint64_t>(corpus.tokens.size()));
  out.write(reinterpret_cast<const char*>(corpus.tokens.data()),
            static_cast<std::streamsize>(corpus.tokens.size() * sizeof(TokenId)));
}

TokenCorpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCorpusMagic, 4) != 0)
    throw DataError(path.string() + " is not a corpus file");
  if (get<std::uint32_t>(in, path) != kCorpusVersion) throw DataError("unsupported corpus version in " + path.string());
  TokenCorpus corpus;
  corpus.meta.vocab_hash = get<std::uint64_t>(in, path);
  corpus.chunk_len = static_cast<std::size_t>(get<std::uint64_t>(in, path));
  corpus.meta.seed = get<std::uint64_t>(in, path);
  corpus.meta.l_max = get<std::uint32_t>(in, path);
  corpus.meta.walk_count = get<std::uint64_t>(in, path);
  const auto n = get<std::uint64_t>(in, path);
  corpus.tokens.resize(n);
  if (!in.read(reinterpret_cast<char*>(corpus.tokens.data()), static_cast<std::streamsize>(n * sizeof(TokenId))))
    throw DataError("truncated corpus file " + path.string());
  return corpus;
}

void write_corpus_text(const TokenCorpus& corpus, const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  bool line_open = false;
  for (const auto t : corpus.tokens) {
    if (t == vocab.eos()) {
      if (line_open) out << '\n';
      out << '\n';
      line_open = false;
    } else if (t == vocab.period()) {
      out << " .\n";
      line_open = false;
    } else {
      if (line_open) out << ' ';
      out << vocab.surface(t);
      line_open = true;
    }
  }
  if (line_open) out << '\n';
}

}  // namespace pathagg
