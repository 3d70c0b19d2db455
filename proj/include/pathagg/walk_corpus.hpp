#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pathagg/kg.hpp"
#include "pathagg/rng.hpp"

namespace pathagg {

using TokenId = std::int32_t;

/// Token layout: [entities | relations | PERIOD, EOS, PAD]. The entity block
/// starts at 0 so that entity id == entity token id.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(const KnowledgeGraph& graph);

  std::size_t entity_count() const noexcept { return entity_names_.size(); }
  std::size_t relation_count() const noexcept { return relation_names_.size(); }
  std::size_t size() const noexcept { return entity_count() + relation_count() + 3; }

  TokenId entity(EntityId e) const;
  TokenId relation(RelationId r) const;
  TokenId period() const noexcept { return static_cast<TokenId>(entity_count() + relation_count()); }
  TokenId eos() const noexcept { return period() + 1; }
  TokenId pad() const noexcept { return period() + 2; }

  bool is_entity(TokenId t) const noexcept { return t >= 0 && static_cast<std::size_t>(t) < entity_count(); }
  const std::string& surface(TokenId t) const;

  /// Space-joined surface forms.
  std::string detokenize(std::span<const TokenId> tokens) const;

  /// FNV-1a over every surface string in token order.
  std::uint64_t hash() const;

 private:
  std::vector<std::string> entity_names_;
  std::vector<std::string> relation_names_;
  std::vector<std::string> specials_{".", "<eos>", "<pad>"};
};

struct WalkPath {
  std::vector<Triple> steps;
};

enum class WalkLengthMode { kExact, kUniform };

/// Graph wrapper with the start-entity pool for walks (entities with at least one outgoing edge).
class WalkSampler {
 public:
  /// Throws DataError when the graph has no edges.
  explicit WalkSampler(const KnowledgeGraph& graph);

  /// One uniform random walk. Start e ~ U(E), resampled while C(e) is empty;
  /// each step picks uniformly from C(current). Ends at l_max steps or at a sink.
  WalkPath sample(std::size_t l_max, Rng& rng, WalkLengthMode mode = WalkLengthMode::kExact) const;

  const KnowledgeGraph& graph() const noexcept { return *graph_; }

 private:
  const KnowledgeGraph* graph_;
};

WalkPath sample_walk(const KnowledgeGraph& graph, std::size_t l_max, Rng& rng,
                     WalkLengthMode mode = WalkLengthMode::kExact);

/// Walk i is drawn from stream_rng(seed, i), so the output does not depend on `jobs`.
std::vector<WalkPath> sample_walks(const KnowledgeGraph& graph, std::size_t count, std::size_t l_max,
                                   std::uint64_t seed, WalkLengthMode mode = WalkLengthMode::kExact,
                                   unsigned jobs = 1);

/// Walk count giving roughly `tokens_per_triple` corpus tokens per train triple.
std::size_t default_walk_count(const KnowledgeGraph& graph, std::size_t l_max, double tokens_per_triple = 50.0);

/// <head> <rel> <tail> PERIOD per step.
std::vector<TokenId> verbalize(const Vocabulary& vocab, const WalkPath& path);

/// [e1, r]; the model's next token is scored against the tail.
std::vector<TokenId> make_query_prompt(const Vocabulary& vocab, EntityId e1, RelationId r);

struct CorpusMeta {
  std::uint64_t vocab_hash = 0;
  std::uint64_t seed = 0;
  std::uint32_t l_max = 0;
  std::uint64_t walk_count = 0;
};

/// Fixed-length chunks stored contiguously.
struct TokenCorpus {
  std::size_t chunk_len = 0;
  std::vector<TokenId> tokens;
  CorpusMeta meta;

  std::size_t chunk_count() const noexcept { return chunk_len == 0 ? 0 : tokens.size() / chunk_len; }
  std::span<const TokenId> chunk(std::size_t i) const {
    return std::span<const TokenId>(tokens).subspan(i * chunk_len, chunk_len);
  }
};

/// Stream p1 EOS p2 EOS ..., cut into windows of chunk_len; the partial tail is dropped.
TokenCorpus pack_chunks(std::span<const std::vector<TokenId>> paragraphs, std::size_t chunk_len, TokenId eos);

/// Walks -> paragraphs -> chunks, recording metadata.
TokenCorpus build_corpus(const KnowledgeGraph& graph, const Vocabulary& vocab, std::size_t walk_count,
                         std::size_t l_max, std::size_t chunk_len, std::uint64_t seed,
                         WalkLengthMode mode = WalkLengthMode::kExact, unsigned jobs = 1);

// Binary layout (little endian): "PAGC" u32 version, u64 vocab_hash, u64 chunk_len,
// u64 seed, u32 l_max, u64 walk_count, u64 token_count, i32 tokens[token_count].
void write_corpus(const TokenCorpus& corpus, const std::filesystem::path& path);
TokenCorpus read_corpus(const std::filesystem::path& path);

/// One sentence per line, a blank line at EOS.
void write_corpus_text(const TokenCorpus& corpus, const Vocabulary& vocab, const std::filesystem::path& path);

}  // namespace pathagg
