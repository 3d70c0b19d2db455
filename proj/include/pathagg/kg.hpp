#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pathagg {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct Edge {
  RelationId relation = 0;
  EntityId tail = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Bidirectional string <-> dense id table. Ids are assigned in first-intern order.
class SymbolTable {
 public:
  std::uint32_t intern(std::string_view name);
  std::optional<std::uint32_t> find(std::string_view name) const;
  const std::string& name(std::uint32_t id) const;
  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// Immutable knowledge graph: deduplicated triple list plus sorted outgoing
/// edge lists C(e) in CSR form.
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;
  KnowledgeGraph(SymbolTable entities, SymbolTable relations, std::vector<Triple> triples);

  std::size_t entity_count() const noexcept { return entities_.size(); }
  std::size_t relation_count() const noexcept { return relations_.size(); }
  std::size_t triple_count() const noexcept { return triples_.size(); }

  /// Triples in insertion (file) order, duplicates removed.
  std::span<const Triple> triples() const noexcept { return triples_; }

  /// C(e), sorted by (relation, tail). Throws std::out_of_range on a bad id.
  std::span<const Edge> outgoing(EntityId e) const;
  std::size_t out_degree(EntityId e) const { return outgoing(e).size(); }

  bool contains(const Triple& t) const;

  const SymbolTable& entities() const noexcept { return entities_; }
  const SymbolTable& relations() const noexcept { return relations_; }
  const std::string& entity_name(EntityId e) const { return entities_.name(e); }
  const std::string& relation_name(RelationId r) const { return relations_.name(r); }

  /// Set on graphs produced by add_inverse_relations.
  bool has_inverse_relations() const noexcept { return has_inverses_; }
  void mark_inverse_relations() noexcept { has_inverses_ = true; }

 private:
  SymbolTable entities_;
  SymbolTable relations_;
  std::vector<Triple> triples_;
  std::vector<std::size_t> offsets_;
  std::vector<Edge> edges_;
  bool has_inverses_ = false;
};

enum class UnknownPolicy { kSkip, kError };

struct DatasetSplit {
  KnowledgeGraph train;
  std::vector<Triple> test;
  std::vector<Triple> valid;
  std::size_t duplicate_train_triples = 0;
  std::size_t skipped_eval_triples = 0;
};

struct LoadOptions {
  UnknownPolicy unknown = UnknownPolicy::kSkip;
  bool add_inverse = false;
};

/// Loads tab-separated "head relation tail" files. Vocabulary comes from the
/// train file only; eval triples that mention unseen symbols follow
/// `options.unknown`.
DatasetSplit load_split(const std::filesystem::path& train_path, const std::filesystem::path& test_path,
                        const std::optional<std::filesystem::path>& valid_path = std::nullopt,
                        const LoadOptions& options = {});

/// Builds a graph from in-memory "head relation tail" rows.
KnowledgeGraph make_graph(std::span<const std::array<std::string, 3>> rows);

/// For every (h, r, t) adds (t, r^-1, h). Already-augmented graphs are returned unchanged.
KnowledgeGraph add_inverse_relations(const KnowledgeGraph& graph);

inline constexpr std::string_view kInverseSuffix = "_inv";

void write_triples_tsv(const KnowledgeGraph& graph, std::span<const Triple> triples,
                       const std::filesystem::path& path);
void write_vocab_tsv(const SymbolTable& table, const std::filesystem::path& path);
/// JSON snapshot of a split: symbol tables plus id triples for train/test/valid.
void write_split_json(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit read_split_json(const std::filesystem::path& path);

}  // namespace pathagg
