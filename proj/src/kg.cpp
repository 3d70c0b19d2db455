#include "pathagg/kg.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "pathagg/error.hpp"

namespace pathagg {

std::uint32_t SymbolTable::intern(std::string_view name) {
  std::string key(name);
  if (auto it = index_.find(key); it != index_.end()) return it->second;
  const auto id = static_cast<std::uint32_t>(names_.size());
  names_.push_back(key);
  index_.emplace(std::move(key), id);
  return id;
}

std::optional<std::uint32_t> SymbolTable::find(std::string_view name) const {
  if (auto it = index_.find(std::string(name)); it != index_.end()) return it->second;
  return std::nullopt;
}

const std::string& SymbolTable::name(std::uint32_t id) const {
  if (id >= names_.size()) throw std::out_of_range("symbol id " + std::to_string(id) + " out of range");
  return names_[id];
}

KnowledgeGraph::KnowledgeGraph(SymbolTable entities, SymbolTable relations, std::vector<Triple> triples)
    : entities_(std::move(entities)), relations_(std::move(relations)) {
  std::set<Triple> seen;
  triples_.reserve(triples.size());
  for (const auto& t : triples) {
    if (t.head >= entities_.size() || t.tail >= entities_.size() || t.relation >= relations_.size())
      throw std::out_of_range("triple references an id outside the symbol tables");
    if (seen.insert(t).second) triples_.push_back(t);
  }

  offsets_.assign(entities_.size() + 1, 0);
  for (const auto& t : triples_) ++offsets_[t.head + 1];
  for (std::size_t i = 1; i < offsets_.size(); ++i) offsets_[i] += offsets_[i - 1];
  edges_.resize(triples_.size());
  auto cursor = offsets_;
  for (const auto& t : triples_) edges_[cursor[t.head]++] = Edge{t.relation, t.tail};
  for (std::size_t e = 0; e < entities_.size(); ++e)
    std::sort(edges_.begin() + static_cast<std::ptrdiff_t>(offsets_[e]),
              edges_.begin() + static_cast<std::ptrdiff_t>(offsets_[e + 1]));
}

std::span<const Edge> KnowledgeGraph::outgoing(EntityId e) const {
  if (e >= entities_.size()) throw std::out_of_range("entity id " + std::to_string(e) + " out of range");
  return {edges_.data() + offsets_[e], offsets_[e + 1] - offsets_[e]};
}

bool KnowledgeGraph::contains(const Triple& t) const {
  if (t.head >= entities_.size()) return false;
  auto edges = outgoing(t.head);
  return std::binary_search(edges.begin(), edges.end(), Edge{t.relation, t.tail});
}

namespace {

struct RawRow {
  std::size_t line;
  std::string head, relation, tail;
};

std::vector<RawRow> read_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<RawRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty())
      throw ParseError(path.string(), lineno, "expected 3 tab-separated fields");
    rows.push_back({lineno, fields[0], fields[1], fields[2]});
  }
  return rows;
}

std::vector<Triple> resolve_eval(const std::filesystem::path& path, const KnowledgeGraph& graph,
                                 UnknownPolicy policy, std::size_t& skipped) {
  std::vector<Triple> out;
  for (const auto& row : read_rows(path)) {
    auto h = graph.entities().find(row.head);
    auto r = graph.relations().find(row.relation);
    auto t = graph.entities().find(row.tail);
    if (!h || !r || !t) {
      if (policy == UnknownPolicy::kError)
        throw ParseError(path.string(), row.line, "symbol not present in train vocabulary");
      ++skipped;
      continue;
    }
    Triple tr{*h, *r, *t};
    if (graph.contains(tr)) {
      ++skipped;
      continue;
    }
    out.push_back(tr);
  }
  return out;
}

}  // namespace

DatasetSplit load_split(const std::filesystem::path& train_path, const std::filesystem::path& test_path,
                        const std::optional<std::filesystem::path>& valid_path, const LoadOptions& options) {
  SymbolTable entities, relations;
  std::vector<Triple> triples;
  std::set<Triple> seen;
  DatasetSplit split;
  for (const auto& row : read_rows(train_path)) {
    Triple t{entities.intern(row.head), relations.intern(row.relation), entities.intern(row.tail)};
    if (!seen.insert(t).second) {
      ++split.duplicate_train_triples;
      continue;
    }
    triples.push_back(t);
  }
  if (split.duplicate_train_triples > 0)
    std::cerr << "warning: " << split.duplicate_train_triples << " duplicate triples in " << train_path.string()
              << "\n";

  split.train = KnowledgeGraph(std::move(entities), std::move(relations), std::move(triples));
  split.test = resolve_eval(test_path, split.train, options.unknown, split.skipped_eval_triples);
  if (valid_path) split.valid = resolve_eval(*valid_path, split.train, options.unknown, split.skipped_eval_triples);
  if (split.skipped_eval_triples > 0)
    std::cerr << "warning: skipped " << split.skipped_eval_triples
              << " eval triples (unknown symbols or present in train)\n";
  if (options.add_inverse) split.train = add_inverse_relations(split.train);
  return split;
}

KnowledgeGraph make_graph(std::span<const std::array<std::string, 3>> rows) {
  SymbolTable entities, relations;
  std::vector<Triple> triples;
  triples.reserve(rows.size());
  for (const auto& row : rows)
    triples.push_back({entities.intern(row[0]), relations.intern(row[1]), entities.intern(row[2])});
  return KnowledgeGraph(std::move(entities), std::move(relations), std::move(triples));
}

KnowledgeGraph add_inverse_relations(const KnowledgeGraph& graph) {
  if (graph.has_inverse_relations()) return graph;
  SymbolTable relations = graph.relations();
  const auto base = static_cast<RelationId>(relations.size());
  for (RelationId r = 0; r < base; ++r) relations.intern(graph.relation_name(r) + std::string(kInverseSuffix));
  std::vector<Triple> triples(graph.triples().begin(), graph.triples().end());
  for (const auto& t : graph.triples()) triples.push_back({t.tail, base + t.relation, t.head});
  KnowledgeGraph out(graph.entities(), std::move(relations), std::move(triples));
  out.mark_inverse_relations();
  return out;
}

void write_triples_tsv(const KnowledgeGraph& graph, std::span<const Triple> triples,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& t : triples)
    out << graph.entity_name(t.head) << '\t' << graph.relation_name(t.relation) << '\t' << graph.entity_name(t.tail)
        << '\n';
}

void write_vocab_tsv(const SymbolTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < table.size(); ++i) out << i << '\t' << table.names()[i] << '\n';
}

namespace {

nlohmann::json triples_to_json(std::span<const Triple> triples) {
  auto arr = nlohmann::json::array();
  for (const auto& t : triples) arr.push_back({t.head, t.relation, t.tail});
  return arr;
}

std::vector<Triple> triples_from_json(const nlohmann::json& arr) {
  std::vector<Triple> out;
  for (const auto& row : arr) out.push_back({row.at(0).get<EntityId>(), row.at(1).get<RelationId>(), row.at(2).get<EntityId>()});
  return out;
}

}  // namespace

void write_split_json(const DatasetSplit& split, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "pathagg-split/1";
  j["entities"] = split.train.entities().names();
  j["relations"] = split.train.relations().names();
  j["inverse_relations"] = split.train.has_inverse_relations();
  j["train"] = triples_to_json(split.train.triples());
  j["test"] = triples_to_json(split.test);
  j["valid"] = triples_to_json(split.valid);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump() << '\n';
}

DatasetSplit read_split_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  SymbolTable entities, relations;
  for (const auto& n : j.at("entities")) entities.intern(n.get<std::string>());
  for (const auto& n : j.at("relations")) relations.intern(n.get<std::string>());
  DatasetSplit split;
  split.train = KnowledgeGraph(std::move(entities), std::move(relations), triples_from_json(j.at("train")));
  if (j.value("inverse_relations", false)) split.train.mark_inverse_relations();
  split.test = triples_from_json(j.at("test"));
  split.valid = triples_from_json(j.at("valid"));
  return split;
}

}  // namespace pathagg
