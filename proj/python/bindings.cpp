#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "pathagg/analysis.hpp"
#include "pathagg/config.hpp"
#include "pathagg/cot_graph.hpp"
#include "pathagg/error.hpp"
#include "pathagg/pipeline.hpp"
#include "pathagg/rng.hpp"
#include "pathagg/rules.hpp"
#include "pathagg/walk_corpus.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace pathagg;

namespace {

using TripleTuple = std::tuple<EntityId, RelationId, EntityId>;

TripleTuple to_tuple(const Triple& t) { return {t.head, t.relation, t.tail}; }
Triple from_tuple(const TripleTuple& t) { return {std::get<0>(t), std::get<1>(t), std::get<2>(t)}; }

std::vector<TripleTuple> to_tuples(std::span<const Triple> ts) {
  std::vector<TripleTuple> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.push_back(to_tuple(t));
  return out;
}

std::map<EntityId, double> to_map(const SparseDist& d) { return {d.begin(), d.end()}; }

SupportMode support_mode(const std::string& s) {
  if (s == "instances") return SupportMode::kInstances;
  if (s == "pairs") return SupportMode::kDistinctPairs;
  throw ConfigError("support must be 'instances' or 'pairs'");
}

WeightNorm weight_norm(const std::string& s) {
  if (s == "l1") return WeightNorm::kL1;
  if (s == "l2sq") return WeightNorm::kL2Squared;
  throw ConfigError("norm must be 'l1' or 'l2sq'");
}

ExperimentConfig config_from_py(const py::object& cfg) {
  if (py::isinstance<py::str>(cfg)) return load_config(cfg.cast<std::string>());
  const auto json_mod = py::module_::import("json");
  const auto text = json_mod.attr("dumps")(cfg).cast<std::string>();
  return config_from_json(nlohmann::json::parse(text));
}

py::object json_to_py(const nlohmann::json& js) {
  return py::module_::import("json").attr("loads")(js.dump());
}

}  // namespace

PYBIND11_MODULE(_pathagg, m) {
  m.doc() = "Knowledge-graph random-walk reasoning experiments";

  auto base = py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<KnowledgeGraph>(m, "KnowledgeGraph")
      .def_property_readonly("entity_count", &KnowledgeGraph::entity_count)
      .def_property_readonly("relation_count", &KnowledgeGraph::relation_count)
      .def_property_readonly("triple_count", &KnowledgeGraph::triple_count)
      .def("triples", [](const KnowledgeGraph& g) { return to_tuples(g.triples()); })
      .def("outgoing",
           [](const KnowledgeGraph& g, EntityId e) {
             std::vector<std::pair<RelationId, EntityId>> out;
             for (const auto& edge : g.outgoing(e)) out.emplace_back(edge.relation, edge.tail);
             return out;
           })
      .def("contains", [](const KnowledgeGraph& g, const TripleTuple& t) { return g.contains(from_tuple(t)); })
      .def("entity_name", &KnowledgeGraph::entity_name)
      .def("relation_name", &KnowledgeGraph::relation_name)
      .def("entity_id",
           [](const KnowledgeGraph& g, const std::string& name) -> std::optional<EntityId> {
             return g.entities().find(name);
           })
      .def("relation_id", [](const KnowledgeGraph& g, const std::string& name) -> std::optional<RelationId> {
        return g.relations().find(name);
      });

  py::class_<DatasetSplit>(m, "DatasetSplit")
      .def_readonly("train", &DatasetSplit::train)
      .def_property_readonly("test", [](const DatasetSplit& s) { return to_tuples(s.test); })
      .def_property_readonly("valid", [](const DatasetSplit& s) { return to_tuples(s.valid); })
      .def_readonly("duplicate_train_triples", &DatasetSplit::duplicate_train_triples)
      .def_readonly("skipped_eval_triples", &DatasetSplit::skipped_eval_triples);

  m.def(
      "load_split",
      [](const fs::path& train, const fs::path& test, std::optional<fs::path> valid, bool add_inverse,
         bool strict) {
        LoadOptions o;
        o.add_inverse = add_inverse;
        o.unknown = strict ? UnknownPolicy::kError : UnknownPolicy::kSkip;
        return load_split(train, test, valid, o);
      },
      py::arg("train"), py::arg("test"), py::arg("valid") = py::none(), py::arg("add_inverse") = false,
      py::arg("strict") = false);

  m.def(
      "make_graph",
      [](const std::vector<std::array<std::string, 3>>& rows) { return make_graph(rows); },
      py::arg("rows"), "Graph from (head, relation, tail) name triples.");

  m.def(
      "sample_walks",
      [](const KnowledgeGraph& g, std::size_t count, std::size_t l_max, std::uint64_t seed, bool uniform_length) {
        std::vector<std::vector<TripleTuple>> out;
        for (const auto& w : sample_walks(g, count, l_max, seed,
                                          uniform_length ? WalkLengthMode::kUniform : WalkLengthMode::kExact))
          out.push_back(to_tuples(w.steps));
        return out;
      },
      py::arg("graph"), py::arg("count"), py::arg("l_max"), py::arg("seed") = 0, py::arg("uniform_length") = false);

  m.def(
      "rule_prob",
      [](const KnowledgeGraph& g, EntityId e0, const std::vector<RelationId>& rule,
         std::optional<TripleTuple> masked) {
        std::optional<Triple> mt;
        if (masked) mt = from_tuple(*masked);
        return to_map(rule_prob(g, e0, rule, mt ? &*mt : nullptr));
      },
      py::arg("graph"), py::arg("head"), py::arg("rule"), py::arg("masked") = py::none(),
      "Probability of reaching each entity from head by a uniform walk labelled with rule.");

  py::class_<RuleSet>(m, "RuleSet")
      .def_readonly("target", &RuleSet::target)
      .def_readonly("n_max", &RuleSet::n_max)
      .def_property_readonly("rules",
                             [](const RuleSet& s) {
                               std::vector<std::pair<std::vector<RelationId>, std::size_t>> out;
                               for (const auto& r : s.rules) out.emplace_back(r.rule.relations, r.support);
                               return out;
                             })
      .def("__len__", [](const RuleSet& s) { return s.rules.size(); });

  py::class_<RuleWeights>(m, "RuleWeights")
      .def_readonly("target", &RuleWeights::target)
      .def_property_readonly("rules",
                             [](const RuleWeights& w) {
                               std::vector<std::vector<RelationId>> out;
                               for (const auto& r : w.rules) out.push_back(r.relations);
                               return out;
                             })
      .def_readonly("weights", &RuleWeights::weights);

  m.def(
      "mine_rules",
      [](const KnowledgeGraph& g, RelationId target, std::size_t n_max, std::size_t min_support,
         const std::string& support, bool include_direct_rule) {
        MineOptions o;
        o.n_max = n_max;
        o.min_support = min_support;
        o.support = support_mode(support);
        o.include_direct_rule = include_direct_rule;
        return mine_rules(g, target, o);
      },
      py::arg("graph"), py::arg("target"), py::arg("n_max") = 3, py::arg("min_support") = 1,
      py::arg("support") = "instances", py::arg("include_direct_rule") = false);

  m.def(
      "learn_weights",
      [](const KnowledgeGraph& g, const RuleSet& set, double lambda_, const std::string& norm, std::uint64_t seed) {
        LogisticOptions o;
        o.lambda = lambda_;
        o.norm = weight_norm(norm);
        o.seed = seed;
        return learn_weights(g, set, o);
      },
      py::arg("graph"), py::arg("rule_set"), py::arg("lam") = 0.01, py::arg("norm") = "l1", py::arg("seed") = 0);

  m.def(
      "weighted_dist",
      [](const KnowledgeGraph& g, const RuleWeights& w, EntityId e1, double t) {
        return weighted_dist(g, w, e1, t).probs;
      },
      py::arg("graph"), py::arg("weights"), py::arg("head"), py::arg("temperature") = 0.01);
  m.def(
      "unweighted_dist",
      [](const KnowledgeGraph& g, const RuleSet& s, EntityId e1, double t) {
        return unweighted_dist(g, s, e1, t).probs;
      },
      py::arg("graph"), py::arg("rule_set"), py::arg("head"), py::arg("temperature") = 0.01);

  m.def(
      "kl", [](const std::vector<double>& p, const std::vector<double>& q) { return kl(p, q); }, py::arg("p"),
      py::arg("q"), "KL(p || q) in nats.");
  m.def(
      "uniform_dist", [](std::size_t n) { return uniform_dist(n).probs; }, py::arg("n"));
  m.def(
      "prop1_check",
      [](std::size_t entities, std::size_t rules, std::size_t trials, std::uint64_t seed) {
        Rng rng(seed);
        const auto r = prop1_check(entities, rules, trials, rng);
        py::dict d;
        d["trials"] = r.trials;
        d["violations"] = r.violations;
        d["max_slack"] = r.max_slack;
        return d;
      },
      py::arg("entities"), py::arg("rules"), py::arg("trials") = 1000, py::arg("seed") = 0);

  m.def(
      "synthetic_cot",
      [](std::size_t count, std::uint64_t seed, const fs::path& path) {
        write_cot_jsonl(synthetic_cot_corpus(count, seed), path);
      },
      py::arg("count"), py::arg("seed"), py::arg("path"), "Write a synthetic chain-of-thought JSONL corpus.");

  // Config and pipeline.
  m.def(
      "preset_config", [](const std::string& name, const fs::path& data_dir) {
        return json_to_py(to_json(preset_config(name, data_dir)));
      },
      py::arg("name"), py::arg("data_dir"));
  m.def(
      "config_hash", [](const py::object& cfg) { return config_hash(config_from_py(cfg)); }, py::arg("config"));

  py::class_<RunContext>(m, "Run")
      .def_property_readonly("dir", [](const RunContext& c) { return c.dir; })
      .def_readonly("hash", &RunContext::hash)
      .def_readwrite("force", &RunContext::force)
      .def_readwrite("quiet", &RunContext::quiet);

  m.def(
      "open_run",
      [](const py::object& cfg, std::optional<fs::path> root) {
        return open_run(config_from_py(cfg), root ? *root : default_run_root());
      },
      py::arg("config"), py::arg("root") = py::none(),
      "Create (or reuse) the run directory for a config given as a dict or a JSON file path.");

  const std::vector<std::pair<const char*, void (*)(const RunContext&)>> stages{
      {"ingest", cmd_ingest},           {"gen_corpus", cmd_gen_corpus}, {"mine_rules", cmd_mine_rules},
      {"learn_weights", cmd_learn_weights}, {"eval", cmd_eval},       {"kl_grid", cmd_kl_grid},
      {"prop1_check", cmd_prop1_check}, {"cot_graph", cmd_cot_graph}, {"cot_walk", cmd_cot_walk},
      {"cot_plan", cmd_cot_plan},
  };
  auto stage_mod = m.def_submodule("stages", "Pipeline stages operating on a Run");
  for (const auto& [name, fn] : stages) {
    auto f = fn;
    stage_mod.def(
        name,
        [f](const RunContext& ctx) {
          py::gil_scoped_release release;
          f(ctx);
        },
        py::arg("run"));
  }
  stage_mod.def(
      "train_lm",
      [](const RunContext& ctx, std::optional<std::size_t> l_max) {
        py::gil_scoped_release release;
        cmd_train_lm(ctx, l_max);
      },
      py::arg("run"), py::arg("l_max") = py::none());
  m.def(
      "rule_accuracies",
      [](const RunContext& ctx) {
        std::vector<std::tuple<std::size_t, double, double>> out;
        for (const auto& r : rule_accuracies(ctx)) out.emplace_back(r.n_max, r.weighted, r.unweighted);
        return out;
      },
      py::arg("run"), "(N_max, weighted accuracy, unweighted accuracy) per N_max.");
}
