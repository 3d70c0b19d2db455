#include "pathagg/pipeline.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>

#include <nlohmann/json.hpp>

#include "pathagg/cot_graph.hpp"
#include "pathagg/error.hpp"
#include "pathagg/rules.hpp"
#include "pathagg/tiny_lm.hpp"
#include "pathagg/walk_corpus.hpp"

namespace pathagg {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path default_run_root() {
  if (const char* env = std::getenv(kRunRootEnv); env && *env) return env;
  return "runs";
}

std::string corpus_file(std::size_t l_max) { return "corpus/L" + std::to_string(l_max) + ".bin"; }
std::string checkpoint_file(std::size_t l_max) { return "lm/L" + std::to_string(l_max) + ".palm"; }
std::string rule_sets_file(std::size_t n_max) { return "rules/sets_N" + std::to_string(n_max) + ".json"; }
std::string rule_weights_file(std::size_t n_max) { return "weights/N" + std::to_string(n_max) + ".json"; }

namespace {

void log(const RunContext& ctx, const std::string& stage, const std::string& msg) {
  if (!ctx.quiet) std::cerr << "[" << stage << "] " << msg << '\n';
}

// True when the output has to be (re)computed.
bool stale(const RunContext& ctx, const std::string& rel) { return ctx.force || !fs::exists(ctx.path(rel)); }

fs::path require(const RunContext& ctx, const std::string& rel, const std::string& producer) {
  auto p = ctx.path(rel);
  if (!fs::exists(p)) throw DataError("missing " + p.string() + "; run `pathagg " + producer + "` first");
  return p;
}

void ensure_parent(const fs::path& p) { fs::create_directories(p.parent_path()); }

void write_json(const fs::path& p, const json& js) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << js.dump(1) << '\n';
}

DatasetSplit ingested(const RunContext& ctx) { return read_split_json(require(ctx, "data/split.json", "ingest")); }

QueryAnswerIndex answer_index(const RunContext& ctx, const DatasetSplit& split) {
  QueryAnswerIndex index(split.train, split.test);
  if (ctx.config.dataset.index_includes_valid)
    for (const auto& t : split.valid) index.add(t);
  return index;
}

std::map<RelationId, RuleWeights> load_weights(const RunContext& ctx, std::size_t n_max) {
  std::map<RelationId, RuleWeights> out;
  for (auto& w : read_rule_weights(require(ctx, rule_weights_file(n_max), "learn-weights"))) out[w.target] = std::move(w);
  return out;
}

std::map<RelationId, RuleSet> load_sets(const RunContext& ctx, std::size_t n_max) {
  std::map<RelationId, RuleSet> out;
  for (auto& s : read_rule_sets(require(ctx, rule_sets_file(n_max), "mine-rules"))) out[s.target] = std::move(s);
  return out;
}

// P_w and P_s for every test triple at one N_max, computed once per distinct query.
struct RuleDists {
  std::vector<EntityDistribution> weighted;
  std::vector<EntityDistribution> unweighted;
};

RuleDists rule_dists(const RunContext& ctx, const DatasetSplit& split, std::size_t n_max) {
  const auto weights = load_weights(ctx, n_max);
  const double temp = ctx.config.rules.temperature;
  std::map<std::pair<EntityId, RelationId>, std::pair<EntityDistribution, EntityDistribution>> cache;
  RuleDists out;
  for (const auto& t : split.test) {
    auto key = std::make_pair(t.head, t.relation);
    auto it = cache.find(key);
    if (it == cache.end()) {
      auto wi = weights.find(t.relation);
      const RuleWeights w = wi == weights.end() ? RuleWeights{t.relation, {}, {}} : wi->second;
      RuleWeights ones = w;
      std::fill(ones.weights.begin(), ones.weights.end(), 1.0);
      auto pw = weighted_dist(split.train, w, t.head, temp);
      auto ps = weighted_dist(split.train, ones, t.head, temp);
      ps.kind = DistKind::kUnweighted;
      it = cache.emplace(key, std::make_pair(std::move(pw), std::move(ps))).first;
    }
    out.weighted.push_back(it->second.first);
    out.unweighted.push_back(it->second.second);
  }
  return out;
}

std::vector<EntityDistribution> lm_dists(const RunContext& ctx, const DatasetSplit& split, std::size_t l_max) {
  const auto model = load_checkpoint(require(ctx, checkpoint_file(l_max), "train-lm"));
  const Vocabulary vocab(split.train);
  if (model.config().vocab_size != vocab.size()) throw DataError("checkpoint vocabulary does not match the dataset");
  std::vector<std::pair<EntityId, RelationId>> queries;
  for (const auto& t : split.test) queries.emplace_back(t.head, t.relation);
  return lm_entity_distributions(model, vocab, queries);
}

std::vector<CotExample> cot_examples(const RunContext& ctx) {
  if (ctx.config.cot.input.empty()) throw ConfigError("cot.input is not set");
  return read_cot_jsonl(ctx.config.cot.input);
}

StateMatrix cot_states(const RunContext& ctx, std::span<const CotExample> examples) {
  const auto& c = ctx.config.cot;
  return c.vectors.empty() ? hash_embed(examples, c.dim) : read_vectors_csv(c.vectors, examples);
}

LatentGraph read_graph(const fs::path& p, const StateMatrix& states) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  const auto js = json::parse(in);
  LatentGraph g;
  g.dim = js.at("dim");
  g.centroids = js.at("centroids").get<std::vector<std::vector<double>>>();
  g.objective = js.at("objective").get<std::vector<double>>();
  g.iterations = js.at("iterations");
  g.converged = js.at("converged");
  const auto& assign = js.at("assignments");
  if (assign.size() != states.size()) throw DataError(p.string() + " does not match the CoT input");
  for (const auto& a : assign) g.assignment.push_back(a.at("node").get<std::size_t>());
  g.members.assign(g.centroids.size(), {});
  for (std::size_t i = 0; i < g.assignment.size(); ++i) {
    if (g.assignment[i] >= g.centroids.size()) throw DataError(p.string() + ": node id out of range");
    g.members[g.assignment[i]].push_back(i);
  }
  return g;
}

std::vector<EmittedPath> read_paths(const fs::path& p, std::span<const CotExample> examples) {
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < examples.size(); ++i) by_id[examples[i].id] = i;
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  std::vector<EmittedPath> out;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto js = json::parse(line);
    EmittedPath path;
    path.initial_node = js.at("initial_node");
    for (const auto& s : js.at("segments")) {
      auto it = by_id.find(s.at("id").get<std::string>());
      if (it == by_id.end()) throw DataError(p.string() + " references an unknown example");
      path.segments.push_back({it->second, s.at("begin"), s.at("end")});
    }
    out.push_back(std::move(path));
  }
  return out;
}

}  // namespace

RunContext open_run(const ExperimentConfig& config, const fs::path& root) {
  config.validate();
  RunContext ctx{config, config_hash(config), {}, false, false};
  ctx.dir = root / ctx.hash;
  fs::create_directories(ctx.dir);
  const auto cfg = ctx.dir / "config.json";
  if (!fs::exists(cfg)) save_config(config, cfg);
  return ctx;
}

DatasetSplit load_dataset(const ExperimentConfig& config) {
  const auto& d = config.dataset;
  if (d.train.empty() || d.test.empty()) throw ConfigError("dataset.train and dataset.test must be set");
  LoadOptions opts{d.unknown, d.add_inverse};
  std::optional<fs::path> valid;
  if (!d.valid.empty()) valid = d.valid;
  return load_split(d.train, d.test, valid, opts);
}

std::vector<RelationId> test_relations(const DatasetSplit& split) {
  std::vector<RelationId> rels;
  for (const auto& t : split.test) rels.push_back(t.relation);
  std::sort(rels.begin(), rels.end());
  rels.erase(std::unique(rels.begin(), rels.end()), rels.end());
  return rels;
}

void cmd_ingest(const RunContext& ctx) {
  if (!stale(ctx, "data/split.json")) return log(ctx, "ingest", "up to date");
  const auto split = load_dataset(ctx.config);
  fs::create_directories(ctx.path("data"));
  write_split_json(split, ctx.path("data/split.json"));
  write_vocab_tsv(split.train.entities(), ctx.path("data/entities.tsv"));
  write_vocab_tsv(split.train.relations(), ctx.path("data/relations.tsv"));
  write_json(ctx.path("data/stats.json"), {{"config_hash", ctx.hash},
                                           {"entities", split.train.entity_count()},
                                           {"relations", split.train.relation_count()},
                                           {"train", split.train.triple_count()},
                                           {"test", split.test.size()},
                                           {"valid", split.valid.size()},
                                           {"duplicate_train_triples", split.duplicate_train_triples},
                                           {"skipped_eval_triples", split.skipped_eval_triples}});
  log(ctx, "ingest", std::to_string(split.train.triple_count()) + " train / " + std::to_string(split.test.size()) +
                         " test triples");
}

void cmd_gen_corpus(const RunContext& ctx) {
  const auto split = ingested(ctx);
  const Vocabulary vocab(split.train);
  const auto& w = ctx.config.walk;
  json entries = json::array();
  for (const auto l : w.l_max) {
    const auto rel = corpus_file(l);
    if (stale(ctx, rel)) {
      const std::size_t count = w.walk_count ? w.walk_count : default_walk_count(split.train, l, w.tokens_per_triple);
      const auto corpus = build_corpus(split.train, vocab, count, l, w.chunk_len, ctx.config.seed, w.mode,
                                       static_cast<unsigned>(ctx.config.jobs));
      ensure_parent(ctx.path(rel));
      write_corpus(corpus, ctx.path(rel));
      log(ctx, "gen-corpus", "L_max=" + std::to_string(l) + ": " + std::to_string(count) + " walks, " +
                                 std::to_string(corpus.chunk_count()) + " chunks");
    }
    const auto corpus = read_corpus(ctx.path(rel));
    entries.push_back({{"l_max", l},
                       {"file", rel},
                       {"seed", corpus.meta.seed},
                       {"walk_count", corpus.meta.walk_count},
                       {"chunk_len", corpus.chunk_len},
                       {"chunks", corpus.chunk_count()},
                       {"tokens", corpus.tokens.size()}});
  }
  write_json(ctx.path("corpus/manifest.json"), {{"config_hash", ctx.hash}, {"corpora", entries}});
}

void cmd_train_lm(const RunContext& ctx, std::optional<std::size_t> only_l_max) {
  const auto split = ingested(ctx);
  const Vocabulary vocab(split.train);
  for (const auto l : ctx.config.walk.l_max) {
    if (only_l_max && *only_l_max != l) continue;
    const auto rel = checkpoint_file(l);
    if (!stale(ctx, rel)) {
      log(ctx, "train-lm", "L_max=" + std::to_string(l) + " up to date");
      continue;
    }
    const auto corpus = read_corpus(require(ctx, corpus_file(l), "gen-corpus"));
    if (corpus.meta.vocab_hash != vocab.hash()) throw DataError("corpus vocabulary does not match the dataset");
    TinyLm model(ctx.config.lm_config(vocab.size()));
    LmTrainer trainer(model, ctx.config.train_config());
    const std::size_t every = std::max<std::size_t>(1, ctx.config.train.steps / 10);
    std::vector<TrainLogRow> logrows;
    try {
      logrows = trainer.train(corpus, [&](const TrainLogRow& r) {
        if (r.step % every == 0)
          log(ctx, "train-lm", "L_max=" + std::to_string(l) + " step " + std::to_string(r.step) + " loss " +
                                   format_double(r.loss).substr(0, 8));
      });
    } catch (const NumericError& e) {
      throw NumericError("L_max=" + std::to_string(l) + ": " + e.what());
    }
    ensure_parent(ctx.path(rel));
    write_train_log_csv(logrows, ctx.path("lm/train_log_L" + std::to_string(l) + ".csv"), ctx.hash);
    save_checkpoint(model, trainer.state(), ctx.path(rel), ctx.hash);
  }
  if (only_l_max && std::find(ctx.config.walk.l_max.begin(), ctx.config.walk.l_max.end(), *only_l_max) ==
                        ctx.config.walk.l_max.end())
    throw ConfigError("L_max=" + std::to_string(*only_l_max) + " is not in walk.l_max");
}

void cmd_mine_rules(const RunContext& ctx) {
  const auto split = ingested(ctx);
  const auto rels = test_relations(split);
  for (const auto n : ctx.config.rules.n_max) {
    const auto rel = rule_sets_file(n);
    if (!stale(ctx, rel)) continue;
    MineOptions opts = ctx.config.rules.mine;
    opts.n_max = n;
    std::vector<RuleSet> sets;
    std::size_t total = 0;
    for (const auto r : rels) {
      sets.push_back(mine_rules(split.train, r, opts));
      total += sets.back().rules.size();
    }
    ensure_parent(ctx.path(rel));
    write_rules_json(split.train, sets, {}, ctx.path(rel), ctx.hash);
    log(ctx, "mine-rules", "N_max=" + std::to_string(n) + ": " + std::to_string(total) + " rules over " +
                               std::to_string(rels.size()) + " relations");
  }
}

void cmd_learn_weights(const RunContext& ctx) {
  const auto split = ingested(ctx);
  for (const auto n : ctx.config.rules.n_max) {
    const auto rel = rule_weights_file(n);
    if (!stale(ctx, rel)) continue;
    const auto sets = read_rule_sets(require(ctx, rule_sets_file(n), "mine-rules"));
    std::vector<RuleWeights> weights;
    std::size_t unconverged = 0;
    for (const auto& set : sets) {
      LearnReport rep;
      weights.push_back(learn_weights(split.train, set, ctx.config.rules.logistic, &rep));
      unconverged += rep.converged ? 0 : 1;
    }
    if (unconverged)
      std::cerr << "warning: N_max=" << n << ": rule-weight regression hit the iteration cap for " << unconverged
                << " of " << sets.size() << " relations\n";
    ensure_parent(ctx.path(rel));
    write_rules_json(split.train, sets, weights, ctx.path(rel), ctx.hash);
    log(ctx, "learn-weights", "N_max=" + std::to_string(n) + ": " + std::to_string(weights.size()) + " relations");
  }
}

std::vector<RuleAccuracy> rule_accuracies(const RunContext& ctx) {
  const auto split = ingested(ctx);
  const auto index = answer_index(ctx, split);
  std::vector<RuleAccuracy> out;
  for (const auto n : ctx.config.rules.n_max) {
    const auto d = rule_dists(ctx, split, n);
    std::vector<EntityId> pw, ps;
    for (std::size_t i = 0; i < split.test.size(); ++i) {
      pw.push_back(d.weighted[i].argmax());
      ps.push_back(d.unweighted[i].argmax());
    }
    out.push_back({n, accuracy(pw, split.test, index), accuracy(ps, split.test, index)});
  }
  return out;
}

void cmd_eval(const RunContext& ctx) {
  const auto split = ingested(ctx);
  const auto index = answer_index(ctx, split);
  std::vector<AccuracyPoint> points;
  const auto& name = ctx.config.dataset.name;
  for (const auto l : ctx.config.walk.l_max) {
    const auto dists = lm_dists(ctx, split, l);
    std::vector<EntityId> pred;
    for (const auto& d : dists) pred.push_back(d.argmax());
    points.push_back({name, "LM", l, accuracy(pred, split.test, index)});
  }
  for (const auto& ra : rule_accuracies(ctx)) {
    points.push_back({name, "Weighted", ra.n_max, ra.weighted});
    points.push_back({name, "Unweighted", ra.n_max, ra.unweighted});
  }
  fs::create_directories(ctx.path("eval"));
  write_accuracy_curve_csv(points, ctx.path("eval/accuracy_curve.csv"), ctx.hash);
  for (const auto n : ctx.config.rules.n_max) {
    const auto sets = read_rule_sets(require(ctx, rule_sets_file(n), "mine-rules"));
    const auto weights = read_rule_weights(require(ctx, rule_weights_file(n), "learn-weights"));
    write_rule_stats_csv(rule_length_stats(sets, weights), split.train,
                         ctx.path("eval/rule_stats_N" + std::to_string(n) + ".csv"), ctx.hash);
  }
  for (const auto& p : points)
    log(ctx, "eval", p.predictor + " length " + std::to_string(p.length) + ": " + format_double(p.accuracy));
}

void cmd_kl_grid(const RunContext& ctx) {
  const auto split = ingested(ctx);
  const auto index = answer_index(ctx, split);
  const std::size_t ne = split.train.entity_count();
  std::vector<KlColumn> columns;
  for (const auto n : ctx.config.rules.n_max) {
    auto d = rule_dists(ctx, split, n);
    columns.push_back({"P_w@N" + std::to_string(n), std::move(d.weighted)});
    columns.push_back({"P_s@N" + std::to_string(n), std::move(d.unweighted)});
  }
  KlColumn ref{"P*", {}}, uni{"P_u", {}};
  for (const auto& t : split.test) {
    ref.dists.push_back(reference_dist(index, t.head, t.relation, ne));
    uni.dists.push_back(uniform_dist(ne));
  }
  columns.push_back(std::move(ref));
  columns.push_back(std::move(uni));
  std::vector<KlRowInput> rows;
  for (const auto l : ctx.config.walk.l_max) rows.push_back({l, lm_dists(ctx, split, l), columns});
  const auto grid = kl_grid(rows, split.test, ctx.config.analysis.per_query);
  fs::create_directories(ctx.path("kl"));
  write_kl_grid_csv(grid, ctx.path("kl/kl_grid.csv"), ctx.hash);
  write_kl_raw_csv(grid, split.train, split.test, ctx.path("kl/kl_raw.csv"), ctx.hash);
  log(ctx, "kl-grid", std::to_string(grid.l_max.size()) + " x " + std::to_string(grid.columns.size()) + " cells");
}

void cmd_prop1_check(const RunContext& ctx) {
  std::vector<Prop1Report> reports;
  const auto& a = ctx.config.analysis;
  for (std::size_t i = 0; i < a.prop1_sizes.size(); ++i) {
    Rng rng = stream_rng(ctx.config.seed, i);
    reports.push_back(prop1_check(a.prop1_sizes[i].first, a.prop1_sizes[i].second, a.prop1_trials, rng));
  }
  fs::create_directories(ctx.path("prop1"));
  write_prop1_csv(reports, ctx.path("prop1/prop1_report.csv"), ctx.hash);
  std::size_t violations = 0;
  for (const auto& r : reports) violations += r.violations;
  log(ctx, "prop1-check", std::to_string(violations) + " violations");
  if (violations > 0) throw NumericError("log-sum bound violated in " + std::to_string(violations) + " trials");
}

void cmd_cot_graph(const RunContext& ctx) {
  const auto examples = cot_examples(ctx);
  const auto states = cot_states(ctx, examples);
  const auto& c = ctx.config.cot;
  const auto graph = build_graph(states, {c.k, ctx.config.seed, c.kmeans_iters});
  fs::create_directories(ctx.path("cot"));
  write_graph_json(graph, states, examples, ctx.path("cot/graph.json"), ctx.hash);
  std::size_t nonempty = 0;
  for (const auto& m : graph.members) nonempty += m.empty() ? 0 : 1;
  write_json(ctx.path("cot/stats.json"), {{"config_hash", ctx.hash},
                                          {"examples", examples.size()},
                                          {"states", states.size()},
                                          {"mean_steps", mean_step_count(examples)},
                                          {"nodes", graph.node_count()},
                                          {"nonempty_nodes", nonempty},
                                          {"iterations", graph.iterations},
                                          {"converged", graph.converged}});
  log(ctx, "cot-graph", std::to_string(states.size()) + " states into " + std::to_string(graph.node_count()) +
                            " nodes, mean CoT length " + format_double(mean_step_count(examples)));
}

void cmd_cot_walk(const RunContext& ctx) {
  const auto examples = cot_examples(ctx);
  const auto states = cot_states(ctx, examples);
  const auto graph = read_graph(require(ctx, "cot/graph.json", "cot-graph"), states);
  const auto& c = ctx.config.cot;
  WalkOptions opts{c.l_max, c.segment_cap, c.paths, ctx.config.seed,
                   c.size_weighted_init ? InitialNode::kSizeWeighted : InitialNode::kUniform, ctx.config.jobs};
  const auto paths = random_walk_paths(examples, states, graph, opts);
  const StepIndex index(examples, states);
  for (std::size_t i = 0; i < paths.size(); ++i)
    if (auto err = check_path(paths[i], examples, index, graph, c.l_max, c.segment_cap); !err.empty())
      throw DataError("emitted path " + std::to_string(i) + " is malformed: " + err);
  write_paths_jsonl(paths, examples, ctx.path("cot/paths.jsonl"), c.prefix_question);
  log(ctx, "cot-walk", std::to_string(paths.size()) + " paths");
}

void cmd_cot_plan(const RunContext& ctx) {
  const auto examples = cot_examples(ctx);
  const auto paths = read_paths(require(ctx, "cot/paths.jsonl", "cot-walk"), examples);
  const auto& c = ctx.config.cot;
  emit_training_plan(paths, examples, {c.m, c.n, ctx.config.seed, c.prefix_question}, ctx.path("cot/plan"), ctx.hash);
  log(ctx, "cot-plan", "phases M=" + std::to_string(c.m) + ", N-M=" + std::to_string(c.n - c.m));
}

}  // namespace pathagg
