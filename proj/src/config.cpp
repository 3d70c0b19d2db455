#include "pathagg/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "pathagg/error.hpp"
#include "pathagg/rng.hpp"

namespace pathagg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Strict reader over one JSON object: missing keys keep defaults, unknown keys are errors.
class Section {
 public:
  Section(const json& js, std::string name) : js_(js), name_(std::move(name)) {
    if (!js_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    if (!js_.contains(key)) return;
    try {
      out = js_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config field " + name_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    used_.insert(key);
    return js_.contains(key) ? &js_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : js_.items())
      if (!used_.contains(k)) throw ConfigError("unknown config field " + name_ + "." + k);
  }

 private:
  const json& js_;
  std::string name_;
  std::set<std::string> used_;
};

template <typename E>
E parse_enum(const std::string& field, const std::string& value, std::initializer_list<std::pair<const char*, E>> map) {
  for (const auto& [name, e] : map)
    if (value == name) return e;
  std::string allowed;
  for (const auto& [name, e] : map) allowed += std::string(allowed.empty() ? "" : ", ") + name;
  throw ConfigError("config field " + field + ": '" + value + "' is not one of " + allowed);
}

const char* unknown_name(UnknownPolicy p) { return p == UnknownPolicy::kSkip ? "skip" : "error"; }
const char* mode_name(WalkLengthMode m) { return m == WalkLengthMode::kExact ? "exact" : "uniform"; }
const char* support_name(SupportMode m) { return m == SupportMode::kInstances ? "instances" : "pairs"; }
const char* norm_name(WeightNorm n) { return n == WeightNorm::kL1 ? "l1" : "l2sq"; }

std::string resolve(const std::string& p, const fs::path& base) {
  if (p.empty() || base.empty() || fs::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

}  // namespace

void ExperimentConfig::validate() const {
  auto need_file = [](const std::string& p, const std::string& field) {
    if (!p.empty() && !fs::exists(p)) throw ConfigError("config field " + field + ": file not found: " + p);
  };
  need_file(dataset.train, "dataset.train");
  need_file(dataset.test, "dataset.test");
  need_file(dataset.valid, "dataset.valid");
  need_file(cot.input, "cot.input");
  need_file(cot.vectors, "cot.vectors");
  if (walk.l_max.empty()) throw ConfigError("walk.l_max must be a non-empty list");
  for (const auto l : walk.l_max)
    if (l == 0) throw ConfigError("walk.l_max entries must be >= 1");
  if (walk.chunk_len < 8) throw ConfigError("walk.chunk_len must be >= 8");
  if (!(walk.tokens_per_triple > 0.0)) throw ConfigError("walk.tokens_per_triple must be > 0");
  if (rules.n_max.empty()) throw ConfigError("rules.n_max must be a non-empty list");
  for (const auto n : rules.n_max)
    if (n == 0) throw ConfigError("rules.n_max entries must be >= 1");
  if (!(rules.temperature > 0.0)) throw ConfigError("rules.temperature must be > 0");
  if (rules.logistic.lambda < 0.0) throw ConfigError("rules.lambda must be >= 0");
  if (!(rules.logistic.learning_rate > 0.0)) throw ConfigError("rules.learning_rate must be > 0");
  if (rules.mine.path_cap == 0) throw ConfigError("rules.path_cap must be >= 1");
  for (const auto& [e, h] : analysis.prop1_sizes)
    if (e < 2 || h < 2) throw ConfigError("analysis.prop1_sizes entries must be >= 2");
  if (cot.k == 0) throw ConfigError("cot.k must be >= 1");
  if (cot.dim == 0) throw ConfigError("cot.dim must be >= 1");
  if (cot.l_max == 0) throw ConfigError("cot.l_max must be >= 1");
  if (cot.m >= cot.n) throw ConfigError("cot.m must be below cot.n");
  lm_config(1).validate();
  train_config().validate();
}

LmConfig ExperimentConfig::lm_config(std::size_t vocab_size) const {
  LmConfig c = lm;
  c.vocab_size = vocab_size;
  c.context_len = walk.chunk_len;
  c.seed = seed;
  return c;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig c = train;
  c.seed = seed;
  return c;
}

json to_json(const ExperimentConfig& c) {
  json prop1 = json::array();
  for (const auto& [e, h] : c.analysis.prop1_sizes) prop1.push_back({e, h});
  return {
      {"seed", c.seed},
      {"jobs", c.jobs},
      {"dataset",
       {{"name", c.dataset.name},
        {"train", c.dataset.train},
        {"test", c.dataset.test},
        {"valid", c.dataset.valid},
        {"add_inverse", c.dataset.add_inverse},
        {"unknown", unknown_name(c.dataset.unknown)},
        {"index_includes_valid", c.dataset.index_includes_valid}}},
      {"walk",
       {{"l_max", c.walk.l_max},
        {"walk_count", c.walk.walk_count},
        {"tokens_per_triple", c.walk.tokens_per_triple},
        {"chunk_len", c.walk.chunk_len},
        {"length_mode", mode_name(c.walk.mode)}}},
      {"lm",
       {{"layers", c.lm.layers},
        {"heads", c.lm.heads},
        {"model_dim", c.lm.model_dim},
        {"ff_dim", c.lm.ff_dim},
        {"dropout", c.lm.dropout}}},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"eps", c.train.eps},
        {"weight_decay", c.train.weight_decay},
        {"clip_norm", c.train.clip_norm},
        {"steps", c.train.steps}}},
      {"rules",
       {{"n_max", c.rules.n_max},
        {"min_support", c.rules.mine.min_support},
        {"support", support_name(c.rules.mine.support)},
        {"leave_one_out", c.rules.mine.leave_one_out},
        {"include_direct_rule", c.rules.mine.include_direct_rule},
        {"path_cap", c.rules.mine.path_cap},
        {"lambda", c.rules.logistic.lambda},
        {"norm", norm_name(c.rules.logistic.norm)},
        {"negatives_per_positive", c.rules.logistic.negatives_per_positive},
        {"learning_rate", c.rules.logistic.learning_rate},
        {"max_iters", c.rules.logistic.max_iters},
        {"tolerance", c.rules.logistic.tolerance},
        {"temperature", c.rules.temperature}}},
      {"analysis",
       {{"per_query", c.analysis.per_query}, {"prop1_sizes", prop1}, {"prop1_trials", c.analysis.prop1_trials}}},
      {"cot",
       {{"input", c.cot.input},
        {"vectors", c.cot.vectors},
        {"dim", c.cot.dim},
        {"k", c.cot.k},
        {"kmeans_iters", c.cot.kmeans_iters},
        {"l_max", c.cot.l_max},
        {"segment_cap", c.cot.segment_cap},
        {"paths", c.cot.paths},
        {"m", c.cot.m},
        {"n", c.cot.n},
        {"size_weighted_init", c.cot.size_weighted_init},
        {"prefix_question", c.cot.prefix_question}}},
  };
}

ExperimentConfig config_from_json(const json& js, const fs::path& base_dir) {
  ExperimentConfig c;
  Section top(js, "<root>");
  top.get("seed", c.seed);
  top.get("jobs", c.jobs);
  if (const auto* d = top.child("dataset")) {
    Section s(*d, "dataset");
    std::string unknown = unknown_name(c.dataset.unknown);
    s.get("name", c.dataset.name);
    s.get("train", c.dataset.train);
    s.get("test", c.dataset.test);
    s.get("valid", c.dataset.valid);
    s.get("add_inverse", c.dataset.add_inverse);
    s.get("unknown", unknown);
    s.get("index_includes_valid", c.dataset.index_includes_valid);
    s.finish();
    c.dataset.unknown =
        parse_enum<UnknownPolicy>("dataset.unknown", unknown, {{"skip", UnknownPolicy::kSkip}, {"error", UnknownPolicy::kError}});
  }
  if (const auto* d = top.child("walk")) {
    Section s(*d, "walk");
    std::string mode = mode_name(c.walk.mode);
    s.get("l_max", c.walk.l_max);
    s.get("walk_count", c.walk.walk_count);
    s.get("tokens_per_triple", c.walk.tokens_per_triple);
    s.get("chunk_len", c.walk.chunk_len);
    s.get("length_mode", mode);
    s.finish();
    c.walk.mode = parse_enum<WalkLengthMode>("walk.length_mode", mode,
                                             {{"exact", WalkLengthMode::kExact}, {"uniform", WalkLengthMode::kUniform}});
  }
  if (const auto* d = top.child("lm")) {
    Section s(*d, "lm");
    s.get("layers", c.lm.layers);
    s.get("heads", c.lm.heads);
    s.get("model_dim", c.lm.model_dim);
    s.get("ff_dim", c.lm.ff_dim);
    s.get("dropout", c.lm.dropout);
    s.finish();
  }
  if (const auto* d = top.child("train")) {
    Section s(*d, "train");
    s.get("batch_size", c.train.batch_size);
    s.get("learning_rate", c.train.learning_rate);
    s.get("beta1", c.train.beta1);
    s.get("beta2", c.train.beta2);
    s.get("eps", c.train.eps);
    s.get("weight_decay", c.train.weight_decay);
    s.get("clip_norm", c.train.clip_norm);
    s.get("steps", c.train.steps);
    s.finish();
  }
  if (const auto* d = top.child("rules")) {
    Section s(*d, "rules");
    std::string support = support_name(c.rules.mine.support), norm = norm_name(c.rules.logistic.norm);
    s.get("n_max", c.rules.n_max);
    s.get("min_support", c.rules.mine.min_support);
    s.get("support", support);
    s.get("leave_one_out", c.rules.mine.leave_one_out);
    s.get("include_direct_rule", c.rules.mine.include_direct_rule);
    s.get("path_cap", c.rules.mine.path_cap);
    s.get("lambda", c.rules.logistic.lambda);
    s.get("norm", norm);
    s.get("negatives_per_positive", c.rules.logistic.negatives_per_positive);
    s.get("learning_rate", c.rules.logistic.learning_rate);
    s.get("max_iters", c.rules.logistic.max_iters);
    s.get("tolerance", c.rules.logistic.tolerance);
    s.get("temperature", c.rules.temperature);
    s.finish();
    c.rules.mine.support = parse_enum<SupportMode>(
        "rules.support", support, {{"instances", SupportMode::kInstances}, {"pairs", SupportMode::kDistinctPairs}});
    c.rules.logistic.norm =
        parse_enum<WeightNorm>("rules.norm", norm, {{"l1", WeightNorm::kL1}, {"l2sq", WeightNorm::kL2Squared}});
    c.rules.logistic.leave_one_out = c.rules.mine.leave_one_out;
  }
  if (const auto* d = top.child("analysis")) {
    Section s(*d, "analysis");
    s.get("per_query", c.analysis.per_query);
    s.get("prop1_sizes", c.analysis.prop1_sizes);
    s.get("prop1_trials", c.analysis.prop1_trials);
    s.finish();
  }
  if (const auto* d = top.child("cot")) {
    Section s(*d, "cot");
    s.get("input", c.cot.input);
    s.get("vectors", c.cot.vectors);
    s.get("dim", c.cot.dim);
    s.get("k", c.cot.k);
    s.get("kmeans_iters", c.cot.kmeans_iters);
    s.get("l_max", c.cot.l_max);
    s.get("segment_cap", c.cot.segment_cap);
    s.get("paths", c.cot.paths);
    s.get("m", c.cot.m);
    s.get("n", c.cot.n);
    s.get("size_weighted_init", c.cot.size_weighted_init);
    s.get("prefix_question", c.cot.prefix_question);
    s.finish();
  }
  top.finish();
  c.dataset.train = resolve(c.dataset.train, base_dir);
  c.dataset.test = resolve(c.dataset.test, base_dir);
  c.dataset.valid = resolve(c.dataset.valid, base_dir);
  c.cot.input = resolve(c.cot.input, base_dir);
  c.cot.vectors = resolve(c.cot.vectors, base_dir);
  c.rules.logistic.seed = c.seed;
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json js;
  try {
    js = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(js, path.parent_path());
}

void save_config(const ExperimentConfig& config, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(config).dump(2) << '\n';
}

void apply_override(json& js, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &js;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' is malformed");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

std::string config_hash(const ExperimentConfig& config) {
  auto js = to_json(config);
  js.erase("jobs");
  const std::string canon = js.dump();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canon.data(), canon.size())));
  return buf;
}

ExperimentConfig preset_config(const std::string& name, const fs::path& data_dir) {
  ExperimentConfig c;
  const auto dir = data_dir / name;
  if (!fs::exists(dir / "train.txt")) throw ConfigError("no dataset '" + name + "' under " + data_dir.string());
  c.dataset.name = name;
  c.dataset.train = (dir / "train.txt").string();
  c.dataset.test = (dir / "test.txt").string();
  if (fs::exists(dir / "valid.txt")) c.dataset.valid = (dir / "valid.txt").string();
  return c;
}

}  // namespace pathagg
