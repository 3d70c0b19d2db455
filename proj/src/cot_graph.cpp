#include "pathagg/cot_graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "pathagg/error.hpp"

namespace pathagg {

namespace fs = std::filesystem;
using nlohmann::json;

void validate_example(const CotExample& ex) {
  if (ex.id.empty()) throw DataError("CoT record with an empty id");
  if (ex.question.empty()) throw DataError("record " + ex.id + ": empty question");
  if (ex.steps.empty()) throw DataError("record " + ex.id + ": empty steps list");
  for (const auto& s : ex.steps)
    if (s.empty()) throw DataError("record " + ex.id + ": empty step");
}

std::vector<CotExample> read_cot_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<CotExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json js;
    try {
      js = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
    CotExample ex;
    if (js.contains("id")) ex.id = js["id"].is_string() ? js["id"].get<std::string>() : js["id"].dump();
    const std::string label = "record " + (ex.id.empty() ? std::string("<no id>") : ex.id);
    for (const char* field : {"id", "question", "steps", "answer"})
      if (!js.contains(field)) throw ParseError(path.string(), lineno, label + ": missing field '" + field + "'");
    try {
      ex.question = js.at("question").get<std::string>();
      ex.steps = js.at("steps").get<std::vector<std::string>>();
      ex.answer = js.at("answer").is_string() ? js.at("answer").get<std::string>() : js.at("answer").dump();
      validate_example(ex);
    } catch (const json::exception& e) {
      throw ParseError(path.string(), lineno, label + ": " + e.what());
    } catch (const DataError& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void write_cot_jsonl(std::span<const CotExample> examples, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& ex : examples)
    out << json{{"id", ex.id}, {"question", ex.question}, {"steps", ex.steps}, {"answer", ex.answer}}.dump() << '\n';
}

double mean_step_count(std::span<const CotExample> examples) {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : examples) total += static_cast<double>(ex.steps.size());
  return total / static_cast<double>(examples.size());
}

std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(std::move(tok));
  return out;
}

StateMatrix hash_embed(std::span<const CotExample> examples, std::size_t dim) {
  if (dim == 0) throw ConfigError("embedding dimension must be >= 1");
  StateMatrix sm;
  sm.dim = dim;
  std::vector<double> counts(dim);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    std::fill(counts.begin(), counts.end(), 0.0);
    std::size_t total = 0;
    auto absorb = [&](const std::string& text) {
      for (const auto& tok : whitespace_tokens(text)) {
        counts[fnv1a(tok.data(), tok.size()) % dim] += 1.0;
        ++total;
      }
    };
    absorb(examples[i].question);
    for (std::size_t j = 0; j < examples[i].steps.size(); ++j) {
      absorb(examples[i].steps[j]);
      sm.keys.push_back({i, j});
      for (const double c : counts) sm.values.push_back(total ? c / static_cast<double>(total) : 0.0);
    }
  }
  return sm;
}

StateMatrix read_vectors_csv(const fs::path& path, std::span<const CotExample> examples) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::map<std::pair<std::string, std::size_t>, std::vector<double>> rows;
  std::size_t dim = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("id", 0) == 0)) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (cells.size() < 3) throw ParseError(path.string(), lineno, "expected id,step_index,v_1..v_d");
    std::size_t step = 0;
    auto [p, ec] = std::from_chars(cells[1].data(), cells[1].data() + cells[1].size(), step);
    if (ec != std::errc{} || p != cells[1].data() + cells[1].size())
      throw ParseError(path.string(), lineno, "bad step index '" + cells[1] + "'");
    std::vector<double> v;
    for (std::size_t k = 2; k < cells.size(); ++k) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(cells[k], &used));
        if (used != cells[k].size()) throw std::invalid_argument(cells[k]);
      } catch (const std::exception&) {
        throw ParseError(path.string(), lineno, "bad vector entry '" + cells[k] + "'");
      }
      if (!std::isfinite(v.back())) throw ParseError(path.string(), lineno, "non-finite vector entry");
    }
    if (dim == 0) dim = v.size();
    if (v.size() != dim) throw ParseError(path.string(), lineno, "vector dimension differs from earlier rows");
    rows[{cells[0], step}] = std::move(v);
  }
  StateMatrix sm;
  sm.dim = dim;
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < examples.size(); ++i)
    for (std::size_t j = 0; j < examples[i].steps.size(); ++j) {
      auto it = rows.find({examples[i].id, j});
      if (it == rows.end()) {
        missing.push_back(examples[i].id + ":" + std::to_string(j));
        continue;
      }
      sm.keys.push_back({i, j});
      sm.values.insert(sm.values.end(), it->second.begin(), it->second.end());
    }
  if (!missing.empty()) {
    std::string msg = path.string() + ": missing vectors for " + std::to_string(missing.size()) + " (id:step) keys:";
    for (std::size_t k = 0; k < missing.size() && k < 20; ++k) msg += " " + missing[k];
    if (missing.size() > 20) msg += " ...";
    throw DataError(msg);
  }
  return sm;
}

void write_vectors_csv(const StateMatrix& states, std::span<const CotExample> examples, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[32];
  for (std::size_t i = 0; i < states.size(); ++i) {
    out << examples[states.keys[i].example].id << ',' << states.keys[i].step;
    for (const double v : states.row(i)) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out << buf;
    }
    out << '\n';
  }
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::size_t nearest(std::span<const double> x, const std::vector<std::vector<double>>& centroids, double* dist) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = sq_dist(x, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

}  // namespace

double kmeans_objective(const StateMatrix& states, const LatentGraph& graph) {
  double total = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) total += sq_dist(states.row(i), graph.centroids[graph.assignment[i]]);
  return total;
}

LatentGraph build_graph(const StateMatrix& states, const KMeansOptions& options) {
  const std::size_t n = states.size();
  const std::size_t k = options.k;
  if (k == 0) throw ConfigError("K must be >= 1");
  if (k > n) throw ConfigError("K=" + std::to_string(k) + " exceeds the number of states (" + std::to_string(n) + ")");

  LatentGraph g;
  g.dim = states.dim;
  Rng rng = stream_rng(options.seed, 0);

  // k-means++ seeding.
  auto pick = [&](std::size_t i) { g.centroids.emplace_back(states.row(i).begin(), states.row(i).end()); };
  pick(uniform_index(rng, n));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(states.row(i), g.centroids[0]);
  while (g.centroids.size() < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t chosen = n - 1;
    if (total > 0.0) {
      double u = uniform_unit(rng) * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        if (u < d2[i]) {
          chosen = i;
          break;
        }
        u -= d2[i];
        chosen = i;
      }
    } else {
      chosen = uniform_index(rng, n);
    }
    pick(chosen);
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(states.row(i), g.centroids.back()));
  }

  std::vector<std::size_t> prev;
  std::vector<double> dist(n);
  g.assignment.assign(n, 0);
  for (std::size_t it = 0; it < options.max_iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) g.assignment[i] = nearest(states.row(i), g.centroids, &dist[i]);

    std::vector<std::size_t> sizes(k, 0);
    for (const auto a : g.assignment) ++sizes[a];
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] > 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i)
        if (sizes[g.assignment[i]] >= 2 && (far == n || dist[i] > dist[far])) far = i;
      --sizes[g.assignment[far]];
      g.assignment[far] = c;
      sizes[c] = 1;
      dist[far] = 0.0;
      g.centroids[c].assign(states.row(far).begin(), states.row(far).end());
    }

    for (auto& c : g.centroids) std::fill(c.begin(), c.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& c = g.centroids[g.assignment[i]];
      const auto x = states.row(i);
      for (std::size_t d = 0; d < g.dim; ++d) c[d] += x[d];
    }
    for (std::size_t c = 0; c < k; ++c)
      for (auto& v : g.centroids[c]) v /= static_cast<double>(sizes[c]);

    g.objective.push_back(kmeans_objective(states, g));
    g.iterations = it + 1;
    if (g.assignment == prev) {
      g.converged = true;
      break;
    }
    prev = g.assignment;
  }

  g.members.assign(k, {});
  for (std::size_t i = 0; i < n; ++i) g.members[g.assignment[i]].push_back(i);
  return g;
}

std::size_t EmittedPath::length() const {
  std::size_t n = 0;
  for (const auto& s : segments) n += s.end - s.begin + 1;
  return n;
}

std::vector<StepRef> EmittedPath::steps() const {
  std::vector<StepRef> out;
  for (const auto& s : segments)
    for (std::size_t j = s.begin; j <= s.end; ++j) out.push_back({s.example, j});
  return out;
}

StepIndex::StepIndex(std::span<const CotExample> examples, const StateMatrix& states) {
  offsets_.push_back(0);
  for (const auto& ex : examples) offsets_.push_back(offsets_.back() + ex.steps.size());
  if (offsets_.back() != states.size()) throw DataError("state count does not match the CoT step count");
  for (std::size_t i = 0; i < examples.size(); ++i)
    for (std::size_t j = 0; j < examples[i].steps.size(); ++j)
      if (states.keys[offsets_[i] + j] != StepRef{i, j}) throw DataError("state rows are not in example-major order");
}

std::size_t StepIndex::row(StepRef ref) const {
  if (ref.example + 1 >= offsets_.size() || offsets_[ref.example] + ref.step >= offsets_[ref.example + 1])
    throw std::out_of_range("step reference out of range");
  return offsets_[ref.example] + ref.step;
}

std::vector<EmittedPath> random_walk_paths(std::span<const CotExample> examples, const StateMatrix& states,
                                           const LatentGraph& graph, const WalkOptions& options) {
  if (options.l_max == 0) throw ConfigError("L_max must be >= 1");
  const std::size_t cap = options.segment_cap ? options.segment_cap : options.l_max;
  const StepIndex index(examples, states);
  std::vector<std::size_t> nonempty;
  for (std::size_t a = 0; a < graph.node_count(); ++a)
    if (!graph.members[a].empty()) nonempty.push_back(a);
  if (nonempty.empty()) throw DataError("latent graph has no non-empty nodes");

  std::vector<EmittedPath> out(options.count);
  auto emit = [&](std::size_t i) {
    Rng rng = stream_rng(options.seed, i);
    EmittedPath p;
    std::size_t a = options.initial == InitialNode::kUniform
                        ? nonempty[uniform_index(rng, nonempty.size())]
                        : graph.assignment[uniform_index(rng, graph.assignment.size())];
    p.initial_node = a;
    std::size_t len = 0;
    while (len < options.l_max) {
      const auto& members = graph.members[a];
      const StepRef ref = states.keys[members[uniform_index(rng, members.size())]];
      const std::size_t m = 1 + uniform_index(rng, cap);
      const std::size_t last = examples[ref.example].steps.size() - 1;
      const std::size_t end = std::min(ref.step + m, last);
      p.segments.push_back({ref.example, ref.step, end});
      len += end - ref.step + 1;
      a = graph.assignment[index.row({ref.example, end})];
    }
    out[i] = std::move(p);
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, options.count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < options.count; ++i) emit(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < options.count; i += jobs) emit(i);
      });
  }
  return out;
}

std::string check_path(const EmittedPath& path, std::span<const CotExample> examples, const StepIndex& index,
                       const LatentGraph& graph, std::size_t l_max, std::size_t segment_cap) {
  const std::size_t cap = segment_cap ? segment_cap : l_max;
  if (path.segments.empty()) return "no segments";
  if (path.initial_node >= graph.node_count()) return "initial node out of range";
  std::size_t node = path.initial_node;
  std::size_t len = 0;
  for (std::size_t k = 0; k < path.segments.size(); ++k) {
    const auto& s = path.segments[k];
    const std::string where = "segment " + std::to_string(k) + ": ";
    if (s.example >= examples.size()) return where + "example out of range";
    const std::size_t n = examples[s.example].steps.size();
    if (s.begin > s.end || s.end >= n) return where + "bad step range";
    const std::size_t span = s.end - s.begin;
    // end = min(begin + m, n - 1) with m in [1, cap]
    if (span > cap) return where + "longer than the segment cap";
    if (span == 0 && s.end != n - 1) return where + "single-step segment before the final step";
    if (graph.assignment[index.row({s.example, s.begin})] != node) return where + "does not start in the current node";
    if (len >= l_max) return where + "appended after reaching L_max";
    len += span + 1;
    node = graph.assignment[index.row({s.example, s.end})];
  }
  if (len < l_max) return "terminated before L_max";
  return {};
}

std::string render_path(const EmittedPath& path, std::span<const CotExample> examples, bool prefix_question) {
  std::string text;
  if (prefix_question && !path.segments.empty()) text = examples[path.segments.front().example].question;
  for (const auto& ref : path.steps()) {
    if (!text.empty()) text += '\n';
    text += examples[ref.example].steps[ref.step];
  }
  return text;
}

void write_paths_jsonl(std::span<const EmittedPath> paths, std::span<const CotExample> examples,
                       const fs::path& path, bool prefix_question) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& p : paths) {
    json segs = json::array();
    for (const auto& s : p.segments) segs.push_back({{"id", examples[s.example].id}, {"begin", s.begin}, {"end", s.end}});
    out << json{{"initial_node", p.initial_node}, {"segments", segs}, {"text", render_path(p, examples, prefix_question)}}
               .dump()
        << '\n';
  }
}

void write_graph_json(const LatentGraph& graph, const StateMatrix& states, std::span<const CotExample> examples,
                      const fs::path& path, const std::string& config_hash) {
  json js{{"k", graph.node_count()},
          {"dim", graph.dim},
          {"iterations", graph.iterations},
          {"converged", graph.converged},
          {"objective", graph.objective},
          {"centroids", graph.centroids}};
  if (!config_hash.empty()) js["config_hash"] = config_hash;
  json assign = json::array();
  for (std::size_t i = 0; i < states.size(); ++i)
    assign.push_back({{"id", examples[states.keys[i].example].id}, {"step", states.keys[i].step},
                      {"node", graph.assignment[i]}});
  js["assignments"] = std::move(assign);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << js.dump(1) << '\n';
}

void emit_training_plan(std::span<const EmittedPath> paths, std::span<const CotExample> examples,
                        const TrainingPlan& plan, const fs::path& out_dir, const std::string& config_hash) {
  if (plan.m >= plan.n)
    throw ConfigError("random-walk steps M=" + std::to_string(plan.m) + " must be below total steps N=" +
                      std::to_string(plan.n));
  fs::create_directories(out_dir);
  json phases = json::array();
  json files = json::object();
  if (plan.m > 0) {
    std::ofstream rw(out_dir / "random_walk.jsonl", std::ios::binary);
    if (!rw) throw DataError("cannot write " + (out_dir / "random_walk.jsonl").string());
    for (const auto& p : paths) rw << json{{"text", render_path(p, examples, plan.prefix_question)}}.dump() << '\n';
    phases.push_back({{"name", "random_walk"}, {"steps", plan.m}, {"file", "random_walk.jsonl"}, {"records", paths.size()}});
  }
  {
    std::ofstream sft(out_dir / "sft.jsonl", std::ios::binary);
    if (!sft) throw DataError("cannot write " + (out_dir / "sft.jsonl").string());
    for (const auto& ex : examples) {
      std::string text = ex.question;
      for (const auto& s : ex.steps) text += "\n" + s;
      text += "\n" + ex.answer;
      sft << json{{"id", ex.id}, {"question", ex.question}, {"steps", ex.steps}, {"answer", ex.answer}, {"text", text}}
                 .dump()
          << '\n';
    }
    phases.push_back({{"name", "sft"}, {"steps", plan.n - plan.m}, {"file", "sft.jsonl"}, {"records", examples.size()}});
  }
  json manifest{{"M", plan.m}, {"N", plan.n}, {"seed", plan.seed}, {"phases", phases}};
  if (!config_hash.empty()) manifest["config_hash"] = config_hash;
  std::ofstream out(out_dir / "manifest.json", std::ios::binary);
  if (!out) throw DataError("cannot write " + (out_dir / "manifest.json").string());
  out << manifest.dump(1) << '\n';
}

std::vector<CotExample> synthetic_cot_corpus(std::size_t count, std::uint64_t seed) {
  static const char* kItems[] = {"apples", "pens", "coins", "books"};
  static const char* kNames[] = {"Ann", "Bob", "Cai", "Dee", "Eli"};
  std::vector<CotExample> out;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = stream_rng(seed, i);
    const std::string item = kItems[uniform_index(rng, 4)];
    const std::string name = kNames[uniform_index(rng, 5)];
    long value = 1 + static_cast<long>(uniform_index(rng, 9));
    CotExample ex;
    ex.id = "syn-" + std::to_string(i);
    ex.question = name + " starts with " + std::to_string(value) + " " + item + ". How many " + item + " at the end?";
    const std::size_t n = 1 + uniform_index(rng, 6);
    for (std::size_t j = 0; j < n; ++j) {
      const long x = 1 + static_cast<long>(uniform_index(rng, 5));
      switch (uniform_index(rng, 3)) {
        case 0:
          value += x;
          ex.steps.push_back(name + " gets " + std::to_string(x) + " more " + item + ", so now " + std::to_string(value) + ".");
          break;
        case 1:
          value -= x;
          ex.steps.push_back(name + " gives away " + std::to_string(x) + " " + item + ", leaving " + std::to_string(value) + ".");
          break;
        default:
          value *= 2;
          ex.steps.push_back(name + " doubles the " + item + " to " + std::to_string(value) + ".");
          break;
      }
    }
    ex.answer = std::to_string(value);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace pathagg
