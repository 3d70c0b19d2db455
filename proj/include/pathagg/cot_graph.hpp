#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pathagg/rng.hpp"

namespace pathagg {

struct CotExample {
  std::string id;
  std::string question;
  std::vector<std::string> steps;
  std::string answer;
};

/// Line-delimited JSON records {id, question, steps: [...], answer}. Blank lines
/// are skipped; a bad record raises ParseError naming the line and id.
std::vector<CotExample> read_cot_jsonl(const std::filesystem::path& path);
void write_cot_jsonl(std::span<const CotExample> examples, const std::filesystem::path& path);

/// Throws DataError when an example has an empty id, question or step list.
void validate_example(const CotExample& ex);

double mean_step_count(std::span<const CotExample> examples);

struct StepRef {
  std::size_t example = 0;  // index into the example list
  std::size_t step = 0;     // 0-based step index

  friend bool operator==(const StepRef&, const StepRef&) = default;
  friend auto operator<=>(const StepRef&, const StepRef&) = default;
};

/// One cumulative state vector per (example, step), rows in example-major order.
struct StateMatrix {
  std::size_t dim = 0;
  std::vector<StepRef> keys;
  std::vector<double> values;  // keys.size() x dim, row-major

  std::size_t size() const noexcept { return keys.size(); }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

std::vector<std::string> whitespace_tokens(const std::string& text);

/// Hash provider: every whitespace token of x, r_1..r_j is hashed into `dim`
/// buckets (FNV-1a mod dim) and the one-hot vectors are averaged.
StateMatrix hash_embed(std::span<const CotExample> examples, std::size_t dim);

/// External provider: CSV rows "id,step_index,v_1,...,v_d" (0-based step index,
/// optional header starting with "id"). Missing keys raise DataError listing them.
StateMatrix read_vectors_csv(const std::filesystem::path& path, std::span<const CotExample> examples);
void write_vectors_csv(const StateMatrix& states, std::span<const CotExample> examples,
                       const std::filesystem::path& path);

struct KMeansOptions {
  std::size_t k = 100;
  std::uint64_t seed = 0;
  std::size_t max_iters = 100;
};

struct LatentGraph {
  std::size_t dim = 0;
  std::vector<std::vector<double>> centroids;
  std::vector<std::size_t> assignment;             // per state row
  std::vector<std::vector<std::size_t>> members;   // per node, state rows in ascending order
  std::vector<double> objective;                   // after every Lloyd iteration
  std::size_t iterations = 0;
  bool converged = false;

  std::size_t node_count() const noexcept { return centroids.size(); }
};

/// k-means++ seeding then Lloyd iterations. Empty clusters are refilled with the
/// point farthest from its centroid (taken from a cluster with >= 2 members).
LatentGraph build_graph(const StateMatrix& states, const KMeansOptions& options);

double kmeans_objective(const StateMatrix& states, const LatentGraph& graph);

struct Segment {
  std::size_t example = 0;
  std::size_t begin = 0;  // first step
  std::size_t end = 0;    // last step, inclusive
};

struct EmittedPath {
  std::vector<Segment> segments;
  std::size_t initial_node = 0;

  std::size_t length() const;
  std::vector<StepRef> steps() const;
};

enum class InitialNode { kUniform, kSizeWeighted };

struct WalkOptions {
  std::size_t l_max = 10;
  std::size_t segment_cap = 0;  // L in "sample m from [1, L]"; 0 means l_max
  std::size_t count = 1000;
  std::uint64_t seed = 0;
  InitialNode initial = InitialNode::kUniform;
  std::size_t jobs = 1;
};

/// Maps every (example, step) to the row of `states` / `graph.assignment`.
class StepIndex {
 public:
  StepIndex(std::span<const CotExample> examples, const StateMatrix& states);
  std::size_t row(StepRef ref) const;

 private:
  std::vector<std::size_t> offsets_;
};

/// Random walk on the latent graph: pick a step in the current node, append the
/// segment j..min(j+m, n-1) with m uniform in [1, L], move to the node of the
/// segment's last step, repeat until at least l_max steps were appended.
std::vector<EmittedPath> random_walk_paths(std::span<const CotExample> examples, const StateMatrix& states,
                                           const LatentGraph& graph, const WalkOptions& options);

/// Checks the segment and junction invariants; returns an empty string when valid.
std::string check_path(const EmittedPath& path, std::span<const CotExample> examples, const StepIndex& index,
                       const LatentGraph& graph, std::size_t l_max, std::size_t segment_cap);

/// Steps joined by newlines; with `prefix_question` the first segment's question leads.
std::string render_path(const EmittedPath& path, std::span<const CotExample> examples, bool prefix_question = false);

void write_paths_jsonl(std::span<const EmittedPath> paths, std::span<const CotExample> examples,
                       const std::filesystem::path& path, bool prefix_question = false);

void write_graph_json(const LatentGraph& graph, const StateMatrix& states, std::span<const CotExample> examples,
                      const std::filesystem::path& path, const std::string& config_hash = {});

struct TrainingPlan {
  std::size_t m = 500;
  std::size_t n = 2500;
  std::uint64_t seed = 0;
  bool prefix_question = false;
};

/// Writes random_walk.jsonl (skipped when M = 0), sft.jsonl and manifest.json into out_dir.
void emit_training_plan(std::span<const EmittedPath> paths, std::span<const CotExample> examples,
                        const TrainingPlan& plan, const std::filesystem::path& out_dir,
                        const std::string& config_hash = {});

/// Small arithmetic-style CoT corpus whose steps reuse a shared phrase pool, so
/// different examples produce nearby prefix states.
std::vector<CotExample> synthetic_cot_corpus(std::size_t count, std::uint64_t seed);

}  // namespace pathagg
