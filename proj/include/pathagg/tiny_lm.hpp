#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pathagg/distribution.hpp"
#include "pathagg/rng.hpp"
#include "pathagg/walk_corpus.hpp"

namespace pathagg {

struct LmConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t model_dim = 128;
  std::size_t ff_dim = 512;
  std::size_t context_len = 256;
  std::size_t vocab_size = 0;
  double dropout = 0.1;
  std::uint64_t seed = 0;

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

struct TrainConfig {
  std::size_t batch_size = 16;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::size_t steps = 3000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Named slice of the flat parameter vector.
struct TensorSlot {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool decay = false;  // weight decay applies to matrices only

  std::size_t size() const noexcept { return rows * cols; }
};

/// Pre-norm GPT-2 style decoder: tied token embedding / output projection,
/// learned positions, GELU MLP. Forward and backward are written out by hand.
template <typename Scalar>
class TransformerLm {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  /// Gaussian(0, 0.02) weights, zero biases, unit layer-norm gains; seeded by config.seed.
  explicit TransformerLm(LmConfig config);

  /// Closed-form parameter count.
  static std::size_t parameter_count(const LmConfig& config);

  const LmConfig& config() const noexcept { return config_; }
  const std::vector<TensorSlot>& layout() const noexcept { return layout_; }
  std::span<Scalar> params() noexcept { return params_; }
  std::span<const Scalar> params() const noexcept { return params_; }
  const TensorSlot& slot(std::string_view name) const;

  /// Mean next-token negative log-likelihood over a batch of `batch` sequences
  /// stored contiguously in `tokens` (each seq_len long). When `grad` is non-null it
  /// is overwritten with dLoss/dParams. Dropout is active only when `dropout_rng` is set.
  Scalar loss(std::span<const TokenId> tokens, std::size_t seq_len, std::vector<Scalar>* grad = nullptr,
              Rng* dropout_rng = nullptr) const;

  /// Logits at every position of one sequence, shape [len, vocab].
  Matrix logits(std::span<const TokenId> tokens) const;

  /// Final-position logits for `batch` prompts of equal length, shape [batch, vocab].
  Matrix last_logits(std::span<const TokenId> tokens, std::size_t seq_len) const;

 private:
  struct Workspace;
  Scalar run(std::span<const TokenId> tokens, std::size_t batch, std::size_t seq_len, Workspace& ws,
             Rng* dropout_rng, bool want_loss) const;
  // Aligned storage keeps Eigen's vectorised reductions in a fixed order, so results are bit-reproducible.
  using AlignedVector = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;
  void backward(std::span<const TokenId> tokens, std::size_t batch, std::size_t seq_len, Workspace& ws,
                AlignedVector& grad) const;

  LmConfig config_;
  std::vector<TensorSlot> layout_;
  AlignedVector params_;
};

extern template class TransformerLm<float>;
extern template class TransformerLm<double>;

using TinyLm = TransformerLm<float>;

struct AdamState {
  std::vector<float> m;
  std::vector<float> v;
  std::uint64_t step = 0;
};

struct TrainLogRow {
  std::size_t step = 0;
  double loss = 0.0;
};

/// AdamW with decoupled weight decay and global-norm clipping. Batches are
/// drawn from a seeded per-epoch shuffle of the corpus chunks.
class LmTrainer {
 public:
  LmTrainer(TinyLm& model, TrainConfig config);

  /// Runs config.steps updates. Throws NumericError on a non-finite loss.
  std::vector<TrainLogRow> train(const TokenCorpus& corpus,
                                 const std::function<void(const TrainLogRow&)>& on_step = {});

  const AdamState& state() const noexcept { return state_; }
  void set_state(AdamState state) { state_ = std::move(state); }

 private:
  void apply_update(std::vector<float>& grad);

  TinyLm* model_;
  TrainConfig config_;
  AdamState state_;
};

/// Convenience wrapper: copies `model`, trains it, returns the trained copy.
TinyLm train(const TinyLm& model, const TokenCorpus& corpus, const TrainConfig& config,
             std::vector<TrainLogRow>* log = nullptr);

/// Softmax over the entity-token block of the final-position logits for [e1, r].
EntityDistribution lm_entity_distribution(const TinyLm& model, const Vocabulary& vocab, EntityId e1, RelationId r);

/// Same as above for many queries in one batched forward pass.
std::vector<EntityDistribution> lm_entity_distributions(const TinyLm& model, const Vocabulary& vocab,
                                                        std::span<const std::pair<EntityId, RelationId>> queries);

/// argmax of lm_entity_distribution; ties go to the smallest entity id.
EntityId predict(const TinyLm& model, const Vocabulary& vocab, EntityId e1, RelationId r);

// Checkpoint layout: "PALM" u32 version, u64 config-json length, config json,
// u64 param count, f32 params, u64 adam step, f32 m, f32 v.
void save_checkpoint(const TinyLm& model, const AdamState& state, const std::filesystem::path& path,
                     const std::string& config_hash = {});
TinyLm load_checkpoint(const std::filesystem::path& path, AdamState* state = nullptr);

void write_train_log_csv(std::span<const TrainLogRow> log, const std::filesystem::path& path,
                         const std::string& config_hash = {});

}  // namespace pathagg
