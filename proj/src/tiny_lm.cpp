#include "pathagg/tiny_lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "pathagg/error.hpp"

namespace pathagg {

void LmConfig::validate() const {
  if (layers == 0 || heads == 0 || model_dim == 0 || ff_dim == 0) throw ConfigError("LM dimensions must be positive");
  if (model_dim % heads != 0) throw ConfigError("model_dim must be divisible by heads");
  if (context_len < 8) throw ConfigError("context_len must be >= 8");
  if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
}

namespace {

constexpr double kLnEps = 1e-5;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
struct LayerNormCache {
  RowMatrix<Scalar> xhat;
  std::vector<Scalar> rstd;
};

template <typename Scalar>
void layer_norm(const RowMatrix<Scalar>& x, const Eigen::Map<const RowVec<Scalar>>& gain,
                const Eigen::Map<const RowVec<Scalar>>& bias, LayerNormCache<Scalar>& cache, RowMatrix<Scalar>& y) {
  const auto n = x.rows();
  cache.xhat.resize(n, x.cols());
  cache.rstd.resize(static_cast<std::size_t>(n));
  y.resize(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar mu = x.row(i).mean();
    const Scalar var = (x.row(i).array() - mu).square().mean();
    const Scalar r = Scalar(1) / std::sqrt(var + Scalar(kLnEps));
    cache.rstd[static_cast<std::size_t>(i)] = r;
    cache.xhat.row(i) = (x.row(i).array() - mu) * r;
    y.row(i) = cache.xhat.row(i).cwiseProduct(gain) + bias;
  }
}

template <typename Scalar>
RowMatrix<Scalar> layer_norm_backward(const RowMatrix<Scalar>& dy, const LayerNormCache<Scalar>& cache,
                                      const Eigen::Map<const RowVec<Scalar>>& gain,
                                      Eigen::Map<RowVec<Scalar>> dgain, Eigen::Map<RowVec<Scalar>> dbias) {
  dgain += dy.cwiseProduct(cache.xhat).colwise().sum();
  dbias += dy.colwise().sum();
  RowMatrix<Scalar> dxhat = dy.array().rowwise() * gain.array();
  RowMatrix<Scalar> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const Scalar m1 = dxhat.row(i).mean();
    const Scalar m2 = dxhat.row(i).cwiseProduct(cache.xhat.row(i)).mean();
    dx.row(i) = cache.rstd[static_cast<std::size_t>(i)] *
                (dxhat.row(i).array() - m1 - cache.xhat.row(i).array() * m2);
  }
  return dx;
}

// tanh-approximated GELU constant sqrt(2/pi).
constexpr double kGeluKd = 0.7978845608028654;

template <typename Scalar>
void dropout_mask(RowMatrix<Scalar>& mask, Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  mask.resize(rows, cols);
  const Scalar keep = Scalar(1.0 / (1.0 - p));
  Scalar* data = mask.data();
  for (Eigen::Index i = 0; i < rows * cols; ++i) data[i] = uniform_unit(rng) < p ? Scalar(0) : keep;
}

}  // namespace

template <typename Scalar>
struct TransformerLm<Scalar>::Workspace {
  struct Layer {
    Matrix x_in;
    LayerNormCache<Scalar> ln1, ln2;
    Matrix h1, qkv, att, x_mid, h2, u, t, g;  // t = tanh term of the GELU
    std::vector<Matrix> probs;  // [batch * heads] causal attention matrices
    Matrix mask_att, mask_mlp;
  };
  Matrix mask_emb;
  std::vector<Layer> layers;
  Matrix x_out;
  LayerNormCache<Scalar> lnf;
  Matrix hf, logits;
  bool dropout = false;
};

template <typename Scalar>
TransformerLm<Scalar>::TransformerLm(LmConfig config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.model_dim, f = config_.ff_dim;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols, bool decay) {
    layout_.push_back({std::move(name), offset, rows, cols, decay});
    offset += rows * cols;
  };
  add("wte", config_.vocab_size, d, true);
  add("wpe", config_.context_len, d, true);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    add(p + "ln1.g", 1, d, false);
    add(p + "ln1.b", 1, d, false);
    add(p + "attn.w", d, 3 * d, true);
    add(p + "attn.b", 1, 3 * d, false);
    add(p + "proj.w", d, d, true);
    add(p + "proj.b", 1, d, false);
    add(p + "ln2.g", 1, d, false);
    add(p + "ln2.b", 1, d, false);
    add(p + "fc.w", d, f, true);
    add(p + "fc.b", 1, f, false);
    add(p + "fc2.w", f, d, true);
    add(p + "fc2.b", 1, d, false);
  }
  add("lnf.g", 1, d, false);
  add("lnf.b", 1, d, false);

  params_.assign(offset, Scalar(0));
  Rng rng(mix_seed(config_.seed, 0x1417));
  for (const auto& s : layout_) {
    const bool gain = s.name.ends_with(".g");
    for (std::size_t i = 0; i < s.size(); ++i) {
      Scalar& p = params_[s.offset + i];
      if (s.decay)
        p = static_cast<Scalar>(0.02 * standard_normal(rng));
      else
        p = gain ? Scalar(1) : Scalar(0);
    }
  }
}

template <typename Scalar>
std::size_t TransformerLm<Scalar>::parameter_count(const LmConfig& c) {
  const std::size_t d = c.model_dim, f = c.ff_dim;
  return d * (c.vocab_size + c.context_len) + c.layers * (4 * d * d + 2 * d * f + 9 * d + f) + 2 * d;
}

template <typename Scalar>
const TensorSlot& TransformerLm<Scalar>::slot(std::string_view name) const {
  for (const auto& s : layout_)
    if (s.name == name) return s;
  throw std::out_of_range("no tensor named " + std::string(name));
}

template <typename Scalar>
Scalar TransformerLm<Scalar>::run(std::span<const TokenId> tokens, std::size_t batch, std::size_t seq_len,
                                  Workspace& ws, Rng* dropout_rng, bool want_loss) const {
  const auto d = static_cast<Eigen::Index>(config_.model_dim);
  const auto heads = static_cast<Eigen::Index>(config_.heads);
  const auto dh = d / heads;
  const auto t_len = static_cast<Eigen::Index>(seq_len);
  const auto n = static_cast<Eigen::Index>(batch * seq_len);
  const auto vocab = static_cast<Eigen::Index>(config_.vocab_size);
  if (tokens.size() != batch * seq_len) throw std::invalid_argument("token buffer does not match batch * seq_len");
  if (seq_len == 0 || seq_len > config_.context_len) throw std::invalid_argument("sequence longer than context");
  for (const auto t : tokens)
    if (t < 0 || t >= vocab) throw std::out_of_range("token id " + std::to_string(t) + " out of vocabulary");

  auto mat = [&](const std::string& name) {
    const auto& s = slot(name);
    return Eigen::Map<const Matrix>(params_.data() + s.offset, static_cast<Eigen::Index>(s.rows),
                                    static_cast<Eigen::Index>(s.cols));
  };
  auto vec = [&](const std::string& name) {
    const auto& s = slot(name);
    return Eigen::Map<const RowVec<Scalar>>(params_.data() + s.offset, static_cast<Eigen::Index>(s.size()));
  };

  const double p_drop = dropout_rng ? config_.dropout : 0.0;
  ws.dropout = p_drop > 0.0;

  const auto wte = mat("wte");
  const auto wpe = mat("wpe");
  Matrix x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = wte.row(tokens[static_cast<std::size_t>(i)]) + wpe.row(i % t_len);
  if (ws.dropout) {
    dropout_mask(ws.mask_emb, n, d, p_drop, *dropout_rng);
    x.array() *= ws.mask_emb.array();
  }

  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  const auto kGeluK = static_cast<Scalar>(kGeluKd);
  ws.layers.resize(config_.layers);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    auto& c = ws.layers[l];
    const std::string p = "h" + std::to_string(l) + ".";
    c.x_in = x;
    layer_norm<Scalar>(c.x_in, vec(p + "ln1.g"), vec(p + "ln1.b"), c.ln1, c.h1);
    c.qkv.noalias() = c.h1 * mat(p + "attn.w");
    c.qkv.rowwise() += vec(p + "attn.b");

    c.att.setZero(n, d);
    c.probs.resize(batch * static_cast<std::size_t>(heads));
    for (std::size_t b = 0; b < batch; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * t_len;
      for (Eigen::Index h = 0; h < heads; ++h) {
        auto q = c.qkv.block(r0, h * dh, t_len, dh);
        auto k = c.qkv.block(r0, d + h * dh, t_len, dh);
        auto v = c.qkv.block(r0, 2 * d + h * dh, t_len, dh);
        Matrix& pr = c.probs[b * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
        pr.noalias() = q * k.transpose();
        for (Eigen::Index i = 0; i < t_len; ++i) {
          const Scalar peak = pr.row(i).head(i + 1).maxCoeff() * scale;
          Scalar total = 0;
          for (Eigen::Index j = 0; j <= i; ++j) {
            pr(i, j) = std::exp(pr(i, j) * scale - peak);
            total += pr(i, j);
          }
          pr.row(i).head(i + 1) /= total;
          pr.row(i).tail(t_len - i - 1).setZero();
        }
        c.att.block(r0, h * dh, t_len, dh).noalias() = pr * v;
      }
    }
    Matrix o = c.att * mat(p + "proj.w");
    o.rowwise() += vec(p + "proj.b");
    if (ws.dropout) {
      dropout_mask(c.mask_att, n, d, p_drop, *dropout_rng);
      o.array() *= c.mask_att.array();
    }
    c.x_mid = c.x_in + o;

    layer_norm<Scalar>(c.x_mid, vec(p + "ln2.g"), vec(p + "ln2.b"), c.ln2, c.h2);
    c.u.noalias() = c.h2 * mat(p + "fc.w");
    c.u.rowwise() += vec(p + "fc.b");
    c.t = (kGeluK * (c.u.array() + Scalar(0.044715) * c.u.array().cube())).tanh();
    c.g = (Scalar(0.5) * c.u.array() * (Scalar(1) + c.t.array())).matrix();
    Matrix m = c.g * mat(p + "fc2.w");
    m.rowwise() += vec(p + "fc2.b");
    if (ws.dropout) {
      dropout_mask(c.mask_mlp, n, d, p_drop, *dropout_rng);
      m.array() *= c.mask_mlp.array();
    }
    x = c.x_mid + m;
  }
  ws.x_out = std::move(x);
  layer_norm<Scalar>(ws.x_out, vec("lnf.g"), vec("lnf.b"), ws.lnf, ws.hf);
  ws.logits.noalias() = ws.hf * wte.transpose();
  if (!want_loss) return Scalar(0);

  // Logits become softmax probabilities in place; the loss is the mean over
  // the batch * (seq_len - 1) positions that have a successor.
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = ws.logits.row(i);
    const Scalar peak = row.maxCoeff();
    row.array() = (row.array() - peak).exp();
    const Scalar z = row.sum();
    row /= z;
    if (i % t_len == t_len - 1) continue;
    const auto target = tokens[static_cast<std::size_t>(i + 1)];
    total -= std::log(static_cast<double>(row(target)));
  }
  const double count = static_cast<double>(batch * (seq_len - 1));
  return static_cast<Scalar>(total / count);
}

template <typename Scalar>
void TransformerLm<Scalar>::backward(std::span<const TokenId> tokens, std::size_t batch, std::size_t seq_len,
                                     Workspace& ws, AlignedVector& grad) const {
  const auto d = static_cast<Eigen::Index>(config_.model_dim);
  const auto heads = static_cast<Eigen::Index>(config_.heads);
  const auto dh = d / heads;
  const auto t_len = static_cast<Eigen::Index>(seq_len);
  const auto n = static_cast<Eigen::Index>(batch * seq_len);
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  const auto kGeluK = static_cast<Scalar>(kGeluKd);

  grad.assign(params_.size(), Scalar(0));
  auto mat = [&](const std::string& name) {
    const auto& s = slot(name);
    return Eigen::Map<const Matrix>(params_.data() + s.offset, static_cast<Eigen::Index>(s.rows),
                                    static_cast<Eigen::Index>(s.cols));
  };
  auto vec = [&](const std::string& name) {
    const auto& s = slot(name);
    return Eigen::Map<const RowVec<Scalar>>(params_.data() + s.offset, static_cast<Eigen::Index>(s.size()));
  };
  auto gmat = [&](const std::string& name) {
    const auto& s = slot(name);
    return Eigen::Map<Matrix>(grad.data() + s.offset, static_cast<Eigen::Index>(s.rows),
                              static_cast<Eigen::Index>(s.cols));
  };
  auto gvec = [&](const std::string& name) {
    const auto& s = slot(name);
    return Eigen::Map<RowVec<Scalar>>(grad.data() + s.offset, static_cast<Eigen::Index>(s.size()));
  };

  // d(mean NLL)/dlogits = (softmax - onehot) / count on positions with a successor.
  const Scalar inv_count = Scalar(1) / static_cast<Scalar>(batch * (seq_len - 1));
  Matrix dlogits = ws.logits * inv_count;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i % t_len == t_len - 1) {
      dlogits.row(i).setZero();
      continue;
    }
    dlogits(i, tokens[static_cast<std::size_t>(i + 1)]) -= inv_count;
  }

  const auto wte = mat("wte");
  auto g_wte = gmat("wte");
  Matrix dhf = dlogits * wte;
  g_wte.noalias() += dlogits.transpose() * ws.hf;
  Matrix dx = layer_norm_backward<Scalar>(dhf, ws.lnf, vec("lnf.g"), gvec("lnf.g"), gvec("lnf.b"));

  for (std::size_t li = config_.layers; li-- > 0;) {
    auto& c = ws.layers[li];
    const std::string p = "h" + std::to_string(li) + ".";

    Matrix dm = ws.dropout ? Matrix(dx.cwiseProduct(c.mask_mlp)) : dx;
    gmat(p + "fc2.w").noalias() += c.g.transpose() * dm;
    gvec(p + "fc2.b") += dm.colwise().sum();
    Matrix du = dm * mat(p + "fc2.w").transpose();
    du.array() *= Scalar(0.5) * (Scalar(1) + c.t.array()) +
                  Scalar(0.5) * c.u.array() * (Scalar(1) - c.t.array().square()) * kGeluK *
                      (Scalar(1) + Scalar(3 * 0.044715) * c.u.array().square());
    gmat(p + "fc.w").noalias() += c.h2.transpose() * du;
    gvec(p + "fc.b") += du.colwise().sum();
    Matrix dh2 = du * mat(p + "fc.w").transpose();
    Matrix dx_mid = dx + layer_norm_backward<Scalar>(dh2, c.ln2, vec(p + "ln2.g"), gvec(p + "ln2.g"), gvec(p + "ln2.b"));

    Matrix dout = ws.dropout ? Matrix(dx_mid.cwiseProduct(c.mask_att)) : dx_mid;
    gmat(p + "proj.w").noalias() += c.att.transpose() * dout;
    gvec(p + "proj.b") += dout.colwise().sum();
    Matrix datt = dout * mat(p + "proj.w").transpose();

    Matrix dqkv(n, 3 * d);
    for (std::size_t b = 0; b < batch; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * t_len;
      for (Eigen::Index h = 0; h < heads; ++h) {
        auto q = c.qkv.block(r0, h * dh, t_len, dh);
        auto k = c.qkv.block(r0, d + h * dh, t_len, dh);
        auto v = c.qkv.block(r0, 2 * d + h * dh, t_len, dh);
        const Matrix& pr = c.probs[b * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
        auto dO = datt.block(r0, h * dh, t_len, dh);
        Matrix dp = dO * v.transpose();
        dqkv.block(r0, 2 * d + h * dh, t_len, dh).noalias() = pr.transpose() * dO;
        Matrix ds = pr.cwiseProduct(dp);
        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rows = ds.rowwise().sum();
        ds -= (pr.array().colwise() * rows.array()).matrix();
        ds *= scale;
        dqkv.block(r0, h * dh, t_len, dh).noalias() = ds * k;
        dqkv.block(r0, d + h * dh, t_len, dh).noalias() = ds.transpose() * q;
      }
    }
    gmat(p + "attn.w").noalias() += c.h1.transpose() * dqkv;
    gvec(p + "attn.b") += dqkv.colwise().sum();
    Matrix dh1 = dqkv * mat(p + "attn.w").transpose();
    dx = dx_mid + layer_norm_backward<Scalar>(dh1, c.ln1, vec(p + "ln1.g"), gvec(p + "ln1.g"), gvec(p + "ln1.b"));
  }

  if (ws.dropout) dx.array() *= ws.mask_emb.array();
  auto g_wpe = gmat("wpe");
  for (Eigen::Index i = 0; i < n; ++i) {
    g_wte.row(tokens[static_cast<std::size_t>(i)]) += dx.row(i);
    g_wpe.row(i % t_len) += dx.row(i);
  }
}

template <typename Scalar>
Scalar TransformerLm<Scalar>::loss(std::span<const TokenId> tokens, std::size_t seq_len, std::vector<Scalar>* grad,
                                   Rng* dropout_rng) const {
  if (seq_len < 2) throw std::invalid_argument("loss needs sequences of length >= 2");
  if (tokens.size() % seq_len != 0) throw std::invalid_argument("token buffer is not a whole number of sequences");
  const std::size_t batch = tokens.size() / seq_len;
  Workspace ws;
  const Scalar value = run(tokens, batch, seq_len, ws, dropout_rng, true);
  if (grad) {
    AlignedVector g;
    backward(tokens, batch, seq_len, ws, g);
    grad->assign(g.begin(), g.end());
  }
  return value;
}

template <typename Scalar>
typename TransformerLm<Scalar>::Matrix TransformerLm<Scalar>::logits(std::span<const TokenId> tokens) const {
  Workspace ws;
  run(tokens, 1, tokens.size(), ws, nullptr, false);
  return ws.logits;
}

template <typename Scalar>
typename TransformerLm<Scalar>::Matrix TransformerLm<Scalar>::last_logits(std::span<const TokenId> tokens,
                                                                         std::size_t seq_len) const {
  if (seq_len == 0 || tokens.size() % seq_len != 0) throw std::invalid_argument("bad prompt batch");
  const std::size_t batch = tokens.size() / seq_len;
  Workspace ws;
  run(tokens, batch, seq_len, ws, nullptr, false);
  Matrix out(static_cast<Eigen::Index>(batch), ws.logits.cols());
  for (std::size_t b = 0; b < batch; ++b)
    out.row(static_cast<Eigen::Index>(b)) = ws.logits.row(static_cast<Eigen::Index>((b + 1) * seq_len - 1));
  return out;
}

template class TransformerLm<float>;
template class TransformerLm<double>;

LmTrainer::LmTrainer(TinyLm& model, TrainConfig config) : model_(&model), config_(config) {
  config_.validate();
  state_.m.assign(model.params().size(), 0.0f);
  state_.v.assign(model.params().size(), 0.0f);
}

void LmTrainer::apply_update(std::vector<float>& grad) {
  if (config_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const float g : grad) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) {
      const auto s = static_cast<float>(config_.clip_norm / norm);
      for (auto& g : grad) g *= s;
    }
  }
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const auto b1 = static_cast<float>(config_.beta1), b2 = static_cast<float>(config_.beta2);
  const auto c1 = static_cast<float>(1.0 / (1.0 - std::pow(config_.beta1, t)));
  const auto c2 = static_cast<float>(1.0 / (1.0 - std::pow(config_.beta2, t)));
  const auto lr = static_cast<float>(config_.learning_rate);
  const auto eps = static_cast<float>(config_.eps);
  const auto decay = static_cast<float>(1.0 - config_.learning_rate * config_.weight_decay);
  auto params = model_->params();
  for (const auto& s : model_->layout()) {
    for (std::size_t i = s.offset; i < s.offset + s.size(); ++i) {
      if (s.decay) params[i] *= decay;
      state_.m[i] = b1 * state_.m[i] + (1.0f - b1) * grad[i];
      state_.v[i] = b2 * state_.v[i] + (1.0f - b2) * grad[i] * grad[i];
      const float mhat = state_.m[i] * c1;
      const float vhat = state_.v[i] * c2;
      params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

std::vector<TrainLogRow> LmTrainer::train(const TokenCorpus& corpus, const std::function<void(const TrainLogRow&)>& on_step) {
  std::vector<TrainLogRow> log;
  if (config_.steps == 0) return log;
  if (corpus.chunk_count() == 0) throw DataError("training corpus is empty");
  if (corpus.chunk_len > model_->config().context_len)
    throw ConfigError("corpus chunk length exceeds the model context");

  Rng order_rng = stream_rng(config_.seed, 0);
  Rng dropout_rng = stream_rng(config_.seed, 1);
  std::vector<std::size_t> order(corpus.chunk_count());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  std::vector<TokenId> batch(config_.batch_size * corpus.chunk_len);
  std::vector<float> grad;
  log.reserve(config_.steps);
  for (std::size_t step = 1; step <= config_.steps; ++step) {
    for (std::size_t b = 0; b < config_.batch_size; ++b) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(order_rng, i)]);
        cursor = 0;
      }
      const auto chunk = corpus.chunk(order[cursor++]);
      std::copy(chunk.begin(), chunk.end(), batch.begin() + static_cast<std::ptrdiff_t>(b * corpus.chunk_len));
    }
    const float value = model_->loss(batch, corpus.chunk_len, &grad, &dropout_rng);
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "non-finite training loss at step " << step << " (learning rate " << config_.learning_rate << ")";
      throw NumericError(msg.str());
    }
    apply_update(grad);
    log.push_back({step, static_cast<double>(value)});
    if (on_step) on_step(log.back());
  }
  return log;
}

TinyLm train(const TinyLm& model, const TokenCorpus& corpus, const TrainConfig& config, std::vector<TrainLogRow>* log) {
  TinyLm copy = model;
  LmTrainer trainer(copy, config);
  auto rows = trainer.train(corpus);
  if (log) *log = std::move(rows);
  return copy;
}

std::vector<EntityDistribution> lm_entity_distributions(const TinyLm& model, const Vocabulary& vocab,
                                                        std::span<const std::pair<EntityId, RelationId>> queries) {
  std::vector<EntityDistribution> out;
  out.reserve(queries.size());
  constexpr std::size_t kBlock = 256;
  const auto entities = static_cast<Eigen::Index>(vocab.entity_count());
  for (std::size_t start = 0; start < queries.size(); start += kBlock) {
    const std::size_t end = std::min(queries.size(), start + kBlock);
    std::vector<TokenId> prompts;
    prompts.reserve(2 * (end - start));
    for (std::size_t i = start; i < end; ++i) {
      const auto p = make_query_prompt(vocab, queries[i].first, queries[i].second);
      prompts.insert(prompts.end(), p.begin(), p.end());
    }
    const auto logits = model.last_logits(prompts, 2);
    for (Eigen::Index row = 0; row < logits.rows(); ++row) {
      std::vector<double> ent(static_cast<std::size_t>(entities));
      for (Eigen::Index e = 0; e < entities; ++e) ent[static_cast<std::size_t>(e)] = logits(row, e);
      out.push_back({stable_softmax(ent), DistKind::kLm, 1.0});
    }
  }
  return out;
}

EntityDistribution lm_entity_distribution(const TinyLm& model, const Vocabulary& vocab, EntityId e1, RelationId r) {
  const std::pair<EntityId, RelationId> q{e1, r};
  return std::move(lm_entity_distributions(model, vocab, std::span(&q, 1)).front());
}

EntityId predict(const TinyLm& model, const Vocabulary& vocab, EntityId e1, RelationId r) {
  return lm_entity_distribution(model, vocab, e1, r).argmax();
}

namespace {

constexpr char kCkptMagic[4] = {'P', 'A', 'L', 'M'};
constexpr std::uint32_t kCkptVersion = 1;

nlohmann::json config_json(const LmConfig& c) {
  return {{"layers", c.layers},         {"heads", c.heads},         {"model_dim", c.model_dim},
          {"ff_dim", c.ff_dim},         {"context_len", c.context_len}, {"vocab_size", c.vocab_size},
          {"dropout", c.dropout},       {"seed", c.seed}};
}

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("truncated checkpoint");
  return v;
}

void put_floats(std::ostream& out, std::span<const float> v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

void get_floats(std::istream& in, std::span<float> v) {
  if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float))))
    throw DataError("truncated checkpoint");
}

}  // namespace

void save_checkpoint(const TinyLm& model, const AdamState& state, const std::filesystem::path& path,
                     const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  auto meta = config_json(model.config());
  if (!config_hash.empty()) meta["config_hash"] = config_hash;
  const std::string cfg = meta.dump();
  out.write(kCkptMagic, 4);
  put(out, kCkptVersion);
  put(out, static_cast<std::uint64_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put(out, static_cast<std::uint64_t>(model.params().size()));
  put_floats(out, model.params());
  put(out, state.step);
  std::vector<float> zeros;
  if (state.m.size() != model.params().size()) zeros.assign(model.params().size(), 0.0f);
  put_floats(out, state.m.size() == model.params().size() ? std::span<const float>(state.m) : zeros);
  put_floats(out, state.v.size() == model.params().size() ? std::span<const float>(state.v) : zeros);
}

TinyLm load_checkpoint(const std::filesystem::path& path, AdamState* state) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw DataError(path.string() + " is not a checkpoint");
  if (get<std::uint32_t>(in) != kCkptVersion) throw DataError("unsupported checkpoint version in " + path.string());
  std::string cfg(get<std::uint64_t>(in), '\0');
  if (!in.read(cfg.data(), static_cast<std::streamsize>(cfg.size()))) throw DataError("truncated checkpoint");
  const auto j = nlohmann::json::parse(cfg);
  LmConfig c;
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.model_dim = j.at("model_dim");
  c.ff_dim = j.at("ff_dim");
  c.context_len = j.at("context_len");
  c.vocab_size = j.at("vocab_size");
  c.dropout = j.at("dropout");
  c.seed = j.at("seed");
  TinyLm model(c);
  if (get<std::uint64_t>(in) != model.params().size()) throw DataError("checkpoint parameter count mismatch");
  get_floats(in, model.params());
  AdamState s;
  s.step = get<std::uint64_t>(in);
  s.m.resize(model.params().size());
  s.v.resize(model.params().size());
  get_floats(in, s.m);
  get_floats(in, s.v);
  if (state) *state = std::move(s);
  return model;
}

void write_train_log_csv(std::span<const TrainLogRow> log, const std::filesystem::path& path,
                         const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  if (!config_hash.empty()) out << "# config_hash=" << config_hash << '\n';
  out << "step,loss\n";
  char buf[64];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f\n", row.step, row.loss);
    out << buf;
  }
}

}  // namespace pathagg
