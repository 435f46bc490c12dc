#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "kblab/rng.hpp"
#include "kblab/vocab.hpp"

namespace kblab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ModelConfig {
  int d_model = 128;
  int n_layers = 2;
  int n_heads = 4;
  int max_seq_len = 64;
  int vocab_size = 0;

  int head_dim() const { return d_model / n_heads; }
  int d_ff() const { return 4 * d_model; }

  void validate() const {
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || max_seq_len <= 0) {
      throw std::invalid_argument("ModelConfig: sizes must be positive");
    }
    if (d_model % n_heads != 0) {
      throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
    }
    if (vocab_size < Vocab::kNumSpecials + 1) {
      throw std::invalid_argument("ModelConfig: vocab_size too small");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

// Pre-norm causal decoder weights. Attention projections are bias-free; the
// output projection is weight-tied to the token embedding. Row vectors
// (norm scales, biases) are kept as 1 x d matrices so every tensor shares
// one type for visitation, IO and the optimizer.
struct LayerParams {
  MatrixXd wq, wk, wv, wo;          // d x d, applied as y = x * w
  MatrixXd ln1_scale, ln1_offset;   // 1 x d
  MatrixXd ln2_scale, ln2_offset;   // 1 x d
  MatrixXd ff1, ff2;                // d x 4d, 4d x d
  MatrixXd ff1_bias, ff2_bias;      // 1 x 4d, 1 x d
};

struct Parameters {
  MatrixXd tok_emb;  // V x d; doubles as the tied output projection
  MatrixXd pos_emb;  // max_seq_len x d
  std::vector<LayerParams> layers;
  MatrixXd final_scale, final_offset;  // 1 x d

  static Parameters zeros(const ModelConfig& cfg) {
    cfg.validate();
    Parameters p;
    p.tok_emb = MatrixXd::Zero(cfg.vocab_size, cfg.d_model);
    p.pos_emb = MatrixXd::Zero(cfg.max_seq_len, cfg.d_model);
    p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& l : p.layers) {
      l.wq = MatrixXd::Zero(cfg.d_model, cfg.d_model);
      l.wk = MatrixXd::Zero(cfg.d_model, cfg.d_model);
      l.wv = MatrixXd::Zero(cfg.d_model, cfg.d_model);
      l.wo = MatrixXd::Zero(cfg.d_model, cfg.d_model);
      l.ln1_scale = MatrixXd::Zero(1, cfg.d_model);
      l.ln1_offset = MatrixXd::Zero(1, cfg.d_model);
      l.ln2_scale = MatrixXd::Zero(1, cfg.d_model);
      l.ln2_offset = MatrixXd::Zero(1, cfg.d_model);
      l.ff1 = MatrixXd::Zero(cfg.d_model, cfg.d_ff());
      l.ff1_bias = MatrixXd::Zero(1, cfg.d_ff());
      l.ff2 = MatrixXd::Zero(cfg.d_ff(), cfg.d_model);
      l.ff2_bias = MatrixXd::Zero(1, cfg.d_model);
    }
    p.final_scale = MatrixXd::Zero(1, cfg.d_model);
    p.final_offset = MatrixXd::Zero(1, cfg.d_model);
    return p;
  }

  // Scaled Gaussian init (std 0.02) for embeddings and projections, ones for
  // norm scales, zeros for offsets and biases. Draw order is the visitation
  // order, so a seed pins every weight.
  static Parameters init(const ModelConfig& cfg, std::uint64_t seed);
};

struct TensorRef {
  std::string name;
  MatrixXd* tensor;
};

inline std::vector<TensorRef> tensor_refs(Parameters& p) {
  std::vector<TensorRef> refs;
  refs.push_back({"tok_emb", &p.tok_emb});
  refs.push_back({"pos_emb", &p.pos_emb});
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    refs.push_back({prefix + "wq", &l.wq});
    refs.push_back({prefix + "wk", &l.wk});
    refs.push_back({prefix + "wv", &l.wv});
    refs.push_back({prefix + "wo", &l.wo});
    refs.push_back({prefix + "ln1_scale", &l.ln1_scale});
    refs.push_back({prefix + "ln1_offset", &l.ln1_offset});
    refs.push_back({prefix + "ff1", &l.ff1});
    refs.push_back({prefix + "ff1_bias", &l.ff1_bias});
    refs.push_back({prefix + "ff2", &l.ff2});
    refs.push_back({prefix + "ff2_bias", &l.ff2_bias});
    refs.push_back({prefix + "ln2_scale", &l.ln2_scale});
    refs.push_back({prefix + "ln2_offset", &l.ln2_offset});
  }
  refs.push_back({"final_scale", &p.final_scale});
  refs.push_back({"final_offset", &p.final_offset});
  return refs;
}

inline std::vector<TensorRef> tensor_refs(const Parameters& p) {
  return tensor_refs(const_cast<Parameters&>(p));
}

inline Parameters Parameters::init(const ModelConfig& cfg, std::uint64_t seed) {
  Parameters p = zeros(cfg);
  Rng rng(seed);
  for (auto& ref : tensor_refs(p)) {
    const bool is_scale = ref.name.find("scale") != std::string::npos;
    const bool is_offset_or_bias = ref.name.find("offset") != std::string::npos ||
                                   ref.name.find("bias") != std::string::npos;
    if (is_scale) {
      ref.tensor->setOnes();
    } else if (is_offset_or_bias) {
      ref.tensor->setZero();
    } else {
      double* data = ref.tensor->data();
      for (Eigen::Index i = 0; i < ref.tensor->size(); ++i) data[i] = 0.02 * rng.normal();
    }
  }
  return p;
}

inline void throw_if_nonfinite(const Parameters& p, const char* what) {
  for (const auto& ref : tensor_refs(p)) {
    if (!ref.tensor->allFinite()) {
      throw std::runtime_error(std::string(what) + ": non-finite values in tensor " + ref.name);
    }
  }
}

// One training sequence: [BOS] prompt target [EOS], shifted into
// input/target pairs. The loss mask selects exactly the target tokens plus
// the terminating EOS.
struct EncodedSample {
  std::vector<int> input;
  std::vector<int> target;
  std::vector<std::uint8_t> mask;
  std::size_t dataset_index = 0;

  std::size_t length() const { return input.size(); }
};

inline EncodedSample make_sample(const Vocab& vocab, std::string_view prompt,
                                 std::string_view target_text, std::size_t dataset_index,
                                 int max_seq_len) {
  std::vector<int> seq;
  seq.push_back(Vocab::kBos);
  for (int id : vocab.encode(prompt)) seq.push_back(id);
  const std::size_t prompt_len = seq.size();
  for (int id : vocab.encode(target_text)) seq.push_back(id);
  seq.push_back(Vocab::kEos);

  if (seq.size() - 1 > static_cast<std::size_t>(max_seq_len)) {
    throw std::runtime_error("sequence of length " + std::to_string(seq.size() - 1) +
                             " exceeds max_seq_len " + std::to_string(max_seq_len));
  }
  EncodedSample s;
  s.dataset_index = dataset_index;
  s.input.assign(seq.begin(), seq.end() - 1);
  s.target.assign(seq.begin() + 1, seq.end());
  s.mask.resize(s.input.size());
  for (std::size_t i = 0; i < s.mask.size(); ++i) {
    s.mask[i] = i + 1 >= prompt_len ? 1 : 0;
  }
  return s;
}

using Batch = std::vector<EncodedSample>;

namespace detail {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC0 * (x + kGeluC1 * x * x * x)));
}

inline double gelu_grad(double x) {
  const double t = std::tanh(kGeluC0 * (x + kGeluC1 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC0 * (1.0 + 3.0 * kGeluC1 * x * x);
}

// Ragged batch flattened into one row-per-position matrix.
struct Pack {
  std::vector<int> tokens;
  std::vector<int> positions;
  std::vector<int> row_offset;  // per sequence
  std::vector<int> seq_len;     // per sequence
  int rows = 0;
};

inline Pack build_pack(const std::vector<const std::vector<int>*>& sequences, int max_seq_len) {
  Pack pack;
  pack.row_offset.reserve(sequences.size());
  pack.seq_len.reserve(sequences.size());
  for (const auto* seq : sequences) {
    if (seq->empty()) throw std::runtime_error("forward: empty sequence");
    if (seq->size() > static_cast<std::size_t>(max_seq_len)) {
      throw std::runtime_error("forward: sequence of length " + std::to_string(seq->size()) +
                               " exceeds max_seq_len " + std::to_string(max_seq_len));
    }
    pack.row_offset.push_back(pack.rows);
    pack.seq_len.push_back(static_cast<int>(seq->size()));
    for (std::size_t p = 0; p < seq->size(); ++p) {
      pack.tokens.push_back((*seq)[p]);
      pack.positions.push_back(static_cast<int>(p));
    }
    pack.rows += static_cast<int>(seq->size());
  }
  return pack;
}

struct LayerCache {
  MatrixXd xhat1, a_in;  // N x d
  VectorXd rstd1;        // N
  MatrixXd q, k, v;      // N x d
  std::vector<MatrixXd> attn;  // per (sequence, head): T x T softmax rows
  MatrixXd attn_concat;  // N x d, pre output-projection
  MatrixXd xhat2, b_in;  // N x d
  VectorXd rstd2;
  MatrixXd ff_pre, ff_act;  // N x 4d
};

struct ForwardCache {
  Pack pack;
  std::vector<LayerCache> layers;
  MatrixXd xhat_f;  // N x d
  VectorXd rstd_f;
  MatrixXd hidden;  // N x d, final normed states
};

struct LnResult {
  MatrixXd xhat, out;
  VectorXd rstd;
};

inline LnResult layer_norm(const MatrixXd& x, const MatrixXd& scale, const MatrixXd& offset) {
  LnResult r;
  const VectorXd mean = x.rowwise().mean();
  MatrixXd centered = x.colwise() - mean;
  const VectorXd var = centered.array().square().rowwise().mean();
  r.rstd = (var.array() + kLnEps).rsqrt();
  r.xhat = centered.array().colwise() * r.rstd.array();
  r.out = (r.xhat.array().rowwise() * scale.row(0).array()).rowwise() + offset.row(0).array();
  return r;
}

// Backward through y = xhat * scale + offset given dy; accumulates parameter
// grads and returns dx.
inline MatrixXd layer_norm_backward(const MatrixXd& dy, const MatrixXd& xhat, const VectorXd& rstd,
                                    const MatrixXd& scale, MatrixXd& dscale, MatrixXd& doffset) {
  dscale.row(0).array() += (dy.array() * xhat.array()).colwise().sum();
  doffset.row(0).array() += dy.array().colwise().sum();
  const MatrixXd dxhat = dy.array().rowwise() * scale.row(0).array();
  const VectorXd mean_dxhat = dxhat.rowwise().mean();
  const VectorXd mean_dxhat_xhat = (dxhat.array() * xhat.array()).rowwise().mean();
  MatrixXd dx = dxhat;
  dx.colwise() -= mean_dxhat;
  dx.array() -= xhat.array().colwise() * mean_dxhat_xhat.array();
  dx.array().colwise() *= rstd.array();
  return dx;
}

inline ForwardCache forward_pack(const Parameters& p, const ModelConfig& cfg, Pack pack) {
  ForwardCache cache;
  cache.pack = std::move(pack);
  const Pack& pk = cache.pack;
  const int n = pk.rows;
  const int d = cfg.d_model;
  const int dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  MatrixXd x(n, d);
  for (int r = 0; r < n; ++r) {
    x.row(r) = p.tok_emb.row(pk.tokens[static_cast<std::size_t>(r)]) +
               p.pos_emb.row(pk.positions[static_cast<std::size_t>(r)]);
  }

  cache.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (int li = 0; li < cfg.n_layers; ++li) {
    const LayerParams& lp = p.layers[static_cast<std::size_t>(li)];
    LayerCache& lc = cache.layers[static_cast<std::size_t>(li)];

    LnResult ln1 = layer_norm(x, lp.ln1_scale, lp.ln1_offset);
    lc.xhat1 = std::move(ln1.xhat);
    lc.rstd1 = std::move(ln1.rstd);
    lc.a_in = std::move(ln1.out);

    lc.q.noalias() = lc.a_in * lp.wq;
    lc.k.noalias() = lc.a_in * lp.wk;
    lc.v.noalias() = lc.a_in * lp.wv;

    lc.attn.resize(pk.row_offset.size() * static_cast<std::size_t>(cfg.n_heads));
    lc.attn_concat.resize(n, d);
    for (std::size_t s = 0; s < pk.row_offset.size(); ++s) {
      const int r0 = pk.row_offset[s];
      const int t = pk.seq_len[s];
      for (int h = 0; h < cfg.n_heads; ++h) {
        auto qh = lc.q.block(r0, h * dh, t, dh);
        auto kh = lc.k.block(r0, h * dh, t, dh);
        auto vh = lc.v.block(r0, h * dh, t, dh);
        MatrixXd scores = qh * kh.transpose() * inv_sqrt_dh;
        MatrixXd probs = MatrixXd::Zero(t, t);
        for (int i = 0; i < t; ++i) {
          double m = scores(i, 0);
          for (int j = 1; j <= i; ++j) m = std::max(m, scores(i, j));
          double z = 0.0;
          for (int j = 0; j <= i; ++j) {
            probs(i, j) = std::exp(scores(i, j) - m);
            z += probs(i, j);
          }
          for (int j = 0; j <= i; ++j) probs(i, j) /= z;
        }
        lc.attn_concat.block(r0, h * dh, t, dh).noalias() = probs * vh;
        lc.attn[s * static_cast<std::size_t>(cfg.n_heads) + static_cast<std::size_t>(h)] =
            std::move(probs);
      }
    }
    x.noalias() += lc.attn_concat * lp.wo;

    LnResult ln2 = layer_norm(x, lp.ln2_scale, lp.ln2_offset);
    lc.xhat2 = std::move(ln2.xhat);
    lc.rstd2 = std::move(ln2.rstd);
    lc.b_in = std::move(ln2.out);

    lc.ff_pre.noalias() = lc.b_in * lp.ff1;
    lc.ff_pre.array().rowwise() += lp.ff1_bias.row(0).array();
    lc.ff_act = lc.ff_pre.unaryExpr([](double v) { return gelu(v); });
    x.noalias() += lc.ff_act * lp.ff2;
    x.array().rowwise() += lp.ff2_bias.row(0).array();
  }

  LnResult lnf = layer_norm(x, p.final_scale, p.final_offset);
  cache.xhat_f = std::move(lnf.xhat);
  cache.rstd_f = std::move(lnf.rstd);
  cache.hidden = std::move(lnf.out);
  return cache;
}

// Backpropagate d(hidden) through the stack, accumulating into grads.
inline void backward_pack(const Parameters& p, const ModelConfig& cfg, const ForwardCache& cache,
                          const MatrixXd& dhidden, Parameters& grads) {
  const Pack& pk = cache.pack;
  const int dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  MatrixXd dx = layer_norm_backward(dhidden, cache.xhat_f, cache.rstd_f, p.final_scale,
                                    grads.final_scale, grads.final_offset);

  for (int li = cfg.n_layers - 1; li >= 0; --li) {
    const LayerParams& lp = p.layers[static_cast<std::size_t>(li)];
    const LayerCache& lc = cache.layers[static_cast<std::size_t>(li)];
    LayerParams& lg = grads.layers[static_cast<std::size_t>(li)];

    // feed-forward block
    const MatrixXd& dff_out = dx;  // gradient wrt ff2 output (residual branch)
    lg.ff2.noalias() += lc.ff_act.transpose() * dff_out;
    lg.ff2_bias.row(0).array() += dff_out.array().colwise().sum();
    MatrixXd dff_act = dff_out * lp.ff2.transpose();
    MatrixXd dff_pre =
        dff_act.array() * lc.ff_pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
    lg.ff1.noalias() += lc.b_in.transpose() * dff_pre;
    lg.ff1_bias.row(0).array() += dff_pre.array().colwise().sum();
    MatrixXd db_in = dff_pre * lp.ff1.transpose();
    dx += layer_norm_backward(db_in, lc.xhat2, lc.rstd2, lp.ln2_scale, lg.ln2_scale, lg.ln2_offset);

    // attention block
    const MatrixXd& dattn_out = dx;
    lg.wo.noalias() += lc.attn_concat.transpose() * dattn_out;
    MatrixXd dconcat = dattn_out * lp.wo.transpose();

    MatrixXd dq = MatrixXd::Zero(pk.rows, cfg.d_model);
    MatrixXd dk = MatrixXd::Zero(pk.rows, cfg.d_model);
    MatrixXd dv = MatrixXd::Zero(pk.rows, cfg.d_model);
    for (std::size_t s = 0; s < pk.row_offset.size(); ++s) {
      const int r0 = pk.row_offset[s];
      const int t = pk.seq_len[s];
      for (int h = 0; h < cfg.n_heads; ++h) {
        const MatrixXd& probs =
            lc.attn[s * static_cast<std::size_t>(cfg.n_heads) + static_cast<std::size_t>(h)];
        auto qh = lc.q.block(r0, h * dh, t, dh);
        auto kh = lc.k.block(r0, h * dh, t, dh);
        auto vh = lc.v.block(r0, h * dh, t, dh);
        auto dout_h = dconcat.block(r0, h * dh, t, dh);

        dv.block(r0, h * dh, t, dh).noalias() += probs.transpose() * dout_h;
        MatrixXd dprobs = dout_h * vh.transpose();
        MatrixXd dscores(t, t);
        for (int i = 0; i < t; ++i) {
          double dot = 0.0;
          for (int j = 0; j <= i; ++j) dot += dprobs(i, j) * probs(i, j);
          for (int j = 0; j < t; ++j) {
            dscores(i, j) = j <= i ? probs(i, j) * (dprobs(i, j) - dot) : 0.0;
          }
        }
        dq.block(r0, h * dh, t, dh).noalias() += dscores * kh * inv_sqrt_dh;
        dk.block(r0, h * dh, t, dh).noalias() += dscores.transpose() * qh * inv_sqrt_dh;
      }
    }
    lg.wq.noalias() += lc.a_in.transpose() * dq;
    lg.wk.noalias() += lc.a_in.transpose() * dk;
    lg.wv.noalias() += lc.a_in.transpose() * dv;
    MatrixXd da_in = dq * lp.wq.transpose();
    da_in.noalias() += dk * lp.wk.transpose();
    da_in.noalias() += dv * lp.wv.transpose();
    dx += layer_norm_backward(da_in, lc.xhat1, lc.rstd1, lp.ln1_scale, lg.ln1_scale, lg.ln1_offset);
  }

  for (int r = 0; r < pk.rows; ++r) {
    grads.tok_emb.row(pk.tokens[static_cast<std::size_t>(r)]) += dx.row(r);
    grads.pos_emb.row(pk.positions[static_cast<std::size_t>(r)]) += dx.row(r);
  }
}

}  // namespace detail

// Full logits for every input position of one sequence; position t can only
// see positions <= t.
inline MatrixXd forward_logits(const Parameters& p, const ModelConfig& cfg,
                               const std::vector<int>& input_tokens) {
  cfg.validate();
  detail::ForwardCache cache =
      detail::forward_pack(p, cfg, detail::build_pack({&input_tokens}, cfg.max_seq_len));
  return cache.hidden * p.tok_emb.transpose();
}

struct LossResult {
  std::vector<double> per_sample;
  double mean = 0.0;
};

namespace detail {

// Shared loss core: stable log-softmax cross-entropy over masked rows only.
// When grads is non-null the backward pass runs too (d mean-loss / d params).
inline LossResult loss_impl(const Parameters& p, const ModelConfig& cfg, const Batch& batch,
                            Parameters* grads) {
  if (batch.empty()) throw std::invalid_argument("loss: empty batch");
  std::vector<const std::vector<int>*> sequences;
  sequences.reserve(batch.size());
  for (const auto& s : batch) {
    if (s.input.size() != s.target.size() || s.input.size() != s.mask.size()) {
      throw std::invalid_argument("loss: inconsistent sample vectors");
    }
    bool any = false;
    for (auto m : s.mask) any = any || m != 0;
    if (!any) throw std::invalid_argument("loss: sample has an all-zero mask");
    sequences.push_back(&s.input);
  }

  ForwardCache cache = forward_pack(p, cfg, build_pack(sequences, cfg.max_seq_len));
  const Pack& pk = cache.pack;

  std::vector<int> masked_rows;
  std::vector<int> masked_sample;
  std::vector<int> masked_target;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const int r0 = pk.row_offset[s];
    for (std::size_t i = 0; i < batch[s].mask.size(); ++i) {
      if (!batch[s].mask[i]) continue;
      masked_rows.push_back(r0 + static_cast<int>(i));
      masked_sample.push_back(static_cast<int>(s));
      masked_target.push_back(batch[s].target[i]);
    }
  }
  const int m = static_cast<int>(masked_rows.size());

  MatrixXd hm(m, cfg.d_model);
  for (int r = 0; r < m; ++r) hm.row(r) = cache.hidden.row(masked_rows[static_cast<std::size_t>(r)]);
  MatrixXd logits = hm * p.tok_emb.transpose();

  LossResult result;
  result.per_sample.assign(batch.size(), 0.0);
  MatrixXd dlogits;
  if (grads) dlogits.resize(m, cfg.vocab_size);

  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (int r = 0; r < m; ++r) {
    const int y = masked_target[static_cast<std::size_t>(r)];
    const double mx = logits.row(r).maxCoeff();
    double z = 0.0;
    for (int v = 0; v < cfg.vocab_size; ++v) z += std::exp(logits(r, v) - mx);
    const double lse = mx + std::log(z);
    result.per_sample[static_cast<std::size_t>(masked_sample[static_cast<std::size_t>(r)])] +=
        lse - logits(r, y);
    if (grads) {
      for (int v = 0; v < cfg.vocab_size; ++v) {
        dlogits(r, v) = std::exp(logits(r, v) - lse) * inv_batch;
      }
      dlogits(r, y) -= inv_batch;
    }
  }
  for (double v : result.per_sample) result.mean += v;
  result.mean *= inv_batch;

  if (grads) {
    grads->tok_emb.noalias() += dlogits.transpose() * hm;
    MatrixXd dhm = dlogits * p.tok_emb;
    MatrixXd dhidden = MatrixXd::Zero(pk.rows, cfg.d_model);
    for (int r = 0; r < m; ++r) {
      dhidden.row(masked_rows[static_cast<std::size_t>(r)]) = dhm.row(r);
    }
    backward_pack(p, cfg, cache, dhidden, *grads);
    throw_if_nonfinite(*grads, "gradients");
  }
  return result;
}

}  // namespace detail

// Per-sample losses are sums over that sample's masked target tokens (object
// tokens plus EOS); the mean over the batch is what the optimizer steps on.
inline LossResult loss(const Parameters& p, const ModelConfig& cfg, const Batch& batch) {
  return detail::loss_impl(p, cfg, batch, nullptr);
}

struct GradResult {
  LossResult loss;
  Parameters grads;
};

// Exact reverse-mode gradients of the mean batch loss.
inline GradResult loss_and_gradients(const Parameters& p, const ModelConfig& cfg,
                                     const Batch& batch) {
  GradResult r{LossResult{}, Parameters::zeros(cfg)};
  r.loss = detail::loss_impl(p, cfg, batch, &r.grads);
  return r;
}

// Greedy continuation for a batch of prompts: argmax next token (ties break
// to the lowest id) until EOS or max_new tokens, decoded without specials.
inline std::vector<std::string> generate_greedy_batch(const Parameters& p, const ModelConfig& cfg,
                                                      const Vocab& vocab,
                                                      const std::vector<std::string>& prompts,
                                                      int max_new) {
  cfg.validate();
  if (max_new < 0) throw std::invalid_argument("generate: max_new must be >= 0");
  std::vector<std::vector<int>> tokens(prompts.size());
  std::vector<std::vector<int>> generated(prompts.size());
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    tokens[i].push_back(Vocab::kBos);
    for (int id : vocab.encode(prompts[i])) tokens[i].push_back(id);
    if (static_cast<long>(tokens[i].size()) > static_cast<long>(cfg.max_seq_len) - max_new) {
      throw std::runtime_error("generate: prompt of " + std::to_string(tokens[i].size()) +
                               " tokens does not fit max_seq_len " +
                               std::to_string(cfg.max_seq_len) + " minus max_new " +
                               std::to_string(max_new));
    }
    if (max_new > 0) active.push_back(i);
  }

  for (int round = 0; round < max_new && !active.empty(); ++round) {
    std::vector<const std::vector<int>*> sequences;
    sequences.reserve(active.size());
    for (std::size_t i : active) sequences.push_back(&tokens[i]);
    detail::ForwardCache cache =
        detail::forward_pack(p, cfg, detail::build_pack(sequences, cfg.max_seq_len));

    MatrixXd last(static_cast<Eigen::Index>(active.size()), cfg.d_model);
    for (std::size_t s = 0; s < active.size(); ++s) {
      last.row(static_cast<Eigen::Index>(s)) =
          cache.hidden.row(cache.pack.row_offset[s] + cache.pack.seq_len[s] - 1);
    }
    MatrixXd logits = last * p.tok_emb.transpose();

    std::vector<std::size_t> still_active;
    for (std::size_t s = 0; s < active.size(); ++s) {
      int best = 0;
      for (int v = 1; v < cfg.vocab_size; ++v) {
        if (logits(static_cast<Eigen::Index>(s), v) > logits(static_cast<Eigen::Index>(s), best)) {
          best = v;
        }
      }
      const std::size_t i = active[s];
      if (best == Vocab::kEos) continue;
      tokens[i].push_back(best);
      generated[i].push_back(best);
      still_active.push_back(i);
    }
    active = std::move(still_active);
  }

  std::vector<std::string> out(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) out[i] = vocab.decode(generated[i]);
  return out;
}

inline std::string generate_greedy(const Parameters& p, const ModelConfig& cfg, const Vocab& vocab,
                                   const std::string& prompt, int max_new) {
  return generate_greedy_batch(p, cfg, vocab, {prompt}, max_new)[0];
}

}  // namespace kblab
