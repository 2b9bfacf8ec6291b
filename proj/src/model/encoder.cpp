#include "ltm/model/encoder.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <unsupported/Eigen/SpecialFunctions>

#include "ltm/error.hpp"
#include "ltm/rng.hpp"

namespace ltm::model {

void Batch::validate(const ModelConfig& config) const {
  const std::size_t n = rows();
  if (ids.size() != n || segments.size() != n || attention.size() != n) {
    throw InputError("batch arrays must all hold batch_size * seq_len entries");
  }
  if (seq_len == 0 || seq_len > config.max_len) {
    throw InputError("sequence length " + std::to_string(seq_len) + " exceeds max_len " +
                     std::to_string(config.max_len));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= config.vocab_size) {
      throw InputError("token id " + std::to_string(ids[i]) + " out of range for vocab_size " +
                       std::to_string(config.vocab_size));
    }
    if (segments[i] < 0 || static_cast<std::size_t>(segments[i]) >= config.n_segments) {
      throw InputError("segment id out of range");
    }
  }
}

Batch make_batch(std::span<const int> ids, std::span<const int> segments, std::span<const int> attention) {
  Batch b;
  b.batch_size = 1;
  b.seq_len = ids.size();
  b.ids.assign(ids.begin(), ids.end());
  b.segments = segments.empty() ? std::vector<int>(ids.size(), 0) : std::vector<int>(segments.begin(), segments.end());
  b.attention =
      attention.empty() ? std::vector<int>(ids.size(), 1) : std::vector<int>(attention.begin(), attention.end());
  return b;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

namespace {

template <typename T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, const Dropout& d, std::uint64_t site) {
  Rng rng(derive_seed(d.seed, site));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - d.rate));
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < d.rate ? T(0) : keep_scale;
  return m;
}

// Row-wise layer norm; returns output and records normalized input and 1/std.
template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& gain, const Mat<T>& bias, double eps, Mat<T>& hat, Mat<T>& rstd) {
  const T inv_d = T(1) / static_cast<T>(x.cols());
  const Eigen::Array<T, Eigen::Dynamic, 1> mean = x.rowwise().sum().array() * inv_d;
  hat = (x.array().colwise() - mean).matrix();
  rstd = ((hat.array().square().rowwise().sum() * inv_d + static_cast<T>(eps)).rsqrt()).matrix();
  hat.array().colwise() *= rstd.col(0).array();
  Mat<T> y = (hat.array().rowwise() * gain.row(0).array()).matrix();
  y.rowwise() += bias.row(0);
  return y;
}

template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& hat, const Mat<T>& rstd, const Mat<T>& gain,
                           Mat<T>& d_gain, Mat<T>& d_bias) {
  const T d = static_cast<T>(dy.cols());
  d_gain += (dy.array() * hat.array()).colwise().sum().matrix();
  d_bias += dy.colwise().sum();
  const Mat<T> dhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
  const Eigen::Array<T, Eigen::Dynamic, 1> sum_dhat = dhat.rowwise().sum().array();
  const Eigen::Array<T, Eigen::Dynamic, 1> sum_dhat_hat = (dhat.array() * hat.array()).rowwise().sum();
  Mat<T> dx = ((d * dhat.array()).colwise() - sum_dhat).matrix();
  dx.array() -= hat.array().colwise() * sum_dhat_hat;
  dx.array().colwise() *= rstd.col(0).array() / d;
  return dx;
}

template <typename T>
Mat<T> gelu_mat(const Mat<T>& x) {
  const auto a = x.array();
  return (T(0.5) * a * (T(1) + (a * static_cast<T>(1.0 / std::numbers::sqrt2)).erf())).matrix();
}

template <typename T>
Mat<T> gelu_derivative_mat(const Mat<T>& x) {
  const auto a = x.array();
  return (T(0.5) * (T(1) + (a * static_cast<T>(1.0 / std::numbers::sqrt2)).erf()) +
          a * static_cast<T>(0.3989422804014327) * (T(-0.5) * a.square()).exp())
      .matrix();
}

template <typename T>
void add_row(Mat<T>& m, const Mat<T>& row) {
  m.rowwise() += row.row(0);
}

enum Site : std::uint64_t { kEmbedSite = 0, kProbSite = 1, kAttnSite = 2, kFfnSite = 3 };

std::uint64_t site_id(std::size_t layer, Site s) { return 1 + 8 * static_cast<std::uint64_t>(layer) + s; }

}  // namespace

template <typename T>
Mat<T> encoder_forward(const Parameters<T>& params, const ModelConfig& config, const Batch& batch,
                       ForwardCache<T>* cache, const Dropout* dropout) {
  batch.validate(config);
  const bool drop = dropout != nullptr && dropout->rate > 0.0;
  const auto S = static_cast<Eigen::Index>(batch.seq_len);
  const auto B = static_cast<Eigen::Index>(batch.batch_size);
  const auto N = B * S;
  const auto D = static_cast<Eigen::Index>(config.d_model);
  const auto H = static_cast<Eigen::Index>(config.n_heads);
  const auto dh = static_cast<Eigen::Index>(config.head_dim());
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Mat<T> x(N, D);
  for (Eigen::Index r = 0; r < N; ++r) {
    const auto i = static_cast<std::size_t>(r);
    x.row(r) = params.token_embedding.row(batch.ids[i]) + params.position_embedding.row(r % S) +
               params.segment_embedding.row(batch.segments[i]);
  }
  if (cache) {
    cache->layers.clear();
    cache->layers.resize(params.layers.size());
    cache->embed_dropout.resize(0, 0);
  }
  if (drop) {
    Mat<T> m = dropout_mask<T>(N, D, *dropout, site_id(0, kEmbedSite));
    x.array() *= m.array();
    if (cache) cache->embed_dropout = std::move(m);
  }

  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& p = params.layers[l];
    LayerCache<T> local;
    LayerCache<T>& c = cache ? cache->layers[l] : local;
    c.input = x;
    c.q.noalias() = x * p.wq;
    add_row(c.q, p.bq);
    c.k.noalias() = x * p.wk;
    add_row(c.k, p.bk);
    c.v.noalias() = x * p.wv;
    add_row(c.v, p.bv);

    c.context.resize(N, D);
    c.probs.assign(static_cast<std::size_t>(B * H), Mat<T>());
    c.probs_dropout.clear();
    if (drop) c.probs_dropout.resize(static_cast<std::size_t>(B * H));
    Rng prob_rng(derive_seed(drop ? dropout->seed : 0, site_id(l, kProbSite)));
    const T keep_scale = drop ? static_cast<T>(1.0 / (1.0 - dropout->rate)) : T(1);

    for (Eigen::Index b = 0; b < B; ++b) {
      const std::size_t base = static_cast<std::size_t>(b * S);
      for (Eigen::Index h = 0; h < H; ++h) {
        Mat<T> scores = c.q.block(b * S, h * dh, S, dh) * c.k.block(b * S, h * dh, S, dh).transpose();
        scores *= scale;
        for (Eigen::Index j = 0; j < S; ++j) {
          if (batch.attention[base + static_cast<std::size_t>(j)] == 0) {
            scores.col(j).setConstant(-std::numeric_limits<T>::infinity());
          }
        }
        for (Eigen::Index i = 0; i < S; ++i) {
          const T mx = scores.row(i).maxCoeff();
          if (!std::isfinite(mx)) {
            scores.row(i).setZero();
            continue;
          }
          scores.row(i) = (scores.row(i).array() - mx).exp();
          scores.row(i) /= scores.row(i).sum();
        }
        const auto slot = static_cast<std::size_t>(b * H + h);
        if (drop) {
          Mat<T> m(S, S);
          for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = prob_rng.uniform() < dropout->rate ? T(0) : keep_scale;
          }
          c.context.block(b * S, h * dh, S, dh).noalias() =
              scores.cwiseProduct(m) * c.v.block(b * S, h * dh, S, dh);
          c.probs_dropout[slot] = std::move(m);
        } else {
          c.context.block(b * S, h * dh, S, dh).noalias() = scores * c.v.block(b * S, h * dh, S, dh);
        }
        c.probs[slot] = std::move(scores);
      }
    }

    Mat<T> attn = c.context * p.wo;
    add_row(attn, p.bo);
    if (drop) {
      c.attn_dropout = dropout_mask<T>(N, D, *dropout, site_id(l, kAttnSite));
      attn.array() *= c.attn_dropout.array();
    }
    c.norm1_out = layer_norm<T>(x + attn, p.ln1_gain, p.ln1_bias, config.layernorm_eps, c.norm1_hat, c.norm1_rstd);

    c.ffn_pre.noalias() = c.norm1_out * p.w1;
    add_row(c.ffn_pre, p.b1);
    c.ffn_act = gelu_mat(c.ffn_pre);
    Mat<T> ffn = c.ffn_act * p.w2;
    add_row(ffn, p.b2);
    if (drop) {
      c.ffn_dropout = dropout_mask<T>(N, D, *dropout, site_id(l, kFfnSite));
      ffn.array() *= c.ffn_dropout.array();
    }
    x = layer_norm<T>(c.norm1_out + ffn, p.ln2_gain, p.ln2_bias, config.layernorm_eps, c.norm2_hat, c.norm2_rstd);
  }
  return x;
}

template <typename T>
void encoder_backward(const Parameters<T>& params, const ModelConfig& config, const Batch& batch,
                      const ForwardCache<T>& cache, const Mat<T>& d_hidden, Parameters<T>& grads) {
  const auto S = static_cast<Eigen::Index>(batch.seq_len);
  const auto B = static_cast<Eigen::Index>(batch.batch_size);
  const auto N = B * S;
  const auto H = static_cast<Eigen::Index>(config.n_heads);
  const auto dh = static_cast<Eigen::Index>(config.head_dim());
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  if (cache.layers.size() != params.layers.size()) throw InputError("forward cache does not match parameters");

  Mat<T> dx = d_hidden;
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& p = params.layers[li];
    auto& g = grads.layers[li];
    const auto& c = cache.layers[li];

    // ffn block
    Mat<T> d_res2 = layer_norm_backward<T>(dx, c.norm2_hat, c.norm2_rstd, p.ln2_gain, g.ln2_gain, g.ln2_bias);
    Mat<T> d_ffn = d_res2;
    if (c.ffn_dropout.size() > 0) d_ffn.array() *= c.ffn_dropout.array();
    g.w2.noalias() += c.ffn_act.transpose() * d_ffn;
    g.b2 += d_ffn.colwise().sum();
    Mat<T> d_pre = d_ffn * p.w2.transpose();
    d_pre.array() *= gelu_derivative_mat(c.ffn_pre).array();
    g.w1.noalias() += c.norm1_out.transpose() * d_pre;
    g.b1 += d_pre.colwise().sum();
    Mat<T> d_norm1 = d_res2;
    d_norm1.noalias() += d_pre * p.w1.transpose();

    // attention block
    Mat<T> d_res1 = layer_norm_backward<T>(d_norm1, c.norm1_hat, c.norm1_rstd, p.ln1_gain, g.ln1_gain, g.ln1_bias);
    Mat<T> d_attn = d_res1;
    if (c.attn_dropout.size() > 0) d_attn.array() *= c.attn_dropout.array();
    g.wo.noalias() += c.context.transpose() * d_attn;
    g.bo += d_attn.colwise().sum();
    Mat<T> d_context = d_attn * p.wo.transpose();

    Mat<T> dq(N, d_context.cols()), dk(N, d_context.cols()), dv(N, d_context.cols());
    for (Eigen::Index b = 0; b < B; ++b) {
      for (Eigen::Index h = 0; h < H; ++h) {
        const auto slot = static_cast<std::size_t>(b * H + h);
        const Mat<T>& probs = c.probs[slot];
        const auto dctx = d_context.block(b * S, h * dh, S, dh);
        Mat<T> d_probs = dctx * c.v.block(b * S, h * dh, S, dh).transpose();
        if (!c.probs_dropout.empty()) {
          const Mat<T>& m = c.probs_dropout[slot];
          dv.block(b * S, h * dh, S, dh).noalias() = probs.cwiseProduct(m).transpose() * dctx;
          d_probs.array() *= m.array();
        } else {
          dv.block(b * S, h * dh, S, dh).noalias() = probs.transpose() * dctx;
        }
        // softmax backward: dS = P * (dP - rowsum(dP * P))
        const auto row_dot = (d_probs.array() * probs.array()).rowwise().sum().eval();
        Mat<T> d_scores = (probs.array() * (d_probs.array().colwise() - row_dot)).matrix();
        d_scores *= scale;
        dq.block(b * S, h * dh, S, dh).noalias() = d_scores * c.k.block(b * S, h * dh, S, dh);
        dk.block(b * S, h * dh, S, dh).noalias() = d_scores.transpose() * c.q.block(b * S, h * dh, S, dh);
      }
    }
    g.wq.noalias() += c.input.transpose() * dq;
    g.bq += dq.colwise().sum();
    g.wk.noalias() += c.input.transpose() * dk;
    g.bk += dk.colwise().sum();
    g.wv.noalias() += c.input.transpose() * dv;
    g.bv += dv.colwise().sum();

    dx = d_res1;
    dx.noalias() += dq * p.wq.transpose();
    dx.noalias() += dk * p.wk.transpose();
    dx.noalias() += dv * p.wv.transpose();
  }

  if (cache.embed_dropout.size() > 0) dx.array() *= cache.embed_dropout.array();
  for (Eigen::Index r = 0; r < N; ++r) {
    const auto i = static_cast<std::size_t>(r);
    grads.token_embedding.row(batch.ids[i]) += dx.row(r);
    grads.position_embedding.row(r % S) += dx.row(r);
    grads.segment_embedding.row(batch.segments[i]) += dx.row(r);
  }
}

template <typename T>
Mat<T> forward(const Parameters<T>& params, const ModelConfig& config, const Batch& batch) {
  const Mat<T> hidden = encoder_forward(params, config, batch);
  Mat<T> logits = hidden * params.token_embedding.transpose();
  logits.rowwise() += params.mtm_bias.row(0);
  return logits;
}

template Mat<float> encoder_forward(const Parameters<float>&, const ModelConfig&, const Batch&, ForwardCache<float>*,
                                    const Dropout*);
template Mat<double> encoder_forward(const Parameters<double>&, const ModelConfig&, const Batch&,
                                     ForwardCache<double>*, const Dropout*);
template void encoder_backward(const Parameters<float>&, const ModelConfig&, const Batch&, const ForwardCache<float>&,
                               const Mat<float>&, Parameters<float>&);
template void encoder_backward(const Parameters<double>&, const ModelConfig&, const Batch&,
                               const ForwardCache<double>&, const Mat<double>&, Parameters<double>&);
template Mat<float> forward(const Parameters<float>&, const ModelConfig&, const Batch&);
template Mat<double> forward(const Parameters<double>&, const ModelConfig&, const Batch&);

}  // namespace ltm::model
