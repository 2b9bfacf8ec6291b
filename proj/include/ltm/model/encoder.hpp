#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ltm/model/parameters.hpp"

namespace ltm::model {

/// Fixed-shape batch: batch_size sequences of seq_len positions, row-major.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<int> ids;
  std::vector<int> segments;
  std::vector<int> attention;

  std::size_t rows() const { return batch_size * seq_len; }
  /// Throws InputError on ragged arrays or ids outside [0, vocab_size).
  void validate(const ModelConfig& config) const;
};

/// Single-sequence batch; segments default to 0 and attention to 1.
Batch make_batch(std::span<const int> ids, std::span<const int> segments = {}, std::span<const int> attention = {});

struct Dropout {
  double rate = 0.0;
  std::uint64_t seed = 0;
};

template <typename T>
struct LayerCache {
  Mat<T> input;
  Mat<T> q, k, v;
  /// softmax(QK^T / sqrt(d_h)), one (seq x seq) block per (sequence, head)
  std::vector<Mat<T>> probs;
  std::vector<Mat<T>> probs_dropout;  // keep-scale masks, empty without dropout
  Mat<T> context;
  Mat<T> attn_dropout;
  Mat<T> norm1_hat, norm1_rstd;
  Mat<T> norm1_out;
  Mat<T> ffn_pre;  // pre-activation of the inner layer
  Mat<T> ffn_act;
  Mat<T> ffn_dropout;
  Mat<T> norm2_hat, norm2_rstd;
};

template <typename T>
struct ForwardCache {
  Mat<T> embed_dropout;
  std::vector<LayerCache<T>> layers;
};

/// Encoder hidden states [rows x d_model]. Padding (attention 0) is excluded
/// from every attention row via an additive -inf. Dropout applies only when
/// `dropout` is non-null with a positive rate. A non-null cache records what
/// encoder_backward needs.
template <typename T>
Mat<T> encoder_forward(const Parameters<T>& params, const ModelConfig& config, const Batch& batch,
                       ForwardCache<T>* cache = nullptr, const Dropout* dropout = nullptr);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(hidden).
template <typename T>
void encoder_backward(const Parameters<T>& params, const ModelConfig& config, const Batch& batch,
                      const ForwardCache<T>& cache, const Mat<T>& d_hidden, Parameters<T>& grads);

/// MTM logits [rows x vocab] through the tied output projection.
template <typename T>
Mat<T> forward(const Parameters<T>& params, const ModelConfig& config, const Batch& batch);

double gelu(double x);
double gelu_derivative(double x);

extern template Mat<float> encoder_forward(const Parameters<float>&, const ModelConfig&, const Batch&,
                                           ForwardCache<float>*, const Dropout*);
extern template Mat<double> encoder_forward(const Parameters<double>&, const ModelConfig&, const Batch&,
                                            ForwardCache<double>*, const Dropout*);
extern template void encoder_backward(const Parameters<float>&, const ModelConfig&, const Batch&,
                                      const ForwardCache<float>&, const Mat<float>&, Parameters<float>&);
extern template void encoder_backward(const Parameters<double>&, const ModelConfig&, const Batch&,
                                      const ForwardCache<double>&, const Mat<double>&, Parameters<double>&);
extern template Mat<float> forward(const Parameters<float>&, const ModelConfig&, const Batch&);
extern template Mat<double> forward(const Parameters<double>&, const ModelConfig&, const Batch&);

}  // namespace ltm::model
