#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "ltm/model/config.hpp"

namespace ltm::model {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct LayerParams {
  Mat<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<T> ln1_gain, ln1_bias;
  Mat<T> w1, b1, w2, b2;
  Mat<T> ln2_gain, ln2_bias;

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "attention.query.weight", self.wq);
    f(prefix + "attention.query.bias", self.bq);
    f(prefix + "attention.key.weight", self.wk);
    f(prefix + "attention.key.bias", self.bk);
    f(prefix + "attention.value.weight", self.wv);
    f(prefix + "attention.value.bias", self.bv);
    f(prefix + "attention.output.weight", self.wo);
    f(prefix + "attention.output.bias", self.bo);
    f(prefix + "attention.norm.gain", self.ln1_gain);
    f(prefix + "attention.norm.bias", self.ln1_bias);
    f(prefix + "ffn.in.weight", self.w1);
    f(prefix + "ffn.in.bias", self.b1);
    f(prefix + "ffn.out.weight", self.w2);
    f(prefix + "ffn.out.bias", self.b2);
    f(prefix + "ffn.norm.gain", self.ln2_gain);
    f(prefix + "ffn.norm.bias", self.ln2_bias);
  }
};

/// Encoder weights plus the masked-trajectory-modeling output bias. The
/// output projection is the transposed token embedding.
template <typename T>
struct Parameters {
  Mat<T> token_embedding;     // vocab x d
  Mat<T> position_embedding;  // max_len x d
  Mat<T> segment_embedding;   // 2 x d
  std::vector<LayerParams<T>> layers;
  Mat<T> mtm_bias;  // 1 x vocab

  static Parameters zeros(const ModelConfig& config);

  /// Visits (name, matrix) in a fixed order; the order is the checkpoint order.
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  void set_zero();
  std::size_t count() const;
  bool all_finite() const;

  template <typename U>
  Parameters<U> cast() const;

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f(std::string("embeddings.token"), self.token_embedding);
    f(std::string("embeddings.position"), self.position_embedding);
    f(std::string("embeddings.segment"), self.segment_embedding);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      LayerParams<T>::visit(self.layers[l], "layer" + std::to_string(l) + ".", f);
    }
    f(std::string("mtm.bias"), self.mtm_bias);
  }
};

/// Biases and normalization parameters are excluded from weight decay.
bool decays(std::string_view name);

/// Truncated normal(0, 0.02) at +-2 sigma; norm gains 1, biases 0.
Parameters<float> init_params(const ModelConfig& config, std::uint64_t seed);

extern template struct Parameters<float>;
extern template struct Parameters<double>;

}  // namespace ltm::model
