#include "ltm/model/parameters.hpp"

#include "ltm/rng.hpp"

namespace ltm::model {

template <typename T>
Parameters<T> Parameters<T>::zeros(const ModelConfig& c) {
  const auto d = static_cast<Eigen::Index>(c.d_model);
  const auto ff = static_cast<Eigen::Index>(c.d_ff);
  Parameters p;
  p.token_embedding = Mat<T>::Zero(static_cast<Eigen::Index>(c.vocab_size), d);
  p.position_embedding = Mat<T>::Zero(static_cast<Eigen::Index>(c.max_len), d);
  p.segment_embedding = Mat<T>::Zero(static_cast<Eigen::Index>(c.n_segments), d);
  p.layers.resize(c.n_layers);
  for (auto& l : p.layers) {
    l.wq = l.wk = l.wv = l.wo = Mat<T>::Zero(d, d);
    l.bq = l.bk = l.bv = l.bo = Mat<T>::Zero(1, d);
    l.ln1_gain = l.ln2_gain = Mat<T>::Zero(1, d);
    l.ln1_bias = l.ln2_bias = Mat<T>::Zero(1, d);
    l.w1 = Mat<T>::Zero(d, ff);
    l.b1 = Mat<T>::Zero(1, ff);
    l.w2 = Mat<T>::Zero(ff, d);
    l.b2 = Mat<T>::Zero(1, d);
  }
  p.mtm_bias = Mat<T>::Zero(1, static_cast<Eigen::Index>(c.vocab_size));
  return p;
}

template <typename T>
void Parameters<T>::set_zero() {
  for_each([](const std::string&, Mat<T>& m) { m.setZero(); });
}

template <typename T>
std::size_t Parameters<T>::count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Mat<T>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <typename T>
bool Parameters<T>::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Mat<T>& m) { ok = ok && m.allFinite(); });
  return ok;
}

template <typename T>
template <typename U>
Parameters<U> Parameters<T>::cast() const {
  Parameters<U> out;
  out.layers.resize(layers.size());
  std::vector<Mat<U>*> targets;
  out.for_each([&](const std::string&, Mat<U>& m) { targets.push_back(&m); });
  std::size_t i = 0;
  for_each([&](const std::string&, const Mat<T>& m) { *targets[i++] = m.template cast<U>(); });
  return out;
}

bool decays(std::string_view name) {
  return !(name.ends_with(".bias") || name.find(".norm.") != std::string_view::npos);
}

Parameters<float> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  auto p = Parameters<float>::zeros(config);
  Rng rng(derive_seed(seed, 0x1417));
  p.for_each([&](const std::string& name, Mat<float>& m) {
    if (name.ends_with(".gain")) {
      m.setOnes();
    } else if (decays(name)) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(0.02 * rng.truncated_normal(2.0));
    }
  });
  return p;
}

template struct Parameters<float>;
template struct Parameters<double>;
template Parameters<double> Parameters<float>::cast<double>() const;
template Parameters<float> Parameters<double>::cast<float>() const;
template Parameters<float> Parameters<float>::cast<float>() const;

}  // namespace ltm::model
