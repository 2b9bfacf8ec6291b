#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ltm/model/encoder.hpp"

namespace ltm::model {

/// Mean natural-log cross-entropy over rows whose label is not ignore_label,
/// accumulated in double with a stabilized log-sum-exp. Throws InputError
/// when no row is labeled.
template <typename T>
double mtm_loss(const Mat<T>& logits, std::span<const int> labels);

struct LossSum {
  double total = 0.0;  // summed cross-entropy
  std::size_t count = 0;
};

/// Tied-projection MTM head evaluated only at labeled rows. With `grads`
/// non-null, accumulates head gradients and returns d(loss)/d(hidden) where
/// loss = loss_scale * total / normalizer.
template <typename T>
LossSum mtm_head(const Parameters<T>& params, const Mat<T>& hidden, std::span<const int> labels,
                 Parameters<T>* grads = nullptr, Mat<T>* d_hidden = nullptr, double loss_scale = 1.0,
                 double normalizer = 0.0);

/// Linear classifier over the first-position ([CLS]) encoder output.
struct ClassifierHead {
  Mat<float> weight;  // d_model x n_classes
  Mat<float> bias;    // 1 x n_classes

  static ClassifierHead init(std::size_t d_model, std::size_t n_classes, std::uint64_t seed);
  std::size_t n_classes() const { return static_cast<std::size_t>(weight.cols()); }
};

struct ClassifierOutput {
  LossSum loss;
  Mat<float> logits;  // batch_size x n_classes
};

/// Cross-entropy over one label per sequence. With grads non-null, fills
/// d_hidden (rows x d_model, zero except first positions) for mean loss.
ClassifierOutput classifier_head(const ClassifierHead& head, const Mat<float>& hidden, std::size_t seq_len,
                                 std::span<const int> labels, ClassifierHead* grads = nullptr,
                                 Mat<float>* d_hidden = nullptr);

extern template double mtm_loss(const Mat<float>&, std::span<const int>);
extern template double mtm_loss(const Mat<double>&, std::span<const int>);
extern template LossSum mtm_head(const Parameters<float>&, const Mat<float>&, std::span<const int>,
                                 Parameters<float>*, Mat<float>*, double, double);
extern template LossSum mtm_head(const Parameters<double>&, const Mat<double>&, std::span<const int>,
                                 Parameters<double>*, Mat<double>*, double, double);

}  // namespace ltm::model
