#include "ltm/model/heads.hpp"

#include <cmath>

#include "ltm/error.hpp"
#include "ltm/masking.hpp"
#include "ltm/rng.hpp"

namespace ltm::model {

namespace {

// log-softmax probability of `target` in row r, and the softmax row itself.
template <typename T>
double row_cross_entropy(const Mat<T>& logits, Eigen::Index r, int target, Eigen::VectorXd* softmax = nullptr) {
  const double mx = static_cast<double>(logits.row(r).maxCoeff());
  double sum = 0.0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) sum += std::exp(static_cast<double>(logits(r, j)) - mx);
  const double lse = mx + std::log(sum);
  if (softmax) {
    softmax->resize(logits.cols());
    for (Eigen::Index j = 0; j < logits.cols(); ++j) (*softmax)(j) = std::exp(static_cast<double>(logits(r, j)) - lse);
  }
  return lse - static_cast<double>(logits(r, target));
}

}  // namespace

template <typename T>
double mtm_loss(const Mat<T>& logits, std::span<const int> labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) throw InputError("logits/labels row mismatch");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == masking::kIgnoreLabel) continue;
    if (labels[i] < 0 || labels[i] >= logits.cols()) throw InputError("label outside vocabulary");
    total += row_cross_entropy(logits, static_cast<Eigen::Index>(i), labels[i]);
    ++count;
  }
  if (count == 0) throw InputError("mtm_loss needs at least one labeled position");
  return total / static_cast<double>(count);
}

template <typename T>
LossSum mtm_head(const Parameters<T>& params, const Mat<T>& hidden, std::span<const int> labels, Parameters<T>* grads,
                 Mat<T>* d_hidden, double loss_scale, double normalizer) {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != masking::kIgnoreLabel) rows.push_back(static_cast<Eigen::Index>(i));
  }
  LossSum out;
  if (rows.empty()) return out;
  const auto M = static_cast<Eigen::Index>(rows.size());
  Mat<T> selected(M, hidden.cols());
  for (Eigen::Index m = 0; m < M; ++m) selected.row(m) = hidden.row(rows[static_cast<std::size_t>(m)]);
  Mat<T> logits = selected * params.token_embedding.transpose();
  logits.rowwise() += params.mtm_bias.row(0);

  const bool backward = grads != nullptr;
  Mat<T> d_logits;
  if (backward) d_logits.resize(M, logits.cols());
  const double coef = loss_scale / (normalizer > 0 ? normalizer : static_cast<double>(M));
  Eigen::VectorXd softmax;
  for (Eigen::Index m = 0; m < M; ++m) {
    const int target = labels[static_cast<std::size_t>(rows[static_cast<std::size_t>(m)])];
    if (target < 0 || target >= logits.cols()) throw InputError("label outside vocabulary");
    out.total += row_cross_entropy(logits, m, target, backward ? &softmax : nullptr);
    if (backward) {
      softmax(target) -= 1.0;
      d_logits.row(m) = (softmax * coef).template cast<T>().transpose();
    }
  }
  out.count = static_cast<std::size_t>(M);
  if (backward) {
    grads->token_embedding.noalias() += d_logits.transpose() * selected;
    grads->mtm_bias += d_logits.colwise().sum();
    if (d_hidden) {
      d_hidden->setZero(hidden.rows(), hidden.cols());
      Mat<T> d_sel = d_logits * params.token_embedding;
      for (Eigen::Index m = 0; m < M; ++m) d_hidden->row(rows[static_cast<std::size_t>(m)]) += d_sel.row(m);
    }
  }
  return out;
}

ClassifierHead ClassifierHead::init(std::size_t d_model, std::size_t n_classes, std::uint64_t seed) {
  if (n_classes < 2) throw InputError("classifier needs at least two classes");
  ClassifierHead h;
  h.weight.resize(static_cast<Eigen::Index>(d_model), static_cast<Eigen::Index>(n_classes));
  h.bias = Mat<float>::Zero(1, static_cast<Eigen::Index>(n_classes));
  Rng rng(derive_seed(seed, 0x4ead));
  for (Eigen::Index i = 0; i < h.weight.size(); ++i) h.weight.data()[i] = static_cast<float>(0.02 * rng.truncated_normal(2.0));
  return h;
}

ClassifierOutput classifier_head(const ClassifierHead& head, const Mat<float>& hidden, std::size_t seq_len,
                                 std::span<const int> labels, ClassifierHead* grads, Mat<float>* d_hidden) {
  const auto B = static_cast<Eigen::Index>(labels.size());
  const auto S = static_cast<Eigen::Index>(seq_len);
  if (hidden.rows() != B * S) throw InputError("hidden rows do not match batch");
  Mat<float> cls(B, hidden.cols());
  for (Eigen::Index b = 0; b < B; ++b) cls.row(b) = hidden.row(b * S);
  ClassifierOutput out;
  out.logits = cls * head.weight;
  out.logits.rowwise() += head.bias.row(0);

  Mat<float> d_logits;
  if (grads) d_logits.resize(B, out.logits.cols());
  Eigen::VectorXd softmax;
  for (Eigen::Index b = 0; b < B; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= out.logits.cols()) throw InputError("class label out of range");
    out.loss.total += row_cross_entropy(out.logits, b, y, grads ? &softmax : nullptr);
    if (grads) {
      softmax(y) -= 1.0;
      d_logits.row(b) = (softmax / static_cast<double>(B)).cast<float>().transpose();
    }
  }
  out.loss.count = static_cast<std::size_t>(B);
  if (grads) {
    grads->weight.noalias() += cls.transpose() * d_logits;
    grads->bias += d_logits.colwise().sum();
    if (d_hidden) {
      d_hidden->setZero(hidden.rows(), hidden.cols());
      Mat<float> d_cls = d_logits * head.weight.transpose();
      for (Eigen::Index b = 0; b < B; ++b) d_hidden->row(b * S) = d_cls.row(b);
    }
  }
  return out;
}

template double mtm_loss(const Mat<float>&, std::span<const int>);
template double mtm_loss(const Mat<double>&, std::span<const int>);
template LossSum mtm_head(const Parameters<float>&, const Mat<float>&, std::span<const int>, Parameters<float>*,
                          Mat<float>*, double, double);
template LossSum mtm_head(const Parameters<double>&, const Mat<double>&, std::span<const int>, Parameters<double>*,
                          Mat<double>*, double, double);

}  // namespace ltm::model
