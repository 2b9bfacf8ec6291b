#include "ltm/model/optimizer.hpp"

#include <cmath>

#include "ltm/error.hpp"

namespace ltm::model {

std::vector<ParamRef> param_refs(Parameters<float>& params, Parameters<float>& grads) {
  std::vector<ParamRef> refs;
  params.for_each([&](const std::string& name, Mat<float>& m) { refs.push_back({name, &m, nullptr}); });
  std::size_t i = 0;
  grads.for_each([&](const std::string&, Mat<float>& m) { refs[i++].grad = &m; });
  return refs;
}

double global_norm(std::span<const ParamRef> params) {
  double sq = 0.0;
  for (const auto& p : params) sq += p.grad->template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

double AdamW::step(std::span<const ParamRef> params, double lr, double clip_norm) {
  const double norm = global_norm(params);
  if (!std::isfinite(norm)) {
    throw TrainingError("non-finite gradient norm at optimizer step " + std::to_string(steps_));
  }
  const double clip_scale = clip_norm > 0.0 && norm > clip_norm ? clip_norm / norm : 1.0;
  ++steps_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double step_size = lr / bias1;
  const double inv_sqrt_bias2 = 1.0 / std::sqrt(bias2);

  for (const auto& p : params) {
    auto [it, inserted] = moments_.try_emplace(p.name);
    auto& mo = it->second;
    if (inserted || mo.first.rows() != p.value->rows() || mo.first.cols() != p.value->cols()) {
      mo.first = Mat<float>::Zero(p.value->rows(), p.value->cols());
      mo.second = Mat<float>::Zero(p.value->rows(), p.value->cols());
    }
    const bool decay = decays(p.name) && config_.weight_decay > 0.0;
    float* w = p.value->data();
    const float* g = p.grad->data();
    float* m = mo.first.data();
    float* v = mo.second.data();
    const Eigen::Index n = p.value->size();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double gi = static_cast<double>(g[i]) * clip_scale;
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      double wi = w[i];
      if (decay) wi -= lr * config_.weight_decay * wi;
      wi -= step_size * mi / (std::sqrt(vi) * inv_sqrt_bias2 + config_.eps);
      w[i] = static_cast<float>(wi);
    }
  }
  return norm;
}

double LinearSchedule::at(std::int64_t step) const {
  const auto total = std::max<std::int64_t>(1, total_steps);
  const auto warmup = static_cast<std::int64_t>(std::ceil(warmup_fraction * static_cast<double>(total)));
  if (warmup > 0 && step < warmup) return peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double remaining = static_cast<double>(total - step) / static_cast<double>(std::max<std::int64_t>(1, total - warmup));
  return peak_lr * std::clamp(remaining, 0.0, 1.0);
}

}  // namespace ltm::model
