#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ltm/model/parameters.hpp"

namespace ltm::model {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// A trainable tensor and its gradient buffer.
struct ParamRef {
  std::string name;
  Mat<float>* value;
  Mat<float>* grad;
};

/// Adaptive-moment optimizer with decoupled weight decay and global-norm
/// clipping. Moments are keyed by parameter name.
class AdamW {
 public:
  struct Moments {
    Mat<float> first;
    Mat<float> second;
  };

  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  /// Clips the joint gradient to clip_norm (if positive), applies one update,
  /// and returns the pre-clip global norm. Throws TrainingError on a
  /// non-finite gradient norm.
  double step(std::span<const ParamRef> params, double lr, double clip_norm);

  std::int64_t steps() const noexcept { return steps_; }
  void set_steps(std::int64_t s) noexcept { steps_ = s; }
  const AdamWConfig& config() const noexcept { return config_; }
  std::map<std::string, Moments>& moments() noexcept { return moments_; }
  const std::map<std::string, Moments>& moments() const noexcept { return moments_; }

 private:
  AdamWConfig config_;
  std::int64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

std::vector<ParamRef> param_refs(Parameters<float>& params, Parameters<float>& grads);

/// Global L2 norm over all gradient buffers, accumulated in double.
double global_norm(std::span<const ParamRef> params);

/// Linear warmup over warmup_fraction of total_steps, then linear decay to 0.
struct LinearSchedule {
  double peak_lr = 1e-4;
  std::int64_t total_steps = 1;
  double warmup_fraction = 0.05;

  double at(std::int64_t step) const;
};

}  // namespace ltm::model
