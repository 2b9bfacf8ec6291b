#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ltm/masking.hpp"
#include "ltm/model/heads.hpp"
#include "ltm/model/optimizer.hpp"

namespace ltm::model {

struct TrainState {
  ModelConfig config;
  Parameters<float> params;
  AdamW optimizer;
  std::uint64_t seed = 0;

  static TrainState fresh(const ModelConfig& config, std::uint64_t seed, AdamWConfig adam = {});
  std::int64_t step() const { return optimizer.steps(); }
};

/// Stacks masked chunks into one batch, trimmed to the longest attended
/// prefix in the batch (trailing padding only changes pad rows).
Batch make_mtm_batch(std::span<const masking::MaskedChunk> chunks, std::vector<int>& labels);

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

/// Forward, backward and one AdamW update on a batch of masked chunks.
/// Throws TrainingError (with step, loss and norm) when the loss is not finite.
StepResult train_step(TrainState& state, std::span<const masking::MaskedChunk> batch, double lr, double clip_norm,
                      double dropout_rate);

/// Gradients of the mean masked loss for one batch (no update). Dropout off
/// when dropout_rate is 0.
template <typename T>
double mtm_gradients(const Parameters<T>& params, const ModelConfig& config, const Batch& batch,
                     std::span<const int> labels, Parameters<T>& grads, double loss_scale = 1.0,
                     const Dropout* dropout = nullptr);

/// exp(total masked cross-entropy / total masked positions).
double perplexity(const Parameters<float>& params, const ModelConfig& config,
                  std::span<const masking::MaskedChunk> dataset, std::size_t batch_size = 64);

struct PretrainSchedule {
  int epochs = 10;
  std::size_t batch_size = 64;
  double peak_lr = 1e-4;
  double warmup_fraction = 0.05;
  double clip_norm = 1.0;
};

/// step, epoch, split, loss, perplexity
struct MetricRow {
  std::int64_t step;
  int epoch;
  std::string split;
  double loss;
  double perplexity;

  std::string csv() const;
};

inline constexpr std::string_view kMetricsHeader = "step,epoch,split,loss,perplexity";

/// Runs the pre-training loop. Epoch 0 rows hold the pre-training
/// validation perplexity. Returns every emitted row.
std::vector<MetricRow> pretrain(TrainState& state, std::span<const masking::MaskedChunk> train,
                                std::span<const masking::MaskedChunk> validation, const PretrainSchedule& schedule,
                                const std::function<void(const MetricRow&)>& on_metric = {});

}  // namespace ltm::model
