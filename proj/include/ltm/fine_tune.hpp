#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ltm/model/heads.hpp"
#include "ltm/tasks.hpp"

namespace ltm::tasks {

struct FineTuneConfig {
  int epochs = 10;
  std::size_t batch_size = 64;
  double peak_lr = 5e-5;
  double warmup_fraction = 0.05;
  double clip_norm = 1.0;
  double train_fraction = 0.8;
  /// Train the classifier head only, on fixed (dropout-free) encoder features.
  bool freeze_encoder = false;
};

/// epoch, task, split, loss, f1
struct FineTuneMetric {
  int epoch;
  std::string task;
  std::string split;
  double loss;
  double f1;

  std::string csv() const;
};

inline constexpr std::string_view kFineTuneMetricsHeader = "epoch,task,split,loss,f1";

struct StratifiedSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Per-class seeded shuffle; floor(fraction * n_c) of each class to train.
StratifiedSplit stratified_split(const TaskDataset& data, double fraction, std::uint64_t seed);

struct FineTuneResult {
  model::Parameters<float> params;
  model::ClassifierHead head;
  std::vector<FineTuneMetric> metrics;
  double validation_f1 = 0.0;
  double train_accuracy = 0.0;
  std::int64_t steps = 0;
};

/// Full fine-tuning of encoder and [CLS] head. Data order, dropout masks and
/// head initialization depend only on `seed`, so two runs that differ in
/// `initial` see bit-identical batches. Throws TrainingError on a non-finite
/// loss.
FineTuneResult fine_tune(const model::ModelConfig& config, model::Parameters<float> initial, const TaskDataset& data,
                         const FineTuneConfig& ft, std::uint64_t seed,
                         const std::function<void(const FineTuneMetric&)>& on_metric = {});

/// Validation-set predictions of a tuned model.
std::vector<int> predict(const model::ModelConfig& config, const model::Parameters<float>& params,
                         const model::ClassifierHead& head, const TaskDataset& data,
                         std::span<const std::size_t> indices, std::size_t batch_size, double* loss = nullptr);

struct CompareReport {
  std::string task;
  double random_f1 = 0.0;
  double pretrained_f1 = 0.0;
  double gap = 0.0;
  std::size_t examples = 0;
  std::int64_t steps_per_arm = 0;
};

nlohmann::json to_json(const CompareReport& r);

/// Fine-tunes from random weights and from `pretrained` on identical data
/// and seed; reports validation macro F1 of both arms.
CompareReport compare_inits(const model::ModelConfig& config, const model::Parameters<float>& pretrained,
                            const TaskDataset& data, const FineTuneConfig& ft, std::uint64_t seed,
                            const std::function<void(const std::string& arm, const FineTuneMetric&)>& on_metric = {});

}  // namespace ltm::tasks
