#include "ltm/model/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "ltm/error.hpp"
#include "ltm/rng.hpp"

namespace ltm::model {

TrainState TrainState::fresh(const ModelConfig& config, std::uint64_t seed, AdamWConfig adam) {
  return TrainState{config, init_params(config, seed), AdamW(adam), seed};
}

Batch make_mtm_batch(std::span<const masking::MaskedChunk> chunks, std::vector<int>& labels) {
  if (chunks.empty()) throw InputError("empty batch");
  std::size_t len = 1;
  for (const auto& c : chunks) {
    for (std::size_t i = c.attention_mask.size(); i > 0; --i) {
      if (c.attention_mask[i - 1] != 0) {
        len = std::max(len, i);
        break;
      }
    }
  }
  Batch b;
  b.batch_size = chunks.size();
  b.seq_len = len;
  labels.clear();
  for (const auto& c : chunks) {
    if (c.input_ids.size() < len) throw InputError("chunk shorter than batch length");
    b.ids.insert(b.ids.end(), c.input_ids.begin(), c.input_ids.begin() + static_cast<std::ptrdiff_t>(len));
    b.attention.insert(b.attention.end(), c.attention_mask.begin(),
                       c.attention_mask.begin() + static_cast<std::ptrdiff_t>(len));
    labels.insert(labels.end(), c.labels.begin(), c.labels.begin() + static_cast<std::ptrdiff_t>(len));
  }
  b.segments.assign(b.ids.size(), 0);
  return b;
}

template <typename T>
double mtm_gradients(const Parameters<T>& params, const ModelConfig& config, const Batch& batch,
                     std::span<const int> labels, Parameters<T>& grads, double loss_scale, const Dropout* dropout) {
  ForwardCache<T> cache;
  const Mat<T> hidden = encoder_forward(params, config, batch, &cache, dropout);
  Mat<T> d_hidden;
  const LossSum loss = mtm_head(params, hidden, labels, &grads, &d_hidden, loss_scale);
  if (loss.count == 0) throw InputError("batch has no labeled positions");
  encoder_backward(params, config, batch, cache, d_hidden, grads);
  return loss.total / static_cast<double>(loss.count);
}

template double mtm_gradients(const Parameters<float>&, const ModelConfig&, const Batch&, std::span<const int>,
                              Parameters<float>&, double, const Dropout*);
template double mtm_gradients(const Parameters<double>&, const ModelConfig&, const Batch&, std::span<const int>,
                              Parameters<double>&, double, const Dropout*);

StepResult train_step(TrainState& state, std::span<const masking::MaskedChunk> chunks, double lr, double clip_norm,
                      double dropout_rate) {
  std::vector<int> labels;
  const Batch batch = make_mtm_batch(chunks, labels);
  auto grads = Parameters<float>::zeros(state.config);
  const Dropout dropout{dropout_rate, derive_seed(state.seed, 0xd00d0000ULL + static_cast<std::uint64_t>(state.step()))};
  const double loss = mtm_gradients(state.params, state.config, batch, labels, grads, 1.0, &dropout);
  if (!std::isfinite(loss)) {
    throw TrainingError("non-finite loss " + std::to_string(loss) + " at step " + std::to_string(state.step()) +
                        " (batch of " + std::to_string(chunks.size()) + " chunks, grad norm " +
                        std::to_string(global_norm(param_refs(state.params, grads))) + ")");
  }
  const auto refs = param_refs(state.params, grads);
  const double norm = state.optimizer.step(refs, lr, clip_norm);
  return {loss, norm, lr};
}

double perplexity(const Parameters<float>& params, const ModelConfig& config,
                  std::span<const masking::MaskedChunk> dataset, std::size_t batch_size) {
  if (dataset.empty()) throw InputError("perplexity needs a non-empty dataset");
  double total = 0.0;
  std::size_t count = 0;
  std::vector<int> labels;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    const auto slice = dataset.subspan(start, std::min(batch_size, dataset.size() - start));
    const Batch batch = make_mtm_batch(slice, labels);
    const Mat<float> hidden = encoder_forward(params, config, batch);
    const LossSum loss = mtm_head(params, hidden, labels);
    total += loss.total;
    count += loss.count;
  }
  if (count == 0) throw InputError("dataset has no labeled positions");
  return std::exp(total / static_cast<double>(count));
}

std::string MetricRow::csv() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%lld,%d,%s,%.6f,%.6f", static_cast<long long>(step), epoch, split.c_str(), loss,
                perplexity);
  return buf;
}

std::vector<MetricRow> pretrain(TrainState& state, std::span<const masking::MaskedChunk> train,
                                std::span<const masking::MaskedChunk> validation, const PretrainSchedule& schedule,
                                const std::function<void(const MetricRow&)>& on_metric) {
  if (train.empty() || validation.empty()) throw InputError("pre-training needs train and validation chunks");
  if (schedule.batch_size == 0 || schedule.epochs < 0) throw ConfigError("invalid pre-training schedule");
  std::vector<MetricRow> rows;
  auto emit = [&](MetricRow row) {
    if (on_metric) on_metric(row);
    rows.push_back(std::move(row));
  };
  auto validate = [&](int epoch) {
    const double ppl = perplexity(state.params, state.config, validation, schedule.batch_size);
    emit({state.step(), epoch, "validation", std::log(ppl), ppl});
  };

  const std::size_t batches_per_epoch = (train.size() + schedule.batch_size - 1) / schedule.batch_size;
  const LinearSchedule lr{schedule.peak_lr,
                          static_cast<std::int64_t>(batches_per_epoch) * schedule.epochs + state.step(),
                          schedule.warmup_fraction};
  validate(0);

  std::vector<std::size_t> order(train.size());
  std::vector<masking::MaskedChunk> batch;
  for (int epoch = 1; epoch <= schedule.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(state.seed, 0xe90c0000ULL + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      batch.clear();
      for (std::size_t i = b * schedule.batch_size; i < std::min(train.size(), (b + 1) * schedule.batch_size); ++i) {
        batch.push_back(train[order[i]]);
      }
      const auto r = train_step(state, batch, lr.at(state.step()), schedule.clip_norm, state.config.dropout_rate);
      loss_sum += r.loss;
    }
    const double mean_loss = loss_sum / static_cast<double>(batches_per_epoch);
    emit({state.step(), epoch, "train", mean_loss, std::exp(mean_loss)});
    validate(epoch);
  }
  return rows;
}

}  // namespace ltm::model
