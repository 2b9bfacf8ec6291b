#include "ltm/fine_tune.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "json.hpp"

#include "ltm/error.hpp"
#include "ltm/metrics.hpp"
#include "ltm/model/optimizer.hpp"
#include "ltm/rng.hpp"

namespace ltm::tasks {

using model::Mat;

std::string FineTuneMetric::csv() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%s,%s,%.6f,%.6f", epoch, task.c_str(), split.c_str(), loss, f1);
  return buf;
}

StratifiedSplit stratified_split(const TaskDataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw InputError("train fraction must be in (0, 1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.examples.size(); ++i) by_class[data.examples[i].label].push_back(i);
  StratifiedSplit out;
  for (auto& [label, idx] : by_class) {
    Rng rng(derive_seed(seed, 0x57a7000ULL + static_cast<std::uint64_t>(label)));
    rng.shuffle(std::span(idx));
    auto n_train = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size())));
    if (idx.size() >= 2) n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.validation.insert(out.validation.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  return out;
}

namespace {

model::Batch make_task_batch(const TaskDataset& data, std::span<const std::size_t> indices,
                             const model::ModelConfig& config, std::vector<int>& labels) {
  std::vector<std::vector<int>> ids(indices.size()), segments(indices.size());
  std::size_t len = 1;
  labels.clear();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& e = data.examples[indices[k]];
    e.pack(ids[k], segments[k]);
    if (ids[k].size() > config.max_len) {
      throw InputError("packed example of " + std::to_string(ids[k].size()) + " tokens exceeds max_len");
    }
    len = std::max(len, ids[k].size());
    labels.push_back(e.label);
  }
  model::Batch b;
  b.batch_size = indices.size();
  b.seq_len = len;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t pad = len - ids[k].size();
    b.ids.insert(b.ids.end(), ids[k].begin(), ids[k].end());
    b.ids.insert(b.ids.end(), pad, tok::kPadId);
    b.segments.insert(b.segments.end(), segments[k].begin(), segments[k].end());
    b.segments.insert(b.segments.end(), pad, 0);
    b.attention.insert(b.attention.end(), ids[k].size(), 1);
    b.attention.insert(b.attention.end(), pad, 0);
  }
  return b;
}

std::vector<int> argmax_rows(const Mat<float>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    logits.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

void add_head_refs(std::vector<model::ParamRef>& refs, model::ClassifierHead& head, model::ClassifierHead& grads) {
  refs.push_back({"head.weight", &head.weight, &grads.weight});
  refs.push_back({"head.bias", &head.bias, &grads.bias});
}

}  // namespace

std::vector<int> predict(const model::ModelConfig& config, const model::Parameters<float>& params,
                         const model::ClassifierHead& head, const TaskDataset& data,
                         std::span<const std::size_t> indices, std::size_t batch_size, double* loss) {
  std::vector<int> predictions, labels;
  double total = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto slice = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const auto batch = make_task_batch(data, slice, config, labels);
    const Mat<float> hidden = model::encoder_forward(params, config, batch);
    const auto out = model::classifier_head(head, hidden, batch.seq_len, labels);
    total += out.loss.total;
    const auto p = argmax_rows(out.logits);
    predictions.insert(predictions.end(), p.begin(), p.end());
  }
  if (loss) *loss = indices.empty() ? 0.0 : total / static_cast<double>(indices.size());
  return predictions;
}

FineTuneResult fine_tune(const model::ModelConfig& config, model::Parameters<float> initial, const TaskDataset& data,
                         const FineTuneConfig& ft, std::uint64_t seed,
                         const std::function<void(const FineTuneMetric&)>& on_metric) {
  if (data.examples.empty()) throw InputError("fine-tuning needs examples");
  if (ft.batch_size == 0 || ft.epochs < 0) throw ConfigError("invalid fine-tuning schedule");
  const auto split = stratified_split(data, ft.train_fraction, seed);
  if (split.train.empty() || split.validation.empty()) throw InputError("too few examples for a train/validation split");

  FineTuneResult result{std::move(initial), model::ClassifierHead::init(config.d_model, data.n_classes, seed), {}, 0.0,
                        0.0, 0};
  const std::string name(task_name(data.task));
  auto emit = [&](FineTuneMetric m) {
    if (on_metric) on_metric(m);
    result.metrics.push_back(std::move(m));
  };
  std::vector<int> val_labels;
  for (std::size_t i : split.validation) val_labels.push_back(data.examples[i].label);
  const int n_classes = static_cast<int>(data.n_classes);

  // Frozen encoder: features are fixed, so compute them once.
  Mat<float> frozen_features;
  if (ft.freeze_encoder) {
    frozen_features.resize(static_cast<Eigen::Index>(data.examples.size()), static_cast<Eigen::Index>(config.d_model));
    std::vector<int> labels;
    for (std::size_t i = 0; i < data.examples.size(); ++i) {
      const std::size_t idx[1] = {i};
      const auto batch = make_task_batch(data, idx, config, labels);
      frozen_features.row(static_cast<Eigen::Index>(i)) =
          model::encoder_forward(result.params, config, batch).row(0);
    }
  }

  const std::size_t per_epoch = (split.train.size() + ft.batch_size - 1) / ft.batch_size;
  const model::LinearSchedule schedule{ft.peak_lr, static_cast<std::int64_t>(per_epoch) * ft.epochs,
                                       ft.warmup_fraction};
  model::AdamW optimizer;
  auto grads = model::Parameters<float>::zeros(config);
  model::ClassifierHead head_grads{Mat<float>::Zero(result.head.weight.rows(), result.head.weight.cols()),
                                   Mat<float>::Zero(1, result.head.bias.cols())};
  std::vector<model::ParamRef> refs;
  if (!ft.freeze_encoder) refs = model::param_refs(result.params, grads);
  add_head_refs(refs, result.head, head_grads);

  std::vector<std::size_t> order = split.train;
  std::vector<int> labels;
  for (int epoch = 1; epoch <= ft.epochs; ++epoch) {
    order = split.train;
    Rng rng(derive_seed(seed, 0xf17e0000ULL + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::vector<int> train_pred, train_gold;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const auto slice = std::span(order).subspan(b * ft.batch_size,
                                                  std::min(ft.batch_size, order.size() - b * ft.batch_size));
      grads.set_zero();
      head_grads.weight.setZero();
      head_grads.bias.setZero();
      model::ClassifierOutput out;
      if (ft.freeze_encoder) {
        labels.clear();
        Mat<float> feats(static_cast<Eigen::Index>(slice.size()), frozen_features.cols());
        for (std::size_t k = 0; k < slice.size(); ++k) {
          feats.row(static_cast<Eigen::Index>(k)) = frozen_features.row(static_cast<Eigen::Index>(slice[k]));
          labels.push_back(data.examples[slice[k]].label);
        }
        out = model::classifier_head(result.head, feats, 1, labels, &head_grads);
      } else {
        const auto batch = make_task_batch(data, slice, config, labels);
        const model::Dropout dropout{config.dropout_rate,
                                     derive_seed(seed, 0xd40f0000ULL + static_cast<std::uint64_t>(result.steps))};
        model::ForwardCache<float> cache;
        const Mat<float> hidden = model::encoder_forward(result.params, config, batch, &cache, &dropout);
        Mat<float> d_hidden;
        out = model::classifier_head(result.head, hidden, batch.seq_len, labels, &head_grads, &d_hidden);
        model::encoder_backward(result.params, config, batch, cache, d_hidden, grads);
      }
      const double loss = out.loss.total / static_cast<double>(out.loss.count);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite fine-tuning loss at step " + std::to_string(result.steps) + " (task " + name +
                            ", epoch " + std::to_string(epoch) + ")");
      }
      optimizer.step(refs, schedule.at(result.steps), ft.clip_norm);
      ++result.steps;
      loss_sum += loss;
      const auto p = argmax_rows(out.logits);
      train_pred.insert(train_pred.end(), p.begin(), p.end());
      train_gold.insert(train_gold.end(), labels.begin(), labels.end());
    }
    emit({epoch, name, "train", loss_sum / static_cast<double>(per_epoch),
          metrics::macro_f1(train_pred, train_gold, n_classes)});

    double val_loss = 0.0;
    std::vector<int> val_pred;
    if (ft.freeze_encoder) {
      std::vector<int> gold;
      Mat<float> feats(static_cast<Eigen::Index>(split.validation.size()), frozen_features.cols());
      for (std::size_t k = 0; k < split.validation.size(); ++k) {
        feats.row(static_cast<Eigen::Index>(k)) = frozen_features.row(static_cast<Eigen::Index>(split.validation[k]));
      }
      const auto out = model::classifier_head(result.head, feats, 1, val_labels);
      val_loss = out.loss.total / static_cast<double>(out.loss.count);
      val_pred = argmax_rows(out.logits);
    } else {
      val_pred = predict(config, result.params, result.head, data, split.validation, ft.batch_size, &val_loss);
    }
    result.validation_f1 = metrics::macro_f1(val_pred, val_labels, n_classes);
    emit({epoch, name, "validation", val_loss, result.validation_f1});
  }

  // Final training-set accuracy in evaluation mode.
  std::vector<int> train_gold;
  for (std::size_t i : split.train) train_gold.push_back(data.examples[i].label);
  std::vector<int> train_pred;
  if (ft.freeze_encoder) {
    Mat<float> feats(static_cast<Eigen::Index>(split.train.size()), frozen_features.cols());
    for (std::size_t k = 0; k < split.train.size(); ++k) {
      feats.row(static_cast<Eigen::Index>(k)) = frozen_features.row(static_cast<Eigen::Index>(split.train[k]));
    }
    train_pred = argmax_rows(model::classifier_head(result.head, feats, 1, train_gold).logits);
  } else {
    train_pred = predict(config, result.params, result.head, data, split.train, ft.batch_size);
  }
  result.train_accuracy = metrics::accuracy(train_pred, train_gold);
  return result;
}

nlohmann::json to_json(const CompareReport& r) {
  return {{"task", r.task},       {"random_f1", r.random_f1},           {"pretrained_f1", r.pretrained_f1},
          {"gap", r.gap},         {"examples", r.examples},             {"steps_per_arm", r.steps_per_arm}};
}

CompareReport compare_inits(const model::ModelConfig& config, const model::Parameters<float>& pretrained,
                            const TaskDataset& data, const FineTuneConfig& ft, std::uint64_t seed,
                            const std::function<void(const std::string&, const FineTuneMetric&)>& on_metric) {
  auto tap = [&](const std::string& arm) {
    return [&on_metric, arm](const FineTuneMetric& m) {
      if (on_metric) on_metric(arm, m);
    };
  };
  const auto random = fine_tune(config, model::init_params(config, derive_seed(seed, 0xa11)), data, ft, seed, tap("random"));
  const auto tuned = fine_tune(config, pretrained, data, ft, seed, tap("pretrained"));
  CompareReport r;
  r.task = task_name(data.task);
  r.random_f1 = random.validation_f1;
  r.pretrained_f1 = tuned.validation_f1;
  r.gap = r.pretrained_f1 - r.random_f1;
  r.examples = data.examples.size();
  r.steps_per_arm = tuned.steps;
  return r;
}

}  // namespace ltm::tasks
