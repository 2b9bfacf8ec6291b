#include "ltm/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "ltm/error.hpp"

namespace ltm::metrics {

double macro_f1(std::span<const int> predictions, std::span<const int> labels) {
  if (labels.empty()) throw InputError("macro_f1 needs at least one example");
  return macro_f1(predictions, labels, *std::max_element(labels.begin(), labels.end()) + 1);
}

double macro_f1(std::span<const int> predictions, std::span<const int> labels, int n_classes) {
  if (predictions.size() != labels.size()) {
    throw InputError("macro_f1: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw InputError("macro_f1 needs at least one example");
  const std::set<int> classes(labels.begin(), labels.end());
  double sum = 0.0;
  for (int c : classes) {
    if (c < 0 || c >= n_classes) throw InputError("label outside class range");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool pred = predictions[i] == c;
      const bool gold = labels[i] == c;
      tp += pred && gold;
      fp += pred && !gold;
      fn += !pred && gold;
    }
    const double precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    sum += precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return sum / static_cast<double>(classes.size());
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size() || labels.empty()) throw InputError("accuracy: bad input lengths");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double mean_gap(std::span<const double> before, std::span<const double> after) {
  if (before.empty() || after.empty()) throw InputError("mean_gap needs non-empty score lists");
  const double a = std::accumulate(before.begin(), before.end(), 0.0) / static_cast<double>(before.size());
  const double b = std::accumulate(after.begin(), after.end(), 0.0) / static_cast<double>(after.size());
  return b - a;
}

}  // namespace ltm::metrics
