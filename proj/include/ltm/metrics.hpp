#pragma once

#include <span>
#include <vector>

namespace ltm::metrics {

/// Macro F1 over the classes present in `labels` (per-class F1 is 0 when
/// precision + recall is 0). Throws InputError on length mismatch or empty
/// input.
double macro_f1(std::span<const int> predictions, std::span<const int> labels);

/// Macro F1 over classes 0..n_classes-1 that occur in `labels`.
double macro_f1(std::span<const int> predictions, std::span<const int> labels, int n_classes);

double accuracy(std::span<const int> predictions, std::span<const int> labels);

/// mean(after) - mean(before); the headline improvement of a score table.
double mean_gap(std::span<const double> before, std::span<const double> after);

}  // namespace ltm::metrics
