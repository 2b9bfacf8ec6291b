#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ltm/pipeline.hpp"
#include "ltm/subhash_tokenizer.hpp"

namespace ltm::tasks {

enum class Task { kNsp, kDp, kTua };

std::string_view task_name(Task task);
Task parse_task(std::string_view name);

inline constexpr std::size_t kDefaultExamples = 2000;
inline constexpr std::size_t kMinDestinationSupport = 5;

/// One fine-tuning example. Pair tasks fill both sides; destination
/// prediction uses only `ids_a` (the trajectory prefix).
struct TaskExample {
  std::vector<int> ids_a;
  std::vector<int> ids_b;
  int label = 0;

  /// [CLS] A [SEP] (B [SEP]); segment 0 up to the first [SEP], 1 after.
  void pack(std::vector<int>& ids, std::vector<int>& segments) const;
  std::size_t packed_length() const;

  friend bool operator==(const TaskExample&, const TaskExample&) = default;
};

struct TaskDataset {
  Task task = Task::kNsp;
  std::size_t n_classes = 2;
  /// destination cells for DP, {"negative", "positive"} for pair tasks
  std::vector<std::string> class_names;
  std::vector<TaskExample> examples;

  std::size_t count(int label) const;
};

/// Token runs per cell, cached across calls.
class CellTokenizer {
 public:
  explicit CellTokenizer(const tok::Vocabulary& vocab) : vocab_(&vocab) {}
  const std::vector<int>& operator()(const std::string& cell);

 private:
  const tok::Vocabulary* vocab_;
  std::unordered_map<std::string, std::vector<int>> cache_;
};

/// Next sub-trajectory prediction: A is a prefix cut uniformly in [25%, 75%]
/// of the cell occurrences; B is its true continuation (label 1) or the
/// continuation of a different trajectory cut at the same relative point
/// (label 0). Exactly floor(n/2) positives.
TaskDataset build_nsp(std::span<const pipeline::ClusteredTrajectory> split, const tok::Vocabulary& vocab,
                      std::size_t n_examples, std::size_t max_len, std::uint64_t seed);

/// Destination prediction from the first ceil(25%) cluster points of
/// trajectories with at least 8 points. Classes are destination cells with
/// support >= min_support; other trajectories are rejected.
TaskDataset build_dp(std::span<const pipeline::ClusteredTrajectory> split, const tok::Vocabulary& vocab,
                     std::size_t n_examples, std::size_t max_len, std::uint64_t seed,
                     std::size_t min_support = kMinDestinationSupport);

struct TuaPool {
  std::size_t positive_pairs = 0;  // unordered same-user pairs from different months
  std::size_t negative_pairs = 0;  // unordered cross-user pairs
};

TuaPool tua_pool(std::span<const pipeline::ClusteredTrajectory> split, const pipeline::UserLabelIndex& users);

/// Trajectory-user association: positives pair two months of one user,
/// negatives pair two users. Balanced; capped by the positive pool. Both
/// sides are tail-truncated alternately until the packed pair fits max_len.
TaskDataset build_tua(std::span<const pipeline::ClusteredTrajectory> split, const pipeline::UserLabelIndex& users,
                      const tok::Vocabulary& vocab, std::size_t n_examples, std::size_t max_len, std::uint64_t seed);

// Task dataset files: header line {"task","n_classes","class_names"}, then one
// example per line {"ids_a","ids_b","label"}.
void write_dataset(const std::filesystem::path& path, const TaskDataset& data);
TaskDataset read_dataset(const std::filesystem::path& path);

}  // namespace ltm::tasks
