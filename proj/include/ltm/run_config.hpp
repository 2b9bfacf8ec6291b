#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "ltm/fine_tune.hpp"
#include "ltm/model/config.hpp"
#include "ltm/model/pretrain.hpp"
#include "ltm/synth.hpp"
#include "ltm/tasks.hpp"

namespace ltm {

struct CorpusSettings {
  int precision = 6;
  std::int64_t window_seconds = 600;
  std::size_t min_distinct_cells = 3;
  std::size_t min_points = 10;
  std::string codec = "geohash";
};

struct TokenizerSettings {
  std::size_t vocab_size = 2000;
};

struct PretrainDataSettings {
  std::size_t chunk_size = 512;
  double mask_ratio = 0.2;
  /// 80/10/10 [MASK]/random/keep corruption of selected cells; off means
  /// pure [MASK] replacement.
  bool mask_mixture = false;
};

struct TaskSettings {
  std::vector<tasks::Task> tasks{tasks::Task::kNsp, tasks::Task::kDp, tasks::Task::kTua};
  std::size_t n_examples = 2000;
  std::size_t dp_min_support = 5;
  tasks::FineTuneConfig fine_tune;
};

/// Everything a pipeline run depends on. Every field has a default; a JSON
/// document only needs the fields it changes. The model's vocab_size is
/// taken from the trained vocabulary, not from here.
struct RunConfig {
  std::uint64_t seed = 42;
  std::filesystem::path out_dir = "runs/default";
  /// External check-in file (JSON Lines or .csv). Empty: use the synth stage.
  std::filesystem::path checkins;
  synth::SynthConfig synth;
  CorpusSettings corpus;
  TokenizerSettings tokenizer;
  PretrainDataSettings pretrain_data;
  model::ModelConfig model = default_model();
  model::PretrainSchedule pretrain = default_pretrain();
  TaskSettings finetune;
  std::size_t eval_batch_size = 64;

  /// Throws ConfigError.
  void validate() const;

  static model::ModelConfig default_model();
  static model::PretrainSchedule default_pretrain();
};

nlohmann::json to_json(const RunConfig& c);
/// Unknown keys are rejected so that typos do not silently fall back to
/// defaults. A relative input path resolves against `base_dir`; out_dir is
/// left relative to the working directory.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace ltm
