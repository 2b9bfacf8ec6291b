#include "ltm/run_config.hpp"

#include <fstream>

#include "ltm/error.hpp"
#include "ltm/geocell.hpp"
#include "ltm/io.hpp"

namespace ltm {

using json = nlohmann::json;

namespace {

// Keys a section accepts are the keys its default serializes to.
void reject_unknown(const json& j, const json& defaults, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + where + "." + key + "'");
  }
}

json tasks_json(const std::vector<tasks::Task>& ts) {
  json a = json::array();
  for (auto t : ts) a.push_back(std::string(tasks::task_name(t)));
  return a;
}

json finetune_json(const TaskSettings& s) {
  const auto& f = s.fine_tune;
  return {{"tasks", tasks_json(s.tasks)},
          {"n_examples", s.n_examples},
          {"dp_min_support", s.dp_min_support},
          {"epochs", f.epochs},
          {"batch_size", f.batch_size},
          {"peak_lr", f.peak_lr},
          {"warmup_fraction", f.warmup_fraction},
          {"clip_norm", f.clip_norm},
          {"train_fraction", f.train_fraction},
          {"freeze_encoder", f.freeze_encoder}};
}

json model_json(const model::ModelConfig& m) {
  json j = model::to_json(m);
  j.erase("vocab_size");
  return j;
}

json pretrain_json(const model::PretrainSchedule& p) {
  return {{"epochs", p.epochs},
          {"batch_size", p.batch_size},
          {"peak_lr", p.peak_lr},
          {"warmup_fraction", p.warmup_fraction},
          {"clip_norm", p.clip_norm}};
}

template <typename T>
void read(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

model::ModelConfig RunConfig::default_model() {
  model::ModelConfig m;
  // chunks are fed whole, so the position table covers the default chunk
  m.max_len = 512;
  return m;
}

model::PretrainSchedule RunConfig::default_pretrain() {
  model::PretrainSchedule p;
  p.epochs = 40;
  return p;
}

void RunConfig::validate() const {
  try {
    synth.validate();
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  if (corpus.precision < 1 || corpus.precision > geo::kMaxPrecision) {
    throw ConfigError("corpus.precision must be in [1, 12]");
  }
  if (corpus.window_seconds < 0) throw ConfigError("corpus.window_seconds must be >= 0");
  try {
    geo::make_codec(corpus.codec);
  } catch (const Error& e) {
    throw ConfigError(std::string("corpus.codec: ") + e.what());
  }
  if (tokenizer.vocab_size < 6) throw ConfigError("tokenizer.vocab_size is too small");
  if (pretrain_data.chunk_size < 8) throw ConfigError("pretrain_data.chunk_size must be >= 8");
  if (!(pretrain_data.mask_ratio >= 0.0 && pretrain_data.mask_ratio <= 1.0)) {
    throw ConfigError("pretrain_data.mask_ratio must be in [0, 1]");
  }
  model.validate();
  if (pretrain_data.chunk_size > model.max_len) {
    throw ConfigError("pretrain_data.chunk_size " + std::to_string(pretrain_data.chunk_size) +
                      " exceeds model.max_len " + std::to_string(model.max_len));
  }
  if (pretrain.epochs < 1 || pretrain.batch_size == 0 || !(pretrain.peak_lr > 0.0)) {
    throw ConfigError("pretrain needs epochs >= 1, batch_size >= 1 and peak_lr > 0");
  }
  const auto& ft = finetune.fine_tune;
  if (ft.epochs < 1 || ft.batch_size == 0 || !(ft.peak_lr > 0.0)) {
    throw ConfigError("finetune needs epochs >= 1, batch_size >= 1 and peak_lr > 0");
  }
  if (!(ft.train_fraction > 0.0 && ft.train_fraction < 1.0)) {
    throw ConfigError("finetune.train_fraction must be in (0, 1)");
  }
  if (finetune.tasks.empty()) throw ConfigError("finetune.tasks is empty");
  if (finetune.n_examples < 2) throw ConfigError("finetune.n_examples must be >= 2");
  if (eval_batch_size == 0) throw ConfigError("eval.batch_size must be >= 1");
  if (!checkins.empty() && !std::filesystem::exists(checkins)) {
    throw ConfigError("input.checkins not found: " + checkins.string());
  }
}

json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"out_dir", c.out_dir.string()},
          {"input", {{"checkins", c.checkins.string()}}},
          {"synth", synth::to_json(c.synth)},
          {"corpus",
           {{"precision", c.corpus.precision},
            {"window_seconds", c.corpus.window_seconds},
            {"min_distinct_cells", c.corpus.min_distinct_cells},
            {"min_points", c.corpus.min_points},
            {"codec", c.corpus.codec}}},
          {"tokenizer", {{"vocab_size", c.tokenizer.vocab_size}}},
          {"pretrain_data",
           {{"chunk_size", c.pretrain_data.chunk_size},
            {"mask_ratio", c.pretrain_data.mask_ratio},
            {"mask_mixture", c.pretrain_data.mask_mixture}}},
          {"model", model_json(c.model)},
          {"pretrain", pretrain_json(c.pretrain)},
          {"finetune", finetune_json(c.finetune)},
          {"eval", {{"batch_size", c.eval_batch_size}}}};
}

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  RunConfig c;
  const json defaults = to_json(c);
  try {
    reject_unknown(j, defaults, "config");
    read(j, "seed", c.seed);
    auto resolve = [&base_dir](const std::string& p) -> std::filesystem::path {
      if (p.empty()) return {};
      std::filesystem::path path(p);
      return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    // out_dir stays relative to the working directory
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("input")) {
      reject_unknown(j.at("input"), defaults.at("input"), "input");
      c.checkins = resolve(j.at("input").value("checkins", std::string()));
    }
    if (j.contains("synth")) {
      reject_unknown(j.at("synth"), defaults.at("synth"), "synth");
      c.synth = synth::synth_config_from_json(j.at("synth"));
    }
    if (j.contains("corpus")) {
      const auto& s = j.at("corpus");
      reject_unknown(s, defaults.at("corpus"), "corpus");
      read(s, "precision", c.corpus.precision);
      read(s, "window_seconds", c.corpus.window_seconds);
      read(s, "min_distinct_cells", c.corpus.min_distinct_cells);
      read(s, "min_points", c.corpus.min_points);
      read(s, "codec", c.corpus.codec);
    }
    if (j.contains("tokenizer")) {
      reject_unknown(j.at("tokenizer"), defaults.at("tokenizer"), "tokenizer");
      read(j.at("tokenizer"), "vocab_size", c.tokenizer.vocab_size);
    }
    if (j.contains("pretrain_data")) {
      const auto& s = j.at("pretrain_data");
      reject_unknown(s, defaults.at("pretrain_data"), "pretrain_data");
      read(s, "chunk_size", c.pretrain_data.chunk_size);
      read(s, "mask_ratio", c.pretrain_data.mask_ratio);
      read(s, "mask_mixture", c.pretrain_data.mask_mixture);
    }
    if (j.contains("model")) {
      reject_unknown(j.at("model"), defaults.at("model"), "model");
      json merged = model::to_json(c.model);
      merged.update(j.at("model"));
      c.model = model::model_config_from_json(merged);
    }
    if (j.contains("pretrain")) {
      const auto& s = j.at("pretrain");
      reject_unknown(s, defaults.at("pretrain"), "pretrain");
      read(s, "epochs", c.pretrain.epochs);
      read(s, "batch_size", c.pretrain.batch_size);
      read(s, "peak_lr", c.pretrain.peak_lr);
      read(s, "warmup_fraction", c.pretrain.warmup_fraction);
      read(s, "clip_norm", c.pretrain.clip_norm);
    }
    if (j.contains("finetune")) {
      const auto& s = j.at("finetune");
      reject_unknown(s, defaults.at("finetune"), "finetune");
      if (s.contains("tasks")) {
        c.finetune.tasks.clear();
        for (const auto& t : s.at("tasks")) c.finetune.tasks.push_back(tasks::parse_task(t.get<std::string>()));
      }
      read(s, "n_examples", c.finetune.n_examples);
      read(s, "dp_min_support", c.finetune.dp_min_support);
      auto& f = c.finetune.fine_tune;
      read(s, "epochs", f.epochs);
      read(s, "batch_size", f.batch_size);
      read(s, "peak_lr", f.peak_lr);
      read(s, "warmup_fraction", f.warmup_fraction);
      read(s, "clip_norm", f.clip_norm);
      read(s, "train_fraction", f.train_fraction);
      read(s, "freeze_encoder", f.freeze_encoder);
    }
    if (j.contains("eval")) {
      reject_unknown(j.at("eval"), defaults.at("eval"), "eval");
      read(j.at("eval"), "batch_size", c.eval_batch_size);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

}  // namespace ltm
