#include "ltm/stages.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include "ltm/error.hpp"
#include "ltm/fine_tune.hpp"
#include "ltm/geocell.hpp"
#include "ltm/io.hpp"
#include "ltm/masking.hpp"
#include "ltm/model/checkpoint.hpp"
#include "ltm/model/pretrain.hpp"
#include "ltm/pipeline.hpp"
#include "ltm/rng.hpp"
#include "ltm/subhash_tokenizer.hpp"
#include "ltm/synth.hpp"
#include "ltm/tasks.hpp"

namespace ltm::stages {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::pair<Stage, std::string_view> kNames[] = {
    {Stage::kSynth, "synth"},
    {Stage::kIngest, "ingest"},
    {Stage::kBuildCorpus, "build-corpus"},
    {Stage::kTrainTokenizer, "train-tokenizer"},
    {Stage::kBuildPretrainData, "build-pretrain-data"},
    {Stage::kPretrain, "pretrain"},
    {Stage::kFinetune, "finetune"},
    {Stage::kCompare, "compare"},
    {Stage::kEval, "eval"},
};

// Seed streams. Task datasets share one stream across the finetune and
// compare stages so both see the same examples.
std::uint64_t stage_seed(const RunConfig& c, Stage s) {
  return derive_seed(c.seed, 0x5eed0 + static_cast<std::uint64_t>(s));
}
std::uint64_t task_data_seed(const RunConfig& c, tasks::Task t) {
  return derive_seed(c.seed, 0x7a5c0 + static_cast<std::uint64_t>(t));
}
std::uint64_t task_train_seed(const RunConfig& c, tasks::Task t) {
  return derive_seed(c.seed, 0xf7e0 + static_cast<std::uint64_t>(t));
}

json section(const RunConfig& c, Stage s) {
  const json all = to_json(c);
  switch (s) {
    case Stage::kSynth:
      return all.at("synth");
    case Stage::kIngest:
      return json::object();
    case Stage::kBuildCorpus:
      return all.at("corpus");
    case Stage::kTrainTokenizer:
      return all.at("tokenizer");
    case Stage::kBuildPretrainData:
      return all.at("pretrain_data");
    case Stage::kPretrain:
      return {{"model", all.at("model")}, {"pretrain", all.at("pretrain")}};
    case Stage::kFinetune:
    case Stage::kCompare:
      return all.at("finetune");
    case Stage::kEval:
      return all.at("eval");
  }
  return json::object();
}

std::string file_key(const fs::path& out_dir, const fs::path& p) {
  const fs::path rel = p.lexically_relative(out_dir);
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return fs::absolute(p).lexically_normal().generic_string();
}

struct Layout {
  fs::path root;

  fs::path synth_checkins() const { return root / "synth" / "checkins.jsonl"; }
  fs::path checkins() const { return root / "ingest" / "checkins.jsonl"; }
  fs::path ingest_report() const { return root / "ingest" / "report.json"; }
  fs::path corpus(std::string_view split) const { return root / "corpus" / (std::string(split) + ".jsonl"); }
  fs::path test_users() const { return root / "corpus" / "test_users.json"; }
  fs::path corpus_report() const { return root / "corpus" / "report.json"; }
  fs::path vocab() const { return root / "tokenizer" / "vocab.txt"; }
  fs::path tokenizer_report() const { return root / "tokenizer" / "report.json"; }
  fs::path masked(std::string_view split) const {
    return root / "pretrain_data" / (std::string(split) + ".jsonl");
  }
  fs::path masked_report() const { return root / "pretrain_data" / "report.json"; }
  fs::path checkpoint() const { return root / "pretrain" / "model.ckpt"; }
  fs::path pretrain_metrics() const { return root / "pretrain" / "metrics.csv"; }
  fs::path task_file(std::string_view stage, tasks::Task t, std::string_view suffix) const {
    return root / stage / (std::string(tasks::task_name(t)) + std::string(suffix));
  }
  fs::path stage_file(std::string_view stage, std::string_view name) const { return root / stage / name; }
};

struct Plan {
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::function<void()> body;
};

std::vector<std::vector<std::string>> cells_of(std::span<const pipeline::ClusteredTrajectory> trajs) {
  std::vector<std::vector<std::string>> out;
  out.reserve(trajs.size());
  for (const auto& t : trajs) out.push_back(t.cells());
  return out;
}

void write_json(const fs::path& path, const json& j) { io::write_text(path, j.dump(2) + "\n"); }

model::ModelConfig model_for(const RunConfig& c, const tok::Vocabulary& vocab) {
  model::ModelConfig m = c.model;
  m.vocab_size = vocab.size();
  return m;
}

tasks::TaskDataset build_task(const RunConfig& c, tasks::Task t, const Layout& L, const tok::Vocabulary& vocab) {
  const auto test = pipeline::read_corpus(L.corpus("test"));
  const std::size_t max_len = c.model.max_len;
  const std::uint64_t seed = task_data_seed(c, t);
  switch (t) {
    case tasks::Task::kNsp:
      return tasks::build_nsp(test, vocab, c.finetune.n_examples, max_len, seed);
    case tasks::Task::kDp:
      return tasks::build_dp(test, vocab, c.finetune.n_examples, max_len, seed, c.finetune.dp_min_support);
    case tasks::Task::kTua:
      return tasks::build_tua(test, pipeline::read_label_index(L.test_users()), vocab, c.finetune.n_examples,
                              max_len, seed);
  }
  throw InputError("unknown task");
}

json head_json(const tasks::TaskDataset& data, const model::ClassifierHead& head) {
  json w = json::array();
  for (Eigen::Index r = 0; r < head.weight.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index k = 0; k < head.weight.cols(); ++k) row.push_back(head.weight(r, k));
    w.push_back(std::move(row));
  }
  json b = json::array();
  for (Eigen::Index k = 0; k < head.bias.cols(); ++k) b.push_back(head.bias(0, k));
  return {{"task", tasks::task_name(data.task)}, {"class_names", data.class_names}, {"weight", w}, {"bias", b}};
}

class Csv {
 public:
  Csv(const fs::path& path, std::string_view header) : path_(path) { text_ << header << '\n'; }
  void row(const std::string& line) { text_ << line << '\n'; }
  void commit() const { io::write_text(path_, text_.str()); }

 private:
  fs::path path_;
  std::ostringstream text_;
};

}  // namespace

std::string_view stage_name(Stage s) {
  for (const auto& [stage, name] : kNames) {
    if (stage == s) return name;
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (const auto& [stage, n] : kNames) {
    if (n == name) return stage;
  }
  throw ConfigError("unknown stage '" + std::string(name) + "'");
}

std::vector<Stage> pipeline_order(const RunConfig& config) {
  std::vector<Stage> order;
  if (config.checkins.empty()) order.push_back(Stage::kSynth);
  for (Stage s : {Stage::kIngest, Stage::kBuildCorpus, Stage::kTrainTokenizer, Stage::kBuildPretrainData,
                  Stage::kPretrain, Stage::kEval, Stage::kFinetune, Stage::kCompare}) {
    order.push_back(s);
  }
  return order;
}

std::vector<Stage> upstream_of(Stage s, const RunConfig& config) {
  switch (s) {
    case Stage::kSynth:
      return {};
    case Stage::kIngest:
      if (config.checkins.empty()) return {Stage::kSynth};
      return {};
    case Stage::kBuildCorpus:
      return {Stage::kIngest};
    case Stage::kTrainTokenizer:
      return {Stage::kBuildCorpus};
    case Stage::kBuildPretrainData:
      return {Stage::kBuildCorpus, Stage::kTrainTokenizer};
    case Stage::kPretrain:
      return {Stage::kTrainTokenizer, Stage::kBuildPretrainData};
    case Stage::kFinetune:
    case Stage::kCompare:
      return {Stage::kBuildCorpus, Stage::kTrainTokenizer, Stage::kPretrain};
    case Stage::kEval:
      return {Stage::kBuildPretrainData, Stage::kPretrain};
  }
  return {};
}

std::string config_hash(const RunConfig& config, Stage s) {
  json upstream = json::object();
  for (Stage u : upstream_of(s, config)) upstream[std::string(stage_name(u))] = config_hash(config, u);
  const json doc = {
      {"stage", stage_name(s)}, {"seed", config.seed}, {"settings", section(config, s)}, {"upstream", upstream}};
  return io::sha256_hex(doc.dump());
}

json Manifest::to_json() const {
  return {{"stage", stage}, {"config_hash", config_hash}, {"seed", seed}, {"inputs", inputs}, {"outputs", outputs}};
}

Manifest Manifest::from_json(const json& j) {
  Manifest m;
  m.stage = j.at("stage").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  return m;
}

fs::path manifest_path(const fs::path& out_dir, Stage s) {
  return out_dir / "manifests" / (std::string(stage_name(s)) + ".json");
}

std::optional<Manifest> read_manifest(const fs::path& path) {
  if (!fs::exists(path)) return std::nullopt;
  try {
    return Manifest::from_json(json::parse(io::read_text(path)));
  } catch (const json::exception& e) {
    throw StageError("corrupt manifest " + path.string() + ": " + e.what());
  }
}

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw StageError("run directory is locked by another stage: " + path_.string() +
                       " (remove it if no other run is active)");
    }
    throw IoError("cannot create lock " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

Runner::Runner(RunConfig config, std::ostream& log) : config_(std::move(config)), log_(log) { config_.validate(); }

namespace {

Plan make_plan(const RunConfig& c, Stage s, std::ostream& log) {
  const Layout L{c.out_dir};
  Plan p;
  switch (s) {
    case Stage::kSynth: {
      p.outputs = {L.synth_checkins()};
      p.body = [&c, L] {
        const auto checkins = synth::synth_generate(c.synth, stage_seed(c, Stage::kSynth));
        std::ostringstream out;
        pipeline::write_checkins(out, checkins);
        io::write_text(L.synth_checkins(), out.str());
      };
      break;
    }
    case Stage::kIngest: {
      const fs::path source = c.checkins.empty() ? L.synth_checkins() : c.checkins;
      p.inputs = {source};
      p.outputs = {L.checkins(), L.ingest_report()};
      p.body = [L, source, &log] {
        const auto r = pipeline::ingest_file(source);
        std::ostringstream out;
        pipeline::write_checkins(out, r.checkins);
        io::write_text(L.checkins(), out.str());
        write_json(L.ingest_report(), {{"rows", r.rows}, {"rejected", r.rejected}, {"kept", r.checkins.size()}});
        log << "ingest: " << r.checkins.size() << " check-ins kept, " << r.rejected << " rejected\n";
      };
      break;
    }
    case Stage::kBuildCorpus: {
      p.inputs = {L.checkins()};
      p.outputs = {L.corpus("train"), L.corpus("validation"), L.corpus("test"), L.test_users(), L.corpus_report()};
      p.body = [&c, L, &log] {
        const auto r = pipeline::ingest_file(L.checkins());
        const auto raw = pipeline::assemble_monthly(r.checkins);
        const auto codec = geo::make_codec(c.corpus.codec);
        std::vector<pipeline::ClusteredTrajectory> clustered;
        clustered.reserve(raw.size());
        for (const auto& t : raw) {
          clustered.push_back(pipeline::cluster_points(t, c.corpus.precision, c.corpus.window_seconds, *codec));
        }
        const auto kept = pipeline::filter_trajectories(
            clustered, pipeline::FilterRule{c.corpus.min_distinct_cells, c.corpus.min_points});
        const auto split = pipeline::split_corpus(kept, stage_seed(c, Stage::kBuildCorpus));
        pipeline::write_corpus(L.corpus("train"), split.train);
        pipeline::write_corpus(L.corpus("validation"), split.validation);
        pipeline::write_corpus(L.corpus("test"), split.test);
        pipeline::write_label_index(L.test_users(), split.test_users);
        write_json(L.corpus_report(), {{"trajectories", raw.size()},
                                       {"kept", kept.size()},
                                       {"train", split.train.size()},
                                       {"validation", split.validation.size()},
                                       {"test", split.test.size()}});
        log << "build-corpus: " << kept.size() << " of " << raw.size() << " trajectories kept (" << split.train.size()
            << "/" << split.validation.size() << "/" << split.test.size() << ")\n";
      };
      break;
    }
    case Stage::kTrainTokenizer: {
      p.inputs = {L.corpus("train")};
      p.outputs = {L.vocab(), L.tokenizer_report()};
      p.body = [&c, L, &log] {
        std::map<std::string, std::uint64_t> counts;
        for (const auto& t : pipeline::read_corpus(L.corpus("train"))) {
          for (const auto& pt : t.points) ++counts[pt.cell.code()];
        }
        const auto vocab = tok::train_vocab(counts, c.tokenizer.vocab_size);
        vocab.save(L.vocab());
        std::size_t multi = 0;
        for (int id = tok::kNumSpecials; id < static_cast<int>(vocab.size()); ++id) {
          std::string_view t = vocab.token(id);
          if (t.starts_with(tok::kContinuation)) t.remove_prefix(tok::kContinuation.size());
          if (t.size() > 1) ++multi;
        }
        std::size_t lossless = 0;
        for (const auto& [cell, _] : counts) {
          try {
            if (tok::detokenize(vocab, tok::tokenize_cell(vocab, cell)) == cell) ++lossless;
          } catch (const LossyRoundTripError&) {
          }
        }
        write_json(L.tokenizer_report(), {{"vocab_size", vocab.size()},
                                          {"budget", c.tokenizer.vocab_size},
                                          {"multi_char_tokens", multi},
                                          {"distinct_cells", counts.size()},
                                          {"round_trip_cells", lossless}});
        log << "train-tokenizer: " << vocab.size() << " tokens for " << counts.size() << " distinct cells\n";
      };
      break;
    }
    case Stage::kBuildPretrainData: {
      p.inputs = {L.vocab(), L.corpus("train"), L.corpus("validation")};
      p.outputs = {L.masked("train"), L.masked("validation"), L.masked_report()};
      p.body = [&c, L, &log] {
        const auto vocab = tok::Vocabulary::load(L.vocab());
        const auto train = cells_of(pipeline::read_corpus(L.corpus("train")));
        const auto val = cells_of(pipeline::read_corpus(L.corpus("validation")));
        const auto sum =
            masking::build_pretrain_dataset(vocab, train, val, c.pretrain_data.chunk_size, c.pretrain_data.mask_ratio,
                                            stage_seed(c, Stage::kBuildPretrainData),
                                            {L.masked("train"), L.masked("validation")}, c.pretrain_data.mask_mixture);
        write_json(L.masked_report(), {{"train_chunks", sum.train_chunks},
                                       {"validation_chunks", sum.validation_chunks},
                                       {"masked_occurrences", sum.masked_occurrences},
                                       {"total_occurrences", sum.total_occurrences}});
        log << "build-pretrain-data: " << sum.train_chunks << " train and " << sum.validation_chunks
            << " validation chunks\n";
      };
      break;
    }
    case Stage::kPretrain: {
      p.inputs = {L.vocab(), L.masked("train"), L.masked("validation")};
      p.outputs = {L.checkpoint(), L.pretrain_metrics()};
      p.body = [&c, L, &log] {
        const auto vocab = tok::Vocabulary::load(L.vocab());
        const auto train = masking::read_masked(L.masked("train"));
        const auto val = masking::read_masked(L.masked("validation"));
        auto state = model::TrainState::fresh(model_for(c, vocab), stage_seed(c, Stage::kPretrain));
        Csv csv(L.pretrain_metrics(), model::kMetricsHeader);
        model::pretrain(state, train, val, c.pretrain, [&](const model::MetricRow& r) {
          csv.row(r.csv());
          log << "pretrain: " << r.csv() << '\n' << std::flush;
        });
        model::save_checkpoint(state, L.checkpoint());
        csv.commit();
      };
      break;
    }
    case Stage::kFinetune:
    case Stage::kCompare: {
      const std::string dir(stage_name(s));
      p.inputs = {L.vocab(), L.corpus("test"), L.test_users(), L.checkpoint()};
      for (auto t : c.finetune.tasks) {
        p.outputs.push_back(L.task_file(dir, t, ".data.jsonl"));
        if (s == Stage::kFinetune) {
          p.outputs.push_back(L.task_file(dir, t, ".ckpt"));
          p.outputs.push_back(L.task_file(dir, t, ".head.json"));
        } else {
          p.outputs.push_back(L.task_file(dir, t, ".json"));
        }
      }
      p.outputs.push_back(L.stage_file(dir, "metrics.csv"));
      p.outputs.push_back(L.stage_file(dir, "report.json"));
      p.body = [&c, L, s, dir, &log] {
        const auto vocab = tok::Vocabulary::load(L.vocab());
        const auto config = model_for(c, vocab);
        const auto pretrained = model::load_checkpoint(L.checkpoint(), &config);
        const bool compare = s == Stage::kCompare;
        Csv csv(L.stage_file(dir, "metrics.csv"),
                compare ? "arm," + std::string(tasks::kFineTuneMetricsHeader) : tasks::kFineTuneMetricsHeader);
        json report = json::array();
        for (auto t : c.finetune.tasks) {
          const auto data = build_task(c, t, L, vocab);
          tasks::write_dataset(L.task_file(dir, t, ".data.jsonl"), data);
          log << dir << ": " << tasks::task_name(t) << " with " << data.examples.size() << " examples, "
              << data.n_classes << " classes\n";
          if (compare) {
            const auto r = tasks::compare_inits(config, pretrained.params, data, c.finetune.fine_tune,
                                                task_train_seed(c, t),
                                                [&](const std::string& arm, const tasks::FineTuneMetric& m) {
                                                  csv.row(arm + "," + m.csv());
                                                  log << "compare: " << arm << "," << m.csv() << '\n' << std::flush;
                                                });
            write_json(L.task_file(dir, t, ".json"), tasks::to_json(r));
            report.push_back(tasks::to_json(r));
          } else {
            const auto r = tasks::fine_tune(config, pretrained.params, data, c.finetune.fine_tune,
                                            task_train_seed(c, t), [&](const tasks::FineTuneMetric& m) {
                                              csv.row(m.csv());
                                              log << "finetune: " << m.csv() << '\n' << std::flush;
                                            });
            model::TrainState tuned{config, r.params, model::AdamW{}, task_train_seed(c, t)};
            model::save_checkpoint(tuned, L.task_file(dir, t, ".ckpt"));
            write_json(L.task_file(dir, t, ".head.json"), head_json(data, r.head));
            report.push_back({{"task", tasks::task_name(t)},
                              {"examples", data.examples.size()},
                              {"n_classes", data.n_classes},
                              {"validation_f1", r.validation_f1},
                              {"train_accuracy", r.train_accuracy},
                              {"steps", r.steps}});
          }
        }
        csv.commit();
        write_json(L.stage_file(dir, "report.json"), report);
      };
      break;
    }
    case Stage::kEval: {
      p.inputs = {L.checkpoint(), L.masked("validation")};
      p.outputs = {L.stage_file("eval", "report.json")};
      p.body = [&c, L, &log] {
        const auto state = model::load_checkpoint(L.checkpoint());
        const auto val = masking::read_masked(L.masked("validation"));
        const double ppl = model::perplexity(state.params, state.config, val, c.eval_batch_size);
        // zero output weights and bias give uniform predictions
        auto uniform = state.params;
        uniform.token_embedding.setZero();
        uniform.mtm_bias.setZero();
        const double uniform_ppl = model::perplexity(uniform, state.config, val, c.eval_batch_size);
        write_json(L.stage_file("eval", "report.json"), {{"step", state.step()},
                                                         {"vocab_size", state.config.vocab_size},
                                                         {"validation_perplexity", ppl},
                                                         {"uniform_perplexity", uniform_ppl}});
        log << "eval: validation perplexity " << ppl << " (uniform " << uniform_ppl << ")\n";
      };
      break;
    }
  }
  return p;
}

}  // namespace

StageResult Runner::run(Stage s) {
  DirectoryLock lock(config_.out_dir);
  return run_locked(s);
}

std::vector<StageResult> Runner::run_all() {
  DirectoryLock lock(config_.out_dir);
  std::vector<StageResult> results;
  for (Stage s : pipeline_order(config_)) results.push_back(run_locked(s));
  return results;
}

StageResult Runner::run_locked(Stage s) {
  const fs::path& out = config_.out_dir;
  const std::string name(stage_name(s));
  Plan plan = make_plan(config_, s, log_);

  for (const auto& in : plan.inputs) {
    if (!fs::exists(in)) throw StageError("stage '" + name + "' is missing upstream artifact: " + in.string());
  }

  // upstream manifests must match the current config and the files on disk
  std::map<std::string, std::string> produced;
  for (Stage u : upstream_of(s, config_)) {
    const fs::path mpath = manifest_path(out, u);
    const auto m = read_manifest(mpath);
    if (!m) throw StageError("stage '" + name + "' is missing upstream artifact: " + mpath.string());
    const std::string expected = config_hash(config_, u);
    if (m->config_hash != expected) {
      throw StalenessError("upstream stage '" + std::string(stage_name(u)) + "' was built with config hash " +
                           m->config_hash + " but the current config gives " + expected + "; rerun '" +
                           std::string(stage_name(u)) + "'");
    }
    produced.insert(m->outputs.begin(), m->outputs.end());
  }

  Manifest manifest;
  manifest.stage = name;
  manifest.config_hash = config_hash(config_, s);
  manifest.seed = config_.seed;
  for (const auto& in : plan.inputs) {
    const std::string key = file_key(out, in);
    const std::string hash = io::sha256_file(in);
    const auto it = produced.find(key);
    if (it != produced.end() && it->second != hash) {
      throw StalenessError("input " + in.string() + " changed after its producing stage wrote it");
    }
    manifest.inputs[key] = hash;
  }

  const fs::path mpath = manifest_path(out, s);
  if (const auto old = read_manifest(mpath);
      old && old->config_hash == manifest.config_hash && old->inputs == manifest.inputs) {
    bool intact = true;
    for (const auto& o : plan.outputs) {
      const auto it = old->outputs.find(file_key(out, o));
      if (it == old->outputs.end() || !fs::exists(o) || io::sha256_file(o) != it->second) {
        intact = false;
        break;
      }
    }
    if (intact) {
      log_ << name << ": up to date\n";
      return {s, true, plan.outputs};
    }
  }

  // a rerun invalidates the old manifest before any output is touched
  std::error_code ec;
  fs::remove(mpath, ec);
  for (const auto& o : plan.outputs) fs::create_directories(o.parent_path());
  log_ << name << ": running\n" << std::flush;
  plan.body();

  for (const auto& o : plan.outputs) {
    if (!fs::exists(o)) throw StageError("stage '" + name + "' did not produce " + o.string());
    manifest.outputs[file_key(out, o)] = io::sha256_file(o);
  }
  fs::create_directories(mpath.parent_path());
  write_json(mpath, manifest.to_json());
  return {s, false, plan.outputs};
}

}  // namespace ltm::stages
