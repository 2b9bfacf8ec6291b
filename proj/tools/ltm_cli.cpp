// ltm: staged command-line driver for the trajectory model pipeline.
//
//   ltm <stage> [--config FILE] [--seed N] [--out DIR] [overrides...]
//   ltm all     runs every stage in order
//   ltm config  prints the resolved configuration

#include <algorithm>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ltm/error.hpp"
#include "ltm/run_config.hpp"
#include "ltm/stages.hpp"

namespace {

using ltm::stages::Stage;

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> checkins;
  // synth
  std::optional<int> users, months;
  // build-corpus
  std::optional<int> precision;
  std::optional<std::int64_t> window;
  // train-tokenizer
  std::optional<std::size_t> vocab_size;
  // build-pretrain-data
  std::optional<std::size_t> chunk_size;
  std::optional<double> mask_ratio;
  // pretrain / finetune / compare
  std::optional<int> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<std::size_t> examples;
  std::vector<std::string> tasks;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "Run configuration (JSON)");
  cmd->add_option("--seed", o.seed, "Override the run seed");
  cmd->add_option("--out", o.out, "Override the output directory");
}

void add_stage_flags(CLI::App* cmd, Stage s, Overrides& o) {
  const bool all = cmd->get_name() == "all" || cmd->get_name() == "config";
  auto has = [&](std::initializer_list<Stage> list) {
    return all || std::find(list.begin(), list.end(), s) != list.end();
  };
  if (has({Stage::kIngest})) cmd->add_option("--checkins", o.checkins, "External check-in file (.jsonl or .csv)");
  if (has({Stage::kSynth})) {
    cmd->add_option("--users", o.users, "Synthetic users");
    cmd->add_option("--months", o.months, "Synthetic months per user");
  }
  if (has({Stage::kBuildCorpus})) {
    cmd->add_option("--precision", o.precision, "Cell precision (1-12)");
    cmd->add_option("--window", o.window, "Clustering window in seconds");
  }
  if (has({Stage::kTrainTokenizer})) cmd->add_option("--vocab-size", o.vocab_size, "Vocabulary budget");
  if (has({Stage::kBuildPretrainData})) {
    cmd->add_option("--chunk-size", o.chunk_size, "Tokens per chunk");
    cmd->add_option("--mask-ratio", o.mask_ratio, "Fraction of cell occurrences masked");
  }
  if (all) return;
  if (has({Stage::kPretrain, Stage::kFinetune, Stage::kCompare})) {
    cmd->add_option("--epochs", o.epochs, "Training epochs");
    cmd->add_option("--batch-size", o.batch_size, "Batch size");
    cmd->add_option("--lr", o.lr, "Peak learning rate");
  }
  if (has({Stage::kEval})) cmd->add_option("--batch-size", o.batch_size, "Evaluation batch size");
  if (has({Stage::kFinetune, Stage::kCompare})) {
    cmd->add_option("--examples", o.examples, "Examples per task");
    cmd->add_option("--tasks", o.tasks, "Subset of nsp, dp, tua");
  }
}

ltm::RunConfig resolve(const Overrides& o, std::optional<Stage> stage) {
  ltm::RunConfig c = o.config_path.empty() ? ltm::RunConfig{} : ltm::load_run_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out_dir = *o.out;
  if (o.checkins) c.checkins = *o.checkins;
  if (o.users) c.synth.n_users = *o.users;
  if (o.months) c.synth.months = *o.months;
  if (o.precision) c.corpus.precision = *o.precision;
  if (o.window) c.corpus.window_seconds = *o.window;
  if (o.vocab_size) c.tokenizer.vocab_size = *o.vocab_size;
  if (o.chunk_size) c.pretrain_data.chunk_size = *o.chunk_size;
  if (o.mask_ratio) c.pretrain_data.mask_ratio = *o.mask_ratio;
  if (stage == Stage::kPretrain) {
    if (o.epochs) c.pretrain.epochs = *o.epochs;
    if (o.batch_size) c.pretrain.batch_size = *o.batch_size;
    if (o.lr) c.pretrain.peak_lr = *o.lr;
  }
  if (stage == Stage::kFinetune || stage == Stage::kCompare) {
    if (o.epochs) c.finetune.fine_tune.epochs = *o.epochs;
    if (o.batch_size) c.finetune.fine_tune.batch_size = *o.batch_size;
    if (o.lr) c.finetune.fine_tune.peak_lr = *o.lr;
    if (o.examples) c.finetune.n_examples = *o.examples;
    if (!o.tasks.empty()) {
      c.finetune.tasks.clear();
      for (const auto& t : o.tasks) c.finetune.tasks.push_back(ltm::tasks::parse_task(t));
    }
  }
  if (stage == Stage::kEval && o.batch_size) c.eval_batch_size = *o.batch_size;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Large trajectory model pipeline"};
  app.require_subcommand(1);
  Overrides o;

  std::vector<std::pair<CLI::App*, Stage>> stage_cmds;
  for (Stage s : {Stage::kSynth, Stage::kIngest, Stage::kBuildCorpus, Stage::kTrainTokenizer,
                  Stage::kBuildPretrainData, Stage::kPretrain, Stage::kFinetune, Stage::kCompare, Stage::kEval}) {
    auto* cmd = app.add_subcommand(std::string(ltm::stages::stage_name(s)), "Run the " +
                                                                              std::string(ltm::stages::stage_name(s)) +
                                                                              " stage");
    add_common(cmd, o);
    add_stage_flags(cmd, s, o);
    stage_cmds.emplace_back(cmd, s);
  }
  auto* all = app.add_subcommand("all", "Run every stage in pipeline order");
  add_common(all, o);
  add_stage_flags(all, Stage::kSynth, o);
  auto* show = app.add_subcommand("config", "Print the resolved configuration as JSON");
  add_common(show, o);
  add_stage_flags(show, Stage::kSynth, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ltm::ExitCode::kConfig);
  }

  try {
    if (show->parsed()) {
      std::cout << ltm::to_json(resolve(o, std::nullopt)).dump(2) << '\n';
      return 0;
    }
    if (all->parsed()) {
      ltm::stages::Runner runner(resolve(o, std::nullopt), std::cerr);
      runner.run_all();
      return 0;
    }
    for (const auto& [cmd, s] : stage_cmds) {
      if (!cmd->parsed()) continue;
      ltm::stages::Runner runner(resolve(o, s), std::cerr);
      const auto r = runner.run(s);
      for (const auto& path : r.outputs) std::cout << path.string() << '\n';
    }
  } catch (const ltm::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ltm::ExitCode::kGeneric);
  }
  return 0;
}
