#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "ltm/run_config.hpp"

namespace ltm::stages {

enum class Stage {
  kSynth,
  kIngest,
  kBuildCorpus,
  kTrainTokenizer,
  kBuildPretrainData,
  kPretrain,
  kFinetune,
  kCompare,
  kEval,
};

std::string_view stage_name(Stage s);
/// Throws ConfigError for an unknown name.
Stage parse_stage(std::string_view name);
/// Pipeline order. The synth stage is included only when the run has no
/// external check-in file.
std::vector<Stage> pipeline_order(const RunConfig& config);

/// Upstream stages whose manifests a stage verifies before running.
std::vector<Stage> upstream_of(Stage s, const RunConfig& config);

/// Hash of the settings a stage depends on: its own config section, the
/// seed, and the hashes of its upstream stages.
std::string config_hash(const RunConfig& config, Stage s);

struct Manifest {
  std::string stage;
  std::string config_hash;
  std::uint64_t seed = 0;
  /// file -> SHA-256; paths inside the run directory are relative to it
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

std::filesystem::path manifest_path(const std::filesystem::path& out_dir, Stage s);
std::optional<Manifest> read_manifest(const std::filesystem::path& path);

/// Exclusive lock on a run directory, held for the lifetime of the object.
/// Throws StageError when another process holds it.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct StageResult {
  Stage stage;
  /// true when an up-to-date manifest made the run a no-op
  bool skipped = false;
  std::vector<std::filesystem::path> outputs;
};

/// Runs pipeline stages inside one output directory.
///
/// Before a stage runs, every input artifact must exist (StageError naming
/// the missing path), each upstream manifest must carry the hash the current
/// config implies (StalenessError), and input files must still match the
/// hashes their producer recorded (StalenessError). A stage whose own
/// manifest matches is skipped.
class Runner {
 public:
  Runner(RunConfig config, std::ostream& log);

  StageResult run(Stage s);
  std::vector<StageResult> run_all();

  const RunConfig& config() const { return config_; }

 private:
  StageResult run_locked(Stage s);

  RunConfig config_;
  std::ostream& log_;
};

}  // namespace ltm::stages
