#pragma once

#include <stdexcept>
#include <string>

namespace ltm {

// Process exit codes used by the CLI.
enum class ExitCode : int {
  kOk = 0,
  kGeneric = 1,
  kConfig = 2,
  kData = 3,
  kTraining = 4,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::kGeneric)
      : std::runtime_error(what), code_(code) {}
  ExitCode exit_code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Caller supplied an argument outside an operation's domain.
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(what, ExitCode::kData) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what, ExitCode::kData) {}
};

/// Too many rows of an input corpus were rejected.
class CorpusQualityError : public Error {
 public:
  explicit CorpusQualityError(const std::string& what) : Error(what, ExitCode::kData) {}
};

/// A token sequence cannot be turned back into its cell code.
class LossyRoundTripError : public Error {
 public:
  explicit LossyRoundTripError(const std::string& what) : Error(what, ExitCode::kData) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what) : Error(what, ExitCode::kTraining) {}
};

class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& what) : Error(what, ExitCode::kData) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, ExitCode::kConfig) {}
};

/// An upstream stage artifact is missing or was produced under other inputs.
class StageError : public Error {
 public:
  explicit StageError(const std::string& what) : Error(what, ExitCode::kData) {}
};

class StalenessError : public Error {
 public:
  explicit StalenessError(const std::string& what) : Error(what, ExitCode::kData) {}
};

}  // namespace ltm
