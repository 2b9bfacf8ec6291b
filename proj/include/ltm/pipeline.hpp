#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ltm/geocell.hpp"

namespace ltm::pipeline {

inline constexpr std::int64_t kDefaultWindowSeconds = 600;
inline constexpr std::size_t kMinDistinctCells = 3;
inline constexpr std::size_t kMinClusterPoints = 10;

struct CheckIn {
  std::string user;
  geo::GeoPoint point;
  std::int64_t ts;
};

/// UTC calendar month.
struct YearMonth {
  int year = 1970;
  int month = 1;

  std::string to_string() const;
  static YearMonth parse(std::string_view text);
  static YearMonth of(std::int64_t unix_seconds);
  /// Unix seconds of the first instant of this month.
  std::int64_t start_seconds() const;
  YearMonth next() const;

  friend auto operator<=>(const YearMonth&, const YearMonth&) = default;
};

struct RawTrajectory {
  std::string user;
  YearMonth month;
  std::vector<CheckIn> points;
};

struct ClusterPoint {
  geo::CellId cell;
  std::int64_t t_start;
  std::int64_t t_end;
  std::uint32_t count;

  friend bool operator==(const ClusterPoint&, const ClusterPoint&) = default;
};

struct ClusteredTrajectory {
  /// Empty once the corpus has been split and anonymized.
  std::string user;
  YearMonth month;
  std::vector<ClusterPoint> points;

  std::size_t distinct_cells() const;
  std::vector<std::string> cells() const;

  friend bool operator==(const ClusteredTrajectory&, const ClusteredTrajectory&) = default;
};

enum class InputFormat { kJsonLines, kCsv };

struct IngestResult {
  std::vector<CheckIn> checkins;  // sorted by (user, ts)
  std::size_t rows = 0;
  std::size_t rejected = 0;
};

/// Parses check-in rows; bad rows are counted and skipped. Throws
/// CorpusQualityError when more than half of the rows are rejected.
IngestResult ingest(std::istream& in, InputFormat format);
/// Format chosen by extension (.csv, otherwise JSON Lines). Throws IoError.
IngestResult ingest_file(const std::filesystem::path& path);

/// Input must be sorted by (user, ts). One trajectory per (user, UTC month).
std::vector<RawTrajectory> assemble_monthly(std::span<const CheckIn> checkins);

/// Single-pass chain clustering: a check-in joins the open cluster iff it
/// falls in the same cell and at most window_s after the previous member.
ClusteredTrajectory cluster_points(const RawTrajectory& traj, int precision, std::int64_t window_s,
                                   const geo::CellCodec& codec = geo::InterleavedBase32Codec{});

struct FilterRule {
  std::size_t min_distinct_cells = kMinDistinctCells;
  std::size_t min_points = kMinClusterPoints;
};

bool keep_trajectory(const ClusteredTrajectory& traj, const FilterRule& rule = {});
std::vector<ClusteredTrajectory> filter_trajectories(std::vector<ClusteredTrajectory> trajs,
                                                     const FilterRule& rule = {});

/// Anonymous user grouping of the test split, aligned with its trajectories.
/// Groups are ordinals, never the original user keys.
struct UserLabelIndex {
  std::vector<int> group;
};

struct CorpusSplit {
  std::vector<ClusteredTrajectory> train;
  std::vector<ClusteredTrajectory> validation;
  std::vector<ClusteredTrajectory> test;
  UserLabelIndex test_users;
};

/// Canonical sort, seeded shuffle, then a contiguous 70/15/15 cut with the
/// remainder going to test. User keys are erased from every split.
CorpusSplit split_corpus(std::vector<ClusteredTrajectory> trajs, std::uint64_t seed);

// Corpus files: one trajectory per JSON line, {month, points:[{cell,t_start,t_end,count}]}.
std::string to_json_line(const ClusteredTrajectory& traj);
ClusteredTrajectory from_json_line(std::string_view line);
void write_corpus(const std::filesystem::path& path, std::span<const ClusteredTrajectory> trajs);
std::vector<ClusteredTrajectory> read_corpus(const std::filesystem::path& path);

void write_label_index(const std::filesystem::path& path, const UserLabelIndex& index);
UserLabelIndex read_label_index(const std::filesystem::path& path);

void write_checkins(std::ostream& out, std::span<const CheckIn> checkins);

}  // namespace ltm::pipeline
