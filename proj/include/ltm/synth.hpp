#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "ltm/geocell.hpp"
#include "ltm/pipeline.hpp"

namespace ltm::synth {

/// Seeded synthetic check-in generator. Each user owns `anchors_per_user`
/// places (anchor 0 = home, 1 = work) and moves between them following a
/// fixed first-order routine whose transition matrix depends on the time of
/// day.
struct SynthConfig {
  int n_users = 60;
  int months = 34;
  std::string start_month = "2022-07";
  geo::BBox bbox{35.55, 35.80, 139.55, 139.90};
  int anchors_per_user = 5;
  /// Shared pool of places users draw anchors from; 0 draws anchors
  /// uniformly from the box instead.
  int n_pois = 400;
  /// Zipf exponent for anchor popularity within the pool.
  double poi_zipf = 0.8;
  double checkins_per_day = 2.0;
  double jitter_m = 100.0;
  /// Probability that a user's month is skipped entirely.
  double inactive_month_prob = 0.0;

  void validate() const;
};

nlohmann::json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j);

std::vector<pipeline::CheckIn> synth_generate(const SynthConfig& config, std::uint64_t seed);

}  // namespace ltm::synth
