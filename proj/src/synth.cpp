#include "ltm/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "json.hpp"

#include "ltm/error.hpp"
#include "ltm/rng.hpp"

namespace ltm::synth {

using json = nlohmann::json;

namespace {

constexpr double kMetersPerDegree = 111320.0;

// Routine weights by destination role: home, work, other anchors (shared).
// Morning covers [06:00, 14:00), evening the rest of the waking day.
constexpr std::array<double, 3> kMorning = {0.20, 0.55, 0.25};
constexpr std::array<double, 3> kEvening = {0.55, 0.10, 0.35};
constexpr double kStayBonus = 0.15;

std::size_t weighted_pick(Rng& rng, const std::vector<double>& weights) {
  double total = 0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return weights.size() - 1;
}

std::vector<double> transition_row(std::size_t from, std::size_t k, bool morning) {
  const auto& base = morning ? kMorning : kEvening;
  std::vector<double> row(k, 0.0);
  row[0] = base[0];
  if (k > 1) row[1] = base[1];
  if (k > 2) {
    for (std::size_t j = 2; j < k; ++j) row[j] = base[2] / static_cast<double>(k - 2);
  } else {
    row[0] += base[2];
  }
  row[from] += kStayBonus;
  return row;
}

geo::GeoPoint jittered(Rng& rng, const geo::GeoPoint& anchor, double sigma_m) {
  const double dlat = rng.normal() * sigma_m / kMetersPerDegree;
  const double coslat = std::max(1e-6, std::cos(anchor.lat() * std::numbers::pi / 180.0));
  const double dlon = rng.normal() * sigma_m / (kMetersPerDegree * coslat);
  return geo::GeoPoint(std::clamp(anchor.lat() + dlat, -90.0, 90.0), std::clamp(anchor.lon() + dlon, -180.0, 180.0));
}

}  // namespace

void SynthConfig::validate() const {
  if (n_users < 1 || months < 1) throw InputError("synth: n_users and months must be positive");
  if (anchors_per_user < 1) throw InputError("synth: anchors_per_user must be positive");
  if (!(checkins_per_day > 0)) throw InputError("synth: checkins_per_day must be positive");
  if (jitter_m < 0 || n_pois < 0) throw InputError("synth: jitter_m and n_pois must be non-negative");
  if (!(inactive_month_prob >= 0 && inactive_month_prob < 1)) throw InputError("synth: inactive_month_prob in [0,1)");
  if (!(bbox.lat_min < bbox.lat_max) || !(bbox.lon_min < bbox.lon_max) ||
      !geo::GeoPoint::valid(bbox.lat_min, bbox.lon_min) || !geo::GeoPoint::valid(bbox.lat_max, bbox.lon_max)) {
    throw InputError("synth: degenerate or invalid bounding box");
  }
  pipeline::YearMonth::parse(start_month);
}

json to_json(const SynthConfig& c) {
  return json{{"n_users", c.n_users},
              {"months", c.months},
              {"start_month", c.start_month},
              {"bbox", {c.bbox.lat_min, c.bbox.lat_max, c.bbox.lon_min, c.bbox.lon_max}},
              {"anchors_per_user", c.anchors_per_user},
              {"n_pois", c.n_pois},
              {"poi_zipf", c.poi_zipf},
              {"checkins_per_day", c.checkins_per_day},
              {"jitter_m", c.jitter_m},
              {"inactive_month_prob", c.inactive_month_prob}};
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  c.n_users = j.value("n_users", c.n_users);
  c.months = j.value("months", c.months);
  c.start_month = j.value("start_month", c.start_month);
  if (j.contains("bbox")) {
    const auto& b = j.at("bbox");
    if (!b.is_array() || b.size() != 4) throw InputError("synth: bbox must be [lat_min, lat_max, lon_min, lon_max]");
    c.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
  }
  c.anchors_per_user = j.value("anchors_per_user", c.anchors_per_user);
  c.n_pois = j.value("n_pois", c.n_pois);
  c.poi_zipf = j.value("poi_zipf", c.poi_zipf);
  c.checkins_per_day = j.value("checkins_per_day", c.checkins_per_day);
  c.jitter_m = j.value("jitter_m", c.jitter_m);
  c.inactive_month_prob = j.value("inactive_month_prob", c.inactive_month_prob);
  return c;
}

std::vector<pipeline::CheckIn> synth_generate(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  const auto& box = config.bbox;
  Rng pool_rng(derive_seed(seed, 1));
  auto uniform_point = [&box](Rng& rng) {
    return geo::GeoPoint(rng.uniform(box.lat_min, box.lat_max), rng.uniform(box.lon_min, box.lon_max));
  };

  std::vector<geo::GeoPoint> pois;
  std::vector<double> popularity;
  for (int i = 0; i < config.n_pois; ++i) {
    pois.push_back(uniform_point(pool_rng));
    popularity.push_back(1.0 / std::pow(static_cast<double>(i + 1), config.poi_zipf));
  }

  const auto first_month = pipeline::YearMonth::parse(config.start_month);
  const std::size_t k = static_cast<std::size_t>(config.anchors_per_user);
  const int width = static_cast<int>(std::to_string(config.n_users).size());

  std::vector<pipeline::CheckIn> out;
  for (int u = 0; u < config.n_users; ++u) {
    Rng rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(u)));
    char name[32];
    std::snprintf(name, sizeof(name), "user%0*d", width, u);

    std::vector<geo::GeoPoint> anchors;
    std::vector<std::size_t> taken;
    while (anchors.size() < k) {
      if (pois.empty()) {
        anchors.push_back(uniform_point(rng));
        continue;
      }
      std::size_t pick = weighted_pick(rng, popularity);
      // Distinct anchors when the pool allows it.
      for (int attempt = 0; attempt < 32 && pois.size() >= k &&
                            std::find(taken.begin(), taken.end(), pick) != taken.end();
           ++attempt) {
        pick = weighted_pick(rng, popularity);
      }
      taken.push_back(pick);
      anchors.push_back(pois[pick]);
    }

    const double mean_gap_s = 86400.0 / config.checkins_per_day;
    auto month = first_month;
    for (int m = 0; m < config.months; ++m, month = month.next()) {
      if (config.inactive_month_prob > 0 && rng.uniform() < config.inactive_month_prob) continue;
      const std::int64_t begin = month.start_seconds();
      const std::int64_t end = month.next().start_seconds();
      std::size_t current = 0;
      double t = static_cast<double>(begin) + rng.exponential(1.0 / mean_gap_s);
      while (t < static_cast<double>(end)) {
        const auto ts = static_cast<std::int64_t>(t);
        const int hour = static_cast<int>((ts % 86400) / 3600);
        if (hour < 6) {
          current = 0;
        } else {
          current = weighted_pick(rng, transition_row(current, k, hour < 14));
        }
        out.push_back(pipeline::CheckIn{name, jittered(rng, anchors[current], config.jitter_m), ts});
        t += rng.exponential(1.0 / mean_gap_s);
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const pipeline::CheckIn& a, const pipeline::CheckIn& b) {
    return std::tie(a.user, a.ts) < std::tie(b.user, b.ts);
  });
  return out;
}

}  // namespace ltm::synth
