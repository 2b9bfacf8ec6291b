#include "ltm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include "json.hpp"

#include "ltm/error.hpp"
#include "ltm/io.hpp"
#include "ltm/rng.hpp"

namespace ltm::pipeline {

using json = nlohmann::json;

std::string YearMonth::to_string() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d", year, month);
  return buf;
}

YearMonth YearMonth::parse(std::string_view text) {
  int y = 0, m = 0;
  if (text.size() != 7 || text[4] != '-' ||
      std::from_chars(text.data(), text.data() + 4, y).ptr != text.data() + 4 ||
      std::from_chars(text.data() + 5, text.data() + 7, m).ptr != text.data() + 7 || m < 1 || m > 12) {
    throw InputError("malformed month '" + std::string(text) + "', expected YYYY-MM");
  }
  return {y, m};
}

YearMonth YearMonth::of(std::int64_t unix_seconds) {
  using namespace std::chrono;
  const sys_seconds tp{seconds{unix_seconds}};
  const year_month_day ymd{floor<days>(tp)};
  return {static_cast<int>(ymd.year()), static_cast<int>(static_cast<unsigned>(ymd.month()))};
}

std::int64_t YearMonth::start_seconds() const {
  using namespace std::chrono;
  const sys_days d = std::chrono::year{year} / std::chrono::month{static_cast<unsigned>(month)} / 1;
  return duration_cast<seconds>(d.time_since_epoch()).count();
}

YearMonth YearMonth::next() const { return month == 12 ? YearMonth{year + 1, 1} : YearMonth{year, month + 1}; }

std::size_t ClusteredTrajectory::distinct_cells() const {
  std::set<std::string_view> seen;
  for (const auto& p : points) seen.insert(p.cell.code());
  return seen.size();
}

std::vector<std::string> ClusteredTrajectory::cells() const {
  std::vector<std::string> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.cell.code());
  return out;
}

namespace {

std::optional<CheckIn> parse_json_row(const std::string& line) {
  const json row = json::parse(line, nullptr, false);
  if (row.is_discarded() || !row.is_object()) return std::nullopt;
  const auto user = row.find("user");
  const auto lat = row.find("lat");
  const auto lon = row.find("lon");
  const auto ts = row.find("ts");
  if (user == row.end() || lat == row.end() || lon == row.end() || ts == row.end()) return std::nullopt;
  if (!user->is_string() || !lat->is_number() || !lon->is_number() || !ts->is_number_integer()) {
    return std::nullopt;
  }
  const double la = lat->get<double>();
  const double lo = lon->get<double>();
  const std::int64_t t = ts->get<std::int64_t>();
  if (!geo::GeoPoint::valid(la, lo) || t < 0) return std::nullopt;
  return CheckIn{user->get<std::string>(), geo::GeoPoint(la, lo), t};
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

std::optional<CheckIn> parse_csv_row(std::string_view line, const std::array<int, 4>& columns) {
  const auto fields = split_csv(line);
  for (int c : columns) {
    if (c < 0 || static_cast<std::size_t>(c) >= fields.size()) return std::nullopt;
  }
  double la = 0, lo = 0;
  std::int64_t t = 0;
  if (!parse_number(fields[static_cast<std::size_t>(columns[1])], la) ||
      !parse_number(fields[static_cast<std::size_t>(columns[2])], lo) ||
      !parse_number(fields[static_cast<std::size_t>(columns[3])], t)) {
    return std::nullopt;
  }
  const auto user = trim(fields[static_cast<std::size_t>(columns[0])]);
  if (user.empty() || !geo::GeoPoint::valid(la, lo) || t < 0) return std::nullopt;
  return CheckIn{std::string(user), geo::GeoPoint(la, lo), t};
}

}  // namespace

IngestResult ingest(std::istream& in, InputFormat format) {
  IngestResult result;
  std::string line;
  std::array<int, 4> columns{-1, -1, -1, -1};
  bool header_seen = format != InputFormat::kCsv;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (!header_seen) {
      header_seen = true;
      const auto fields = split_csv(line);
      static constexpr std::string_view kNames[4] = {"user", "lat", "lon", "ts"};
      for (std::size_t i = 0; i < fields.size(); ++i) {
        for (int k = 0; k < 4; ++k) {
          if (trim(fields[i]) == kNames[k]) columns[static_cast<std::size_t>(k)] = static_cast<int>(i);
        }
      }
      if (std::find(columns.begin(), columns.end(), -1) != columns.end()) {
        throw InputError("CSV header must name columns user,lat,lon,ts");
      }
      continue;
    }
    ++result.rows;
    auto row = format == InputFormat::kCsv ? parse_csv_row(line, columns) : parse_json_row(line);
    if (row) {
      result.checkins.push_back(std::move(*row));
    } else {
      ++result.rejected;
    }
  }
  if (in.bad()) throw IoError("read error while ingesting check-ins");
  if (result.rows > 0 && 2 * result.rejected > result.rows) {
    throw CorpusQualityError("rejected " + std::to_string(result.rejected) + " of " + std::to_string(result.rows) +
                             " check-in rows");
  }
  std::stable_sort(result.checkins.begin(), result.checkins.end(), [](const CheckIn& a, const CheckIn& b) {
    return std::tie(a.user, a.ts) < std::tie(b.user, b.ts);
  });
  return result;
}

IngestResult ingest_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read check-in file " + path.string());
  const auto format = path.extension() == ".csv" ? InputFormat::kCsv : InputFormat::kJsonLines;
  return ingest(in, format);
}

std::vector<RawTrajectory> assemble_monthly(std::span<const CheckIn> checkins) {
  std::vector<RawTrajectory> out;
  for (const auto& c : checkins) {
    const auto month = YearMonth::of(c.ts);
    if (out.empty() || out.back().user != c.user || out.back().month != month) {
      out.push_back(RawTrajectory{c.user, month, {}});
    }
    out.back().points.push_back(c);
  }
  return out;
}

ClusteredTrajectory cluster_points(const RawTrajectory& traj, int precision, std::int64_t window_s,
                                   const geo::CellCodec& codec) {
  if (window_s <= 0) throw InputError("clustering window must be positive");
  ClusteredTrajectory out{traj.user, traj.month, {}};
  std::int64_t previous_ts = 0;
  for (const auto& c : traj.points) {
    auto cell = codec.encode(c.point, precision);
    if (!out.points.empty() && out.points.back().cell == cell && c.ts - previous_ts <= window_s) {
      auto& open = out.points.back();
      open.t_end = c.ts;
      ++open.count;
    } else {
      out.points.push_back(ClusterPoint{std::move(cell), c.ts, c.ts, 1});
    }
    previous_ts = c.ts;
  }
  return out;
}

bool keep_trajectory(const ClusteredTrajectory& traj, const FilterRule& rule) {
  return traj.points.size() >= rule.min_points && traj.distinct_cells() >= rule.min_distinct_cells;
}

std::vector<ClusteredTrajectory> filter_trajectories(std::vector<ClusteredTrajectory> trajs, const FilterRule& rule) {
  std::erase_if(trajs, [&](const ClusteredTrajectory& t) { return !keep_trajectory(t, rule); });
  return trajs;
}

CorpusSplit split_corpus(std::vector<ClusteredTrajectory> trajs, std::uint64_t seed) {
  if (trajs.size() < 10) {
    throw InputError("need at least 10 trajectories to split, got " + std::to_string(trajs.size()));
  }
  // Canonical order first so upstream ordering never leaks into the split.
  std::sort(trajs.begin(), trajs.end(), [](const ClusteredTrajectory& a, const ClusteredTrajectory& b) {
    if (a.user != b.user) return a.user < b.user;
    if (a.month != b.month) return a.month < b.month;
    return to_json_line(a) < to_json_line(b);
  });
  Rng rng(derive_seed(seed, 0x5b11'7ULL));
  rng.shuffle(std::span(trajs));

  const std::size_t n = trajs.size();
  const std::size_t n_train = n * 70 / 100;
  const std::size_t n_val = n * 15 / 100;

  CorpusSplit split;
  std::map<std::string, int> groups;
  for (std::size_t i = 0; i < n; ++i) {
    auto& t = trajs[i];
    if (i < n_train) {
      t.user.clear();
      split.train.push_back(std::move(t));
    } else if (i < n_train + n_val) {
      t.user.clear();
      split.validation.push_back(std::move(t));
    } else {
      const auto [it, inserted] = groups.emplace(t.user, static_cast<int>(groups.size()));
      split.test_users.group.push_back(it->second);
      t.user.clear();
      split.test.push_back(std::move(t));
    }
  }
  return split;
}

std::string to_json_line(const ClusteredTrajectory& traj) {
  json points = json::array();
  for (const auto& p : traj.points) {
    points.push_back(json{{"cell", p.cell.code()}, {"t_start", p.t_start}, {"t_end", p.t_end}, {"count", p.count}});
  }
  json row{{"month", traj.month.to_string()}, {"points", std::move(points)}};
  return row.dump();
}

ClusteredTrajectory from_json_line(std::string_view line) {
  const json row = json::parse(line, nullptr, false);
  if (row.is_discarded()) throw InputError("malformed corpus line");
  try {
    ClusteredTrajectory t;
    t.month = YearMonth::parse(row.at("month").get<std::string>());
    for (const auto& p : row.at("points")) {
      ClusterPoint cp{geo::CellId(p.at("cell").get<std::string>()), p.at("t_start").get<std::int64_t>(),
                      p.at("t_end").get<std::int64_t>(), p.at("count").get<std::uint32_t>()};
      if (cp.t_start > cp.t_end || cp.count < 1) throw InputError("invalid cluster point in corpus line");
      t.points.push_back(std::move(cp));
    }
    return t;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed corpus line: ") + e.what());
  }
}

void write_corpus(const std::filesystem::path& path, std::span<const ClusteredTrajectory> trajs) {
  std::string out;
  for (const auto& t : trajs) {
    out += to_json_line(t);
    out += '\n';
  }
  io::write_text(path, out);
}

std::vector<ClusteredTrajectory> read_corpus(const std::filesystem::path& path) {
  std::vector<ClusteredTrajectory> out;
  for (const auto& line : io::read_lines(path)) out.push_back(from_json_line(line));
  return out;
}

void write_label_index(const std::filesystem::path& path, const UserLabelIndex& index) {
  std::string out;
  for (int g : index.group) {
    out += std::to_string(g);
    out += '\n';
  }
  io::write_text(path, out);
}

UserLabelIndex read_label_index(const std::filesystem::path& path) {
  UserLabelIndex index;
  for (const auto& line : io::read_lines(path)) {
    int g = 0;
    if (std::from_chars(line.data(), line.data() + line.size(), g).ec != std::errc{}) {
      throw InputError("malformed label index line '" + line + "'");
    }
    index.group.push_back(g);
  }
  return index;
}

void write_checkins(std::ostream& out, std::span<const CheckIn> checkins) {
  char buf[64];
  for (const auto& c : checkins) {
    out << "{\"user\":" << json(c.user).dump();
    std::snprintf(buf, sizeof(buf), ",\"lat\":%.7f,\"lon\":%.7f", c.point.lat(), c.point.lon());
    out << buf << ",\"ts\":" << c.ts << "}\n";
  }
}

}  // namespace ltm::pipeline
