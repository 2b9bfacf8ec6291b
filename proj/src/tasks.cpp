#include "ltm/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "json.hpp"

#include "ltm/error.hpp"
#include "ltm/io.hpp"
#include "ltm/rng.hpp"

namespace ltm::tasks {

using json = nlohmann::json;
using pipeline::ClusteredTrajectory;

std::string_view task_name(Task task) {
  switch (task) {
    case Task::kNsp:
      return "nsp";
    case Task::kDp:
      return "dp";
    case Task::kTua:
      return "tua";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  if (name == "nsp") return Task::kNsp;
  if (name == "dp") return Task::kDp;
  if (name == "tua") return Task::kTua;
  throw InputError("unknown task '" + std::string(name) + "' (expected nsp, dp or tua)");
}

void TaskExample::pack(std::vector<int>& ids, std::vector<int>& segments) const {
  ids.clear();
  segments.clear();
  ids.push_back(tok::kClsId);
  ids.insert(ids.end(), ids_a.begin(), ids_a.end());
  ids.push_back(tok::kSepId);
  segments.assign(ids.size(), 0);
  if (!ids_b.empty()) {
    ids.insert(ids.end(), ids_b.begin(), ids_b.end());
    ids.push_back(tok::kSepId);
    segments.resize(ids.size(), 1);
  }
}

std::size_t TaskExample::packed_length() const { return ids_a.size() + ids_b.size() + (ids_b.empty() ? 2 : 3); }

std::size_t TaskDataset::count(int label) const {
  return static_cast<std::size_t>(
      std::count_if(examples.begin(), examples.end(), [label](const TaskExample& e) { return e.label == label; }));
}

const std::vector<int>& CellTokenizer::operator()(const std::string& cell) {
  auto it = cache_.find(cell);
  if (it == cache_.end()) it = cache_.emplace(cell, tok::tokenize_cell(*vocab_, cell)).first;
  return it->second;
}

namespace {

using Runs = std::vector<const std::vector<int>*>;

Runs runs_of(CellTokenizer& tokenize, const ClusteredTrajectory& t, std::size_t begin, std::size_t end) {
  Runs runs;
  for (std::size_t i = begin; i < end; ++i) runs.push_back(&tokenize(t.points[i].cell.code()));
  return runs;
}

std::size_t token_count(const Runs& runs, std::size_t from, std::size_t to) {
  std::size_t n = 0;
  for (std::size_t i = from; i < to; ++i) n += runs[i]->size();
  return n;
}

std::vector<int> flatten(const Runs& runs, std::size_t from, std::size_t to) {
  std::vector<int> out;
  for (std::size_t i = from; i < to; ++i) out.insert(out.end(), runs[i]->begin(), runs[i]->end());
  return out;
}

// Fits A and B into `budget` tokens by dropping whole cells. A keeps its
// tail (the side next to the cut) when head_a is true, otherwise its head.
TaskExample fit_pair(const Runs& a, const Runs& b, std::size_t budget, bool head_a, int label) {
  std::size_t a_from = 0, a_to = a.size(), b_to = b.size();
  std::size_t na = token_count(a, 0, a.size()), nb = token_count(b, 0, b.size());
  while (na + nb > budget) {
    const bool trim_a = (na >= nb && a_to - a_from > 1) || b_to <= 1;
    if (trim_a) {
      if (a_to - a_from <= 1) throw InputError("a single cell does not fit the sequence budget");
      if (head_a) {
        na -= a[a_from++]->size();
      } else {
        na -= a[--a_to]->size();
      }
    } else {
      nb -= b[--b_to]->size();
    }
  }
  return TaskExample{flatten(a, a_from, a_to), flatten(b, 0, b_to), label};
}

std::vector<int> balanced_labels(std::size_t n, Rng& rng) {
  std::vector<int> labels(n, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n / 2), 1);
  rng.shuffle(std::span(labels));
  return labels;
}

void require_budget(std::size_t max_len, std::size_t specials) {
  if (max_len < specials + 2) throw InputError("max_len too small for task packing");
}

}  // namespace

TaskDataset build_nsp(std::span<const ClusteredTrajectory> split, const tok::Vocabulary& vocab,
                      std::size_t n_examples, std::size_t max_len, std::uint64_t seed) {
  require_budget(max_len, 3);
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i].points.size() >= 4) eligible.push_back(i);
  }
  if (eligible.size() < 2) {
    throw InputError("next sub-trajectory prediction needs at least two trajectories with 4+ cell occurrences, have " +
                     std::to_string(eligible.size()));
  }
  Rng rng(derive_seed(seed, 0x25b));
  CellTokenizer tokenize(vocab);
  TaskDataset data{Task::kNsp, 2, {"negative", "positive"}, {}};
  for (int label : balanced_labels(n_examples, rng)) {
    const std::size_t ti = eligible[rng.below(eligible.size())];
    const auto& t = split[ti];
    const std::size_t n = t.points.size();
    const auto lo = static_cast<std::int64_t>(std::ceil(0.25 * static_cast<double>(n)));
    const auto hi = static_cast<std::int64_t>(std::floor(0.75 * static_cast<double>(n)));
    const auto cut = static_cast<std::size_t>(std::clamp<std::int64_t>(rng.between(lo, std::max(lo, hi)), 1,
                                                                       static_cast<std::int64_t>(n) - 1));
    const Runs a = runs_of(tokenize, t, 0, cut);
    Runs b;
    if (label == 1) {
      b = runs_of(tokenize, t, cut, n);
    } else {
      std::size_t oi = ti;
      while (oi == ti) oi = eligible[rng.below(eligible.size())];
      const auto& o = split[oi];
      const std::size_t m = o.points.size();
      const double frac = static_cast<double>(cut) / static_cast<double>(n);
      const auto ocut = static_cast<std::size_t>(std::clamp<std::int64_t>(
          std::llround(frac * static_cast<double>(m)), 1, static_cast<std::int64_t>(m) - 1));
      b = runs_of(tokenize, o, ocut, m);
    }
    data.examples.push_back(fit_pair(a, b, max_len - 3, true, label));
  }
  return data;
}

TaskDataset build_dp(std::span<const ClusteredTrajectory> split, const tok::Vocabulary& vocab, std::size_t n_examples,
                     std::size_t max_len, std::uint64_t seed, std::size_t min_support) {
  require_budget(max_len, 2);
  std::map<std::string, std::size_t> support;
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i].points.size() < 8) continue;
    eligible.push_back(i);
    ++support[split[i].points.back().cell.code()];
  }
  TaskDataset data{Task::kDp, 0, {}, {}};
  std::map<std::string, int> class_of;
  for (const auto& [cell, n] : support) {
    if (n >= min_support) {
      class_of.emplace(cell, static_cast<int>(data.class_names.size()));
      data.class_names.push_back(cell);
    }
  }
  data.n_classes = data.class_names.size();
  if (data.n_classes < 2) {
    throw InputError("destination prediction needs at least 2 destination classes with support >= " +
                     std::to_string(min_support) + ", found " + std::to_string(data.n_classes));
  }

  std::vector<std::size_t> kept;
  for (std::size_t i : eligible) {
    if (class_of.count(split[i].points.back().cell.code())) kept.push_back(i);
  }
  Rng rng(derive_seed(seed, 0xd9));
  rng.shuffle(std::span(kept));
  if (kept.size() > n_examples) kept.resize(n_examples);

  CellTokenizer tokenize(vocab);
  for (std::size_t i : kept) {
    const auto& t = split[i];
    const auto prefix = static_cast<std::size_t>(std::ceil(0.25 * static_cast<double>(t.points.size())));
    Runs runs = runs_of(tokenize, t, 0, prefix);
    // Keep the earliest cells that fit.
    std::size_t end = runs.size(), tokens = token_count(runs, 0, end);
    while (tokens > max_len - 2 && end > 1) tokens -= runs[--end]->size();
    data.examples.push_back(TaskExample{flatten(runs, 0, end), {}, class_of.at(t.points.back().cell.code())});
  }
  return data;
}

namespace {

struct PairPools {
  std::vector<std::pair<std::size_t, std::size_t>> positives;
  std::vector<std::size_t> members;  // trajectories usable for negatives
};

PairPools pair_pools(std::span<const ClusteredTrajectory> split, const pipeline::UserLabelIndex& users) {
  if (users.group.size() != split.size()) {
    throw InputError("user label index has " + std::to_string(users.group.size()) + " entries for " +
                     std::to_string(split.size()) + " trajectories");
  }
  PairPools pools;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i].points.empty()) continue;
    pools.members.push_back(i);
    for (std::size_t j = i + 1; j < split.size(); ++j) {
      if (users.group[i] == users.group[j] && split[i].month != split[j].month && !split[j].points.empty()) {
        pools.positives.emplace_back(i, j);
      }
    }
  }
  return pools;
}

}  // namespace

TuaPool tua_pool(std::span<const ClusteredTrajectory> split, const pipeline::UserLabelIndex& users) {
  const auto pools = pair_pools(split, users);
  TuaPool out{pools.positives.size(), 0};
  for (std::size_t a = 0; a < pools.members.size(); ++a) {
    for (std::size_t b = a + 1; b < pools.members.size(); ++b) {
      out.negative_pairs += users.group[pools.members[a]] != users.group[pools.members[b]];
    }
  }
  return out;
}

TaskDataset build_tua(std::span<const ClusteredTrajectory> split, const pipeline::UserLabelIndex& users,
                      const tok::Vocabulary& vocab, std::size_t n_examples, std::size_t max_len, std::uint64_t seed) {
  require_budget(max_len, 3);
  auto pools = pair_pools(split, users);
  if (pools.positives.empty()) {
    throw InputError("trajectory-user association needs a user with trajectories in two different months");
  }
  const std::set<int> distinct_users(users.group.begin(), users.group.end());
  if (distinct_users.size() < 2) throw InputError("trajectory-user association needs at least two users");

  Rng rng(derive_seed(seed, 0x70a));
  rng.shuffle(std::span(pools.positives));
  const std::size_t n_pos = std::min(n_examples / 2, pools.positives.size());
  const std::size_t n_neg = n_pos == n_examples / 2 ? n_examples - n_pos : n_pos;
  const TuaPool available = tua_pool(split, users);
  if (available.negative_pairs < n_neg) throw InputError("not enough cross-user pairs for negatives");

  std::vector<std::pair<std::pair<std::size_t, std::size_t>, int>> pairs;
  for (std::size_t k = 0; k < n_pos; ++k) pairs.push_back({pools.positives[k], 1});
  std::set<std::pair<std::size_t, std::size_t>> used;
  while (used.size() < n_neg) {
    std::size_t i = pools.members[rng.below(pools.members.size())];
    std::size_t j = pools.members[rng.below(pools.members.size())];
    if (users.group[i] == users.group[j]) continue;
    if (i > j) std::swap(i, j);
    if (used.insert({i, j}).second) pairs.push_back({{i, j}, 0});
  }
  rng.shuffle(std::span(pairs));

  CellTokenizer tokenize(vocab);
  TaskDataset data{Task::kTua, 2, {"negative", "positive"}, {}};
  for (auto [ij, label] : pairs) {
    auto [i, j] = ij;
    if (rng.below(2) == 1) std::swap(i, j);
    const Runs a = runs_of(tokenize, split[i], 0, split[i].points.size());
    const Runs b = runs_of(tokenize, split[j], 0, split[j].points.size());
    data.examples.push_back(fit_pair(a, b, max_len - 3, false, label));
  }
  return data;
}

void write_dataset(const std::filesystem::path& path, const TaskDataset& data) {
  std::string out = json{{"task", task_name(data.task)}, {"n_classes", data.n_classes}, {"class_names", data.class_names}}
                        .dump();
  out += '\n';
  for (const auto& e : data.examples) {
    out += json{{"ids_a", e.ids_a}, {"ids_b", e.ids_b}, {"label", e.label}}.dump();
    out += '\n';
  }
  io::write_text(path, out);
}

TaskDataset read_dataset(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.empty()) throw InputError("task dataset file is empty: " + path.string());
  try {
    const auto header = json::parse(lines.front());
    TaskDataset data;
    data.task = parse_task(header.at("task").get<std::string>());
    data.n_classes = header.at("n_classes").get<std::size_t>();
    data.class_names = header.at("class_names").get<std::vector<std::string>>();
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto row = json::parse(lines[i]);
      data.examples.push_back(TaskExample{row.at("ids_a").get<std::vector<int>>(), row.at("ids_b").get<std::vector<int>>(),
                                          row.at("label").get<int>()});
    }
    return data;
  } catch (const json::exception& e) {
    throw InputError("malformed task dataset " + path.string() + ": " + e.what());
  }
}

}  // namespace ltm::tasks
