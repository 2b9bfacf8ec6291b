#include "ltm/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

#include "ltm/error.hpp"
#include "ltm/io.hpp"
#include "ltm/rng.hpp"

namespace ltm::masking {

using json = nlohmann::json;

std::size_t Chunk::real_length() const {
  return static_cast<std::size_t>(std::count(attention_mask.begin(), attention_mask.end(), 1));
}

int Chunk::occurrences() const {
  int w = -1;
  for (int id : word_ids) w = std::max(w, id);
  return w + 1;
}

std::size_t MaskedChunk::labeled_count() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](int l) { return l != kIgnoreLabel; }));
}

std::vector<Chunk> chunk_sequence(const tok::TokenSequence& seq, std::size_t chunk_size) {
  if (chunk_size < 8) throw InputError("chunk_size must be at least 8");
  if (seq.ids.size() != seq.word_ids.size()) throw InputError("token sequence ids/word_ids length mismatch");

  std::vector<Chunk> out;
  Chunk current;
  int local_word = 0;
  auto flush = [&] {
    if (current.ids.empty()) return;
    const std::size_t pad = chunk_size - current.ids.size();
    current.ids.insert(current.ids.end(), pad, tok::kPadId);
    current.word_ids.insert(current.word_ids.end(), pad, tok::kNoWord);
    current.attention_mask.insert(current.attention_mask.end(), pad, 0);
    if (local_word >= 2) out.push_back(std::move(current));
    current = Chunk{};
    local_word = 0;
  };

  std::size_t i = 0;
  while (i < seq.ids.size()) {
    std::size_t j = i;
    while (j < seq.ids.size() && seq.word_ids[j] == seq.word_ids[i]) ++j;
    const std::size_t run = j - i;
    if (run > chunk_size) {
      throw InputError("cell occurrence of " + std::to_string(run) + " tokens exceeds chunk_size " +
                       std::to_string(chunk_size));
    }
    if (current.ids.size() + run > chunk_size) flush();
    for (std::size_t k = i; k < j; ++k) {
      current.ids.push_back(seq.ids[k]);
      current.word_ids.push_back(local_word);
      current.attention_mask.push_back(1);
    }
    ++local_word;
    i = j;
  }
  flush();
  return out;
}

int masked_occurrence_count(int occurrences, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InputError("mask ratio must be in [0, 1]");
  int m = static_cast<int>(std::lround(ratio * occurrences));
  if (ratio > 0.0 && ratio < 1.0) m = std::clamp(m, 1, std::max(1, occurrences - 1));
  return std::clamp(m, 0, occurrences);
}

MaskedChunk apply_whole_cell_mask(const Chunk& chunk, double ratio, std::uint64_t seed, std::uint64_t chunk_index,
                                  std::size_t mixture_vocab) {
  if (mixture_vocab != 0 && mixture_vocab <= static_cast<std::size_t>(tok::kNumSpecials)) {
    throw InputError("mask mixture needs a vocabulary beyond the special tokens");
  }
  const int occurrences = chunk.occurrences();
  if (occurrences < 2) throw InputError("masking needs a chunk with at least two cell occurrences");
  const int m = masked_occurrence_count(occurrences, ratio);

  std::vector<int> order(static_cast<std::size_t>(occurrences));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, chunk_index));
  // Partial Fisher-Yates: the first m entries are a uniform sample.
  for (int i = 0; i < m; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(occurrences - i));
    std::swap(order[static_cast<std::size_t>(i)], order[j]);
  }
  enum Fate : char { kKeep, kMask, kRandom, kUnchanged };
  std::vector<char> fate(static_cast<std::size_t>(occurrences), kKeep);
  for (int i = 0; i < m; ++i) fate[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = kMask;
  // separate stream, so the selection does not depend on the flag
  Rng mix(derive_seed(derive_seed(seed, chunk_index), 0x801010));
  if (mixture_vocab != 0) {
    for (auto& f : fate) {
      if (f != kMask) continue;
      const double u = mix.uniform();
      f = u < 0.8 ? kMask : (u < 0.9 ? kRandom : kUnchanged);
    }
  }

  MaskedChunk out{chunk.ids, std::vector<int>(chunk.ids.size(), kIgnoreLabel), chunk.attention_mask};
  for (std::size_t p = 0; p < chunk.ids.size(); ++p) {
    const int w = chunk.word_ids[p];
    if (w == tok::kNoWord || chunk.attention_mask[p] == 0) continue;
    const char f = fate[static_cast<std::size_t>(w)];
    if (f == kKeep) continue;
    out.labels[p] = chunk.ids[p];
    if (f == kMask) {
      out.input_ids[p] = tok::kMaskId;
    } else if (f == kRandom) {
      out.input_ids[p] = tok::kNumSpecials + static_cast<int>(mix.below(mixture_vocab - tok::kNumSpecials));
    }
  }
  return out;
}

std::string to_json_line(const MaskedChunk& chunk) {
  return json{{"input_ids", chunk.input_ids}, {"labels", chunk.labels}, {"attention_mask", chunk.attention_mask}}
      .dump();
}

MaskedChunk masked_chunk_from_json(std::string_view line) {
  const json row = json::parse(line, nullptr, false);
  if (row.is_discarded()) throw InputError("malformed masked chunk line");
  try {
    MaskedChunk c{row.at("input_ids").get<std::vector<int>>(), row.at("labels").get<std::vector<int>>(),
                  row.at("attention_mask").get<std::vector<int>>()};
    if (c.input_ids.size() != c.labels.size() || c.input_ids.size() != c.attention_mask.size()) {
      throw InputError("masked chunk arrays differ in length");
    }
    return c;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed masked chunk line: ") + e.what());
  }
}

void write_masked(const std::filesystem::path& path, std::span<const MaskedChunk> chunks) {
  std::string out;
  for (const auto& c : chunks) {
    out += to_json_line(c);
    out += '\n';
  }
  io::write_text(path, out);
}

std::vector<MaskedChunk> read_masked(const std::filesystem::path& path) {
  std::vector<MaskedChunk> out;
  for (const auto& line : io::read_lines(path)) out.push_back(masked_chunk_from_json(line));
  return out;
}

MaskedSplit mask_split(const tok::Vocabulary& vocab, std::span<const std::vector<std::string>> trajectories,
                       std::size_t chunk_size, double ratio, std::uint64_t seed, std::uint64_t stream,
                       bool mixture) {
  MaskedSplit out;
  const std::uint64_t split_seed = derive_seed(seed, stream);
  for (const auto& cells : trajectories) {
    if (cells.empty()) continue;
    for (auto& chunk : chunk_sequence(tok::encode_trajectory(vocab, cells), chunk_size)) {
      out.chunks.push_back(apply_whole_cell_mask(chunk, ratio, split_seed, out.sources.size(),
                                                    mixture ? vocab.size() : 0));
      out.sources.push_back(std::move(chunk));
    }
  }
  return out;
}

PretrainDatasetSummary build_pretrain_dataset(const tok::Vocabulary& vocab,
                                              std::span<const std::vector<std::string>> train,
                                              std::span<const std::vector<std::string>> validation,
                                              std::size_t chunk_size, double ratio, std::uint64_t seed,
                                              const PretrainDatasetPaths& out, bool mixture) {
  if (train.empty() || validation.empty()) throw InputError("pre-training needs non-empty train and validation splits");
  const auto train_split = mask_split(vocab, train, chunk_size, ratio, seed, 1, mixture);
  const auto val_split = mask_split(vocab, validation, chunk_size, ratio, seed, 2, mixture);
  if (train_split.chunks.empty() || val_split.chunks.empty()) {
    throw InputError("a split produced no chunks with two or more cell occurrences");
  }

  PretrainDatasetSummary summary{train_split.chunks.size(), val_split.chunks.size(), 0, 0};
  for (const auto* split : {&train_split, &val_split}) {
    for (const auto& c : split->sources) {
      const int w = c.occurrences();
      summary.total_occurrences += static_cast<std::size_t>(w);
      summary.masked_occurrences += static_cast<std::size_t>(masked_occurrence_count(w, ratio));
    }
  }
  write_masked(out.train, train_split.chunks);
  write_masked(out.validation, val_split.chunks);
  return summary;
}

}  // namespace ltm::masking
