#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ltm/subhash_tokenizer.hpp"

namespace ltm::masking {

/// Label value at positions that carry no prediction target.
inline constexpr int kIgnoreLabel = -100;
inline constexpr std::size_t kDefaultChunkSize = 512;
inline constexpr double kDefaultMaskRatio = 0.2;

struct Chunk {
  std::vector<int> ids;
  /// Cell occurrence index within the chunk (0-based), kNoWord on padding.
  std::vector<int> word_ids;
  std::vector<int> attention_mask;

  std::size_t real_length() const;
  /// Number of cell occurrences in the chunk.
  int occurrences() const;
};

struct MaskedChunk {
  std::vector<int> input_ids;
  std::vector<int> labels;
  std::vector<int> attention_mask;

  std::size_t labeled_count() const;
};

/// Packs whole cell runs into fixed windows; the last window is padded and
/// windows with fewer than two occurrences are dropped. Throws InputError for
/// chunk_size < 8 or a single run longer than chunk_size.
std::vector<Chunk> chunk_sequence(const tok::TokenSequence& seq, std::size_t chunk_size);

/// m = round(ratio * W) cell occurrences masked in full, clamped to
/// [1, W - 1] when 0 < ratio < 1.
int masked_occurrence_count(int occurrences, double ratio);

/// Masks whole cell occurrences. The selection depends only on
/// (seed, chunk_index), so chunks can be masked in any order.
///
/// With a non-zero `mixture_vocab`, each selected occurrence is replaced by
/// [MASK] with probability 0.8, by random non-special ids below
/// mixture_vocab with probability 0.1, and left as is otherwise. Labels and
/// the selection are the same either way.
MaskedChunk apply_whole_cell_mask(const Chunk& chunk, double ratio, std::uint64_t seed,
                                  std::uint64_t chunk_index = 0, std::size_t mixture_vocab = 0);

// Masked dataset files: one chunk per JSON line with input_ids, labels,
// attention_mask.
std::string to_json_line(const MaskedChunk& chunk);
MaskedChunk masked_chunk_from_json(std::string_view line);
void write_masked(const std::filesystem::path& path, std::span<const MaskedChunk> chunks);
std::vector<MaskedChunk> read_masked(const std::filesystem::path& path);

struct MaskedSplit {
  std::vector<MaskedChunk> chunks;
  /// chunks before masking, kept for audits
  std::vector<Chunk> sources;
};

/// Tokenizes, chunks and statically masks one split. `stream` separates the
/// RNG streams of different splits built from the same seed.
MaskedSplit mask_split(const tok::Vocabulary& vocab, std::span<const std::vector<std::string>> trajectories,
                       std::size_t chunk_size, double ratio, std::uint64_t seed, std::uint64_t stream,
                       bool mixture = false);

struct PretrainDatasetPaths {
  std::filesystem::path train;
  std::filesystem::path validation;
};

struct PretrainDatasetSummary {
  std::size_t train_chunks = 0;
  std::size_t validation_chunks = 0;
  std::size_t masked_occurrences = 0;
  std::size_t total_occurrences = 0;
};

/// Static pre-masking of the train and validation splits. Throws InputError
/// if either split is empty or yields no chunks.
PretrainDatasetSummary build_pretrain_dataset(const tok::Vocabulary& vocab,
                                              std::span<const std::vector<std::string>> train,
                                              std::span<const std::vector<std::string>> validation,
                                              std::size_t chunk_size, double ratio, std::uint64_t seed,
                                              const PretrainDatasetPaths& out, bool mixture = false);

}  // namespace ltm::masking
