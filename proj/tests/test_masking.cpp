#include <filesystem>
#include <set>

#include "doctest.h"
#include "ltm/error.hpp"
#include "ltm/io.hpp"
#include "ltm/masking.hpp"
#include "ltm/subhash_tokenizer.hpp"

using namespace ltm;
using namespace ltm::masking;

namespace {

// `runs` cell occurrences of `width` tokens each; ids start after specials
tok::TokenSequence uniform_runs(std::size_t runs, std::size_t width) {
  tok::TokenSequence s;
  for (std::size_t r = 0; r < runs; ++r) {
    for (std::size_t k = 0; k < width; ++k) {
      s.ids.push_back(tok::kNumSpecials + static_cast<int>((r * width + k) % 50));
      s.word_ids.push_back(static_cast<int>(r));
    }
  }
  return s;
}

Chunk ten_occurrences() {
  auto chunks = chunk_sequence(uniform_runs(10, 2), 32);
  REQUIRE(chunks.size() == 1);
  return chunks[0];
}

void check_whole_cell(const Chunk& c, const MaskedChunk& m) {
  std::set<int> masked_words;
  for (std::size_t p = 0; p < c.ids.size(); ++p) {
    if (m.input_ids[p] == tok::kMaskId) masked_words.insert(c.word_ids[p]);
  }
  for (std::size_t p = 0; p < c.ids.size(); ++p) {
    const bool in_masked_word = masked_words.count(c.word_ids[p]) > 0 && c.word_ids[p] != tok::kNoWord;
    CHECK((m.input_ids[p] == tok::kMaskId) == in_masked_word);
    // label soundness
    CHECK((m.labels[p] != kIgnoreLabel) == in_masked_word);
    if (in_masked_word) CHECK(m.labels[p] == c.ids[p]);
    if (c.attention_mask[p] == 0) CHECK(m.labels[p] == kIgnoreLabel);
  }
}

}  // namespace

TEST_CASE("chunk arithmetic with aligned runs") {
  const auto chunks = chunk_sequence(uniform_runs(515, 2), 512);
  REQUIRE(chunks.size() == 3);
  CHECK(chunks[0].real_length() == 512);
  CHECK(chunks[1].real_length() == 512);
  CHECK(chunks[2].real_length() == 6);
  CHECK(chunks[2].ids.size() == 512);
  CHECK(chunks[2].ids[6] == tok::kPadId);
  CHECK(chunks[2].attention_mask[6] == 0);
  CHECK(chunks[2].word_ids[6] == tok::kNoWord);
  CHECK(chunks[2].occurrences() == 3);
}

TEST_CASE("short sequence gives one padded chunk") {
  const auto chunks = chunk_sequence(uniform_runs(4, 3), 64);
  REQUIRE(chunks.size() == 1);
  CHECK(chunks[0].ids.size() == 64);
  CHECK(chunks[0].real_length() == 12);
}

TEST_CASE("runs never straddle a chunk boundary") {
  // 511 single-token runs, then a 3-token run that would start at 511
  tok::TokenSequence s = uniform_runs(511, 1);
  for (int k = 0; k < 3; ++k) {
    s.ids.push_back(9);
    s.word_ids.push_back(511);
  }
  s.ids.push_back(10);
  s.word_ids.push_back(512);
  const auto chunks = chunk_sequence(s, 512);
  REQUIRE(chunks.size() == 2);
  CHECK(chunks[0].real_length() == 511);
  CHECK(chunks[1].ids[0] == 9);
  CHECK(chunks[1].word_ids[0] == 0);
  CHECK(chunks[1].word_ids[2] == 0);
  CHECK(chunks[1].occurrences() == 2);
}

TEST_CASE("chunk errors and drops") {
  CHECK_THROWS_AS(chunk_sequence(uniform_runs(3, 2), 7), InputError);
  CHECK_THROWS_AS(chunk_sequence(uniform_runs(2, 9), 8), InputError);
  // a trailing window with one occurrence is dropped
  CHECK(chunk_sequence(uniform_runs(5, 4), 16).size() == 1);
}

TEST_CASE("masked count rule") {
  CHECK(masked_occurrence_count(10, 0.2) == 2);
  CHECK(masked_occurrence_count(12, 0.2) == 2);
  CHECK(masked_occurrence_count(13, 0.2) == 3);
  CHECK(masked_occurrence_count(2, 0.2) == 1);  // clamped up from 0
  CHECK(masked_occurrence_count(4, 0.9) == 3);  // clamped down from 4
  CHECK(masked_occurrence_count(10, 0.0) == 0);
  CHECK(masked_occurrence_count(10, 1.0) == 10);
  CHECK_THROWS_AS(masked_occurrence_count(10, 1.5), InputError);
}

TEST_CASE("ten occurrences at 20% mask exactly two, whole") {
  const auto c = ten_occurrences();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto m = apply_whole_cell_mask(c, 0.2, seed);
    CHECK(m.labeled_count() == 4);
    check_whole_cell(c, m);
  }
}

TEST_CASE("zero ratio leaves the chunk unchanged") {
  const auto c = ten_occurrences();
  const auto m = apply_whole_cell_mask(c, 0.0, 3);
  CHECK(m.input_ids == c.ids);
  CHECK(m.labeled_count() == 0);
}

TEST_CASE("same seed same mask; seeds cover every occurrence") {
  const auto c = ten_occurrences();
  CHECK(apply_whole_cell_mask(c, 0.2, 77).input_ids == apply_whole_cell_mask(c, 0.2, 77).input_ids);
  CHECK(apply_whole_cell_mask(c, 0.2, 77, 0).input_ids != apply_whole_cell_mask(c, 0.2, 77, 1).input_ids);
  std::set<int> hit;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto m = apply_whole_cell_mask(c, 0.2, seed);
    for (std::size_t p = 0; p < c.ids.size(); ++p) {
      if (m.input_ids[p] == tok::kMaskId) hit.insert(c.word_ids[p]);
    }
  }
  CHECK(hit.size() == 10);
}

TEST_CASE("masked chunk json round trip") {
  const auto m = apply_whole_cell_mask(ten_occurrences(), 0.2, 1);
  const auto back = masked_chunk_from_json(to_json_line(m));
  CHECK(back.input_ids == m.input_ids);
  CHECK(back.labels == m.labels);
  CHECK(back.attention_mask == m.attention_mask);
}

TEST_CASE("pretrain dataset is deterministic and near the ratio") {
  const auto vocab = tok::Vocabulary::from_tokens(
      {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "x", "xn7", "##6", "##k", "##5", "##6k5", "##7"});
  std::vector<std::vector<std::string>> train, val;
  for (int t = 0; t < 60; ++t) {
    std::vector<std::string> cells;
    for (int i = 0; i < 20 + t % 13; ++i) cells.push_back(i % 3 == 0 ? "xn76k5" : (i % 3 == 1 ? "xn7k5" : "x7"));
    (t % 5 == 0 ? val : train).push_back(cells);
  }
  const auto dir = std::filesystem::temp_directory_path() / "ltm_test_masking";
  std::filesystem::create_directories(dir);
  const PretrainDatasetPaths a{dir / "a_train.jsonl", dir / "a_val.jsonl"};
  const PretrainDatasetPaths b{dir / "b_train.jsonl", dir / "b_val.jsonl"};
  const auto sa = build_pretrain_dataset(vocab, train, val, 32, 0.2, 5, a);
  build_pretrain_dataset(vocab, train, val, 32, 0.2, 5, b);
  CHECK(io::read_text(a.train) == io::read_text(b.train));
  CHECK(io::read_text(a.validation) == io::read_text(b.validation));
  const double frac = static_cast<double>(sa.masked_occurrences) / static_cast<double>(sa.total_occurrences);
  CHECK(frac == doctest::Approx(0.2).epsilon(0.1));
  CHECK(read_masked(a.train).size() == sa.train_chunks);

  CHECK_THROWS_AS(build_pretrain_dataset(vocab, {}, val, 32, 0.2, 5, a), InputError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("optional corruption mixture keeps selection and labels") {
  const auto c = chunk_sequence(uniform_runs(50, 2), 128).at(0);
  std::size_t masked = 0, random = 0, kept = 0;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    const auto plain = apply_whole_cell_mask(c, 0.2, seed);
    const auto mixed = apply_whole_cell_mask(c, 0.2, seed, 0, 60);
    CHECK(mixed.labels == plain.labels);
    for (int w = 0; w < 50; ++w) {
      const std::size_t a = 2 * static_cast<std::size_t>(w), b = a + 1;
      if (plain.labels[a] == kIgnoreLabel) {
        CHECK(mixed.input_ids[a] == c.ids[a]);
        continue;
      }
      const bool both_mask = mixed.input_ids[a] == tok::kMaskId && mixed.input_ids[b] == tok::kMaskId;
      const bool both_kept = mixed.input_ids[a] == c.ids[a] && mixed.input_ids[b] == c.ids[b];
      if (both_mask) {
        ++masked;
      } else if (both_kept) {
        ++kept;
      } else {
        ++random;
        for (auto p : {a, b}) {
          CHECK(mixed.input_ids[p] >= tok::kNumSpecials);
          CHECK(mixed.input_ids[p] < 60);
        }
      }
    }
  }
  const double n = static_cast<double>(masked + random + kept);
  CHECK(n == 400.0 * 10);
  CHECK(masked / n == doctest::Approx(0.8).epsilon(0.05));
  // a random draw can reproduce the original ids, so "kept" is slightly high
  CHECK(random / n == doctest::Approx(0.1).epsilon(0.25));
  CHECK(kept / n == doctest::Approx(0.1).epsilon(0.25));
  CHECK_THROWS_AS(apply_whole_cell_mask(c, 0.2, 1, 0, 5), InputError);
}
