#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ltm::tok {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kMaskId = 4;
inline constexpr int kNumSpecials = 5;
inline constexpr std::string_view kContinuation = "##";
/// word id of special and pad positions
inline constexpr int kNoWord = -1;
inline constexpr std::size_t kDefaultVocabSize = 2000;

inline constexpr std::string_view kSpecialTokens[kNumSpecials] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                                  "[MASK]"};

/// Sub-hash token inventory. Ids are line numbers of the vocabulary file; the
/// five specials always occupy ids 0-4.
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Validates the token list; throws InputError.
  static Vocabulary from_tokens(std::vector<std::string> tokens);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string serialize() const;

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  std::optional<int> find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }

  static bool is_special(int id) noexcept { return id >= 0 && id < kNumSpecials; }
  /// Longest vocabulary piece at the start of `text`: word-initial pieces
  /// when `continuation` is false, "##" pieces (matched without the marker)
  /// otherwise. Returns the id and sets `length`, or nullopt.
  std::optional<int> longest_piece(std::string_view text, bool continuation, std::size_t& length) const;

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const noexcept { return std::hash<std::string_view>{}(s); }
  };

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int, Hash, std::equal_to<>> index_;

  // Prefix tries over token bodies; node 0 roots word-initial pieces and
  // node 1 continuation pieces.
  struct TrieNode {
    std::vector<std::pair<char, std::uint32_t>> next;
    int id = -1;
  };
  std::vector<TrieNode> trie_;
  void insert_piece(std::string_view body, bool continuation, int id);
};

/// Minimum vocab_size accepted by train_vocab for this corpus: specials plus the
/// initial symbol alphabet (word-initial characters and "##" continuations).
std::size_t minimum_vocab_size(const std::map<std::string, std::uint64_t>& word_counts);

/// WordPiece training over cell codes (one word per cell code).
Vocabulary train_vocab(const std::map<std::string, std::uint64_t>& word_counts, std::size_t vocab_size);
Vocabulary train_vocab(std::span<const std::string> corpus, std::size_t vocab_size);

/// Greedy longest-match-first segmentation. Any unmatched position turns the
/// whole word into [UNK].
std::vector<int> tokenize_cell(const Vocabulary& vocab, std::string_view cell);

/// Inverse of tokenize_cell. Trailing [PAD] ids are ignored. Throws
/// LossyRoundTripError on [UNK] and InputError on other specials.
std::string detokenize(const Vocabulary& vocab, std::span<const int> ids);

struct TokenSequence {
  std::vector<int> ids;
  /// cell occurrence index per position, kNoWord for specials/pad
  std::vector<int> word_ids;

  std::size_t size() const noexcept { return ids.size(); }
};

TokenSequence encode_trajectory(const Vocabulary& vocab, std::span<const std::string> cells);

}  // namespace ltm::tok
