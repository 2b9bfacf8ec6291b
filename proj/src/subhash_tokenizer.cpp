#include "ltm/subhash_tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "ltm/error.hpp"

namespace ltm::tok {

namespace {

bool has_marker(std::string_view s) { return s.starts_with(kContinuation); }

std::string_view strip_marker(std::string_view s) { return has_marker(s) ? s.substr(kContinuation.size()) : s; }

}  // namespace

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < static_cast<std::size_t>(kNumSpecials)) {
    throw InputError("vocabulary must start with the five special tokens");
  }
  Vocabulary v;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& t = tokens[i];
    if (i < static_cast<std::size_t>(kNumSpecials)) {
      if (t != kSpecialTokens[i]) throw InputError("special token " + std::to_string(i) + " must be " + std::string(kSpecialTokens[i]));
    } else {
      const auto body = strip_marker(t);
      if (body.empty() || body.find('#') != std::string_view::npos || t.front() == '[') {
        throw InputError("malformed vocabulary token '" + t + "' at id " + std::to_string(i));
      }
    }
    if (!v.index_.emplace(t, static_cast<int>(i)).second) {
      throw InputError("duplicate vocabulary token '" + t + "'");
    }
  }
  v.trie_.assign(2, TrieNode{});
  for (std::size_t i = kNumSpecials; i < tokens.size(); ++i) {
    const std::string_view t = tokens[i];
    const bool cont = t.starts_with(kContinuation);
    v.insert_piece(cont ? t.substr(kContinuation.size()) : t, cont, static_cast<int>(i));
  }
  v.tokens_ = std::move(tokens);
  return v;
}

void Vocabulary::insert_piece(std::string_view body, bool continuation, int id) {
  std::uint32_t node = continuation ? 1 : 0;
  for (char ch : body) {
    auto& next = trie_[node].next;
    auto it = std::find_if(next.begin(), next.end(), [ch](const auto& e) { return e.first == ch; });
    if (it == next.end()) {
      const auto child = static_cast<std::uint32_t>(trie_.size());
      trie_[node].next.emplace_back(ch, child);
      trie_.emplace_back();
      node = child;
    } else {
      node = it->second;
    }
  }
  trie_[node].id = id;
}

std::optional<int> Vocabulary::longest_piece(std::string_view text, bool continuation, std::size_t& length) const {
  if (trie_.empty()) return std::nullopt;
  std::optional<int> best;
  std::uint32_t node = continuation ? 1 : 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto& next = trie_[node].next;
    auto it = std::find_if(next.begin(), next.end(), [ch = text[i]](const auto& e) { return e.first == ch; });
    if (it == next.end()) break;
    node = it->second;
    if (trie_[node].id >= 0) {
      best = trie_[node].id;
      length = i + 1;
    }
  }
  return best;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary file " + path.string());
  out << serialize();
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  const auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

namespace {

std::set<std::string> initial_alphabet(const std::map<std::string, std::uint64_t>& word_counts) {
  std::set<std::string> symbols;
  for (const auto& [word, count] : word_counts) {
    if (count == 0) continue;
    for (std::size_t i = 0; i < word.size(); ++i) {
      symbols.insert(i == 0 ? std::string(1, word[i]) : std::string(kContinuation) + word[i]);
    }
  }
  return symbols;
}

std::uint64_t pair_key(int a, int b) { return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b); }

std::string merged_string(const std::string& a, const std::string& b) {
  return a + std::string(strip_marker(b));
}

}  // namespace

std::size_t minimum_vocab_size(const std::map<std::string, std::uint64_t>& word_counts) {
  return static_cast<std::size_t>(kNumSpecials) + initial_alphabet(word_counts).size();
}

Vocabulary train_vocab(const std::map<std::string, std::uint64_t>& word_counts, std::size_t vocab_size) {
  std::uint64_t total = 0;
  for (const auto& [word, count] : word_counts) {
    if (word.empty()) throw InputError("empty word in tokenizer corpus");
    if (word.find('#') != std::string::npos) throw InputError("'#' is reserved for the continuation marker");
    total += count;
  }
  if (total == 0) throw InputError("tokenizer corpus is empty");

  const auto alphabet = initial_alphabet(word_counts);
  const std::size_t minimum = kNumSpecials + alphabet.size();
  if (vocab_size < minimum) {
    throw InputError("vocab_size " + std::to_string(vocab_size) + " below minimum " + std::to_string(minimum));
  }

  std::vector<std::string> vocab(std::begin(kSpecialTokens), std::end(kSpecialTokens));
  // Word-initial characters first, then continuation forms.
  for (const auto& s : alphabet) {
    if (!has_marker(s)) vocab.push_back(s);
  }
  for (const auto& s : alphabet) {
    if (has_marker(s)) vocab.push_back(s);
  }
  std::unordered_set<std::string> in_vocab(vocab.begin(), vocab.end());

  // Symbol table for the merge loop (independent of vocab ids).
  std::vector<std::string> symbols;
  std::unordered_map<std::string, int> symbol_id;
  auto intern = [&](const std::string& s) {
    auto [it, inserted] = symbol_id.emplace(s, static_cast<int>(symbols.size()));
    if (inserted) symbols.push_back(s);
    return it->second;
  };

  struct Word {
    std::vector<int> pieces;
    std::uint64_t count;
  };
  std::vector<Word> words;
  words.reserve(word_counts.size());
  for (const auto& [word, count] : word_counts) {
    if (count == 0) continue;
    Word w{{}, count};
    for (std::size_t i = 0; i < word.size(); ++i) {
      w.pieces.push_back(intern(i == 0 ? std::string(1, word[i]) : std::string(kContinuation) + word[i]));
    }
    words.push_back(std::move(w));
  }

  while (vocab.size() < vocab_size) {
    std::unordered_map<std::uint64_t, std::uint64_t> pair_counts;
    std::vector<std::uint64_t> symbol_counts(symbols.size(), 0);
    for (const auto& w : words) {
      for (std::size_t i = 0; i < w.pieces.size(); ++i) {
        symbol_counts[static_cast<std::size_t>(w.pieces[i])] += w.count;
        if (i + 1 < w.pieces.size()) pair_counts[pair_key(w.pieces[i], w.pieces[i + 1])] += w.count;
      }
    }

    bool found = false;
    int best_a = 0, best_b = 0;
    std::uint64_t best_count = 0;
    std::string best_merged;
    for (const auto& [key, count] : pair_counts) {
      if (count < 2) continue;
      const int a = static_cast<int>(key >> 32);
      const int b = static_cast<int>(key & 0xffffffffu);
      const std::string merged = merged_string(symbols[static_cast<std::size_t>(a)], symbols[static_cast<std::size_t>(b)]);
      bool better = !found;
      if (found) {
        // score = count / (count_a * count_b), compared exactly.
        using u128 = unsigned __int128;
        const u128 lhs = static_cast<u128>(count) * symbol_counts[static_cast<std::size_t>(best_a)] *
                         symbol_counts[static_cast<std::size_t>(best_b)];
        const u128 rhs = static_cast<u128>(best_count) * symbol_counts[static_cast<std::size_t>(a)] *
                         symbol_counts[static_cast<std::size_t>(b)];
        if (lhs != rhs) {
          better = lhs > rhs;
        } else if (merged != best_merged) {
          better = merged < best_merged;
        } else {
          better = symbols[static_cast<std::size_t>(a)] < symbols[static_cast<std::size_t>(best_a)];
        }
      }
      if (better) {
        found = true;
        best_a = a;
        best_b = b;
        best_count = count;
        best_merged = merged;
      }
    }
    if (!found) break;

    const int merged_id = intern(best_merged);
    for (auto& w : words) {
      auto& p = w.pieces;
      std::size_t out = 0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (i + 1 < p.size() && p[i] == best_a && p[i + 1] == best_b) {
          p[out++] = merged_id;
          ++i;
        } else {
          p[out++] = p[i];
        }
      }
      p.resize(out);
    }
    if (in_vocab.insert(best_merged).second) vocab.push_back(best_merged);
  }

  return Vocabulary::from_tokens(std::move(vocab));
}

Vocabulary train_vocab(std::span<const std::string> corpus, std::size_t vocab_size) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& w : corpus) ++counts[w];
  return train_vocab(counts, vocab_size);
}

std::vector<int> tokenize_cell(const Vocabulary& vocab, std::string_view cell) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start < cell.size()) {
    std::size_t length = 0;
    const auto match = vocab.longest_piece(cell.substr(start), start > 0, length);
    if (!match) return {kUnkId};
    out.push_back(*match);
    start += length;
  }
  return out;
}

std::string detokenize(const Vocabulary& vocab, std::span<const int> ids) {
  std::size_t n = ids.size();
  while (n > 0 && ids[n - 1] == kPadId) --n;
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    const int id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
      throw InputError("token id " + std::to_string(id) + " out of vocabulary range");
    }
    if (id == kUnkId) throw LossyRoundTripError("cannot detokenize [UNK]");
    if (Vocabulary::is_special(id)) throw InputError("unexpected special token " + vocab.token(id));
    out += strip_marker(vocab.token(id));
  }
  return out;
}

TokenSequence encode_trajectory(const Vocabulary& vocab, std::span<const std::string> cells) {
  TokenSequence seq;
  for (std::size_t w = 0; w < cells.size(); ++w) {
    const auto ids = tokenize_cell(vocab, cells[w]);
    seq.ids.insert(seq.ids.end(), ids.begin(), ids.end());
    seq.word_ids.insert(seq.word_ids.end(), ids.size(), static_cast<int>(w));
  }
  return seq;
}

}  // namespace ltm::tok
