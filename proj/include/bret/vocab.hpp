#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace bret {

// Special token ids are fixed across every vocabulary.
inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kMaskId = 4;
inline constexpr int kNumSpecials = 5;

/// Token ids framed as [CLS] ... [SEP], plus the padding mask.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<uint8_t> attention;  // 1 for real tokens (incl. [CLS]/[SEP]), 0 for padding
  bool was_empty = false;          // tokenization produced no word tokens

  int length() const { return static_cast<int>(ids.size()); }
  int true_length() const {
    int n = 0;
    for (uint8_t a : attention) n += a;
    return n;
  }
  void pad_to(int len);
};

/// Lowercased word-level vocabulary with fixed special ids and frequency-
/// ranked content tokens.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);  // content tokens, in id order

  int size() const { return kNumSpecials + static_cast<int>(tokens_.size()); }
  int id_of(const std::string& token) const;  // kUnkId when absent
  const std::string& token_of(int id) const;
  const std::vector<std::string>& content_tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;  // id = kNumSpecials + index
  std::unordered_map<std::string, int> index_;
};

/// Splits on whitespace and punctuation, lowercases, keeps alphanumeric runs.
std::vector<std::string> word_tokens(const std::string& text);

/// Frequency-ranked vocabulary over a corpus of texts, truncated to
/// max_size - 5 content tokens. Ties break lexicographically.
Vocabulary build_vocab(const std::vector<std::string>& texts, int max_size);

/// [CLS] tokens... [SEP], truncated so the framed sequence fits max_len.
/// Out-of-vocabulary words map to [UNK]; empty text yields [CLS][SEP] with
/// was_empty set.
TokenSequence tokenize(const std::string& text, const Vocabulary& vocab, int max_len);

/// Joins non-special tokens with single spaces.
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

}  // namespace bret
