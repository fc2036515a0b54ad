#include "bret/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

namespace bret {

namespace {
const std::string kSpecialNames[kNumSpecials] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
}

void TokenSequence::pad_to(int len) {
  if (len < length())
    throw std::invalid_argument("pad_to: target length " + std::to_string(len) +
                                " shorter than sequence " + std::to_string(length()));
  ids.resize(static_cast<size_t>(len), kPadId);
  attention.resize(static_cast<size_t>(len), 0);
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  index_.reserve(tokens_.size());
  for (size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], kNumSpecials + static_cast<int>(i));
    if (!inserted) throw std::invalid_argument("vocabulary: duplicate token '" + tokens_[i] + "'");
  }
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || id >= size())
    throw std::invalid_argument("vocabulary: id " + std::to_string(id) + " out of range [0," +
                                std::to_string(size()) + ")");
  if (id < kNumSpecials) return kSpecialNames[id];
  return tokens_[static_cast<size_t>(id - kNumSpecials)];
}

std::vector<std::string> word_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isalnum(uc)) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary build_vocab(const std::vector<std::string>& texts, int max_size) {
  if (texts.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  if (max_size <= kNumSpecials)
    throw std::invalid_argument("build_vocab: max size must exceed " + std::to_string(kNumSpecials));
  std::map<std::string, long long> counts;  // ordered map makes ties lexicographic
  for (const auto& text : texts)
    for (auto& tok : word_tokens(text)) ++counts[tok];
  std::vector<std::pair<std::string, long long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const size_t keep = std::min(ranked.size(), static_cast<size_t>(max_size - kNumSpecials));
  std::vector<std::string> tokens;
  tokens.reserve(keep);
  for (size_t i = 0; i < keep; ++i) tokens.push_back(ranked[i].first);
  return Vocabulary(std::move(tokens));
}

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab, int max_len) {
  if (max_len < 2) throw std::invalid_argument("tokenize: max_len must be at least 2");
  const auto words = word_tokens(text);
  TokenSequence seq;
  seq.was_empty = words.empty();
  seq.ids.push_back(kClsId);
  const size_t room = static_cast<size_t>(max_len - 2);
  for (size_t i = 0; i < words.size() && i < room; ++i) seq.ids.push_back(vocab.id_of(words[i]));
  seq.ids.push_back(kSepId);
  seq.attention.assign(seq.ids.size(), 1);
  return seq;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id < kNumSpecials) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token_of(id);
  }
  return out;
}

}  // namespace bret
