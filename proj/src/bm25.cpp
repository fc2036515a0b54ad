#include "bret/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "bret/vocab.hpp"

namespace bret {

Bm25Index::Bm25Index(const Corpus& corpus, Bm25Params params) : params_(params) {
  if (corpus.size() == 0) throw std::invalid_argument("bm25: empty corpus");
  doc_ids_.reserve(static_cast<size_t>(corpus.size()));
  doc_lengths_.reserve(static_cast<size_t>(corpus.size()));
  long long total_len = 0;
  for (const auto& passage : corpus.passages) {
    const int doc = static_cast<int>(doc_ids_.size());
    doc_ids_.push_back(passage.id);
    std::map<std::string, int> tf;
    for (const auto& tok : word_tokens(passage.title + " " + passage.text)) ++tf[tok];
    int len = 0;
    for (const auto& [term, count] : tf) {
      postings_[term].push_back({doc, count});
      len += count;
    }
    doc_lengths_.push_back(len);
    total_len += len;
  }
  avgdl_ = static_cast<double>(total_len) / corpus.size();
}

std::vector<ScoredPassage> Bm25Index::search(const std::string& query, int k,
                                             bool* empty_query) const {
  if (k < 1) throw std::invalid_argument("bm25: k must be >= 1");
  const auto words = word_tokens(query);
  if (empty_query) *empty_query = words.empty();
  if (words.empty()) return {};

  std::map<std::string, int> qtf;
  for (const auto& w : words) ++qtf[w];

  const double n_docs = static_cast<double>(doc_ids_.size());
  std::unordered_map<int, double> scores;
  for (const auto& [term, count] : qtf) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const double df = static_cast<double>(it->second.size());
    const double idf = std::log((n_docs - df + 0.5) / (df + 0.5) + 1.0);
    for (const Posting& post : it->second) {
      const double tf = static_cast<double>(post.tf);
      const double dl = static_cast<double>(doc_lengths_[static_cast<size_t>(post.doc)]);
      const double denom = tf + params_.k1 * (1.0 - params_.b + params_.b * dl / avgdl_);
      scores[post.doc] += count * idf * tf * (params_.k1 + 1.0) / denom;
    }
  }

  std::vector<std::pair<int, double>> hits(scores.begin(), scores.end());
  const auto better = [this](const std::pair<int, double>& a, const std::pair<int, double>& b) {
    if (a.second != b.second) return a.second > b.second;
    return doc_ids_[static_cast<size_t>(a.first)] < doc_ids_[static_cast<size_t>(b.first)];
  };
  const size_t keep = std::min(hits.size(), static_cast<size_t>(k));
  std::partial_sort(hits.begin(), hits.begin() + static_cast<long>(keep), hits.end(), better);
  hits.resize(keep);

  std::vector<ScoredPassage> out;
  out.reserve(hits.size());
  for (const auto& [doc, score] : hits)
    out.push_back({doc_ids_[static_cast<size_t>(doc)], score});
  return out;
}

}  // namespace bret
