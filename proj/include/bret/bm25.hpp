#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "bret/data.hpp"

namespace bret {

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;
};

struct ScoredPassage {
  std::string id;
  double score;
};

/// Inverted index over word tokens with BM25 scoring. Robertson/Sparck-Jones
/// idf with +0.5 smoothing; ties break by ascending passage id.
class Bm25Index {
 public:
  Bm25Index(const Corpus& corpus, Bm25Params params = {});

  /// Top-k passages for a query. empty_query is set when the query has no
  /// word tokens (the result is then empty).
  std::vector<ScoredPassage> search(const std::string& query, int k,
                                    bool* empty_query = nullptr) const;

  double average_doc_length() const { return avgdl_; }
  int doc_count() const { return static_cast<int>(doc_ids_.size()); }

 private:
  struct Posting {
    int doc;
    int tf;
  };

  Bm25Params params_;
  std::vector<std::string> doc_ids_;
  std::vector<int> doc_lengths_;
  double avgdl_ = 0.0;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
};

}  // namespace bret
