#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace bret {

struct Passage {
  std::string id;
  std::string title;  // may be empty
  std::string text;
};

struct Corpus {
  std::vector<Passage> passages;  // file order
  std::unordered_map<std::string, int> index;  // id -> position

  int size() const { return static_cast<int>(passages.size()); }
  const Passage& at(const std::string& id) const;
  bool contains(const std::string& id) const { return index.count(id) > 0; }
};

struct Query {
  std::string id;
  std::string text;
};

using QueryList = std::vector<Query>;

/// Relevance judgments keyed by (query id, passage id); grades >= 0,
/// grade > 0 means relevant.
struct QrelSet {
  std::map<std::string, std::map<std::string, int>> grades;

  bool relevant(const std::string& qid, const std::string& pid) const;
  const std::map<std::string, int>* for_query(const std::string& qid) const;
};

/// Per-query ranked (passage id, score) lists, scores non-increasing.
struct RetrievalRun {
  std::map<std::string, std::vector<std::pair<std::string, double>>> ranked;
};

/// One training record: a query, its positives, an ordered negative pool and
/// optional teacher scores covering [first positive, negatives...].
struct NegativeRecord {
  std::string query_id;
  std::vector<std::string> positives;
  std::vector<std::string> negatives;     // rank order
  std::vector<double> teacher_scores;     // empty, or 1 + negatives.size() entries
};

// TSV loaders with line-numbered diagnostics and strict duplicate-id checks.
Corpus load_corpus(const std::string& path);           // id \t title \t text
QueryList load_queries(const std::string& path);       // id \t text
QrelSet load_qrels(const std::string& path);           // qid \t pid \t grade
RetrievalRun load_run(const std::string& path);        // qid \t pid \t rank \t score
std::vector<NegativeRecord> load_negatives(const std::string& path);

void save_run(const std::string& path, const RetrievalRun& run);
void save_negatives(const std::string& path, const std::vector<NegativeRecord>& records);
void save_qrels(const std::string& path, const QrelSet& qrels);

/// Canonical float formatting used by every text artifact (shortest
/// round-trip), so rewritten files are byte-identical.
std::string format_double(double v);

}  // namespace bret
