#include "bret/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace bret {

namespace {

void check_judged(const RetrievalRun& run, const QrelSet& qrels, const char* metric) {
  std::string missing;
  for (const auto& [qid, ranked] : run.ranked) {
    (void)ranked;
    if (!qrels.grades.count(qid)) {
      if (!missing.empty()) missing += ", ";
      missing += qid;
    }
  }
  if (!missing.empty())
    throw std::invalid_argument(std::string(metric) + ": queries missing from qrels: " + missing);
}

void check_k(int k, const char* metric) {
  if (k < 1) throw std::invalid_argument(std::string(metric) + ": k must be >= 1");
}

double mean_over_queries(const RetrievalRun& run,
                         const std::function<double(const std::string&,
                                                    const std::vector<std::pair<std::string, double>>&)>& f) {
  if (run.ranked.empty()) throw std::invalid_argument("metrics: empty run");
  double total = 0.0;
  for (const auto& [qid, ranked] : run.ranked) total += f(qid, ranked);
  return total / static_cast<double>(run.ranked.size());
}

}  // namespace

double mrr_at_k(const RetrievalRun& run, const QrelSet& qrels, int k) {
  check_k(k, "mrr");
  check_judged(run, qrels, "mrr");
  return mean_over_queries(run, [&](const std::string& qid, const auto& ranked) {
    const int depth = std::min<int>(k, static_cast<int>(ranked.size()));
    for (int r = 0; r < depth; ++r)
      if (qrels.relevant(qid, ranked[static_cast<size_t>(r)].first))
        return 1.0 / static_cast<double>(r + 1);
    return 0.0;
  });
}

double recall_at_k(const RetrievalRun& run, const QrelSet& qrels, int k) {
  check_k(k, "recall");
  check_judged(run, qrels, "recall");
  return mean_over_queries(run, [&](const std::string& qid, const auto& ranked) {
    const auto* judged = qrels.for_query(qid);
    int total_relevant = 0;
    for (const auto& [pid, grade] : *judged) {
      (void)pid;
      if (grade > 0) ++total_relevant;
    }
    if (total_relevant == 0) return 0.0;
    const int depth = std::min<int>(k, static_cast<int>(ranked.size()));
    int found = 0;
    for (int r = 0; r < depth; ++r)
      if (qrels.relevant(qid, ranked[static_cast<size_t>(r)].first)) ++found;
    return static_cast<double>(found) / static_cast<double>(total_relevant);
  });
}

double ndcg_at_k(const RetrievalRun& run, const QrelSet& qrels, int k) {
  check_k(k, "ndcg");
  check_judged(run, qrels, "ndcg");
  return mean_over_queries(run, [&](const std::string& qid, const auto& ranked) {
    const auto* judged = qrels.for_query(qid);
    double dcg = 0.0;
    const int depth = std::min<int>(k, static_cast<int>(ranked.size()));
    for (int r = 0; r < depth; ++r) {
      auto it = judged->find(ranked[static_cast<size_t>(r)].first);
      if (it == judged->end() || it->second <= 0) continue;
      dcg += (std::pow(2.0, it->second) - 1.0) / std::log2(static_cast<double>(r + 2));
    }
    std::vector<int> grades;
    for (const auto& [pid, grade] : *judged) {
      (void)pid;
      if (grade > 0) grades.push_back(grade);
    }
    std::sort(grades.begin(), grades.end(), std::greater<>());
    double idcg = 0.0;
    for (int r = 0; r < std::min<int>(k, static_cast<int>(grades.size())); ++r)
      idcg += (std::pow(2.0, grades[static_cast<size_t>(r)]) - 1.0) /
              std::log2(static_cast<double>(r + 2));
    return idcg > 0.0 ? dcg / idcg : 0.0;
  });
}

}  // namespace bret
