#pragma once

#include <string>

#include "bret/data.hpp"

namespace bret {

// Ranking metrics over a retrieval run and judgments. Every run query must be
// judged; unknown queries are rejected with their ids listed. All metrics lie
// in [0,1] and average uniformly over queries.

/// Mean reciprocal rank of the first relevant (grade > 0) passage within the
/// top k; 0 for queries with none.
double mrr_at_k(const RetrievalRun& run, const QrelSet& qrels, int k = 10);

/// Mean fraction of a query's relevant passages found in the top k.
double recall_at_k(const RetrievalRun& run, const QrelSet& qrels, int k);

/// nDCG with gain 2^grade - 1 and log2(rank+1) discount, normalized by the
/// ideal ranking of the judged passages.
double ndcg_at_k(const RetrievalRun& run, const QrelSet& qrels, int k = 10);

}  // namespace bret
