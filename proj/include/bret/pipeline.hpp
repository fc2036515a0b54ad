#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "bret/bm25.hpp"
#include "bret/checkpoint.hpp"
#include "bret/config.hpp"
#include "bret/data.hpp"
#include "bret/dense_index.hpp"
#include "bret/model.hpp"
#include "bret/tensor.hpp"

namespace bret {

// ---------------------------------------------------------------------------
// Fine-tuning losses. Scores are temperature-scaled cosines; exponentials are
// never materialized — every loss goes through log-sum-exp.
// ---------------------------------------------------------------------------

/// Logit vector [cos(q,d+)/tau, cos(q,n_i)/tau ..., cos(d+,n_i)/tau ...] of
/// shape [1, 1+2k]. The contrastive loss is cross entropy with target 0 over
/// these logits.
template <typename T>
Tensor<T> phi_logits(Graph<T>& g, Tensor<T> query, Tensor<T> positive, Tensor<T> negatives,
                     T tau) {
  (void)g;
  if (tau <= T(0)) op_error("phi_logits", "temperature must be positive");
  if (query.rows() != 1 || positive.rows() != 1)
    op_error("phi_logits", "query/positive must be single rows");
  Tensor<T> qn = l2_normalize_rows(query);
  Tensor<T> pn = l2_normalize_rows(positive);
  Tensor<T> nn = l2_normalize_rows(negatives);
  Tensor<T> qp = matmul_nt(qn, pn);  // [1,1]
  Tensor<T> qneg = matmul_nt(qn, nn);
  Tensor<T> pneg = matmul_nt(pn, nn);
  return scale(concat_cols<T>({qp, qneg, pneg}), T(1) / tau);
}

/// Contrastive loss over one triple's phi logits.
template <typename T>
Tensor<T> contrastive_from_logits(Graph<T>& g, Tensor<T> logits) {
  (void)g;
  return cross_entropy(logits, std::vector<int>{0});
}

/// Batched contrastive loss with in-batch sharing: for query i the negatives
/// are every other in-batch positive plus every hard negative in the batch,
/// and both the (q, n) and (d+, n) terms enter the partition. hard_negatives
/// may be an invalid tensor when the batch has none.
template <typename T>
Tensor<T> contrastive_batch_loss(Graph<T>& g, Tensor<T> queries, Tensor<T> positives,
                                 Tensor<T> hard_negatives, T tau) {
  if (tau <= T(0)) op_error("contrastive_batch_loss", "temperature must be positive");
  if (queries.rows() != positives.rows())
    op_error("contrastive_batch_loss", "query/positive row mismatch");
  Tensor<T> qn = l2_normalize_rows(queries);
  Tensor<T> pn = l2_normalize_rows(positives);
  Tensor<T> cands = pn;
  if (hard_negatives.valid())
    cands = concat_rows<T>({pn, l2_normalize_rows(hard_negatives)});
  Tensor<T> sq = scale(matmul_nt(qn, cands), T(1) / tau);
  Tensor<T> sp = scale(matmul_nt(pn, cands), T(1) / tau);
  return info_nce(sq, sp);
}

/// Listwise re-ranker loss over raw scores [n,1] whose first candidate is the
/// positive: -log softmax(theta)[0].
template <typename T>
Tensor<T> listwise_rerank_loss(Graph<T>& g, Tensor<T> scores) {
  (void)g;
  if (scores.shape().size() != 2 || scores.cols() != 1)
    op_error("listwise_rerank_loss", "expected [n,1] scores, got " + shape_str(scores.shape()));
  if (scores.rows() < 2) op_error("listwise_rerank_loss", "need at least 2 candidates");
  return cross_entropy(transpose(scores), std::vector<int>{0});
}

template <typename T>
struct DistillLoss {
  Tensor<T> kl;
  Tensor<T> contrastive;
  Tensor<T> total;
};

/// KL(p_ranker || p_ret) between the teacher distribution (softmax over raw
/// scores) and the student distribution (softmax over cos/tau student logits
/// for the same candidate order), plus alpha times a contrastive term.
template <typename T>
DistillLoss<T> distill_loss(Graph<T>& g, const std::vector<T>& teacher_scores,
                            Tensor<T> student_logits, Tensor<T> contrastive, T alpha) {
  if (alpha < T(0)) op_error("distill_loss", "alpha must be >= 0");
  if (student_logits.rows() != 1)
    op_error("distill_loss", "student logits must be a single row");
  if (static_cast<long long>(teacher_scores.size()) != student_logits.cols())
    op_error("distill_loss",
             "teacher candidate count " + std::to_string(teacher_scores.size()) +
                 " does not match student logits " + shape_str(student_logits.shape()));
  // Teacher probabilities and their entropy term, in plain arithmetic.
  T mx = teacher_scores[0];
  for (T s : teacher_scores) mx = std::max(mx, s);
  T z = T(0);
  for (T s : teacher_scores) z += std::exp(s - mx);
  std::vector<T> p(teacher_scores.size());
  T entropy_term = T(0);
  for (size_t i = 0; i < teacher_scores.size(); ++i) {
    p[i] = std::exp(teacher_scores[i] - mx) / z;
    if (p[i] > T(0)) entropy_term += p[i] * std::log(p[i]);
  }
  DistillLoss<T> out;
  Tensor<T> cross = dot_const(row_log_softmax(student_logits), p);
  out.kl = add(g.scalar(entropy_term), scale(cross, T(-1)));
  out.contrastive = contrastive;
  out.total = alpha == T(0) ? out.kl : add(out.kl, scale(contrastive, alpha));
  return out;
}

// ---------------------------------------------------------------------------
// Training stages
// ---------------------------------------------------------------------------

struct RetrieverArtifacts {
  BiEncoder<float> model;
  Vocabulary vocab;
  ModelCheckpoint checkpoint;
  int skipped_queries = 0;  // training queries without usable negatives
};

struct RerankerArtifacts {
  CrossEncoder<float> model;
  Vocabulary vocab;
  ModelCheckpoint checkpoint;
};

/// BM25 negative pools: top-depth lexical hits minus judged-relevant
/// passages, per training query. Queries without judged positives are
/// dropped.
std::vector<NegativeRecord> bm25_negatives(const Corpus& corpus, const QueryList& queries,
                                           const QrelSet& qrels, Bm25Params params, int depth);

/// Model-based negative pools: top-depth exact-search hits minus
/// judged-relevant passages, in rank order.
std::vector<NegativeRecord> mine_hard_negatives(const BiEncoder<float>& retriever,
                                                const Vocabulary& vocab, const Corpus& corpus,
                                                const QueryList& queries, const QrelSet& qrels,
                                                int depth, const RunConfig& cfg);

/// Contrastive fine-tuning of a shared query/passage encoder. init may be a
/// pre-training or retriever checkpoint (the encoder component is taken), or
/// null for a random init with a corpus-built vocabulary.
RetrieverArtifacts train_retriever(const Corpus& corpus, const QueryList& queries,
                                   const QrelSet& qrels,
                                   const std::vector<NegativeRecord>& negatives,
                                   const ModelCheckpoint* init, const RunConfig& cfg,
                                   uint64_t stage_tag);

/// Listwise cross-encoder training; negatives are resampled from each
/// query's pool every epoch. Always starts from a fresh (generic) init.
RerankerArtifacts train_reranker(const Corpus& corpus, const QueryList& queries,
                                 const QrelSet& qrels,
                                 const std::vector<NegativeRecord>& mined, const RunConfig& cfg);

/// Scores [d+, top n-1 negatives] with the re-ranker, producing records whose
/// teacher_scores align with [positive, negatives...].
std::vector<NegativeRecord> score_candidates(const CrossEncoder<float>& reranker,
                                             const Vocabulary& vocab, const Corpus& corpus,
                                             const QueryList& queries,
                                             const std::vector<NegativeRecord>& mined,
                                             const RunConfig& cfg);

/// Distilled retriever: KL to the teacher distribution plus alpha times the
/// contrastive loss over the same candidates.
RetrieverArtifacts train_distill(const Corpus& corpus, const QueryList& queries,
                                 const QrelSet& qrels,
                                 const std::vector<NegativeRecord>& scored,
                                 const ModelCheckpoint* init, const RunConfig& cfg);

/// Ranks eval queries by exact search over the index.
RetrievalRun search_run(const BiEncoder<float>& model, const Vocabulary& vocab,
                        const DenseIndex& index, const QueryList& queries, int k,
                        const RunConfig& cfg);

/// Re-scores the top rerank-depth of a base run with the cross-encoder.
RetrievalRun rerank_run(const CrossEncoder<float>& reranker, const Vocabulary& vocab,
                        const Corpus& corpus, const QueryList& queries,
                        const RetrievalRun& base, int depth, const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

struct PipelineInputs {
  std::string corpus_path;
  std::string train_queries_path;
  std::string train_qrels_path;
  std::string eval_queries_path;  // empty: evaluate on the training queries
  std::string eval_qrels_path;
};

struct PipelineStageMetrics {
  std::string stage;
  double mrr10 = 0.0;
  double recall50 = 0.0;
  double recall1k = 0.0;
  double ndcg10 = 0.0;
};

struct PipelineReport {
  std::vector<PipelineStageMetrics> rows;
};

/// Runs pretrain -> retriever1 -> mine -> retriever2 -> re-ranker -> distill
/// -> eval, leaving every stage artifact under out_dir so each stage can also
/// be re-run standalone from files.
PipelineReport run_pipeline(const RunConfig& cfg, const PipelineInputs& inputs,
                            const std::string& out_dir);

}  // namespace bret
