#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bret/tensor.hpp"

namespace bret {

template <typename T>
struct StreamLosses {
  Tensor<T> enc;
  Tensor<T> dec;
  Tensor<T> total;
};

/// Replaced-language-modeling loss: token-level cross entropy against the
/// tokens before replacement at ALL non-pad positions, one term per stream,
/// each averaged over its non-pad count; total is their plain sum.
template <typename T>
StreamLosses<T> loss_rlm(Graph<T>& g, Tensor<T> enc_logits, Tensor<T> dec_logits,
                         const std::vector<int>& targets, const std::vector<uint8_t>& nonpad) {
  (void)g;
  if (targets.size() != nonpad.size())
    op_error("loss_rlm", "targets/padding-mask length mismatch");
  std::vector<uint8_t> ignore(nonpad.size());
  bool any = false;
  for (size_t i = 0; i < nonpad.size(); ++i) {
    ignore[i] = nonpad[i] ? 0 : 1;
    any = any || nonpad[i];
  }
  if (!any) op_error("loss_rlm", "all positions are padding");
  StreamLosses<T> out;
  out.enc = cross_entropy(enc_logits, targets, ignore);
  out.dec = cross_entropy(dec_logits, targets, ignore);
  out.total = add(out.enc, out.dec);
  return out;
}

/// Masked-LM loss: cross entropy averaged over the mask set only.
template <typename T>
Tensor<T> loss_mlm(Graph<T>& g, Tensor<T> logits, const std::vector<int>& targets,
                   const std::vector<uint8_t>& masked) {
  (void)g;
  if (targets.size() != masked.size()) op_error("loss_mlm", "targets/mask length mismatch");
  bool any = false;
  std::vector<uint8_t> ignore(masked.size());
  for (size_t i = 0; i < masked.size(); ++i) {
    ignore[i] = masked[i] ? 0 : 1;
    any = any || masked[i];
  }
  if (!any) op_error("loss_mlm", "empty mask set");
  return cross_entropy(logits, targets, ignore);
}

/// Replaced-token-detection loss: mean binary cross entropy of the per-token
/// replaced flags over non-pad positions.
template <typename T>
Tensor<T> loss_rtd(Graph<T>& g, Tensor<T> binary_logits, const std::vector<uint8_t>& replaced,
                   const std::vector<uint8_t>& nonpad) {
  (void)g;
  return binary_cross_entropy_with_logits(binary_logits, replaced, nonpad);
}

struct PretrainLogEntry {
  int step = 0;
  double loss_enc = 0.0;
  double loss_dec = 0.0;
  double loss_total = 0.0;
  double wall_seconds = 0.0;  // never written to the artifact
};

struct PretrainMetricsLog {
  std::vector<PretrainLogEntry> entries;
};

/// Line-delimited (step, loss_enc, loss_dec, loss_total) records for curve
/// plotting. Wall-clock times stay in memory so reruns are byte-identical.
void save_metrics_log(const std::string& path, const PretrainMetricsLog& log);
PretrainMetricsLog load_metrics_log(const std::string& path);

}  // namespace bret
