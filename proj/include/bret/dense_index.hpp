#pragma once

#include <string>
#include <vector>

#include "bret/bm25.hpp"
#include "bret/data.hpp"
#include "bret/model.hpp"
#include "bret/vocab.hpp"

namespace bret {

/// Flat store of one embedding row per passage, in corpus order, with cached
/// norms. Immutable after build; searches are exact (every row is scored).
struct DenseIndex {
  int dim = 0;
  std::vector<std::string> ids;
  std::vector<float> data;   // row-major [count, dim]
  std::vector<float> norms;  // L2 norm per row

  int size() const { return static_cast<int>(ids.size()); }
  const float* row(int i) const { return data.data() + static_cast<size_t>(i) * dim; }
  void validate() const;
};

struct EncodeStats {
  int truncated = 0;  // passages longer than the encoder's input window
};

/// Encodes every passage to its bottleneck vector. Deterministic and
/// order-stable; shards may run on several threads over the read-only model.
DenseIndex encode_corpus(const BiEncoder<float>& model, const Corpus& corpus,
                         const Vocabulary& vocab, int passage_length, int batch_size = 64,
                         int threads = 1, EncodeStats* stats = nullptr);

std::vector<float> encode_text(const BiEncoder<float>& model, const Vocabulary& vocab,
                               const std::string& text, int max_tokens);

/// Exact top-k by cosine similarity over every row; ties break by ascending
/// passage id, and k beyond the corpus size returns the full ranking.
std::vector<ScoredPassage> dense_search(const DenseIndex& index, const std::vector<float>& query,
                                        int k);

void save_index(const std::string& path, const DenseIndex& index);
DenseIndex load_index(const std::string& path);

}  // namespace bret
