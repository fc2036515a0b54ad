#include "bret/dense_index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace bret {

namespace {
constexpr const char* kMagic = "bretidx\t1";
}

void DenseIndex::validate() const {
  if (dim <= 0) throw std::runtime_error("dense index: non-positive dimension");
  if (data.size() != ids.size() * static_cast<size_t>(dim))
    throw std::runtime_error("dense index: data size does not match id count");
  if (norms.size() != ids.size()) throw std::runtime_error("dense index: norm cache size mismatch");
  for (size_t i = 0; i < norms.size(); ++i)
    if (!(norms[i] > 0.0f))
      throw std::runtime_error("dense index: zero-norm row for passage '" + ids[i] + "'");
}

std::vector<float> encode_text(const BiEncoder<float>& model, const Vocabulary& vocab,
                               const std::string& text, int max_tokens) {
  Graph<float> g(false);
  TokenSequence seq = tokenize(text, vocab, max_tokens);
  EncoderOutput<float> out = encode(g, model.enc, seq);
  return out.cls.value();
}

DenseIndex encode_corpus(const BiEncoder<float>& model, const Corpus& corpus,
                         const Vocabulary& vocab, int passage_length, int batch_size,
                         int threads, EncodeStats* stats) {
  if (corpus.size() == 0) throw std::invalid_argument("encode_corpus: empty corpus");
  if (batch_size < 1) throw std::invalid_argument("encode_corpus: batch size must be >= 1");
  const int d = model.enc.cfg.hidden_dim;
  const int n = corpus.size();

  std::vector<TokenSequence> seqs;
  seqs.reserve(static_cast<size_t>(n));
  int truncated = 0;
  for (const auto& passage : corpus.passages) {
    const auto words = word_tokens(passage.title + " " + passage.text);
    if (static_cast<int>(words.size()) > passage_length - 2) ++truncated;
    seqs.push_back(tokenize(passage.title + " " + passage.text, vocab, passage_length));
  }
  if (stats) stats->truncated = truncated;

  DenseIndex index;
  index.dim = d;
  index.ids.reserve(static_cast<size_t>(n));
  for (const auto& passage : corpus.passages) index.ids.push_back(passage.id);
  index.data.assign(static_cast<size_t>(n) * d, 0.0f);

  // Each worker owns a disjoint range of batches; rows land at fixed offsets
  // so the result is independent of the thread count.
  const int num_batches = (n + batch_size - 1) / batch_size;
  const int workers = std::max(1, std::min(threads, num_batches));
  auto encode_range = [&](int first_batch, int last_batch) {
    for (int bi = first_batch; bi < last_batch; ++bi) {
      const int lo = bi * batch_size;
      const int hi = std::min(n, lo + batch_size);
      std::vector<TokenSequence> batch(seqs.begin() + lo, seqs.begin() + hi);
      Graph<float> g(false);
      BatchEncoding<float> enc = encode_batch(g, model.enc, batch);
      const auto& cls = enc.cls.value();
      std::copy(cls.begin(), cls.end(), index.data.begin() + static_cast<size_t>(lo) * d);
    }
  };
  if (workers == 1) {
    encode_range(0, num_batches);
  } else {
    std::vector<std::thread> pool;
    const int per = (num_batches + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const int first = w * per;
      const int last = std::min(num_batches, first + per);
      if (first < last) pool.emplace_back(encode_range, first, last);
    }
    for (auto& t : pool) t.join();
  }

  index.norms.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double sq = 0.0;
    const float* row = index.row(i);
    for (int j = 0; j < d; ++j) sq += static_cast<double>(row[j]) * row[j];
    index.norms[static_cast<size_t>(i)] = static_cast<float>(std::sqrt(sq));
  }
  index.validate();
  return index;
}

std::vector<ScoredPassage> dense_search(const DenseIndex& index, const std::vector<float>& query,
                                        int k) {
  if (k < 1) throw std::invalid_argument("dense_search: k must be >= 1");
  if (static_cast<int>(query.size()) != index.dim)
    throw std::invalid_argument("dense_search: query dimension " + std::to_string(query.size()) +
                                " does not match index dimension " + std::to_string(index.dim));
  double qsq = 0.0;
  for (float v : query) qsq += static_cast<double>(v) * v;
  if (qsq <= 0.0) throw std::invalid_argument("dense_search: zero-norm query embedding");
  const double qnorm = std::sqrt(qsq);

  const int n = index.size();
  std::vector<std::pair<double, int>> scored(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const float* row = index.row(i);
    double dot = 0.0;
    for (int j = 0; j < index.dim; ++j) dot += static_cast<double>(row[j]) * query[static_cast<size_t>(j)];
    scored[static_cast<size_t>(i)] = {dot / (qnorm * index.norms[static_cast<size_t>(i)]), i};
  }
  const auto better = [&index](const std::pair<double, int>& a, const std::pair<double, int>& b) {
    if (a.first != b.first) return a.first > b.first;
    return index.ids[static_cast<size_t>(a.second)] < index.ids[static_cast<size_t>(b.second)];
  };
  const size_t keep = std::min(static_cast<size_t>(k), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<long>(keep), scored.end(), better);
  scored.resize(keep);

  std::vector<ScoredPassage> out;
  out.reserve(scored.size());
  for (const auto& [score, i] : scored) out.push_back({index.ids[static_cast<size_t>(i)], score});
  return out;
}

void save_index(const std::string& path, const DenseIndex& index) {
  index.validate();
  nlohmann::json manifest;
  manifest["dim"] = index.dim;
  manifest["ids"] = index.ids;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << kMagic << '\n' << manifest.dump() << '\n';
  static_assert(sizeof(float) == 4);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(index.data.data()),
              static_cast<std::streamsize>(index.data.size() * 4));
  } else {
    for (float v : index.data) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      char b[4] = {static_cast<char>(bits), static_cast<char>(bits >> 8),
                   static_cast<char>(bits >> 16), static_cast<char>(bits >> 24)};
      out.write(b, 4);
    }
  }
  if (!out) throw std::runtime_error(path + ": write failed");
}

DenseIndex load_index(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  std::string magic, manifest_line;
  if (!std::getline(in, magic) || magic != kMagic)
    throw std::runtime_error(path + ": not a dense index or unsupported version");
  if (!std::getline(in, manifest_line)) throw std::runtime_error(path + ": missing manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": manifest parse error: " + e.what());
  }
  DenseIndex index;
  index.dim = manifest.at("dim").get<int>();
  index.ids = manifest.at("ids").get<std::vector<std::string>>();
  index.data.resize(index.ids.size() * static_cast<size_t>(index.dim));
  in.read(reinterpret_cast<char*>(index.data.data()),
          static_cast<std::streamsize>(index.data.size() * 4));
  if (!in) throw std::runtime_error(path + ": truncated embedding blob");
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : index.data) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      bits = ((bits & 0xff) << 24) | ((bits & 0xff00) << 8) | ((bits >> 8) & 0xff00) | (bits >> 24);
      std::memcpy(&v, &bits, 4);
    }
  }
  index.norms.resize(index.ids.size());
  for (int i = 0; i < index.size(); ++i) {
    double sq = 0.0;
    const float* row = index.row(i);
    for (int j = 0; j < index.dim; ++j) sq += static_cast<double>(row[j]) * row[j];
    index.norms[static_cast<size_t>(i)] = static_cast<float>(std::sqrt(sq));
  }
  index.validate();
  return index;
}

}  // namespace bret
