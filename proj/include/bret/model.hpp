#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bret/tensor.hpp"
#include "bret/vocab.hpp"

namespace bret {

struct ModelConfig {
  int vocab_size = 4096;
  int hidden_dim = 128;
  int num_heads = 4;
  int enc_layers = 4;
  int dec_layers = 2;
  int ffn_dim = 512;
  int max_len = 64;
  double dropout = 0.1;
  bool tied_embeddings = true;  // decoder shares token embeddings and LM head with the encoder

  void validate() const {
    if (vocab_size <= kNumSpecials)
      throw std::invalid_argument("model config: vocab size must exceed " +
                                  std::to_string(kNumSpecials));
    if (hidden_dim <= 0 || num_heads <= 0 || hidden_dim % num_heads != 0)
      throw std::invalid_argument("model config: hidden dim " + std::to_string(hidden_dim) +
                                  " must be a positive multiple of heads " +
                                  std::to_string(num_heads));
    if (enc_layers < 1) throw std::invalid_argument("model config: encoder needs at least 1 layer");
    if (dec_layers < 1) throw std::invalid_argument("model config: decoder needs at least 1 layer");
    if (max_len < 2) throw std::invalid_argument("model config: max length must be at least 2");
    if (ffn_dim <= 0) throw std::invalid_argument("model config: feed-forward dim must be positive");
    if (dropout < 0.0 || dropout >= 1.0)
      throw std::invalid_argument("model config: dropout must lie in [0,1)");
  }
};

template <typename T>
struct TransformerLayer {
  Parameter<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Parameter<T> ln1_gamma, ln1_beta;
  Parameter<T> ff_w1, ff_b1, ff_w2, ff_b2;
  Parameter<T> ln2_gamma, ln2_beta;
};

/// Position embeddings plus attention/feed-forward layers (post-norm).
template <typename T>
struct Stack {
  Parameter<T> pos_emb;  // [max_len, d]
  std::vector<TransformerLayer<T>> layers;

  void init(const std::string& prefix, int num_layers, int d, int ffn, int max_len, Rng& rng) {
    pos_emb = Parameter<T>(prefix + ".pos_emb", {max_len, d});
    pos_emb.init_normal(rng, 0.02);
    layers.clear();
    for (int l = 0; l < num_layers; ++l) {
      const std::string lp = prefix + ".layer" + std::to_string(l);
      TransformerLayer<T> layer;
      layer.wq = Parameter<T>(lp + ".wq", {d, d});
      layer.wk = Parameter<T>(lp + ".wk", {d, d});
      layer.wv = Parameter<T>(lp + ".wv", {d, d});
      layer.wo = Parameter<T>(lp + ".wo", {d, d});
      layer.bq = Parameter<T>(lp + ".bq", {d});
      layer.bk = Parameter<T>(lp + ".bk", {d});
      layer.bv = Parameter<T>(lp + ".bv", {d});
      layer.bo = Parameter<T>(lp + ".bo", {d});
      layer.ln1_gamma = Parameter<T>(lp + ".ln1_gamma", {d});
      layer.ln1_beta = Parameter<T>(lp + ".ln1_beta", {d});
      layer.ff_w1 = Parameter<T>(lp + ".ff_w1", {d, ffn});
      layer.ff_b1 = Parameter<T>(lp + ".ff_b1", {ffn});
      layer.ff_w2 = Parameter<T>(lp + ".ff_w2", {ffn, d});
      layer.ff_b2 = Parameter<T>(lp + ".ff_b2", {d});
      layer.ln2_gamma = Parameter<T>(lp + ".ln2_gamma", {d});
      layer.ln2_beta = Parameter<T>(lp + ".ln2_beta", {d});
      for (Parameter<T>* w : {&layer.wq, &layer.wk, &layer.wv, &layer.wo, &layer.ff_w1, &layer.ff_w2})
        w->init_normal(rng, 0.02);
      layer.ln1_gamma.fill(T(1));
      layer.ln2_gamma.fill(T(1));
      layers.push_back(std::move(layer));
    }
  }

  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&pos_emb);
    for (auto& layer : layers)
      for (Parameter<T>* p :
           {&layer.wq, &layer.bq, &layer.wk, &layer.bk, &layer.wv, &layer.bv, &layer.wo, &layer.bo,
            &layer.ln1_gamma, &layer.ln1_beta, &layer.ff_w1, &layer.ff_b1, &layer.ff_w2,
            &layer.ff_b2, &layer.ln2_gamma, &layer.ln2_beta})
        out.push_back(p);
  }
};

/// Token embeddings plus one transformer stack; the building block shared by
/// the deep encoder, the generator and the cross-encoder.
template <typename T>
struct EncoderCore {
  ModelConfig cfg;
  Parameter<T> tok_emb;  // [V, d]
  Stack<T> stack;

  void init(const std::string& prefix, const ModelConfig& c, int num_layers, Rng& rng) {
    cfg = c;
    cfg.validate();
    tok_emb = Parameter<T>(prefix + ".tok_emb", {cfg.vocab_size, cfg.hidden_dim});
    tok_emb.init_normal(rng, 0.02);
    stack.init(prefix, num_layers, cfg.hidden_dim, cfg.ffn_dim, cfg.max_len, rng);
  }

  std::vector<Parameter<T>*> params() {
    std::vector<Parameter<T>*> out;
    out.push_back(&tok_emb);
    stack.collect(out);
    return out;
  }
};

struct ForwardOptions {
  bool training = false;  // enables dropout
  Rng* rng = nullptr;     // required when training with dropout > 0
};

template <typename T>
struct BatchEncoding {
  Tensor<T> hidden;             // [batch*len, d], final layer
  Tensor<T> cls;                // [batch, d], position-0 states
  std::vector<uint8_t> nonpad;  // stacked padding mask
  int batch = 0;
  int len = 0;
};

/// Single-sequence encoder output; cls is the position-0 state of the last
/// layer (the representation bottleneck).
template <typename T>
struct EncoderOutput {
  Tensor<T> hidden;  // [len, d]
  Tensor<T> cls;     // [1, d]
  std::vector<uint8_t> nonpad;
};

namespace detail {

template <typename T>
Tensor<T> maybe_dropout(Graph<T>& g, Tensor<T> x, const ModelConfig& cfg,
                        const ForwardOptions& opt) {
  (void)g;
  if (!opt.training || cfg.dropout <= 0.0) return x;
  if (!opt.rng) op_error("dropout", "training forward pass requires an rng");
  return dropout(x, cfg.dropout, *opt.rng);
}

/// Bidirectional multi-head self-attention over stacked per-item blocks.
/// Padded key positions receive exactly zero attention weight.
template <typename T>
Tensor<T> self_attention(Graph<T>& g, const TransformerLayer<T>& layer, Tensor<T> x, int batch,
                         int len, const std::vector<uint8_t>& nonpad, int num_heads) {
  const int d = x.cols();
  const int head_dim = d / num_heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(head_dim));
  Tensor<T> q = add_bias(matmul(x, g.param(layer.wq)),
                         g.param(layer.bq));
  Tensor<T> k = add_bias(matmul(x, g.param(layer.wk)),
                         g.param(layer.bk));
  Tensor<T> v = add_bias(matmul(x, g.param(layer.wv)),
                         g.param(layer.bv));
  std::vector<Tensor<T>> context_blocks;
  context_blocks.reserve(static_cast<size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    const int r0 = i * len, r1 = (i + 1) * len;
    Tensor<T> qi = slice_rows(q, r0, r1);
    Tensor<T> ki = slice_rows(k, r0, r1);
    Tensor<T> vi = slice_rows(v, r0, r1);
    std::vector<uint8_t> keys(nonpad.begin() + r0, nonpad.begin() + r1);
    std::vector<Tensor<T>> heads;
    heads.reserve(static_cast<size_t>(num_heads));
    for (int h = 0; h < num_heads; ++h) {
      const int c0 = h * head_dim, c1 = (h + 1) * head_dim;
      Tensor<T> qh = slice_cols(qi, c0, c1);
      Tensor<T> kh = slice_cols(ki, c0, c1);
      Tensor<T> vh = slice_cols(vi, c0, c1);
      Tensor<T> scores = scale(matmul_nt(qh, kh), inv_sqrt);
      Tensor<T> probs = row_softmax(scores, keys);
      heads.push_back(matmul(probs, vh));
    }
    context_blocks.push_back(concat_cols(heads));
  }
  Tensor<T> context = batch == 1 ? context_blocks[0] : concat_rows(context_blocks);
  return add_bias(matmul(context, g.param(layer.wo)),
                  g.param(layer.bo));
}

template <typename T>
Tensor<T> run_layers(Graph<T>& g, const Stack<T>& stack, const ModelConfig& cfg, Tensor<T> x,
                     int batch, int len, const std::vector<uint8_t>& nonpad,
                     const ForwardOptions& opt) {
  for (const auto& layer : stack.layers) {
    Tensor<T> attn = self_attention(g, layer, x, batch, len, nonpad, cfg.num_heads);
    attn = maybe_dropout(g, attn, cfg, opt);
    x = layer_norm(add(x, attn), g.param(layer.ln1_gamma),
                   g.param(layer.ln1_beta));
    Tensor<T> ff = add_bias(matmul(x, g.param(layer.ff_w1)),
                            g.param(layer.ff_b1));
    ff = gelu(ff);
    ff = add_bias(matmul(ff, g.param(layer.ff_w2)),
                  g.param(layer.ff_b2));
    ff = maybe_dropout(g, ff, cfg, opt);
    x = layer_norm(add(x, ff), g.param(layer.ln2_gamma),
                   g.param(layer.ln2_beta));
  }
  return x;
}

struct StackedIds {
  std::vector<int> tokens;
  std::vector<int> positions;
  std::vector<uint8_t> nonpad;
  int batch = 0;
  int len = 0;
};

inline StackedIds stack_sequences(const std::vector<TokenSequence>& seqs, int max_len,
                                  const char* op) {
  if (seqs.empty()) op_error(op, "empty batch");
  int len = 0;
  for (const auto& s : seqs) {
    if (s.ids.empty() || s.ids[0] != kClsId)
      op_error(op, "sequence must start with [CLS] at position 0");
    if (s.length() > max_len)
      op_error(op, "sequence length " + std::to_string(s.length()) + " exceeds max " +
                       std::to_string(max_len));
    if (s.ids.size() != s.attention.size()) op_error(op, "attention mask length mismatch");
    len = std::max(len, s.length());
  }
  StackedIds out;
  out.batch = static_cast<int>(seqs.size());
  out.len = len;
  out.tokens.reserve(static_cast<size_t>(out.batch) * len);
  out.positions.reserve(out.tokens.capacity());
  out.nonpad.reserve(out.tokens.capacity());
  for (const auto& s : seqs) {
    for (int p = 0; p < len; ++p) {
      out.tokens.push_back(p < s.length() ? s.ids[static_cast<size_t>(p)] : kPadId);
      out.positions.push_back(p);
      out.nonpad.push_back(p < s.length() ? s.attention[static_cast<size_t>(p)] : 0);
    }
  }
  return out;
}

}  // namespace detail

/// Bidirectional encoding of a batch of sequences (padded to the batch max
/// internally). cls holds the position-0 state of every item.
template <typename T>
BatchEncoding<T> encode_batch(Graph<T>& g, const EncoderCore<T>& m,
                              const std::vector<TokenSequence>& seqs,
                              const ForwardOptions& opt = {}) {
  const auto stacked = detail::stack_sequences(seqs, m.cfg.max_len, "encode");
  Tensor<T> emb = embedding(g.param(m.tok_emb), stacked.tokens);
  Tensor<T> pos = embedding(g.param(m.stack.pos_emb), stacked.positions);
  Tensor<T> x = detail::maybe_dropout(g, add(emb, pos), m.cfg, opt);
  x = detail::run_layers(g, m.stack, m.cfg, x, stacked.batch, stacked.len, stacked.nonpad, opt);
  std::vector<Tensor<T>> cls_rows;
  cls_rows.reserve(static_cast<size_t>(stacked.batch));
  for (int i = 0; i < stacked.batch; ++i)
    cls_rows.push_back(slice_rows(x, i * stacked.len, i * stacked.len + 1));
  BatchEncoding<T> out;
  out.hidden = x;
  out.cls = stacked.batch == 1 ? cls_rows[0] : concat_rows(cls_rows);
  out.nonpad = stacked.nonpad;
  out.batch = stacked.batch;
  out.len = stacked.len;
  return out;
}

template <typename T>
EncoderOutput<T> encode(Graph<T>& g, const EncoderCore<T>& m, const TokenSequence& seq,
                        const ForwardOptions& opt = {}) {
  BatchEncoding<T> batch = encode_batch(g, m, std::vector<TokenSequence>{seq}, opt);
  return EncoderOutput<T>{batch.hidden, batch.cls, std::move(batch.nonpad)};
}

/// Shallow decoder conditioned on the bottleneck: position 0's input is the
/// cls vector itself (no token or position embedding there); every other
/// position uses the decoder token+position embeddings of its sequence. The
/// cls rows are the only connection to the encoder.
template <typename T>
Tensor<T> decode_with_bottleneck_batch(Graph<T>& g, const Stack<T>& dec_stack,
                                       const Parameter<T>& tok_emb, const ModelConfig& cfg,
                                       const std::vector<TokenSequence>& seqs, Tensor<T> cls,
                                       const ForwardOptions& opt = {}) {
  const auto stacked = detail::stack_sequences(seqs, cfg.max_len, "decode");
  if (cls.shape().size() != 2 || cls.cols() != cfg.hidden_dim)
    op_error("decode", "bottleneck width " + shape_str(cls.shape()) + " does not match hidden dim " +
                           std::to_string(cfg.hidden_dim));
  if (cls.rows() != stacked.batch)
    op_error("decode", "bottleneck rows " + std::to_string(cls.rows()) + " vs batch " +
                           std::to_string(stacked.batch));
  Tensor<T> emb = embedding(g.param(tok_emb), stacked.tokens);
  Tensor<T> pos = embedding(g.param(dec_stack.pos_emb), stacked.positions);
  Tensor<T> table = add(emb, pos);
  std::vector<Tensor<T>> rows;
  rows.reserve(static_cast<size_t>(2 * stacked.batch));
  for (int i = 0; i < stacked.batch; ++i) {
    rows.push_back(slice_rows(cls, i, i + 1));
    rows.push_back(slice_rows(table, i * stacked.len + 1, (i + 1) * stacked.len));
  }
  Tensor<T> x = detail::maybe_dropout(g, concat_rows(rows), cfg, opt);
  return detail::run_layers(g, dec_stack, cfg, x, stacked.batch, stacked.len, stacked.nonpad, opt);
}

/// Affine projection onto the vocabulary, tied to the token-embedding matrix.
template <typename T>
Tensor<T> lm_head(Graph<T>& g, Tensor<T> hidden, const Parameter<T>& tok_emb,
                  const Parameter<T>& bias) {
  return add_bias(matmul_nt(hidden, g.param(tok_emb)),
                  g.param(bias));
}

// ---------------------------------------------------------------------------
// Whole models
// ---------------------------------------------------------------------------

/// Biencoder retriever: one shared encoder maps queries and passages to their
/// bottleneck vectors.
template <typename T>
struct BiEncoder {
  EncoderCore<T> enc;

  void init(const ModelConfig& cfg, Rng& rng) { enc.init("encoder", cfg, cfg.enc_layers, rng); }
  std::vector<Parameter<T>*> params() { return enc.params(); }
};

/// Small masked-language-model used to sample replacement tokens. Shares the
/// vocabulary but has its own (narrower) width; may be frozen.
template <typename T>
struct GeneratorModel {
  EncoderCore<T> enc;
  Parameter<T> lm_bias;
  bool frozen = false;

  void init(const ModelConfig& cfg, Rng& rng) {
    enc.init("generator", cfg, cfg.enc_layers, rng);
    lm_bias = Parameter<T>("generator.lm_bias", {cfg.vocab_size});
  }
  std::vector<Parameter<T>*> params() {
    auto out = enc.params();
    out.push_back(&lm_bias);
    return out;
  }
};

/// Deep encoder + shallow bottleneck decoder with a shared (or separate)
/// token embedding and tied LM head.
template <typename T>
struct EncDecModel {
  ModelConfig cfg;
  EncoderCore<T> enc;
  Parameter<T> lm_bias;
  bool has_decoder = true;
  Stack<T> decoder;
  Parameter<T> dec_tok_emb, dec_lm_bias;  // only active when !cfg.tied_embeddings
  bool has_rtd_heads = false;
  Parameter<T> rtd_enc_w, rtd_enc_b, rtd_dec_w, rtd_dec_b;

  void init(const ModelConfig& c, Rng& rng, bool with_decoder = true, bool with_rtd = false) {
    cfg = c;
    cfg.validate();
    enc.init("encoder", cfg, cfg.enc_layers, rng);
    lm_bias = Parameter<T>("encoder.lm_bias", {cfg.vocab_size});
    has_decoder = with_decoder;
    if (has_decoder) {
      decoder.init("decoder", cfg.dec_layers, cfg.hidden_dim, cfg.ffn_dim, cfg.max_len, rng);
      if (!cfg.tied_embeddings) {
        dec_tok_emb = Parameter<T>("decoder.tok_emb", {cfg.vocab_size, cfg.hidden_dim});
        dec_tok_emb.init_normal(rng, 0.02);
        dec_lm_bias = Parameter<T>("decoder.lm_bias", {cfg.vocab_size});
      }
    }
    has_rtd_heads = with_rtd;
    if (has_rtd_heads) {
      rtd_enc_w = Parameter<T>("encoder.rtd_w", {cfg.hidden_dim, 1});
      rtd_enc_w.init_normal(rng, 0.02);
      rtd_enc_b = Parameter<T>("encoder.rtd_b", {1});
      if (has_decoder) {
        rtd_dec_w = Parameter<T>("decoder.rtd_w", {cfg.hidden_dim, 1});
        rtd_dec_w.init_normal(rng, 0.02);
        rtd_dec_b = Parameter<T>("decoder.rtd_b", {1});
      }
    }
  }

  const Parameter<T>& decoder_tok_emb() const { return cfg.tied_embeddings ? enc.tok_emb : dec_tok_emb; }
  Parameter<T>& decoder_tok_emb() { return cfg.tied_embeddings ? enc.tok_emb : dec_tok_emb; }
  const Parameter<T>& decoder_lm_bias() const { return cfg.tied_embeddings ? lm_bias : dec_lm_bias; }

  std::vector<Parameter<T>*> params() {
    auto out = enc.params();
    out.push_back(&lm_bias);
    if (has_decoder) {
      decoder.collect(out);
      if (!cfg.tied_embeddings) {
        out.push_back(&dec_tok_emb);
        out.push_back(&dec_lm_bias);
      }
    }
    if (has_rtd_heads) {
      out.push_back(&rtd_enc_w);
      out.push_back(&rtd_enc_b);
      if (has_decoder) {
        out.push_back(&rtd_dec_w);
        out.push_back(&rtd_dec_b);
      }
    }
    return out;
  }
};

/// Cross-encoder scorer over [CLS] query [SEP] passage [SEP] inputs.
template <typename T>
struct CrossEncoder {
  EncoderCore<T> enc;
  Parameter<T> score_w;  // [d, 1]
  Parameter<T> score_b;  // [1]

  void init(const ModelConfig& cfg, Rng& rng) {
    enc.init("reranker", cfg, cfg.enc_layers, rng);
    score_w = Parameter<T>("reranker.score_w", {cfg.hidden_dim, 1});
    score_w.init_normal(rng, 0.02);
    score_b = Parameter<T>("reranker.score_b", {1});
  }
  std::vector<Parameter<T>*> params() {
    auto out = enc.params();
    out.push_back(&score_w);
    out.push_back(&score_b);
    return out;
  }
};

/// Builds the concatenated cross-encoder input. Passage tokens are truncated
/// first when the pair exceeds max_len.
inline TokenSequence make_cross_input(const TokenSequence& query, const TokenSequence& passage,
                                      int max_len) {
  auto content = [](const TokenSequence& s) {
    std::vector<int> out;
    for (int id : s.ids)
      if (id != kClsId && id != kSepId && id != kPadId) out.push_back(id);
    return out;
  };
  const std::vector<int> q = content(query);
  const std::vector<int> p = content(passage);
  if (q.empty()) throw std::invalid_argument("cross input: empty query");
  if (p.empty()) throw std::invalid_argument("cross input: empty passage");
  if (max_len < 5) throw std::invalid_argument("cross input: max length too small");
  TokenSequence seq;
  seq.ids.push_back(kClsId);
  const size_t q_room = std::min(q.size(), static_cast<size_t>(max_len - 4));
  for (size_t i = 0; i < q_room; ++i) seq.ids.push_back(q[i]);
  seq.ids.push_back(kSepId);
  const size_t p_room = std::min(p.size(), static_cast<size_t>(max_len) - seq.ids.size() - 1);
  for (size_t i = 0; i < p_room; ++i) seq.ids.push_back(p[i]);
  seq.ids.push_back(kSepId);
  seq.attention.assign(seq.ids.size(), 1);
  return seq;
}

/// Scores a batch of already-concatenated pairs; returns [n, 1].
template <typename T>
Tensor<T> cross_scores(Graph<T>& g, const CrossEncoder<T>& m,
                       const std::vector<TokenSequence>& pairs, const ForwardOptions& opt = {}) {
  BatchEncoding<T> batch = encode_batch(g, m.enc, pairs, opt);
  return add_bias(matmul(batch.cls, g.param(m.score_w)),
                  g.param(m.score_b));
}

/// theta(q, d): the re-ranker's relevance score for one pair.
template <typename T>
T cross_score(const CrossEncoder<T>& m, const TokenSequence& query, const TokenSequence& passage) {
  Graph<T> g(false);
  Tensor<T> s = cross_scores(g, m, {make_cross_input(query, passage, m.enc.cfg.max_len)});
  return s.value()[0];
}

}  // namespace bret
