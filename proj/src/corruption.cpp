#include "bret/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bret/objectives.hpp"
#include "bret/optimizer.hpp"

namespace bret {

std::vector<uint8_t> eligible_mask(const TokenSequence& seq) {
  std::vector<uint8_t> out(seq.ids.size());
  for (size_t i = 0; i < seq.ids.size(); ++i)
    out[i] = (seq.attention[i] && seq.ids[i] >= kNumSpecials) ? 1 : 0;
  return out;
}

MaskSets sample_mask_sets(const std::vector<uint8_t>& eligible, double p_enc, double p_dec,
                          Rng& rng) {
  if (p_enc < 0.0 || p_dec > 1.0 || p_enc > p_dec)
    throw std::invalid_argument("sample_mask_sets: need 0 <= p_enc <= p_dec <= 1, got p_enc=" +
                                std::to_string(p_enc) + " p_dec=" + std::to_string(p_dec));
  const double extra = p_enc < 1.0 ? (p_dec - p_enc) / (1.0 - p_enc) : 0.0;
  MaskSets sets;
  for (size_t i = 0; i < eligible.size(); ++i) {
    if (!eligible[i]) continue;
    const int pos = static_cast<int>(i);
    if (rng.uniform() < p_enc) {
      sets.enc_positions.push_back(pos);
      sets.dec_positions.push_back(pos);
    } else if (rng.uniform() < extra) {
      sets.dec_positions.push_back(pos);
    }
  }
  return sets;
}

std::vector<int> mask_with_token(const std::vector<int>& ids, const std::vector<int>& positions) {
  std::vector<int> out = ids;
  for (int pos : positions) {
    if (pos < 0 || pos >= static_cast<int>(ids.size()))
      throw std::invalid_argument("mask_with_token: position " + std::to_string(pos) +
                                  " out of range");
    out[static_cast<size_t>(pos)] = kMaskId;
  }
  return out;
}

std::vector<int> generator_sample(const std::vector<int>& ids,
                                  const std::vector<uint8_t>& attention,
                                  const std::vector<int>& positions,
                                  const GeneratorModel<float>& generator, Rng& rng) {
  std::vector<int> out = ids;
  if (positions.empty()) return out;
  TokenSequence masked;
  masked.ids = mask_with_token(ids, positions);
  masked.attention = attention;

  Graph<float> g(false);
  EncoderOutput<float> enc = encode(g, generator.enc, masked);
  Tensor<float> logits = lm_head(g, enc.hidden, generator.enc.tok_emb, generator.lm_bias);
  const int v = logits.cols();

  std::vector<double> probs(static_cast<size_t>(v));
  for (int pos : positions) {
    const float* row = logits.value().data() + static_cast<size_t>(pos) * v;
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double total = 0.0;
    for (int j = 0; j < v; ++j) {
      probs[static_cast<size_t>(j)] = std::exp(static_cast<double>(row[j]) - mx);
      total += probs[static_cast<size_t>(j)];
    }
    double u = rng.uniform() * total;
    int pick = v - 1;
    for (int j = 0; j < v; ++j) {
      u -= probs[static_cast<size_t>(j)];
      if (u < 0.0) {
        pick = j;
        break;
      }
    }
    out[static_cast<size_t>(pos)] = pick;
  }
  return out;
}

CorruptedPair corrupt_pair(const TokenSequence& seq, double p_enc, double p_dec,
                           const GeneratorModel<float>& generator, Rng& rng, bool shared_draws) {
  const auto eligible = eligible_mask(seq);
  MaskSets sets = sample_mask_sets(eligible, p_enc, p_dec, rng);
  CorruptedPair pair;
  pair.original = seq.ids;
  pair.p_enc = p_enc;
  pair.p_dec = p_dec;
  pair.enc_positions = std::move(sets.enc_positions);
  pair.dec_positions = std::move(sets.dec_positions);
  if (shared_draws) {
    // One pass through the generator; the encoder input reuses the decoder
    // draws at the shared positions.
    pair.dec_input = generator_sample(seq.ids, seq.attention, pair.dec_positions, generator, rng);
    pair.enc_input = seq.ids;
    for (int pos : pair.enc_positions)
      pair.enc_input[static_cast<size_t>(pos)] = pair.dec_input[static_cast<size_t>(pos)];
  } else {
    pair.enc_input = generator_sample(seq.ids, seq.attention, pair.enc_positions, generator, rng);
    pair.dec_input = generator_sample(seq.ids, seq.attention, pair.dec_positions, generator, rng);
  }
  return pair;
}

CorruptedPair build_autoencoder_pair(const TokenSequence& seq) {
  CorruptedPair pair;
  pair.original = seq.ids;
  pair.enc_input = seq.ids;
  pair.dec_input = seq.ids;
  pair.p_enc = 0.0;
  pair.p_dec = 1.0;
  const auto eligible = eligible_mask(seq);
  for (size_t i = 0; i < eligible.size(); ++i) {
    if (!eligible[i]) continue;
    pair.dec_input[i] = kMaskId;
    pair.dec_positions.push_back(static_cast<int>(i));
  }
  return pair;
}

namespace {

/// One masked-LM step batch for the generator: inputs with [MASK] at sampled
/// positions, targets at those positions only.
struct MlmBatch {
  std::vector<TokenSequence> inputs;
  std::vector<int> targets;       // stacked, padded layout
  std::vector<uint8_t> masked;    // stacked flags
  int len = 0;
};

MlmBatch build_mlm_batch(const std::vector<TokenSequence>& seqs, double mask_rate, Rng& rng) {
  MlmBatch batch;
  int len = 0;
  for (const auto& s : seqs) len = std::max(len, s.length());
  batch.len = len;
  batch.targets.assign(seqs.size() * static_cast<size_t>(len), kPadId);
  batch.masked.assign(seqs.size() * static_cast<size_t>(len), 0);
  for (size_t i = 0; i < seqs.size(); ++i) {
    TokenSequence padded = seqs[i];
    padded.pad_to(len);
    const auto eligible = eligible_mask(padded);
    std::vector<int> positions;
    for (size_t pos = 0; pos < eligible.size(); ++pos)
      if (eligible[pos] && rng.uniform() < mask_rate) positions.push_back(static_cast<int>(pos));
    if (positions.empty()) {
      // Guarantee at least one supervised position per sequence.
      std::vector<int> candidates;
      for (size_t pos = 0; pos < eligible.size(); ++pos)
        if (eligible[pos]) candidates.push_back(static_cast<int>(pos));
      if (!candidates.empty())
        positions.push_back(candidates[static_cast<size_t>(rng.uniform_int(
            static_cast<int>(candidates.size())))]);
    }
    for (int pos : positions) {
      batch.targets[i * static_cast<size_t>(len) + static_cast<size_t>(pos)] =
          padded.ids[static_cast<size_t>(pos)];
      batch.masked[i * static_cast<size_t>(len) + static_cast<size_t>(pos)] = 1;
    }
    padded.ids = mask_with_token(padded.ids, positions);
    batch.inputs.push_back(std::move(padded));
  }
  return batch;
}

double mlm_loss_value(const GeneratorModel<float>& model, const MlmBatch& batch,
                      Graph<float>& g) {
  BatchEncoding<float> enc = encode_batch(g, model.enc, batch.inputs);
  Tensor<float> logits = lm_head(g, enc.hidden, model.enc.tok_emb, model.lm_bias);
  Tensor<float> loss = loss_mlm(g, logits, batch.targets, batch.masked);
  return static_cast<double>(loss.item());
}

}  // namespace

double generator_mlm_loss(const GeneratorModel<float>& generator,
                          const std::vector<TokenSequence>& batch, double mask_rate,
                          uint64_t seed) {
  if (batch.empty()) throw std::invalid_argument("generator_mlm_loss: empty batch");
  Rng rng(mix_seed(seed, 0x6d6c6d));
  MlmBatch mlm = build_mlm_batch(batch, mask_rate, rng);
  Graph<float> g(false);
  return mlm_loss_value(generator, mlm, g);
}

GeneratorTraining train_generator(const std::vector<TokenSequence>& corpus,
                                  const ModelConfig& gen_cfg, const GeneratorSection& section,
                                  double mask_rate, uint64_t seed) {
  if (corpus.empty()) throw std::invalid_argument("train_generator: empty corpus");
  GeneratorTraining out;
  Rng init_rng(mix_seed(seed, 0x67656e));
  out.model.init(gen_cfg, init_rng);

  if (section.mode == GeneratorMode::kRandomFrozen || section.pretrain_steps == 0) {
    out.model.frozen = section.mode != GeneratorMode::kJoint;
    return out;
  }

  Rng data_rng(mix_seed(seed, 0x67656e, 1));
  OptimizerConfig opt_cfg;
  opt_cfg.learning_rate = section.learning_rate;
  opt_cfg.warmup_steps = std::min(section.pretrain_steps / 10, 1000);
  opt_cfg.total_steps = section.pretrain_steps;
  AdamW<float> opt(opt_cfg);
  auto params = out.model.params();

  std::vector<int> order(corpus.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  size_t cursor = order.size();  // trigger shuffle on first use

  for (int step = 0; step < section.pretrain_steps; ++step) {
    std::vector<TokenSequence> seqs;
    for (int b = 0; b < section.batch_size; ++b) {
      if (cursor == order.size()) {
        data_rng.shuffle(order);
        cursor = 0;
      }
      seqs.push_back(corpus[static_cast<size_t>(order[cursor++])]);
    }
    MlmBatch batch = build_mlm_batch(seqs, mask_rate, data_rng);
    Graph<float> g;
    BatchEncoding<float> enc = encode_batch(g, out.model.enc, batch.inputs);
    Tensor<float> logits = lm_head(g, enc.hidden, out.model.enc.tok_emb, out.model.lm_bias);
    Tensor<float> loss = loss_mlm(g, logits, batch.targets, batch.masked);
    const double value = static_cast<double>(loss.item());
    if (step == 0) out.initial_loss = value;
    out.final_loss = value;
    if (!std::isfinite(value))
      throw std::runtime_error("train_generator: loss diverged at step " + std::to_string(step));
    g.backward(loss);
    opt.step(params);
  }
  out.model.frozen = section.mode != GeneratorMode::kJoint;
  return out;
}

}  // namespace bret
