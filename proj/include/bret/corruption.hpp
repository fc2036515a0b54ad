#pragma once

#include <cstdint>
#include <vector>

#include "bret/config.hpp"
#include "bret/model.hpp"
#include "bret/rng.hpp"
#include "bret/vocab.hpp"

namespace bret {

/// Original tokens x, the corrupted encoder/decoder inputs, and the replaced
/// position sets. dec_positions is always a superset of enc_positions, and
/// special/pad positions never appear in either.
struct CorruptedPair {
  std::vector<int> original;
  std::vector<int> enc_input;
  std::vector<int> dec_input;
  std::vector<int> enc_positions;  // sorted
  std::vector<int> dec_positions;  // sorted
  double p_enc = 0.0;
  double p_dec = 0.0;
};

/// Positions open to replacement: non-pad and non-special.
std::vector<uint8_t> eligible_mask(const TokenSequence& seq);

struct MaskSets {
  std::vector<int> enc_positions;
  std::vector<int> dec_positions;
};

/// Samples coupled mask sets with exact marginal rates p_enc and p_dec and
/// enc ⊆ dec: every eligible position joins the encoder set with probability
/// p_enc; the rest join the decoder set with probability
/// (p_dec - p_enc) / (1 - p_enc).
MaskSets sample_mask_sets(const std::vector<uint8_t>& eligible, double p_enc, double p_dec,
                          Rng& rng);

/// Replaces ids[positions] with [MASK].
std::vector<int> mask_with_token(const std::vector<int>& ids, const std::vector<int>& positions);

/// Replaces the given positions with draws from the generator's MLM
/// distribution; the generator sees the input with those positions masked.
/// A draw may reproduce the original token.
std::vector<int> generator_sample(const std::vector<int>& ids,
                                  const std::vector<uint8_t>& attention,
                                  const std::vector<int>& positions,
                                  const GeneratorModel<float>& generator, Rng& rng);

/// Mask-then-sample for both streams. With shared_draws the decoder-side
/// draws are made once and the encoder input reuses them at shared positions;
/// otherwise the two streams sample independently.
CorruptedPair corrupt_pair(const TokenSequence& seq, double p_enc, double p_dec,
                           const GeneratorModel<float>& generator, Rng& rng,
                           bool shared_draws = false);

/// Uncorrupted encoder input; decoder input is all [MASK] except special and
/// pad positions, so reconstruction must flow through the bottleneck.
CorruptedPair build_autoencoder_pair(const TokenSequence& seq);

struct GeneratorTraining {
  GeneratorModel<float> model;
  double initial_loss = 0.0;  // masked-LM loss at init on the training stream
  double final_loss = 0.0;
};

/// Builds the generator per mode: frozen and joint first train a small MLM on
/// the corpus (frozen then fixes the weights); random-frozen skips training.
GeneratorTraining train_generator(const std::vector<TokenSequence>& corpus,
                                  const ModelConfig& gen_cfg, const GeneratorSection& section,
                                  double mask_rate, uint64_t seed);

/// Masked-LM loss of a generator on a token batch at the given mask rate.
double generator_mlm_loss(const GeneratorModel<float>& generator,
                          const std::vector<TokenSequence>& batch, double mask_rate,
                          uint64_t seed);

}  // namespace bret
