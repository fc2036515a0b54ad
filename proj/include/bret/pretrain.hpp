#pragma once

#include <string>
#include <vector>

#include "bret/checkpoint.hpp"
#include "bret/config.hpp"
#include "bret/corruption.hpp"
#include "bret/data.hpp"
#include "bret/model.hpp"
#include "bret/objectives.hpp"
#include "bret/vocab.hpp"

namespace bret {

struct PretrainResult {
  ModelCheckpoint checkpoint;  // encoder (+decoder +generator), config header, vocab
  PretrainMetricsLog log;
  bool aborted = false;  // loss went non-finite; checkpoint holds the last good state
  Vocabulary vocab;
  EncDecModel<float> model;
  GeneratorModel<float> generator;
};

std::vector<TokenSequence> tokenize_corpus(const Corpus& corpus, const Vocabulary& vocab,
                                           int max_tokens);

/// Runs corruption -> encoder -> bottleneck -> decoder -> objective ->
/// optimizer for the configured number of steps and returns the checkpoint
/// plus the per-step loss log. Only the encoder is meant to survive into
/// fine-tuning; the decoder and generator stay inside this checkpoint.
PretrainResult pretrain(const Corpus& corpus, const RunConfig& cfg);

}  // namespace bret
