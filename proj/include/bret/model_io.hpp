#pragma once

#include <string>

#include <json.hpp>

#include "bret/checkpoint.hpp"
#include "bret/config.hpp"
#include "bret/model.hpp"
#include "bret/vocab.hpp"

namespace bret {

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json vocab_to_json(const Vocabulary& vocab);
Vocabulary vocab_from_json(const nlohmann::json& j);

/// Checkpoint kinds: "pretrain" (encoder + decoder + generator), "retriever"
/// (encoder only), "reranker" (cross-encoder).
std::string checkpoint_kind(const ModelCheckpoint& ckpt);

struct LoadedBiEncoder {
  BiEncoder<float> model;
  Vocabulary vocab;
};

/// Builds a retriever from a pretrain or retriever checkpoint (the encoder
/// component and vocabulary are taken from the header).
LoadedBiEncoder biencoder_from_checkpoint(const ModelCheckpoint& ckpt);

ModelCheckpoint biencoder_to_checkpoint(BiEncoder<float>& model, const Vocabulary& vocab,
                                        uint64_t seed);

struct LoadedCrossEncoder {
  CrossEncoder<float> model;
  Vocabulary vocab;
};

LoadedCrossEncoder cross_encoder_from_checkpoint(const ModelCheckpoint& ckpt);

ModelCheckpoint cross_encoder_to_checkpoint(CrossEncoder<float>& model, const Vocabulary& vocab,
                                            uint64_t seed);

}  // namespace bret
