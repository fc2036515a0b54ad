#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bret/model.hpp"

namespace bret {

enum class Objective { kRlm, kEncDecMlm, kMlm, kEncDecRtd, kAutoEncoder };

Objective objective_from_string(const std::string& name);
std::string objective_to_string(Objective obj);

enum class GeneratorMode { kFrozen, kJoint, kRandomFrozen };

GeneratorMode generator_mode_from_string(const std::string& name);
std::string generator_mode_to_string(GeneratorMode mode);

struct GeneratorSection {
  int hidden_dim = 44;  // roughly a third of the encoder width
  int num_heads = 2;
  int layers = 2;
  int ffn_dim = 176;
  GeneratorMode mode = GeneratorMode::kFrozen;
  int pretrain_steps = 2000;
  int batch_size = 64;
  double learning_rate = 3e-4;
  bool shared_draws = false;  // reuse the encoder-side draw at shared positions
};

struct PretrainSection {
  Objective objective = Objective::kRlm;
  double enc_replace_rate = 0.30;
  double dec_replace_rate = 0.50;
  int steps = 80000;
  int batch_size = 2048;
  double learning_rate = 3e-4;
  int warmup_steps = 4000;
  int passage_length = 144;
};

struct FinetuneSection {
  double learning_rate = 2e-5;
  int warmup_steps = 1000;
  int batch_size = 64;
  int epochs = 3;
  double temperature = 0.02;
  int num_negatives = 15;
  int negatives_depth = 200;
  int query_length = 32;
  int passage_length = 144;
};

struct RerankerSection {
  double learning_rate = 3e-5;
  int warmup_steps = 1000;
  int batch_size = 64;
  int epochs = 3;
  int num_negatives = 63;  // candidates per query = num_negatives + 1
  int rerank_depth = 200;
  int max_pair_length = 192;
  int layers = 4;  // cross-encoder depth (width/heads follow the model section)
};

struct DistillSection {
  double learning_rate = 3e-5;
  int warmup_steps = 1000;
  int batch_size = 64;
  int epochs = 6;
  double temperature = 0.02;
  double alpha = 0.2;  // weight of the contrastive term next to the KL term
  int num_negatives = 23;
  bool in_batch = false;  // contrastive term over the candidate list only
};

struct Bm25Section {
  double k1 = 0.9;
  double b = 0.4;
};

/// Full run configuration; JSON round-trips exactly and unknown keys are
/// rejected at every level.
struct RunConfig {
  uint64_t seed = 42;
  ModelConfig model;
  GeneratorSection generator;
  PretrainSection pretrain;
  FinetuneSection finetune;
  RerankerSection reranker;
  DistillSection distill;
  Bm25Section bm25;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);

  /// Generator dims (vocabulary and max length follow the model section).
  ModelConfig generator_config() const;
  /// Cross-encoder dims.
  ModelConfig reranker_config() const;
};

RunConfig load_config(const std::string& path);
void save_config(const std::string& path, const RunConfig& cfg);

}  // namespace bret
