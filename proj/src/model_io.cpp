#include "bret/model_io.hpp"

#include <stdexcept>

namespace bret {

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return {{"vocab_size", cfg.vocab_size}, {"hidden_dim", cfg.hidden_dim},
          {"num_heads", cfg.num_heads},   {"enc_layers", cfg.enc_layers},
          {"dec_layers", cfg.dec_layers}, {"ffn_dim", cfg.ffn_dim},
          {"max_len", cfg.max_len},       {"dropout", cfg.dropout},
          {"tied_embeddings", cfg.tied_embeddings}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.hidden_dim = j.at("hidden_dim").get<int>();
  cfg.num_heads = j.at("num_heads").get<int>();
  cfg.enc_layers = j.at("enc_layers").get<int>();
  cfg.dec_layers = j.at("dec_layers").get<int>();
  cfg.ffn_dim = j.at("ffn_dim").get<int>();
  cfg.max_len = j.at("max_len").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.tied_embeddings = j.at("tied_embeddings").get<bool>();
  cfg.validate();
  return cfg;
}

nlohmann::json vocab_to_json(const Vocabulary& vocab) { return vocab.content_tokens(); }

Vocabulary vocab_from_json(const nlohmann::json& j) {
  return Vocabulary(j.get<std::vector<std::string>>());
}

std::string checkpoint_kind(const ModelCheckpoint& ckpt) {
  if (!ckpt.config.contains("kind"))
    throw std::runtime_error("checkpoint: config header has no kind field");
  return ckpt.config.at("kind").get<std::string>();
}

LoadedBiEncoder biencoder_from_checkpoint(const ModelCheckpoint& ckpt) {
  const std::string kind = checkpoint_kind(ckpt);
  if (kind != "pretrain" && kind != "retriever")
    throw std::runtime_error("checkpoint: cannot build a retriever from kind '" + kind + "'");
  LoadedBiEncoder out;
  out.vocab = vocab_from_json(ckpt.config.at("vocab"));
  ModelConfig cfg = model_config_from_json(ckpt.config.at("model"));
  Rng rng(0);  // placeholder values; every parameter is restored below
  out.model.init(cfg, rng);
  restore_params(ckpt, out.model.params());
  return out;
}

ModelCheckpoint biencoder_to_checkpoint(BiEncoder<float>& model, const Vocabulary& vocab,
                                        uint64_t seed) {
  ModelCheckpoint ckpt;
  ckpt.seed = seed;
  ckpt.config["kind"] = "retriever";
  ckpt.config["model"] = model_config_to_json(model.enc.cfg);
  ckpt.config["vocab"] = vocab_to_json(vocab);
  append_params(ckpt, model.params());
  return ckpt;
}

LoadedCrossEncoder cross_encoder_from_checkpoint(const ModelCheckpoint& ckpt) {
  if (checkpoint_kind(ckpt) != "reranker")
    throw std::runtime_error("checkpoint: expected a reranker checkpoint, got kind '" +
                             checkpoint_kind(ckpt) + "'");
  LoadedCrossEncoder out;
  out.vocab = vocab_from_json(ckpt.config.at("vocab"));
  ModelConfig cfg = model_config_from_json(ckpt.config.at("model"));
  Rng rng(0);
  out.model.init(cfg, rng);
  restore_params(ckpt, out.model.params());
  return out;
}

ModelCheckpoint cross_encoder_to_checkpoint(CrossEncoder<float>& model, const Vocabulary& vocab,
                                            uint64_t seed) {
  ModelCheckpoint ckpt;
  ckpt.seed = seed;
  ckpt.config["kind"] = "reranker";
  ckpt.config["model"] = model_config_to_json(model.enc.cfg);
  ckpt.config["vocab"] = vocab_to_json(vocab);
  append_params(ckpt, model.params());
  return ckpt;
}

}  // namespace bret
