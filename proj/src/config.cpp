#include "bret/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace bret {

namespace {

using nlohmann::json;

[[noreturn]] void cfg_error(const std::string& what) {
  throw std::invalid_argument("config: " + what);
}

class SectionReader {
 public:
  SectionReader(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) cfg_error("section '" + name_ + "' must be an object");
  }
  ~SectionReader() = default;

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) cfg_error("unknown key '" + name_ + "." + it.key() + "'");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      cfg_error("bad value for '" + name_ + "." + key + "'");
    }
  }

  void get_string(const char* key, std::string& out) { get<std::string>(key, out); }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void check_range(bool ok, const std::string& what) {
  if (!ok) cfg_error(what);
}

}  // namespace

Objective objective_from_string(const std::string& name) {
  if (name == "rlm") return Objective::kRlm;
  if (name == "enc_dec_mlm") return Objective::kEncDecMlm;
  if (name == "mlm") return Objective::kMlm;
  if (name == "enc_dec_rtd") return Objective::kEncDecRtd;
  if (name == "autoencoder") return Objective::kAutoEncoder;
  cfg_error("unknown objective '" + name +
            "' (expected rlm|enc_dec_mlm|mlm|enc_dec_rtd|autoencoder)");
}

std::string objective_to_string(Objective obj) {
  switch (obj) {
    case Objective::kRlm: return "rlm";
    case Objective::kEncDecMlm: return "enc_dec_mlm";
    case Objective::kMlm: return "mlm";
    case Objective::kEncDecRtd: return "enc_dec_rtd";
    case Objective::kAutoEncoder: return "autoencoder";
  }
  cfg_error("invalid objective enum");
}

GeneratorMode generator_mode_from_string(const std::string& name) {
  if (name == "frozen") return GeneratorMode::kFrozen;
  if (name == "joint") return GeneratorMode::kJoint;
  if (name == "random-frozen") return GeneratorMode::kRandomFrozen;
  cfg_error("unknown generator mode '" + name + "' (expected frozen|joint|random-frozen)");
}

std::string generator_mode_to_string(GeneratorMode mode) {
  switch (mode) {
    case GeneratorMode::kFrozen: return "frozen";
    case GeneratorMode::kJoint: return "joint";
    case GeneratorMode::kRandomFrozen: return "random-frozen";
  }
  cfg_error("invalid generator mode enum");
}

void RunConfig::validate() const {
  model.validate();
  check_range(generator.hidden_dim > 0 && generator.num_heads > 0 &&
                  generator.hidden_dim % generator.num_heads == 0,
              "generator.hidden_dim must be a positive multiple of generator.num_heads");
  check_range(generator.layers >= 1, "generator.layers must be >= 1");
  check_range(generator.ffn_dim > 0, "generator.ffn_dim must be positive");
  check_range(generator.pretrain_steps >= 0, "generator.pretrain_steps must be >= 0");
  check_range(generator.batch_size >= 1, "generator.batch_size must be >= 1");
  check_range(generator.learning_rate > 0, "generator.learning_rate must be positive");

  check_range(pretrain.enc_replace_rate >= 0.0 && pretrain.enc_replace_rate <= 1.0,
              "pretrain.enc_replace_rate must lie in [0,1]");
  check_range(pretrain.dec_replace_rate >= 0.0 && pretrain.dec_replace_rate <= 1.0,
              "pretrain.dec_replace_rate must lie in [0,1]");
  check_range(pretrain.enc_replace_rate <= pretrain.dec_replace_rate,
              "pretrain.enc_replace_rate must not exceed pretrain.dec_replace_rate");
  check_range(pretrain.steps >= 1, "pretrain.steps must be >= 1");
  check_range(pretrain.batch_size >= 1, "pretrain.batch_size must be >= 1");
  check_range(pretrain.learning_rate > 0, "pretrain.learning_rate must be positive");
  check_range(pretrain.warmup_steps >= 0, "pretrain.warmup_steps must be >= 0");
  check_range(pretrain.passage_length >= 2 && pretrain.passage_length <= model.max_len,
              "pretrain.passage_length must lie in [2, model.max_len]");

  check_range(finetune.learning_rate > 0, "finetune.learning_rate must be positive");
  check_range(finetune.warmup_steps >= 0, "finetune.warmup_steps must be >= 0");
  check_range(finetune.batch_size >= 1, "finetune.batch_size must be >= 1");
  check_range(finetune.epochs >= 1, "finetune.epochs must be >= 1");
  check_range(finetune.temperature > 0, "finetune.temperature must be positive");
  check_range(finetune.num_negatives >= 1, "finetune.num_negatives must be >= 1");
  check_range(finetune.negatives_depth >= 1, "finetune.negatives_depth must be >= 1");
  check_range(finetune.query_length >= 2 && finetune.query_length <= model.max_len,
              "finetune.query_length must lie in [2, model.max_len]");
  check_range(finetune.passage_length >= 2 && finetune.passage_length <= model.max_len,
              "finetune.passage_length must lie in [2, model.max_len]");

  check_range(reranker.learning_rate > 0, "reranker.learning_rate must be positive");
  check_range(reranker.warmup_steps >= 0, "reranker.warmup_steps must be >= 0");
  check_range(reranker.batch_size >= 1, "reranker.batch_size must be >= 1");
  check_range(reranker.epochs >= 1, "reranker.epochs must be >= 1");
  check_range(reranker.num_negatives >= 1, "reranker.num_negatives must be >= 1");
  check_range(reranker.rerank_depth >= 1, "reranker.rerank_depth must be >= 1");
  check_range(reranker.max_pair_length >= 5, "reranker.max_pair_length must be >= 5");
  check_range(reranker.layers >= 1, "reranker.layers must be >= 1");

  check_range(distill.learning_rate > 0, "distill.learning_rate must be positive");
  check_range(distill.warmup_steps >= 0, "distill.warmup_steps must be >= 0");
  check_range(distill.batch_size >= 1, "distill.batch_size must be >= 1");
  check_range(distill.epochs >= 1, "distill.epochs must be >= 1");
  check_range(distill.temperature > 0, "distill.temperature must be positive");
  check_range(distill.alpha >= 0, "distill.alpha must be >= 0");
  check_range(distill.num_negatives >= 1, "distill.num_negatives must be >= 1");

  check_range(bm25.k1 >= 0, "bm25.k1 must be >= 0");
  check_range(bm25.b >= 0 && bm25.b <= 1, "bm25.b must lie in [0,1]");
  generator_config().validate();
  reranker_config().validate();
}

nlohmann::json RunConfig::to_json() const {
  json j;
  j["version"] = 1;
  j["seed"] = seed;
  j["model"] = {{"vocab_size", model.vocab_size},
                {"hidden_dim", model.hidden_dim},
                {"num_heads", model.num_heads},
                {"enc_layers", model.enc_layers},
                {"dec_layers", model.dec_layers},
                {"ffn_dim", model.ffn_dim},
                {"max_len", model.max_len},
                {"dropout", model.dropout},
                {"tied_embeddings", model.tied_embeddings}};
  j["generator"] = {{"hidden_dim", generator.hidden_dim},
                    {"num_heads", generator.num_heads},
                    {"layers", generator.layers},
                    {"ffn_dim", generator.ffn_dim},
                    {"mode", generator_mode_to_string(generator.mode)},
                    {"pretrain_steps", generator.pretrain_steps},
                    {"batch_size", generator.batch_size},
                    {"learning_rate", generator.learning_rate},
                    {"shared_draws", generator.shared_draws}};
  j["pretrain"] = {{"objective", objective_to_string(pretrain.objective)},
                   {"enc_replace_rate", pretrain.enc_replace_rate},
                   {"dec_replace_rate", pretrain.dec_replace_rate},
                   {"steps", pretrain.steps},
                   {"batch_size", pretrain.batch_size},
                   {"learning_rate", pretrain.learning_rate},
                   {"warmup_steps", pretrain.warmup_steps},
                   {"passage_length", pretrain.passage_length}};
  j["finetune"] = {{"learning_rate", finetune.learning_rate},
                   {"warmup_steps", finetune.warmup_steps},
                   {"batch_size", finetune.batch_size},
                   {"epochs", finetune.epochs},
                   {"temperature", finetune.temperature},
                   {"num_negatives", finetune.num_negatives},
                   {"negatives_depth", finetune.negatives_depth},
                   {"query_length", finetune.query_length},
                   {"passage_length", finetune.passage_length}};
  j["reranker"] = {{"learning_rate", reranker.learning_rate},
                   {"warmup_steps", reranker.warmup_steps},
                   {"batch_size", reranker.batch_size},
                   {"epochs", reranker.epochs},
                   {"num_negatives", reranker.num_negatives},
                   {"rerank_depth", reranker.rerank_depth},
                   {"max_pair_length", reranker.max_pair_length},
                   {"layers", reranker.layers}};
  j["distill"] = {{"learning_rate", distill.learning_rate},
                  {"warmup_steps", distill.warmup_steps},
                  {"batch_size", distill.batch_size},
                  {"epochs", distill.epochs},
                  {"temperature", distill.temperature},
                  {"alpha", distill.alpha},
                  {"num_negatives", distill.num_negatives},
                  {"in_batch", distill.in_batch}};
  j["bm25"] = {{"k1", bm25.k1}, {"b", bm25.b}};
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig cfg;
  SectionReader top(j, "<root>");
  int version = 1;
  top.get("version", version);
  if (version != 1) cfg_error("unsupported config version " + std::to_string(version));
  top.get("seed", cfg.seed);
  if (const json* m = top.sub("model")) {
    SectionReader r(*m, "model");
    r.get("vocab_size", cfg.model.vocab_size);
    r.get("hidden_dim", cfg.model.hidden_dim);
    r.get("num_heads", cfg.model.num_heads);
    r.get("enc_layers", cfg.model.enc_layers);
    r.get("dec_layers", cfg.model.dec_layers);
    r.get("ffn_dim", cfg.model.ffn_dim);
    r.get("max_len", cfg.model.max_len);
    r.get("dropout", cfg.model.dropout);
    r.get("tied_embeddings", cfg.model.tied_embeddings);
    r.finish();
  }
  if (const json* m = top.sub("generator")) {
    SectionReader r(*m, "generator");
    r.get("hidden_dim", cfg.generator.hidden_dim);
    r.get("num_heads", cfg.generator.num_heads);
    r.get("layers", cfg.generator.layers);
    r.get("ffn_dim", cfg.generator.ffn_dim);
    std::string mode = generator_mode_to_string(cfg.generator.mode);
    r.get_string("mode", mode);
    cfg.generator.mode = generator_mode_from_string(mode);
    r.get("pretrain_steps", cfg.generator.pretrain_steps);
    r.get("batch_size", cfg.generator.batch_size);
    r.get("learning_rate", cfg.generator.learning_rate);
    r.get("shared_draws", cfg.generator.shared_draws);
    r.finish();
  }
  if (const json* m = top.sub("pretrain")) {
    SectionReader r(*m, "pretrain");
    std::string obj = objective_to_string(cfg.pretrain.objective);
    r.get_string("objective", obj);
    cfg.pretrain.objective = objective_from_string(obj);
    r.get("enc_replace_rate", cfg.pretrain.enc_replace_rate);
    r.get("dec_replace_rate", cfg.pretrain.dec_replace_rate);
    r.get("steps", cfg.pretrain.steps);
    r.get("batch_size", cfg.pretrain.batch_size);
    r.get("learning_rate", cfg.pretrain.learning_rate);
    r.get("warmup_steps", cfg.pretrain.warmup_steps);
    r.get("passage_length", cfg.pretrain.passage_length);
    r.finish();
  }
  if (const json* m = top.sub("finetune")) {
    SectionReader r(*m, "finetune");
    r.get("learning_rate", cfg.finetune.learning_rate);
    r.get("warmup_steps", cfg.finetune.warmup_steps);
    r.get("batch_size", cfg.finetune.batch_size);
    r.get("epochs", cfg.finetune.epochs);
    r.get("temperature", cfg.finetune.temperature);
    r.get("num_negatives", cfg.finetune.num_negatives);
    r.get("negatives_depth", cfg.finetune.negatives_depth);
    r.get("query_length", cfg.finetune.query_length);
    r.get("passage_length", cfg.finetune.passage_length);
    r.finish();
  }
  if (const json* m = top.sub("reranker")) {
    SectionReader r(*m, "reranker");
    r.get("learning_rate", cfg.reranker.learning_rate);
    r.get("warmup_steps", cfg.reranker.warmup_steps);
    r.get("batch_size", cfg.reranker.batch_size);
    r.get("epochs", cfg.reranker.epochs);
    r.get("num_negatives", cfg.reranker.num_negatives);
    r.get("rerank_depth", cfg.reranker.rerank_depth);
    r.get("max_pair_length", cfg.reranker.max_pair_length);
    r.get("layers", cfg.reranker.layers);
    r.finish();
  }
  if (const json* m = top.sub("distill")) {
    SectionReader r(*m, "distill");
    r.get("learning_rate", cfg.distill.learning_rate);
    r.get("warmup_steps", cfg.distill.warmup_steps);
    r.get("batch_size", cfg.distill.batch_size);
    r.get("epochs", cfg.distill.epochs);
    r.get("temperature", cfg.distill.temperature);
    r.get("alpha", cfg.distill.alpha);
    r.get("num_negatives", cfg.distill.num_negatives);
    r.get("in_batch", cfg.distill.in_batch);
    r.finish();
  }
  if (const json* m = top.sub("bm25")) {
    SectionReader r(*m, "bm25");
    r.get("k1", cfg.bm25.k1);
    r.get("b", cfg.bm25.b);
    r.finish();
  }
  top.finish();
  cfg.validate();
  return cfg;
}

ModelConfig RunConfig::generator_config() const {
  ModelConfig g = model;
  g.hidden_dim = generator.hidden_dim;
  g.num_heads = generator.num_heads;
  g.enc_layers = generator.layers;
  g.dec_layers = 1;  // unused
  g.ffn_dim = generator.ffn_dim;
  return g;
}

ModelConfig RunConfig::reranker_config() const {
  ModelConfig r = model;
  r.enc_layers = reranker.layers;
  r.dec_layers = 1;  // unused
  r.max_len = reranker.max_pair_length;
  return r;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": JSON parse error: " + e.what());
  }
  try {
    return RunConfig::from_json(j);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void save_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << cfg.to_json().dump(2) << '\n';
  if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace bret
