#include "bret/pretrain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "bret/model_io.hpp"
#include "bret/optimizer.hpp"

namespace bret {

namespace {

struct StackedTargets {
  std::vector<int> targets;      // original ids, padded layout
  std::vector<uint8_t> nonpad;   // stacked attention
  std::vector<uint8_t> enc_masked, dec_masked;    // mask-set flags (MLM objectives)
  std::vector<uint8_t> enc_replaced, dec_replaced;  // replacement flags (RTD)
};

/// Snapshot of every parameter value, for divergence rollback.
std::vector<std::vector<float>> snapshot_params(const std::vector<Parameter<float>*>& params) {
  std::vector<std::vector<float>> out;
  out.reserve(params.size());
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

void restore_snapshot(const std::vector<Parameter<float>*>& params,
                      const std::vector<std::vector<float>>& snap) {
  for (size_t i = 0; i < params.size(); ++i) {
    params[i]->value = snap[i];
    params[i]->zero_grad();
  }
}

}  // namespace

std::vector<TokenSequence> tokenize_corpus(const Corpus& corpus, const Vocabulary& vocab,
                                           int max_tokens) {
  std::vector<TokenSequence> out;
  out.reserve(static_cast<size_t>(corpus.size()));
  for (const auto& passage : corpus.passages)
    out.push_back(tokenize(passage.title + " " + passage.text, vocab, max_tokens));
  return out;
}

PretrainResult pretrain(const Corpus& corpus, const RunConfig& cfg) {
  cfg.validate();
  if (corpus.size() == 0) throw std::invalid_argument("pretrain: empty corpus");
  const Objective objective = cfg.pretrain.objective;
  const bool with_decoder = objective != Objective::kMlm;
  const bool with_rtd = objective == Objective::kEncDecRtd;
  const bool needs_generator =
      objective == Objective::kRlm || objective == Objective::kEncDecRtd;
  const bool joint_generator = needs_generator && cfg.generator.mode == GeneratorMode::kJoint;

  PretrainResult result;
  std::vector<std::string> texts;
  texts.reserve(static_cast<size_t>(corpus.size()));
  for (const auto& p : corpus.passages) texts.push_back(p.title + " " + p.text);
  result.vocab = build_vocab(texts, cfg.model.vocab_size);

  ModelConfig mc = cfg.model;
  mc.vocab_size = result.vocab.size();
  double p_enc = cfg.pretrain.enc_replace_rate;
  double p_dec = cfg.pretrain.dec_replace_rate;
  if (objective == Objective::kAutoEncoder) {
    p_enc = 0.0;
    p_dec = 1.0;
  }

  const auto seqs = tokenize_corpus(corpus, result.vocab, cfg.pretrain.passage_length);

  Rng model_rng(mix_seed(cfg.seed, 0x6d6f64656c));
  result.model.init(mc, model_rng, with_decoder, with_rtd);

  if (needs_generator) {
    ModelConfig gc = cfg.generator_config();
    gc.vocab_size = result.vocab.size();
    result.generator = train_generator(seqs, gc, cfg.generator, p_dec, cfg.seed).model;
  }

  auto params = result.model.params();
  if (joint_generator) {
    auto gen_params = result.generator.params();
    params.insert(params.end(), gen_params.begin(), gen_params.end());
  }

  OptimizerConfig opt_cfg;
  opt_cfg.learning_rate = cfg.pretrain.learning_rate;
  opt_cfg.warmup_steps = cfg.pretrain.warmup_steps;
  opt_cfg.total_steps = cfg.pretrain.steps;
  AdamW<float> opt(opt_cfg);

  Rng data_rng(mix_seed(cfg.seed, 0x64617461));
  Rng dropout_rng(mix_seed(cfg.seed, 0x64726f70));
  ForwardOptions fwd;
  fwd.training = true;
  fwd.rng = &dropout_rng;

  std::vector<int> order(seqs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  size_t cursor = order.size();

  auto last_good = snapshot_params(params);
  const auto start = std::chrono::steady_clock::now();

  for (int step = 1; step <= cfg.pretrain.steps; ++step) {
    // Assemble the batch, padded to its longest item.
    std::vector<TokenSequence> batch;
    for (int b = 0; b < cfg.pretrain.batch_size; ++b) {
      if (cursor == order.size()) {
        data_rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(seqs[static_cast<size_t>(order[cursor++])]);
    }
    int len = 0;
    for (const auto& s : batch) len = std::max(len, s.length());
    for (auto& s : batch) s.pad_to(len);
    const int bl = static_cast<int>(batch.size()) * len;

    StackedTargets st;
    st.targets.reserve(static_cast<size_t>(bl));
    st.nonpad.reserve(static_cast<size_t>(bl));
    st.enc_masked.assign(static_cast<size_t>(bl), 0);
    st.dec_masked.assign(static_cast<size_t>(bl), 0);
    st.enc_replaced.assign(static_cast<size_t>(bl), 0);
    st.dec_replaced.assign(static_cast<size_t>(bl), 0);

    std::vector<TokenSequence> enc_in = batch, dec_in = batch;
    for (size_t item = 0; item < batch.size(); ++item) {
      const TokenSequence& seq = batch[item];
      Rng item_rng(mix_seed(cfg.seed, static_cast<uint64_t>(step),
                            static_cast<uint64_t>(item) + 0x100));
      const size_t off = item * static_cast<size_t>(len);
      st.targets.insert(st.targets.end(), seq.ids.begin(), seq.ids.end());
      st.nonpad.insert(st.nonpad.end(), seq.attention.begin(), seq.attention.end());

      switch (objective) {
        case Objective::kRlm:
        case Objective::kEncDecRtd: {
          CorruptedPair pair = corrupt_pair(seq, p_enc, p_dec, result.generator, item_rng,
                                            cfg.generator.shared_draws);
          enc_in[item].ids = pair.enc_input;
          dec_in[item].ids = pair.dec_input;
          for (int pos : pair.dec_positions) st.dec_masked[off + static_cast<size_t>(pos)] = 1;
          for (size_t i = 0; i < seq.ids.size(); ++i) {
            st.enc_replaced[off + i] = pair.enc_input[i] != seq.ids[i];
            st.dec_replaced[off + i] = pair.dec_input[i] != seq.ids[i];
          }
          break;
        }
        case Objective::kEncDecMlm:
        case Objective::kMlm: {
          MaskSets sets = sample_mask_sets(eligible_mask(seq), p_enc, p_dec, item_rng);
          enc_in[item].ids = mask_with_token(seq.ids, sets.enc_positions);
          for (int pos : sets.enc_positions) st.enc_masked[off + static_cast<size_t>(pos)] = 1;
          if (objective == Objective::kEncDecMlm) {
            dec_in[item].ids = mask_with_token(seq.ids, sets.dec_positions);
            for (int pos : sets.dec_positions) st.dec_masked[off + static_cast<size_t>(pos)] = 1;
          }
          break;
        }
        case Objective::kAutoEncoder: {
          CorruptedPair pair = build_autoencoder_pair(seq);
          dec_in[item].ids = pair.dec_input;
          for (int pos : pair.dec_positions) st.dec_masked[off + static_cast<size_t>(pos)] = 1;
          break;
        }
      }
    }

    // Masked-LM objectives need at least one supervised position per stream.
    if (objective == Objective::kEncDecMlm || objective == Objective::kMlm) {
      auto force_one = [&](std::vector<uint8_t>& flags, std::vector<TokenSequence>& inputs) {
        for (uint8_t f : flags)
          if (f) return;
        for (size_t item = 0; item < batch.size(); ++item) {
          const auto eligible = eligible_mask(batch[item]);
          for (size_t pos = 0; pos < eligible.size(); ++pos) {
            if (!eligible[pos]) continue;
            flags[item * static_cast<size_t>(len) + pos] = 1;
            inputs[item].ids[pos] = kMaskId;
            return;
          }
        }
      };
      force_one(st.enc_masked, enc_in);
      if (objective == Objective::kEncDecMlm) force_one(st.dec_masked, dec_in);
    }

    Graph<float> g;
    BatchEncoding<float> enc = encode_batch(g, result.model.enc, enc_in, fwd);
    double l_enc = 0.0, l_dec = 0.0, l_total = 0.0;
    Tensor<float> backprop_loss;

    switch (objective) {
      case Objective::kRlm: {
        Tensor<float> enc_logits =
            lm_head(g, enc.hidden, result.model.enc.tok_emb, result.model.lm_bias);
        Tensor<float> dec_hidden = decode_with_bottleneck_batch(
            g, result.model.decoder, result.model.decoder_tok_emb(), mc, dec_in, enc.cls, fwd);
        Tensor<float> dec_logits =
            lm_head(g, dec_hidden, result.model.decoder_tok_emb(), result.model.decoder_lm_bias());
        StreamLosses<float> losses = loss_rlm(g, enc_logits, dec_logits, st.targets, st.nonpad);
        l_enc = losses.enc.item();
        l_dec = losses.dec.item();
        backprop_loss = losses.total;
        break;
      }
      case Objective::kEncDecMlm: {
        Tensor<float> enc_logits =
            lm_head(g, enc.hidden, result.model.enc.tok_emb, result.model.lm_bias);
        Tensor<float> dec_hidden = decode_with_bottleneck_batch(
            g, result.model.decoder, result.model.decoder_tok_emb(), mc, dec_in, enc.cls, fwd);
        Tensor<float> dec_logits =
            lm_head(g, dec_hidden, result.model.decoder_tok_emb(), result.model.decoder_lm_bias());
        Tensor<float> le = loss_mlm(g, enc_logits, st.targets, st.enc_masked);
        Tensor<float> ld = loss_mlm(g, dec_logits, st.targets, st.dec_masked);
        l_enc = le.item();
        l_dec = ld.item();
        backprop_loss = add(le, ld);
        break;
      }
      case Objective::kMlm: {
        Tensor<float> enc_logits =
            lm_head(g, enc.hidden, result.model.enc.tok_emb, result.model.lm_bias);
        Tensor<float> le = loss_mlm(g, enc_logits, st.targets, st.enc_masked);
        l_enc = le.item();
        backprop_loss = le;
        break;
      }
      case Objective::kEncDecRtd: {
        Tensor<float> enc_bin =
            add_bias(matmul(enc.hidden, g.param(result.model.rtd_enc_w)),
                     g.param(result.model.rtd_enc_b));
        Tensor<float> dec_hidden = decode_with_bottleneck_batch(
            g, result.model.decoder, result.model.decoder_tok_emb(), mc, dec_in, enc.cls, fwd);
        Tensor<float> dec_bin = add_bias(matmul(dec_hidden, g.param(result.model.rtd_dec_w)),
                                         g.param(result.model.rtd_dec_b));
        Tensor<float> le = loss_rtd(g, enc_bin, st.enc_replaced, st.nonpad);
        Tensor<float> ld = loss_rtd(g, dec_bin, st.dec_replaced, st.nonpad);
        l_enc = le.item();
        l_dec = ld.item();
        backprop_loss = add(le, ld);
        break;
      }
      case Objective::kAutoEncoder: {
        Tensor<float> dec_hidden = decode_with_bottleneck_batch(
            g, result.model.decoder, result.model.decoder_tok_emb(), mc, dec_in, enc.cls, fwd);
        Tensor<float> dec_logits =
            lm_head(g, dec_hidden, result.model.decoder_tok_emb(), result.model.decoder_lm_bias());
        std::vector<uint8_t> ignore(st.nonpad.size());
        for (size_t i = 0; i < st.nonpad.size(); ++i) ignore[i] = st.nonpad[i] ? 0 : 1;
        Tensor<float> ld = cross_entropy(dec_logits, st.targets, ignore);
        l_dec = ld.item();
        backprop_loss = ld;
        break;
      }
    }
    l_total = l_enc + l_dec;

    if (joint_generator) {
      // The generator cannot receive gradients through sampling; it trains on
      // its own masked-LM loss over the decoder-side mask.
      std::vector<TokenSequence> gen_in = batch;
      for (size_t item = 0; item < batch.size(); ++item) {
        std::vector<int> positions;
        const size_t off = item * static_cast<size_t>(len);
        for (int pos = 0; pos < len; ++pos)
          if (st.dec_masked[off + static_cast<size_t>(pos)]) positions.push_back(pos);
        gen_in[item].ids = mask_with_token(batch[item].ids, positions);
      }
      bool any = false;
      for (uint8_t f : st.dec_masked) any = any || f;
      if (any) {
        BatchEncoding<float> gen_enc = encode_batch(g, result.generator.enc, gen_in, fwd);
        Tensor<float> gen_logits =
            lm_head(g, gen_enc.hidden, result.generator.enc.tok_emb, result.generator.lm_bias);
        Tensor<float> gen_loss = loss_mlm(g, gen_logits, st.targets, st.dec_masked);
        backprop_loss = add(backprop_loss, gen_loss);
      }
    }

    if (!std::isfinite(l_total) || !std::isfinite(backprop_loss.item())) {
      restore_snapshot(params, last_good);
      result.aborted = true;
      break;
    }
    last_good = snapshot_params(params);

    PretrainLogEntry entry;
    entry.step = step;
    entry.loss_enc = l_enc;
    entry.loss_dec = l_dec;
    entry.loss_total = l_total;
    entry.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.entries.push_back(entry);

    g.backward(backprop_loss);
    opt.step(params);
  }

  result.checkpoint.seed = cfg.seed;
  result.checkpoint.config["kind"] = "pretrain";
  result.checkpoint.config["objective"] = objective_to_string(objective);
  result.checkpoint.config["model"] = model_config_to_json(mc);
  result.checkpoint.config["vocab"] = vocab_to_json(result.vocab);
  append_params(result.checkpoint, result.model.params());
  if (needs_generator) {
    result.checkpoint.config["generator"] = model_config_to_json(result.generator.enc.cfg);
    append_params(result.checkpoint, result.generator.params());
  }
  return result;
}

}  // namespace bret
