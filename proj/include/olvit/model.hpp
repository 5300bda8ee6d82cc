#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "olvit/attention.hpp"
#include "olvit/combiner.hpp"
#include "olvit/config.hpp"
#include "olvit/dialog.hpp"
#include "olvit/encoders.hpp"
#include "olvit/error.hpp"
#include "olvit/ops.hpp"
#include "olvit/params.hpp"
#include "olvit/trackers.hpp"
#include "olvit/vocab.hpp"

namespace olvit {

// One question of a dialog, already tokenised.
template <class T>
struct TurnInput {
  Tensor<T> latents;                       // (T·N_o)×d_obj
  std::vector<std::size_t> question;       // token ids
  std::vector<std::size_t> answer_tokens;  // answer words, no [EOS]
  std::size_t answer_index = 0;            // candidate index
  Category category = Category::kObjectExist;
  bool uses_coreference = false;
};

template <class T>
struct ModelOutput {
  Tensor<T> logits;  // {N} discriminative, {steps, vocab} generative
  Tensor<T> loss;    // defined when a target was supplied
  Tensor<T> s_o, s_l;
  Tensor<T> encoded;    // final encoder rows
  Tensor<T> attention;  // final encoder layer weights, heads×n×n
  Tensor<T> alpha;      // selection mass per object row
  std::vector<std::size_t> selected;
  Combined<T> layout;
  TurnRecord<T> record;
};

struct ForwardOptions {
  bool training = false;  // enables dropout
  std::uint64_t dropout_seed = 0;
};

inline std::vector<std::size_t> with_eos(std::vector<std::size_t> tokens) {
  tokens.push_back(Vocabulary::kEos);
  return tokens;
}

// Argmax with ties toward the lowest index.
template <class V>
std::size_t argmax(std::span<const V> values) {
  if (values.empty()) throw DimensionError("argmax over empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

template <class T>
std::size_t predict_answer(const Tensor<T>& logits) {
  if (!logits.defined()) throw DimensionError("predict_answer: empty logits");
  return argmax(logits.data());
}

template <class T>
class OlvitModel {
 public:
  struct DecoderLayer {
    LayerParams<T> self;   // causal self-attention
    LayerParams<T> cross;  // attention to the encoder output, carries the optional FFN; unused single-stream
  };

  OlvitModel(ModelConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)), embedder_(cfg_.embed_seed, cfg_.vocab_size, cfg_.d_w) {
    cfg_.validate();
    acfg_ = {cfg_.d, cfg_.heads};
    Rng rng(hash_seed({seed, 0x6f6c766974u}));
    const auto d = cfg_.d;
    w_obj_ = store_.add("obj.w", {d, cfg_.d_obj}, ParamKind::kWeight, rng);
    o_pos_ = store_.add("obj.pos", {cfg_.T * cfg_.N_o, d}, ParamKind::kEmbedding, rng);
    w_w_ = store_.add("text.w", {d, cfg_.d_w}, ParamKind::kWeight, rng);
    w_pos_ = store_.add("text.pos", {cfg_.max_seq_len, d}, ParamKind::kEmbedding, rng);
    if (cfg_.lm_mode == LmMode::kExtraLayers) {
      for (std::size_t l = 0; l < cfg_.lm_extra_layers; ++l)
        lm_layers_.push_back(make_layer_params(store_, "text.lm." + std::to_string(l), d, cfg_.ffn, rng));
    }
    if (discriminative()) cls_ = store_.add("cls", {1, d}, ParamKind::kEmbedding, rng);
    trackers_ = make_tracker_params(store_, cfg_, rng);
    combiner_ = make_combiner_params(store_, cfg_, rng);
    for (std::size_t l = 0; l < cfg_.L; ++l)
      encoder_.push_back(make_layer_params(store_, "enc." + std::to_string(l), d, cfg_.ffn, rng));
    if (discriminative()) {
      head_w_ = store_.add("head.w", {cfg_.N, d}, ParamKind::kWeight, rng);
      head_b_ = store_.add("head.b", {cfg_.N}, ParamKind::kBias, rng);
    } else {
      for (std::size_t l = 0; l < cfg_.L; ++l) {
        const auto p = "dec." + std::to_string(l);
        if (cfg_.single_stream_decoder) {
          decoder_.push_back({make_layer_params(store_, p + ".self", d, cfg_.ffn, rng), {}});
        } else {
          decoder_.push_back({make_layer_params(store_, p + ".self", d, false, rng),
                              make_layer_params(store_, p + ".cross", d, cfg_.ffn, rng)});
        }
      }
      head_w_ = store_.add("vocab.w", {cfg_.vocab_size, d}, ParamKind::kWeight, rng);
      head_b_ = store_.add("vocab.b", {cfg_.vocab_size}, ParamKind::kBias, rng);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  const AttentionConfig& attention_config() const { return acfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  const FixtureEmbedder<T>& embedder() const { return embedder_; }
  const TrackerParams<T>& tracker_params() const { return trackers_; }
  bool discriminative() const { return cfg_.mode == Mode::kDiscriminative; }

  DialogState<T> initial_state() const { return DialogState<T>::initial(cfg_.d); }

  // Tracker states for the turn after `state`: zeros before the first turn,
  // otherwise one OST/LST update from the stored states.
  std::pair<Tensor<T>, Tensor<T>> tracker_states(const DialogState<T>& state) const {
    const auto d = cfg_.d;
    if (state.turn_index == 0) return {Tensor<T>::zeros({1, d}), Tensor<T>::zeros({1, d})};
    Tensor<T> s_o = state.s_o, s_l = state.s_l;
    if (cfg_.tracker.use_ost) s_o = ost_update(state.s_o, state.carried, trackers_.ost, acfg_);
    if (cfg_.tracker.use_lst) {
      s_l = lst_update(state.s_l, state.history, embedder_, trackers_.w_w_lst, trackers_.lst, acfg_, cfg_.tracker.H,
                       cfg_.tracker.separators, trackers_.turn_age);
    }
    return {s_o, s_l};
  }

  ModelOutput<T> forward_discriminative(const TurnInput<T>& in, const DialogState<T>& state,
                                        const ForwardOptions& opt = {}) const {
    if (!discriminative()) throw ConfigError("forward_discriminative called on a generative model");
    auto out = encode(in, state, opt);
    auto cls_row = ops::slice_rows(out.encoded, 0, 1);
    out.logits = ops::reshape(ops::linear(cls_row, head_w_, head_b_), {cfg_.N});
    out.alpha = attention_to(0, out.attention, out.layout.obj_begin, out.layout.obj_end);
    out.selected = select_top_k_discriminative(out.alpha, cfg_.tracker.k);
    out.loss = ops::cross_entropy(out.logits, in.answer_index);
    finish_record(out, in, in.answer_tokens);
    return out;
  }

  // Logit row t predicts targets[t]; the decoder sees the question followed by targets[0..t).
  ModelOutput<T> forward_generative_teacher_forced(const TurnInput<T>& in, const DialogState<T>& state,
                                                   const std::vector<std::size_t>& targets,
                                                   const ForwardOptions& opt = {}) const {
    if (discriminative()) throw ConfigError("forward_generative_teacher_forced called on a discriminative model");
    if (targets.empty()) throw DimensionError("teacher forcing needs at least one answer token");
    auto out = encode(in, state, opt);
    generative_selection(out);
    const auto nw = in.question.size();
    auto dec_in = in.question;
    dec_in.insert(dec_in.end(), targets.begin(), targets.end() - 1);
    auto all = decode(out.encoded, dec_in, nw, opt);
    out.logits = ops::slice_rows(all, nw - 1, nw - 1 + targets.size());
    Tensor<T> total;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      auto ce = ops::cross_entropy(ops::slice_rows(out.logits, t, t + 1), targets[t]);
      total = total.defined() ? ops::add(total, ce) : ce;
    }
    out.loss = ops::scale(total, T(1) / static_cast<T>(targets.size()));
    finish_record(out, in, in.answer_tokens);
    return out;
  }

  struct Generation {
    std::vector<std::size_t> tokens;  // includes [EOS] when produced
    ModelOutput<T> output;            // logits hold one row per generated step
  };

  // Greedy decoding until [EOS] or max_len tokens.
  Generation generate(const TurnInput<T>& in, const DialogState<T>& state, std::size_t max_len = 0) const {
    if (discriminative()) throw ConfigError("generate called on a discriminative model");
    if (max_len == 0) max_len = cfg_.max_gen_len;
    NoGradScope<T> no_grad;
    Generation g;
    g.output = encode(in, state, {});
    generative_selection(g.output);
    const auto enc = g.output.encoded;
    const auto nw = in.question.size();
    if (nw + max_len - 1 > cfg_.max_seq_len) {
      throw DimensionError("generate: question of " + std::to_string(nw) + " tokens plus " + std::to_string(max_len) +
                           " answer tokens exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
    }
    std::vector<Tensor<T>> step_logits;
    auto seq = in.question;
    while (g.tokens.size() < max_len) {
      auto all = decode(enc, seq, nw, {});
      auto last = ops::slice_rows(all, all.dim(0) - 1, all.dim(0));
      step_logits.push_back(last);
      const auto tok = argmax(last.data());
      g.tokens.push_back(tok);
      if (tok == Vocabulary::kEos) break;
      seq.push_back(tok);
    }
    g.output.logits = ops::concat(step_logits, 0);
    auto answer = g.tokens;
    if (!answer.empty() && answer.back() == Vocabulary::kEos) answer.pop_back();
    finish_record(g.output, in, answer);
    return g;
  }

  // Runs a whole dialog, threading the state. Discriminative history holds the
  // ground-truth answers; generative history holds the model's own answers
  // unless `teacher_history` is set.
  std::vector<ModelOutput<T>> run_dialog(const std::vector<TurnInput<T>>& turns, bool teacher_history = false,
                                         std::vector<std::vector<std::size_t>>* generated = nullptr) const {
    if (turns.empty()) throw DataError("run_dialog: episode has no turns");
    NoGradScope<T> no_grad;
    std::vector<ModelOutput<T>> outs;
    auto state = initial_state();
    for (const auto& in : turns) {
      if (discriminative()) {
        outs.push_back(forward_discriminative(in, state));
      } else {
        auto g = generate(in, state);
        if (generated) generated->push_back(g.tokens);
        if (teacher_history) g.output.record.turn_tokens = turn_tokens(in.question, in.answer_tokens);
        outs.push_back(std::move(g.output));
      }
      state = advance(state, outs.back());
    }
    return outs;
  }

  DialogState<T> advance(const DialogState<T>& state, const ModelOutput<T>& out) const {
    return advance_state(state, out.record, cfg_.tracker.H, !cfg_.bptt);
  }

  // Mean turn loss of one episode under teacher forcing.
  Tensor<T> episode_loss(const std::vector<TurnInput<T>>& turns, const ForwardOptions& opt = {},
                         std::vector<ModelOutput<T>>* outputs = nullptr) const {
    if (turns.empty()) throw DataError("episode_loss: episode has no turns");
    auto state = initial_state();
    Tensor<T> total;
    for (std::size_t i = 0; i < turns.size(); ++i) {
      ForwardOptions o = opt;
      o.dropout_seed = hash_seed({opt.dropout_seed, i});
      auto out = discriminative() ? forward_discriminative(turns[i], state, o)
                                  : forward_generative_teacher_forced(turns[i], state, with_eos(turns[i].answer_tokens), o);
      total = total.defined() ? ops::add(total, out.loss) : out.loss;
      if (i + 1 < turns.size()) state = advance(state, out);
      if (outputs) outputs->push_back(std::move(out));
    }
    return ops::scale(total, T(1) / static_cast<T>(turns.size()));
  }

  static std::vector<std::size_t> turn_tokens(const std::vector<std::size_t>& question,
                                              const std::vector<std::size_t>& answer) {
    auto t = question;
    t.insert(t.end(), answer.begin(), answer.end());
    return t;
  }

 private:
  ModelOutput<T> encode(const TurnInput<T>& in, const DialogState<T>& state, const ForwardOptions& opt) const {
    if (in.question.empty()) throw DimensionError("empty question");
    ModelOutput<T> out;
    std::tie(out.s_o, out.s_l) = tracker_states(state);
    auto objects = encode_objects(in.latents, w_obj_, o_pos_);
    auto text = encode_text(in.question, embedder_, w_w_, w_pos_);
    if (!lm_layers_.empty()) text = run_layers(text, lm_layers_, acfg_);
    CombinerInputs<T> ci;
    if (discriminative()) ci.cls = cls_;
    if (cfg_.tracker.use_ost) ci.s_o = out.s_o;
    if (cfg_.tracker.use_lst) ci.s_l = out.s_l;
    ci.objects = objects;
    ci.text = text;
    out.layout = combine(ci, cfg_.combiner, combiner_, acfg_);
    auto h = out.layout.rows;
    const double rate = opt.training ? cfg_.dropout : 0.0;
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
      h = transformer_layer(h, encoder_[l], acfg_, nullptr, l + 1 == encoder_.size() ? &out.attention : nullptr,
                            DropoutSpec{rate, hash_seed({opt.dropout_seed, 1, l})});
    }
    out.encoded = h;
    out.record.object_rows = ops::slice_rows(h, out.layout.obj_begin, out.layout.obj_end);
    return out;
  }

  void generative_selection(ModelOutput<T>& out) const {
    const auto& L = out.layout;
    const auto n = L.text_end - L.text_begin, m = L.obj_end - L.obj_begin;
    std::vector<T> rows;
    rows.reserve(n * m);
    for (std::size_t q = L.text_begin; q < L.text_end; ++q) {
      auto a = attention_to(q, out.attention, L.obj_begin, L.obj_end);
      rows.insert(rows.end(), a.values().begin(), a.values().end());
    }
    Tensor<T> token_attention({n, m}, std::move(rows));
    out.alpha = ops::sum(token_attention, 0);
    out.selected = select_top_k_generative(token_attention, cfg_.tracker.k);
  }

  Tensor<T> decode(const Tensor<T>& enc, const std::vector<std::size_t>& tokens, std::size_t prefix,
                   const ForwardOptions& opt) const {
    if (tokens.size() > cfg_.max_seq_len) {
      throw DimensionError("decoder input of " + std::to_string(tokens.size()) + " tokens exceeds max_seq_len " +
                           std::to_string(cfg_.max_seq_len));
    }
    auto x = encode_text(tokens, embedder_, w_w_, w_pos_);
    const double rate = opt.training ? cfg_.dropout : 0.0;
    if (cfg_.single_stream_decoder) {
      // one causal stream over [encoder rows ; tokens]; the encoder rows join the visible prefix
      const auto m = enc.dim(0);
      const auto mask = causal_mask(m + prefix, tokens.size() - prefix);
      x = ops::concat(std::vector<Tensor<T>>{enc, x}, 0);
      for (std::size_t l = 0; l < decoder_.size(); ++l)
        x = transformer_layer(x, decoder_[l].self, acfg_, &mask, static_cast<Tensor<T>*>(nullptr),
                              DropoutSpec{rate, hash_seed({opt.dropout_seed, 2, l})});
      return ops::linear(ops::slice_rows(x, m, x.dim(0)), head_w_, head_b_);
    }
    const auto mask = causal_mask(prefix, tokens.size() - prefix);
    for (std::size_t l = 0; l < decoder_.size(); ++l) {
      const auto& layer = decoder_[l];
      x = transformer_layer(x, layer.self, acfg_, &mask, static_cast<Tensor<T>*>(nullptr), DropoutSpec{rate, hash_seed({opt.dropout_seed, 2, l})});
      auto normed = ops::layer_norm(x, layer.cross.ln_gain, layer.cross.ln_shift);
      auto att = multi_head_attention(normed, enc, layer.cross.attn, acfg_);
      x = ops::add(ops::dropout(att.output, rate, hash_seed({opt.dropout_seed, 3, l})), x);
      if (layer.cross.ffn) {
        auto f = ops::layer_norm(x, layer.cross.ffn_ln_gain, layer.cross.ffn_ln_shift);
        f = ops::linear(ops::gelu(ops::linear(f, layer.cross.ffn_w1, layer.cross.ffn_b1)), layer.cross.ffn_w2,
                        layer.cross.ffn_b2);
        x = ops::add(ops::dropout(f, rate, hash_seed({opt.dropout_seed, 4, l})), x);
      }
    }
    return ops::linear(x, head_w_, head_b_);
  }

  void finish_record(ModelOutput<T>& out, const TurnInput<T>& in, const std::vector<std::size_t>& answer) const {
    out.record.s_o = out.s_o;
    out.record.s_l = out.s_l;
    out.record.selected = out.selected;
    out.record.turn_tokens = turn_tokens(in.question, answer);
  }

  ModelConfig cfg_;
  AttentionConfig acfg_;
  ParamStore<T> store_;
  FixtureEmbedder<T> embedder_;
  Tensor<T> w_obj_, o_pos_, w_w_, w_pos_, cls_, head_w_, head_b_;
  std::vector<LayerParams<T>> lm_layers_, encoder_;
  std::vector<DecoderLayer> decoder_;
  TrackerParams<T> trackers_;
  CombinerParams<T> combiner_;
};

// Token ids of an episode's turns plus its scene latents, shared by every turn.
template <class T>
std::vector<TurnInput<T>> episode_inputs(const DialogEpisode& ep, const ModelConfig& cfg, const LatentConfig& lat) {
  const auto& vocab = Vocabulary::standard();
  auto latents = scene_latents<T>(ep.scene, cfg.T, cfg.N_o, lat, ep.episode_id);
  std::vector<TurnInput<T>> out;
  for (const auto& t : ep.turns) {
    TurnInput<T> in;
    in.latents = latents;
    in.question = vocab.encode(t.question);
    in.answer_tokens = vocab.encode(split_words(t.answer));
    in.answer_index = t.answer_index;
    in.category = t.category;
    in.uses_coreference = t.uses_coreference;
    out.push_back(std::move(in));
  }
  return out;
}

}  // namespace olvit
