#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "olvit/attention.hpp"
#include "olvit/config.hpp"
#include "olvit/encoders.hpp"
#include "olvit/error.hpp"
#include "olvit/ops.hpp"
#include "olvit/params.hpp"
#include "olvit/tensor.hpp"
#include "olvit/vocab.hpp"

namespace olvit {

template <class T>
struct DialogState {
  std::size_t turn_index = 0;  // completed turns
  Tensor<T> s_o, s_l;          // 1×d, the states the latest turn was answered with
  Tensor<T> carried;           // ≤k×d final-layer rows of the latest turn's selected objects
  std::vector<std::vector<std::size_t>> history;  // token ids of the most recent ≤H turns

  static DialogState initial(std::size_t d) {
    DialogState s;
    s.s_o = Tensor<T>::zeros({1, d});
    s.s_l = Tensor<T>::zeros({1, d});
    return s;
  }
};

// Indices of the k largest values, ties toward the lower index, returned ascending.
template <class V>
std::vector<std::size_t> top_k_indices(const std::vector<V>& values, std::size_t k) {
  if (values.empty()) throw DimensionError("top-k selection over an empty vector");
  if (k == 0) throw ConfigError("top-k selection needs k >= 1");
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  idx.resize(std::min(k, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <class T>
std::vector<std::size_t> select_top_k_discriminative(const Tensor<T>& alpha, std::size_t k) {
  if (!alpha.defined() || alpha.numel() == 0) throw DimensionError("select_top_k: empty attention vector");
  return top_k_indices(alpha.values(), k);
}

// Sums each object's attention over all token rows, then takes the top k.
template <class T>
std::vector<std::size_t> select_top_k_generative(const Tensor<T>& token_attentions, std::size_t k) {
  if (!token_attentions.defined() || token_attentions.numel() == 0 || token_attentions.rank() != 2) {
    throw DimensionError("select_top_k: expected a nonempty tokens×objects attention matrix");
  }
  const auto rows = token_attentions.dim(0), cols = token_attentions.dim(1);
  std::vector<T> total(cols, T(0));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) total[c] += token_attentions.at(r, c);
  return top_k_indices(total, k);
}

template <class T>
struct TrackerParams {
  std::vector<LayerParams<T>> ost, lst;
  Tensor<T> w_w_lst;   // d×d_w
  Tensor<T> turn_age;  // H×d, only with turn_embedding
};

template <class T>
TrackerParams<T> make_tracker_params(ParamStore<T>& store, const ModelConfig& cfg, Rng& rng) {
  TrackerParams<T> p;
  const auto& tc = cfg.tracker;
  if (tc.use_ost) {
    for (std::size_t l = 0; l < tc.L_ost; ++l)
      p.ost.push_back(make_layer_params(store, "ost." + std::to_string(l), cfg.d, cfg.ffn, rng));
  }
  if (tc.use_lst) {
    for (std::size_t l = 0; l < tc.L_lst; ++l)
      p.lst.push_back(make_layer_params(store, "lst." + std::to_string(l), cfg.d, cfg.ffn, rng));
    p.w_w_lst = store.add("lst.w_w", {cfg.d, cfg.d_w}, ParamKind::kWeight, rng);
    if (tc.turn_embedding) p.turn_age = store.add("lst.turn_age", {tc.H, cfg.d}, ParamKind::kEmbedding, rng);
  }
  return p;
}

template <class T>
Tensor<T> run_layers(Tensor<T> h, const std::vector<LayerParams<T>>& layers, const AttentionConfig& acfg,
                     const AttentionMask* mask = nullptr, Tensor<T>* last_weights = nullptr) {
  for (std::size_t l = 0; l < layers.size(); ++l)
    h = transformer_layer(h, layers[l], acfg, mask, l + 1 == layers.size() ? last_weights : nullptr);
  return h;
}

// Row 0 of the layer stack over [s_o_prev; carried rows].
template <class T>
Tensor<T> ost_update(const Tensor<T>& s_o_prev, const Tensor<T>& carried, const std::vector<LayerParams<T>>& layers,
                     const AttentionConfig& acfg) {
  const auto d = acfg.d;
  if (s_o_prev.numel() != d) throw DimensionError("ost_update: state width differs from d=" + std::to_string(d));
  auto state = ops::reshape(s_o_prev, {1, d});
  std::vector<Tensor<T>> rows = {state};
  if (carried.defined() && carried.numel() > 0) {
    if (carried.rank() != 2 || carried.dim(1) != d) {
      throw DimensionError("ost_update: carried rows " + shape_str(carried.shape()) + " do not have width " +
                           std::to_string(d));
    }
    rows.push_back(carried);
  }
  auto h = run_layers(ops::concat(rows, 0), layers, acfg);
  return ops::slice_rows(h, 0, 1);
}

// Row 0 of the layer stack over [s_l_prev; W_w_lst·table[token] for every token
// of the last min(|history|, H) turns, oldest first].
template <class T>
Tensor<T> lst_update(const Tensor<T>& s_l_prev, const std::vector<std::vector<std::size_t>>& history,
                     const FixtureEmbedder<T>& embedder, const Tensor<T>& w_w_lst,
                     const std::vector<LayerParams<T>>& layers, const AttentionConfig& acfg, std::size_t window,
                     bool separators = false, const Tensor<T>& turn_age = {}) {
  const auto d = acfg.d;
  if (s_l_prev.numel() != d) throw DimensionError("lst_update: state width differs from d=" + std::to_string(d));
  std::vector<Tensor<T>> rows = {ops::reshape(s_l_prev, {1, d})};
  const auto used = std::min(window, history.size());
  for (std::size_t t = history.size() - used; t < history.size(); ++t) {
    auto ids = history[t];
    if (separators) ids.push_back(Vocabulary::kSep);
    if (ids.empty()) continue;
    auto emb = ops::linear(embedder.lookup(ids), w_w_lst);
    if (turn_age.defined()) {
      const auto age = history.size() - 1 - t;  // 0 for the most recent turn
      emb = ops::add_row_bias(emb, ops::reshape(ops::slice_rows(turn_age, age, age + 1), {d}));
    }
    rows.push_back(emb);
  }
  auto h = run_layers(ops::concat(rows, 0), layers, acfg);
  return ops::slice_rows(h, 0, 1);
}

// What one answered turn leaves for the next.
template <class T>
struct TurnRecord {
  Tensor<T> s_o, s_l;                  // states used for this turn
  Tensor<T> object_rows;               // final-layer object embeddings H_L^obj
  std::vector<std::size_t> selected;   // top-k object indices
  std::vector<std::size_t> turn_tokens;  // question then answer token ids
};

// `detach_states` false keeps s_o/s_l attached to this turn's graph so later
// turns can backpropagate into it.
template <class T>
DialogState<T> advance_state(const DialogState<T>& prev, const TurnRecord<T>& record, std::size_t window,
                             bool detach_states = true) {
  if (!record.s_o.defined() || !record.s_l.defined()) throw Error("advance_state: record is missing state vectors");
  if (!record.object_rows.defined()) throw Error("advance_state: record is missing object embeddings");
  if (record.selected.empty()) throw Error("advance_state: record is missing the selection attention");
  DialogState<T> next;
  next.turn_index = prev.turn_index + 1;
  next.s_o = detach_states ? record.s_o.detach() : record.s_o;
  next.s_l = detach_states ? record.s_l.detach() : record.s_l;
  {
    NoGradScope<T> no_grad;
    next.carried = ops::select_rows(record.object_rows.detach(), record.selected);
  }
  next.history = prev.history;
  next.history.push_back(record.turn_tokens);
  while (next.history.size() > window) next.history.erase(next.history.begin());
  return next;
}

}  // namespace olvit
