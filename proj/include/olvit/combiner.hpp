#pragma once

#include <string>
#include <vector>

#include "olvit/attention.hpp"
#include "olvit/config.hpp"
#include "olvit/error.hpp"
#include "olvit/ops.hpp"
#include "olvit/params.hpp"
#include "olvit/trackers.hpp"

namespace olvit {

// Encoder input plus where the object and text blocks landed.
template <class T>
struct Combined {
  Tensor<T> rows;
  std::size_t obj_begin = 0, obj_end = 0;
  std::size_t text_begin = 0, text_end = 0;
};

// Undefined tensors are absent inputs: no [CLS] in generative mode, no state
// rows for a disabled tracker.
template <class T>
struct CombinerInputs {
  Tensor<T> cls, s_o, s_l;  // 1×d each
  Tensor<T> objects;        // m×d
  Tensor<T> text;           // n×d
};

namespace detail {

template <class T>
void check_width(const Tensor<T>& t, std::size_t d, const char* what) {
  if (t.defined() && (t.rank() != 2 || t.dim(1) != d)) {
    throw DimensionError(std::string("combiner: ") + what + " has shape " + shape_str(t.shape()) +
                         ", expected width " + std::to_string(d));
  }
}

template <class T>
std::size_t width_of(const CombinerInputs<T>& in) {
  ops::detail::require_rank2(in.objects, "combiner");
  const auto d = in.objects.dim(1);
  check_width(in.cls, d, "[CLS]");
  check_width(in.s_o, d, "s_o");
  check_width(in.s_l, d, "s_l");
  check_width(in.text, d, "text block");
  return d;
}

template <class T>
Combined<T> assemble(const std::vector<Tensor<T>>& head, const Tensor<T>& objects, const Tensor<T>& text) {
  Combined<T> c;
  std::vector<Tensor<T>> parts;
  for (const auto& h : head)
    if (h.defined()) parts.push_back(h);
  c.obj_begin = 0;
  for (const auto& p : parts) c.obj_begin += p.dim(0);
  c.obj_end = c.obj_begin + objects.dim(0);
  c.text_begin = c.obj_end;
  c.text_end = c.text_begin + text.dim(0);
  parts.push_back(objects);
  parts.push_back(text);
  c.rows = ops::concat(parts, 0);
  return c;
}

// W_b·[state ; row] for every row.
template <class T>
Tensor<T> state_project(const Tensor<T>& state, const Tensor<T>& rows, const Tensor<T>& w_b) {
  const auto d = rows.dim(1);
  if (w_b.rank() != 2 || w_b.dim(0) != d || w_b.dim(1) != 2 * d) {
    throw DimensionError("combine_b: W_b is " + shape_str(w_b.shape()) + ", expected " + std::to_string(d) + "x" +
                         std::to_string(2 * d));
  }
  auto repeated = ops::select_rows(state, std::vector<std::size_t>(rows.dim(0), 0));
  return ops::linear(ops::concat<T>({repeated, rows}, 1), w_b);
}

}  // namespace detail

// [cls, s_o, s_l, objects, text]
template <class T>
Combined<T> combine_a(const CombinerInputs<T>& in) {
  detail::width_of(in);
  return detail::assemble<T>({in.cls, in.s_o, in.s_l}, in.objects, in.text);
}

// [cls, W_b·[s_o ; object_j], W_b·[s_l ; text_j]]. A side without a state passes through.
template <class T>
Combined<T> combine_b(const CombinerInputs<T>& in, const Tensor<T>& w_b) {
  detail::width_of(in);
  auto objects = in.s_o.defined() ? detail::state_project(in.s_o, in.objects, w_b) : in.objects;
  auto text = in.s_l.defined() ? detail::state_project(in.s_l, in.text, w_b) : in.text;
  return detail::assemble<T>({in.cls}, objects, text);
}

// Small transformers over [s_o ; objects] and [s_l ; text]; their row 0 outputs
// are emitted as the state rows.
template <class T>
Combined<T> combine_c(const CombinerInputs<T>& in, const std::vector<LayerParams<T>>& obj_layers,
                      const std::vector<LayerParams<T>>& text_layers, const AttentionConfig& acfg) {
  detail::width_of(in);
  Tensor<T> s_o, s_l, objects = in.objects, text = in.text;
  if (in.s_o.defined()) {
    auto h = run_layers(ops::concat<T>({in.s_o, in.objects}, 0), obj_layers, acfg);
    s_o = ops::slice_rows(h, 0, 1);
    objects = ops::slice_rows(h, 1, h.dim(0));
  }
  if (in.s_l.defined()) {
    auto h = run_layers(ops::concat<T>({in.s_l, in.text}, 0), text_layers, acfg);
    s_l = ops::slice_rows(h, 0, 1);
    text = ops::slice_rows(h, 1, h.dim(0));
  }
  return detail::assemble<T>({in.cls, s_o, s_l}, objects, text);
}

template <class T>
struct CombinerParams {
  Tensor<T> w_b;
  std::vector<LayerParams<T>> obj_layers, text_layers;
};

template <class T>
CombinerParams<T> make_combiner_params(ParamStore<T>& store, const ModelConfig& cfg, Rng& rng) {
  CombinerParams<T> p;
  const bool any_state = cfg.tracker.use_ost || cfg.tracker.use_lst;
  if (cfg.combiner == CombinerVariant::kB && any_state) {
    p.w_b = store.add("combiner.w_b", {cfg.d, 2 * cfg.d}, ParamKind::kWeight, rng);
  }
  if (cfg.combiner == CombinerVariant::kC) {
    for (std::size_t l = 0; l < cfg.combiner_c_layers; ++l) {
      if (cfg.tracker.use_ost)
        p.obj_layers.push_back(make_layer_params(store, "combiner.obj." + std::to_string(l), cfg.d, cfg.ffn, rng));
      if (cfg.tracker.use_lst)
        p.text_layers.push_back(make_layer_params(store, "combiner.text." + std::to_string(l), cfg.d, cfg.ffn, rng));
    }
  }
  return p;
}

template <class T>
Combined<T> combine(const CombinerInputs<T>& in, CombinerVariant variant, const CombinerParams<T>& p,
                    const AttentionConfig& acfg) {
  switch (variant) {
    case CombinerVariant::kA: return combine_a(in);
    case CombinerVariant::kB: return combine_b(in, p.w_b);
    case CombinerVariant::kC: return combine_c(in, p.obj_layers, p.text_layers, acfg);
  }
  throw ConfigError("unknown combiner variant");
}

}  // namespace olvit
