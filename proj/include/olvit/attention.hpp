#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "olvit/error.hpp"
#include "olvit/ops.hpp"
#include "olvit/params.hpp"
#include "olvit/tensor.hpp"

namespace olvit {

struct AttentionConfig {
  std::size_t d = 216;
  std::size_t heads = 6;

  std::size_t head_dim() const { return d / heads; }

  void validate() const {
    if (d == 0 || heads == 0 || d % heads != 0) {
      throw ConfigError("attention: width " + std::to_string(d) + " is not divisible by " +
                        std::to_string(heads) + " heads");
    }
  }
};

// Additive pre-softmax mask. Entries at or below kMaskedThreshold are treated as
// -inf: they receive exactly zero weight and the visible entries renormalise.
class AttentionMask {
 public:
  static constexpr double kMaskedSentinel = -1e9;
  static constexpr double kMaskedThreshold = -1e8;

  AttentionMask() = default;
  AttentionMask(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double value(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }
  bool masked(std::size_t i, std::size_t j) const { return values_[i * cols_ + j] <= kMaskedThreshold; }
  bool visible(std::size_t i, std::size_t j) const { return !masked(i, j); }
  void block(std::size_t i, std::size_t j) { values_[i * cols_ + j] = kMaskedSentinel; }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> values_;
};

// Prefix rows see the whole prefix; answer token t sees the prefix and answer tokens <= t.
inline AttentionMask causal_mask(std::size_t prefix_len, std::size_t answer_len) {
  const auto n = prefix_len + answer_len;
  AttentionMask mask(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const bool visible = j < prefix_len || (i >= prefix_len && j <= i);
      if (!visible) mask.block(i, j);
    }
  return mask;
}

template <class T>
struct AttentionResult {
  Tensor<T> output;   // n×d
  Tensor<T> weights;  // heads×n×m, not differentiable
};

// softmax(Q_h K_hᵀ / sqrt(head_dim) + mask) V_h per head, heads concatenated.
// Q is n×d, K and V are m×d.
template <class T>
AttentionResult<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                                std::size_t heads, const AttentionMask* mask = nullptr) {
  ops::detail::require_rank2(q, "attention");
  ops::detail::require_rank2(k, "attention");
  ops::detail::require_rank2(v, "attention");
  const auto n = q.dim(0), d = q.dim(1), m = k.dim(0);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != m) {
    throw DimensionError("attention: incompatible Q/K/V shapes " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  if (heads == 0 || d % heads != 0) throw ConfigError("attention: width not divisible by head count");
  if (mask && (mask->rows() != n || mask->cols() != m)) {
    throw DimensionError("attention: mask is " + std::to_string(mask->rows()) + "x" + std::to_string(mask->cols()) +
                         " but scores are " + std::to_string(n) + "x" + std::to_string(m));
  }
  ops::detail::require_finite(q, "attention");
  ops::detail::require_finite(k, "attention");
  const auto hd = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  std::vector<T> w(heads * n * m, T(0));
  std::vector<T> out(n * d, T(0));
  const auto Q = q.data(), K = k.data(), V = v.data();
  std::vector<T> kt(hd * m), scores(m);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto off = h * hd;
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t c = 0; c < hd; ++c) kt[c * m + j] = K[j * d + off + c];
    for (std::size_t i = 0; i < n; ++i) {
      T* wrow = w.data() + (h * n + i) * m;
      std::fill(scores.begin(), scores.end(), T(0));
      for (std::size_t c = 0; c < hd; ++c) {
        const T qv = Q[i * d + off + c];
        const T* krow = kt.data() + c * m;
        for (std::size_t j = 0; j < m; ++j) scores[j] += qv * krow[j];
      }
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < m; ++j) {
        if (mask && mask->masked(i, j)) continue;
        const T s = scores[j] * scale + (mask ? static_cast<T>(mask->value(i, j)) : T(0));
        wrow[j] = s;
        mx = std::max(mx, s);
      }
      T total = 0;
      for (std::size_t j = 0; j < m; ++j) {
        if (mask && mask->masked(i, j)) continue;
        wrow[j] = std::exp(wrow[j] - mx);
        total += wrow[j];
      }
      if (total > T(0)) {
        for (std::size_t j = 0; j < m; ++j) wrow[j] /= total;
      }
      T* orow = out.data() + i * d + off;
      for (std::size_t j = 0; j < m; ++j) {
        const T p = wrow[j];
        if (p == T(0)) continue;
        const T* vrow = V.data() + j * d + off;
        for (std::size_t c = 0; c < hd; ++c) orow[c] += p * vrow[c];
      }
    }
  }
  Tensor<T> weights({heads, n, m}, w);
  Tensor<T> output({n, d}, std::move(out));
  if (ops::detail::should_record(output, q, k, v)) {
    auto qn = q.node(), kn = k.node(), vn = v.node();
    auto* on = output.node().get();
    active_tape<T>()->record(output.node(), [qn, kn, vn, on, w = std::move(w), heads, n, m, d, hd, scale] {
      const auto& g = on->grad;
      if (qn->requires_grad) qn->ensure_grad();
      if (kn->requires_grad) kn->ensure_grad();
      if (vn->requires_grad) vn->ensure_grad();
      std::vector<T> dp(m), vt(hd * m);
      for (std::size_t h = 0; h < heads; ++h) {
        const auto off = h * hd;
        for (std::size_t j = 0; j < m; ++j)
          for (std::size_t c = 0; c < hd; ++c) vt[c * m + j] = vn->data[j * d + off + c];
        for (std::size_t i = 0; i < n; ++i) {
          const T* prow = w.data() + (h * n + i) * m;
          const T* gi = g.data() + i * d + off;
          std::fill(dp.begin(), dp.end(), T(0));
          for (std::size_t c = 0; c < hd; ++c) {
            const T gv = gi[c];
            const T* vrow = vt.data() + c * m;
            for (std::size_t j = 0; j < m; ++j) dp[j] += gv * vrow[j];
          }
          T dot = 0;
          for (std::size_t j = 0; j < m; ++j) dot += dp[j] * prow[j];
          for (std::size_t j = 0; j < m; ++j) {
            const T p = prow[j];
            if (p == T(0)) continue;
            if (vn->requires_grad) {
              T* dv = vn->grad.data() + j * d + off;
              for (std::size_t c = 0; c < hd; ++c) dv[c] += p * gi[c];
            }
            const T ds = p * (dp[j] - dot) * scale;
            if (qn->requires_grad) {
              T* dq = qn->grad.data() + i * d + off;
              const T* krow = kn->data.data() + j * d + off;
              for (std::size_t c = 0; c < hd; ++c) dq[c] += ds * krow[c];
            }
            if (kn->requires_grad) {
              T* dk = kn->grad.data() + j * d + off;
              const T* qrow = qn->data.data() + i * d + off;
              for (std::size_t c = 0; c < hd; ++c) dk[c] += ds * qrow[c];
            }
          }
        }
      }
    });
  }
  return {output, weights};
}

template <class T>
struct AttentionParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <class T>
AttentionParams<T> make_attention_params(ParamStore<T>& store, const std::string& prefix, std::size_t d, Rng& rng) {
  AttentionParams<T> p;
  p.wq = store.add(prefix + ".wq", {d, d}, ParamKind::kWeight, rng);
  p.bq = store.add(prefix + ".bq", {d}, ParamKind::kBias, rng);
  p.wk = store.add(prefix + ".wk", {d, d}, ParamKind::kWeight, rng);
  p.bk = store.add(prefix + ".bk", {d}, ParamKind::kBias, rng);
  p.wv = store.add(prefix + ".wv", {d, d}, ParamKind::kWeight, rng);
  p.bv = store.add(prefix + ".bv", {d}, ParamKind::kBias, rng);
  p.wo = store.add(prefix + ".wo", {d, d}, ParamKind::kWeight, rng);
  p.bo = store.add(prefix + ".bo", {d}, ParamKind::kBias, rng);
  return p;
}

// Pre-norm residual block: H + MSA(LN(H)), optionally followed by H + FFN(LN(H)).
template <class T>
struct LayerParams {
  Tensor<T> ln_gain, ln_shift;
  AttentionParams<T> attn;
  bool ffn = false;
  Tensor<T> ffn_ln_gain, ffn_ln_shift, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <class T>
LayerParams<T> make_layer_params(ParamStore<T>& store, const std::string& prefix, std::size_t d, bool ffn, Rng& rng) {
  LayerParams<T> p;
  p.ln_gain = store.add(prefix + ".ln.gain", {d}, ParamKind::kGain, rng);
  p.ln_shift = store.add(prefix + ".ln.shift", {d}, ParamKind::kBias, rng);
  p.attn = make_attention_params(store, prefix + ".attn", d, rng);
  p.ffn = ffn;
  if (ffn) {
    p.ffn_ln_gain = store.add(prefix + ".ffn.ln.gain", {d}, ParamKind::kGain, rng);
    p.ffn_ln_shift = store.add(prefix + ".ffn.ln.shift", {d}, ParamKind::kBias, rng);
    p.ffn_w1 = store.add(prefix + ".ffn.w1", {4 * d, d}, ParamKind::kWeight, rng);
    p.ffn_b1 = store.add(prefix + ".ffn.b1", {4 * d}, ParamKind::kBias, rng);
    p.ffn_w2 = store.add(prefix + ".ffn.w2", {d, 4 * d}, ParamKind::kWeight, rng);
    p.ffn_b2 = store.add(prefix + ".ffn.b2", {d}, ParamKind::kBias, rng);
  }
  return p;
}

// Scalar count of one layer, matching make_layer_params.
inline std::size_t layer_param_count(std::size_t d, bool ffn) {
  std::size_t n = 2 * d + 4 * d * d + 4 * d;
  if (ffn) n += 2 * d + 4 * d * d + 4 * d + 4 * d * d + d;
  return n;
}

// Query rows attend over key/value rows; self-attention passes the same tensor twice.
template <class T>
AttentionResult<T> multi_head_attention(const Tensor<T>& query_src, const Tensor<T>& kv_src, const AttentionParams<T>& p,
                                        const AttentionConfig& cfg, const AttentionMask* mask = nullptr) {
  cfg.validate();
  if (query_src.rank() != 2 || query_src.dim(1) != cfg.d || kv_src.rank() != 2 || kv_src.dim(1) != cfg.d) {
    throw DimensionError("attention: inputs " + shape_str(query_src.shape()) + ", " + shape_str(kv_src.shape()) +
                         " do not have width " + std::to_string(cfg.d));
  }
  auto q = ops::linear(query_src, p.wq, p.bq);
  auto k = ops::linear(kv_src, p.wk, p.bk);
  auto v = ops::linear(kv_src, p.wv, p.bv);
  auto att = scaled_dot_product_attention(q, k, v, cfg.heads, mask);
  return {ops::linear(att.output, p.wo, p.bo), att.weights};
}

template <class T>
AttentionResult<T> multi_head_self_attention(const Tensor<T>& x, const AttentionParams<T>& p, const AttentionConfig& cfg,
                                             const AttentionMask* mask = nullptr) {
  if (x.rank() != 2 || x.dim(0) == 0) throw DimensionError("self-attention: need at least one row");
  return multi_head_attention(x, x, p, cfg, mask);
}

// Optional dropout applied to sublayer outputs before the residual add.
struct DropoutSpec {
  double rate = 0.0;
  std::uint64_t seed = 0;
};

template <class T>
Tensor<T> transformer_layer(const Tensor<T>& h, const LayerParams<T>& layer, const AttentionConfig& cfg,
                            const AttentionMask* mask = nullptr, Tensor<T>* weights_out = nullptr,
                            DropoutSpec dropout = {}) {
  auto normed = ops::layer_norm(h, layer.ln_gain, layer.ln_shift);
  auto att = multi_head_self_attention(normed, layer.attn, cfg, mask);
  if (weights_out) *weights_out = att.weights;
  auto out = ops::add(ops::dropout(att.output, dropout.rate, dropout.seed), h);
  if (layer.ffn) {
    auto f = ops::layer_norm(out, layer.ffn_ln_gain, layer.ffn_ln_shift);
    f = ops::linear(ops::gelu(ops::linear(f, layer.ffn_w1, layer.ffn_b1)), layer.ffn_w2, layer.ffn_b2);
    out = ops::add(ops::dropout(f, dropout.rate, splitmix64(dropout.seed + 1)), out);
  }
  return out;
}

// Head-averaged attention of one query row over keys [key_begin, key_end).
template <class T>
Tensor<T> attention_to(std::size_t query_index, const Tensor<T>& weights, std::size_t key_begin, std::size_t key_end) {
  if (weights.rank() != 3) throw DimensionError("attention_to: expected heads×n×m weights, got " + shape_str(weights.shape()));
  const auto heads = weights.dim(0), n = weights.dim(1), m = weights.dim(2);
  if (query_index >= n) {
    throw IndexError("attention_to: query " + std::to_string(query_index) + " outside " + std::to_string(n) + " rows");
  }
  if (key_begin > key_end || key_end > m) {
    throw IndexError("attention_to: key range [" + std::to_string(key_begin) + ", " + std::to_string(key_end) +
                     ") outside " + std::to_string(m) + " keys");
  }
  std::vector<T> alpha(key_end - key_begin, T(0));
  const auto W = weights.data();
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t j = key_begin; j < key_end; ++j) alpha[j - key_begin] += W[(h * n + query_index) * m + j];
  for (auto& a : alpha) a /= static_cast<T>(heads);
  const auto len = alpha.size();
  return Tensor<T>({len}, std::move(alpha));
}

}  // namespace olvit
