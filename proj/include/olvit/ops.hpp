#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "olvit/error.hpp"
#include "olvit/rng.hpp"
#include "olvit/tensor.hpp"

// Differentiable primitives. Every op checks shapes eagerly and, when a tape is
// active and any input requires a gradient, records its backward rule.
namespace olvit::ops {

namespace detail {

template <class T>
bool tracks(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

template <class T, class... Rest>
bool should_record(Tensor<T>& out, const Rest&... inputs) {
  if (active_tape<T>() == nullptr) return false;
  if (!(tracks(inputs) || ...)) return false;
  out.set_requires_grad(true);
  return true;
}

template <class T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (!t.defined() || t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
  }
}

template <class T>
void require_finite(const Tensor<T>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite input");
}

}  // namespace detail

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), x.values());
  if (detail::should_record(out, x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [xn, on] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

// C = A·B with dA = dC·Bᵀ and dB = Aᵀ·dC.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::vector<T> c(m * n, T(0));
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      const T* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  Tensor<T> out({m, n}, std::move(c));
  if (detail::should_record(out, a, b)) {
    auto an = a.node(), bn = b.node();
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [an, bn, on, m, k, n] {
      const auto& g = on->grad;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            T acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bn->data[p * n + j];
            an->grad[i * k + p] += acc;
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const T av = an->data[i * k + p];
            T* brow = bn->grad.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) brow[j] += av * g[i * n + j];
          }
      }
    });
  }
  return out;
}

// Y = X·Wᵀ + b with W stored as out×in. `bias` may be undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {}) {
  detail::require_rank2(x, "linear");
  detail::require_rank2(weight, "linear");
  const auto n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  if (bias.defined() && bias.numel() != out_dim) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  std::vector<T> y(n * out_dim, T(0));
  const auto X = x.data();
  const auto W = weight.data();
  // Accumulate against Wᵀ so the inner loop runs over outputs; each output
  // still sums its inputs in index order.
  std::vector<T> wt(in * out_dim);
  for (std::size_t o = 0; o < out_dim; ++o)
    for (std::size_t p = 0; p < in; ++p) wt[p * out_dim + o] = W[o * in + p];
  for (std::size_t i = 0; i < n; ++i) {
    const T* xr = X.data() + i * in;
    T* yr = y.data() + i * out_dim;
    for (std::size_t p = 0; p < in; ++p) {
      const T xv = xr[p];
      const T* wr = wt.data() + p * out_dim;
      for (std::size_t o = 0; o < out_dim; ++o) yr[o] += xv * wr[o];
    }
    if (bias.defined()) {
      const auto B = bias.data();
      for (std::size_t o = 0; o < out_dim; ++o) yr[o] += B[o];
    }
  }
  Tensor<T> out({n, out_dim}, std::move(y));
  const bool record = bias.defined() ? detail::should_record(out, x, weight, bias)
                                     : detail::should_record(out, x, weight);
  if (record) {
    auto xn = x.node(), wn = weight.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [xn, wn, bn, on, n, in, out_dim] {
      const auto& g = on->grad;
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          T* dx = xn->grad.data() + i * in;
          for (std::size_t o = 0; o < out_dim; ++o) {
            const T gv = g[i * out_dim + o];
            if (gv == T(0)) continue;
            const T* wr = wn->data.data() + o * in;
            for (std::size_t p = 0; p < in; ++p) dx[p] += gv * wr[p];
          }
        }
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const T* xr = xn->data.data() + i * in;
          for (std::size_t o = 0; o < out_dim; ++o) {
            const T gv = g[i * out_dim + o];
            if (gv == T(0)) continue;
            T* dw = wn->grad.data() + o * in;
            for (std::size_t p = 0; p < in; ++p) dw[p] += gv * xr[p];
          }
        }
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t o = 0; o < out_dim; ++o) bn->grad[o] += g[i * out_dim + o];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  Tensor<T> out(a.shape(), std::move(y));
  if (detail::should_record(out, a, b)) {
    auto an = a.node(), bn = b.node();
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [an, bn, on] {
      for (auto* in : {an.get(), bn.get()}) {
        if (!in->requires_grad) continue;
        in->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) in->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  Tensor<T> out(a.shape(), std::move(y));
  if (detail::should_record(out, a, b)) {
    auto an = a.node(), bn = b.node();
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [an, bn, on] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
      }
    });
  }
  return out;
}

// The only broadcast supported: a length-d vector added to every row of n×d.
template <class T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  detail::require_rank2(x, "add_row_bias");
  const auto n = x.dim(0), d = x.dim(1);
  if (bias.numel() != d) {
    throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) + " vs rows of " + shape_str(x.shape()));
  }
  std::vector<T> y(x.values());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) y[i * d + j] += bias.data()[j];
  Tensor<T> out(x.shape(), std::move(y));
  if (detail::should_record(out, x, bias)) {
    auto xn = x.node(), bn = bias.node();
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [xn, bn, on, n, d] {
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) bn->grad[j] += on->grad[i * d + j];
      }
    });
  }
  return out;
}

// Elementwise product.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  Tensor<T> out(a.shape(), std::move(y));
  if (detail::should_record(out, a, b)) {
    auto an = a.node(), bn = b.node();
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [an, bn, on] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->data[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> y(a.values());
  for (auto& v : y) v *= s;
  Tensor<T> out(a.shape(), std::move(y));
  if (detail::should_record(out, a)) {
    auto an = a.node();
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [an, on, s] {
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * s;
    });
  }
  return out;
}

// Concatenation of matrices along rows (axis 0) or columns (axis 1).
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  if (axis != 0 && axis != 1) throw DimensionError("concat: axis must be 0 or 1");
  for (const auto& p : parts) detail::require_rank2(p, "concat");
  std::size_t rows = 0, cols = 0;
  if (axis == 0) {
    cols = parts[0].dim(1);
    for (const auto& p : parts) {
      if (p.dim(1) != cols) {
        throw DimensionError("concat: column mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
      }
      rows += p.dim(0);
    }
  } else {
    rows = parts[0].dim(0);
    for (const auto& p : parts) {
      if (p.dim(0) != rows) {
        throw DimensionError("concat: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
      }
      cols += p.dim(1);
    }
  }
  std::vector<T> y;
  y.reserve(rows * cols);
  if (axis == 0) {
    for (const auto& p : parts) y.insert(y.end(), p.data().begin(), p.data().end());
  } else {
    y.resize(rows * cols);
    std::size_t off = 0;
    for (const auto& p : parts) {
      const auto c = p.dim(1);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < c; ++j) y[i * cols + off + j] = p.data()[i * c + j];
      off += c;
    }
  }
  Tensor<T> out({rows, cols}, std::move(y));
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (any && active_tape<T>() != nullptr) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [nodes, on, axis, rows, cols] {
      std::size_t off = 0;
      for (auto& pn : nodes) {
        const auto pr = pn->shape[0], pc = pn->shape[1];
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (std::size_t i = 0; i < pr; ++i)
            for (std::size_t j = 0; j < pc; ++j) {
              const auto src = axis == 0 ? (off + i) * cols + j : i * cols + off + j;
              pn->grad[i * pc + j] += on->grad[src];
            }
        }
        off += axis == 0 ? pr : pc;
      }
      (void)rows;
    });
  }
  return out;
}

// Rows [begin, end) of a matrix.
template <class T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  detail::require_rank2(x, "slice_rows");
  if (begin > end || end > x.dim(0)) {
    throw IndexError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + shape_str(x.shape()));
  }
  const auto d = x.dim(1);
  std::vector<T> y(x.data().begin() + static_cast<std::ptrdiff_t>(begin * d),
                   x.data().begin() + static_cast<std::ptrdiff_t>(end * d));
  Tensor<T> out({end - begin, d}, std::move(y));
  if (detail::should_record(out, x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [xn, on, begin, d] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[begin * d + i] += on->grad[i];
    });
  }
  return out;
}

// Gathers rows by index; doubles as embedding lookup.
template <class T>
Tensor<T> select_rows(const Tensor<T>& table, const std::vector<std::size_t>& indices) {
  detail::require_rank2(table, "select_rows");
  const auto n = table.dim(0), d = table.dim(1);
  std::vector<T> y(indices.size() * d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= n) {
      throw IndexError("select_rows: index " + std::to_string(indices[r]) + " out of range for " +
                       std::to_string(n) + " rows");
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(indices[r] * d), d, y.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  Tensor<T> out({indices.size(), d}, std::move(y));
  if (detail::should_record(out, table)) {
    auto tn = table.node();
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [tn, on, indices, d] {
      tn->ensure_grad();
      for (std::size_t r = 0; r < indices.size(); ++r)
        for (std::size_t j = 0; j < d; ++j) tn->grad[indices[r] * d + j] += on->grad[r * d + j];
    });
  }
  return out;
}

template <class T>
Tensor<T> gather(const Tensor<T>& table, const std::vector<std::size_t>& ids) {
  return select_rows(table, ids);
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  detail::require_rank2(x, "transpose");
  const auto r = x.dim(0), c = x.dim(1);
  std::vector<T> y(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = x.data()[i * c + j];
  Tensor<T> out({c, r}, std::move(y));
  if (detail::should_record(out, x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [xn, on, r, c] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) xn->grad[i * c + j] += on->grad[j * r + i];
    });
  }
  return out;
}

// Sum of all elements, shape {1}.
template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T s = 0;
  for (auto v : x.data()) s += v;
  Tensor<T> out({1}, {s});
  if (detail::should_record(out, x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [xn, on] {
      xn->ensure_grad();
      for (auto& g : xn->grad) g += on->grad[0];
    });
  }
  return out;
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

// Reduction of a matrix along `axis`: axis 0 gives shape {cols}, axis 1 gives {rows}.
template <class T>
Tensor<T> sum(const Tensor<T>& x, int axis) {
  detail::require_rank2(x, "sum");
  if (axis != 0 && axis != 1) throw DimensionError("sum: axis must be 0 or 1");
  const auto r = x.dim(0), c = x.dim(1);
  std::vector<T> y(axis == 0 ? c : r, T(0));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[axis == 0 ? j : i] += x.data()[i * c + j];
  const auto len = y.size();
  Tensor<T> out({len}, std::move(y));
  if (detail::should_record(out, x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [xn, on, r, c, axis] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) xn->grad[i * c + j] += on->grad[axis == 0 ? j : i];
    });
  }
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x, int axis) {
  detail::require_rank2(x, "mean");
  const auto count = axis == 0 ? x.dim(0) : x.dim(1);
  return scale(sum(x, axis), T(1) / static_cast<T>(count));
}

// Numerically stable softmax along `axis` of a vector (axis 0) or matrix (axis 0/1).
template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  detail::require_finite(x, "softmax");
  std::size_t outer, inner, stride;
  if (x.rank() == 1) {
    if (axis != 0) throw DimensionError("softmax: axis out of range for a vector");
    outer = 1, inner = x.dim(0), stride = 1;
  } else if (x.rank() == 2) {
    if (axis == 1) {
      outer = x.dim(0), inner = x.dim(1), stride = 1;
    } else if (axis == 0) {
      outer = x.dim(1), inner = x.dim(0), stride = x.dim(1);
    } else {
      throw DimensionError("softmax: axis out of range for a matrix");
    }
  } else {
    throw DimensionError("softmax: unsupported rank " + std::to_string(x.rank()));
  }
  const std::size_t step = stride == 1 ? inner : 1;
  std::vector<T> y(x.numel());
  const auto X = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * step;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < inner; ++i) mx = std::max(mx, X[base + i * stride]);
    T total = 0;
    for (std::size_t i = 0; i < inner; ++i) {
      const T e = std::exp(X[base + i * stride] - mx);
      y[base + i * stride] = e;
      total += e;
    }
    for (std::size_t i = 0; i < inner; ++i) y[base + i * stride] /= total;
  }
  Tensor<T> out(x.shape(), std::move(y));
  if (detail::should_record(out, x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [xn, on, outer, inner, stride, step] {
      xn->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t base = o * step;
        T dot = 0;
        for (std::size_t i = 0; i < inner; ++i) {
          const auto idx = base + i * stride;
          dot += on->grad[idx] * on->data[idx];
        }
        for (std::size_t i = 0; i < inner; ++i) {
          const auto idx = base + i * stride;
          xn->grad[idx] += on->data[idx] * (on->grad[idx] - dot);
        }
      }
    });
  }
  return out;
}

// Per-row normalisation with population variance, then gain and shift.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  detail::require_rank2(x, "layer_norm");
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
  const auto n = x.dim(0), d = x.dim(1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: gain/shift of length " + std::to_string(gamma.numel()) + "/" +
                         std::to_string(beta.numel()) + " for rows of width " + std::to_string(d));
  }
  std::vector<T> y(n * d), xhat(n * d), inv_std(n);
  const auto X = x.data();
  const auto G = gamma.data();
  const auto B = beta.data();
  for (std::size_t i = 0; i < n; ++i) {
    const T* xr = X.data() + i * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mu) * is;
      xhat[i * d + j] = h;
      y[i * d + j] = h * G[j] + B[j];
    }
  }
  Tensor<T> out(x.shape(), std::move(y));
  if (detail::should_record(out, x, gamma, beta)) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [xn, gn, bn, on, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      const auto& g = on->grad;
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gn->grad[j] += g[i * d + j] * xhat[i * d + j];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) bn->grad[j] += g[i * d + j];
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          T mean_dh = 0, mean_dh_h = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = g[i * d + j] * gn->data[j];
            mean_dh += dh;
            mean_dh_h += dh * xhat[i * d + j];
          }
          mean_dh /= static_cast<T>(d);
          mean_dh_h /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = g[i * d + j] * gn->data[j];
            xn->grad[i * d + j] += inv_std[i] * (dh - mean_dh - xhat[i * d + j] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

// −log softmax(logits)[target] for a single logit vector ({N} or {1, N}).
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t target) {
  const auto n = logits.numel();
  if (logits.rank() == 2 && logits.dim(0) != 1) {
    throw DimensionError("cross_entropy: expected one row of logits, got " + shape_str(logits.shape()));
  }
  if (n == 0) throw DimensionError("cross_entropy: empty logits");
  if (target >= n) {
    throw IndexError("cross_entropy: target " + std::to_string(target) + " out of range for " +
                     std::to_string(n) + " classes");
  }
  detail::require_finite(logits, "cross_entropy");
  const auto L = logits.data();
  T mx = L[0];
  for (auto v : L) mx = std::max(mx, v);
  T total = 0;
  for (auto v : L) total += std::exp(v - mx);
  const T lse = mx + std::log(total);
  Tensor<T> out({1}, {lse - L[target]});
  if (detail::should_record(out, logits)) {
    auto ln = logits.node();
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [ln, on, n, target, lse] {
      ln->ensure_grad();
      const T g = on->grad[0];
      for (std::size_t i = 0; i < n; ++i) {
        const T p = std::exp(ln->data[i] - lse);
        ln->grad[i] += g * (p - (i == target ? T(1) : T(0)));
      }
    });
  }
  return out;
}

// tanh-approximated GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  std::vector<T> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T v = x.data()[i];
    y[i] = T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
  }
  Tensor<T> out(x.shape(), std::move(y));
  if (detail::should_record(out, x)) {
    auto xn = x.node();
    auto* on = out.node().get();
    active_tape<T>()->record(out.node(), [xn, on] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        const T v = xn->data[i];
        const T u = kC * (v + kA * v * v * v);
        const T th = std::tanh(u);
        const T du = kC * (T(1) + T(3) * kA * v * v);
        const T dy = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du;
        xn->grad[i] += on->grad[i] * dy;
      }
    });
  }
  return out;
}

// Inverted dropout with a counter-based mask; identity when rate == 0.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::uint64_t seed) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout: rate must be < 1");
  const T keep_scale = T(1.0 / (1.0 - rate));
  std::vector<T> mask(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double u = static_cast<double>(splitmix64(seed ^ splitmix64(i)) >> 11) * 0x1.0p-53;
    mask[i] = u < rate ? T(0) : keep_scale;
  }
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

}  // namespace olvit::ops
