#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "hbev/ledger.hpp"
#include "hbev/rng.hpp"
#include "hbev/tensor.hpp"

namespace hbev {

// Exact row-major matrix product, (m,k) x (k,n) -> (m,n). Adds m*n*k MACs to
// the chosen ledger slot. Rows may run in parallel; the per-element reduction
// order over k is fixed, so results are identical at any thread count.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, FlopLedger& ledger,
                 Slot slot) {
  if (a.rank() != 2 || b.rank() != 2) throw shape_error("matmul expects rank-2 operands");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw shape_error("matmul inner dims disagree: " + std::to_string(k) + " vs " +
                      std::to_string(b.dim(0)));
  }
  Tensor<T> out({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();
  parallel_for(m, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += pa[i * k + kk] * pb[kk * n + j];
      po[i * n + j] = acc;
    }
  });
  ledger.add(slot, static_cast<std::uint64_t>(m) * n * k);
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw shape_error("transpose expects rank-2 operand");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a(i, j);
  return out;
}

// Softmax over the last axis; leading axes are treated as rows. Row max is
// subtracted first, so outputs stay in (0, 1] for any input magnitude.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  if (a.rank() < 1) throw shape_error("softmax_rows expects rank >= 1");
  const std::size_t n = a.dim(a.rank() - 1);
  const std::size_t rows = a.numel() / n;
  Tensor<T> out(a.dims());
  const T* pa = a.data().data();
  T* po = out.data().data();
  parallel_for(rows, [&](std::size_t r) {
    const T* x = pa + r * n;
    T* y = po + r * n;
    T mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= sum;
  });
  return out;
}

// Layer normalization over the last axis (length C): per vector, subtract the
// mean, divide by sqrt(variance + eps), then apply gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
  const std::size_t c = x.dim(x.rank() - 1);
  if (gain.rank() != 1 || gain.dim(0) != c || bias.rank() != 1 || bias.dim(0) != c) {
    throw shape_error("layer_norm gain/bias must have length C");
  }
  if (!(eps > T(0))) throw shape_error("layer_norm eps must be positive");
  const std::size_t rows = x.numel() / c;
  Tensor<T> out(x.dims());
  const T* px = x.data().data();
  const T* pg = gain.data().data();
  const T* pb = bias.data().data();
  T* po = out.data().data();
  parallel_for(rows, [&](std::size_t r) {
    const T* v = px + r * c;
    T* y = po + r * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += v[j];
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const T d = v[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(c);
    const T inv = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) y[j] = pg[j] * (v[j] - mean) * inv + pb[j];
  });
  return out;
}

// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
template <typename T>
T gelu_scalar(T x) {
  return x * T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out(x.dims());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = gelu_scalar(x[i]);
  return out;
}

// Affine map on the last axis: rows of x times w (Cin, Cout) plus bias.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 FlopLedger& ledger, Slot slot = Slot::other) {
  const std::size_t cin = x.dim(x.rank() - 1);
  if (w.rank() != 2 || w.dim(0) != cin) throw shape_error("linear weight shape mismatch");
  const std::size_t cout = w.dim(1);
  if (b.rank() != 1 || b.dim(0) != cout) throw shape_error("linear bias shape mismatch");
  const std::size_t rows = x.numel() / cin;
  Tensor<T> y = matmul(x.reshaped({rows, cin}), w, ledger, slot);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cout; ++j) y(r, j) += b[j];
  std::vector<std::size_t> out_dims = x.dims();
  out_dims.back() = cout;
  return y.reshaped(out_dims);
}

// Weights for one transformer block: Q/K/V and output projections (C,C), the
// two MLP layers (C,H) and (H,C), and two layer-norm gain/bias pairs.
template <typename T>
struct LayerParams {
  Tensor<T> wq, bq;
  Tensor<T> wk, bk;
  Tensor<T> wv, bv;
  Tensor<T> wo, bo;
  Tensor<T> w1, b1;
  Tensor<T> w2, b2;
  Tensor<T> ln1_gain, ln1_bias;
  Tensor<T> ln2_gain, ln2_bias;

  std::size_t channels() const { return wq.dim(0); }
  std::size_t hidden() const { return w1.dim(1); }

  template <typename U>
  LayerParams<U> cast() const {
    LayerParams<U> p;
    p.wq = wq.template cast<U>();
    p.bq = bq.template cast<U>();
    p.wk = wk.template cast<U>();
    p.bk = bk.template cast<U>();
    p.wv = wv.template cast<U>();
    p.bv = bv.template cast<U>();
    p.wo = wo.template cast<U>();
    p.bo = bo.template cast<U>();
    p.w1 = w1.template cast<U>();
    p.b1 = b1.template cast<U>();
    p.w2 = w2.template cast<U>();
    p.b2 = b2.template cast<U>();
    p.ln1_gain = ln1_gain.template cast<U>();
    p.ln1_bias = ln1_bias.template cast<U>();
    p.ln2_gain = ln2_gain.template cast<U>();
    p.ln2_bias = ln2_bias.template cast<U>();
    return p;
  }

  static LayerParams zeros(std::size_t c, std::size_t hidden) {
    LayerParams p;
    p.wq = Tensor<T>({c, c});
    p.bq = Tensor<T>({c});
    p.wk = Tensor<T>({c, c});
    p.bk = Tensor<T>({c});
    p.wv = Tensor<T>({c, c});
    p.bv = Tensor<T>({c});
    p.wo = Tensor<T>({c, c});
    p.bo = Tensor<T>({c});
    p.w1 = Tensor<T>({c, hidden});
    p.b1 = Tensor<T>({hidden});
    p.w2 = Tensor<T>({hidden, c});
    p.b2 = Tensor<T>({c});
    p.ln1_gain = Tensor<T>({c});
    p.ln1_bias = Tensor<T>({c});
    p.ln2_gain = Tensor<T>({c});
    p.ln2_bias = Tensor<T>({c});
    for (T& v : p.ln1_gain.data()) v = T(1);
    for (T& v : p.ln2_gain.data()) v = T(1);
    return p;
  }

  // Draw order is fixed (wq, bq, wk, bk, wv, bv, wo, bo, w1, b1, w2, b2,
  // norms), so a seed pins every weight.
  static LayerParams seeded(std::size_t c, std::size_t hidden, NormalSampler& rng) {
    const double wscale = 1.0 / std::sqrt(static_cast<double>(c));
    LayerParams p = zeros(c, hidden);
    fill_normal(p.wq, rng, wscale);
    fill_normal(p.bq, rng, 0.02);
    fill_normal(p.wk, rng, wscale);
    fill_normal(p.bk, rng, 0.02);
    fill_normal(p.wv, rng, wscale);
    fill_normal(p.bv, rng, 0.02);
    fill_normal(p.wo, rng, wscale);
    fill_normal(p.bo, rng, 0.02);
    fill_normal(p.w1, rng, wscale);
    fill_normal(p.b1, rng, 0.02);
    fill_normal(p.w2, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
    fill_normal(p.b2, rng, 0.02);
    fill_normal(p.ln1_gain, rng, 0.02, 1.0);
    fill_normal(p.ln1_bias, rng, 0.02);
    fill_normal(p.ln2_gain, rng, 0.02, 1.0);
    fill_normal(p.ln2_bias, rng, 0.02);
    return p;
  }
};

// linear -> GELU -> linear, using the MLP half of the block parameters.
template <typename T>
Tensor<T> mlp_forward(const Tensor<T>& x, const LayerParams<T>& p,
                      FlopLedger& ledger) {
  if (x.dim(x.rank() - 1) != p.channels()) throw shape_error("mlp_forward channel mismatch");
  Tensor<T> h = linear(x, p.w1, p.b1, ledger, Slot::other);
  h = gelu(h);
  return linear(h, p.w2, p.b2, ledger, Slot::other);
}

}  // namespace hbev
