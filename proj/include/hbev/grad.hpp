#pragma once

#include <cmath>
#include <functional>
#include <numbers>

#include "hbev/attention.hpp"
#include "hbev/kernels.hpp"
#include "hbev/tensor.hpp"

namespace hbev {

// Central-difference gradient of a scalar function, (f(x+h*e_i) - f(x-h*e_i))
// / (2h) per element. 64-bit only; used as the oracle for every analytic
// gradient in the project.
template <typename F>
Tensor<double> finite_diff_grad(F&& f, const Tensor<double>& x, double h) {
  if (!(h > 0)) throw shape_error("finite_diff_grad requires h > 0");
  Tensor<double> grad(x.dims());
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("finite_diff_grad: function value not finite");
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// dx for y = softmax_rows(x), given y and upstream dy:
// dx_i = y_i * (dy_i - sum_j y_j dy_j) per row.
template <typename T>
Tensor<T> softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  if (!y.same_dims(dy)) throw shape_error("softmax_rows_backward dims mismatch");
  const std::size_t n = y.dim(y.rank() - 1);
  const std::size_t rows = y.numel() / n;
  Tensor<T> dx(y.dims());
  for (std::size_t r = 0; r < rows; ++r) {
    T dot = 0;
    for (std::size_t j = 0; j < n; ++j) dot += y[r * n + j] * dy[r * n + j];
    for (std::size_t j = 0; j < n; ++j)
      dx[r * n + j] = y[r * n + j] * (dy[r * n + j] - dot);
  }
  return dx;
}

// dx for y = layer_norm(x, gain, bias, eps).
template <typename T>
Tensor<T> layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gain, T eps,
                              const Tensor<T>& dy) {
  if (!x.same_dims(dy)) throw shape_error("layer_norm_backward dims mismatch");
  const std::size_t c = x.dim(x.rank() - 1);
  const std::size_t rows = x.numel() / c;
  Tensor<T> dx(x.dims());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* v = x.data().data() + r * c;
    const T* g = gain.data().data();
    const T* d = dy.data().data() + r * c;
    T* o = dx.data().data() + r * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += v[j];
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const T t = v[j] - mean;
      var += t * t;
    }
    var /= static_cast<T>(c);
    const T inv = T(1) / std::sqrt(var + eps);
    // dxhat_j = g_j * dy_j; dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
    T mean_dxh = 0, mean_dxh_xh = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const T xh = (v[j] - mean) * inv;
      const T dxh = g[j] * d[j];
      mean_dxh += dxh;
      mean_dxh_xh += dxh * xh;
    }
    mean_dxh /= static_cast<T>(c);
    mean_dxh_xh /= static_cast<T>(c);
    for (std::size_t j = 0; j < c; ++j) {
      const T xh = (v[j] - mean) * inv;
      const T dxh = g[j] * d[j];
      o[j] = inv * (dxh - mean_dxh - xh * mean_dxh_xh);
    }
  }
  return dx;
}

// d/dx of exact GELU: Phi(x) + x * phi(x).
template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  if (!x.same_dims(dy)) throw shape_error("gelu_backward dims mismatch");
  Tensor<T> dx(x.dims());
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T xi = x[i];
    const T cdf = T(0.5) * (T(1) + std::erf(xi * inv_sqrt2));
    const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * xi * xi);
    dx[i] = dy[i] * (cdf + xi * pdf);
  }
  return dx;
}

// dx for y = x*w + b: dy * w^T, applied over the last axis.
template <typename T>
Tensor<T> linear_backward_input(const Tensor<T>& dy, const Tensor<T>& w) {
  const std::size_t cout = dy.dim(dy.rank() - 1);
  if (w.rank() != 2 || w.dim(1) != cout) {
    throw shape_error("linear_backward_input weight mismatch");
  }
  const std::size_t rows = dy.numel() / cout;
  FlopLedger scratch;
  Tensor<T> dx = matmul(dy.reshaped({rows, cout}), transpose(w), scratch, Slot::other);
  std::vector<std::size_t> out_dims = dy.dims();
  out_dims.back() = w.dim(0);
  return dx.reshaped(out_dims);
}

template <typename T>
Tensor<T> mlp_backward_input(const Tensor<T>& x, const LayerParams<T>& p,
                             const Tensor<T>& dy) {
  FlopLedger scratch;
  const Tensor<T> h = linear(x, p.w1, p.b1, scratch, Slot::other);
  const Tensor<T> dg = linear_backward_input(dy, p.w2);
  const Tensor<T> dh = gelu_backward(h, dg);
  return linear_backward_input(dh, p.w1);
}

// dx for the attention core of vanilla_attention (projections, scaled scores,
// softmax, S*V), with respect to the input tokens.
template <typename T>
Tensor<T> attention_backward_input(const Tensor<T>& tokens, const LayerParams<T>& p,
                                   const Tensor<T>& dy, std::size_t num_heads = 1) {
  if (!tokens.same_dims(dy)) throw shape_error("attention_backward_input dims mismatch");
  const std::size_t n = tokens.dim(0), c = tokens.dim(1);
  if (num_heads == 0 || c % num_heads != 0)
    throw shape_error("num_heads must divide C");
  const std::size_t dh = c / num_heads;
  FlopLedger scratch;

  const Tensor<T> q = linear(tokens, p.wq, p.bq, scratch, Slot::other);
  const Tensor<T> k = linear(tokens, p.wk, p.bk, scratch, Slot::other);
  const Tensor<T> v = linear(tokens, p.wv, p.bv, scratch, Slot::other);

  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Tensor<T> dq({n, c}), dk({n, c}), dv({n, c});

  for (std::size_t h = 0; h < num_heads; ++h) {
    auto slice = [&](const Tensor<T>& m) {
      Tensor<T> sl({n, dh});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dh; ++j) sl(i, j) = m(i, h * dh + j);
      return sl;
    };
    const Tensor<T> qh = slice(q), kh = slice(k), vh = slice(v), doh = slice(dy);

    Tensor<T> scores = matmul(qh, transpose(kh), scratch, Slot::other);
    for (T& sv : scores.data()) sv *= scale;
    const Tensor<T> s = softmax_rows(scores);

    const Tensor<T> dvh = matmul(transpose(s), doh, scratch, Slot::other);
    const Tensor<T> ds = matmul(doh, transpose(vh), scratch, Slot::other);
    Tensor<T> da = softmax_rows_backward(s, ds);
    for (T& av : da.data()) av *= scale;
    const Tensor<T> dqh = matmul(da, kh, scratch, Slot::other);
    const Tensor<T> dkh = matmul(transpose(da), qh, scratch, Slot::other);

    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dh; ++j) {
        dq(i, h * dh + j) = dqh(i, j);
        dk(i, h * dh + j) = dkh(i, j);
        dv(i, h * dh + j) = dvh(i, j);
      }
  }

  Tensor<T> dx = linear_backward_input(dq, p.wq);
  const Tensor<T> dxk = linear_backward_input(dk, p.wk);
  const Tensor<T> dxv = linear_backward_input(dv, p.wv);
  for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += dxk[i] + dxv[i];
  return dx;
}

// dx for transformer_block on (N,S,C) sequences.
template <typename T>
Tensor<T> block_backward_input(const Tensor<T>& seq, const LayerParams<T>& p,
                               const Tensor<T>& dz, std::size_t num_heads = 1,
                               T eps = T(kLayerNormEps)) {
  if (!seq.same_dims(dz)) throw shape_error("block_backward_input dims mismatch");
  const std::size_t n = seq.dim(0), s = seq.dim(1), c = seq.dim(2);
  FlopLedger scratch;
  Tensor<T> dseq({n, s, c});
  for (std::size_t g = 0; g < n; ++g) {
    Tensor<T> x({s, c}), dzg({s, c});
    for (std::size_t t = 0; t < s; ++t)
      for (std::size_t ch = 0; ch < c; ++ch) {
        x(t, ch) = seq(g, t, ch);
        dzg(t, ch) = dz(g, t, ch);
      }

    // forward intermediates
    const Tensor<T> n1 = layer_norm(x, p.ln1_gain, p.ln1_bias, eps);
    const Tensor<T> attn = vanilla_attention(n1, p, scratch, num_heads);
    const Tensor<T> proj = linear(attn, p.wo, p.bo, scratch, Slot::other);
    Tensor<T> y({s, c});
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] + proj[i];
    const Tensor<T> n2 = layer_norm(y, p.ln2_gain, p.ln2_bias, eps);

    // z = y + mlp(n2)
    const Tensor<T> dn2 = mlp_backward_input(n2, p, dzg);
    Tensor<T> dy = layer_norm_backward(y, p.ln2_gain, eps, dn2);
    for (std::size_t i = 0; i < dy.numel(); ++i) dy[i] += dzg[i];

    // y = x + proj(attn(n1))
    const Tensor<T> dattn = linear_backward_input(dy, p.wo);
    const Tensor<T> dn1 = attention_backward_input(n1, p, dattn, num_heads);
    Tensor<T> dx = layer_norm_backward(x, p.ln1_gain, eps, dn1);
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += dy[i];

    for (std::size_t t = 0; t < s; ++t)
      for (std::size_t ch = 0; ch < c; ++ch) dseq(g, t, ch) = dx(t, ch);
  }
  return dseq;
}

}  // namespace hbev
