#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "hbev/kernels.hpp"
#include "hbev/ledger.hpp"
#include "hbev/tensor.hpp"

namespace hbev {

inline constexpr double kLayerNormEps = 1e-5;

// Local group extents (X_h, Y_h, Z_h); each must divide the grid axis it is
// applied to. (1, 1, Z) groups one vertical column per sequence.
struct PartitionSpec {
  std::size_t x = 1;
  std::size_t y = 1;
  std::size_t z = 1;

  std::size_t tokens() const { return x * y * z; }
  bool operator==(const PartitionSpec&) const = default;
};

inline void check_partition(const Dims3& dims, const PartitionSpec& spec) {
  if (spec.x == 0 || dims.x % spec.x != 0)
    throw shape_error("partition spec does not divide x axis");
  if (spec.y == 0 || dims.y % spec.y != 0)
    throw shape_error("partition spec does not divide y axis");
  if (spec.z == 0 || dims.z % spec.z != 0)
    throw shape_error("partition spec does not divide z axis");
}

inline std::size_t num_sequences(const Dims3& dims, const PartitionSpec& spec) {
  return (dims.x / spec.x) * (dims.y / spec.y) * (dims.z / spec.z);
}

template <typename T>
Dims3 grid_dims(const Tensor<T>& vox) {
  if (vox.rank() != 4) throw shape_error("voxel features must have dims (C,X,Y,Z)");
  return Dims3{vox.dim(1), vox.dim(2), vox.dim(3)};
}

// Regroups (C,X,Y,Z) voxel features into sequences (N,S,C). Group order is
// lexicographic over (block_x, block_y, block_z); token order within a group
// is lexicographic over (dx, dy, dz) with dz fastest, so spec (1,1,Z) lists
// tokens in ascending height order.
template <typename T>
Tensor<T> height_partition(const Tensor<T>& vox, const PartitionSpec& spec) {
  const Dims3 d = grid_dims(vox);
  check_partition(d, spec);
  const std::size_t c = vox.dim(0);
  const std::size_t n = num_sequences(d, spec);
  const std::size_t s = spec.tokens();
  const std::size_t by = d.y / spec.y, bz = d.z / spec.z;
  Tensor<T> seq({n, s, c});
  parallel_for(n, [&](std::size_t g) {
    const std::size_t gx = g / (by * bz);
    const std::size_t gy = (g / bz) % by;
    const std::size_t gz = g % bz;
    for (std::size_t dx = 0; dx < spec.x; ++dx)
      for (std::size_t dy = 0; dy < spec.y; ++dy)
        for (std::size_t dz = 0; dz < spec.z; ++dz) {
          const std::size_t tok = (dx * spec.y + dy) * spec.z + dz;
          const std::size_t x = gx * spec.x + dx;
          const std::size_t y = gy * spec.y + dy;
          const std::size_t z = gz * spec.z + dz;
          for (std::size_t ch = 0; ch < c; ++ch) seq(g, tok, ch) = vox(ch, x, y, z);
        }
  });
  return seq;
}

// Exact inverse of height_partition.
template <typename T>
Tensor<T> height_reverse(const Tensor<T>& seq, const PartitionSpec& spec,
                         const Dims3& dims) {
  check_partition(dims, spec);
  if (seq.rank() != 3) throw shape_error("height sequences must have dims (N,S,C)");
  const std::size_t n = num_sequences(dims, spec);
  const std::size_t s = spec.tokens();
  if (seq.dim(0) != n || seq.dim(1) != s) {
    throw shape_error("sequence dims inconsistent with spec and grid");
  }
  const std::size_t c = seq.dim(2);
  const std::size_t by = dims.y / spec.y, bz = dims.z / spec.z;
  Tensor<T> vox({c, dims.x, dims.y, dims.z});
  parallel_for(n, [&](std::size_t g) {
    const std::size_t gx = g / (by * bz);
    const std::size_t gy = (g / bz) % by;
    const std::size_t gz = g % bz;
    for (std::size_t dx = 0; dx < spec.x; ++dx)
      for (std::size_t dy = 0; dy < spec.y; ++dy)
        for (std::size_t dz = 0; dz < spec.z; ++dz) {
          const std::size_t tok = (dx * spec.y + dy) * spec.z + dz;
          const std::size_t x = gx * spec.x + dx;
          const std::size_t y = gy * spec.y + dy;
          const std::size_t z = gz * spec.z + dz;
          for (std::size_t ch = 0; ch < c; ++ch) vox(ch, x, y, z) = seq(g, tok, ch);
        }
  });
  return vox;
}

// Scaled dot-product attention on (n,C) tokens: Q,K,V affine projections,
// S = softmax(QK^T / sqrt(d_k)), output S*V. No output projection here; the
// block applies it. QK^T and SV MACs land in the qk/sv slots (n^2*C each,
// regardless of head count); projections land in other.
template <typename T>
Tensor<T> vanilla_attention(const Tensor<T>& tokens, const LayerParams<T>& p,
                            FlopLedger& ledger, std::size_t num_heads = 1) {
  if (tokens.rank() != 2) throw shape_error("attention tokens must have dims (n,C)");
  const std::size_t n = tokens.dim(0), c = tokens.dim(1);
  if (c != p.channels()) throw shape_error("attention channel mismatch");
  if (num_heads == 0 || c % num_heads != 0)
    throw shape_error("num_heads must divide C");
  const std::size_t dh = c / num_heads;

  const Tensor<T> q = linear(tokens, p.wq, p.bq, ledger, Slot::other);
  const Tensor<T> k = linear(tokens, p.wk, p.bk, ledger, Slot::other);
  const Tensor<T> v = linear(tokens, p.wv, p.bv, ledger, Slot::other);

  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Tensor<T> out({n, c});
  for (std::size_t h = 0; h < num_heads; ++h) {
    auto slice = [&](const Tensor<T>& m) {
      Tensor<T> sl({n, dh});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dh; ++j) sl(i, j) = m(i, h * dh + j);
      return sl;
    };
    const Tensor<T> qh = slice(q), kh = slice(k), vh = slice(v);
    Tensor<T> scores = matmul(qh, transpose(kh), ledger, Slot::qk);
    for (T& sv : scores.data()) sv *= scale;
    const Tensor<T> s = softmax_rows(scores);
    const Tensor<T> oh = matmul(s, vh, ledger, Slot::sv);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dh; ++j) out(i, h * dh + j) = oh(i, j);
  }
  return out;
}

// Partition -> vanilla attention per sequence (shared weights) -> reverse.
// Tracked MACs per call: N * S^2 * C in each of qk and sv.
template <typename T>
Tensor<T> height_attention(const Tensor<T>& vox, const PartitionSpec& spec,
                           const LayerParams<T>& p, FlopLedger& ledger,
                           std::size_t num_heads = 1) {
  const Dims3 d = grid_dims(vox);
  const Tensor<T> seq = height_partition(vox, spec);
  const std::size_t n = seq.dim(0), s = seq.dim(1), c = seq.dim(2);
  Tensor<T> out({n, s, c});
  parallel_for(n, [&](std::size_t g) {
    Tensor<T> tokens({s, c});
    for (std::size_t t = 0; t < s; ++t)
      for (std::size_t ch = 0; ch < c; ++ch) tokens(t, ch) = seq(g, t, ch);
    const Tensor<T> o = vanilla_attention(tokens, p, ledger, num_heads);
    for (std::size_t t = 0; t < s; ++t)
      for (std::size_t ch = 0; ch < c; ++ch) out(g, t, ch) = o(t, ch);
  });
  return height_reverse(out, spec, d);
}

// Pre-norm residual block on (N,S,C) sequences with shared weights:
//   y = x + proj(attention(norm1(x)))
//   z = y + mlp(norm2(y))
template <typename T>
Tensor<T> transformer_block(const Tensor<T>& seq, const LayerParams<T>& p,
                            FlopLedger& ledger, std::size_t num_heads = 1,
                            T eps = T(kLayerNormEps)) {
  if (seq.rank() != 3) throw shape_error("transformer_block expects dims (N,S,C)");
  const std::size_t n = seq.dim(0), s = seq.dim(1), c = seq.dim(2);
  if (c != p.channels()) throw shape_error("transformer_block channel mismatch");
  Tensor<T> out({n, s, c});
  parallel_for(n, [&](std::size_t g) {
    Tensor<T> x({s, c});
    for (std::size_t t = 0; t < s; ++t)
      for (std::size_t ch = 0; ch < c; ++ch) x(t, ch) = seq(g, t, ch);

    const Tensor<T> n1 = layer_norm(x, p.ln1_gain, p.ln1_bias, eps);
    const Tensor<T> attn = vanilla_attention(n1, p, ledger, num_heads);
    const Tensor<T> proj = linear(attn, p.wo, p.bo, ledger, Slot::other);
    Tensor<T> y({s, c});
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] + proj[i];

    const Tensor<T> n2 = layer_norm(y, p.ln2_gain, p.ln2_bias, eps);
    const Tensor<T> m = mlp_forward(n2, p, ledger);
    for (std::size_t t = 0; t < s; ++t)
      for (std::size_t ch = 0; ch < c; ++ch)
        out(g, t, ch) = y(t, ch) + m(t, ch);
  });
  return out;
}

// Closed-form tracked-MAC count of attention over all XYZ voxel tokens:
// 2 * (XYZ)^2 * C.
inline std::uint64_t complexity_vanilla(const Dims3& dims, std::size_t c) {
  const std::uint64_t tokens = dims.count();
  return 2 * tokens * tokens * static_cast<std::uint64_t>(c);
}

// Closed-form tracked-MAC count of attention within local groups:
// 2 * X*X_h * Y*Y_h * Z*Z_h * C. Equals complexity_vanilla when the group
// spans the whole grid.
inline std::uint64_t complexity_height(const Dims3& dims, const PartitionSpec& spec,
                                       std::size_t c) {
  check_partition(dims, spec);
  return 2 * static_cast<std::uint64_t>(dims.x) * spec.x * dims.y * spec.y *
         dims.z * spec.z * static_cast<std::uint64_t>(c);
}

// Optional additive height position embedding (one row per absolute z index),
// disabled by default in the pipeline. Token (g,t) receives emb[z] for the
// voxel height z it came from.
template <typename T>
Tensor<T> add_height_pos_embedding(const Tensor<T>& seq, const PartitionSpec& spec,
                                   const Dims3& dims, const Tensor<T>& emb) {
  check_partition(dims, spec);
  if (emb.rank() != 2 || emb.dim(0) != dims.z || emb.dim(1) != seq.dim(2)) {
    throw shape_error("position embedding must have dims (Z,C)");
  }
  const std::size_t n = seq.dim(0), s = seq.dim(1), c = seq.dim(2);
  const std::size_t bz = dims.z / spec.z;
  Tensor<T> out = seq;
  for (std::size_t g = 0; g < n; ++g) {
    const std::size_t gz = g % bz;
    for (std::size_t t = 0; t < s; ++t) {
      const std::size_t dz = t % spec.z;
      const std::size_t z = gz * spec.z + dz;
      for (std::size_t ch = 0; ch < c; ++ch) out(g, t, ch) += emb(z, ch);
    }
  }
  return out;
}

}  // namespace hbev
