#pragma once

#include "hbev/attention.hpp"
#include "hbev/kernels.hpp"
#include "hbev/tensor.hpp"

namespace hbev {

// Per-voxel scalar logit via a linear head (weights length C, scalar bias),
// softmax over the Z axis per (x,y) column. Output dims (X,Y,Z); each column
// sums to 1.
template <typename T>
Tensor<T> predict_height_distribution(const Tensor<T>& vox, const Tensor<T>& head_w,
                                      const Tensor<T>& head_b) {
  const Dims3 d = grid_dims(vox);
  const std::size_t c = vox.dim(0);
  if (head_w.rank() != 1 || head_w.dim(0) != c) {
    throw shape_error("height head weights must have length C");
  }
  if (head_b.numel() != 1) throw shape_error("height head bias must be a scalar");
  Tensor<T> logits({d.x, d.y, d.z});
  const T b = head_b[0];
  parallel_for(d.x, [&](std::size_t x) {
    for (std::size_t y = 0; y < d.y; ++y) {
      for (std::size_t z = 0; z < d.z; ++z) {
        T acc = b;
        for (std::size_t ch = 0; ch < c; ++ch) acc += head_w[ch] * vox(ch, x, y, z);
        logits(x, y, z) = acc;
      }
    }
  });
  return softmax_rows(logits);  // Z is the last axis
}

// BEV[c,x,y] = sum_z dist[x,y,z] * vox[c,x,y,z].
template <typename T>
Tensor<T> compress_to_bev(const Tensor<T>& vox, const Tensor<T>& dist) {
  const Dims3 d = grid_dims(vox);
  if (dist.rank() != 3 || dist.dim(0) != d.x || dist.dim(1) != d.y ||
      dist.dim(2) != d.z) {
    throw shape_error("height distribution dims must match voxel grid");
  }
  const std::size_t c = vox.dim(0);
  Tensor<T> bev({c, d.x, d.y});
  parallel_for(c, [&](std::size_t ch) {
    for (std::size_t x = 0; x < d.x; ++x) {
      for (std::size_t y = 0; y < d.y; ++y) {
        T acc = 0;
        for (std::size_t z = 0; z < d.z; ++z) acc += dist(x, y, z) * vox(ch, x, y, z);
        bev(ch, x, y) = acc;
      }
    }
  });
  return bev;
}

// Alternative reducer: flatten each column's (C*Z) values and apply one
// linear map to C outputs. Kept behind a mode flag for ablation runs.
template <typename T>
Tensor<T> compress_flatten_linear(const Tensor<T>& vox, const Tensor<T>& w,
                                  const Tensor<T>& b, FlopLedger& ledger) {
  const Dims3 d = grid_dims(vox);
  const std::size_t c = vox.dim(0);
  if (w.rank() != 2 || w.dim(0) != c * d.z || w.dim(1) != c) {
    throw shape_error("flatten reducer weights must have dims (C*Z, C)");
  }
  if (b.rank() != 1 || b.dim(0) != c) {
    throw shape_error("flatten reducer bias must have length C");
  }
  // columns as rows: (X*Y, C*Z) with flatten order (c, z)
  Tensor<T> cols({d.x * d.y, c * d.z});
  for (std::size_t x = 0; x < d.x; ++x)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t z = 0; z < d.z; ++z)
          cols(x * d.y + y, ch * d.z + z) = vox(ch, x, y, z);
  const Tensor<T> reduced = linear(cols, w, b, ledger, Slot::other);
  Tensor<T> bev({c, d.x, d.y});
  for (std::size_t x = 0; x < d.x; ++x)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t ch = 0; ch < c; ++ch)
        bev(ch, x, y) = reduced(x * d.y + y, ch);
  return bev;
}

}  // namespace hbev
