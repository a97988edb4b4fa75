#pragma once

#include "hbev/geometry.hpp"
#include "hbev/tensor.hpp"

namespace hbev {

// Lifts image features (C,Hf,Wf) into the voxel grid (C,X,Y,Z) by mapping
// table lookup: voxel (x,y,z) copies img[:, v, u] for a valid entry and is
// zero-filled for a sentinel. Pure gather; collisions duplicate features.
template <typename T>
Tensor<T> lift_features(const Tensor<T>& img, const MappingTable& table) {
  if (img.rank() != 3) throw shape_error("image features must have dims (C,Hf,Wf)");
  if (img.dim(1) != table.feat_h || img.dim(2) != table.feat_w) {
    throw shape_error("image feature dims do not match mapping table");
  }
  const std::size_t c = img.dim(0);
  const Dims3 d = table.dims;
  Tensor<T> vox({c, d.x, d.y, d.z});
  const std::size_t n = d.count();
  parallel_for(n, [&](std::size_t i) {
    if (!table.valid_at(i)) return;  // stays zero
    const auto u = static_cast<std::size_t>(table.u_at(i));
    const auto v = static_cast<std::size_t>(table.v_at(i));
    const std::size_t x = i / (d.y * d.z);
    const std::size_t y = (i / d.z) % d.y;
    const std::size_t z = i % d.z;
    for (std::size_t ch = 0; ch < c; ++ch) vox(ch, x, y, z) = img(ch, v, u);
  });
  return vox;
}

}  // namespace hbev
