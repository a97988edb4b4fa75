#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hbev/common.hpp"
#include "hbev/tensor.hpp"

namespace hbev {

// Pinhole camera: 3x3 intrinsic (pixels) and 4x4 world->camera extrinsic
// (meters), both row-major.
struct CameraCalib {
  std::array<double, 9> intrinsic{};
  std::array<double, 16> extrinsic{};
  std::size_t image_h = 0;
  std::size_t image_w = 0;

  void validate() const {
    auto near = [](double a, double b, double tol) { return std::abs(a - b) <= tol; };
    if (!near(intrinsic[6], 0.0, 1e-12) || !near(intrinsic[7], 0.0, 1e-12) ||
        !near(intrinsic[8], 1.0, 1e-12)) {
      throw config_error("intrinsic bottom row must be (0, 0, 1)");
    }
    if (!near(extrinsic[12], 0.0, 1e-12) || !near(extrinsic[13], 0.0, 1e-12) ||
        !near(extrinsic[14], 0.0, 1e-12) || !near(extrinsic[15], 1.0, 1e-12)) {
      throw config_error("extrinsic bottom row must be (0, 0, 0, 1)");
    }
    // rotation block orthonormality: R * R^T = I within 1e-6
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double dot = 0;
        for (int k = 0; k < 3; ++k) dot += extrinsic[i * 4 + k] * extrinsic[j * 4 + k];
        const double want = (i == j) ? 1.0 : 0.0;
        if (!near(dot, want, 1e-6)) {
          throw config_error("extrinsic rotation block is not orthonormal");
        }
      }
    }
    if (image_h == 0 || image_w == 0) {
      throw config_error("image_h and image_w must be positive");
    }
  }
};

// Calibration JSON: {"intrinsic": [9 reals], "extrinsic": [16 reals],
// "image_h": int, "image_w": int}.
inline CameraCalib load_calib(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open calibration file: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("calibration JSON parse error: ") + e.what());
  }
  CameraCalib c;
  if (!j.contains("intrinsic") || !j["intrinsic"].is_array() ||
      j["intrinsic"].size() != 9) {
    throw config_error("intrinsic must have 9 values");
  }
  if (!j.contains("extrinsic") || !j["extrinsic"].is_array() ||
      j["extrinsic"].size() != 16) {
    throw config_error("extrinsic must have 16 values");
  }
  if (!j.contains("image_h") || !j.contains("image_w")) {
    throw config_error("calibration must define image_h and image_w");
  }
  for (std::size_t i = 0; i < 9; ++i) c.intrinsic[i] = j["intrinsic"][i].get<double>();
  for (std::size_t i = 0; i < 16; ++i) c.extrinsic[i] = j["extrinsic"][i].get<double>();
  c.image_h = j["image_h"].get<std::size_t>();
  c.image_w = j["image_w"].get<std::size_t>();
  c.validate();
  return c;
}

inline void save_calib(const CameraCalib& c, const std::filesystem::path& path) {
  nlohmann::json j;
  j["intrinsic"] = c.intrinsic;
  j["extrinsic"] = c.extrinsic;
  j["image_h"] = c.image_h;
  j["image_w"] = c.image_w;
  detail::atomic_write_file(path, [&](std::ostream& os) { os << j.dump(2) << "\n"; });
}

// Axis-aligned voxel grid; cell (i,j,k) has center (min + (i+0.5)*res) per
// axis.
struct VoxelGrid {
  double x_min = 0, x_max = 0;
  double y_min = 0, y_max = 0;
  double z_min = 0, z_max = 0;
  double resolution = 0;
  Dims3 dims;

  std::array<double, 3> center(std::size_t i, std::size_t j, std::size_t k) const {
    return {x_min + (static_cast<double>(i) + 0.5) * resolution,
            y_min + (static_cast<double>(j) + 0.5) * resolution,
            z_min + (static_cast<double>(k) + 0.5) * resolution};
  }
};

inline VoxelGrid make_voxel_grid(std::pair<double, double> x_range,
                                 std::pair<double, double> y_range,
                                 std::pair<double, double> z_range,
                                 double resolution) {
  if (!(resolution > 0)) throw config_error("resolution must be positive");
  auto cells = [&](std::pair<double, double> r, const char* axis) -> std::size_t {
    const double extent = r.second - r.first;
    if (!(extent > 0)) {
      throw config_error(std::string(axis) + " range must be nonempty");
    }
    const double ratio = extent / resolution;
    const double rounded = std::round(ratio);
    if (rounded < 1.0 || std::abs(extent - rounded * resolution) > 1e-9) {
      throw config_error(std::string(axis) + " not divisible by resolution");
    }
    return static_cast<std::size_t>(rounded);
  };
  VoxelGrid g;
  g.x_min = x_range.first;
  g.x_max = x_range.second;
  g.y_min = y_range.first;
  g.y_max = y_range.second;
  g.z_min = z_range.first;
  g.z_max = z_range.second;
  g.resolution = resolution;
  g.dims = Dims3{cells(x_range, "x"), cells(y_range, "y"), cells(z_range, "z")};
  return g;
}

// World point -> full-resolution pixel (u, v). nullopt when the point lies at
// or behind the camera plane (camera-frame depth <= 1e-9).
inline std::optional<std::array<double, 2>> project_point(
    const CameraCalib& calib, const std::array<double, 3>& point) {
  const auto& e = calib.extrinsic;
  double cam[3];
  for (int i = 0; i < 3; ++i) {
    cam[i] = e[i * 4 + 0] * point[0] + e[i * 4 + 1] * point[1] +
             e[i * 4 + 2] * point[2] + e[i * 4 + 3];
  }
  const double depth = cam[2];
  if (depth <= 1e-9) return std::nullopt;
  const auto& k = calib.intrinsic;
  const double u = (k[0] * cam[0] + k[1] * cam[1] + k[2] * cam[2]) / depth;
  const double v = (k[3] * cam[0] + k[4] * cam[1] + k[5] * cam[2]) / depth;
  return std::array<double, 2>{u, v};
}

// Per-voxel lookup of the feature-grid coordinate its center projects to.
// entries holds (u, v) pairs at linear index ((x*Y + y)*Z + z); (-1, -1)
// marks voxels behind the camera or outside the image.
struct MappingTable {
  Dims3 dims;
  std::size_t feat_h = 0;
  std::size_t feat_w = 0;
  std::vector<std::int32_t> entries;  // 2 * X*Y*Z, interleaved (u, v)

  static constexpr std::int32_t kSentinel = -1;

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return (x * dims.y + y) * dims.z + z;
  }
  std::int32_t u_at(std::size_t i) const { return entries[2 * i]; }
  std::int32_t v_at(std::size_t i) const { return entries[2 * i + 1]; }
  bool valid_at(std::size_t i) const { return entries[2 * i] != kSentinel; }
};

inline MappingTable build_mapping_table(const CameraCalib& calib,
                                        const VoxelGrid& grid,
                                        std::size_t image_h, std::size_t image_w,
                                        std::size_t stride) {
  if (stride == 0 || image_h % stride != 0 || image_w % stride != 0) {
    throw config_error("feature stride must divide image dims");
  }
  MappingTable t;
  t.dims = grid.dims;
  t.feat_h = image_h / stride;
  t.feat_w = image_w / stride;
  t.entries.assign(2 * grid.dims.count(), MappingTable::kSentinel);
  const double h = static_cast<double>(image_h);
  const double w = static_cast<double>(image_w);
  parallel_for(grid.dims.x, [&](std::size_t x) {
    for (std::size_t y = 0; y < grid.dims.y; ++y) {
      for (std::size_t z = 0; z < grid.dims.z; ++z) {
        const auto uv = project_point(calib, grid.center(x, y, z));
        if (!uv) continue;
        const double u = (*uv)[0], v = (*uv)[1];
        if (u < 0.0 || u >= w || v < 0.0 || v >= h) continue;
        const std::size_t i = t.index(x, y, z);
        t.entries[2 * i] =
            static_cast<std::int32_t>(std::floor(u / static_cast<double>(stride)));
        t.entries[2 * i + 1] =
            static_cast<std::int32_t>(std::floor(v / static_cast<double>(stride)));
      }
    }
  });
  return t;
}

// "HMAP" file: magic, then little-endian u32 version=1, X, Y, Z, Hf, Wf,
// then X*Y*Z pairs of little-endian i32 (u, v).
inline constexpr char kMapMagic[4] = {'H', 'M', 'A', 'P'};

inline void save_mapping_table(const MappingTable& t,
                               const std::filesystem::path& path) {
  detail::atomic_write_file(path, [&](std::ostream& os) {
    os.write(kMapMagic, 4);
    detail::write_u32le(os, 1);
    detail::write_u32le(os, static_cast<std::uint32_t>(t.dims.x));
    detail::write_u32le(os, static_cast<std::uint32_t>(t.dims.y));
    detail::write_u32le(os, static_cast<std::uint32_t>(t.dims.z));
    detail::write_u32le(os, static_cast<std::uint32_t>(t.feat_h));
    detail::write_u32le(os, static_cast<std::uint32_t>(t.feat_w));
    for (std::int32_t v : t.entries) detail::write_i32le(os, v);
  });
}

inline MappingTable load_mapping_table(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open mapping table: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMapMagic, 4) != 0) {
    throw config_error("not an HMAP file: " + path.string());
  }
  if (detail::read_u32le(is) != 1) throw config_error("unsupported HMAP version");
  MappingTable t;
  t.dims.x = detail::read_u32le(is);
  t.dims.y = detail::read_u32le(is);
  t.dims.z = detail::read_u32le(is);
  t.feat_h = detail::read_u32le(is);
  t.feat_w = detail::read_u32le(is);
  if (t.dims.count() == 0 || t.feat_h == 0 || t.feat_w == 0) {
    throw config_error("HMAP header has zero dimension");
  }
  t.entries.resize(2 * t.dims.count());
  for (auto& v : t.entries) v = detail::read_i32le(is);
  for (std::size_t i = 0; i < t.dims.count(); ++i) {
    const std::int32_t u = t.u_at(i), v = t.v_at(i);
    const bool sentinel = (u == MappingTable::kSentinel && v == MappingTable::kSentinel);
    const bool in_range = u >= 0 && v >= 0 && u < static_cast<std::int32_t>(t.feat_w) &&
                          v < static_cast<std::int32_t>(t.feat_h);
    if (!sentinel && !in_range) throw config_error("HMAP entry out of feature range");
  }
  return t;
}

}  // namespace hbev
