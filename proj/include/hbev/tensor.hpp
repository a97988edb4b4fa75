#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "hbev/common.hpp"

namespace hbev {

// Dense row-major tensor (last dimension fastest). T is float for benchmark
// runs and double for verification runs.
template <typename T>
class Tensor {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);

 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> dims)
      : dims_(std::move(dims)), data_(checked_numel(dims_), T(0)) {}

  Tensor(std::vector<std::size_t> dims, std::vector<T> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    if (data_.size() != checked_numel(dims_)) {
      throw shape_error("tensor data length does not match dims");
    }
  }

  std::size_t rank() const { return dims_.size(); }
  std::size_t numel() const { return data_.size(); }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const {
    return data_[i * dims_[1] + j];
  }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }
  T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k,
                      std::size_t l) const {
    return data_[((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l];
  }

  // Same data reinterpreted under new dims; element count must match.
  Tensor reshaped(std::vector<std::size_t> new_dims) const {
    if (checked_numel(new_dims) != numel()) {
      throw shape_error("reshape changes element count");
    }
    return Tensor(std::move(new_dims), data_);
  }

  bool same_dims(const Tensor& o) const { return dims_ == o.dims_; }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(dims_, std::move(out));
  }

 private:
  static std::size_t checked_numel(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) {
      if (d == 0) throw shape_error("tensor dims must be positive");
      n *= d;
    }
    return n;
  }

  std::vector<std::size_t> dims_;
  std::vector<T> data_;
};

namespace detail {

inline void write_u32le(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v & 0xff),
      static_cast<unsigned char>((v >> 8) & 0xff),
      static_cast<unsigned char>((v >> 16) & 0xff),
      static_cast<unsigned char>((v >> 24) & 0xff),
  };
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64le(std::ostream& os, std::uint64_t v) {
  write_u32le(os, static_cast<std::uint32_t>(v & 0xffffffffu));
  write_u32le(os, static_cast<std::uint32_t>(v >> 32));
}

inline void write_i32le(std::ostream& os, std::int32_t v) {
  write_u32le(os, static_cast<std::uint32_t>(v));
}

inline std::uint32_t read_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw io_error("unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64le(std::istream& is) {
  const std::uint64_t lo = read_u32le(is);
  const std::uint64_t hi = read_u32le(is);
  return lo | (hi << 32);
}

inline std::int32_t read_i32le(std::istream& is) {
  return static_cast<std::int32_t>(read_u32le(is));
}

// Writes to <path>.tmp and renames into place so readers never observe a
// partially written file.
template <typename WriteFn>
void atomic_write_file(const std::filesystem::path& path, WriteFn&& fn) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open for writing: " + tmp.string());
    fn(os);
    os.flush();
    if (!os) throw io_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

// "HTEN" tensor file: magic, u32 version=1, u32 rank, rank x u32 dims,
// u8 precision (4 or 8), little-endian IEEE-754 payload.
inline constexpr char kTensorMagic[4] = {'H', 'T', 'E', 'N'};

template <typename T>
void save_tensor(const Tensor<T>& t, const std::filesystem::path& path) {
  detail::atomic_write_file(path, [&](std::ostream& os) {
    os.write(kTensorMagic, 4);
    detail::write_u32le(os, 1);
    detail::write_u32le(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.dims()) {
      if (d > std::numeric_limits<std::uint32_t>::max()) {
        throw io_error("tensor dim exceeds u32");
      }
      detail::write_u32le(os, static_cast<std::uint32_t>(d));
    }
    const unsigned char prec = sizeof(T);
    os.write(reinterpret_cast<const char*>(&prec), 1);
    for (T v : t.data()) {
      if constexpr (sizeof(T) == 4) {
        detail::write_u32le(os, std::bit_cast<std::uint32_t>(v));
      } else {
        detail::write_u64le(os, std::bit_cast<std::uint64_t>(v));
      }
    }
  });
}

// Loads an HTEN file; a payload of the other precision is converted to T.
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open tensor file: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw config_error("not an HTEN file: " + path.string());
  }
  const std::uint32_t version = detail::read_u32le(is);
  if (version != 1) throw config_error("unsupported HTEN version");
  const std::uint32_t rank = detail::read_u32le(is);
  if (rank > 8) throw config_error("HTEN rank out of range");
  std::vector<std::size_t> dims(rank);
  for (auto& d : dims) d = detail::read_u32le(is);
  unsigned char prec = 0;
  is.read(reinterpret_cast<char*>(&prec), 1);
  if (!is || (prec != 4 && prec != 8)) throw config_error("bad HTEN precision flag");
  std::size_t n = 1;
  for (std::size_t d : dims) {
    if (d == 0) throw config_error("HTEN dim is zero");
    n *= d;
  }
  std::vector<T> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (prec == 4) {
      data[i] = static_cast<T>(std::bit_cast<float>(detail::read_u32le(is)));
    } else {
      data[i] = static_cast<T>(std::bit_cast<double>(detail::read_u64le(is)));
    }
  }
  return Tensor<T>(std::move(dims), std::move(data));
}

}  // namespace hbev
