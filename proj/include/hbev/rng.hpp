#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "hbev/tensor.hpp"

namespace hbev {

// Standard-normal stream: mt19937_64 (fixed by the standard) driving a
// Box-Muller transform, so a seed pins the exact sample sequence without
// depending on the library's std::normal_distribution implementation.
class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t seed) : engine_(seed) {}

  double next() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    // u1 in (0, 1], u2 in [0, 1)
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  // 53-bit uniform in [0, 1).
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

template <typename T>
void fill_normal(Tensor<T>& t, NormalSampler& rng, double scale = 1.0,
                 double shift = 0.0) {
  for (T& v : t.data()) v = static_cast<T>(shift + scale * rng.next());
}

template <typename T>
Tensor<T> random_normal(std::vector<std::size_t> dims, NormalSampler& rng,
                        double scale = 1.0) {
  Tensor<T> t(std::move(dims));
  fill_normal(t, rng, scale);
  return t;
}

}  // namespace hbev
