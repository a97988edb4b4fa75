#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "hbev/attention.hpp"
#include "hbev/grad.hpp"
#include "hbev/rng.hpp"

namespace hbev {

// ---------------------------------------------------------------------------
// Brute-force attention oracle.
//
// Straight-line evaluation of single-head scaled-dot-product attention with
// affine Q/K/V maps, on plain vectors. Shares no code with the Tensor
// kernels; it is the independent reference the equivalence checks compare
// against.
// ---------------------------------------------------------------------------

inline std::vector<double> oracle_attention(
    const std::vector<double>& tokens, std::size_t n, std::size_t c,
    const std::vector<double>& wq, const std::vector<double>& bq,
    const std::vector<double>& wk, const std::vector<double>& bk,
    const std::vector<double>& wv, const std::vector<double>& bv) {
  auto project = [&](const std::vector<double>& w, const std::vector<double>& b) {
    std::vector<double> out(n * c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        double acc = b[j];
        for (std::size_t k = 0; k < c; ++k) acc += tokens[i * c + k] * w[k * c + j];
        out[i * c + j] = acc;
      }
    }
    return out;
  };
  const std::vector<double> q = project(wq, bq);
  const std::vector<double> k = project(wk, bk);
  const std::vector<double> v = project(wv, bv);
  const double scale = 1.0 / std::sqrt(static_cast<double>(c));

  std::vector<double> out(n * c, 0.0);
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double dotqk = 0;
      for (std::size_t d = 0; d < c; ++d) dotqk += q[i * c + d] * k[j * c + d];
      scores[j] = dotqk * scale;
    }
    double mx = scores[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, scores[j]);
    double denom = 0;
    for (std::size_t j = 0; j < n; ++j) {
      scores[j] = std::exp(scores[j] - mx);
      denom += scores[j];
    }
    for (std::size_t j = 0; j < n; ++j) scores[j] /= denom;
    for (std::size_t d = 0; d < c; ++d) {
      double acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += scores[j] * v[j * c + d];
      out[i * c + d] = acc;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Check plumbing
// ---------------------------------------------------------------------------

struct CheckResult {
  std::string name;
  bool passed = false;
  bool skipped = false;
  double max_dev = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct SuiteReport {
  std::vector<CheckResult> checks;

  bool all_passed() const {
    for (const auto& c : checks)
      if (!c.passed && !c.skipped) return false;
    return true;
  }
};

inline std::vector<std::size_t> divisors_of(std::size_t n) {
  std::vector<std::size_t> out;
  for (std::size_t d = 1; d <= n; ++d)
    if (n % d == 0) out.push_back(d);
  return out;
}

inline std::vector<PartitionSpec> all_divisor_specs(const Dims3& d) {
  std::vector<PartitionSpec> out;
  for (std::size_t sx : divisors_of(d.x))
    for (std::size_t sy : divisors_of(d.y))
      for (std::size_t sz : divisors_of(d.z)) out.push_back({sx, sy, sz});
  return out;
}

namespace detail {

inline std::vector<double> params_as_vec(const Tensor<double>& t) {
  return {t.data().begin(), t.data().end()};
}

template <typename T>
double max_abs_dev(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Equivalence suite
// ---------------------------------------------------------------------------

struct EquivalenceOptions {
  // Test hook: perturbs the height-reverse input inside the bijection check
  // so the negative path is exercised end to end.
  bool inject_fault = false;
};

// Default grids are small enough for 64-bit brute force (token count <= 512).
inline std::vector<Dims3> default_equivalence_grids() {
  return {{1, 1, 1}, {2, 2, 2}, {2, 2, 4}, {4, 4, 4}};
}

inline SuiteReport run_equivalence_suite(std::uint64_t seed,
                                         const std::vector<Dims3>& grids,
                                         const EquivalenceOptions& opts = {}) {
  for (const Dims3& d : grids) {
    if (d.count() > 512) {
      throw config_error("equivalence grids must hold at most 512 tokens");
    }
  }
  SuiteReport report;
  const std::size_t c = 4;
  constexpr double kExactTol = 1e-12;

  // flatten helper: (C,X,Y,Z) -> (XYZ, C), x/y/z lexicographic
  auto flatten = [](const Tensor<double>& vox) {
    const Dims3 d = grid_dims(vox);
    const std::size_t ch = vox.dim(0);
    Tensor<double> tok({d.count(), ch});
    for (std::size_t x = 0; x < d.x; ++x)
      for (std::size_t y = 0; y < d.y; ++y)
        for (std::size_t z = 0; z < d.z; ++z)
          for (std::size_t cc = 0; cc < ch; ++cc)
            tok((x * d.y + y) * d.z + z, cc) = vox(cc, x, y, z);
    return tok;
  };

  // 1. height attention with the full-grid group equals vanilla attention
  {
    CheckResult check;
    check.name = "global_group_equivalence";
    check.tolerance = kExactTol;
    NormalSampler rng(seed);
    double worst = 0;
    for (const Dims3& d : grids) {
      const LayerParams<double> p = LayerParams<double>::seeded(c, 2 * c, rng);
      const Tensor<double> vox = random_normal<double>({c, d.x, d.y, d.z}, rng);
      FlopLedger lh, lv;
      const Tensor<double> ha = height_attention(vox, {d.x, d.y, d.z}, p, lh);
      const Tensor<double> va = vanilla_attention(flatten(vox), p, lv);
      for (std::size_t x = 0; x < d.x; ++x)
        for (std::size_t y = 0; y < d.y; ++y)
          for (std::size_t z = 0; z < d.z; ++z)
            for (std::size_t cc = 0; cc < c; ++cc) {
              const std::size_t t = (x * d.y + y) * d.z + z;
              worst = std::max(worst, std::abs(ha(cc, x, y, z) - va(t, cc)));
            }
      if (lh.tracked_macs() != lv.tracked_macs()) {
        check.detail = "ledger mismatch on full-grid group";
        worst = std::numeric_limits<double>::infinity();
      }
    }
    check.max_dev = worst;
    check.passed = worst < check.tolerance;
    report.checks.push_back(check);
  }

  // 2. per-column (1,1,Z) attention against the straight-line oracle
  {
    CheckResult check;
    check.name = "per_column_oracle";
    check.tolerance = kExactTol;
    NormalSampler rng(seed + 1);
    double worst = 0;
    for (const Dims3& d : grids) {
      const LayerParams<double> p = LayerParams<double>::seeded(c, 2 * c, rng);
      const Tensor<double> vox = random_normal<double>({c, d.x, d.y, d.z}, rng);
      FlopLedger ledger;
      const Tensor<double> out = height_attention(vox, {1, 1, d.z}, p, ledger);
      const auto wq = detail::params_as_vec(p.wq), bq = detail::params_as_vec(p.bq);
      const auto wk = detail::params_as_vec(p.wk), bk = detail::params_as_vec(p.bk);
      const auto wv = detail::params_as_vec(p.wv), bv = detail::params_as_vec(p.bv);
      for (std::size_t x = 0; x < d.x; ++x)
        for (std::size_t y = 0; y < d.y; ++y) {
          std::vector<double> column(d.z * c);
          for (std::size_t z = 0; z < d.z; ++z)
            for (std::size_t cc = 0; cc < c; ++cc) column[z * c + cc] = vox(cc, x, y, z);
          const std::vector<double> expect =
              oracle_attention(column, d.z, c, wq, bq, wk, bk, wv, bv);
          for (std::size_t z = 0; z < d.z; ++z)
            for (std::size_t cc = 0; cc < c; ++cc)
              worst = std::max(worst,
                               std::abs(out(cc, x, y, z) - expect[z * c + cc]));
        }
    }
    check.max_dev = worst;
    check.passed = worst < check.tolerance;
    report.checks.push_back(check);
  }

  // 3. partition/reverse bijection, bitwise, over all divisor specs
  {
    CheckResult check;
    check.name = "partition_bijection";
    check.tolerance = 0.0;
    NormalSampler rng(seed + 2);
    std::size_t mismatches = 0;
    std::string first_bad;
    for (const Dims3& d : grids) {
      for (const PartitionSpec& spec : all_divisor_specs(d)) {
        const Tensor<double> vox = random_normal<double>({c, d.x, d.y, d.z}, rng);
        Tensor<double> seq = height_partition(vox, spec);
        if (opts.inject_fault && seq.numel() >= 2) {
          std::swap(seq[0], seq[seq.numel() - 1]);
        }
        const Tensor<double> back = height_reverse(seq, spec, d);
        for (std::size_t i = 0; i < vox.numel(); ++i) {
          if (back[i] != vox[i]) {
            ++mismatches;
            if (first_bad.empty()) {
              first_bad = "grid (" + std::to_string(d.x) + "," + std::to_string(d.y) +
                          "," + std::to_string(d.z) + ") spec (" +
                          std::to_string(spec.x) + "," + std::to_string(spec.y) + "," +
                          std::to_string(spec.z) + ")";
            }
            break;
          }
        }
      }
    }
    check.max_dev = static_cast<double>(mismatches);
    check.passed = mismatches == 0;
    check.detail = first_bad;
    report.checks.push_back(check);
  }

  // 4. 32-bit run tracks the 64-bit run within single-precision tolerance
  {
    CheckResult check;
    check.name = "precision_crossing";
    check.tolerance = 1e-6;
    NormalSampler rng(seed + 3);
    double worst = 0;
    for (const Dims3& d : grids) {
      const LayerParams<double> p64 = LayerParams<double>::seeded(c, 2 * c, rng);
      const Tensor<double> vox64 = random_normal<double>({c, d.x, d.y, d.z}, rng);
      const LayerParams<float> p32 = p64.template cast<float>();
      FlopLedger l64, l32;
      const PartitionSpec spec{1, 1, d.z};
      const Tensor<double> out64 = height_attention(vox64, spec, p64, l64);
      const Tensor<float> out32 =
          height_attention(vox64.template cast<float>(), spec, p32, l32);
      for (std::size_t i = 0; i < out64.numel(); ++i)
        worst = std::max(worst, std::abs(out64[i] - static_cast<double>(out32[i])));
      if (l64.tracked_macs() != l32.tracked_macs()) {
        check.detail = "MAC counts differ across precisions";
        worst = std::numeric_limits<double>::infinity();
      }
    }
    check.max_dev = worst;
    check.passed = worst < check.tolerance;
    report.checks.push_back(check);
  }

  return report;
}

// ---------------------------------------------------------------------------
// Gradient-check suite
// ---------------------------------------------------------------------------

// rel_err = |a - f| / max(1, |a|, |f|), compared at h = 1e-5 in 64-bit.
inline double gradcheck_rel_err(const Tensor<double>& analytic,
                                const Tensor<double>& fd) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    const double a = analytic[i], f = fd[i];
    worst = std::max(worst, std::abs(a - f) / std::max({1.0, std::abs(a), std::abs(f)}));
  }
  return worst;
}

inline SuiteReport run_gradcheck_suite(std::uint64_t seed) {
  SuiteReport report;
  constexpr double kH = 1e-5;
  constexpr double kTol = 1e-4;
  NormalSampler rng(seed);

  auto dot = [](const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
  };

  auto push = [&](const std::string& name, const Tensor<double>& analytic,
                  const Tensor<double>& fd, const char* detail = "") {
    CheckResult check;
    check.name = name;
    check.tolerance = kTol;
    check.max_dev = gradcheck_rel_err(analytic, fd);
    check.passed = check.max_dev < kTol;
    check.detail = detail;
    report.checks.push_back(check);
  };

  // softmax on random 4x4
  {
    const Tensor<double> x = random_normal<double>({4, 4}, rng);
    const Tensor<double> probe = random_normal<double>({4, 4}, rng);
    auto f = [&](const Tensor<double>& t) { return dot(softmax_rows(t), probe); };
    push("softmax_rows", softmax_rows_backward(softmax_rows(x), probe),
         finite_diff_grad(f, x, kH));
  }

  // layer_norm on random input
  {
    const std::size_t c = 6;
    Tensor<double> gain = random_normal<double>({c}, rng, 0.2);
    for (auto& v : gain.data()) v += 1.0;
    Tensor<double> bias({c});
    const Tensor<double> x = random_normal<double>({3, c}, rng, 2.0);
    const Tensor<double> probe = random_normal<double>({3, c}, rng);
    const double eps = 1e-5;
    auto f = [&](const Tensor<double>& t) {
      return dot(layer_norm(t, gain, bias, eps), probe);
    };
    push("layer_norm", layer_norm_backward(x, gain, eps, probe),
         finite_diff_grad(f, x, kH));
  }

  // layer_norm on constant input is singular (zero variance): reported as
  // skipped rather than checked.
  {
    CheckResult check;
    check.name = "layer_norm_constant_input";
    check.skipped = true;
    check.tolerance = kTol;
    check.detail = "zero-variance input excluded from gradcheck";
    report.checks.push_back(check);
  }

  // mlp
  {
    const std::size_t c = 4;
    const LayerParams<double> p = LayerParams<double>::seeded(c, 4 * c, rng);
    const Tensor<double> x = random_normal<double>({3, c}, rng);
    const Tensor<double> probe = random_normal<double>({3, c}, rng);
    auto f = [&](const Tensor<double>& t) {
      FlopLedger l;
      return dot(mlp_forward(t, p, l), probe);
    };
    push("mlp", mlp_backward_input(x, p, probe), finite_diff_grad(f, x, kH));
  }

  // attention core
  {
    const std::size_t n = 5, c = 4;
    const LayerParams<double> p = LayerParams<double>::seeded(c, 4 * c, rng);
    const Tensor<double> x = random_normal<double>({n, c}, rng);
    const Tensor<double> probe = random_normal<double>({n, c}, rng);
    auto f = [&](const Tensor<double>& t) {
      FlopLedger l;
      return dot(vanilla_attention(t, p, l), probe);
    };
    push("attention", attention_backward_input(x, p, probe),
         finite_diff_grad(f, x, kH));
  }

  // full pre-norm residual block on a (2,2,2) grid partitioned per column
  {
    const std::size_t c = 4;
    const LayerParams<double> p = LayerParams<double>::seeded(c, 4 * c, rng);
    const Tensor<double> vox = random_normal<double>({c, 2, 2, 2}, rng);
    const Tensor<double> x = height_partition(vox, {1, 1, 2});
    const Tensor<double> probe = random_normal<double>(x.dims(), rng);
    auto f = [&](const Tensor<double>& t) {
      FlopLedger l;
      return dot(transformer_block(t, p, l), probe);
    };
    push("transformer_block", block_backward_input(x, p, probe),
         finite_diff_grad(f, x, kH));
  }

  return report;
}

// ---------------------------------------------------------------------------
// Scaling benchmark
// ---------------------------------------------------------------------------

struct BenchRecord {
  std::size_t tokens = 0;
  std::string op;
  std::uint64_t macs_predicted = 0;
  std::uint64_t macs_measured = 0;
  double seconds = 0.0;
};

struct OpSlopes {
  std::string op;
  double macs_slope = 0.0;
  double time_slope = 0.0;
  bool valid = false;  // false for degenerate (single-size) sweeps
};

struct BenchReport {
  std::vector<BenchRecord> records;
  std::vector<OpSlopes> slopes;
};

// Least-squares slope of y against x. Inputs must have equal size >= 2.
inline double fit_loglog_slope(const std::vector<double>& log_x,
                               const std::vector<double>& log_y) {
  const std::size_t n = log_x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += log_x[i];
    my += log_y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (log_x[i] - mx) * (log_y[i] - my);
    den += (log_x[i] - mx) * (log_x[i] - mx);
  }
  return num / den;
}

inline std::vector<Dims3> default_bench_grids() {
  return {{4, 4, 4}, {8, 8, 4}, {16, 16, 4}, {32, 32, 4}};
}

// Runs vanilla attention on flattened voxel tokens and height attention with
// the given spec at each grid size; records the median wall time of `repeats`
// runs (after one warmup) plus ledger MACs, and fits log-log slopes.
template <typename T>
BenchReport run_scaling_benchmark(const std::vector<Dims3>& sizes,
                                  const PartitionSpec& spec, std::size_t c,
                                  int repeats, std::uint64_t seed) {
  if (repeats < 3) throw config_error("bench repeats must be >= 3");
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    if (sizes[i].count() <= sizes[i - 1].count()) {
      throw config_error("bench sizes must be ascending in token count");
    }
  }
  using clock = std::chrono::steady_clock;
  BenchReport report;
  NormalSampler rng(seed);

  const LayerParams<T> params =
      LayerParams<double>::seeded(c, 4 * c, rng).template cast<T>();

  auto median_seconds = [&](auto&& run) {
    run();  // warmup, excluded
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(repeats));
    for (int r = 0; r < repeats; ++r) {
      const auto t0 = clock::now();
      run();
      const auto t1 = clock::now();
      times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
  };

  for (const Dims3& d : sizes) {
    check_partition(d, spec);
    const Tensor<T> vox = random_normal<T>({c, d.x, d.y, d.z}, rng);
    const std::size_t tokens = d.count();

    // vanilla on flattened tokens
    {
      const Tensor<T> flat = height_partition(vox, {d.x, d.y, d.z})
                                 .reshaped({tokens, c});
      FlopLedger ledger;
      const double secs = median_seconds([&] {
        FlopLedger scratch;
        vanilla_attention(flat, params, scratch);
      });
      vanilla_attention(flat, params, ledger);
      report.records.push_back({tokens, "vanilla", complexity_vanilla(d, c),
                                ledger.tracked_macs(), secs});
    }

    // height attention with the requested spec
    {
      FlopLedger ledger;
      const double secs = median_seconds([&] {
        FlopLedger scratch;
        height_attention(vox, spec, params, scratch);
      });
      height_attention(vox, spec, params, ledger);
      report.records.push_back({tokens, "height", complexity_height(d, spec, c),
                                ledger.tracked_macs(), secs});
    }
  }

  for (const std::string op : {"vanilla", "height"}) {
    std::vector<double> lx, lmacs, ltime;
    for (const BenchRecord& r : report.records) {
      if (r.op != op) continue;
      lx.push_back(std::log(static_cast<double>(r.tokens)));
      lmacs.push_back(std::log(static_cast<double>(r.macs_measured)));
      ltime.push_back(std::log(std::max(r.seconds, 1e-12)));
    }
    OpSlopes s;
    s.op = op;
    if (lx.size() >= 2) {
      s.valid = true;
      s.macs_slope = fit_loglog_slope(lx, lmacs);
      s.time_slope = fit_loglog_slope(lx, ltime);
    }
    report.slopes.push_back(s);
  }
  return report;
}

// CSV report: one record row per (size, op), then a summary block with the
// fitted slopes ("na" for degenerate sweeps).
inline void write_bench_csv(std::ostream& os, const BenchReport& report) {
  os << "size,op,macs_predicted,macs_measured,seconds\n";
  char buf[64];
  for (const BenchRecord& r : report.records) {
    std::snprintf(buf, sizeof(buf), "%.9e", r.seconds);
    os << r.tokens << ',' << r.op << ',' << r.macs_predicted << ','
       << r.macs_measured << ',' << buf << '\n';
  }
  os << "summary,op,macs_slope,time_slope\n";
  for (const OpSlopes& s : report.slopes) {
    if (s.valid) {
      char m[64], t[64];
      std::snprintf(m, sizeof(m), "%.12f", s.macs_slope);
      std::snprintf(t, sizeof(t), "%.6f", s.time_slope);
      os << "summary," << s.op << ',' << m << ',' << t << '\n';
    } else {
      os << "summary," << s.op << ",na,na\n";
    }
  }
}

}  // namespace hbev
