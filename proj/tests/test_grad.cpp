#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hbev/grad.hpp"
#include "hbev/rng.hpp"

using namespace hbev;

namespace {

double rel_err(double a, double f) {
  return std::abs(a - f) / std::max({1.0, std::abs(a), std::abs(f)});
}

double max_rel_err(const Tensor<double>& analytic, const Tensor<double>& fd) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.numel(); ++i)
    worst = std::max(worst, rel_err(analytic[i], fd[i]));
  return worst;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

constexpr double kH = 1e-5;
constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("finite differences on quadratic are exact-ish", "[grad]") {
  const Tensor<double> x({2}, {1.0, 2.0});
  auto f = [](const Tensor<double>& t) {
    double s = 0;
    for (std::size_t i = 0; i < t.numel(); ++i) s += t[i] * t[i];
    return s;
  };
  const Tensor<double> g = finite_diff_grad(f, x, kH);
  REQUIRE(std::abs(g[0] - 2.0) < 1e-6);
  REQUIRE(std::abs(g[1] - 4.0) < 1e-6);
}

TEST_CASE("sum of softmax rows has vanishing gradient", "[grad]") {
  NormalSampler rng(2);
  const Tensor<double> x = random_normal<double>({3, 5}, rng);
  auto f = [](const Tensor<double>& t) {
    const Tensor<double> y = softmax_rows(t);
    double s = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y[i];
    return s;
  };
  const Tensor<double> g = finite_diff_grad(f, x, kH);
  for (std::size_t i = 0; i < g.numel(); ++i) REQUIRE(std::abs(g[i]) < 1e-6);
}

TEST_CASE("finite_diff_grad rejects bad h and non-finite f", "[grad]") {
  const Tensor<double> x({1}, {1.0});
  auto f = [](const Tensor<double>&) { return 1.0; };
  REQUIRE_THROWS_AS(finite_diff_grad(f, x, 0.0), shape_error);
  auto nan_f = [](const Tensor<double>&) { return std::nan(""); };
  REQUIRE_THROWS(finite_diff_grad(nan_f, x, kH));
}

TEST_CASE("softmax backward matches finite differences", "[grad]") {
  NormalSampler rng(31);
  const Tensor<double> x = random_normal<double>({4, 4}, rng);
  const Tensor<double> probe = random_normal<double>({4, 4}, rng);
  auto f = [&](const Tensor<double>& t) { return dot(softmax_rows(t), probe); };
  const Tensor<double> analytic = softmax_rows_backward(softmax_rows(x), probe);
  REQUIRE(max_rel_err(analytic, finite_diff_grad(f, x, kH)) < kTol);
}

TEST_CASE("layer_norm backward matches finite differences", "[grad]") {
  NormalSampler rng(32);
  const std::size_t c = 6;
  Tensor<double> gain = random_normal<double>({c}, rng, 0.2);
  for (auto& v : gain.data()) v += 1.0;
  const Tensor<double> x = random_normal<double>({3, c}, rng, 2.0);
  const Tensor<double> probe = random_normal<double>({3, c}, rng);
  const double eps = 1e-5;
  Tensor<double> bias({c});
  auto f = [&](const Tensor<double>& t) {
    return dot(layer_norm(t, gain, bias, eps), probe);
  };
  const Tensor<double> analytic = layer_norm_backward(x, gain, eps, probe);
  REQUIRE(max_rel_err(analytic, finite_diff_grad(f, x, kH)) < kTol);
}

TEST_CASE("gelu backward matches finite differences", "[grad]") {
  NormalSampler rng(33);
  const Tensor<double> x = random_normal<double>({2, 7}, rng, 1.5);
  const Tensor<double> probe = random_normal<double>({2, 7}, rng);
  auto f = [&](const Tensor<double>& t) { return dot(gelu(t), probe); };
  const Tensor<double> analytic = gelu_backward(x, probe);
  REQUIRE(max_rel_err(analytic, finite_diff_grad(f, x, kH)) < kTol);
}

TEST_CASE("mlp backward matches finite differences", "[grad]") {
  NormalSampler rng(34);
  const std::size_t c = 4;
  const LayerParams<double> p = LayerParams<double>::seeded(c, 4 * c, rng);
  const Tensor<double> x = random_normal<double>({3, c}, rng);
  const Tensor<double> probe = random_normal<double>({3, c}, rng);
  FlopLedger scratch;
  auto f = [&](const Tensor<double>& t) {
    FlopLedger l;
    return dot(mlp_forward(t, p, l), probe);
  };
  const Tensor<double> analytic = mlp_backward_input(x, p, probe);
  REQUIRE(max_rel_err(analytic, finite_diff_grad(f, x, kH)) < kTol);
}

TEST_CASE("attention backward matches finite differences", "[grad]") {
  NormalSampler rng(35);
  const std::size_t n = 5, c = 4;
  const LayerParams<double> p = LayerParams<double>::seeded(c, 4 * c, rng);
  const Tensor<double> x = random_normal<double>({n, c}, rng);
  const Tensor<double> probe = random_normal<double>({n, c}, rng);
  auto f = [&](const Tensor<double>& t) {
    FlopLedger l;
    return dot(vanilla_attention(t, p, l), probe);
  };
  const Tensor<double> analytic = attention_backward_input(x, p, probe);
  REQUIRE(max_rel_err(analytic, finite_diff_grad(f, x, kH)) < kTol);
}

TEST_CASE("multi-head attention backward matches finite differences", "[grad]") {
  NormalSampler rng(36);
  const std::size_t n = 4, c = 6, heads = 2;
  const LayerParams<double> p = LayerParams<double>::seeded(c, 2 * c, rng);
  const Tensor<double> x = random_normal<double>({n, c}, rng);
  const Tensor<double> probe = random_normal<double>({n, c}, rng);
  auto f = [&](const Tensor<double>& t) {
    FlopLedger l;
    return dot(vanilla_attention(t, p, l, heads), probe);
  };
  const Tensor<double> analytic = attention_backward_input(x, p, probe, heads);
  REQUIRE(max_rel_err(analytic, finite_diff_grad(f, x, kH)) < kTol);
}

TEST_CASE("transformer block backward matches finite differences", "[grad]") {
  NormalSampler rng(37);
  const std::size_t n = 2, s = 3, c = 4;
  const LayerParams<double> p = LayerParams<double>::seeded(c, 4 * c, rng);
  const Tensor<double> x = random_normal<double>({n, s, c}, rng);
  const Tensor<double> probe = random_normal<double>({n, s, c}, rng);
  auto f = [&](const Tensor<double>& t) {
    FlopLedger l;
    return dot(transformer_block(t, p, l), probe);
  };
  const Tensor<double> analytic = block_backward_input(x, p, probe);
  REQUIRE(max_rel_err(analytic, finite_diff_grad(f, x, kH)) < kTol);
}
