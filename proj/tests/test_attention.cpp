#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "hbev/attention.hpp"
#include "hbev/rng.hpp"

using namespace hbev;

namespace {

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.same_dims(b));
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// flatten (C,X,Y,Z) to tokens (XYZ, C) in (x,y,z) lexicographic order
Tensor<double> flatten_tokens(const Tensor<double>& vox) {
  const Dims3 d = grid_dims(vox);
  const std::size_t c = vox.dim(0);
  Tensor<double> tok({d.count(), c});
  for (std::size_t x = 0; x < d.x; ++x)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t ch = 0; ch < c; ++ch)
          tok((x * d.y + y) * d.z + z, ch) = vox(ch, x, y, z);
  return tok;
}

}  // namespace

TEST_CASE("height partition counts and ordering", "[attention]") {
  NormalSampler rng(1);
  const Tensor<double> vox = random_normal<double>({2, 2, 2, 3}, rng);

  const Tensor<double> seq = height_partition(vox, {1, 1, 3});
  REQUIRE(seq.dims() == std::vector<std::size_t>{4, 3, 2});  // N=4, S=3, C=2

  // tokens within a column come out in ascending height order
  for (std::size_t x = 0; x < 2; ++x)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t z = 0; z < 3; ++z)
        for (std::size_t ch = 0; ch < 2; ++ch)
          REQUIRE(seq(x * 2 + y, z, ch) == vox(ch, x, y, z));
}

TEST_CASE("full-grid spec flattens to one sequence", "[attention]") {
  NormalSampler rng(2);
  const Tensor<double> vox = random_normal<double>({3, 2, 3, 2}, rng);
  const Tensor<double> seq = height_partition(vox, {2, 3, 2});
  REQUIRE(seq.dim(0) == 1);
  REQUIRE(seq.dim(1) == 12);
  const Tensor<double> tok = flatten_tokens(vox);
  for (std::size_t t = 0; t < 12; ++t)
    for (std::size_t ch = 0; ch < 3; ++ch) REQUIRE(seq(0, t, ch) == tok(t, ch));
}

TEST_CASE("partition and reverse are exact inverses", "[attention]") {
  NormalSampler rng(3);
  const Dims3 dims{4, 4, 4};
  const std::vector<std::size_t> divisors = {1, 2, 4};
  for (std::size_t sx : divisors)
    for (std::size_t sy : divisors)
      for (std::size_t sz : divisors) {
        const Tensor<double> vox = random_normal<double>({3, dims.x, dims.y, dims.z}, rng);
        const PartitionSpec spec{sx, sy, sz};
        const Tensor<double> back = height_reverse(height_partition(vox, spec), spec, dims);
        REQUIRE(back.dims() == vox.dims());
        for (std::size_t i = 0; i < vox.numel(); ++i) REQUIRE(back[i] == vox[i]);
      }
}

TEST_CASE("reverse of partitioned reverse is idempotent", "[attention]") {
  NormalSampler rng(4);
  const Dims3 dims{2, 2, 4};
  const PartitionSpec spec{1, 1, 4};
  const Tensor<double> seq = random_normal<double>({4, 4, 3}, rng);
  const Tensor<double> rev = height_reverse(seq, spec, dims);
  const Tensor<double> again = height_reverse(height_partition(rev, spec), spec, dims);
  for (std::size_t i = 0; i < rev.numel(); ++i) REQUIRE(again[i] == rev[i]);
}

TEST_CASE("modifying one sequence token moves exactly one voxel cell", "[attention]") {
  NormalSampler rng(5);
  const Dims3 dims{2, 2, 3};
  const PartitionSpec spec{1, 1, 3};
  const Tensor<double> vox = random_normal<double>({2, 2, 2, 3}, rng);
  Tensor<double> seq = height_partition(vox, spec);
  seq(2, 1, 0) += 50.0;  // column (x=1,y=0), height 1, channel 0
  const Tensor<double> back = height_reverse(seq, spec, dims);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < vox.numel(); ++i)
    if (back[i] != vox[i]) ++changed;
  REQUIRE(changed == 1);
  REQUIRE(back(0, 1, 0, 1) == vox(0, 1, 0, 1) + 50.0);
}

TEST_CASE("partition rejects non-divisor specs", "[attention]") {
  const Tensor<double> vox({1, 4, 4, 4});
  REQUIRE_THROWS_WITH(height_partition(vox, {3, 1, 1}),
                      Catch::Matchers::ContainsSubstring("x axis"));
  REQUIRE_THROWS_WITH(height_partition(vox, {1, 3, 1}),
                      Catch::Matchers::ContainsSubstring("y axis"));
  REQUIRE_THROWS_WITH(height_partition(vox, {1, 1, 3}),
                      Catch::Matchers::ContainsSubstring("z axis"));
  const Tensor<double> seq({8, 8, 1});
  REQUIRE_THROWS_AS(height_reverse(seq, {1, 1, 2}, {4, 4, 4}), shape_error);
}

TEST_CASE("single-token attention returns its value projection", "[attention]") {
  NormalSampler rng(6);
  const LayerParams<double> p = LayerParams<double>::seeded(3, 6, rng);
  const Tensor<double> x = random_normal<double>({1, 3}, rng);
  FlopLedger ledger;
  const Tensor<double> out = vanilla_attention(x, p, ledger);
  const Tensor<double> v = linear(x, p.wv, p.bv, ledger);
  REQUIRE(max_abs_diff(out, v) < 1e-15);
}

TEST_CASE("zero key weights give uniform attention", "[attention]") {
  NormalSampler rng(7);
  LayerParams<double> p = LayerParams<double>::seeded(3, 6, rng);
  for (auto& w : p.wk.data()) w = 0.0;  // keys collapse to the bias row
  const std::size_t n = 5;
  const Tensor<double> x = random_normal<double>({n, 3}, rng);
  FlopLedger ledger;
  const Tensor<double> out = vanilla_attention(x, p, ledger);
  const Tensor<double> v = linear(x, p.wv, p.bv, ledger);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += v(i, ch);
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      REQUIRE(std::abs(out(i, ch) - mean) < 1e-12);
  }
}

TEST_CASE("two-token scalar attention closed form", "[attention]") {
  // C=1, unit weights, zero biases, tokens (0, 1):
  // scores rows are (0,0) and (0,1); second output = sigmoid(1)
  LayerParams<double> p = LayerParams<double>::zeros(1, 1);
  p.wq[0] = p.wk[0] = p.wv[0] = 1.0;
  const Tensor<double> x({2, 1}, {0.0, 1.0});
  FlopLedger ledger;
  const Tensor<double> out = vanilla_attention(x, p, ledger);
  REQUIRE(out[0] == Catch::Approx(0.5).epsilon(1e-14));
  REQUIRE(out[1] == Catch::Approx(0.7310585786300049).epsilon(1e-14));
}

TEST_CASE("attention ledger matches closed forms", "[attention]") {
  NormalSampler rng(8);
  const std::size_t c = 8;
  const LayerParams<double> p = LayerParams<double>::seeded(c, 2 * c, rng);
  const Dims3 dims{4, 4, 2};
  const Tensor<double> vox = random_normal<double>({c, dims.x, dims.y, dims.z}, rng);

  FlopLedger vanilla_ledger;
  vanilla_attention(flatten_tokens(vox), p, vanilla_ledger);
  REQUIRE(vanilla_ledger.tracked_macs() == complexity_vanilla(dims, c));
  REQUIRE(vanilla_ledger.tracked_macs() == 16384);  // 2*(32)^2*8
  REQUIRE(vanilla_ledger.qk_macs() == vanilla_ledger.sv_macs());

  FlopLedger height_ledger;
  const PartitionSpec spec{1, 1, 2};
  height_attention(vox, spec, p, height_ledger);
  REQUIRE(height_ledger.tracked_macs() == complexity_height(dims, spec, c));
  REQUIRE(height_ledger.tracked_macs() == 1024);  // 2*4*1*4*1*2*2*8

  // multi-head splits do not change the tracked totals
  FlopLedger mh_ledger;
  height_attention(vox, spec, p, mh_ledger, 4);
  REQUIRE(mh_ledger.tracked_macs() == complexity_height(dims, spec, c));
}

TEST_CASE("complexity closed forms and ratio identity", "[attention]") {
  REQUIRE(complexity_vanilla({1, 1, 1}, 1) == 2);
  REQUIRE(complexity_vanilla({4, 4, 2}, 8) == 16384);
  REQUIRE(complexity_height({4, 4, 2}, {1, 1, 2}, 8) == 1024);

  const Dims3 dims{4, 4, 2};
  REQUIRE(complexity_height(dims, {4, 4, 2}, 8) == complexity_vanilla(dims, 8));

  const std::vector<std::size_t> dx = {1, 2, 4}, dz = {1, 2};
  for (std::size_t sx : dx)
    for (std::size_t sy : dx)
      for (std::size_t sz : dz) {
        const PartitionSpec spec{sx, sy, sz};
        const std::uint64_t ratio =
            complexity_vanilla(dims, 8) / complexity_height(dims, spec, 8);
        REQUIRE(ratio == dims.count() / spec.tokens());
        REQUIRE(complexity_vanilla(dims, 8) % complexity_height(dims, spec, 8) == 0);
      }

  REQUIRE_THROWS_AS(complexity_height({4, 4, 4}, {3, 1, 1}, 8), shape_error);
}

TEST_CASE("global-group height attention equals vanilla attention", "[attention]") {
  NormalSampler rng(9);
  const std::size_t c = 4;
  const LayerParams<double> p = LayerParams<double>::seeded(c, 4 * c, rng);
  const Dims3 dims{2, 2, 4};
  const Tensor<double> vox = random_normal<double>({c, dims.x, dims.y, dims.z}, rng);

  FlopLedger l1, l2;
  const Tensor<double> ha = height_attention(vox, {dims.x, dims.y, dims.z}, p, l1);
  const Tensor<double> va = vanilla_attention(flatten_tokens(vox), p, l2);

  for (std::size_t x = 0; x < dims.x; ++x)
    for (std::size_t y = 0; y < dims.y; ++y)
      for (std::size_t z = 0; z < dims.z; ++z)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t t = (x * dims.y + y) * dims.z + z;
          REQUIRE(std::abs(ha(ch, x, y, z) - va(t, ch)) < 1e-12);
        }
  REQUIRE(l1.tracked_macs() == l2.tracked_macs());
}

TEST_CASE("column attention is local to its column", "[attention]") {
  NormalSampler rng(10);
  const std::size_t c = 3;
  const LayerParams<double> p = LayerParams<double>::seeded(c, 2 * c, rng);
  const Dims3 dims{3, 2, 4};
  Tensor<double> vox = random_normal<double>({c, dims.x, dims.y, dims.z}, rng);
  FlopLedger ledger;
  const Tensor<double> base = height_attention(vox, {1, 1, dims.z}, p, ledger);

  // perturb every feature in column (2, 1)
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t z = 0; z < dims.z; ++z) vox(ch, 2, 1, z) += 3.0;
  const Tensor<double> bumped = height_attention(vox, {1, 1, dims.z}, p, ledger);

  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t x = 0; x < dims.x; ++x)
      for (std::size_t y = 0; y < dims.y; ++y)
        for (std::size_t z = 0; z < dims.z; ++z) {
          if (x == 2 && y == 1) continue;
          REQUIRE(bumped(ch, x, y, z) == base(ch, x, y, z));
        }
}

TEST_CASE("attention core is permutation equivariant", "[attention]") {
  NormalSampler rng(11);
  const std::size_t n = 6, c = 4;
  const LayerParams<double> p = LayerParams<double>::seeded(c, 4 * c, rng);
  const Tensor<double> x = random_normal<double>({n, c}, rng);
  const std::vector<std::size_t> perm = {4, 2, 0, 5, 1, 3};

  Tensor<double> xp({n, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) xp(i, ch) = x(perm[i], ch);

  FlopLedger ledger;
  const Tensor<double> out = vanilla_attention(x, p, ledger);
  const Tensor<double> outp = vanilla_attention(xp, p, ledger);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      REQUIRE(std::abs(outp(i, ch) - out(perm[i], ch)) < 1e-12);
}

TEST_CASE("transformer block is identity when projections are zeroed", "[attention]") {
  NormalSampler rng(12);
  LayerParams<double> p = LayerParams<double>::seeded(4, 16, rng);
  for (auto& v : p.wo.data()) v = 0.0;
  for (auto& v : p.bo.data()) v = 0.0;
  for (auto& v : p.w2.data()) v = 0.0;
  for (auto& v : p.b2.data()) v = 0.0;
  const Tensor<double> seq = random_normal<double>({4, 2, 4}, rng);
  FlopLedger ledger;
  const Tensor<double> out = transformer_block(seq, p, ledger);
  for (std::size_t i = 0; i < seq.numel(); ++i) REQUIRE(out[i] == seq[i]);
}

TEST_CASE("transformer block equals its stepwise composition", "[attention]") {
  NormalSampler rng(13);
  const std::size_t n = 3, s = 4, c = 4;
  const LayerParams<double> p = LayerParams<double>::seeded(c, 4 * c, rng);
  const Tensor<double> seq = random_normal<double>({n, s, c}, rng);
  FlopLedger l1, l2;
  const Tensor<double> out = transformer_block(seq, p, l1);

  const double eps = kLayerNormEps;
  for (std::size_t g = 0; g < n; ++g) {
    Tensor<double> x({s, c});
    for (std::size_t t = 0; t < s; ++t)
      for (std::size_t ch = 0; ch < c; ++ch) x(t, ch) = seq(g, t, ch);
    const Tensor<double> a =
        linear(vanilla_attention(layer_norm(x, p.ln1_gain, p.ln1_bias, eps), p, l2),
               p.wo, p.bo, l2);
    Tensor<double> y({s, c});
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = x[i] + a[i];
    const Tensor<double> m = mlp_forward(layer_norm(y, p.ln2_gain, p.ln2_bias, eps), p, l2);
    for (std::size_t t = 0; t < s; ++t)
      for (std::size_t ch = 0; ch < c; ++ch)
        REQUIRE(out(g, t, ch) == y(t, ch) + m(t, ch));
  }
}

TEST_CASE("block ledger tracks one height attention per call", "[attention]") {
  NormalSampler rng(14);
  const std::size_t c = 4;
  const LayerParams<double> p = LayerParams<double>::seeded(c, 4 * c, rng);
  const Dims3 dims{2, 3, 4};
  const PartitionSpec spec{1, 1, 4};
  const Tensor<double> vox = random_normal<double>({c, dims.x, dims.y, dims.z}, rng);
  const Tensor<double> seq = height_partition(vox, spec);
  FlopLedger ledger;
  transformer_block(seq, p, ledger);
  REQUIRE(ledger.tracked_macs() == complexity_height(dims, spec, c));
}

TEST_CASE("results do not depend on the thread count", "[attention]") {
  NormalSampler rng(15);
  const std::size_t c = 4;
  const LayerParams<double> p = LayerParams<double>::seeded(c, 4 * c, rng);
  const Dims3 dims{4, 4, 4};
  const PartitionSpec spec{1, 1, 4};
  const Tensor<double> vox = random_normal<double>({c, dims.x, dims.y, dims.z}, rng);

  FlopLedger l1;
  const Tensor<double> serial = height_attention(vox, spec, p, l1);
  threading::set_threads(8);
  FlopLedger l2;
  const Tensor<double> parallel = height_attention(vox, spec, p, l2);
  threading::set_threads(1);

  for (std::size_t i = 0; i < serial.numel(); ++i) REQUIRE(serial[i] == parallel[i]);
  REQUIRE(l1.qk_macs() == l2.qk_macs());
  REQUIRE(l1.sv_macs() == l2.sv_macs());
  REQUIRE(l1.other_macs() == l2.other_macs());
}

TEST_CASE("position embedding adds per-height rows when enabled", "[attention]") {
  NormalSampler rng(16);
  const Dims3 dims{2, 2, 3};
  const PartitionSpec spec{1, 1, 3};
  const std::size_t c = 2;
  const Tensor<double> vox = random_normal<double>({c, dims.x, dims.y, dims.z}, rng);
  const Tensor<double> emb = random_normal<double>({dims.z, c}, rng);
  const Tensor<double> seq = height_partition(vox, spec);
  const Tensor<double> with = add_height_pos_embedding(seq, spec, dims, emb);
  for (std::size_t g = 0; g < seq.dim(0); ++g)
    for (std::size_t z = 0; z < dims.z; ++z)
      for (std::size_t ch = 0; ch < c; ++ch)
        REQUIRE(with(g, z, ch) == seq(g, z, ch) + emb(z, ch));
}
