#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hbev/ledger.hpp"
#include "hbev/rng.hpp"
#include "hbev/tensor.hpp"

using namespace hbev;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
  const fs::path p = fs::temp_directory_path() / name;
  std::error_code ec;
  fs::remove(p, ec);
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_CASE("tensor basics", "[tensor]") {
  Tensor<double> t({2, 3});
  REQUIRE(t.numel() == 6);
  REQUIRE(t.rank() == 2);
  for (std::size_t i = 0; i < 6; ++i) REQUIRE(t[i] == 0.0);
  t(1, 2) = 5.0;
  REQUIRE(t[5] == 5.0);
  REQUIRE(t.all_finite());

  REQUIRE_THROWS_AS(Tensor<double>({2, 0}), shape_error);
  REQUIRE_THROWS_AS(Tensor<double>({2, 2}, {1.0, 2.0}), shape_error);
  REQUIRE_THROWS_AS(t.reshaped({4}), shape_error);

  const Tensor<double> r = t.reshaped({3, 2});
  REQUIRE(r(2, 1) == 5.0);
}

TEST_CASE("row-major layout, last dim fastest", "[tensor]") {
  Tensor<double> t({2, 2, 2});
  double v = 0;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 2; ++k) t(i, j, k) = v++;
  for (std::size_t f = 0; f < 8; ++f) REQUIRE(t[f] == static_cast<double>(f));
}

TEST_CASE("ledger counters accumulate and clear", "[tensor]") {
  FlopLedger ledger;
  ledger.add(Slot::qk, 10);
  ledger.add(Slot::sv, 3);
  ledger.add(Slot::qk, 5);
  ledger.add(Slot::other, 7);
  REQUIRE(ledger.qk_macs() == 15);
  REQUIRE(ledger.sv_macs() == 3);
  REQUIRE(ledger.other_macs() == 7);
  REQUIRE(ledger.tracked_macs() == 18);
  ledger.clear();
  REQUIRE(ledger.qk_macs() == 0);
  REQUIRE(ledger.tracked_macs() == 0);
}

TEST_CASE("HTEN round trip preserves payload and dims", "[tensor]") {
  NormalSampler rng(7);
  Tensor<double> t = random_normal<double>({3, 4, 2}, rng);
  const fs::path p = temp_file("hbev_rt.hten");
  save_tensor(t, p);

  const Tensor<double> back = load_tensor<double>(p);
  REQUIRE(back.dims() == t.dims());
  for (std::size_t i = 0; i < t.numel(); ++i) REQUIRE(back[i] == t[i]);

  // header layout: magic, version, rank, dims, precision byte
  const std::string bytes = file_bytes(p);
  REQUIRE(bytes.substr(0, 4) == "HTEN");
  REQUIRE(static_cast<unsigned char>(bytes[4]) == 1);  // version LSB
  REQUIRE(static_cast<unsigned char>(bytes[8]) == 3);  // rank LSB
  REQUIRE(static_cast<unsigned char>(bytes[24]) == 8); // precision flag
  REQUIRE(bytes.size() == 4 + 4 + 4 + 3 * 4 + 1 + 24 * 8);
  fs::remove(p);
}

TEST_CASE("HTEN cross-precision load converts", "[tensor]") {
  Tensor<float> t({2, 2}, {1.5f, -2.25f, 0.0f, 8.0f});
  const fs::path p = temp_file("hbev_f32.hten");
  save_tensor(t, p);
  const Tensor<double> up = load_tensor<double>(p);
  REQUIRE(up[0] == 1.5);
  REQUIRE(up[1] == -2.25);
  REQUIRE(up[3] == 8.0);
  fs::remove(p);
}

TEST_CASE("HTEN rejects bad files", "[tensor]") {
  const fs::path p = temp_file("hbev_bad.hten");
  {
    std::ofstream os(p, std::ios::binary);
    os << "NOPE";
  }
  REQUIRE_THROWS_AS(load_tensor<double>(p), config_error);
  REQUIRE_THROWS_AS(load_tensor<double>(temp_file("hbev_missing.hten")), io_error);
  fs::remove(p);
}

TEST_CASE("tensor save is byte-deterministic", "[tensor]") {
  NormalSampler rng(11);
  Tensor<float> t = random_normal<float>({5, 3}, rng);
  const fs::path a = temp_file("hbev_a.hten");
  const fs::path b = temp_file("hbev_b.hten");
  save_tensor(t, a);
  save_tensor(t, b);
  REQUIRE(file_bytes(a) == file_bytes(b));
  fs::remove(a);
  fs::remove(b);
}

TEST_CASE("normal sampler is seed-deterministic", "[tensor]") {
  NormalSampler a(42), b(42), c(43);
  bool saw_difference = false;
  for (int i = 0; i < 64; ++i) {
    const double va = a.next();
    REQUIRE(va == b.next());
    if (va != c.next()) saw_difference = true;
  }
  REQUIRE(saw_difference);
}
