#pragma once

#include <atomic>
#include <cstdint>

namespace hbev {

// Destination counter for a matrix product's multiply-accumulates. qk and sv
// are the two tracked attention products; everything else (Q/K/V/output
// projections, MLP layers) goes to other and is excluded from complexity
// comparisons.
enum class Slot { qk, sv, other };

class FlopLedger {
 public:
  FlopLedger() = default;

  FlopLedger(const FlopLedger& o)
      : qk_(o.qk_.load()), sv_(o.sv_.load()), other_(o.other_.load()) {}

  FlopLedger& operator=(const FlopLedger& o) {
    qk_.store(o.qk_.load());
    sv_.store(o.sv_.load());
    other_.store(o.other_.load());
    return *this;
  }

  void add(Slot slot, std::uint64_t macs) {
    switch (slot) {
      case Slot::qk: qk_.fetch_add(macs, std::memory_order_relaxed); break;
      case Slot::sv: sv_.fetch_add(macs, std::memory_order_relaxed); break;
      case Slot::other: other_.fetch_add(macs, std::memory_order_relaxed); break;
    }
  }

  std::uint64_t qk_macs() const { return qk_.load(); }
  std::uint64_t sv_macs() const { return sv_.load(); }
  std::uint64_t other_macs() const { return other_.load(); }

  // Sum of the two tracked attention products.
  std::uint64_t tracked_macs() const { return qk_macs() + sv_macs(); }

  void clear() {
    qk_.store(0);
    sv_.store(0);
    other_.store(0);
  }

 private:
  std::atomic<std::uint64_t> qk_{0};
  std::atomic<std::uint64_t> sv_{0};
  std::atomic<std::uint64_t> other_{0};
};

}  // namespace hbev
