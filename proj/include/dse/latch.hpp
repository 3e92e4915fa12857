#pragma once

// Reader-biased shared/exclusive latch protecting action execution.
//
// Actions take the shared side on a striped per-thread counter so concurrent
// actions never touch the same cache line; Persist and Restore take the
// exclusive side. The exclusive path raises a gate, then waits for every
// stripe to drain, so the shared fast path is two uncontended atomic RMWs
// plus one load. Writers are expected to be rare (one per commit period), so
// readers spin while the gate is up; the exclusive section is a bounded
// in-memory snapshot.

#include <atomic>
#include <cstdint>
#include <mutex>
#include <thread>

namespace dse {

class ActionLatch {
 public:
  static constexpr std::uint32_t kSlots = 32;

  std::uint32_t enter_shared() {
    std::uint32_t slot = this_thread_slot();
    for (;;) {
      slots_[slot].readers.fetch_add(1, std::memory_order_acquire);
      if (gate_.load(std::memory_order_acquire) == 0) return slot;
      slots_[slot].readers.fetch_sub(1, std::memory_order_release);
      while (gate_.load(std::memory_order_acquire) != 0) std::this_thread::yield();
    }
  }

  void exit_shared(std::uint32_t slot) {
    slots_[slot].readers.fetch_sub(1, std::memory_order_release);
  }

  void enter_exclusive() {
    writer_mu_.lock();
    gate_.store(1, std::memory_order_seq_cst);
    for (auto& s : slots_)
      while (s.readers.load(std::memory_order_acquire) != 0) std::this_thread::yield();
  }

  void exit_exclusive() {
    gate_.store(0, std::memory_order_release);
    writer_mu_.unlock();
  }

  static std::uint32_t this_thread_slot() {
    static std::atomic<std::uint32_t> next{0};
    thread_local std::uint32_t slot = next.fetch_add(1, std::memory_order_relaxed) % kSlots;
    return slot;
  }

 private:
  struct alignas(64) Slot {
    std::atomic<std::uint32_t> readers{0};
  };

  Slot slots_[kSlots];
  std::atomic<std::uint32_t> gate_{0};
  std::mutex writer_mu_;  // serializes exclusive holders
};

}  // namespace dse
