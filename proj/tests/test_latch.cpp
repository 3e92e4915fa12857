#include <atomic>
#include <thread>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "dse/latch.hpp"

using namespace dse;

TEST_CASE("shared and exclusive sections exclude each other") {
  ActionLatch latch;
  std::atomic<int> readers{0};
  std::atomic<int> writers{0};
  std::atomic<bool> violation{false};
  std::atomic<bool> stop{false};

  auto reader = [&] {
    while (!stop.load(std::memory_order_relaxed)) {
      std::uint32_t slot = latch.enter_shared();
      readers.fetch_add(1);
      if (writers.load() != 0) violation = true;
      readers.fetch_sub(1);
      latch.exit_shared(slot);
    }
  };
  auto writer = [&] {
    for (int i = 0; i < 200; ++i) {
      latch.enter_exclusive();
      writers.fetch_add(1);
      if (readers.load() != 0 || writers.load() != 1) violation = true;
      writers.fetch_sub(1);
      latch.exit_exclusive();
      std::this_thread::yield();
    }
  };

  std::vector<std::thread> ts;
  for (int i = 0; i < 4; ++i) ts.emplace_back(reader);
  std::thread w1(writer), w2(writer);
  w1.join();
  w2.join();
  stop = true;
  for (auto& t : ts) t.join();
  CHECK_FALSE(violation.load());
}

TEST_CASE("reentry works after exclusive sections") {
  ActionLatch latch;
  for (int i = 0; i < 3; ++i) {
    std::uint32_t slot = latch.enter_shared();
    latch.exit_shared(slot);
    latch.enter_exclusive();
    latch.exit_exclusive();
  }
  std::uint32_t slot = latch.enter_shared();
  latch.exit_shared(slot);
  SUCCEED();
}
