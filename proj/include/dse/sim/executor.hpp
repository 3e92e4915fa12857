#pragma once

// Deterministic discrete-event executor: a virtual clock in integer
// microseconds, an event queue ordered by (time, insertion sequence), and a
// seeded generator. Identical seeds and identical call sequences replay
// identical executions; nothing here reads the wall clock or uses
// platform-dependent randomness.

#include <cstdint>
#include <functional>
#include <map>
#include <utility>

#include "dse/errors.hpp"

namespace dse::sim {

// splitmix64; all simulator decisions draw from this, never from std
// distributions (their outputs vary across library implementations).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, n); n = 0 yields 0
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

  // uniform in [lo, hi] inclusive
  std::uint64_t range(std::uint64_t lo, std::uint64_t hi) { return lo + below(hi - lo + 1); }

  // true with probability num/den
  bool chance(std::uint64_t num, std::uint64_t den) { return below(den) < num; }

 private:
  std::uint64_t state_;
};

class Executor {
 public:
  using EventId = std::pair<std::uint64_t, std::uint64_t>;  // (time, sequence)

  explicit Executor(std::uint64_t seed) : rng_(seed) {}

  std::uint64_t now() const { return now_; }
  Rng& rng() { return rng_; }

  EventId at(std::uint64_t t, std::function<void()> fn) {
    if (t < now_) t = now_;
    EventId id{t, next_seq_++};
    queue_.emplace(id, std::move(fn));
    return id;
  }

  EventId after(std::uint64_t delay, std::function<void()> fn) {
    return at(now_ + delay, std::move(fn));
  }

  void cancel(EventId id) { queue_.erase(id); }

  bool empty() const { return queue_.empty(); }
  std::size_t pending() const { return queue_.size(); }

  // Runs the earliest event. Returns false if the queue is empty.
  bool step() {
    if (queue_.empty()) return false;
    auto it = queue_.begin();
    now_ = it->first.first;
    auto fn = std::move(it->second);
    queue_.erase(it);
    fn();
    return true;
  }

  // Runs every event with time <= t; the clock ends at exactly t.
  void run_until(std::uint64_t t) {
    while (!queue_.empty() && queue_.begin()->first.first <= t) step();
    if (now_ < t) now_ = t;
  }

  // Runs to quiescence or the horizon, whichever comes first.
  void run(std::uint64_t horizon) { run_until(horizon); }

  void clear() { queue_.clear(); }

 private:
  std::uint64_t now_ = 0;
  std::uint64_t next_seq_ = 0;
  std::map<EventId, std::function<void()>> queue_;
  Rng rng_;
};

// One crashable execution context (a member process, the coordinator, or a
// scenario driver). Work scheduled through a domain is silently dropped if
// the domain's incarnation has moved on by the time it fires, which is how a
// crash stops every in-flight continuation of the old process life without
// touching freed coroutine frames.
class Domain {
 public:
  explicit Domain(Executor& ex) : ex_(&ex) {}

  Executor& executor() const { return *ex_; }
  std::uint64_t now() const { return ex_->now(); }
  std::uint64_t incarnation() const { return inc_; }
  bool alive() const { return alive_; }

  Executor::EventId schedule(std::uint64_t delay, std::function<void()> fn) {
    return ex_->after(delay, [this, inc = inc_, fn = std::move(fn)] {
      if (inc == inc_ && alive_) fn();
    });
  }

  void kill() { alive_ = false; }

  void revive() {
    ++inc_;
    alive_ = true;
  }

 private:
  Executor* ex_;
  std::uint64_t inc_ = 1;
  bool alive_ = true;
};

}  // namespace dse::sim
