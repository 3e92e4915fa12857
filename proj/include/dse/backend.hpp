#pragma once

// Persistence contract between a runtime and its durable store, plus the two
// stock implementations shared by the simulator and the benchmarks.
//
// persist(v, meta, cb) captures the object's current state as version v and
// returns without waiting; cb fires at most once, after the write is durable.
// restore(v) reinstates exactly what persist(v) captured (v = 0 is the
// pristine initial state), discards every durable version above v, cancels
// the completion of any in-flight persist above v, and returns v's metadata
// bytes. prune(upto) drops durable versions <= upto; they stop being restore
// targets and disappear from list_versions. list_versions() returns the
// durable, unpruned versions with their metadata, ascending.
//
// Version numbers are never reused across the life of one store: after a
// restore the runtime continues counting from the restore target, so a
// version key identifies one persist call forever.

#include <cstdint>
#include <functional>
#include <map>
#include <utility>
#include <vector>

#include "dse/bytes.hpp"
#include "dse/errors.hpp"

namespace dse {

struct DurableVersion {
  std::uint64_t version = 0;
  Bytes meta;

  bool operator==(const DurableVersion&) const = default;
};

class StateObjectBackend {
 public:
  virtual ~StateObjectBackend() = default;
  virtual void persist(std::uint64_t version, Bytes meta, std::function<void()> on_durable) = 0;
  virtual Bytes restore(std::uint64_t version) = 0;
  virtual void prune(std::uint64_t upto) = 0;
  virtual std::vector<DurableVersion> list_versions() const = 0;
};

// Full-copy snapshot store holding everything in memory. Domain-agnostic:
// `capture` serializes the live state, `apply` replaces it (nullptr resets to
// the initial state), `defer` schedules the durability completion (the
// simulator injects its persist latency here; an empty defer completes
// inline, modeling a synchronous store). crash() models process death around
// a surviving store: in-flight persists are lost, durable versions stay.
class SnapshotBackend final : public StateObjectBackend {
 public:
  using Capture = std::function<Bytes()>;
  using Apply = std::function<void(const Bytes*)>;
  using Defer = std::function<void(std::function<void()>)>;

  SnapshotBackend(Capture capture, Apply apply, Defer defer = {})
      : capture_(std::move(capture)), apply_(std::move(apply)), defer_(std::move(defer)) {}

  // Durability is released in version order: a version becomes durable (and
  // its completion fires) only once every earlier pending version has. A
  // snapshot embeds the effects of everything before it, so exposing it while
  // a predecessor could still be lost would leave a recoverable state whose
  // observations are invisible to recovery.
  void persist(std::uint64_t version, Bytes meta, std::function<void()> on_durable) override {
    if (durable_.count(version) || pending_.count(version))
      throw Error("persist: version already used");
    Record rec{capture_(), std::move(meta)};
    if (!defer_) {
      durable_.emplace(version, std::move(rec));
      if (on_durable) on_durable();
      return;
    }
    pending_.emplace(version, Pending{std::move(rec), std::move(on_durable), false});
    defer_([this, version] { complete(version); });
  }

  Bytes restore(std::uint64_t version) override {
    auto it = durable_.find(version);
    if (version != 0 && it == durable_.end()) throw Error("restore: version not durable");
    pending_.erase(pending_.upper_bound(version), pending_.end());
    durable_.erase(durable_.upper_bound(version), durable_.end());
    if (version == 0) {
      apply_(nullptr);
      return {};
    }
    apply_(&it->second.state);
    return it->second.meta;
  }

  void prune(std::uint64_t upto) override {
    durable_.erase(durable_.begin(), durable_.upper_bound(upto));
  }

  std::vector<DurableVersion> list_versions() const override {
    std::vector<DurableVersion> out;
    out.reserve(durable_.size());
    for (const auto& [v, rec] : durable_) out.push_back({v, rec.meta});
    return out;
  }

  void crash() { pending_.clear(); }

  bool has_pending() const { return !pending_.empty(); }

 private:
  struct Record {
    Bytes state;
    Bytes meta;
  };
  struct Pending {
    Record rec;
    std::function<void()> cb;
    bool done = false;
  };

  void complete(std::uint64_t version) {
    auto it = pending_.find(version);
    if (it == pending_.end()) return;  // cancelled by restore or crash
    it->second.done = true;
    while (!pending_.empty() && pending_.begin()->second.done) {
      auto b = pending_.begin();
      std::function<void()> cb = std::move(b->second.cb);
      durable_.emplace(b->first, std::move(b->second.rec));
      pending_.erase(b);
      if (cb) cb();
    }
  }

  Capture capture_;
  Apply apply_;
  Defer defer_;
  std::map<std::uint64_t, Pending> pending_;
  std::map<std::uint64_t, Record> durable_;
};

// Benchmark store: completes every persist inline and keeps nothing.
class NullBackend final : public StateObjectBackend {
 public:
  void persist(std::uint64_t, Bytes, std::function<void()> on_durable) override {
    if (on_durable) on_durable();
  }

  Bytes restore(std::uint64_t version) override {
    if (version != 0) throw Error("restore: version not durable");
    return {};
  }

  void prune(std::uint64_t) override {}

  std::vector<DurableVersion> list_versions() const override { return {}; }
};

}  // namespace dse
