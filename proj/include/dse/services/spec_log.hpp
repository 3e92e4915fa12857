#pragma once

// Append-only speculative log. Services append payload entries at will; the
// runtime's persist(v) seals the current prefix by appending a commit record
// carrying (version, metadata) and makes the whole prefix durable once the
// injected write latency elapses, in version order. A crash truncates the
// volatile tail back to the last durable commit record, and restore(v)
// truncates to v's commit record inclusive, so recovered contents are always
// an exact prefix of what was written, ending at a commit record.
//
// The log is the live state, so prune() only forgets commit records as
// restore targets; the entries themselves are history and stay. on_reset
// fires after any truncation (restore or crash) so the owning service can
// rebuild volatile indexes over the surviving entries.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dse/backend.hpp"
#include "dse/bytes.hpp"
#include "dse/errors.hpp"
#include "dse/trace.hpp"

namespace dse::services {

class SpecLog final : public StateObjectBackend {
 public:
  using Defer = std::function<void(std::function<void()>)>;
  using NowFn = std::function<std::uint64_t()>;

  struct Entry {
    bool commit = false;
    std::uint64_t version = 0;  // commit records only
    Bytes data;                 // entry payload, or commit metadata
  };

  explicit SpecLog(Defer defer = {}, NowFn now = {}, TraceLog* trace = nullptr,
                   ObjectId object = 0)
      : defer_(std::move(defer)), now_(std::move(now)), trace_(trace), object_(object) {}

  // ---------------------------------------------------------------------
  // service side

  std::uint64_t append(Bytes payload) {
    entries_.push_back(Entry{false, 0, std::move(payload)});
    return entries_.size() - 1;
  }

  // Live sequence: durable prefix plus the volatile tail.
  const std::vector<Entry>& entries() const { return entries_; }
  std::uint64_t durable_size() const { return durable_len_; }

  void set_on_reset(std::function<void()> f) { on_reset_ = std::move(f); }

  // Process death: the volatile tail and every in-flight commit are lost,
  // the durable prefix survives for the next life.
  void crash() {
    pending_.clear();
    entries_.resize(durable_len_);
    while (!commits_.empty() && commits_.rbegin()->second > durable_len_)
      commits_.erase(std::prev(commits_.end()));
    if (on_reset_) on_reset_();
  }

  // ---------------------------------------------------------------------
  // StateObjectBackend

  void persist(std::uint64_t version, Bytes meta, std::function<void()> on_durable) override {
    if (commits_.count(version) || pending_.count(version))
      throw Error("spec log: version already used");
    entries_.push_back(Entry{true, version, std::move(meta)});
    std::uint64_t off = entries_.size();
    commits_.emplace(version, off);
    if (!defer_) {
      advance_durable(version, off);
      if (on_durable) on_durable();
      return;
    }
    pending_.emplace(version, Pending{off, std::move(on_durable), false});
    defer_([this, version] { complete(version); });
  }

  Bytes restore(std::uint64_t version) override {
    if (version == 0) {
      entries_.clear();
      commits_.clear();
      pending_.clear();
      durable_len_ = 0;
      hash_ = kHashSeed;
      if (trace_) emit("slog_recover", 0, 0);
      if (on_reset_) on_reset_();
      return {};
    }
    auto it = commits_.find(version);
    if (it == commits_.end() || it->second > durable_len_)
      throw Error("spec log: restore target not durable");
    std::uint64_t off = it->second;
    entries_.resize(off);
    if (off < durable_len_) rehash(off);
    durable_len_ = off;
    commits_.erase(commits_.upper_bound(version), commits_.end());
    pending_.clear();  // anything in flight was above the target
    Bytes meta = entries_.back().data;
    if (trace_) emit("slog_recover", version, off);
    if (on_reset_) on_reset_();
    return meta;
  }

  void prune(std::uint64_t upto) override {
    commits_.erase(commits_.begin(), commits_.upper_bound(upto));
  }

  std::vector<DurableVersion> list_versions() const override {
    std::vector<DurableVersion> out;
    for (const auto& [v, off] : commits_) {
      if (off > durable_len_) break;
      out.push_back({v, entries_[off - 1].data});
    }
    return out;
  }

  // Running FNV-1a over the framed durable prefix; cheap divergence check.
  std::uint64_t durable_hash() const { return hash_; }

 private:
  static constexpr std::uint64_t kHashSeed = 0xcbf29ce484222325ull;

  struct Pending {
    std::uint64_t offset = 0;
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
      advance_durable(b->first, b->second.offset);
      pending_.erase(b);
      if (cb) cb();
    }
  }

  void advance_durable(std::uint64_t version, std::uint64_t off) {
    for (std::uint64_t i = durable_len_; i < off; ++i) mix_entry(entries_[i]);
    durable_len_ = off;
    if (trace_) emit("slog_commit", version, off);
  }

  void rehash(std::uint64_t len) {
    hash_ = kHashSeed;
    for (std::uint64_t i = 0; i < len; ++i) mix_entry(entries_[i]);
  }

  void mix_entry(const Entry& e) {
    auto mix = [this](const std::uint8_t* p, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) hash_ = (hash_ ^ p[i]) * 0x100000001b3ull;
    };
    ByteWriter w;
    w.u8(e.commit ? 1 : 0);
    w.u64(e.version);
    w.u32(static_cast<std::uint32_t>(e.data.size()));
    mix(w.data().data(), w.data().size());
    mix(e.data.data(), e.data.size());
  }

  void emit(const char* tag, std::uint64_t version, std::uint64_t off) {
    trace_->emit(now_ ? now_() : 0, tag,
                 {{"obj", std::to_string(object_)},
                  {"ver", std::to_string(version)},
                  {"off", std::to_string(off)},
                  {"hash", std::to_string(hash_)}});
  }

  Defer defer_;
  NowFn now_;
  TraceLog* trace_;
  ObjectId object_;
  std::vector<Entry> entries_;
  std::map<std::uint64_t, std::uint64_t> commits_;  // version -> offset past its record
  std::map<std::uint64_t, Pending> pending_;
  std::uint64_t durable_len_ = 0;
  std::uint64_t hash_ = kHashSeed;
  std::function<void()> on_reset_;
};

}  // namespace dse::services
