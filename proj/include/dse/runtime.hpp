#pragma once

// Per-object speculation runtime.
//
// One StateObjectRuntime instance manages one state object: it hands out
// version numbers to actions, tracks which remote versions the local state
// has observed, persists versions with their outgoing dependency edges, and
// applies the coordinator's rollback decisions. It is synchronous and
// callback-based so the same code runs under the deterministic simulator and
// under real threads.
//
// Versioning. `current_` is the version open for writes; every version below
// it has had its persist issued (completion is asynchronous). A commit tick
// (refresh, aligned to commit_period_us) issues a persist of the current
// version when it is dirty and opens the next one. Observing a remote version
// n forces the local counter up: persists are issued until current_ >= n, and
// the dependency edge is recorded in the current version. Forcing only
// issues, it never waits, so admission is synchronous; the result is that
// every dependency edge points from a numerically greater-or-equal version to
// a smaller-or-equal one, and any down-set of bare version numbers is closed
// under the edge relation.
//
// Worlds. world_line counts applied rollback decisions. Plans apply in
// strictly consecutive failure_seq order. Messages from a newer world are
// buffered until the local world catches up (bounded by deferred_capacity,
// then refused so the transport retries); messages from an older world are
// rejected as stale. Applying a plan either restores the backend to the
// plan's target version (versions above it are discarded, the version
// counter continues from target+1) or, when the plan marks this object
// skippable and every locally unsettled edge lies within the plan's cuts,
// skips the restore and relabels unacknowledged fragments into the new
// world. Either way one anchor persist is issued immediately so the new
// world is durably recorded, and reports are withheld until that anchor is
// durable: nothing is reported under a world that a crash could silently
// revert.
//
// Barriers. The coordinator pushes a boundary (per-object covered version
// cuts). A boundary is adopted only when its basis_seq is at or below the
// locally applied plan sequence; otherwise its cuts could name regrown
// versions and falsely cover dead ones. A speculative thread releases its
// barrier when every dependency is (a) not lost by any applied plan and
// (b) within the adopted cuts; its dependency set is then cleared and the
// thread is relabeled into the current world.
//
// Threading. start_action/end_action take a striped shared latch and are
// safe to call concurrently; commit ticks and plan application take the
// exclusive side. Everything else assumes external serialization (the
// simulator is single-threaded). Backend persist completions must be
// deferred, never invoked from inside persist(); actions must not span
// coroutine suspension points. The runtime does not make actions atomic:
// a forced persist snapshots state as it is, and services that need
// all-or-nothing semantics layer their own logs on top.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "dse/backend.hpp"
#include "dse/bytes.hpp"
#include "dse/core.hpp"
#include "dse/errors.hpp"
#include "dse/latch.hpp"
#include "dse/messages.hpp"
#include "dse/trace.hpp"

namespace dse {

struct RuntimeConfig {
  ObjectId object = 0;
  std::uint64_t incarnation = 1;        // 1 on first boot, +1 per restart
  std::uint64_t commit_period_us = 10'000;
  std::size_t deferred_capacity = 64;   // future-world messages held back
};

enum class StartStatus : std::uint8_t {
  Entered,   // action admitted, caller must end_action()
  Rejected,  // stale world or lost dependency, drop the message
  Deferred,  // future world, on_ready will fire when the world catches up
  Refused,   // defer buffer full, transport should retry later
};

enum class BarrierStatus : std::uint8_t { Released, Waiting, Lost };

// A speculative thread: a dependency set detached from the object so it can
// cross awaits and processes. It observes versions through receives/merges
// and settles them at a barrier. Invalidation is lazy: the next operation on
// a thread whose dependencies were lost throws RolledBack.
struct SThread {
  std::uint64_t world = 0;
  std::vector<Vertex> deps;
  bool live = false;
  bool waiting = false;  // emitted barrier_wait for the current episode
};

class StateObjectRuntime {
 public:
  using NowFn = std::function<std::uint64_t()>;
  using SendFn = std::function<void(Bytes)>;  // to the coordinator
  using OnReady = std::function<void(StartStatus)>;

  StateObjectRuntime(RuntimeConfig cfg, StateObjectBackend& backend, NowFn now, SendFn send,
                     TraceLog* trace = nullptr)
      : cfg_(cfg), backend_(backend), now_(std::move(now)), send_(std::move(send)),
        trace_(trace) {}

  StateObjectRuntime(const StateObjectRuntime&) = delete;
  StateObjectRuntime& operator=(const StateObjectRuntime&) = delete;

  // -------------------------------------------------------------------------
  // lifecycle

  // Restores the latest durable version (its world becomes the local world)
  // and announces this incarnation. Actions are admitted once the
  // coordinator's response arrives; refresh() retries the announcement.
  void connect() {
    if (connect_attempted_) throw DuplicateConnect("connect already attempted");
    connect_attempted_ = true;
    std::vector<GraphFragment> durable;
    for (const auto& dv : backend_.list_versions()) durable.push_back(decode_fragment(dv.meta));
    if (!durable.empty()) {
      const GraphFragment& top = durable.back();
      backend_.restore(top.vertex.version);
      world_.store(top.vertex.world_line, std::memory_order_relaxed);
      current_.store(top.vertex.version + 1, std::memory_order_relaxed);
      for (const auto& f : durable) frags_.emplace(f.vertex.version, FragRec{f, true});
    }
    next_tick_.store(align_up(now_()), std::memory_order_relaxed);
    emit("connect", {{"obj", num(cfg_.object)},
                     {"inc", num(cfg_.incarnation)},
                     {"world", num(world_.load(std::memory_order_relaxed))},
                     {"hwm", num(current_.load(std::memory_order_relaxed) - 1)}});
    connect_request_ = encode_msg(ConnectRequest{cfg_.object, cfg_.incarnation, durable});
    send_(connect_request_);
  }

  bool connected() const { return connected_.load(std::memory_order_acquire); }

  // Earliest time refresh() will do work (the next commit tick).
  std::uint64_t next_refresh_due() const { return next_tick_.load(std::memory_order_relaxed); }

  // Commit tick: issue a persist of the current version when dirty, resend
  // unacknowledged reports, and poll the coordinator. Cheap no-op when called
  // before the tick is due.
  void refresh() {
    if (!connect_attempted_) return;
    std::uint64_t t = now_();
    if (t < next_tick_.load(std::memory_order_relaxed)) return;
    next_tick_.store(align_up(t), std::memory_order_relaxed);
    if (!connected_.load(std::memory_order_acquire)) {
      send_(connect_request_);  // announcement or its response was lost
      return;
    }
    latch_.enter_exclusive();  // quiesce actions so the snapshot is consistent
    {
      std::lock_guard<std::mutex> g(state_mu_);
      if (dirty_.load(std::memory_order_relaxed) || !staged_.empty()) issue_locked();
    }
    latch_.exit_exclusive();
    Bytes pull;
    {
      std::lock_guard<std::mutex> g(state_mu_);
      maybe_report_locked();
      pull = encode_msg(PullRequest{cfg_.object, cfg_.incarnation,
                                    world_.load(std::memory_order_relaxed), boundary_.epoch});
    }
    send_(pull);
  }

  // Feed one coordinator-to-member message (ConnectResponse, Update,
  // ResendRequest). Malformed bytes or member-to-coordinator kinds throw.
  void handle_message(const Bytes& b) {
    CoordMsg m = decode_msg(b);
    if (auto* cr = std::get_if<ConnectResponse>(&m)) {
      if (cr->object != cfg_.object || cr->incarnation != cfg_.incarnation) return;
      if (connected_.load(std::memory_order_acquire)) return;  // duplicate response
      connected_.store(true, std::memory_order_release);
      process_status(cr->status);
      return;
    }
    if (auto* up = std::get_if<Update>(&m)) {
      if (up->object != cfg_.object || !connected_.load(std::memory_order_acquire)) return;
      process_status(up->status);
      return;
    }
    if (std::get_if<ResendRequest>(&m)) {
      if (!connected_.load(std::memory_order_acquire)) return;  // connect retry covers us
      {
        // A census request means the coordinator restarted and its epoch
        // numbering starts over. The adopted cuts stay valid (announced cuts
        // never regress), only the epoch floor is dropped so the rebuilt
        // boundary can be adopted.
        std::lock_guard<std::mutex> g(state_mu_);
        boundary_.epoch = 0;
      }
      std::vector<GraphFragment> durable;
      for (const auto& dv : backend_.list_versions()) durable.push_back(decode_fragment(dv.meta));
      send_(encode_msg(ResendResponse{cfg_.object, cfg_.incarnation,
                                      world_.load(std::memory_order_relaxed),
                                      std::move(durable)}));
      return;
    }
    throw Error("runtime: unexpected coordinator message kind");
  }

  // -------------------------------------------------------------------------
  // actions

  // Admit an action, optionally one triggered by a message carrying
  // speculation metadata. Entered means the caller runs the action body and
  // must call end_action() before suspending. For Deferred, on_ready fires
  // later with Entered (inside it the action is already open) or Rejected.
  StartStatus start_action(const Header* observed = nullptr, OnReady on_ready = {}) {
    if (!connected_.load(std::memory_order_acquire)) throw Error("runtime: not connected");
    std::uint32_t slot = latch_.enter_shared();
    std::uint64_t w = world_.load(std::memory_order_relaxed);
    if (observed != nullptr && observed->world_line != w) {
      latch_.exit_shared(slot);
      if (observed->world_line < w) {
        emit("stale", {{"obj", num(cfg_.object)},
                       {"msg_world", num(observed->world_line)},
                       {"world", num(w)}});
        return StartStatus::Rejected;
      }
      std::lock_guard<std::mutex> g(state_mu_);
      if (deferred_.size() >= cfg_.deferred_capacity) {
        emit("refuse", {{"obj", num(cfg_.object)},
                        {"msg_world", num(observed->world_line)},
                        {"world", num(w)}});
        return StartStatus::Refused;
      }
      deferred_.push_back(DeferredMsg{*observed, std::move(on_ready)});
      emit("defer", {{"obj", num(cfg_.object)},
                     {"msg_world", num(observed->world_line)},
                     {"world", num(w)}});
      return StartStatus::Deferred;
    }
    if (observed != nullptr && !observed->deps.empty()) {
      std::lock_guard<std::mutex> g(state_mu_);
      if (deps_dead_locked(observed->deps)) {
        latch_.exit_shared(slot);
        emit("stale", {{"obj", num(cfg_.object)},
                       {"msg_world", num(observed->world_line)},
                       {"world", num(w)},
                       {"deps", fmt_vertices(observed->deps)}});
        return StartStatus::Rejected;
      }
      record_deps_locked(observed->deps);
      active_.fetch_add(1, std::memory_order_relaxed);
      emit("action_start", {{"obj", num(cfg_.object)},
                            {"world", num(w)},
                            {"ver", num(current_.load(std::memory_order_relaxed))},
                            {"deps", fmt_vertices(observed->deps)}});
      return StartStatus::Entered;
    }
    dirty_.store(true, std::memory_order_relaxed);
    active_.fetch_add(1, std::memory_order_relaxed);
    if (trace_)
      emit("action_start", {{"obj", num(cfg_.object)},
                            {"world", num(w)},
                            {"ver", num(current_.load(std::memory_order_relaxed))},
                            {"deps", "-"}});
    return StartStatus::Entered;
  }

  // Record a speculative thread's dependencies into the open action. False
  // when the thread's world does not match the object's; RolledBack when the
  // thread's dependencies were lost.
  bool absorb(SThread& t) {
    require_live(t);
    check_thread(t);
    if (t.world != world_.load(std::memory_order_relaxed)) return false;
    if (!t.deps.empty()) {
      std::lock_guard<std::mutex> g(state_mu_);
      record_deps_locked(t.deps);
    }
    return true;
  }

  // Close the action; the returned header is the action's ticket: messages
  // carrying it make the receiver depend on this object's current version.
  Header end_action() {
    if (active_.load(std::memory_order_relaxed) <= 0)
      throw NoActiveAction("end_action without start_action");
    dirty_.store(true, std::memory_order_relaxed);
    std::uint64_t w = world_.load(std::memory_order_relaxed);
    std::uint64_t v = current_.load(std::memory_order_relaxed);
    active_.fetch_sub(1, std::memory_order_relaxed);
    if (trace_)
      emit("action_end", {{"obj", num(cfg_.object)}, {"world", num(w)}, {"ver", num(v)}});
    latch_.exit_shared(ActionLatch::this_thread_slot());
    return Header{w, {Vertex{cfg_.object, w, v}}};
  }

  // -------------------------------------------------------------------------
  // speculative threads

  SThread detach() {
    if (!connected_.load(std::memory_order_acquire)) throw Error("runtime: not connected");
    SThread t;
    t.world = world_.load(std::memory_order_relaxed);
    t.live = true;
    emit("sthread", {{"obj", num(cfg_.object)}, {"world", num(t.world)}, {"op", "detach"}});
    return t;
  }

  // Merge a message's speculation metadata into the thread. False when the
  // worlds differ or the metadata references lost versions.
  bool sthread_receive(SThread& t, const Header& h) {
    require_live(t);
    check_thread(t);
    if (h.world_line != t.world) return false;
    {
      std::lock_guard<std::mutex> g(state_mu_);
      if (deps_dead_locked(h.deps)) return false;
    }
    t.deps = merge_deps(t.deps, h.deps);
    t.waiting = false;
    return true;
  }

  bool sthread_merge(SThread& into, SThread& from) {
    require_live(into);
    require_live(from);
    check_thread(into);
    check_thread(from);
    if (into.world != from.world) return false;
    into.deps = merge_deps(into.deps, from.deps);
    into.waiting = false;
    return true;
  }

  // Speculation metadata for a message sent on behalf of this thread.
  Header sthread_header(SThread& t) {
    require_live(t);
    check_thread(t);
    return Header{t.world, t.deps};
  }

  // Released: every dependency settled; the set is cleared and the thread
  // rejoins the object's current world (safe: all it observed is covered).
  BarrierStatus barrier_poll(SThread& t) {
    if (!t.live) return BarrierStatus::Lost;
    std::lock_guard<std::mutex> g(state_mu_);
    if (deps_dead_locked(t.deps)) {
      t.live = false;
      emit("barrier_lost",
           {{"obj", num(cfg_.object)}, {"world", num(t.world)}, {"deps", fmt_vertices(t.deps)}});
      return BarrierStatus::Lost;
    }
    for (const Vertex& d : t.deps) {
      if (d.version > boundary_.cut_version(d.object)) {
        if (!t.waiting) {
          t.waiting = true;
          emit("barrier_wait", {{"obj", num(cfg_.object)},
                                {"world", num(t.world)},
                                {"deps", fmt_vertices(t.deps)}});
        }
        return BarrierStatus::Waiting;
      }
    }
    emit("barrier_pass",
         {{"obj", num(cfg_.object)}, {"world", num(t.world)}, {"deps", fmt_vertices(t.deps)}});
    t.deps.clear();
    t.world = world_.load(std::memory_order_relaxed);
    t.waiting = false;
    return BarrierStatus::Released;
  }

  // Invoked after plans apply or a boundary is adopted; barrier waiters and
  // deferred work should re-poll.
  void set_progress_hook(std::function<void()> f) { progress_ = std::move(f); }

  // -------------------------------------------------------------------------
  // introspection

  ObjectId object() const { return cfg_.object; }
  std::uint64_t incarnation() const { return cfg_.incarnation; }
  std::uint64_t world() const { return world_.load(std::memory_order_relaxed); }
  std::uint64_t current_version() const { return current_.load(std::memory_order_relaxed); }
  BoundarySummary boundary() const {
    std::lock_guard<std::mutex> g(state_mu_);
    return boundary_;
  }

 private:
  struct FragRec {
    GraphFragment frag;
    bool durable = false;
  };
  struct DeferredMsg {
    Header header;
    OnReady on_ready;
  };

  static std::string num(std::uint64_t v) { return std::to_string(v); }

  void emit(const char* tag, std::vector<std::pair<std::string, std::string>> kv) {
    if (trace_) trace_->emit(now_(), tag, std::move(kv));
  }

  std::uint64_t align_up(std::uint64_t t) const {
    return (t / cfg_.commit_period_us + 1) * cfg_.commit_period_us;
  }

  // ---- dependency bookkeeping (state_mu_ held) ----

  bool deps_dead_locked(const std::vector<Vertex>& deps) const {
    for (const auto& [seq, p] : plans_)
      for (const Vertex& d : deps)
        if (plan_loses(p, d)) return true;
    return false;
  }

  // Force the version counter past every observed version, then record the
  // edges in the now-current version. Own-object dependencies are prefix
  // facts and carry no edge.
  void record_deps_locked(const std::vector<Vertex>& deps) {
    std::uint64_t mx = 0;
    for (const Vertex& d : deps) mx = std::max(mx, d.version);
    while (current_.load(std::memory_order_relaxed) < mx) issue_locked();
    std::vector<Vertex> cross;
    for (const Vertex& d : deps)
      if (d.object != cfg_.object) cross.push_back(d);
    if (!cross.empty()) staged_ = merge_deps(staged_, cross);
    dirty_.store(true, std::memory_order_relaxed);
  }

  // Issue the persist of the current version and open the next one.
  void issue_locked() {
    std::uint64_t v = current_.load(std::memory_order_relaxed);
    FragRec rec;
    rec.frag.vertex = Vertex{cfg_.object, world_.load(std::memory_order_relaxed), v};
    rec.frag.out_edges = std::move(staged_);
    staged_.clear();
    dirty_.store(false, std::memory_order_relaxed);
    emit("persist_issue", {{"obj", num(cfg_.object)},
                           {"world", num(rec.frag.vertex.world_line)},
                           {"ver", num(v)},
                           {"edges", fmt_vertices(rec.frag.out_edges)}});
    Bytes meta = encode_fragment(rec.frag);
    frags_.emplace(v, std::move(rec));
    current_.store(v + 1, std::memory_order_relaxed);
    in_persist_ = true;
    backend_.persist(v, std::move(meta), [this, v, e = persist_epoch_] { on_durable(v, e); });
    in_persist_ = false;
  }

  void on_durable(std::uint64_t v, std::uint64_t epoch) {
    if (in_persist_) throw Error("runtime: backend completed persist re-entrantly");
    std::lock_guard<std::mutex> g(state_mu_);
    if (epoch != persist_epoch_) return;  // canceled by a restore
    auto it = frags_.find(v);
    if (it == frags_.end() || it->second.durable) return;
    it->second.durable = true;
    emit("persist_done", {{"obj", num(cfg_.object)},
                          {"world", num(it->second.frag.vertex.world_line)},
                          {"ver", num(v)}});
    if (anchor_gate_ == v) anchor_gate_ = 0;
    maybe_report_locked();
  }

  // Push the durable unacknowledged prefix, unless a new world's anchor is
  // still in flight (reporting under an unanchored world could outlive a
  // crash that reverts it). Only a gap-free prefix is reported: a version is
  // only claimed once everything before it is claimed, so the coordinator's
  // graph never misses the edges of an earlier version.
  void maybe_report_locked() {
    if (!connected_.load(std::memory_order_acquire) || anchor_gate_ != 0) return;
    std::vector<GraphFragment> out;
    for (auto it = frags_.upper_bound(report_ack_); it != frags_.end() && it->second.durable; ++it)
      out.push_back(it->second.frag);
    if (out.empty()) return;
    send_(encode_msg(Report{cfg_.object, cfg_.incarnation,
                            world_.load(std::memory_order_relaxed),
                            world_.load(std::memory_order_relaxed), std::move(out)}));
  }

  // ---- coordinator input ----

  void process_status(const StatusPayload& s) {
    bool advanced = false;
    for (const RollbackPlan& p : s.plans) {
      if (p.failure_seq <= world_.load(std::memory_order_relaxed)) continue;  // already applied
      if (p.failure_seq != world_.load(std::memory_order_relaxed) + 1) {
        emit("note", {{"what", "plan_gap"}, {"seq", num(p.failure_seq)}});
        break;  // wait for a retransmission starting at world+1
      }
      apply_plan(p);
      advanced = true;
    }
    bool adopted = false;
    {
      std::lock_guard<std::mutex> g(state_mu_);
      // Only a status at least as new as our world may raise the floor: a
      // reordered pre-rollback acknowledgement could cover version numbers a
      // restore has since reissued.
      if (s.boundary.basis_seq >= world_.load(std::memory_order_relaxed) &&
          s.report_ack > report_ack_)
        report_ack_ = s.report_ack;
      if (s.boundary_valid && s.boundary.basis_seq <= world_.load(std::memory_order_relaxed) &&
          s.boundary.epoch > boundary_.epoch) {
        boundary_ = s.boundary;
        adopted = true;
        emit("adopt", {{"obj", num(cfg_.object)},
                       {"epoch", num(boundary_.epoch)},
                       {"basis", num(boundary_.basis_seq)}});
      }
      if (s.prune_upto > pruned_upto_) {
        pruned_upto_ = s.prune_upto;
        backend_.prune(pruned_upto_);
        frags_.erase(frags_.begin(), frags_.upper_bound(pruned_upto_));
      }
    }
    if (advanced) flush_deferred();
    if ((advanced || adopted) && progress_) progress_();
  }

  // True when every locally unsettled edge (staged plus unacknowledged
  // fragments) lies within the plan's cuts, i.e. nothing this object
  // observed is being rolled back.
  bool unsettled_within_cuts_locked(const RollbackPlan& p) const {
    auto within = [&](const std::vector<Vertex>& edges) {
      for (const Vertex& e : edges) {
        if (e.world_line >= p.failure_seq) continue;
        auto it = p.entries.find(e.object);
        if (it == p.entries.end() || e.version > it->second.target_version) return false;
      }
      return true;
    };
    if (!within(staged_)) return false;
    for (const auto& [v, rec] : frags_)
      if (v > report_ack_ && !within(rec.frag.out_edges)) return false;
    return true;
  }

  void apply_plan(const RollbackPlan& p) {
    latch_.enter_exclusive();
    {
      std::lock_guard<std::mutex> g(state_mu_);
      // No entry means the plan predates this object: it had nothing to lose
      // then, so the plan degenerates to a world bump.
      PlanEntry e{0, true};
      if (auto it = p.entries.find(cfg_.object); it != p.entries.end()) e = it->second;
      bool skip = e.skip && unsettled_within_cuts_locked(p);
      if (skip) {
        // State survives; fragments the coordinator has not acknowledged are
        // regrown under the new world so their names stay consistent with
        // what will be reported.
        for (auto& [v, rec] : frags_)
          if (v > report_ack_) rec.frag.vertex.world_line = p.failure_seq;
      } else {
        backend_.restore(e.target_version);
        ++persist_epoch_;  // in-flight persist completions are now stale
        frags_.erase(frags_.upper_bound(e.target_version), frags_.end());
        staged_.clear();
        dirty_.store(false, std::memory_order_relaxed);
        current_.store(e.target_version + 1, std::memory_order_relaxed);
        // Version numbers above the target are reissued under the new world;
        // the acknowledgement floor drops with them so they get reported anew.
        if (report_ack_ > e.target_version) report_ack_ = e.target_version;
      }
      world_.store(p.failure_seq, std::memory_order_relaxed);
      plans_.emplace(p.failure_seq, p);
      emit("apply", {{"obj", num(cfg_.object)},
                     {"inc", num(cfg_.incarnation)},
                     {"seq", num(p.failure_seq)},
                     {"mode", skip ? "skip" : "restore"},
                     {"target", num(e.target_version)}});
      issue_locked();  // anchor: first durable record of the new world
      anchor_gate_ = current_.load(std::memory_order_relaxed) - 1;
    }
    latch_.exit_exclusive();
  }

  // Re-evaluate buffered future-world messages after the world advanced.
  void flush_deferred() {
    std::vector<DeferredMsg> stale, ready;
    {
      std::lock_guard<std::mutex> g(state_mu_);
      std::uint64_t w = world_.load(std::memory_order_relaxed);
      std::deque<DeferredMsg> keep;
      for (auto& d : deferred_) {
        if (d.header.world_line < w)
          stale.push_back(std::move(d));
        else if (d.header.world_line == w)
          ready.push_back(std::move(d));
        else
          keep.push_back(std::move(d));
      }
      deferred_.swap(keep);
    }
    for (auto& d : stale) {
      emit("stale", {{"obj", num(cfg_.object)},
                     {"msg_world", num(d.header.world_line)},
                     {"world", num(world_.load(std::memory_order_relaxed))}});
      if (d.on_ready) d.on_ready(StartStatus::Rejected);
    }
    for (auto& d : ready) {
      StartStatus st = start_action(&d.header, d.on_ready);
      // Entered opens the action inside the callback; Deferred re-queued
      // itself (another world change raced in between).
      if (st != StartStatus::Deferred && d.on_ready) d.on_ready(st);
    }
  }

  // ---- speculative thread helpers ----

  void require_live(const SThread& t) const {
    if (!t.live) throw RolledBack("speculative thread rolled back");
  }

  // Lazy invalidation: poison the thread if any dependency was lost.
  void check_thread(SThread& t) {
    std::lock_guard<std::mutex> g(state_mu_);
    if (deps_dead_locked(t.deps)) {
      t.live = false;
      throw RolledBack("speculative thread rolled back");
    }
  }

  RuntimeConfig cfg_;
  StateObjectBackend& backend_;
  NowFn now_;
  SendFn send_;
  TraceLog* trace_;

  ActionLatch latch_;
  mutable std::mutex state_mu_;
  std::atomic<std::uint64_t> world_{0};
  std::atomic<std::uint64_t> current_{1};  // version open for writes
  std::atomic<std::uint64_t> next_tick_{0};
  std::atomic<bool> dirty_{false};
  std::atomic<bool> connected_{false};
  std::atomic<int> active_{0};
  bool connect_attempted_ = false;
  bool in_persist_ = false;
  std::uint64_t persist_epoch_ = 0;
  std::uint64_t report_ack_ = 0;
  std::uint64_t pruned_upto_ = 0;
  std::uint64_t anchor_gate_ = 0;  // version whose durability unblocks reports
  std::vector<Vertex> staged_;     // edges of the current version
  std::map<std::uint64_t, FragRec> frags_;  // issued, unpruned fragments
  std::map<std::uint64_t, RollbackPlan> plans_;
  std::deque<DeferredMsg> deferred_;
  BoundarySummary boundary_;
  Bytes connect_request_;
  std::function<void()> progress_;
};

}  // namespace dse
