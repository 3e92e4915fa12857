#pragma once

// Simulated cluster: one coordinator and a set of state-object members wired
// through a lossy, delaying message fabric, all driven by one deterministic
// executor. The harness owns process lifecycles (boot, crash, restart), the
// persist-latency injection for every member's snapshot store, the refresh
// tickers that drive group commit and retries, and an app-level RPC layer for
// services built on top.
//
// Fault model. A crash kills the process, not the machine: the domain stops
// every scheduled continuation, the per-life coroutines are destroyed, the
// runtime and its volatile state vanish, and in-flight persists are lost,
// while the snapshot store's durable versions survive for the next life.
// Messages already in flight still arrive (they left the sender) and are
// dropped with why=down if the destination is down; stale-incarnation traffic
// delivered to a new life is dropped by the protocol itself. A coordinator
// crash is the same story around a surviving log; it restarts automatically
// after a configured outage. Incarnations count boots: 1 first, +1 per
// restart.
//
// Conservation. Every send is traced; each then appears as exactly one of
// deliver, drop why=loss (decided at send time), or drop why=down (decided at
// arrival), or stays buffered past the end of the run. The counters sent,
// delivered, dropped_loss, dropped_down, in_flight track the same identity.
//
// Determinism. All delays and loss decisions draw from the executor's seeded
// generator in event order, so two runs with equal configs and equal scenario
// call sequences produce byte-identical traces.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dse/backend.hpp"
#include "dse/bytes.hpp"
#include "dse/coordinator.hpp"
#include "dse/core.hpp"
#include "dse/errors.hpp"
#include "dse/runtime.hpp"
#include "dse/sim/executor.hpp"
#include "dse/sim/task.hpp"
#include "dse/trace.hpp"

namespace dse::sim {

// Message or persist delay: fixed when lo == hi, else uniform in [lo, hi].
struct Delay {
  std::uint64_t lo_us = 0;
  std::uint64_t hi_us = 0;

  std::uint64_t sample(Rng& rng) const {
    return lo_us >= hi_us ? lo_us : rng.range(lo_us, hi_us);
  }
};

struct LinkParams {
  Delay delay{200, 200};
  double loss = 0.0;  // per-message drop probability
};

enum class FaultKind : std::uint8_t { CrashObject, CrashCoordinator, RestartObject };

struct Fault {
  std::uint64_t at_us = 0;
  FaultKind kind = FaultKind::CrashObject;
  ObjectId target = 0;  // ignored for CrashCoordinator
};

struct SimConfig {
  std::uint64_t seed = 1;
  LinkParams link;  // every link unless overridden by (src, dst)
  std::map<std::pair<ObjectId, ObjectId>, LinkParams> link_overrides;
  Delay persist_delay{10'000, 10'000};
  std::vector<Fault> faults;  // strictly increasing at_us
  std::uint64_t coordinator_outage_us = 30'000;  // crash-to-restart gap
  std::uint64_t coordinator_refresh_us = 10'000;
};

// What a service plugs into its member: a durable store, a request handler
// for the app channel, and an optional per-life boot hook (respawn server
// loops, resume logged work). All of them survive restarts as C++ objects.
// The store is either a full-copy snapshot built from capture/apply
// (apply(nullptr) is called before each non-first boot so live state never
// leaks across lives), or a custom backend the service owns; the latter pairs
// with on_crash, which must drop the store's volatile tail at process death.
struct ServiceHooks {
  std::function<Bytes()> capture;
  std::function<void(const Bytes*)> apply;
  // from, rpc (0 = one-way, no reply possible), payload
  std::function<void(ObjectId, std::uint64_t, Bytes)> on_request;
  std::function<void()> on_boot;
  StateObjectBackend* backend = nullptr;  // overrides capture/apply when set
  std::function<void()> on_crash;
};

class Cluster {
 public:
  explicit Cluster(SimConfig cfg) : cfg_(std::move(cfg)), ex_(cfg_.seed), driver_(ex_) {}

  Cluster(const Cluster&) = delete;
  Cluster& operator=(const Cluster&) = delete;

  // ---------------------------------------------------------------------
  // assembly (before start)

  void add_member(ObjectId id, ServiceHooks hooks, std::uint64_t commit_period_us = 10'000) {
    if (started_) throw Error("cluster: add_member after start");
    if (id == kCoordinatorId) throw Error("cluster: id 0 is the coordinator");
    if (members_.count(id)) throw Error("cluster: duplicate member");
    members_.emplace(std::piecewise_construct, std::forward_as_tuple(id),
                     std::forward_as_tuple(this, id, std::move(hooks), commit_period_us));
  }

  // Boots the coordinator and every member at the current virtual time and
  // schedules the fault plan.
  void start() {
    if (started_) throw Error("cluster: already started");
    started_ = true;
    validate_faults();
    coord_up_ = true;
    ++coord_boots_;
    boot_coordinator();
    for (auto& [id, m] : members_) boot(m);
    for (const Fault& f : cfg_.faults)
      ex_.at(f.at_us, [this, f] { apply_fault(f); });
  }

  // ---------------------------------------------------------------------
  // fault injection (also driven by the schedule)

  void crash_member(ObjectId id) {
    Member& m = member(id);
    if (!m.up) return;
    m.up = false;
    m.domain.kill();
    m.tasks.clear();    // tears down this life's suspended coroutines
    m.pending.clear();  // outstanding calls die with the caller
    m.rt.reset();
    if (m.hooks.on_crash)
      m.hooks.on_crash();
    else
      m.snap->crash();
    trace_.emit(ex_.now(), "crash", {{"who", num(id)}, {"inc", num(m.incarnation)}});
    wake_waiters();
  }

  void restart_member(ObjectId id) {
    Member& m = member(id);
    if (m.up) return;
    m.domain.revive();
    boot(m);
    wake_waiters();
  }

  void crash_coordinator() {
    if (!coord_up_) return;
    coord_up_ = false;
    coord_domain_.kill();
    coord_.reset();
    trace_.emit(ex_.now(), "crash", {{"who", num(kCoordinatorId)}, {"inc", num(coord_boots_)}});
    wake_waiters();
  }

  void restart_coordinator() {
    if (coord_up_) return;
    coord_up_ = true;
    coord_domain_.revive();
    ++coord_boots_;
    trace_.emit(ex_.now(), "restart", {{"who", num(kCoordinatorId)}, {"inc", num(coord_boots_)}});
    boot_coordinator();
    wake_waiters();
  }

  // ---------------------------------------------------------------------
  // app-level RPC

  // Sends a request and resolves with the response payload, or nullopt on
  // timeout (0 = wait forever). The pending slot lives in the caller, so a
  // caller crash abandons it and the response falls on the floor.
  Future<std::optional<Bytes>> call(ObjectId from, ObjectId to, const Bytes& payload,
                                    std::uint64_t timeout_us = 0) {
    Member& m = member(from);
    if (!m.up) throw Error("call: caller is down");
    std::uint64_t rpc = ++rpc_seq_;
    Future<std::optional<Bytes>> f;
    m.pending.emplace(rpc, Promise<std::optional<Bytes>>(f));
    route(from, to, Chan::App, envelope(kRequest, rpc, payload));
    if (timeout_us != 0)
      m.domain.schedule(timeout_us, [this, &m, rpc] {
        auto it = m.pending.find(rpc);
        if (it == m.pending.end()) return;
        Promise<std::optional<Bytes>> p = std::move(it->second);
        m.pending.erase(it);
        p.set(std::nullopt);
      });
    return f;
  }

  void respond(ObjectId from, ObjectId to, std::uint64_t rpc, const Bytes& payload) {
    if (rpc == 0) throw Error("respond: one-way message");
    route(from, to, Chan::App, envelope(kResponse, rpc, payload));
  }

  void post(ObjectId from, ObjectId to, const Bytes& payload) {
    route(from, to, Chan::App, envelope(kOneWay, 0, payload));
  }

  // ---------------------------------------------------------------------
  // scenario plumbing

  // Driver work survives every fault; member work dies with its member.
  void spawn(Task<> t) { park(driver_tasks_, std::move(t)); }
  void spawn_on(ObjectId id, Task<> t) { park(member(id).tasks, std::move(t)); }

  // Resolves on the next cluster progress event: boundary adoption, plan
  // application, world advance, or any lifecycle transition. Loops re-check
  // their own condition after each wake.
  Future<bool> progress_event() {
    Future<bool> f;
    waiters_.emplace_back(f);
    return f;
  }

  auto sleep(std::uint64_t delay_us) { return sleep_for(driver_, delay_us); }

  // Runs the simulation to exactly t, then surfaces the first escaped
  // exception from any spawned coroutine (services swallow expected rollback
  // aborts themselves; anything escaping is a bug).
  void run_until(std::uint64_t t) {
    ex_.run_until(t);
    check_failures();
  }

  void settle(std::uint64_t extra_us) { run_until(ex_.now() + extra_us); }

  // ---------------------------------------------------------------------
  // introspection

  Executor& executor() { return ex_; }
  Domain& driver_domain() { return driver_; }
  TraceLog& trace() { return trace_; }
  const SimConfig& config() const { return cfg_; }
  std::uint64_t now() const { return ex_.now(); }

  std::vector<ObjectId> member_ids() const {
    std::vector<ObjectId> out;
    for (const auto& [id, m] : members_) out.push_back(id);
    return out;
  }
  bool up(ObjectId id) const { return members_.at(id).up; }
  bool coordinator_up() const { return coord_up_; }
  std::uint64_t incarnation(ObjectId id) const { return members_.at(id).incarnation; }
  Coordinator& coordinator() {
    if (!coord_) throw Error("cluster: coordinator is down");
    return *coord_;
  }
  CoordinatorLog& coordinator_log() { return coord_log_; }

  StateObjectRuntime& rt(ObjectId id) {
    Member& m = member(id);
    if (!m.rt) throw Error("cluster: member is down");
    return *m.rt;
  }
  StateObjectBackend& backend(ObjectId id) { return *member(id).store; }
  Domain& domain(ObjectId id) { return member(id).domain; }

  // Persist-latency hook for service-owned stores. Completions are scheduled
  // on the raw executor and survive process death; the store's own crash()
  // is what cancels them.
  std::function<void(std::function<void()>)> persist_defer() {
    return [this](std::function<void()> done) {
      ex_.after(cfg_.persist_delay.sample(ex_.rng()), std::move(done));
    };
  }

  std::uint64_t sent() const { return sent_; }
  std::uint64_t delivered() const { return delivered_; }
  std::uint64_t dropped_loss() const { return dropped_loss_; }
  std::uint64_t dropped_down() const { return dropped_down_; }
  std::uint64_t in_flight() const { return in_flight_; }

 private:
  enum class Chan : std::uint8_t { Coord, App };
  static constexpr std::uint8_t kRequest = 1;
  static constexpr std::uint8_t kResponse = 2;
  static constexpr std::uint8_t kOneWay = 3;

  struct Member {
    Member(Cluster* c, ObjectId id_, ServiceHooks hooks_, std::uint64_t period)
        : id(id_), commit_period_us(period), hooks(std::move(hooks_)), domain(c->ex_) {
      if (hooks.backend != nullptr) {
        store = hooks.backend;
      } else {
        if (!hooks.capture || !hooks.apply)
          throw Error("cluster: member needs capture/apply or a backend");
        snap = std::make_unique<SnapshotBackend>(hooks.capture, hooks.apply, c->persist_defer());
        store = snap.get();
      }
    }

    ObjectId id;
    std::uint64_t commit_period_us;
    ServiceHooks hooks;
    Domain domain;
    std::unique_ptr<SnapshotBackend> snap;  // built unless the service brought its own
    StateObjectBackend* store = nullptr;    // durable across lives
    std::unique_ptr<StateObjectRuntime> rt;
    std::uint64_t incarnation = 0;  // boot count
    bool up = false;
    std::vector<Task<>> tasks;
    std::map<std::uint64_t, Promise<std::optional<Bytes>>> pending;
  };

  Member& member(ObjectId id) {
    auto it = members_.find(id);
    if (it == members_.end()) throw Error("cluster: unknown member " + num(id));
    return it->second;
  }

  void boot_coordinator() {
    CoordinatorConfig cc;
    for (const auto& [id, m] : members_) cc.members.push_back(id);
    cc.refresh_period_us = cfg_.coordinator_refresh_us;
    coord_ = std::make_unique<Coordinator>(
        cc, coord_log_, [this] { return ex_.now(); },
        [this](ObjectId to, Bytes b) { route(kCoordinatorId, to, Chan::Coord, std::move(b)); },
        &trace_);
    coord_->start();
    arm_coord_ticker();
  }

  void boot(Member& m) {
    m.up = true;
    ++m.incarnation;
    if (m.incarnation > 1) {
      if (m.hooks.apply) m.hooks.apply(nullptr);  // volatile state did not survive
      trace_.emit(ex_.now(), "restart", {{"who", num(m.id)}, {"inc", num(m.incarnation)}});
    }
    RuntimeConfig rc;
    rc.object = m.id;
    rc.incarnation = m.incarnation;
    rc.commit_period_us = m.commit_period_us;
    m.rt = std::make_unique<StateObjectRuntime>(
        rc, *m.store, [this] { return ex_.now(); },
        [this, id = m.id](Bytes b) { route(id, kCoordinatorId, Chan::Coord, std::move(b)); },
        &trace_);
    m.rt->set_progress_hook([this] { wake_waiters(); });
    m.rt->connect();
    arm_member_ticker(m);
    if (m.hooks.on_boot) m.hooks.on_boot();
  }

  void arm_member_ticker(Member& m) {
    std::uint64_t due = m.rt->next_refresh_due();
    std::uint64_t d = due > ex_.now() ? due - ex_.now() : 0;
    m.domain.schedule(d, [this, &m] {
      if (!m.up || !m.rt) return;
      m.rt->refresh();
      arm_member_ticker(m);
    });
  }

  void arm_coord_ticker() {
    std::uint64_t due = coord_->next_refresh_due();
    std::uint64_t d = due > ex_.now() ? due - ex_.now() : 0;
    coord_domain_.schedule(d, [this] {
      if (!coord_up_ || !coord_) return;
      coord_->refresh();
      arm_coord_ticker();
    });
  }

  void apply_fault(const Fault& f) {
    switch (f.kind) {
      case FaultKind::CrashObject:
        crash_member(f.target);
        break;
      case FaultKind::RestartObject:
        restart_member(f.target);
        break;
      case FaultKind::CrashCoordinator:
        crash_coordinator();
        ex_.after(cfg_.coordinator_outage_us, [this] { restart_coordinator(); });
        break;
    }
  }

  void validate_faults() const {
    std::uint64_t prev = 0;
    bool first = true;
    for (const Fault& f : cfg_.faults) {
      if (!first && f.at_us <= prev) throw Error("cluster: fault times must strictly increase");
      prev = f.at_us;
      first = false;
      if (f.kind != FaultKind::CrashCoordinator && !members_.count(f.target))
        throw Error("cluster: fault targets unknown member");
    }
  }

  // -- transport ----------------------------------------------------------

  const LinkParams& link(ObjectId src, ObjectId dst) const {
    auto it = cfg_.link_overrides.find({src, dst});
    return it == cfg_.link_overrides.end() ? cfg_.link : it->second;
  }

  static Bytes envelope(std::uint8_t kind, std::uint64_t rpc, const Bytes& payload) {
    ByteWriter w;
    w.u8(kind);
    w.u64(rpc);
    w.raw(payload.data(), payload.size());
    return w.take();
  }

  void route(ObjectId src, ObjectId dst, Chan chan, Bytes b) {
    std::uint64_t id = ++msg_seq_;
    ++sent_;
    trace_.emit(ex_.now(), "send",
                {{"id", num(id)},
                 {"src", num(src)},
                 {"dst", num(dst)},
                 {"chan", chan == Chan::App ? "app" : "coord"},
                 {"n", num(b.size())}});
    const LinkParams& lp = link(src, dst);
    if (lp.loss > 0.0 &&
        ex_.rng().chance(static_cast<std::uint64_t>(lp.loss * 1'000'000.0 + 0.5), 1'000'000)) {
      ++dropped_loss_;
      trace_.emit(ex_.now(), "drop",
                  {{"id", num(id)}, {"src", num(src)}, {"dst", num(dst)}, {"why", "loss"}});
      return;
    }
    ++in_flight_;
    ex_.after(lp.delay.sample(ex_.rng()),
              [this, id, src, dst, chan, b = std::move(b)] { deliver(id, src, dst, chan, b); });
  }

  void deliver(std::uint64_t id, ObjectId src, ObjectId dst, Chan chan, const Bytes& b) {
    --in_flight_;
    bool alive = dst == kCoordinatorId ? coord_up_ : member(dst).up;
    if (!alive) {
      ++dropped_down_;
      trace_.emit(ex_.now(), "drop",
                  {{"id", num(id)}, {"src", num(src)}, {"dst", num(dst)}, {"why", "down"}});
      return;
    }
    ++delivered_;
    trace_.emit(ex_.now(), "deliver", {{"id", num(id)}, {"src", num(src)}, {"dst", num(dst)}});
    if (dst == kCoordinatorId) {
      coord_->handle_message(b);
      return;
    }
    Member& m = member(dst);
    if (chan == Chan::Coord) {
      m.rt->handle_message(b);
      return;
    }
    ByteReader r(b);
    std::uint8_t kind = r.u8("app envelope");
    std::uint64_t rpc = r.u64("app envelope");
    Bytes payload(b.begin() + 9, b.end());
    if (kind == kResponse) {
      auto it = m.pending.find(rpc);
      if (it == m.pending.end()) return;  // timed out or caller restarted
      Promise<std::optional<Bytes>> p = std::move(it->second);
      m.pending.erase(it);
      p.set(std::move(payload));
      return;
    }
    if (kind != kRequest && kind != kOneWay) throw Error("app envelope: bad kind");
    if (!m.hooks.on_request) throw Error("cluster: member has no request handler");
    m.hooks.on_request(src, kind == kRequest ? rpc : 0, std::move(payload));
  }

  // -- scenario wakeups and task ownership ---------------------------------

  void wake_waiters() {
    if (waiters_.empty() || wake_scheduled_) return;
    wake_scheduled_ = true;
    // One scheduled pass keeps waiter resumption out of protocol stacks.
    ex_.after(0, [this] {
      wake_scheduled_ = false;
      std::vector<Promise<bool>> ws = std::move(waiters_);
      waiters_.clear();
      for (Promise<bool>& p : ws) p.set(true);
    });
  }

  static void park(std::vector<Task<>>& ts, Task<> t) {
    std::erase_if(ts, [](const Task<>& x) { return x.done() && !x.failed(); });
    ts.push_back(std::move(t));
  }

  void check_failures() const {
    for (const Task<>& t : driver_tasks_) t.rethrow_if_failed();
    for (const auto& [id, m] : members_)
      for (const Task<>& t : m.tasks) t.rethrow_if_failed();
  }

  static std::string num(std::uint64_t v) { return std::to_string(v); }

  SimConfig cfg_;
  Executor ex_;
  TraceLog trace_;
  Domain driver_;  // never crashes: scenario clocks and waits live here

  std::map<ObjectId, Member> members_;
  Domain coord_domain_{ex_};
  MemoryCoordinatorLog coord_log_;  // durable across coordinator lives
  std::unique_ptr<Coordinator> coord_;
  bool coord_up_ = false;
  std::uint64_t coord_boots_ = 0;

  bool started_ = false;
  std::uint64_t msg_seq_ = 0;
  std::uint64_t rpc_seq_ = 0;
  std::uint64_t sent_ = 0;
  std::uint64_t delivered_ = 0;
  std::uint64_t dropped_loss_ = 0;
  std::uint64_t dropped_down_ = 0;
  std::uint64_t in_flight_ = 0;

  std::vector<Task<>> driver_tasks_;
  std::vector<Promise<bool>> waiters_;
  bool wake_scheduled_ = false;
};

// Polls a detached thread's barrier until it settles. The thread must belong
// to `who`'s runtime; the wait is gated through `who`'s domain, so if `who`
// dies mid-wait the poller is never resumed (its frame dies with the owner's
// task list, or idles until teardown for driver-owned frames).
inline Task<BarrierStatus> await_barrier(Cluster& c, ObjectId who, SThread& t) {
  for (;;) {
    BarrierStatus s = c.rt(who).barrier_poll(t);
    if (s != BarrierStatus::Waiting) co_return s;
    co_await c.progress_event().wait(c.domain(who));
  }
}

// Opens an action on `self`, suspending while the observed header is ahead of
// the local world. Resumes true with the action open: the caller must reach
// end_action() without suspending in between. False means the header is from
// a rolled-back world and the request should be discarded (the sender retries
// against the new world).
inline Task<bool> enter_action(Cluster& c, ObjectId self, const Header* observed) {
  for (;;) {
    StateObjectRuntime& rt = c.rt(self);
    if (!rt.connected()) {
      co_await c.progress_event().wait(c.domain(self));
      continue;
    }
    Future<StartStatus> f;
    StartStatus st = rt.start_action(observed, [p = Promise<StartStatus>(f)](StartStatus s) mutable {
      p.set(s);
    });
    if (st == StartStatus::Deferred) st = co_await f.wait(c.domain(self));
    if (st == StartStatus::Entered) co_return true;
    if (st == StartStatus::Rejected) co_return false;
    co_await sleep_for(c.domain(self), 1'000);  // Refused: defer buffer is full
  }
}

}  // namespace dse::sim
