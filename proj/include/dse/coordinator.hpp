#pragma once

// Cluster coordinator: the single decision point for rollback and recovery.
//
// The coordinator keeps, per member, the reported-persistent part of the
// dependency graph, and derives two things from it:
//
//   Boundary. The maximal closure of the reported graph (per-object version
//   cuts with no edge leaving the kept set). It is recomputed when a report
//   grows the view and pushed to every connected member, so barrier waiters
//   release as soon as their dependencies are covered. Announced cuts never
//   regress: views only grow between decisions, and decisions never cut below
//   an announced boundary.
//
//   Rollback plans. A member reconnecting under a new incarnation lost its
//   unpersisted suffix. Its durable census (filtered through prior plans,
//   since metadata can carry labels that earlier decisions already killed)
//   replaces its view, and one RollbackDecision is computed: per-object
//   targets from a cut cascade seeded at the failed member's surviving high
//   water mark, a skip flag where the cut removed nothing reported, and the
//   enumerated lost vertices. The decision is logged durably before anything
//   is released, then sent to the rejoiner (as part of its connect response)
//   and pushed to everyone else. Every known member gets an entry; plans are
//   numbered consecutively, so failure_seq doubles as the world-line counter.
//
// Durable log. Only failures and membership growth are logged: MemberJoin
// when a member outside the static configuration first connects, and
// RollbackDecision then MemberRejoin on every reconnect (decision first, so
// a crash between the two appends merely produces one extra benign decision
// on retry). A failure-free run of a configured cluster appends nothing at
// all. The flip side is that an empty log proves nothing: startup always
// begins with the boundary invalid and collects a census (ResendRequest)
// from every configured or logged member, each answered by either a
// ResendResponse or that member's next connect. Rejoins arriving meanwhile
// are queued and decided once the view is complete. Epoch numbering restarts
// with each coordinator life, which is why members drop their adopted epoch
// floor when they see a census request. The boundary stalls (the plans do
// not) until every known member has answered once.
//
// Incarnations start at 1 on a member's first boot and grow by one per
// restart: a connect carrying incarnation 1 can have lost nothing, any
// higher incarnation is a rejoin in need of a decision, and anything below
// the known incarnation is a duplicate from a dead life.
//
// Acknowledgement floors. report_ack tells a member which version prefix the
// view already holds. A restore reissues the version numbers above its
// target under the new world, so the floor is clamped to the target on both
// sides whenever a plan restores (not skips) a member.
//
// Single-threaded: feed one message at a time. Sends go through a callback
// routed by member id.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dse/bytes.hpp"
#include "dse/closure.hpp"
#include "dse/core.hpp"
#include "dse/errors.hpp"
#include "dse/messages.hpp"
#include "dse/trace.hpp"

namespace dse {

// Append-only durable record of membership and rollback decisions. append()
// must not return before the event is durable; events() replays everything
// in append order.
class CoordinatorLog {
 public:
  virtual ~CoordinatorLog() = default;
  virtual void append(const ClusterEvent& ev) = 0;
  virtual std::vector<ClusterEvent> events() const = 0;
};

// In-memory log for the simulator: the harness owns it, so it survives the
// coordinator process object.
class MemoryCoordinatorLog final : public CoordinatorLog {
 public:
  void append(const ClusterEvent& ev) override { events_.push_back(ev); }
  std::vector<ClusterEvent> events() const override { return events_; }

 private:
  std::vector<ClusterEvent> events_;
};

// File-backed log: one canonical event encoding per line, lowercase hex,
// flushed per append.
class FileCoordinatorLog final : public CoordinatorLog {
 public:
  explicit FileCoordinatorLog(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      events_.push_back(decode_event(from_hex(line)));
    }
    out_.open(path_, std::ios::app);
    if (!out_) throw Error("coordinator log: cannot open " + path_);
  }

  void append(const ClusterEvent& ev) override {
    out_ << to_hex(encode_event(ev)) << '\n';
    out_.flush();
    if (!out_) throw Error("coordinator log: write failed: " + path_);
    events_.push_back(ev);
  }

  std::vector<ClusterEvent> events() const override { return events_; }

 private:
  static std::string to_hex(const Bytes& b) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(b.size() * 2);
    for (std::uint8_t x : b) {
      s += digits[x >> 4];
      s += digits[x & 0xf];
    }
    return s;
  }

  static Bytes from_hex(const std::string& s) {
    if (s.size() % 2 != 0) throw Error("coordinator log: odd hex line");
    auto nib = [](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      return -1;
    };
    Bytes b;
    b.reserve(s.size() / 2);
    for (std::size_t i = 0; i < s.size(); i += 2) {
      int hi = nib(s[i]), lo = nib(s[i + 1]);
      if (hi < 0 || lo < 0) throw Error("coordinator log: bad hex line");
      b.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
    }
    return b;
  }

  std::string path_;
  std::vector<ClusterEvent> events_;
  std::ofstream out_;
};

struct CoordinatorConfig {
  std::vector<ObjectId> members;             // configured state objects
  std::uint64_t refresh_period_us = 10'000;  // census retry cadence during recovery
};

class Coordinator {
 public:
  using NowFn = std::function<std::uint64_t()>;
  using SendFn = std::function<void(ObjectId, Bytes)>;

  Coordinator(CoordinatorConfig cfg, CoordinatorLog& log, NowFn now, SendFn send,
              TraceLog* trace = nullptr)
      : cfg_(std::move(cfg)), log_(log), now_(std::move(now)), send_(std::move(send)),
        trace_(trace) {}

  Coordinator(const Coordinator&) = delete;
  Coordinator& operator=(const Coordinator&) = delete;

  // Replays the log, then collects censuses. Configured members' first
  // connects are never logged, so an empty log cannot prove a fresh start:
  // every configured or logged member owes a census before the boundary may
  // be announced.
  void start() {
    if (started_) throw Error("coordinator: already started");
    started_ = true;
    for (ObjectId o : cfg_.members) members_[o].configured = true;
    for (const ClusterEvent& ev : log_.events()) {
      if (ev.sequence != log_seq_ + 1) throw Error("coordinator: log sequence gap");
      log_seq_ = ev.sequence;
      switch (ev.kind) {
        case ClusterEvent::Kind::MemberJoin:
        case ClusterEvent::Kind::MemberRejoin:
          members_[ev.member].incarnation = ev.incarnation;
          break;
        case ClusterEvent::Kind::RollbackDecision:
          if (ev.plan.failure_seq != plans_.size() + 1)
            throw Error("coordinator: logged decisions out of order");
          plans_.push_back(ev.plan);
          break;
      }
    }
    boundary_.basis_seq = plans_.size();
    next_tick_ = align_up(now_());
    for (const auto& [o, ms] : members_)
      if (ms.configured || ms.incarnation != 0) collecting_.insert(o);
    if (log_seq_ != 0)
      emit("recover", {{"events", num(log_seq_)}, {"plans", num(plans_.size())}});
    for (ObjectId o : collecting_) send_(o, encode_msg(ResendRequest{}));
    maybe_finish_collection();  // no known members: nothing to wait for
  }

  bool boundary_ready() const { return boundary_valid_; }
  const BoundarySummary& boundary() const { return boundary_; }
  const std::vector<RollbackPlan>& plans() const { return plans_; }

  std::uint64_t next_refresh_due() const { return next_tick_; }

  // Retries census requests while the view is being rebuilt. Cheap no-op
  // otherwise; normal operation is entirely event-driven.
  void refresh() {
    std::uint64_t t = now_();
    if (t < next_tick_) return;
    next_tick_ = align_up(t);
    for (ObjectId o : collecting_) send_(o, encode_msg(ResendRequest{}));
  }

  // Feed one member-to-coordinator message (ConnectRequest, Report,
  // PullRequest, ResendResponse). Malformed bytes or other kinds throw.
  void handle_message(const Bytes& b) {
    CoordMsg m = decode_msg(b);
    if (auto* cr = std::get_if<ConnectRequest>(&m)) return on_connect(*cr);
    if (auto* rp = std::get_if<Report>(&m)) return on_report(*rp);
    if (auto* pl = std::get_if<PullRequest>(&m)) return on_pull(*pl);
    if (auto* rr = std::get_if<ResendResponse>(&m)) return on_resend(*rr);
    throw Error("coordinator: unexpected message kind");
  }

 private:
  struct MemberState {
    std::uint64_t incarnation = 0;  // 0 = never connected
    bool configured = false;
    bool connected = false;  // saw traffic from the current incarnation this life
    std::uint64_t applied_seq = 0;
    std::uint64_t report_hwm = 0;  // acknowledgement floor: view holds <= this
    std::map<std::uint64_t, GraphFragment> view;
  };

  struct QueuedRejoin {
    std::uint64_t incarnation = 0;
    std::vector<GraphFragment> durables;
  };

  // ---- membership ----

  void on_connect(const ConnectRequest& cr) {
    if (cr.incarnation == 0) throw Error("coordinator: zero incarnation");
    MemberState& ms = members_[cr.object];
    if (cr.incarnation < ms.incarnation) {
      // A duplicate from a dead life; answering it could regress the member.
      emit("drop", {{"obj", num(cr.object)}, {"why", "stale_inc"}});
      return;
    }
    if (cr.incarnation == ms.incarnation) {
      // Idempotent retry: the response was lost, or this life never saw the
      // census. Merge it (the member cannot have reported more while
      // unconnected) and answer again.
      merge_census(ms, cr.durables);
      ms.connected = true;
      bool was_collecting = collecting_.erase(cr.object) > 0;
      respond(cr.object, ms);
      if (was_collecting) maybe_finish_collection();
      return;
    }
    if (cr.incarnation == 1) {
      // First connect ever: nothing can have been lost. Joins beyond the
      // static configuration are logged; configured members' are not, so a
      // failure-free run leaves the log empty.
      if (!ms.configured)
        append_member_event(ClusterEvent::Kind::MemberJoin, cr.object, cr.incarnation);
      ms.incarnation = 1;
      merge_census(ms, cr.durables);
      ms.applied_seq = view_world(ms);
      ms.connected = true;
      emit("join", {{"obj", num(cr.object)}, {"inc", num(1)}});
      if (collecting_.erase(cr.object) > 0) {
        respond(cr.object, ms);
        maybe_finish_collection();
      } else {
        bool changed = boundary_valid_ && recompute_boundary(false);
        respond(cr.object, ms);
        if (changed) push_all(cr.object);
      }
      return;
    }
    // A new incarnation: the member died and restarted (maybe before ever
    // reaching us). While the view is being rebuilt the decision waits; the
    // census still counts as collected.
    if (!boundary_valid_) {
      rejoin_queue_[cr.object] = QueuedRejoin{cr.incarnation, cr.durables};
      emit("note", {{"what", "rejoin_queued"}, {"obj", num(cr.object)}});
      collecting_.erase(cr.object);
      maybe_finish_collection();
      return;
    }
    do_rejoin(cr.object, cr.incarnation, cr.durables);
  }

  void do_rejoin(ObjectId obj, std::uint64_t inc, const std::vector<GraphFragment>& durables) {
    MemberState& ms = members_[obj];
    emit("rejoin", {{"obj", num(obj)}, {"inc", num(inc)}});
    // The census replaces the view: only names no prior decision killed
    // survive (persist metadata keeps pre-skip labels).
    ms.view.clear();
    for (const GraphFragment& f : durables)
      if (!lost_by_plans(f.vertex)) ms.view.emplace(f.vertex.version, f);
    std::uint64_t w0 = view_world(ms);
    RollbackPlan p = decide_rollback(obj);
    // Decision first: a crash between the appends redoes the rejoin against
    // the logged plan, costing one extra benign decision, while the reverse
    // order would leave a rejoin whose losses were never declared.
    append_member_event(ClusterEvent::Kind::MemberRejoin, obj, inc);
    ms.incarnation = inc;
    ms.connected = true;
    ms.applied_seq = w0;
    ms.report_hwm = p.entries.at(obj).target_version;
    recompute_boundary(true);
    respond(obj, ms);
    push_all(obj);
  }

  // One rollback decision for the failure of `failed`, whose view already
  // holds its surviving census. Logged before anything is released.
  RollbackPlan decide_rollback(ObjectId failed) {
    RollbackPlan p;
    p.failure_seq = plans_.size() + 1;
    LevelGraph g = view_graph();
    Cuts seeds;
    for (const auto& [o, ms] : members_) seeds[o] = view_hwm(ms);
    Cuts cuts = cascade_cuts(g, std::move(seeds));
    for (const auto& [o, ms] : members_) {
      std::uint64_t hwm = view_hwm(ms);
      std::uint64_t t = cut_of(cuts, o);
      if (t < boundary_.cut_version(o))
        throw Error("coordinator: decision would cross the announced boundary");
      p.entries.emplace(o, PlanEntry{t, t == hwm});
      for (auto it = ms.view.upper_bound(t); it != ms.view.end(); ++it)
        p.lost.push_back(it->second.vertex);
    }
    std::sort(p.lost.begin(), p.lost.end());
    ClusterEvent ev;
    ev.kind = ClusterEvent::Kind::RollbackDecision;
    ev.plan = p;
    append_log(ev);
    for (auto& [o, ms] : members_) {
      const PlanEntry& e = p.entries.at(o);
      ms.view.erase(ms.view.upper_bound(e.target_version), ms.view.end());
      // A restore reissues the version numbers above the target under the
      // new world; the acknowledgement floor drops so they get reported anew.
      if (!e.skip && ms.report_hwm > e.target_version) ms.report_hwm = e.target_version;
    }
    plans_.push_back(p);
    emit("plan", {{"seq", num(p.failure_seq)},
                  {"failed", num(failed)},
                  {"targets", fmt_targets(p)},
                  {"lost", fmt_vertices(p.lost)}});
    return p;
  }

  // ---- steady-state traffic ----

  void on_report(const Report& r) {
    MemberState& ms = known_member(r.object, "report");
    // Configured first connects are unlogged, so after a restart the live
    // incarnation is learned from the first message that carries it.
    if (ms.incarnation == 0) ms.incarnation = r.incarnation;
    if (r.incarnation != ms.incarnation) {
      emit("drop", {{"obj", num(r.object)}, {"why", "stale_inc"}});
      return;
    }
    if (r.world_line > plans_.size()) throw Error("coordinator: report from an unknown world");
    ms.connected = true;
    if (r.applied_seq > ms.applied_seq) ms.applied_seq = r.applied_seq;
    bool grew = false;
    for (const GraphFragment& f : r.fragments) {
      if (f.vertex.version <= ms.report_hwm) continue;  // already incorporated
      if (lost_by_plans(f.vertex)) {
        // The member has not applied the decision that killed this name yet.
        emit("drop", {{"obj", num(r.object)}, {"why", "dead_name"}});
        continue;
      }
      ms.report_hwm = f.vertex.version;
      ms.view.emplace(f.vertex.version, f);
      grew = true;
    }
    if (grew && boundary_valid_ && recompute_boundary(false)) {
      push_all(kNoExclude);
    } else {
      respond_update(r.object, ms);  // at least acknowledge the report
    }
  }

  void on_pull(const PullRequest& pr) {
    MemberState& ms = known_member(pr.object, "pull");
    if (ms.incarnation == 0) ms.incarnation = pr.incarnation;
    if (pr.incarnation != ms.incarnation) {
      emit("drop", {{"obj", num(pr.object)}, {"why", "stale_inc"}});
      return;
    }
    ms.connected = true;
    if (pr.applied_seq > ms.applied_seq) ms.applied_seq = pr.applied_seq;
    bool newer = (boundary_valid_ && pr.boundary_epoch < boundary_.epoch) ||
                 plans_.size() > pr.applied_seq;
    if (newer) respond_update(pr.object, ms);
  }

  void on_resend(const ResendResponse& rr) {
    MemberState& ms = known_member(rr.object, "census");
    if (ms.incarnation != 0 && rr.incarnation != ms.incarnation) {
      emit("drop", {{"obj", num(rr.object)}, {"why", "stale_inc"}});
      return;
    }
    ms.incarnation = rr.incarnation;
    ms.connected = true;
    if (rr.applied_seq > ms.applied_seq) ms.applied_seq = rr.applied_seq;
    merge_census(ms, rr.durables);
    emit("census", {{"obj", num(rr.object)}, {"n", num(rr.durables.size())}});
    if (collecting_.erase(rr.object) > 0) {
      maybe_finish_collection();
    } else if (boundary_valid_ && recompute_boundary(false)) {
      push_all(kNoExclude);
    }
  }

  // ---- recovery ----

  void maybe_finish_collection() {
    if (boundary_valid_ || !collecting_.empty()) return;
    boundary_valid_ = true;
    emit("collected", {{"members", num(members_.size())}});
    auto queued = std::move(rejoin_queue_);
    rejoin_queue_.clear();
    if (queued.empty()) {
      // Members dropped their epoch floor on the census request, so force a
      // bump even when the rebuilt content matches what was announced.
      recompute_boundary(true);
      push_all(kNoExclude);
      return;
    }
    for (const auto& [o, q] : queued) do_rejoin(o, q.incarnation, q.durables);
  }

  // ---- view and boundary ----

  MemberState& known_member(ObjectId o, const char* what) {
    auto it = members_.find(o);
    if (it == members_.end())
      throw Error(std::string("coordinator: ") + what + " from unknown member");
    return it->second;
  }

  bool lost_by_plans(const Vertex& v) const {
    for (const RollbackPlan& p : plans_)
      if (plan_loses(p, v)) return true;
    return false;
  }

  // Add census fragments the view lacks, skipping names prior decisions
  // killed. Re-adding a settled (pruned) level below the cut is harmless:
  // its edges were covered when that cut was announced.
  void merge_census(MemberState& ms, const std::vector<GraphFragment>& durables) {
    for (const GraphFragment& f : durables) {
      std::uint64_t v = f.vertex.version;
      if (lost_by_plans(f.vertex) || ms.view.count(v)) continue;
      ms.view.emplace(v, f);
      if (v > ms.report_hwm) ms.report_hwm = v;
    }
  }

  static std::uint64_t view_hwm(const MemberState& ms) {
    return ms.view.empty() ? 0 : ms.view.rbegin()->first;
  }

  // World label of the view's top fragment: the floor of what the member has
  // durably applied.
  std::uint64_t view_world(const MemberState& ms) const {
    if (ms.view.empty()) return 0;
    std::uint64_t w = ms.view.rbegin()->second.vertex.world_line;
    if (w > plans_.size()) throw Error("coordinator: durable record from an unknown world");
    return w;
  }

  LevelGraph view_graph() const {
    LevelGraph g;
    for (const auto& [o, ms] : members_) {
      auto& levels = g[o];  // every member appears, even with no levels
      for (const auto& [v, f] : ms.view) {
        GraphLevel lv;
        lv.version = v;
        for (const Vertex& e : f.out_edges) lv.edges.emplace_back(e.object, e.version);
        levels.push_back(std::move(lv));
      }
    }
    return g;
  }

  // Recomputes the maximal closure of the view. On any content or basis
  // change (or when forced) the epoch bumps and settled view levels below the
  // cuts are pruned. Returns whether an announcement is due.
  bool recompute_boundary(bool force) {
    if (!boundary_valid_) return false;
    Cuts c = max_closure(view_graph());
    std::map<ObjectId, Cutoff> cuts;
    for (const auto& [o, v] : c) {
      if (v == 0) continue;
      const MemberState& ms = members_.at(o);
      auto it = ms.view.find(v);
      if (it == ms.view.end()) throw Error("coordinator: cut landed off the view");
      cuts.emplace(o, Cutoff{it->second.vertex.world_line, v});
    }
    bool changed = cuts != boundary_.cuts || boundary_.basis_seq != plans_.size();
    if (!changed && !force) return false;
    for (const auto& [o, old] : boundary_.cuts) {
      auto it = cuts.find(o);
      if ((it == cuts.end() ? 0 : it->second.version) < old.version)
        throw Error("coordinator: announced boundary regressed");
    }
    boundary_.cuts = std::move(cuts);
    boundary_.basis_seq = plans_.size();
    ++boundary_.epoch;
    for (auto& [o, ms] : members_) {
      std::uint64_t cv = boundary_.cut_version(o);
      if (cv > 0) ms.view.erase(ms.view.begin(), ms.view.lower_bound(cv));  // keep the cut
    }
    emit("boundary", {{"epoch", num(boundary_.epoch)},
                      {"basis", num(boundary_.basis_seq)},
                      {"cuts", fmt_cuts(boundary_.cuts)}});
    return true;
  }

  // ---- outbound ----

  StatusPayload status_for(ObjectId o, const MemberState& ms) const {
    StatusPayload s;
    s.boundary_valid = boundary_valid_;
    s.boundary = boundary_;
    std::size_t from = std::min<std::size_t>(ms.applied_seq, plans_.size());
    s.plans.assign(plans_.begin() + static_cast<std::ptrdiff_t>(from), plans_.end());
    s.report_ack = ms.report_hwm;
    std::uint64_t cv = boundary_.cut_version(o);
    s.prune_upto = cv > 0 ? cv - 1 : 0;  // keep the cut: rejoins anchor on it
    return s;
  }

  void respond(ObjectId o, const MemberState& ms) {
    send_(o, encode_msg(ConnectResponse{o, ms.incarnation, status_for(o, ms)}));
  }

  void respond_update(ObjectId o, const MemberState& ms) {
    send_(o, encode_msg(Update{o, status_for(o, ms)}));
  }

  static constexpr ObjectId kNoExclude = ~0ull;

  void push_all(ObjectId except) {
    for (const auto& [o, ms] : members_)
      if (ms.connected && o != except) respond_update(o, ms);
  }

  // ---- log ----

  void append_log(ClusterEvent& ev) {
    ev.sequence = ++log_seq_;
    log_.append(ev);
  }

  void append_member_event(ClusterEvent::Kind k, ObjectId o, std::uint64_t inc) {
    ClusterEvent ev;
    ev.kind = k;
    ev.member = o;
    ev.incarnation = inc;
    append_log(ev);
  }

  // ---- misc ----

  static std::string num(std::uint64_t v) { return std::to_string(v); }

  static std::string fmt_targets(const RollbackPlan& p) {
    std::string s;
    for (const auto& [o, e] : p.entries) {
      if (!s.empty()) s += ",";
      s += std::to_string(o) + ":" + std::to_string(e.target_version) + (e.skip ? "s" : "r");
    }
    return s.empty() ? "-" : s;
  }

  static std::string fmt_cuts(const std::map<ObjectId, Cutoff>& cuts) {
    std::string s;
    for (const auto& [o, c] : cuts) {
      if (!s.empty()) s += ",";
      s += std::to_string(o) + ":" + std::to_string(c.version);
    }
    return s.empty() ? "-" : s;
  }

  void emit(const char* tag, std::vector<std::pair<std::string, std::string>> kv) {
    if (trace_) trace_->emit(now_(), tag, std::move(kv));
  }

  std::uint64_t align_up(std::uint64_t t) const {
    return (t / cfg_.refresh_period_us + 1) * cfg_.refresh_period_us;
  }

  CoordinatorConfig cfg_;
  CoordinatorLog& log_;
  NowFn now_;
  SendFn send_;
  TraceLog* trace_;

  bool started_ = false;
  std::uint64_t log_seq_ = 0;
  std::uint64_t next_tick_ = 0;
  std::map<ObjectId, MemberState> members_;
  std::vector<RollbackPlan> plans_;  // plans_[i].failure_seq == i + 1
  BoundarySummary boundary_;
  bool boundary_valid_ = false;
  std::set<ObjectId> collecting_;               // members owing a census after restart
  std::map<ObjectId, QueuedRejoin> rejoin_queue_;  // rejoins arrived during collection
};

}  // namespace dse
