#pragma once

// Saga-style workflow orchestrator over an append-only state log. A workflow
// is K counter increments on participant objects, recorded as Started /
// StepCompleted / Finished entries; the log IS the orchestrator's state, so
// after a crash the service resumes every unfinished workflow from its logged
// prefix. Exactly-once step effects come from two mechanisms working
// together:
//
//   - participants dedup steps by (session, seq) inside their own captured
//     state, so a re-sent step either re-applies (its effect rolled back with
//     the dedup entry) or returns the cached value;
//   - every StepCompleted/Finished append absorbs the driving thread's
//     dependency set into its action, so the recorded version carries edges
//     to the participant versions it relied on. Cut closure then guarantees a
//     surviving log entry never points at a rolled-back effect.
//
// The reply to the client is sent only after a barrier over everything the
// final attempt observed, so the returned ticket carries no residual
// speculation.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "dse/core.hpp"
#include "dse/services/counter.hpp"
#include "dse/services/spec_log.hpp"
#include "dse/sim/harness.hpp"

namespace dse::services {

struct WorkflowStep {
  ObjectId target = 0;
  std::int64_t amount = 0;

  bool operator==(const WorkflowStep&) const = default;
};

// Participant dedup key for one workflow's steps. Exact while orchestrator
// ids and workflow ids stay below 2^32, which scenario configs guarantee.
inline std::uint64_t workflow_session(ObjectId orchestrator, std::uint64_t wf) {
  return (orchestrator << 32) | (wf & 0xffffffffu);
}

class WorkflowService {
 public:
  WorkflowService(sim::Cluster& c, ObjectId id, std::uint64_t step_timeout_us = 50'000)
      : c_(&c),
        id_(id),
        step_timeout_us_(step_timeout_us),
        log_(c.persist_defer(), [&c] { return c.now(); }, &c.trace(), id) {
    log_.set_on_reset([this] { rebuild(); });
  }

  sim::ServiceHooks hooks() {
    sim::ServiceHooks h;
    h.backend = &log_;
    h.on_request = [this](ObjectId from, std::uint64_t rpc, Bytes payload) {
      if (rpc != 0) handle(from, rpc, payload);
    };
    h.on_boot = [this] { resume_unfinished(); };
    h.on_crash = [this] {
      log_.crash();  // fires rebuild()
      waiters_.clear();
      active_.clear();
      running_.clear();
    };
    return h;
  }

  ObjectId id() const { return id_; }
  SpecLog& log() { return log_; }

  bool finished(std::uint64_t wf) const {
    auto it = index_.find(wf);
    return it != index_.end() && it->second.finished;
  }

  // -- wire format ----------------------------------------------------------

  static Bytes encode_start(const Header& h, std::uint64_t wf,
                            const std::vector<WorkflowStep>& steps) {
    ByteWriter w;
    w.u8(1);
    w.bytes(encode_header(h));
    w.u64(wf);
    w.u32(static_cast<std::uint32_t>(steps.size()));
    for (const WorkflowStep& s : steps) {
      w.u64(s.target);
      w.u64(static_cast<std::uint64_t>(s.amount));
    }
    return w.take();
  }

  struct Reply {
    bool ok = false;
    Header header;
    std::int64_t value = 0;  // last step's counter value, 0 for empty workflows
  };

  static Reply decode_reply(const Bytes& b) {
    ByteReader r(b);
    Reply out;
    out.ok = r.u8("workflow reply status") == 1;
    if (out.ok) {
      out.header = decode_header(r.bytes("workflow reply header"));
      out.value = static_cast<std::int64_t>(r.u64("workflow reply value"));
    }
    r.expect_end("workflow reply");
    return out;
  }

 private:
  struct WfState {
    std::vector<WorkflowStep> steps;
    std::vector<std::optional<std::uint64_t>> done;  // per-step logged value
    bool finished = false;
  };

  struct Request {
    Header header;
    std::vector<WorkflowStep> steps;
  };

  // -- log records: 1 Started, 2 StepCompleted, 3 Finished -------------------

  static Bytes rec_started(std::uint64_t wf, const std::vector<WorkflowStep>& steps) {
    ByteWriter w;
    w.u8(1);
    w.u64(wf);
    w.u32(static_cast<std::uint32_t>(steps.size()));
    for (const WorkflowStep& s : steps) {
      w.u64(s.target);
      w.u64(static_cast<std::uint64_t>(s.amount));
    }
    return w.take();
  }

  static Bytes rec_step(std::uint64_t wf, std::uint32_t step, std::uint64_t value) {
    ByteWriter w;
    w.u8(2);
    w.u64(wf);
    w.u32(step);
    w.u64(value);
    return w.take();
  }

  static Bytes rec_finished(std::uint64_t wf) {
    ByteWriter w;
    w.u8(3);
    w.u64(wf);
    return w.take();
  }

  // Single mutator of the volatile index; appends and rebuilds both go
  // through it, so the index cannot drift from the log.
  void apply_record(const Bytes& b) {
    ByteReader r(b);
    std::uint8_t k = r.u8("workflow record");
    std::uint64_t wf = r.u64("workflow record wf");
    if (k == 1) {
      WfState st;
      std::uint32_t n = r.u32("workflow record steps");
      for (std::uint32_t i = 0; i < n; ++i) {
        WorkflowStep s;
        s.target = r.u64("workflow record target");
        s.amount = static_cast<std::int64_t>(r.u64("workflow record amount"));
        st.steps.push_back(s);
      }
      r.expect_end("workflow record");
      st.done.assign(st.steps.size(), std::nullopt);
      index_[wf] = std::move(st);
      return;
    }
    if (k == 2) {
      std::uint32_t step = r.u32("workflow record step");
      std::uint64_t value = r.u64("workflow record value");
      r.expect_end("workflow record");
      auto it = index_.find(wf);
      if (it == index_.end() || step >= it->second.done.size())
        throw Error("workflow log: step entry without its start");
      it->second.done[step] = value;
      return;
    }
    if (k == 3) {
      r.expect_end("workflow record");
      auto it = index_.find(wf);
      if (it == index_.end()) throw Error("workflow log: finish entry without its start");
      it->second.finished = true;
      return;
    }
    throw Error("workflow log: unknown record kind");
  }

  void rebuild() {
    index_.clear();
    for (const SpecLog::Entry& e : log_.entries())
      if (!e.commit) apply_record(e.data);
  }

  void append(Bytes record) {
    apply_record(record);
    log_.append(std::move(record));
  }

  // -- request handling -------------------------------------------------------

  void handle(ObjectId from, std::uint64_t rpc, const Bytes& payload) {
    ByteReader r(payload);
    if (r.u8("workflow op") != 1) throw Error("workflow: unknown op");
    Request req;
    req.header = decode_header(r.bytes("workflow header"));
    std::uint64_t wf = r.u64("workflow wf");
    std::uint32_t n = r.u32("workflow steps");
    for (std::uint32_t i = 0; i < n; ++i) {
      WorkflowStep s;
      s.target = r.u64("workflow target");
      s.amount = static_cast<std::int64_t>(r.u64("workflow amount"));
      req.steps.push_back(s);
    }
    r.expect_end("workflow request");
    waiters_[wf].push_back({from, rpc});
    if (!index_.count(wf)) active_[wf] = std::move(req);  // retries refresh the header
    ensure_drive(wf);
  }

  void resume_unfinished() {
    for (const auto& [wf, st] : index_)
      if (!st.finished) ensure_drive(wf);
  }

  void ensure_drive(std::uint64_t wf) {
    if (!running_.insert(wf).second) return;
    c_->spawn_on(id_, drive(wf));
  }

  sim::Task<> drive(std::uint64_t wf) {
    for (int i = 0; i < 1000; ++i) {
      bool settled = false;
      try {
        settled = co_await attempt(wf);
      } catch (const RolledBack&) {
        // the attempt's speculation died; re-read the log and go again
      }
      if (settled) break;
      co_await c_->progress_event().wait(c_->domain(id_));
    }
    running_.erase(wf);
    active_.erase(wf);
  }

  // One straight-line try at completing the workflow from its current logged
  // state. True means the workflow is settled (replied or abandoned); false
  // asks the driver to retry after the next cluster progress event.
  sim::Task<bool> attempt(std::uint64_t wf) {
    Header started_tk;
    bool fold_started = false;
    if (!index_.count(wf)) {
      auto ait = active_.find(wf);
      if (ait == active_.end()) co_return true;  // start rolled back, no request to rerun
      Request req = ait->second;
      if (!co_await sim::enter_action(*c_, id_, &req.header)) {
        reply_rejected(wf);  // dead-world request; the client retries
        co_return true;
      }
      StateObjectRuntime& rt = c_->rt(id_);
      append(rec_started(wf, req.steps));
      started_tk = rt.end_action();
      fold_started = true;
    }

    StateObjectRuntime& rt0 = c_->rt(id_);
    SThread t = rt0.detach();
    if (fold_started && !rt0.sthread_receive(t, started_tk)) co_return false;

    auto it = index_.find(wf);
    if (it == index_.end()) co_return false;
    const std::vector<WorkflowStep> steps = it->second.steps;
    std::uint64_t last_value = 0;

    for (std::uint32_t i = 0; i < steps.size(); ++i) {
      auto cur = index_.find(wf);
      if (cur == index_.end() || cur->second.done.size() != steps.size()) co_return false;
      if (cur->second.done[i]) {
        last_value = *cur->second.done[i];
        continue;
      }
      std::optional<std::int64_t> v =
          co_await session_add(*c_, id_, steps[i].target, t, workflow_session(id_, wf), i + 1,
                               steps[i].amount, step_timeout_us_);
      if (!v) co_return false;  // thread doomed or retries exhausted
      if (!co_await log_under_thread(wf, t, rec_step(wf, i, static_cast<std::uint64_t>(*v))))
        co_return false;
      last_value = static_cast<std::uint64_t>(*v);
    }

    auto cur = index_.find(wf);
    if (cur == index_.end()) co_return false;
    if (!cur->second.finished) {
      if (!co_await log_under_thread(wf, t, rec_finished(wf))) co_return false;
    }

    if (co_await sim::await_barrier(*c_, id_, t) != BarrierStatus::Released) co_return false;
    reply_done(wf, last_value, c_->rt(id_).sthread_header(t));
    co_return true;
  }

  // Append one record in an action that absorbs the thread's dependencies
  // (recording edges to every effect the record relies on), then fold the
  // action's ticket back into the thread.
  sim::Task<bool> log_under_thread(std::uint64_t wf, SThread& t, Bytes record) {
    if (!co_await sim::enter_action(*c_, id_, nullptr)) co_return false;
    StateObjectRuntime& rt = c_->rt(id_);
    bool absorbed = false;
    try {
      absorbed = index_.count(wf) && rt.absorb(t);
    } catch (const RolledBack&) {
      // close the action before the driver retries
    }
    if (!absorbed) {
      rt.end_action();
      co_return false;
    }
    append(std::move(record));
    Header tk = rt.end_action();
    co_return rt.sthread_receive(t, tk);
  }

  void reply_done(std::uint64_t wf, std::uint64_t value, const Header& h) {
    ByteWriter w;
    w.u8(1);
    w.bytes(encode_header(h));
    w.u64(value);
    Bytes reply = w.take();
    flush_waiters(wf, reply);
  }

  void reply_rejected(std::uint64_t wf) {
    ByteWriter w;
    w.u8(2);
    flush_waiters(wf, w.take());
  }

  void flush_waiters(std::uint64_t wf, const Bytes& reply) {
    auto it = waiters_.find(wf);
    if (it == waiters_.end()) return;
    for (const auto& [from, rpc] : it->second) c_->respond(id_, from, rpc, reply);
    waiters_.erase(it);
  }

  sim::Cluster* c_;
  ObjectId id_;
  std::uint64_t step_timeout_us_;
  SpecLog log_;

  std::map<std::uint64_t, WfState> index_;  // volatile view of the log
  std::map<std::uint64_t, std::vector<std::pair<ObjectId, std::uint64_t>>> waiters_;
  std::map<std::uint64_t, Request> active_;  // requests not yet in the log
  std::set<std::uint64_t> running_;          // workflows with a live driver
};

// Blind-retrying client: submits the workflow, waits for the post-barrier
// reply, and verifies it through its own barrier. Safe to re-send on any
// failure; the orchestrator dedups by workflow id.
inline sim::Task<std::optional<std::int64_t>> workflow_run(sim::Cluster& c, ObjectId self,
                                                           ObjectId orch, std::uint64_t wf,
                                                           const std::vector<WorkflowStep>& steps,
                                                           std::uint64_t timeout_us,
                                                           int attempts = 50) {
  for (int i = 0; i < attempts; ++i) {
    bool ok = false;
    std::int64_t value = 0;
    try {
      SThread t = c.rt(self).detach();
      Header h = c.rt(self).sthread_header(t);
      auto resp = co_await c.call(self, orch, WorkflowService::encode_start(h, wf, steps),
                                  timeout_us)
                      .wait(c.domain(self));
      if (resp) {
        WorkflowService::Reply rep = WorkflowService::decode_reply(*resp);
        if (rep.ok && c.rt(self).sthread_receive(t, rep.header) &&
            co_await sim::await_barrier(c, self, t) == BarrierStatus::Released) {
          ok = true;
          value = rep.value;
        }
      }
    } catch (const RolledBack&) {
      // stale speculation; retry against the new world
    }
    if (ok) co_return value;
    co_await sleep_for(c.domain(self), 1'000);
  }
  co_return std::nullopt;
}

}  // namespace dse::services
