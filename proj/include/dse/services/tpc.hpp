#pragma once

// Two-phase commit where the decision latency hides behind speculation. Both
// roles keep an append-only state log; the protocol only ever logs (there are
// no data operations), which isolates the commit/abort machinery for study.
//
//   participant log: TxStart(tx) | Prepared(tx, vote) | Commit(tx) | Abort(tx)
//   decider log:     Decision(tx, commit)
//
// Speculative mode replies to every request straight out of the action and
// lets the client's single final barrier settle the whole transaction.
// Baseline mode is classic presumed-nothing 2PC: each reply waits for the
// replier's own record to commit first (reply-after-own-barrier per hop).
//
// Safety never depends on the mode: a participant votes yes only while
// TxStart is in its live log, and the decider's Decision action absorbs the
// vote headers, so a committed decision carries edges to every Prepared
// version (which, by the per-object prefix rule, cover the TxStarts under
// them). Cut closure then makes "Commit survives but some TxStart rolled
// back" impossible. Abort needs no edges; aborting is always safe.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "dse/core.hpp"
#include "dse/services/spec_log.hpp"
#include "dse/sim/harness.hpp"

namespace dse::services {

class TpcParticipant {
 public:
  TpcParticipant(sim::Cluster& c, ObjectId id, bool speculative)
      : c_(&c),
        id_(id),
        speculative_(speculative),
        log_(c.persist_defer(), [&c] { return c.now(); }, &c.trace(), id) {
    log_.set_on_reset([this] { rebuild(); });
  }

  sim::ServiceHooks hooks() {
    sim::ServiceHooks h;
    h.backend = &log_;
    h.on_request = [this](ObjectId from, std::uint64_t rpc, Bytes payload) {
      handle(from, rpc, payload);  // decisions arrive one-way with rpc 0
    };
    h.on_crash = [this] { log_.crash(); };
    return h;
  }

  ObjectId id() const { return id_; }
  SpecLog& log() { return log_; }

  bool started(std::uint64_t tx) const {
    auto it = index_.find(tx);
    return it != index_.end() && it->second.started;
  }
  std::optional<bool> decision(std::uint64_t tx) const {
    auto it = index_.find(tx);
    return it == index_.end() ? std::nullopt : it->second.decided;
  }

  // -- wire format ----------------------------------------------------------

  static Bytes encode_txstart(const Header& h, std::uint64_t tx) {
    return encode_req(1, h, tx);
  }
  static Bytes encode_prepare(const Header& h, std::uint64_t tx) {
    return encode_req(2, h, tx);
  }
  static Bytes encode_decision(const Header& h, std::uint64_t tx, bool commit) {
    ByteWriter w;
    w.u8(3);
    w.bytes(encode_header(h));
    w.u64(tx);
    w.u8(commit ? 1 : 0);
    return w.take();
  }

  struct Ack {
    bool ok = false;
    Header header;
  };

  static Ack decode_ack(const Bytes& b) {
    ByteReader r(b);
    Ack out;
    out.ok = r.u8("tpc ack status") == 1;
    if (out.ok) out.header = decode_header(r.bytes("tpc ack header"));
    r.expect_end("tpc ack");
    return out;
  }

  struct Vote {
    bool ok = false;
    bool yes = false;
    Header header;
  };

  static Vote decode_vote(const Bytes& b) {
    ByteReader r(b);
    Vote out;
    out.ok = r.u8("tpc vote status") == 1;
    if (out.ok) {
      out.yes = r.u8("tpc vote") == 1;
      out.header = decode_header(r.bytes("tpc vote header"));
    }
    r.expect_end("tpc vote");
    return out;
  }

  // Decodes one participant log record; shared with the log oracles.
  struct Record {
    std::uint8_t kind = 0;  // 1 TxStart, 2 Prepared, 3 Commit, 4 Abort
    std::uint64_t tx = 0;
    bool vote = false;  // Prepared only
  };

  static Record decode_record(const Bytes& b) {
    ByteReader r(b);
    Record rec;
    rec.kind = r.u8("tpc record kind");
    rec.tx = r.u64("tpc record tx");
    if (rec.kind == 2) rec.vote = r.u8("tpc record vote") == 1;
    if (rec.kind == 0 || rec.kind > 4) throw Error("tpc participant log: unknown record kind");
    r.expect_end("tpc record");
    return rec;
  }

 private:
  struct TxState {
    bool started = false;
    std::optional<bool> vote;
    std::optional<bool> decided;
  };

  static Bytes encode_req(std::uint8_t op, const Header& h, std::uint64_t tx) {
    ByteWriter w;
    w.u8(op);
    w.bytes(encode_header(h));
    w.u64(tx);
    return w.take();
  }

  static Bytes rec_plain(std::uint8_t kind, std::uint64_t tx) {
    ByteWriter w;
    w.u8(kind);
    w.u64(tx);
    return w.take();
  }

  static Bytes rec_prepared(std::uint64_t tx, bool vote) {
    ByteWriter w;
    w.u8(2);
    w.u64(tx);
    w.u8(vote ? 1 : 0);
    return w.take();
  }

  void apply_record(const Bytes& b) {
    Record rec = decode_record(b);
    TxState& st = index_[rec.tx];
    switch (rec.kind) {
      case 1: st.started = true; break;
      case 2: st.vote = rec.vote; break;
      case 3: st.decided = true; break;
      case 4: st.decided = false; break;
    }
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

  void handle(ObjectId from, std::uint64_t rpc, const Bytes& payload) {
    ByteReader r(payload);
    std::uint8_t op = r.u8("tpc op");
    Header h = decode_header(r.bytes("tpc header"));
    std::uint64_t tx = r.u64("tpc tx");
    std::function<void()> run;
    if (op == 1) {
      r.expect_end("tpc txstart");
      if (rpc == 0) return;
      run = [this, from, rpc, tx] {
        if (!index_[tx].started) append(rec_plain(1, tx));
        Header tk = c_->rt(id_).end_action();
        if (speculative_)
          respond_ack(from, rpc, tk);
        else
          c_->spawn_on(id_, settle_then([this, from, rpc](const Header& done) {
                         respond_ack(from, rpc, done);
                       }, tk));
      };
    } else if (op == 2) {
      r.expect_end("tpc prepare");
      if (rpc == 0) return;
      run = [this, from, rpc, tx] {
        TxState& st = index_[tx];
        bool yes = st.vote ? *st.vote : st.started;
        if (!st.vote) append(rec_prepared(tx, yes));
        Header tk = c_->rt(id_).end_action();
        if (speculative_)
          respond_vote(from, rpc, yes, tk);
        else
          c_->spawn_on(id_, settle_then([this, from, rpc, yes](const Header& done) {
                         respond_vote(from, rpc, yes, done);
                       }, tk));
      };
    } else if (op == 3) {
      bool commit = r.u8("tpc decision") == 1;
      r.expect_end("tpc decision");
      run = [this, tx, commit] {
        if (!index_[tx].decided) append(rec_plain(commit ? 3 : 4, tx));
        c_->rt(id_).end_action();
      };
    } else {
      throw Error("tpc participant: unknown op");
    }
    StateObjectRuntime& rt = c_->rt(id_);
    if (!rt.connected()) return;
    auto done = [this, from, rpc, op, run](StartStatus s) {
      if (s == StartStatus::Entered)
        run();
      else if (s == StartStatus::Rejected && op != 3 && rpc != 0)
        respond_rejected(from, rpc);
    };
    StartStatus st = rt.start_action(&h, done);
    if (st != StartStatus::Deferred) done(st);
  }

  // Waits for the ticket's version to commit, then hands back a clean header.
  sim::Task<> settle_then(std::function<void(const Header&)> reply, Header tk) {
    try {
      StateObjectRuntime& rt = c_->rt(id_);
      SThread s = rt.detach();
      if (!rt.sthread_receive(s, tk)) co_return;
      if (co_await sim::await_barrier(*c_, id_, s) != BarrierStatus::Released) co_return;
      reply(c_->rt(id_).sthread_header(s));
    } catch (const RolledBack&) {
      // no reply; the requester retries against the new world
    }
  }

  void respond_ack(ObjectId to, std::uint64_t rpc, const Header& h) {
    ByteWriter w;
    w.u8(1);
    w.bytes(encode_header(h));
    c_->respond(id_, to, rpc, w.take());
  }

  void respond_vote(ObjectId to, std::uint64_t rpc, bool yes, const Header& h) {
    ByteWriter w;
    w.u8(1);
    w.u8(yes ? 1 : 0);
    w.bytes(encode_header(h));
    c_->respond(id_, to, rpc, w.take());
  }

  void respond_rejected(ObjectId to, std::uint64_t rpc) {
    ByteWriter w;
    w.u8(2);
    c_->respond(id_, to, rpc, w.take());
  }

  sim::Cluster* c_;
  ObjectId id_;
  bool speculative_;
  SpecLog log_;
  std::map<std::uint64_t, TxState> index_;  // volatile view of the log
};

class TpcDecider {
 public:
  TpcDecider(sim::Cluster& c, ObjectId id, std::vector<ObjectId> participants, bool speculative,
             std::uint64_t vote_timeout_us = 30'000)
      : c_(&c),
        id_(id),
        participants_(std::move(participants)),
        speculative_(speculative),
        vote_timeout_us_(vote_timeout_us),
        log_(c.persist_defer(), [&c] { return c.now(); }, &c.trace(), id) {
    log_.set_on_reset([this] { rebuild(); });
  }

  sim::ServiceHooks hooks() {
    sim::ServiceHooks h;
    h.backend = &log_;
    h.on_request = [this](ObjectId from, std::uint64_t rpc, Bytes payload) {
      if (rpc != 0) handle(from, rpc, payload);
    };
    h.on_crash = [this] {
      log_.crash();
      waiters_.clear();
      headers_.clear();
      driving_.clear();
    };
    return h;
  }

  ObjectId id() const { return id_; }
  SpecLog& log() { return log_; }

  std::optional<bool> decision(std::uint64_t tx) const {
    auto it = decided_.find(tx);
    return it == decided_.end() ? std::nullopt : std::optional<bool>(it->second);
  }

  // -- wire format ----------------------------------------------------------

  static Bytes encode_decide(const Header& h, std::uint64_t tx) {
    ByteWriter w;
    w.u8(1);
    w.bytes(encode_header(h));
    w.u64(tx);
    return w.take();
  }

  struct Reply {
    bool ok = false;
    bool commit = false;
    Header header;
  };

  static Reply decode_reply(const Bytes& b) {
    ByteReader r(b);
    Reply out;
    out.ok = r.u8("tpc decide status") == 1;
    if (out.ok) {
      out.commit = r.u8("tpc decide flag") == 1;
      out.header = decode_header(r.bytes("tpc decide header"));
    }
    r.expect_end("tpc decide reply");
    return out;
  }

  struct Record {
    std::uint64_t tx = 0;
    bool commit = false;
  };

  static Record decode_record(const Bytes& b) {
    ByteReader r(b);
    if (r.u8("tpc decision kind") != 1) throw Error("tpc decider log: unknown record kind");
    Record rec;
    rec.tx = r.u64("tpc decision tx");
    rec.commit = r.u8("tpc decision flag") == 1;
    r.expect_end("tpc decision record");
    return rec;
  }

 private:
  static Bytes rec_decision(std::uint64_t tx, bool commit) {
    ByteWriter w;
    w.u8(1);
    w.u64(tx);
    w.u8(commit ? 1 : 0);
    return w.take();
  }

  void apply_record(const Bytes& b) {
    Record rec = decode_record(b);
    decided_[rec.tx] = rec.commit;
  }

  void rebuild() {
    decided_.clear();
    for (const SpecLog::Entry& e : log_.entries())
      if (!e.commit) apply_record(e.data);
  }

  void append(Bytes record) {
    apply_record(record);
    log_.append(std::move(record));
  }

  void handle(ObjectId from, std::uint64_t rpc, const Bytes& payload) {
    ByteReader r(payload);
    if (r.u8("tpc decide op") != 1) throw Error("tpc decider: unknown op");
    Header h = decode_header(r.bytes("tpc decide header"));
    std::uint64_t tx = r.u64("tpc decide tx");
    r.expect_end("tpc decide request");
    waiters_[tx].push_back({from, rpc});
    headers_[tx] = h;  // a retry refreshes the speculation metadata
    if (driving_.insert(tx).second) c_->spawn_on(id_, drive(tx));
  }

  sim::Task<> drive(std::uint64_t tx) {
    for (int i = 0; i < 50; ++i) {
      bool settled = false;
      try {
        settled = co_await attempt(tx);
      } catch (const RolledBack&) {
        // stale speculation; retry from the logged state
      }
      if (settled) break;
      co_await c_->progress_event().wait(c_->domain(id_));
    }
    driving_.erase(tx);
    headers_.erase(tx);
  }

  sim::Task<bool> attempt(std::uint64_t tx) {
    // Already decided (possibly in a previous life): re-announce and re-reply
    // under a fresh ticket; the logged outcome is immutable.
    if (auto it = decided_.find(tx); it != decided_.end()) {
      bool commit = it->second;
      if (!co_await sim::enter_action(*c_, id_, nullptr)) co_return false;
      Header tk = c_->rt(id_).end_action();
      co_return co_await announce(tx, commit, tk);
    }

    auto hit = headers_.find(tx);
    if (hit == headers_.end()) co_return true;  // no live request to satisfy
    Header ch = hit->second;
    StateObjectRuntime& rt = c_->rt(id_);
    SThread s = rt.detach();
    if (!rt.sthread_receive(s, ch)) {
      reply_rejected(tx);  // dead-world request; the client retries
      co_return true;
    }

    // Phase one: collect votes in parallel. Every failure mode means abort.
    std::vector<sim::Future<std::optional<Bytes>>> fs;
    Header ph = rt.sthread_header(s);
    fs.reserve(participants_.size());
    for (ObjectId p : participants_)
      fs.push_back(c_->call(id_, p, TpcParticipant::encode_prepare(ph, tx), vote_timeout_us_));
    bool all_yes = true;
    for (auto& f : fs) {
      std::optional<Bytes> resp = co_await f.wait(c_->domain(id_));
      if (!resp) {
        all_yes = false;
        continue;
      }
      TpcParticipant::Vote v = TpcParticipant::decode_vote(*resp);
      if (!v.ok || !v.yes || !c_->rt(id_).sthread_receive(s, v.header)) all_yes = false;
    }

    // Phase two: one action decides, absorbing the vote dependencies so a
    // commit record carries its safety edges. If the thread died we can still
    // always abort.
    if (!co_await sim::enter_action(*c_, id_, nullptr)) co_return false;
    StateObjectRuntime& rt2 = c_->rt(id_);
    bool absorbed = false;
    try {
      absorbed = rt2.absorb(s);
    } catch (const RolledBack&) {
      // decide abort below with the action still open
    }
    if (decided_.count(tx)) {  // unreachable under the single-driver guard
      rt2.end_action();
      co_return false;
    }
    bool commit = all_yes && absorbed;
    append(rec_decision(tx, commit));
    Header tk = rt2.end_action();
    co_return co_await announce(tx, commit, tk);
  }

  // Sends the decision to the participants and the waiting clients. Baseline
  // first settles the decision's own durability, so the announced header
  // carries no speculation.
  sim::Task<bool> announce(std::uint64_t tx, bool commit, Header tk) {
    if (!speculative_) {
      StateObjectRuntime& rt = c_->rt(id_);
      SThread s = rt.detach();
      if (!rt.sthread_receive(s, tk)) co_return false;
      if (co_await sim::await_barrier(*c_, id_, s) != BarrierStatus::Released) co_return false;
      tk = c_->rt(id_).sthread_header(s);
    }
    for (ObjectId p : participants_)
      c_->post(id_, p, TpcParticipant::encode_decision(tk, tx, commit));
    ByteWriter w;
    w.u8(1);
    w.u8(commit ? 1 : 0);
    w.bytes(encode_header(tk));
    flush_waiters(tx, w.take());
    co_return true;
  }

  void reply_rejected(std::uint64_t tx) {
    ByteWriter w;
    w.u8(2);
    flush_waiters(tx, w.take());
  }

  void flush_waiters(std::uint64_t tx, const Bytes& reply) {
    auto it = waiters_.find(tx);
    if (it == waiters_.end()) return;
    for (const auto& [from, rpc] : it->second) c_->respond(id_, from, rpc, reply);
    waiters_.erase(it);
  }

  sim::Cluster* c_;
  ObjectId id_;
  std::vector<ObjectId> participants_;
  bool speculative_;
  std::uint64_t vote_timeout_us_;
  SpecLog log_;

  std::map<std::uint64_t, bool> decided_;  // volatile view of the log
  std::map<std::uint64_t, std::vector<std::pair<ObjectId, std::uint64_t>>> waiters_;
  std::map<std::uint64_t, Header> headers_;
  std::set<std::uint64_t> driving_;
};

enum class TxStatus : std::uint8_t { Committed, Aborted, Unsettled };

// One end-to-end transaction: announce TxStart everywhere, ask the decider
// for an outcome, then settle the accumulated speculation with one barrier.
// Unsettled means the client could not confirm either way; the logs still
// hold a single consistent outcome for the tx id.
inline sim::Task<TxStatus> run_transaction(sim::Cluster& c, ObjectId self, ObjectId decider,
                                           const std::vector<ObjectId>& participants,
                                           std::uint64_t tx, std::uint64_t timeout_us) {
  try {
    StateObjectRuntime& rt = c.rt(self);
    SThread t = rt.detach();
    Header h = rt.sthread_header(t);
    std::vector<sim::Future<std::optional<Bytes>>> fs;
    fs.reserve(participants.size());
    for (ObjectId p : participants)
      fs.push_back(c.call(self, p, TpcParticipant::encode_txstart(h, tx), timeout_us));
    for (auto& f : fs) {
      std::optional<Bytes> resp = co_await f.wait(c.domain(self));
      if (!resp) co_return TxStatus::Unsettled;
      TpcParticipant::Ack ack = TpcParticipant::decode_ack(*resp);
      if (!ack.ok || !c.rt(self).sthread_receive(t, ack.header)) co_return TxStatus::Unsettled;
    }
    std::optional<Bytes> resp =
        co_await c.call(self, decider, TpcDecider::encode_decide(c.rt(self).sthread_header(t), tx),
                        timeout_us)
            .wait(c.domain(self));
    if (!resp) co_return TxStatus::Unsettled;
    TpcDecider::Reply rep = TpcDecider::decode_reply(*resp);
    if (!rep.ok || !c.rt(self).sthread_receive(t, rep.header)) co_return TxStatus::Unsettled;
    if (co_await sim::await_barrier(c, self, t) != BarrierStatus::Released)
      co_return TxStatus::Unsettled;
    co_return rep.commit ? TxStatus::Committed : TxStatus::Aborted;
  } catch (const RolledBack&) {
    co_return TxStatus::Unsettled;
  }
}

}  // namespace dse::services
