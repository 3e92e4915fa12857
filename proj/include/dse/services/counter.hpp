#pragma once

// Speculative counter service: one signed value plus a per-session dedup
// table, both inside the captured state so they roll back together. Requests
// carry (session, seq, amount); a session's requests must be issued one at a
// time with increasing seq, which lets blind retries hit the dedup table and
// get the cached result instead of double-applying. A dedup hit still runs an
// action, because the reply ticket must cover the caller's observed header
// and the service's current version.

#include <cstdint>
#include <map>
#include <optional>
#include <utility>

#include "dse/core.hpp"
#include "dse/sim/harness.hpp"

namespace dse::services {

class CounterService {
 public:
  CounterService(sim::Cluster& c, ObjectId id) : c_(&c), id_(id) {}

  sim::ServiceHooks hooks() {
    sim::ServiceHooks h;
    h.capture = [this] { return capture(); };
    h.apply = [this](const Bytes* b) { apply(b); };
    h.on_request = [this](ObjectId from, std::uint64_t rpc, Bytes payload) {
      if (rpc != 0) handle(from, rpc, payload);
    };
    return h;
  }

  std::int64_t value() const { return value_; }
  ObjectId id() const { return id_; }

  // -- wire format ----------------------------------------------------------

  static Bytes encode_add(const Header& h, std::uint64_t session, std::uint64_t seq,
                          std::int64_t amount) {
    ByteWriter w;
    w.bytes(encode_header(h));
    w.u64(session);
    w.u64(seq);
    w.u64(static_cast<std::uint64_t>(amount));
    return w.take();
  }

  struct Reply {
    bool ok = false;
    Header header;
    std::int64_t value = 0;
  };

  static Reply decode_reply(const Bytes& b) {
    ByteReader r(b);
    Reply out;
    out.ok = r.u8("counter reply status") == 1;
    if (out.ok) {
      out.header = decode_header(r.bytes("counter reply header"));
      out.value = static_cast<std::int64_t>(r.u64("counter reply value"));
    }
    r.expect_end("counter reply");
    return out;
  }

 private:
  void handle(ObjectId from, std::uint64_t rpc, const Bytes& payload) {
    StateObjectRuntime& rt = c_->rt(id_);
    if (!rt.connected()) return;  // reconnecting; the caller's timeout retries
    ByteReader r(payload);
    Header h = decode_header(r.bytes("counter add header"));
    std::uint64_t session = r.u64("counter add session");
    std::uint64_t seq = r.u64("counter add seq");
    auto amount = static_cast<std::int64_t>(r.u64("counter add amount"));
    r.expect_end("counter add");
    auto run = [this, from, rpc, session, seq, amount] {
      std::optional<std::int64_t> out;
      auto& s = sessions_[session];
      if (seq > s.first) {
        value_ += amount;
        s = {seq, value_};
        out = value_;
      } else if (seq == s.first) {
        out = s.second;  // retry of the last request: cached result
      }
      Header ticket = c_->rt(id_).end_action();
      if (!out.has_value()) {
        respond_rejected(from, rpc);  // seq from an abandoned past; discard
        return;
      }
      ByteWriter w;
      w.u8(1);
      w.bytes(encode_header(ticket));
      w.u64(static_cast<std::uint64_t>(*out));
      c_->respond(id_, from, rpc, w.take());
    };
    auto done = [this, from, rpc, run](StartStatus s) {
      if (s == StartStatus::Entered)
        run();
      else if (s == StartStatus::Rejected)
        respond_rejected(from, rpc);
      // Refused: dropped, the caller's timeout retries.
    };
    StartStatus st = rt.start_action(&h, done);
    if (st != StartStatus::Deferred) done(st);
  }

  void respond_rejected(ObjectId from, std::uint64_t rpc) {
    ByteWriter w;
    w.u8(2);
    c_->respond(id_, from, rpc, w.take());
  }

  Bytes capture() const {
    ByteWriter w;
    w.u64(static_cast<std::uint64_t>(value_));
    w.u32(static_cast<std::uint32_t>(sessions_.size()));
    for (const auto& [k, s] : sessions_) {
      w.u64(k);
      w.u64(s.first);
      w.u64(static_cast<std::uint64_t>(s.second));
    }
    return w.take();
  }

  void apply(const Bytes* b) {
    value_ = 0;
    sessions_.clear();
    if (b == nullptr) return;
    ByteReader r(*b);
    value_ = static_cast<std::int64_t>(r.u64("counter state value"));
    std::uint32_t n = r.u32("counter state sessions");
    for (std::uint32_t i = 0; i < n; ++i) {
      std::uint64_t k = r.u64("counter state key");
      std::uint64_t seq = r.u64("counter state seq");
      auto val = static_cast<std::int64_t>(r.u64("counter state cached"));
      sessions_.emplace(k, std::make_pair(seq, val));
    }
    r.expect_end("counter state");
  }

  sim::Cluster* c_;
  ObjectId id_;
  std::int64_t value_ = 0;
  std::map<std::uint64_t, std::pair<std::uint64_t, std::int64_t>> sessions_;
};

// One speculative add on behalf of thread t: sends until a same-world reply
// merges, retrying blind on timeouts and stale-world rejections (dedup makes
// that safe). Resolves nullopt when the reply's world has moved past t, which
// dooms the thread for this exchange: the caller re-detaches and re-reads its
// own state before trying again. Throws RolledBack if t's dependencies die.
inline sim::Task<std::optional<std::int64_t>> session_add(sim::Cluster& c, ObjectId self,
                                                          ObjectId svc, SThread& t,
                                                          std::uint64_t session, std::uint64_t seq,
                                                          std::int64_t amount,
                                                          std::uint64_t timeout_us,
                                                          int attempts = 50) {
  for (int i = 0; i < attempts; ++i) {
    Header req = c.rt(self).sthread_header(t);  // throws RolledBack when dead
    auto resp = co_await c.call(self, svc, CounterService::encode_add(req, session, seq, amount),
                                timeout_us)
                    .wait(c.domain(self));
    if (!resp) continue;  // lost or refused somewhere; retry
    CounterService::Reply rep = CounterService::decode_reply(*resp);
    if (!rep.ok) {
      // The service saw a stale world. If ours already moved past the
      // thread's, the thread can never catch up: hand back to the caller.
      // Otherwise the plan is still propagating; sleep a beat and retry.
      if (c.rt(self).world() > t.world) co_return std::nullopt;
      co_await sim::sleep_for(c.domain(self), 2'000);
      continue;
    }
    if (!c.rt(self).sthread_receive(t, rep.header)) co_return std::nullopt;
    co_return rep.value;
  }
  co_return std::nullopt;
}

}  // namespace dse::services
