#pragma once

// Speculative key-value service whose snapshots prove action atomicity: every
// put bumps both the key's write counter and a global one inside the same
// action, so any snapshot of a partially applied action would break
// total == sum(per-key writes). The invariant is checked on every capture and
// on every apply, which covers each persisted snapshot and each recovery.
// Puts dedup by (session, seq) exactly like the counter service.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>

#include "dse/core.hpp"
#include "dse/sim/harness.hpp"

namespace dse::services {

class KVService {
 public:
  KVService(sim::Cluster& c, ObjectId id) : c_(&c), id_(id) {}

  sim::ServiceHooks hooks() {
    sim::ServiceHooks h;
    h.capture = [this] { return capture(); };
    h.apply = [this](const Bytes* b) { apply(b); };
    h.on_request = [this](ObjectId from, std::uint64_t rpc, Bytes payload) {
      if (rpc != 0) handle(from, rpc, payload);
    };
    return h;
  }

  ObjectId id() const { return id_; }
  std::uint64_t total_writes() const { return total_writes_; }

  const std::string* lookup(const std::string& key) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? nullptr : &it->second.first;
  }

  // -- wire format ----------------------------------------------------------

  static Bytes encode_put(const Header& h, std::uint64_t session, std::uint64_t seq,
                          const std::string& key, const std::string& value) {
    ByteWriter w;
    w.u8(1);
    w.bytes(encode_header(h));
    w.u64(session);
    w.u64(seq);
    put_str(w, key);
    put_str(w, value);
    return w.take();
  }

  static Bytes encode_get(const Header& h, const std::string& key) {
    ByteWriter w;
    w.u8(2);
    w.bytes(encode_header(h));
    put_str(w, key);
    return w.take();
  }

  struct Reply {
    bool ok = false;
    Header header;
    bool found = false;
    std::string value;
  };

  static Reply decode_reply(const Bytes& b) {
    ByteReader r(b);
    Reply out;
    std::uint8_t status = r.u8("kv reply status");
    out.ok = status == 1;
    if (out.ok) {
      out.header = decode_header(r.bytes("kv reply header"));
      out.found = r.u8("kv reply found") == 1;
      if (out.found) out.value = get_str(r, "kv reply value");
    }
    r.expect_end("kv reply");
    return out;
  }

  // Throws on a torn snapshot; the atomicity property in machine-checkable
  // form.
  static void check_snapshot(const Bytes& b) {
    ByteReader r(b);
    std::uint64_t total = r.u64("kv snapshot total");
    std::uint32_t n = r.u32("kv snapshot count");
    std::uint64_t sum = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
      (void)get_str(r, "kv snapshot key");
      (void)get_str(r, "kv snapshot value");
      sum += r.u64("kv snapshot writes");
    }
    std::uint32_t s = r.u32("kv snapshot sessions");
    for (std::uint32_t i = 0; i < s; ++i) {
      (void)r.u64("kv snapshot session");
      (void)r.u64("kv snapshot seq");
    }
    r.expect_end("kv snapshot");
    if (total != sum) throw Error("kv snapshot: write counters disagree, torn action");
  }

 private:
  void handle(ObjectId from, std::uint64_t rpc, const Bytes& payload) {
    StateObjectRuntime& rt = c_->rt(id_);
    if (!rt.connected()) return;
    ByteReader r(payload);
    std::uint8_t op = r.u8("kv op");
    Header h = decode_header(r.bytes("kv header"));
    std::function<void()> run;
    if (op == 1) {
      std::uint64_t session = r.u64("kv put session");
      std::uint64_t seq = r.u64("kv put seq");
      std::string key = get_str(r, "kv put key");
      std::string value = get_str(r, "kv put value");
      r.expect_end("kv put");
      run = [this, from, rpc, session, seq, key, value] {
        std::uint64_t& last = sessions_[session];
        if (seq > last) {
          auto& slot = kv_[key];
          slot.first = value;
          slot.second += 1;
          total_writes_ += 1;
          last = seq;
        }
        Header ticket = c_->rt(id_).end_action();
        ByteWriter w;
        w.u8(1);
        w.bytes(encode_header(ticket));
        w.u8(0);  // puts return no value
        c_->respond(id_, from, rpc, w.take());
      };
    } else if (op == 2) {
      std::string key = get_str(r, "kv get key");
      r.expect_end("kv get");
      run = [this, from, rpc, key] {
        const std::string* v = lookup(key);
        Header ticket = c_->rt(id_).end_action();
        ByteWriter w;
        w.u8(1);
        w.bytes(encode_header(ticket));
        w.u8(v != nullptr ? 1 : 0);
        if (v != nullptr) put_str(w, *v);
        c_->respond(id_, from, rpc, w.take());
      };
    } else {
      throw Error("kv: unknown op");
    }
    auto done = [this, from, rpc, run](StartStatus s) {
      if (s == StartStatus::Entered)
        run();
      else if (s == StartStatus::Rejected)
        respond_rejected(from, rpc);
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
    w.u64(total_writes_);
    w.u32(static_cast<std::uint32_t>(kv_.size()));
    for (const auto& [k, v] : kv_) {
      put_str(w, k);
      put_str(w, v.first);
      w.u64(v.second);
    }
    w.u32(static_cast<std::uint32_t>(sessions_.size()));
    for (const auto& [k, seq] : sessions_) {
      w.u64(k);
      w.u64(seq);
    }
    Bytes out = w.take();
    check_snapshot(out);
    return out;
  }

  void apply(const Bytes* b) {
    kv_.clear();
    sessions_.clear();
    total_writes_ = 0;
    if (b == nullptr) return;
    check_snapshot(*b);
    ByteReader r(*b);
    total_writes_ = r.u64("kv snapshot total");
    std::uint32_t n = r.u32("kv snapshot count");
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string key = get_str(r, "kv snapshot key");
      std::string value = get_str(r, "kv snapshot value");
      std::uint64_t writes = r.u64("kv snapshot writes");
      kv_.emplace(key, std::make_pair(value, writes));
    }
    std::uint32_t s = r.u32("kv snapshot sessions");
    for (std::uint32_t i = 0; i < s; ++i) {
      std::uint64_t k = r.u64("kv snapshot session");
      sessions_[k] = r.u64("kv snapshot seq");
    }
  }

  static void put_str(ByteWriter& w, const std::string& s) {
    w.u32(static_cast<std::uint32_t>(s.size()));
    w.raw(s.data(), s.size());
  }

  static std::string get_str(ByteReader& r, const char* what) {
    Bytes b = r.bytes(what);
    return std::string(b.begin(), b.end());
  }

  sim::Cluster* c_;
  ObjectId id_;
  std::map<std::string, std::pair<std::string, std::uint64_t>> kv_;  // value, writes
  std::map<std::uint64_t, std::uint64_t> sessions_;                  // session -> last seq
  std::uint64_t total_writes_ = 0;
};

// Blind-retry-safe put, mirroring session_add's convention.
inline sim::Task<bool> session_put(sim::Cluster& c, ObjectId self, ObjectId svc, SThread& t,
                                   std::uint64_t session, std::uint64_t seq,
                                   const std::string& key, const std::string& value,
                                   std::uint64_t timeout_us, int attempts = 50) {
  for (int i = 0; i < attempts; ++i) {
    Header req = c.rt(self).sthread_header(t);
    auto resp =
        co_await c.call(self, svc, KVService::encode_put(req, session, seq, key, value),
                        timeout_us)
            .wait(c.domain(self));
    if (!resp) continue;
    KVService::Reply rep = KVService::decode_reply(*resp);
    if (!rep.ok) {
      if (c.rt(self).world() > t.world) co_return false;  // thread left behind
      co_await sim::sleep_for(c.domain(self), 2'000);
      continue;
    }
    co_return c.rt(self).sthread_receive(t, rep.header);
  }
  co_return false;
}

}  // namespace dse::services
