#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "dse/core.hpp"
#include "dse/sim/harness.hpp"

using namespace dse;
using namespace dse::sim;

namespace {

// Minimal speculative service: one signed counter, requests carry the
// caller's speculation header and a delta, replies carry the action ticket
// and the new value. Not idempotent on purpose; callers that retry blind may
// double-apply, which the assertions below account for.
struct AddService {
  Cluster* c = nullptr;
  ObjectId id = 0;
  std::int64_t value = 0;

  ServiceHooks hooks() {
    ServiceHooks h;
    h.capture = [this] {
      ByteWriter w;
      w.u64(static_cast<std::uint64_t>(value));
      return w.take();
    };
    h.apply = [this](const Bytes* b) {
      if (b == nullptr) {
        value = 0;
        return;
      }
      ByteReader r(*b);
      value = static_cast<std::int64_t>(r.u64("counter state"));
      r.expect_end("counter state");
    };
    h.on_request = [this](ObjectId from, std::uint64_t rpc, Bytes payload) {
      handle(from, rpc, std::move(payload));
    };
    return h;
  }

  void handle(ObjectId from, std::uint64_t rpc, const Bytes& payload) {
    StateObjectRuntime& rt = c->rt(id);
    if (!rt.connected()) return;  // reconnecting; the caller's timeout retries
    ByteReader r(payload);
    Header h = decode_header(r.bytes("add header"));
    std::uint64_t delta = r.u64("add delta");
    r.expect_end("add request");
    auto run = [this, from, rpc, delta] {
      value += static_cast<std::int64_t>(delta);
      Header out = c->rt(id).end_action();
      ByteWriter w;
      w.bytes(encode_header(out));
      w.u64(static_cast<std::uint64_t>(value));
      c->respond(id, from, rpc, w.take());
    };
    StartStatus st = rt.start_action(&h, [run](StartStatus s) {
      if (s == StartStatus::Entered) run();
    });
    if (st == StartStatus::Entered) run();
    // Rejected and Refused drop the request; the caller retries into the
    // current world.
  }
};

ServiceHooks idle_hooks() {
  ServiceHooks h;
  h.capture = [] { return Bytes{}; };
  h.apply = [](const Bytes*) {};
  return h;
}

Bytes add_request(const Header& h, std::uint64_t delta) {
  ByteWriter w;
  w.bytes(encode_header(h));
  w.u64(delta);
  return w.take();
}

struct AddOutcome {
  BarrierStatus status = BarrierStatus::Lost;
  std::int64_t value = 0;        // replied value (speculative)
  std::uint64_t latency_us = 0;  // detach to barrier settle
};

// One client-observed increment: detach a thread, send the request until a
// same-world reply lands, then hold the barrier. Lost means the increment was
// rolled away; Released means it is durable everywhere it was observed.
Task<AddOutcome> speculative_add(Cluster& c, ObjectId self, ObjectId svc, std::uint64_t delta,
                                 std::uint64_t timeout_us) {
  std::uint64_t begin = c.now();
  for (int attempt = 0; attempt < 200; ++attempt) {
    SThread t = c.rt(self).detach();
    Header req = c.rt(self).sthread_header(t);
    auto resp = co_await c.call(self, svc, add_request(req, delta), timeout_us)
                    .wait(c.driver_domain());
    if (!resp) continue;  // lost or refused somewhere; retry fresh
    ByteReader r(*resp);
    Header out = decode_header(r.bytes("add reply"));
    auto value = static_cast<std::int64_t>(r.u64("add value"));
    r.expect_end("add reply");
    try {
      if (!c.rt(self).sthread_receive(t, out)) continue;  // world moved; retry
      BarrierStatus s = co_await await_barrier(c, self, t);
      co_return AddOutcome{s, value, c.now() - begin};
    } catch (const RolledBack&) {
      continue;  // thread died between receive and barrier; retry
    }
  }
  throw Error("speculative_add: no stable outcome after 200 attempts");
}

Task<> await_ready(Cluster& c) {
  for (;;) {
    bool ok = c.coordinator_up() && c.coordinator().boundary_ready();
    if (ok)
      for (ObjectId id : c.member_ids())
        if (!c.up(id) || !c.rt(id).connected()) ok = false;
    if (ok) co_return;
    co_await c.progress_event().wait(c.driver_domain());
  }
}

// Sent messages must be accounted for exactly once; buffered ones not at all.
void check_trace_conservation(const TraceLog& trace) {
  std::map<std::uint64_t, int> fate;  // msg id -> deliveries + drops
  std::map<std::uint64_t, std::uint64_t> sent_at;
  for (const TraceRecord& r : trace.records()) {
    if (r.tag == "send") {
      REQUIRE(sent_at.emplace(r.get_u64("id"), r.t).second);
    } else if (r.tag == "deliver" || r.tag == "drop") {
      std::uint64_t id = r.get_u64("id");
      REQUIRE(sent_at.count(id));
      REQUIRE(sent_at[id] <= r.t);
      REQUIRE(++fate[id] == 1);
    }
  }
}

}  // namespace

TEST_CASE("a configured cluster connects and serves a speculative increment") {
  SimConfig cfg;
  cfg.seed = 7;
  cfg.link = {{300, 300}, 0.0};
  Cluster c(cfg);
  AddService svc{&c, 1};
  c.add_member(1, svc.hooks());
  c.add_member(9, idle_hooks());
  c.start();

  AddOutcome got;
  bool done = false;
  c.spawn([](Cluster& cl, AddOutcome& out, bool& flag) -> Task<> {
    co_await await_ready(cl);
    out = co_await speculative_add(cl, 9, 1, 1, 50'000);
    flag = true;
  }(c, got, done));
  c.run_until(200'000);

  REQUIRE(done);
  CHECK(got.status == BarrierStatus::Released);
  CHECK(got.value == 1);
  CHECK(svc.value == 1);
  // The reply is immediate; the barrier costs one commit tick plus the
  // persist latency plus reporting, far below the 200 ms horizon.
  CHECK(got.latency_us < 60'000);
  CHECK(c.sent() == c.delivered() + c.dropped_loss() + c.dropped_down() + c.in_flight());
  check_trace_conservation(c.trace());
}

TEST_CASE("identical configs replay byte-identical traces") {
  auto run = [](std::string& text, std::int64_t& final_value) {
    SimConfig cfg;
    cfg.seed = 1234;
    cfg.link = {{100, 900}, 0.05};
    cfg.faults = {{120'000, FaultKind::CrashObject, 1}, {150'000, FaultKind::RestartObject, 1}};
    Cluster c(cfg);
    AddService svc{&c, 1};
    c.add_member(1, svc.hooks());
    c.add_member(9, idle_hooks());
    c.start();
    c.spawn([](Cluster& cl) -> Task<> {
      co_await await_ready(cl);
      for (int i = 0; i < 20; ++i) (void)co_await speculative_add(cl, 9, 1, 1, 20'000);
    }(c));
    c.run_until(500'000);
    text = c.trace().to_text();
    final_value = svc.value;
  };

  std::string t1, t2;
  std::int64_t v1 = -1, v2 = -2;
  run(t1, v1);
  run(t2, v2);
  REQUIRE(!t1.empty());
  CHECK(t1 == t2);
  CHECK(v1 == v2);
}

TEST_CASE("an idle member's restart yields a skip-everywhere recovery") {
  SimConfig cfg;
  cfg.seed = 3;
  Cluster c(cfg);
  AddService svc{&c, 1};
  c.add_member(1, svc.hooks());
  c.add_member(9, idle_hooks());
  c.start();

  AddOutcome got;
  c.spawn([](Cluster& cl, AddOutcome& out) -> Task<> {
    co_await await_ready(cl);
    out = co_await speculative_add(cl, 9, 1, 1, 50'000);
  }(c, got));
  c.run_until(100'000);
  REQUIRE(got.status == BarrierStatus::Released);
  REQUIRE(svc.value == 1);

  // The increment is durable and covered; a crash now loses nothing.
  c.crash_member(1);
  CHECK(!c.up(1));
  c.run_until(110'000);
  c.restart_member(1);
  CHECK(c.incarnation(1) == 2);

  c.spawn([](Cluster& cl) -> Task<> {
    while (cl.rt(9).world() == 0) co_await cl.progress_event().wait(cl.driver_domain());
  }(c));
  c.run_until(250'000);

  REQUIRE(c.coordinator().plans().size() == 1);
  const RollbackPlan& p = c.coordinator().plans()[0];
  for (const auto& [obj, entry] : p.entries) CHECK(entry.skip);
  CHECK(svc.value == 1);  // restored, not reset
  CHECK(c.rt(1).world() == 1);
  CHECK(c.rt(9).world() == 1);

  // The healed cluster still takes new work.
  AddOutcome again;
  c.spawn([](Cluster& cl, AddOutcome& out) -> Task<> {
    out = co_await speculative_add(cl, 9, 1, 1, 50'000);
  }(c, again));
  c.run_until(400'000);
  CHECK(again.status == BarrierStatus::Released);
  CHECK(svc.value == 2);
}

TEST_CASE("a crash before persistence rolls the speculation away") {
  SimConfig cfg;
  cfg.seed = 11;
  cfg.link = {{200, 200}, 0.0};
  // Crash shortly after the increment's reply but before its commit tick can
  // issue a persist; the restart then forces a decision that loses it.
  cfg.faults = {{52'000, FaultKind::CrashObject, 1}, {60'000, FaultKind::RestartObject, 1}};
  Cluster c(cfg);
  AddService svc{&c, 1};
  c.add_member(1, svc.hooks());
  c.add_member(9, idle_hooks());
  c.start();

  AddOutcome got;
  bool settled = false;
  c.spawn([](Cluster& cl, AddOutcome& out, bool& flag) -> Task<> {
    co_await await_ready(cl);
    co_await cl.sleep(51'000 - cl.now());  // just past a commit tick at 50 ms
    out = co_await speculative_add(cl, 9, 1, 1, 30'000);
    flag = true;
  }(c, got, settled));
  c.run_until(300'000);

  REQUIRE(settled);
  CHECK(got.status == BarrierStatus::Lost);
  REQUIRE(c.coordinator().plans().size() == 1);
  CHECK(svc.value == 0);  // the speculative increment left no durable trace
  CHECK(c.rt(1).world() == 1);

  // A fresh increment lands in the new world and survives.
  AddOutcome again;
  c.spawn([](Cluster& cl, AddOutcome& out) -> Task<> {
    out = co_await speculative_add(cl, 9, 1, 1, 50'000);
  }(c, again));
  c.run_until(500'000);
  CHECK(again.status == BarrierStatus::Released);
  CHECK(svc.value == 1);
}

TEST_CASE("calls into a downed member time out and are traced as down-drops") {
  SimConfig cfg;
  cfg.seed = 21;
  Cluster c(cfg);
  AddService svc{&c, 1};
  c.add_member(1, svc.hooks());
  c.add_member(9, idle_hooks());
  c.start();

  bool timed_out = false;
  c.spawn([](Cluster& cl, bool& flag) -> Task<> {
    co_await await_ready(cl);
    cl.crash_member(1);
    auto resp = co_await cl.call(9, 1, Bytes{1, 2, 3}, 10'000).wait(cl.driver_domain());
    flag = !resp.has_value();
  }(c, timed_out));
  c.run_until(100'000);

  CHECK(timed_out);
  CHECK(c.dropped_down() > 0);
  bool saw_down = false;
  for (const TraceRecord& r : c.trace().records())
    if (r.tag == "drop" && r.get("why") == "down") saw_down = true;
  CHECK(saw_down);
  check_trace_conservation(c.trace());
}

TEST_CASE("conservation and released barriers hold under loss and crashes") {
  SimConfig cfg;
  cfg.seed = 99;
  cfg.link = {{100, 700}, 0.10};
  cfg.faults = {{80'000, FaultKind::CrashObject, 1},
                {110'000, FaultKind::RestartObject, 1},
                {200'000, FaultKind::CrashCoordinator, 0}};
  Cluster c(cfg);
  AddService svc{&c, 1};
  c.add_member(1, svc.hooks());
  c.add_member(9, idle_hooks());
  c.start();

  int released = 0;
  int lost = 0;
  bool done = false;
  c.spawn([](Cluster& cl, int& rel, int& lst, bool& flag) -> Task<> {
    co_await await_ready(cl);
    for (int i = 0; i < 30; ++i) {
      AddOutcome out = co_await speculative_add(cl, 9, 1, 1, 15'000);
      (out.status == BarrierStatus::Released ? rel : lst) += 1;
    }
    flag = true;
  }(c, released, lost, done));
  c.run_until(900'000);

  REQUIRE(done);
  CHECK(released + lost == 30);
  CHECK(released > 0);
  // A released barrier is a durability promise that later failures cannot
  // take back; blind retries can only add to the counter.
  CHECK(svc.value >= released);
  CHECK(c.sent() == c.delivered() + c.dropped_loss() + c.dropped_down() + c.in_flight());
  CHECK(c.dropped_loss() > 0);
  check_trace_conservation(c.trace());
}

TEST_CASE("a coordinator outage heals without losing adopted progress") {
  SimConfig cfg;
  cfg.seed = 5;
  cfg.coordinator_outage_us = 40'000;
  cfg.faults = {{70'000, FaultKind::CrashCoordinator, 0}};
  Cluster c(cfg);
  AddService svc{&c, 1};
  c.add_member(1, svc.hooks());
  c.add_member(9, idle_hooks());
  c.start();

  AddOutcome before, after;
  bool done = false;
  c.spawn([](Cluster& cl, AddOutcome& b, AddOutcome& a, bool& flag) -> Task<> {
    co_await await_ready(cl);
    b = co_await speculative_add(cl, 9, 1, 1, 50'000);
    co_await cl.sleep(130'000 - cl.now());  // crash at 70 ms, restart at 110 ms
    co_await await_ready(cl);
    a = co_await speculative_add(cl, 9, 1, 1, 50'000);
    flag = true;
  }(c, before, after, done));
  c.run_until(400'000);

  REQUIRE(done);
  CHECK(before.status == BarrierStatus::Released);
  CHECK(after.status == BarrierStatus::Released);
  CHECK(svc.value == 2);
  CHECK(c.coordinator().boundary_ready());
  // Nothing was logged for the outage itself: no member failed.
  for (const ClusterEvent& ev : c.coordinator_log().events())
    CHECK(ev.kind != ClusterEvent::Kind::MemberRejoin);
  check_trace_conservation(c.trace());
}
