#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "dse/core.hpp"
#include "dse/errors.hpp"
#include "dse/oracles.hpp"
#include "dse/services/counter.hpp"
#include "dse/services/tpc.hpp"
#include "dse/services/workflow.hpp"
#include "dse/sim/harness.hpp"
#include "dse/trace.hpp"

using namespace dse;
using namespace dse::services;
using namespace dse::sim;

namespace {

ServiceHooks idle_hooks() {
  ServiceHooks h;
  h.capture = [] { return Bytes{}; };
  h.apply = [](const Bytes*) {};
  return h;
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

TraceRecord rec(std::uint64_t t, std::string tag,
                std::vector<std::pair<std::string, std::string>> kv) {
  return TraceRecord{t, std::move(tag), std::move(kv)};
}

}  // namespace

TEST_CASE("conservation flags double settlement and unknown message ids") {
  std::vector<TraceRecord> ok{
      rec(1, "send", {{"id", "1"}, {"src", "1"}, {"dst", "2"}, {"chan", "app"}, {"n", "8"}}),
      rec(2, "deliver", {{"id", "1"}, {"src", "1"}, {"dst", "2"}}),
      rec(3, "send", {{"id", "2"}, {"src", "2"}, {"dst", "1"}, {"chan", "app"}, {"n", "4"}}),
  };
  OracleResult r = check_conservation(ok);
  CHECK(r.pass);  // an unsettled send is in flight, not a violation
  CHECK(r.checked == 3);

  std::vector<TraceRecord> twice = ok;
  twice.push_back(rec(4, "deliver", {{"id", "1"}, {"src", "1"}, {"dst", "2"}}));
  r = check_conservation(twice);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation_index == 3);
  CHECK(r.violation.find("settled twice") != std::string::npos);

  std::vector<TraceRecord> orphan{
      rec(1, "drop", {{"id", "9"}, {"src", "1"}, {"dst", "2"}, {"why", "loss"}})};
  r = check_conservation(orphan);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation.find("never sent") != std::string::npos);

  std::vector<TraceRecord> rerouted{
      rec(1, "send", {{"id", "1"}, {"src", "1"}, {"dst", "2"}, {"chan", "app"}, {"n", "8"}}),
      rec(2, "deliver", {{"id", "1"}, {"src", "1"}, {"dst", "3"}}),
  };
  r = check_conservation(rerouted);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation.find("route") != std::string::npos);
}

TEST_CASE("commit ordering flags consumption above the consumer's version") {
  std::vector<TraceRecord> bad{
      rec(1, "action_start", {{"obj", "1"}, {"world", "0"}, {"ver", "3"}, {"deps", "2:0:5"}})};
  OracleResult r = check_commit_ordering(bad);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation_index == 0);
  CHECK(r.violation.find("below a consumed version") != std::string::npos);

  std::vector<TraceRecord> bad_edge{
      rec(1, "persist_issue", {{"obj", "1"}, {"world", "0"}, {"ver", "3"}, {"edges", "2:0:5"}})};
  r = check_commit_ordering(bad_edge);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation.find("edge above its own version") != std::string::npos);

  std::vector<TraceRecord> ok{
      rec(1, "action_start", {{"obj", "1"}, {"world", "0"}, {"ver", "5"}, {"deps", "2:0:5,3:0:4"}}),
      rec(2, "persist_issue", {{"obj", "1"}, {"world", "0"}, {"ver", "5"}, {"edges", "2:0:5"}}),
      rec(3, "action_start", {{"obj", "1"}, {"world", "0"}, {"ver", "6"}, {"deps", "-"}}),
  };
  r = check_commit_ordering(ok);
  CHECK(r.pass);
  CHECK(r.checked == 2);  // the bare action carries nothing to check
}

TEST_CASE("sequencing flags persist gaps and failure sequence jumps") {
  std::vector<TraceRecord> gap{
      rec(1, "connect", {{"obj", "1"}, {"inc", "1"}, {"world", "0"}, {"hwm", "0"}}),
      rec(2, "persist_issue", {{"obj", "1"}, {"world", "0"}, {"ver", "1"}, {"edges", "-"}}),
      rec(3, "persist_issue", {{"obj", "1"}, {"world", "0"}, {"ver", "3"}, {"edges", "-"}}),
  };
  OracleResult r = check_sequencing(gap);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation_index == 2);
  CHECK(r.violation.find("not consecutive") != std::string::npos);

  std::vector<TraceRecord> jump{
      rec(1, "connect", {{"obj", "1"}, {"inc", "1"}, {"world", "0"}, {"hwm", "0"}}),
      rec(2, "apply",
          {{"obj", "1"}, {"inc", "1"}, {"seq", "2"}, {"mode", "skip"}, {"target", "0"}}),
  };
  r = check_sequencing(jump);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation.find("gap") != std::string::npos);

  // A crash forgets volatile versions; the next life resumes from its durable
  // mark and may legally reissue the numbers the crash erased.
  std::vector<TraceRecord> crash_reissue{
      rec(1, "connect", {{"obj", "1"}, {"inc", "1"}, {"world", "0"}, {"hwm", "0"}}),
      rec(2, "persist_issue", {{"obj", "1"}, {"world", "0"}, {"ver", "1"}, {"edges", "-"}}),
      rec(3, "persist_issue", {{"obj", "1"}, {"world", "0"}, {"ver", "2"}, {"edges", "-"}}),
      rec(4, "crash", {{"who", "1"}, {"inc", "1"}}),
      rec(5, "connect", {{"obj", "1"}, {"inc", "2"}, {"world", "0"}, {"hwm", "1"}}),
      rec(6, "persist_issue", {{"obj", "1"}, {"world", "0"}, {"ver", "2"}, {"edges", "-"}}),
  };
  CHECK(check_sequencing(crash_reissue).pass);

  // A restore rewinds the version counter to its target.
  std::vector<TraceRecord> restore_resume{
      rec(1, "connect", {{"obj", "1"}, {"inc", "1"}, {"world", "0"}, {"hwm", "3"}}),
      rec(2, "apply",
          {{"obj", "1"}, {"inc", "1"}, {"seq", "1"}, {"mode", "restore"}, {"target", "1"}}),
      rec(3, "persist_issue", {{"obj", "1"}, {"world", "1"}, {"ver", "2"}, {"edges", "-"}}),
  };
  CHECK(check_sequencing(restore_resume).pass);

  std::vector<TraceRecord> wrong_world{
      rec(1, "connect", {{"obj", "1"}, {"inc", "1"}, {"world", "0"}, {"hwm", "0"}}),
      rec(2, "persist_issue", {{"obj", "1"}, {"world", "1"}, {"ver", "1"}, {"edges", "-"}}),
  };
  r = check_sequencing(wrong_world);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation.find("world") != std::string::npos);
}

TEST_CASE("partition flags discards and delays in the wrong direction") {
  std::vector<TraceRecord> newer_discarded{
      rec(1, "stale", {{"obj", "1"}, {"msg_world", "2"}, {"world", "1"}})};
  OracleResult r = check_partition(newer_discarded);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation.find("not from an older world") != std::string::npos);

  // Same world is only discardable when the message names rolled back versions.
  std::vector<TraceRecord> same_world_plain{
      rec(1, "stale", {{"obj", "1"}, {"msg_world", "1"}, {"world", "1"}})};
  CHECK_FALSE(check_partition(same_world_plain).pass);
  std::vector<TraceRecord> same_world_dead{
      rec(1, "stale", {{"obj", "1"}, {"msg_world", "1"}, {"world", "1"}, {"deps", "2:0:5"}})};
  CHECK(check_partition(same_world_dead).pass);

  std::vector<TraceRecord> old_delayed{
      rec(1, "defer", {{"obj", "1"}, {"msg_world", "1"}, {"world", "1"}})};
  r = check_partition(old_delayed);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation.find("not from a newer world") != std::string::npos);
  std::vector<TraceRecord> newer_delayed{
      rec(1, "defer", {{"obj", "1"}, {"msg_world", "2"}, {"world", "1"}})};
  CHECK(check_partition(newer_delayed).pass);

  std::vector<TraceRecord> ghost_world{
      rec(1, "connect", {{"obj", "1"}, {"inc", "1"}, {"world", "0"}, {"hwm", "0"}}),
      rec(2, "action_start", {{"obj", "1"}, {"world", "1"}, {"ver", "1"}, {"deps", "-"}}),
  };
  r = check_partition(ghost_world);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation.find("world the object is not in") != std::string::npos);
}

TEST_CASE("closure flags a survivor holding an edge into a removed vertex") {
  std::vector<TraceRecord> t{
      rec(10, "persist_issue", {{"obj", "2"}, {"world", "0"}, {"ver", "5"}, {"edges", "-"}}),
      rec(12, "persist_done", {{"obj", "2"}, {"world", "0"}, {"ver", "5"}}),
      rec(14, "persist_issue", {{"obj", "1"}, {"world", "0"}, {"ver", "6"}, {"edges", "2:0:5"}}),
      rec(16, "persist_done", {{"obj", "1"}, {"world", "0"}, {"ver", "6"}}),
      rec(20, "plan",
          {{"seq", "1"}, {"failed", "2"}, {"targets", "1:6s,2:4r"}, {"lost", "2:0:5"}}),
      rec(22, "apply",
          {{"obj", "2"}, {"inc", "2"}, {"seq", "1"}, {"mode", "restore"}, {"target", "4"}}),
      rec(23, "apply",
          {{"obj", "1"}, {"inc", "1"}, {"seq", "1"}, {"mode", "skip"}, {"target", "6"}}),
  };
  OracleResult r = check_closure(t);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation_index == 2);  // the surviving fragment, oldest first
  CHECK(r.violation.find("removed vertex 2:0:5") != std::string::npos);

  // The same shape is sound when the decision also removes the dependent.
  std::vector<TraceRecord> cascaded = t;
  cascaded[4] = rec(20, "plan",
                    {{"seq", "1"}, {"failed", "2"}, {"targets", "1:5r,2:4r"},
                     {"lost", "2:0:5,1:0:6"}});
  cascaded[6] = rec(23, "apply",
                    {{"obj", "1"}, {"inc", "1"}, {"seq", "1"}, {"mode", "restore"},
                     {"target", "5"}});
  CHECK(check_closure(cascaded).pass);
}

TEST_CASE("closure flags an edge into a vertex that never persisted") {
  std::vector<TraceRecord> t{
      rec(1, "persist_issue", {{"obj", "1"}, {"world", "0"}, {"ver", "1"}, {"edges", "3:0:7"}}),
      rec(2, "persist_done", {{"obj", "1"}, {"world", "0"}, {"ver", "1"}}),
  };
  OracleResult r = check_closure(t);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation_index == 0);
  CHECK(r.violation.find("never persisted") != std::string::npos);

  std::vector<TraceRecord> completed = t;
  completed.push_back(
      rec(3, "persist_issue", {{"obj", "3"}, {"world", "0"}, {"ver", "7"}, {"edges", "-"}}));
  CHECK(check_closure(completed).pass);  // order is not causal across objects
}

TEST_CASE("closure treats a crash as removing the volatile tail") {
  std::vector<TraceRecord> t{
      rec(1, "persist_issue", {{"obj", "2"}, {"world", "0"}, {"ver", "5"}, {"edges", "-"}}),
      rec(2, "persist_issue", {{"obj", "1"}, {"world", "0"}, {"ver", "6"}, {"edges", "2:0:5"}}),
      rec(3, "persist_done", {{"obj", "1"}, {"world", "0"}, {"ver", "6"}}),
      rec(4, "crash", {{"who", "2"}, {"inc", "1"}}),  // object 2's version 5 never landed
  };
  OracleResult r = check_closure(t);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation_index == 1);
  CHECK(r.violation.find("removed vertex 2:0:5") != std::string::npos);
}

TEST_CASE("barrier transparency flags released values that are rolled back") {
  std::vector<TraceRecord> decision_kills{
      rec(1, "barrier_pass", {{"obj", "1"}, {"world", "0"}, {"deps", "2:0:5"}}),
      rec(2, "plan", {{"seq", "1"}, {"failed", "2"}, {"targets", "2:4r"}, {"lost", "2:0:5"}}),
  };
  OracleResult r = check_barrier_transparency(decision_kills);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation_index == 1);
  CHECK(r.violation.find("released vertex") != std::string::npos);

  std::vector<TraceRecord> restore_below{
      rec(1, "barrier_pass", {{"obj", "1"}, {"world", "0"}, {"deps", "2:0:5"}}),
      rec(2, "apply",
          {{"obj", "2"}, {"inc", "2"}, {"seq", "1"}, {"mode", "restore"}, {"target", "4"}}),
  };
  r = check_barrier_transparency(restore_below);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation.find("below released version") != std::string::npos);

  std::vector<TraceRecord> restart_without{
      rec(1, "barrier_pass", {{"obj", "1"}, {"world", "0"}, {"deps", "2:0:5"}}),
      rec(2, "crash", {{"who", "2"}, {"inc", "1"}}),
      rec(3, "connect", {{"obj", "2"}, {"inc", "2"}, {"world", "0"}, {"hwm", "4"}}),
  };
  r = check_barrier_transparency(restart_without);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation.find("without released state") != std::string::npos);

  std::vector<TraceRecord> cut_regress{
      rec(1, "boundary", {{"epoch", "1"}, {"basis", "0"}, {"cuts", "1:5,2:3"}}),
      rec(2, "boundary", {{"epoch", "2"}, {"basis", "1"}, {"cuts", "1:4,2:3"}}),
  };
  r = check_barrier_transparency(cut_regress);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation.find("cut moved backwards") != std::string::npos);

  // Epochs restart with a recovering coordinator; cuts must not regress even
  // then.
  std::vector<TraceRecord> epoch_regress{
      rec(1, "boundary", {{"epoch", "2"}, {"basis", "0"}, {"cuts", "1:5"}}),
      rec(2, "boundary", {{"epoch", "1"}, {"basis", "0"}, {"cuts", "1:5"}}),
  };
  CHECK_FALSE(check_barrier_transparency(epoch_regress).pass);
  std::vector<TraceRecord> epoch_reset{
      rec(1, "boundary", {{"epoch", "2"}, {"basis", "0"}, {"cuts", "1:5"}}),
      rec(2, "crash", {{"who", "0"}, {"inc", "2"}}),
      rec(3, "boundary", {{"epoch", "1"}, {"basis", "0"}, {"cuts", "1:5"}}),
  };
  CHECK(check_barrier_transparency(epoch_reset).pass);

  std::vector<TraceRecord> sound{
      rec(1, "barrier_pass", {{"obj", "1"}, {"world", "0"}, {"deps", "2:0:5"}}),
      rec(2, "apply",
          {{"obj", "2"}, {"inc", "2"}, {"seq", "1"}, {"mode", "restore"}, {"target", "5"}}),
      rec(3, "apply",
          {{"obj", "2"}, {"inc", "2"}, {"seq", "2"}, {"mode", "skip"}, {"target", "3"}}),
      rec(4, "connect", {{"obj", "2"}, {"inc", "3"}, {"world", "2"}, {"hwm", "5"}}),
      rec(5, "boundary", {{"epoch", "1"}, {"basis", "0"}, {"cuts", "1:5,2:3"}}),
      rec(6, "boundary", {{"epoch", "2"}, {"basis", "2"}, {"cuts", "1:6,2:5"}}),
  };
  CHECK(check_barrier_transparency(sound).pass);
}

TEST_CASE("log prefix flags recoveries that do not match a sealed prefix") {
  std::vector<TraceRecord> mismatch{
      rec(1, "slog_commit", {{"obj", "3"}, {"ver", "1"}, {"off", "2"}, {"hash", "99"}}),
      rec(2, "slog_recover", {{"obj", "3"}, {"ver", "1"}, {"off", "2"}, {"hash", "98"}}),
  };
  OracleResult r = check_log_prefix(mismatch);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation_index == 1);
  CHECK(r.violation.find("differs from the sealed prefix") != std::string::npos);

  std::vector<TraceRecord> unsealed{
      rec(1, "slog_recover", {{"obj", "3"}, {"ver", "7"}, {"off", "4"}, {"hash", "1"}})};
  r = check_log_prefix(unsealed);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation.find("never sealed") != std::string::npos);

  std::vector<TraceRecord> stuck_frontier{
      rec(1, "slog_commit", {{"obj", "3"}, {"ver", "1"}, {"off", "2"}, {"hash", "5"}}),
      rec(2, "slog_commit", {{"obj", "3"}, {"ver", "2"}, {"off", "2"}, {"hash", "6"}}),
  };
  r = check_log_prefix(stuck_frontier);
  REQUIRE_FALSE(r.pass);
  CHECK(r.violation.find("frontier") != std::string::npos);

  // A recovery truncates later seals away; their version numbers may be
  // reused for different content afterwards.
  std::vector<TraceRecord> reuse{
      rec(1, "slog_commit", {{"obj", "3"}, {"ver", "1"}, {"off", "2"}, {"hash", "5"}}),
      rec(2, "slog_commit", {{"obj", "3"}, {"ver", "2"}, {"off", "4"}, {"hash", "6"}}),
      rec(3, "slog_recover", {{"obj", "3"}, {"ver", "1"}, {"off", "2"}, {"hash", "5"}}),
      rec(4, "slog_commit", {{"obj", "3"}, {"ver", "2"}, {"off", "4"}, {"hash", "9"}}),
      rec(5, "slog_recover", {{"obj", "3"}, {"ver", "2"}, {"off", "4"}, {"hash", "9"}}),
      rec(6, "slog_recover", {{"obj", "3"}, {"ver", "0"}, {"off", "0"}, {"hash", "7"}}),
      rec(7, "slog_commit", {{"obj", "3"}, {"ver", "1"}, {"off", "1"}, {"hash", "8"}}),
  };
  CHECK(check_log_prefix(reuse).pass);
}

TEST_CASE("oracles reject malformed traces instead of guessing") {
  std::vector<TraceRecord> missing_key{rec(1, "action_start", {{"obj", "1"}, {"world", "0"}})};
  CHECK_THROWS_AS(check_commit_ordering(missing_key), MalformedTrace);
  CHECK_THROWS_AS(oracle_detail::parse_plan_targets("junk"), MalformedTrace);
  CHECK_THROWS_AS(parse_trace_line("no time field here"), MalformedTrace);
}

TEST_CASE("all oracles pass on a workflow run with orchestrator and coordinator crashes") {
  SimConfig cfg;
  cfg.seed = 11;
  cfg.link = {{200, 400}, 0.01};
  cfg.faults = {{48'000, FaultKind::CrashObject, 2},
                {70'000, FaultKind::RestartObject, 2},
                {160'000, FaultKind::CrashCoordinator, 0}};
  Cluster c(cfg);
  c.add_member(1, idle_hooks());
  WorkflowService orch(c, 2);
  c.add_member(2, orch.hooks());
  CounterService first(c, 3);
  c.add_member(3, first.hooks());
  CounterService second(c, 4);
  c.add_member(4, second.hooks());
  c.start();

  std::optional<std::int64_t> got1, got2;
  bool done = false;
  c.spawn([](Cluster& cl, std::optional<std::int64_t>& a, std::optional<std::int64_t>& b,
             bool& flag) -> Task<> {
    co_await await_ready(cl);
    std::vector<WorkflowStep> steps{{3, 10}, {4, 20}, {3, 3}};
    a = co_await workflow_run(cl, 1, 2, 1, steps, 150'000);
    b = co_await workflow_run(cl, 1, 2, 2, {{4, 5}}, 150'000);
    flag = true;
  }(c, got1, got2, done));
  c.run_until(2'500'000);

  REQUIRE(done);
  REQUIRE(got1.has_value());
  CHECK(*got1 == 13);
  REQUIRE(got2.has_value());
  CHECK(*got2 == 25);

  std::vector<OracleResult> results = run_all_oracles(c.trace().records());
  for (const OracleResult& r : results) {
    INFO(oracle_report_line(r));
    CHECK(r.pass);
    CHECK(r.checked > 0);
  }

  // The text form round-trips, so checking a written trace checks this run.
  std::vector<TraceRecord> reparsed = TraceLog::parse_text(c.trace().to_text());
  REQUIRE(reparsed == c.trace().records());
  CHECK(all_pass(run_all_oracles(reparsed)));
}

TEST_CASE("all oracles pass on a transaction workload with participant and decider crashes") {
  SimConfig cfg;
  cfg.seed = 42;
  cfg.link = {{200, 600}, 0.02};
  cfg.faults = {{120'000, FaultKind::CrashObject, 2},
                {140'000, FaultKind::RestartObject, 2},
                {240'000, FaultKind::CrashObject, 4},
                {265'000, FaultKind::RestartObject, 4}};
  Cluster c(cfg);
  c.add_member(1, idle_hooks());
  TpcParticipant p2(c, 2, true);
  c.add_member(2, p2.hooks());
  TpcParticipant p3(c, 3, true);
  c.add_member(3, p3.hooks());
  TpcDecider dec(c, 4, {2, 3}, true);
  c.add_member(4, dec.hooks());
  c.start();

  int committed = 0;
  bool done = false;
  c.spawn([](Cluster& cl, int& commits, bool& flag) -> Task<> {
    co_await await_ready(cl);
    for (std::uint64_t tx = 1; tx <= 25; ++tx)
      if (co_await run_transaction(cl, 1, 4, {2, 3}, tx, 40'000) == TxStatus::Committed)
        ++commits;
    flag = true;
  }(c, committed, done));
  c.run_until(3'200'000);

  REQUIRE(done);
  CHECK(committed >= 1);
  std::vector<OracleResult> results = run_all_oracles(c.trace().records());
  for (const OracleResult& r : results) {
    INFO(oracle_report_line(r));
    CHECK(r.pass);
  }
}
