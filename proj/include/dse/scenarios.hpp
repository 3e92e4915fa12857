#pragma once

// Scenario catalog: reproducible workloads over the simulated cluster. A spec
// picks a topology, a client behavior, and a fault plan; run_seed executes
// one deterministic instance and returns per-request rows, summary metrics,
// the post-hoc safety checks, and the full trace. run_scenario fans out over
// the seed list and writes stable CSV / JSON / trace files.
//
// Modes. speculative: handler replies cross the wire as soon as the handler
// finishes, and the client settles all accumulated speculation with one
// barrier per request. baseline: nothing speculative ever becomes a client
// result; the chain and counter clients settle every hop before taking the
// next one, and the transaction services reply only after their own commit
// barrier. Latency is start-to-settled in both modes, so the two are directly
// comparable.
//
// Quiescence. The closure check needs a settled trace: every crashed member
// restarted and recovery finished before capture. Validation therefore
// rejects schedules that crash an object without restarting it, and each run
// ends with a drain window sized from the commit period, the persist latency,
// and the fault schedule.
//
// Determinism. One run is a pure function of (spec, seed): the simulator is
// seeded, the fault generator uses its own splitmix stream, and every output
// byte (rows, JSON, trace text) is reproducible. Seeds are independent, so
// run_scenario may execute them on parallel workers; outputs are written by
// the calling thread in seed order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dse/errors.hpp"
#include "dse/oracles.hpp"
#include "dse/services/counter.hpp"
#include "dse/services/tpc.hpp"
#include "dse/sim/harness.hpp"
#include "dse/trace.hpp"

namespace dse::scenarios {

enum class Mode : std::uint8_t { Speculative, Baseline };

inline const char* mode_name(Mode m) {
  return m == Mode::Speculative ? "speculative" : "baseline";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "speculative") return Mode::Speculative;
  if (s == "baseline") return Mode::Baseline;
  throw InvalidSpec("mode: expected speculative or baseline (got \"" + s + "\")");
}

// chain: one client drives K counter services in sequence per request.
// counter: one client drives one add per request, round-robin over K.
// tpc: closed-loop clients run transactions against P participants + decider.
// recovery-chain / recovery-tpc: same workloads with a fault schedule; when
// none is given, one is generated per seed from fault_density.
// microbench: real-transport primitive throughput; no simulated run (the
// benchmark entry point handles it), but the name validates so one spec type
// covers the whole catalog.
struct ScenarioSpec {
  std::string name = "chain";
  Mode mode = Mode::Speculative;
  int services = 3;      // K: chain/counter service count
  int participants = 4;  // P: transaction participant count
  int clients = 0;       // 0 = scenario default (chain/counter 1, tpc 8)
  std::uint64_t commit_period_us = 10'000;
  double rate_hz = 100.0;   // request starts per second (pacing floor)
  double duration_s = 2.0;  // nominal length; requests = round(rate * duration)
  std::vector<sim::Fault> faults;  // explicit schedule, strictly increasing
  double fault_density = 0.0;      // expected crashes/run when faults empty
  std::vector<std::uint64_t> seeds = {1};
  sim::LinkParams link{};
  sim::Delay persist{10'000, 10'000};
};

inline std::uint64_t planned_requests(const ScenarioSpec& s) {
  double n = s.rate_hz * s.duration_s;
  if (!(n >= 0.5)) return 1;
  return static_cast<std::uint64_t>(std::llround(n));
}

// Object ids: clients first (starting at 1), then the scenario's servers.
// Clients are never valid fault targets; killing one would tear the driver
// out of the workload rather than exercise recovery.
struct Topology {
  int clients = 1;  // ids [1, clients]
  std::vector<ObjectId> services;
  std::vector<ObjectId> participants;
  ObjectId decider = 0;
  std::vector<ObjectId> crashable;  // every server object
};

inline bool is_chain_like(const std::string& name) {
  return name == "chain" || name == "counter" || name == "recovery-chain";
}

inline bool is_tpc_like(const std::string& name) {
  return name == "tpc" || name == "recovery-tpc";
}

inline bool is_recovery(const std::string& name) {
  return name == "recovery-chain" || name == "recovery-tpc";
}

inline Topology plan_topology(const ScenarioSpec& s) {
  Topology t;
  if (is_tpc_like(s.name)) {
    t.clients = s.clients > 0 ? s.clients : 8;
    ObjectId next = static_cast<ObjectId>(t.clients) + 1;
    for (int i = 0; i < s.participants; ++i) t.participants.push_back(next++);
    t.decider = next;
    t.crashable = t.participants;
    t.crashable.push_back(t.decider);
  } else {
    t.clients = 1;
    for (int i = 0; i < s.services; ++i) t.services.push_back(static_cast<ObjectId>(2 + i));
    t.crashable = t.services;
  }
  return t;
}

// Effective density: recovery scenarios always inject faults; a recovery spec
// with neither a schedule nor a density gets one generated at density 2.
inline double effective_density(const ScenarioSpec& s) {
  if (!s.faults.empty()) return 0.0;
  if (s.fault_density > 0.0) return s.fault_density;
  return is_recovery(s.name) ? 2.0 : 0.0;
}

namespace scenario_detail {

inline void check_fault_list(const std::vector<sim::Fault>& faults, const Topology& topo,
                             std::uint64_t coordinator_outage_us) {
  std::set<ObjectId> servers(topo.crashable.begin(), topo.crashable.end());
  std::map<ObjectId, bool> down;
  std::uint64_t prev = 0;
  std::uint64_t coord_up_at = 0;
  bool first = true;
  for (const sim::Fault& f : faults) {
    if (!first && f.at_us <= prev)
      throw InvalidSpec("faults: times must strictly increase (at " + std::to_string(f.at_us) +
                        "us)");
    prev = f.at_us;
    first = false;
    switch (f.kind) {
      case sim::FaultKind::CrashObject:
        if (!servers.count(f.target))
          throw InvalidSpec("faults: target " + std::to_string(f.target) +
                            " is not a server object");
        if (down[f.target])
          throw InvalidSpec("faults: object " + std::to_string(f.target) +
                            " crashed while already down");
        down[f.target] = true;
        break;
      case sim::FaultKind::RestartObject:
        if (!down[f.target])
          throw InvalidSpec("faults: restart of object " + std::to_string(f.target) +
                            " that is not down");
        down[f.target] = false;
        break;
      case sim::FaultKind::CrashCoordinator:
        if (f.at_us < coord_up_at)
          throw InvalidSpec("faults: coordinator crashed again before its restart");
        coord_up_at = f.at_us + coordinator_outage_us;
        break;
    }
  }
  for (const auto& [obj, d] : down)
    if (d)
      throw InvalidSpec("faults: object " + std::to_string(obj) +
                        " is crashed but never restarted; the trace could not settle");
}

}  // namespace scenario_detail

inline void validate(const ScenarioSpec& s) {
  static const std::set<std::string> kNames = {"chain",          "counter",      "tpc",
                                               "recovery-chain", "recovery-tpc", "microbench"};
  if (!kNames.count(s.name))
    throw InvalidSpec("scenario: unknown name \"" + s.name +
                      "\" (expected chain, counter, tpc, recovery-chain, recovery-tpc, or "
                      "microbench)");
  if (!(s.rate_hz > 0.0) || !std::isfinite(s.rate_hz))
    throw InvalidSpec("rate: must be a positive finite request rate (got " +
                      std::to_string(s.rate_hz) + ")");
  if (!(s.duration_s > 0.0) || !std::isfinite(s.duration_s))
    throw InvalidSpec("duration: must be a positive finite length in seconds (got " +
                      std::to_string(s.duration_s) + ")");
  if (s.commit_period_us == 0) throw InvalidSpec("commit-period: must be positive");
  if (s.seeds.empty()) throw InvalidSpec("seeds: at least one seed is required");
  if (s.name == "microbench") return;  // remaining knobs are simulator-only
  if (is_chain_like(s.name)) {
    if (s.services < 1)
      throw InvalidSpec("services: must be at least 1 (got " + std::to_string(s.services) + ")");
    if (s.clients > 1)
      throw InvalidSpec("clients: chain and counter scenarios drive one client (got " +
                        std::to_string(s.clients) + ")");
  }
  if (is_tpc_like(s.name)) {
    if (s.participants < 1)
      throw InvalidSpec("participants: must be at least 1 (got " +
                        std::to_string(s.participants) + ")");
    if (s.clients < 0) throw InvalidSpec("clients: must be non-negative");
  }
  if (s.link.loss < 0.0 || s.link.loss > 1.0)
    throw InvalidSpec("loss: must lie in [0, 1] (got " + std::to_string(s.link.loss) + ")");
  if (s.link.delay.lo_us > s.link.delay.hi_us)
    throw InvalidSpec("link-delay: lower bound exceeds upper bound");
  if (s.persist.lo_us > s.persist.hi_us)
    throw InvalidSpec("persist: lower bound exceeds upper bound");
  if (s.fault_density < 0.0 || s.fault_density > 3.0)
    throw InvalidSpec("fault-density: must lie in [0, 3] (got " +
                      std::to_string(s.fault_density) + ")");
  if (!s.faults.empty() && s.fault_density > 0.0)
    throw InvalidSpec("faults: give an explicit schedule or a density, not both");
  sim::SimConfig defaults;
  scenario_detail::check_fault_list(s.faults, plan_topology(s), defaults.coordinator_outage_us);
}

// Per-seed random schedule: up to three crashes, victims drawn without
// replacement from the servers plus the coordinator (equal weight), crash
// times in the middle of the nominal run, every crashed object restarted
// 20-60 ms later. Uses its own splitmix stream so the schedule is stable
// across platforms and independent of the simulator's draws.
inline std::vector<sim::Fault> make_fault_schedule(const ScenarioSpec& s, std::uint64_t seed,
                                                   const Topology& topo) {
  if (!s.faults.empty()) return s.faults;
  double density = effective_density(s);
  if (density <= 0.0) return {};
  sim::Rng rng(seed * 0x9e3779b97f4a7c15ull + 0x6a09e667f3bcc908ull);
  auto whole = static_cast<std::uint64_t>(density);
  std::uint64_t n = whole;
  double frac = density - static_cast<double>(whole);
  if (frac > 0.0 && rng.chance(static_cast<std::uint64_t>(std::llround(frac * 1000.0)), 1000))
    ++n;
  n = std::min<std::uint64_t>(n, 3);
  if (n == 0) return {};

  std::vector<ObjectId> pool = topo.crashable;
  pool.push_back(kCoordinatorId);
  for (std::size_t i = pool.size(); i > 1; --i)
    std::swap(pool[i - 1], pool[rng.below(i)]);
  n = std::min<std::uint64_t>(n, pool.size());

  auto nominal = static_cast<std::uint64_t>(s.duration_s * 1e6);
  std::uint64_t lo = nominal * 15 / 100, hi = std::max(nominal * 70 / 100, lo + 1);
  std::vector<std::uint64_t> times;
  for (std::uint64_t i = 0; i < n; ++i) times.push_back(rng.range(lo, hi));
  std::sort(times.begin(), times.end());

  std::vector<sim::Fault> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    if (pool[i] == kCoordinatorId) {
      out.push_back({times[i], sim::FaultKind::CrashCoordinator, 0});
    } else {
      out.push_back({times[i], sim::FaultKind::CrashObject, pool[i]});
      out.push_back({times[i] + rng.range(20'000, 60'000), sim::FaultKind::RestartObject,
                     pool[i]});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const sim::Fault& a, const sim::Fault& b) { return a.at_us < b.at_us; });
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i].at_us <= out[i - 1].at_us) out[i].at_us = out[i - 1].at_us + 1;
  return out;
}

// One client request. start_us == 0 means the request never started (the run
// starved first). ok and aborted are mutually exclusive; neither set with a
// nonzero start means the request timed out.
struct RequestRow {
  std::uint64_t start_us = 0;
  std::uint64_t end_us = 0;
  bool ok = false;
  bool aborted = false;
};

inline const char* row_status(const RequestRow& r) {
  if (r.ok) return "ok";
  if (r.aborted) return "aborted";
  return "timeout";
}

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<sim::Fault> faults;  // the schedule actually injected
  std::vector<RequestRow> rows;
  std::uint64_t completed = 0;  // settled successes
  std::uint64_t aborted = 0;
  std::uint64_t timed_out = 0;
  std::uint64_t latency_sum_us = 0;  // over settled successes
  std::uint64_t mean_latency_us = 0;
  std::uint64_t p95_latency_us = 0;
  std::uint64_t recovery_us = 0;  // first fault to first post-outage settle
  bool starved = false;           // no progress for 10 simulated seconds
  std::uint64_t coordinator_log_appends = 0;  // during the workload, not assembly
  std::vector<OracleResult> oracles;
  bool oracles_pass = true;
  TraceLog trace;
};

namespace scenario_detail {

constexpr std::uint64_t kStarvationWindowUs = 10'000'000;
constexpr std::uint64_t kClientSession = 71;

inline sim::ServiceHooks idle_hooks() {
  sim::ServiceHooks h;
  h.capture = [] { return Bytes{}; };
  h.apply = [](const Bytes*) {};
  return h;
}

struct RunState {
  std::vector<RequestRow> rows;
  std::uint64_t finished = 0;
  bool workload_done = false;
  std::uint64_t log_base = ~0ull;  // coordinator log size once assembly settled
};

inline sim::Task<> await_ready(sim::Cluster& c) {
  for (;;) {
    bool ok = c.coordinator_up() && c.coordinator().boundary_ready();
    if (ok)
      for (ObjectId id : c.member_ids())
        if (!c.up(id) || !c.rt(id).connected()) ok = false;
    if (ok) co_return;
    co_await c.progress_event().wait(c.driver_domain());
  }
}

inline sim::Task<> watch_ready(sim::Cluster& c, RunState& st) {
  co_await await_ready(c);
  st.log_base = c.coordinator_log().events().size();
}

// Chain-like client: per request, one add per hop, replayed under the same
// session sequence after any rollback so every settled request applies
// exactly once. round_robin narrows each request to one target.
inline sim::Task<> add_workload(sim::Cluster& c, const Topology& topo, std::uint64_t requests,
                                std::uint64_t gap_us, bool per_hop_barrier, bool round_robin,
                                RunState& st) {
  co_await await_ready(c);
  const ObjectId client = 1;
  const std::uint64_t t0 = c.now();
  for (std::uint64_t r = 0; r < requests; ++r) {
    std::uint64_t due = t0 + r * gap_us;
    if (c.now() < due) co_await c.sleep(due - c.now());
    RequestRow& row = st.rows[r];
    row.start_us = c.now();
    std::size_t hops = round_robin ? 1 : topo.services.size();
    bool ok = false;
    for (int attempt = 0; attempt < 64 && !ok; ++attempt) {
      try {
        SThread t = c.rt(client).detach();
        bool all = true;
        for (std::size_t k = 0; k < hops && all; ++k) {
          ObjectId svc =
              round_robin ? topo.services[r % topo.services.size()] : topo.services[k];
          auto v = co_await services::session_add(c, client, svc, t, kClientSession, r + 1, 1,
                                                  30'000);
          if (!v) {
            all = false;
          } else if (per_hop_barrier &&
                     co_await sim::await_barrier(c, client, t) != BarrierStatus::Released) {
            all = false;
          }
        }
        if (all && !per_hop_barrier)
          all = co_await sim::await_barrier(c, client, t) == BarrierStatus::Released;
        ok = all;
      } catch (const RolledBack&) {
        // the thread died with a rollback; replay under a fresh one
      }
    }
    if (ok) {
      row.ok = true;
      row.end_us = c.now();
    }
    ++st.finished;
  }
  st.workload_done = true;
}

// Closed-loop transaction client: claims globally unique tx ids until the
// budget is spent. An unsettled outcome is retried under the same id; the
// logs hold a single decision per id, so replays are harmless.
inline sim::Task<> tpc_client(sim::Cluster& c, const Topology& topo, ObjectId me,
                              std::uint64_t total, std::uint64_t& next_tx, std::uint64_t& open,
                              RunState& st) {
  co_await await_ready(c);
  for (;;) {
    if (next_tx > total) break;
    std::uint64_t tx = next_tx++;
    RequestRow& row = st.rows[tx - 1];
    row.start_us = c.now();
    services::TxStatus fin = services::TxStatus::Unsettled;
    for (int attempt = 0; attempt < 32 && fin == services::TxStatus::Unsettled; ++attempt)
      fin = co_await services::run_transaction(c, me, topo.decider, topo.participants, tx,
                                               40'000);
    if (fin == services::TxStatus::Committed) {
      row.ok = true;
      row.end_us = c.now();
    } else if (fin == services::TxStatus::Aborted) {
      row.aborted = true;
      row.end_us = c.now();
    }
    ++st.finished;
  }
  if (--open == 0) st.workload_done = true;
}

// Nearest-rank percentile over settled latencies.
inline std::uint64_t percentile95(std::vector<std::uint64_t> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  std::size_t idx = (v.size() * 95 + 99) / 100;
  return v[idx == 0 ? 0 : idx - 1];
}

// The instant every injected outage has ended: restarts are explicit for
// objects and implied (crash + outage) for the coordinator.
inline std::uint64_t outages_end(const std::vector<sim::Fault>& faults,
                                 std::uint64_t coordinator_outage_us) {
  std::uint64_t end = 0;
  for (const sim::Fault& f : faults) {
    if (f.kind == sim::FaultKind::RestartObject) end = std::max(end, f.at_us);
    if (f.kind == sim::FaultKind::CrashCoordinator)
      end = std::max(end, f.at_us + coordinator_outage_us);
  }
  return end;
}

}  // namespace scenario_detail

inline SeedResult run_seed(const ScenarioSpec& spec, std::uint64_t seed) {
  using namespace scenario_detail;
  validate(spec);
  if (spec.name == "microbench")
    throw InvalidSpec("scenario: microbench measures the real transport; use the benchmark "
                      "entry point, not the simulated runner");
  Topology topo = plan_topology(spec);
  std::vector<sim::Fault> faults = make_fault_schedule(spec, seed, topo);

  sim::SimConfig cfg;
  cfg.seed = seed;
  cfg.link = spec.link;
  cfg.persist_delay = spec.persist;
  cfg.faults = faults;
  check_fault_list(faults, topo, cfg.coordinator_outage_us);

  const std::uint64_t requests = planned_requests(spec);
  RunState st;
  st.rows.resize(requests);

  sim::Cluster c(cfg);
  for (int i = 1; i <= topo.clients; ++i)
    c.add_member(static_cast<ObjectId>(i), idle_hooks(), spec.commit_period_us);
  std::vector<std::unique_ptr<services::CounterService>> counters;
  std::vector<std::unique_ptr<services::TpcParticipant>> participants;
  std::unique_ptr<services::TpcDecider> decider;
  const bool speculative = spec.mode == Mode::Speculative;
  for (ObjectId id : topo.services) {
    counters.push_back(std::make_unique<services::CounterService>(c, id));
    c.add_member(id, counters.back()->hooks(), spec.commit_period_us);
  }
  for (ObjectId id : topo.participants) {
    participants.push_back(std::make_unique<services::TpcParticipant>(c, id, speculative));
    c.add_member(id, participants.back()->hooks(), spec.commit_period_us);
  }
  if (topo.decider != 0) {
    decider = std::make_unique<services::TpcDecider>(c, topo.decider, topo.participants,
                                                     speculative);
    c.add_member(topo.decider, decider->hooks(), spec.commit_period_us);
  }
  c.start();

  c.spawn(watch_ready(c, st));
  std::uint64_t next_tx = 1;
  std::uint64_t open_clients = static_cast<std::uint64_t>(topo.clients);
  if (is_tpc_like(spec.name)) {
    for (int i = 1; i <= topo.clients; ++i)
      c.spawn(tpc_client(c, topo, static_cast<ObjectId>(i), requests, next_tx, open_clients,
                         st));
  } else {
    auto gap = static_cast<std::uint64_t>(std::llround(1e6 / spec.rate_hz));
    c.spawn(add_workload(c, topo, requests, std::max<std::uint64_t>(gap, 1),
                         spec.mode == Mode::Baseline, spec.name == "counter", st));
  }

  // Drive with a no-progress watchdog: a stall longer than the starvation
  // window means delivery cannot sustain the workload (or a fault was never
  // healed), and the run is cut short rather than spun forever.
  SeedResult res;
  res.seed = seed;
  res.faults = faults;
  std::uint64_t last_finished = 0, last_progress_at = c.now();
  const std::uint64_t hard_cap = requests * 2'000'000 + 20'000'000;
  while (!st.workload_done) {
    c.run_until(c.now() + 50'000);
    if (st.finished > last_finished) {
      last_finished = st.finished;
      last_progress_at = c.now();
    } else if (c.now() - last_progress_at > kStarvationWindowUs || c.now() > hard_cap) {
      res.starved = true;
      break;
    }
  }

  // Drain to quiescence: past every outage, then a window wide enough for
  // final persists, reports, and a boundary refresh.
  const std::uint64_t settle_us = 4 * spec.commit_period_us + 2 * spec.persist.hi_us +
                                  3 * cfg.coordinator_refresh_us + 100'000;
  std::uint64_t recovered_at = outages_end(faults, cfg.coordinator_outage_us);
  c.run_until(std::max(c.now(), recovered_at) + settle_us);

  res.rows = st.rows;
  std::vector<std::uint64_t> latencies;
  for (const RequestRow& r : res.rows) {
    if (r.ok) {
      ++res.completed;
      latencies.push_back(r.end_us - r.start_us);
      res.latency_sum_us += r.end_us - r.start_us;
    } else if (r.aborted) {
      ++res.aborted;
    } else {
      ++res.timed_out;
    }
  }
  res.mean_latency_us =
      latencies.empty() ? 0 : (res.latency_sum_us + latencies.size() / 2) / latencies.size();
  res.p95_latency_us = percentile95(latencies);
  if (!faults.empty()) {
    std::uint64_t first_fault = faults.front().at_us;
    std::uint64_t best = 0;
    for (const RequestRow& r : res.rows)
      if (r.end_us >= recovered_at && (best == 0 || r.end_us < best)) best = r.end_us;
    if (best > first_fault) res.recovery_us = best - first_fault;
  }
  res.coordinator_log_appends =
      st.log_base == ~0ull ? 0 : c.coordinator_log().events().size() - st.log_base;

  // End-state invariants. Counter totals: every settled request applied
  // exactly once, every timed-out request at most once. Transactions: the
  // client-visible outcome must match the decider's durable decision, and
  // participants that learned a decision must agree with it.
  for (std::size_t i = 0; i < counters.size(); ++i) {
    std::int64_t low = 0, high = 0;
    for (std::uint64_t r = 0; r < requests; ++r) {
      bool covers = spec.name != "counter" || topo.services[r % topo.services.size()] ==
                                                  topo.services[i];
      if (!covers) continue;
      if (res.rows[r].ok)
        ++low, ++high;
      else
        ++high;
    }
    std::int64_t got = counters[i]->value();
    if (got < low || got > high)
      throw ScenarioPanic("counter object " + std::to_string(topo.services[i]) + " holds " +
                          std::to_string(got) + ", outside the confirmed range [" +
                          std::to_string(low) + ", " + std::to_string(high) + "]");
  }
  if (decider) {
    for (std::uint64_t r = 0; r < requests; ++r) {
      if (!res.rows[r].ok && !res.rows[r].aborted) continue;
      std::uint64_t tx = r + 1;
      std::optional<bool> d = decider->decision(tx);
      if (!d.has_value() || *d != res.rows[r].ok)
        throw ScenarioPanic("transaction " + std::to_string(tx) +
                            " settled at the client but the decider's durable outcome "
                            "disagrees");
      for (const auto& p : participants) {
        std::optional<bool> pd = p->decision(tx);
        if (pd.has_value() && *pd != *d)
          throw ScenarioPanic("participant " + std::to_string(p->id()) +
                              " recorded the opposite outcome for transaction " +
                              std::to_string(tx));
      }
    }
  }

  res.oracles = run_all_oracles(c.trace().records());
  res.oracles_pass = all_pass(res.oracles);
  res.trace = c.trace();
  return res;
}

// ---------------------------------------------------------------------------
// stable output formats

inline std::string csv_header() { return "seed,request,start_us,end_us,latency_us,status\n"; }

inline void append_csv_rows(std::string& out, std::uint64_t seed,
                            const std::vector<RequestRow>& rows) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const RequestRow& r = rows[i];
    out += std::to_string(seed);
    out += ',';
    out += std::to_string(i);
    out += ',';
    if (r.start_us != 0) out += std::to_string(r.start_us);
    out += ',';
    if (r.end_us != 0) out += std::to_string(r.end_us);
    out += ',';
    if (r.end_us != 0) out += std::to_string(r.end_us - r.start_us);
    out += ',';
    out += row_status(r);
    out += '\n';
  }
}

inline const char* fault_kind_name(sim::FaultKind k) {
  switch (k) {
    case sim::FaultKind::CrashObject: return "crash-object";
    case sim::FaultKind::CrashCoordinator: return "crash-coordinator";
    case sim::FaultKind::RestartObject: return "restart-object";
  }
  return "?";
}

inline nlohmann::json faults_json(const std::vector<sim::Fault>& faults) {
  nlohmann::json a = nlohmann::json::array();
  for (const sim::Fault& f : faults)
    a.push_back({{"at_us", f.at_us}, {"kind", fault_kind_name(f.kind)}, {"target", f.target}});
  return a;
}

inline nlohmann::json seed_summary_json(const SeedResult& r) {
  nlohmann::json oracles = nlohmann::json::array();
  for (const OracleResult& o : r.oracles) {
    nlohmann::json e = {{"name", o.oracle}, {"pass", o.pass}, {"records", o.checked}};
    if (!o.pass) e["violation"] = o.violation;
    oracles.push_back(e);
  }
  return nlohmann::json{{"seed", r.seed},
                        {"requests", r.rows.size()},
                        {"completed", r.completed},
                        {"aborted", r.aborted},
                        {"timed_out", r.timed_out},
                        {"mean_latency_us", r.mean_latency_us},
                        {"p95_latency_us", r.p95_latency_us},
                        {"recovery_us", r.recovery_us},
                        {"delivery_starvation", r.starved},
                        {"coordinator_log_appends", r.coordinator_log_appends},
                        {"faults", faults_json(r.faults)},
                        {"oracles", oracles},
                        {"oracles_pass", r.oracles_pass}};
}

inline nlohmann::json scenario_summary_json(const ScenarioSpec& spec,
                                            const std::vector<SeedResult>& results) {
  nlohmann::json seeds = nlohmann::json::array();
  std::vector<std::uint64_t> all_latencies;
  std::uint64_t sum = 0, completed = 0, aborted = 0, timed_out = 0;
  bool pass = true, starved = false;
  for (const SeedResult& r : results) {
    nlohmann::json e = seed_summary_json(r);
    std::string base = spec.name + "-" + mode_name(spec.mode) + "-seed" + std::to_string(r.seed);
    e["csv_file"] = base + ".csv";
    e["trace_file"] = base + ".trace";
    seeds.push_back(e);
    for (const RequestRow& row : r.rows)
      if (row.ok) all_latencies.push_back(row.end_us - row.start_us);
    sum += r.latency_sum_us;
    completed += r.completed;
    aborted += r.aborted;
    timed_out += r.timed_out;
    pass = pass && r.oracles_pass;
    starved = starved || r.starved;
  }
  nlohmann::json params = {{"services", spec.services},
                           {"participants", spec.participants},
                           {"clients", plan_topology(spec).clients},
                           {"commit_period_us", spec.commit_period_us},
                           {"rate_hz", spec.rate_hz},
                           {"duration_s", spec.duration_s},
                           {"requests_per_seed", planned_requests(spec)},
                           {"link_delay_us", {spec.link.delay.lo_us, spec.link.delay.hi_us}},
                           {"link_loss", spec.link.loss},
                           {"persist_us", {spec.persist.lo_us, spec.persist.hi_us}},
                           {"fault_density", effective_density(spec)},
                           {"faults", faults_json(spec.faults)}};
  return nlohmann::json{
      {"scenario", spec.name},
      {"mode", mode_name(spec.mode)},
      {"params", params},
      {"seeds", seeds},
      {"aggregate",
       {{"completed", completed},
        {"aborted", aborted},
        {"timed_out", timed_out},
        {"mean_latency_us",
         all_latencies.empty() ? 0 : (sum + all_latencies.size() / 2) / all_latencies.size()},
        {"p95_latency_us", scenario_detail::percentile95(all_latencies)},
        {"delivery_starvation", starved},
        {"oracles_pass", pass}}}};
}

struct ScenarioOutput {
  std::vector<SeedResult> seeds;
  nlohmann::json summary;
  std::string summary_path;  // empty when files were not written
  bool oracles_pass = true;
};

// Runs every seed (optionally on parallel workers; each seed's simulation is
// single-threaded and independent) and, when out_dir is given, writes
// <name>-<mode>-seed<seed>.{csv,trace} plus <name>-<mode>-summary.json from
// the calling thread in seed order.
inline ScenarioOutput run_scenario(const ScenarioSpec& spec, const std::string& out_dir = "",
                                   unsigned workers = 1) {
  validate(spec);
  ScenarioOutput out;
  out.seeds.resize(spec.seeds.size());
  if (workers > 1 && spec.seeds.size() > 1) {
    std::vector<std::future<SeedResult>> futs(spec.seeds.size());
    std::size_t next = 0;
    while (next < spec.seeds.size()) {
      std::size_t batch = std::min<std::size_t>(workers, spec.seeds.size() - next);
      for (std::size_t i = 0; i < batch; ++i)
        futs[next + i] = std::async(std::launch::async, run_seed, spec, spec.seeds[next + i]);
      for (std::size_t i = 0; i < batch; ++i) out.seeds[next + i] = futs[next + i].get();
      next += batch;
    }
  } else {
    for (std::size_t i = 0; i < spec.seeds.size(); ++i)
      out.seeds[i] = run_seed(spec, spec.seeds[i]);
  }
  for (const SeedResult& r : out.seeds) out.oracles_pass = out.oracles_pass && r.oracles_pass;
  out.summary = scenario_summary_json(spec, out.seeds);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::string stem = spec.name + "-" + std::string(mode_name(spec.mode));
    for (const SeedResult& r : out.seeds) {
      std::string base = out_dir + "/" + stem + "-seed" + std::to_string(r.seed);
      std::string csv = csv_header();
      append_csv_rows(csv, r.seed, r.rows);
      std::ofstream cf(base + ".csv", std::ios::binary);
      if (!cf) throw Error("cannot write " + base + ".csv");
      cf << csv;
      r.trace.write_file(base + ".trace");
    }
    out.summary_path = out_dir + "/" + stem + "-summary.json";
    std::ofstream sf(out.summary_path, std::ios::binary);
    if (!sf) throw Error("cannot write " + out.summary_path);
    sf << out.summary.dump(2) << '\n';
  }
  return out;
}

}  // namespace dse::scenarios
