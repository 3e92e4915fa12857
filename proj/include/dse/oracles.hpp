#pragma once

// Post-hoc checkers over an execution trace. Each oracle replays the record
// stream once and reports pass or fail plus the first violating record, so a
// failed run is diagnosable from the trace alone.
//
// All of them expect a settled trace: every crashed member restarted, recovery
// finished, persists and barriers drained before capture. A trace cut mid
// flight can show transient states (an issued version whose durability never
// landed, a survivor pointing at a vertex whose rollback is still being
// decided) that the checkers count as violations.
//
//   conservation          every message id settles at most once, on its route
//   closure               no surviving durable vertex holds an edge into a
//                         removed or never persisted vertex
//   commit-ordering       a consumer's version is never below what it consumed
//   sequencing            per object: persist versions are consecutive within
//                         a life, applied failure sequences have no gaps
//   partition             cross world messages are only discarded when older,
//                         only delayed when newer
//   barrier-transparency  values released past a barrier are never rolled
//                         back later; announced cuts never move backwards
//   log-prefix            a recovered log is exactly a sealed durable prefix

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dse/core.hpp"
#include "dse/errors.hpp"
#include "dse/trace.hpp"

namespace dse {

struct OracleResult {
  std::string oracle;
  bool pass = true;
  std::uint64_t checked = 0;        // records this oracle examined
  std::size_t violation_index = 0;  // index into the record vector when !pass
  std::string violation;            // reason plus the offending record
};

inline bool all_pass(const std::vector<OracleResult>& rs) {
  for (const OracleResult& r : rs)
    if (!r.pass) return false;
  return true;
}

inline std::string oracle_report_line(const OracleResult& r) {
  if (r.pass)
    return r.oracle + ": pass (" + std::to_string(r.checked) + " records)";
  return r.oracle + ": FAIL at record " + std::to_string(r.violation_index) + ": " + r.violation;
}

namespace oracle_detail {

inline void flag(OracleResult& res, std::size_t i, const TraceRecord& rec, std::string why) {
  if (!res.pass) return;  // keep the first violation
  res.pass = false;
  res.violation_index = i;
  res.violation = std::move(why) + " | " + trace_line(rec);
}

inline bool has_key(const TraceRecord& r, std::string_view key) {
  for (const auto& [k, v] : r.kv)
    if (k == key) return true;
  return false;
}

struct PlanTarget {
  ObjectId object = 0;
  std::uint64_t target = 0;
  bool skip = false;
};

// "obj:targetS,..." where S is s (state kept) or r (restored); "-" is empty.
inline std::vector<PlanTarget> parse_plan_targets(std::string_view s) {
  std::vector<PlanTarget> out;
  if (s == "-") return out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t end = s.find(',', pos);
    if (end == std::string_view::npos) end = s.size();
    std::string_view item = s.substr(pos, end - pos);
    std::size_t c = item.find(':');
    if (c == std::string_view::npos || item.size() < c + 2)
      throw MalformedTrace("plan targets: bad entry '" + std::string(item) + "'");
    char mode = item.back();
    if (mode != 's' && mode != 'r')
      throw MalformedTrace("plan targets: bad mode '" + std::string(item) + "'");
    out.push_back({parse_trace_u64(item.substr(0, c), "plan target object"),
                   parse_trace_u64(item.substr(c + 1, item.size() - c - 2), "plan target version"),
                   mode == 's'});
    pos = end + 1;
    if (end == s.size()) break;
  }
  return out;
}

// "obj:version,..." cut lists; "-" is empty.
inline std::vector<std::pair<std::uint64_t, std::uint64_t>> parse_cut_pairs(std::string_view s) {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
  if (s == "-") return out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t end = s.find(',', pos);
    if (end == std::string_view::npos) end = s.size();
    std::string_view item = s.substr(pos, end - pos);
    std::size_t c = item.find(':');
    if (c == std::string_view::npos)
      throw MalformedTrace("cuts: bad entry '" + std::string(item) + "'");
    out.emplace_back(parse_trace_u64(item.substr(0, c), "cut object"),
                     parse_trace_u64(item.substr(c + 1), "cut version"));
    pos = end + 1;
    if (end == s.size()) break;
  }
  return out;
}

using Triple = std::array<std::uint64_t, 3>;  // object, world, version

inline Triple triple(const Vertex& v) { return {v.object, v.world_line, v.version}; }

inline std::string fmt_triple(const Triple& t) {
  return std::to_string(t[0]) + ":" + std::to_string(t[1]) + ":" + std::to_string(t[2]);
}

}  // namespace oracle_detail

// Every send settles at most once, as a deliver or a drop, on the route it
// was sent on. Unsettled ids are in flight at capture time and are fine.
inline OracleResult check_conservation(const std::vector<TraceRecord>& recs) {
  using namespace oracle_detail;
  OracleResult res;
  res.oracle = "conservation";
  struct Msg {
    std::uint64_t src, dst;
    bool settled;
  };
  std::map<std::uint64_t, Msg> msgs;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const TraceRecord& r = recs[i];
    if (r.tag == "send") {
      ++res.checked;
      auto [it, fresh] = msgs.insert({r.get_u64("id"), {r.get_u64("src"), r.get_u64("dst"), false}});
      if (!fresh) flag(res, i, r, "message id sent twice");
    } else if (r.tag == "deliver" || r.tag == "drop") {
      // Coordinator-level discards reuse the drop tag but carry no message id;
      // they are protocol notes, not transport outcomes.
      if (!has_key(r, "id")) continue;
      ++res.checked;
      auto it = msgs.find(r.get_u64("id"));
      if (it == msgs.end()) {
        flag(res, i, r, "outcome for a message that was never sent");
      } else if (it->second.settled) {
        flag(res, i, r, "message settled twice");
      } else {
        it->second.settled = true;
        if (it->second.src != r.get_u64("src") || it->second.dst != r.get_u64("dst"))
          flag(res, i, r, "outcome route differs from the send route");
      }
    }
  }
  return res;
}

// A consumer's version is at or above every version it consumed, both when an
// action starts under an observed header and in the edges a persisted
// fragment records. This is what makes uniform version cuts edge closed.
inline OracleResult check_commit_ordering(const std::vector<TraceRecord>& recs) {
  using namespace oracle_detail;
  OracleResult res;
  res.oracle = "commit-ordering";
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const TraceRecord& r = recs[i];
    if (r.tag == "action_start") {
      std::vector<Vertex> deps = parse_vertices(r.get("deps"), "action_start deps");
      if (deps.empty()) continue;
      ++res.checked;
      std::uint64_t ver = r.get_u64("ver");
      for (const Vertex& d : deps)
        if (d.version > ver)
          flag(res, i, r, "action entered below a consumed version (" + fmt_vertex(d) + ")");
    } else if (r.tag == "persist_issue") {
      std::vector<Vertex> edges = parse_vertices(r.get("edges"), "persist_issue edges");
      if (edges.empty()) continue;
      ++res.checked;
      std::uint64_t ver = r.get_u64("ver");
      for (const Vertex& e : edges)
        if (e.version > ver)
          flag(res, i, r, "fragment records an edge above its own version (" + fmt_vertex(e) + ")");
    }
  }
  return res;
}

// Per object: persist versions are consecutive within a life (a restart
// resumes from the durable mark announced at connect, a restore resumes from
// its target), and applied failure sequences advance one at a time.
inline OracleResult check_sequencing(const std::vector<TraceRecord>& recs) {
  using namespace oracle_detail;
  OracleResult res;
  res.oracle = "sequencing";
  struct Obj {
    std::optional<std::uint64_t> world;
    std::optional<std::uint64_t> next_ver;
  };
  std::map<std::uint64_t, Obj> objs;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const TraceRecord& r = recs[i];
    if (r.tag == "connect") {
      ++res.checked;
      Obj& o = objs[r.get_u64("obj")];
      o.world = r.get_u64("world");
      o.next_ver = r.get_u64("hwm") + 1;
    } else if (r.tag == "persist_issue") {
      ++res.checked;
      Obj& o = objs[r.get_u64("obj")];
      std::uint64_t v = r.get_u64("ver");
      std::uint64_t w = r.get_u64("world");
      if (o.next_ver && v != *o.next_ver)
        flag(res, i, r,
             "persist version not consecutive (expected " + std::to_string(*o.next_ver) + ")");
      if (o.world && w != *o.world) flag(res, i, r, "persist under a world the object is not in");
      o.next_ver = v + 1;
      if (!o.world) o.world = w;
    } else if (r.tag == "apply") {
      ++res.checked;
      Obj& o = objs[r.get_u64("obj")];
      std::uint64_t seq = r.get_u64("seq");
      if (o.world && seq != *o.world + 1)
        flag(res, i, r,
             "applied failure sequence has a gap (expected " + std::to_string(*o.world + 1) + ")");
      o.world = seq;
      if (r.get("mode") == "restore") o.next_ver = r.get_u64("target") + 1;
    } else if (r.tag == "crash") {
      std::uint64_t who = r.get_u64("who");
      if (who != 0) objs[who] = Obj{};  // volatile state gone, relearn at connect
    }
  }
  return res;
}

// Cross world messages: discarded only when from an older world (or when
// naming rolled back versions in the current world), delayed only when from a
// newer world. Actions always run in the world the object last applied.
inline OracleResult check_partition(const std::vector<TraceRecord>& recs) {
  using namespace oracle_detail;
  OracleResult res;
  res.oracle = "partition";
  std::map<std::uint64_t, std::uint64_t> world;  // tracked per object
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const TraceRecord& r = recs[i];
    if (r.tag == "connect") {
      world[r.get_u64("obj")] = r.get_u64("world");
    } else if (r.tag == "apply") {
      world[r.get_u64("obj")] = r.get_u64("seq");
    } else if (r.tag == "stale") {
      ++res.checked;
      std::uint64_t mw = r.get_u64("msg_world");
      std::uint64_t w = r.get_u64("world");
      if (!(mw < w || (mw == w && has_key(r, "deps"))))
        flag(res, i, r, "discarded a message that is not from an older world");
      if (auto it = world.find(r.get_u64("obj")); it != world.end() && it->second != w)
        flag(res, i, r, "object reports a world it never applied");
    } else if (r.tag == "defer" || r.tag == "refuse") {
      ++res.checked;
      std::uint64_t mw = r.get_u64("msg_world");
      std::uint64_t w = r.get_u64("world");
      if (!(mw > w)) flag(res, i, r, "delayed a message that is not from a newer world");
      if (auto it = world.find(r.get_u64("obj")); it != world.end() && it->second != w)
        flag(res, i, r, "object reports a world it never applied");
    } else if (r.tag == "action_start") {
      ++res.checked;
      auto it = world.find(r.get_u64("obj"));
      if (it != world.end() && it->second != r.get_u64("world"))
        flag(res, i, r, "action entered in a world the object is not in");
    }
  }
  return res;
}

// Replays fragment lifetimes and checks, at the end of the trace, that no
// surviving durable vertex holds an edge into a vertex that was removed (by a
// restore, a crash of volatile state, or a rollback decision) or that never
// persisted. The first violating record is the persist of the oldest
// offending survivor.
inline OracleResult check_closure(const std::vector<TraceRecord>& recs) {
  using namespace oracle_detail;
  OracleResult res;
  res.oracle = "closure";
  struct Frag {
    std::uint64_t world = 0;
    std::vector<Vertex> edges;
    bool durable = false;
    std::size_t born = 0;  // record index of the persist_issue
  };
  std::map<std::uint64_t, std::map<std::uint64_t, Frag>> live;  // object -> version -> frag
  std::set<Triple> dead;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const TraceRecord& r = recs[i];
    if (r.tag == "persist_issue") {
      ++res.checked;
      live[r.get_u64("obj")][r.get_u64("ver")] =
          Frag{r.get_u64("world"), parse_vertices(r.get("edges"), "persist_issue edges"), false, i};
    } else if (r.tag == "persist_done") {
      ++res.checked;
      auto& frags = live[r.get_u64("obj")];
      auto it = frags.find(r.get_u64("ver"));
      if (it == frags.end())
        flag(res, i, r, "durability completion for a version that is not live");
      else
        it->second.durable = true;
    } else if (r.tag == "crash") {
      std::uint64_t who = r.get_u64("who");
      if (who == 0) continue;
      auto& frags = live[who];
      for (auto it = frags.begin(); it != frags.end();) {
        if (!it->second.durable) {
          dead.insert({who, it->second.world, it->first});
          it = frags.erase(it);
        } else {
          ++it;
        }
      }
    } else if (r.tag == "apply") {
      ++res.checked;
      if (r.get("mode") != "restore") continue;  // state kept, nothing removed
      std::uint64_t obj = r.get_u64("obj");
      std::uint64_t target = r.get_u64("target");
      auto& frags = live[obj];
      for (auto it = frags.upper_bound(target); it != frags.end();) {
        dead.insert({obj, it->second.world, it->first});
        it = frags.erase(it);
      }
    } else if (r.tag == "plan") {
      ++res.checked;
      for (const Vertex& v : parse_vertices(r.get("lost"), "plan lost")) {
        dead.insert(triple(v));
        auto& frags = live[v.object];
        auto it = frags.find(v.version);
        if (it != frags.end() && it->second.world == v.world_line) frags.erase(it);
      }
    }
  }
  // Survivors in birth order, so the first violation names the oldest one.
  std::vector<std::pair<std::size_t, const Frag*>> survivors;
  for (const auto& [obj, frags] : live)
    for (const auto& [ver, f] : frags)
      if (f.durable) survivors.emplace_back(f.born, &f);
  std::sort(survivors.begin(), survivors.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [born, f] : survivors) {
    for (const Vertex& e : f->edges) {
      if (dead.count(triple(e))) {
        flag(res, born, recs[born],
             "surviving vertex holds an edge into removed vertex " + fmt_vertex(e));
        return res;
      }
      bool alive = false;
      if (auto oit = live.find(e.object); oit != live.end()) {
        auto vit = oit->second.find(e.version);
        // The label may move forward when a decision keeps the state.
        alive = vit != oit->second.end() && vit->second.world >= e.world_line;
      }
      if (!alive) {
        flag(res, born, recs[born],
             "surviving vertex holds an edge into never persisted vertex " + fmt_vertex(e));
        return res;
      }
    }
  }
  return res;
}

// Once a barrier releases a set of vertices they are settled facts: no later
// decision may list them as lost, no restore may rewind below them, no
// restart may come back without them, and announced cuts never move
// backwards. Epochs count announcements within one coordinator life (members
// drop their epoch floor when a recovering coordinator runs its census), so
// the epoch watermark resets on a coordinator crash; the cuts must stay
// monotone across lives regardless.
inline OracleResult check_barrier_transparency(const std::vector<TraceRecord>& recs) {
  using namespace oracle_detail;
  OracleResult res;
  res.oracle = "barrier-transparency";
  std::set<Triple> released;
  std::map<std::uint64_t, std::uint64_t> released_max;  // object -> max released version
  std::map<std::uint64_t, std::uint64_t> prev_cut;      // object -> last announced cut
  std::uint64_t prev_epoch = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const TraceRecord& r = recs[i];
    if (r.tag == "barrier_pass") {
      ++res.checked;
      for (const Vertex& d : parse_vertices(r.get("deps"), "barrier_pass deps")) {
        released.insert(triple(d));
        std::uint64_t& m = released_max[d.object];
        m = std::max(m, d.version);
      }
    } else if (r.tag == "plan") {
      ++res.checked;
      for (const Vertex& v : parse_vertices(r.get("lost"), "plan lost"))
        if (released.count(triple(v)))
          flag(res, i, r, "decision rolls back released vertex " + fmt_vertex(v));
    } else if (r.tag == "apply") {
      ++res.checked;
      if (r.get("mode") != "restore") continue;
      auto it = released_max.find(r.get_u64("obj"));
      if (it != released_max.end() && r.get_u64("target") < it->second)
        flag(res, i, r,
             "restore below released version " + std::to_string(it->second));
    } else if (r.tag == "connect") {
      ++res.checked;
      auto it = released_max.find(r.get_u64("obj"));
      if (it != released_max.end() && r.get_u64("hwm") < it->second)
        flag(res, i, r, "object restarted without released state");
    } else if (r.tag == "crash") {
      if (r.get_u64("who") == 0) prev_epoch = 0;
    } else if (r.tag == "boundary") {
      ++res.checked;
      std::uint64_t epoch = r.get_u64("epoch");
      if (epoch < prev_epoch) flag(res, i, r, "boundary epoch moved backwards");
      prev_epoch = epoch;
      for (const auto& [obj, cut] : parse_cut_pairs(r.get("cuts"))) {
        auto it = prev_cut.find(obj);
        if (it != prev_cut.end() && cut < it->second)
          flag(res, i, r, "announced cut moved backwards for object " + std::to_string(obj));
        prev_cut[obj] = cut;
      }
    }
  }
  return res;
}

// Every recovery of a commit-sealed log lands exactly on a prefix that was
// sealed earlier: same version, same end offset, same content hash. Seals
// only ever extend the durable frontier.
inline OracleResult check_log_prefix(const std::vector<TraceRecord>& recs) {
  using namespace oracle_detail;
  OracleResult res;
  res.oracle = "log-prefix";
  struct Seal {
    std::uint64_t off = 0, hash = 0;
  };
  std::map<std::uint64_t, std::map<std::uint64_t, Seal>> seals;  // object -> version
  std::map<std::uint64_t, std::uint64_t> frontier;               // object -> sealed end offset
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const TraceRecord& r = recs[i];
    if (r.tag == "slog_commit") {
      ++res.checked;
      std::uint64_t obj = r.get_u64("obj");
      std::uint64_t off = r.get_u64("off");
      if (off <= frontier[obj]) flag(res, i, r, "seal does not extend the durable frontier");
      seals[obj][r.get_u64("ver")] = Seal{off, r.get_u64("hash")};
      frontier[obj] = off;
    } else if (r.tag == "slog_recover") {
      ++res.checked;
      std::uint64_t obj = r.get_u64("obj");
      std::uint64_t ver = r.get_u64("ver");
      std::uint64_t off = r.get_u64("off");
      if (ver == 0) {
        if (off != 0) flag(res, i, r, "full reset recovered a nonzero prefix");
        seals[obj].clear();
        frontier[obj] = 0;
        continue;
      }
      auto it = seals[obj].find(ver);
      if (it == seals[obj].end()) {
        flag(res, i, r, "recovered to a version that was never sealed");
      } else if (it->second.off != off || it->second.hash != r.get_u64("hash")) {
        flag(res, i, r, "recovered prefix differs from the sealed prefix");
      }
      // Seals above the recovered offset were truncated away.
      for (auto s = seals[obj].begin(); s != seals[obj].end();)
        s = s->second.off > off ? seals[obj].erase(s) : std::next(s);
      frontier[obj] = off;
    }
  }
  return res;
}

inline std::vector<OracleResult> run_all_oracles(const std::vector<TraceRecord>& recs) {
  return {check_conservation(recs),        check_closure(recs),
          check_commit_ordering(recs),     check_sequencing(recs),
          check_partition(recs),           check_barrier_transparency(recs),
          check_log_prefix(recs)};
}

}  // namespace dse
