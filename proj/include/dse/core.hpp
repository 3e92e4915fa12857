#pragma once

// Core protocol types shared by the runtime and the coordinator, and their
// canonical wire encoding.
//
// A vertex (object, world_line, version) names one persisted (or about to be
// persisted) state of one object. world_line is the global failure counter:
// it advances by exactly one every time a rollback decision applies. version
// is the object-local persistence counter; after a rollback it continues from
// the restore target, so within one object version numbers are totally
// ordered across world-lines and never reused.
//
// Wire format (all integers little-endian, fixed width):
//
//   Vertex        object u64 | world_line u64 | version u64
//   VertexSet     count u32  | count * Vertex, strictly ascending by
//                 (object, world_line, version)
//   Header        world_line u64 | deps VertexSet
//                 every dep world_line <= header world_line
//   GraphFragment vertex Vertex | out_edges VertexSet, vertex itself excluded
//   RollbackPlan  failure_seq u64 | entry_count u32 | entry_count *
//                 (object u64 | target_version u64 | skip u8 in {0,1}),
//                 strictly ascending by object | lost VertexSet
//   ClusterEvent  sequence u64 | kind u8 | payload
//                 kind 1 MemberJoin, 2 MemberRejoin : object u64 | incarnation u64
//                 kind 3 RollbackDecision           : RollbackPlan
//
// Encodings are canonical: decode rejects any byte string encode would not
// produce (truncation, trailing bytes, unsorted or duplicate set elements,
// out-of-range enums, invariant violations), so equal values have equal bytes
// and equal bytes decode to equal values.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <map>
#include <vector>

#include "dse/bytes.hpp"
#include "dse/errors.hpp"

namespace dse {

// Assigned in cluster configuration; scenario specs map names to ids.
using ObjectId = std::uint64_t;

// Id 0 is reserved for the coordinator in traces and transport addressing.
inline constexpr ObjectId kCoordinatorId = 0;

struct Vertex {
  ObjectId object = 0;
  std::uint64_t world_line = 0;
  std::uint64_t version = 0;

  auto operator<=>(const Vertex&) const = default;
};

// Speculation metadata attached to every message. deps is kept sorted,
// duplicate-free, and subsumption-normalized (at most one vertex per
// (object, world_line), the one with the largest version).
struct Header {
  std::uint64_t world_line = 0;
  std::vector<Vertex> deps;

  bool operator==(const Header&) const = default;
};

// One persisted version's outgoing dependency edges.
struct GraphFragment {
  Vertex vertex;
  std::vector<Vertex> out_edges;

  bool operator==(const GraphFragment&) const = default;
};

struct PlanEntry {
  std::uint64_t target_version = 0;  // restore target; 0 means reset to initial state
  bool skip = false;                 // no persisted vertex of this object was removed

  bool operator==(const PlanEntry&) const = default;
};

// A rollback decision. Applying plan k moves every member from world-line
// k-1 to k. Identities (o, w, v) with w < failure_seq and
// v > entries[o].target_version are lost; `lost` additionally enumerates the
// removed reported-persistent vertices for oracles and diagnostics.
struct RollbackPlan {
  std::uint64_t failure_seq = 0;
  std::map<ObjectId, PlanEntry> entries;
  std::vector<Vertex> lost;

  bool operator==(const RollbackPlan&) const = default;
};

struct ClusterEvent {
  enum class Kind : std::uint8_t { MemberJoin = 1, MemberRejoin = 2, RollbackDecision = 3 };

  std::uint64_t sequence = 0;  // dense log position, assigned on append
  Kind kind = Kind::MemberJoin;
  ObjectId member = 0;            // MemberJoin / MemberRejoin
  std::uint64_t incarnation = 0;  // MemberJoin / MemberRejoin: the connecting incarnation
  RollbackPlan plan;              // RollbackDecision

  bool operator==(const ClusterEvent&) const = default;
};

inline bool plan_loses(const RollbackPlan& p, const Vertex& v) {
  if (v.world_line >= p.failure_seq) return false;  // created at or after this rollback
  auto it = p.entries.find(v.object);
  if (it == p.entries.end()) return false;
  return v.version > it->second.target_version;
}

// ---------------------------------------------------------------------------
// dependency-set algebra

// Sorts, deduplicates, and applies per-(object, world_line) subsumption:
// keeping only the largest version is sound because versions of one object
// form prefixes (state at version n embeds every earlier version), so a
// dependency on the larger version implies the smaller one.
inline void normalize_deps(std::vector<Vertex>& deps) {
  std::sort(deps.begin(), deps.end());
  std::size_t out = 0;
  for (std::size_t i = 0; i < deps.size(); ++i) {
    if (out > 0 && deps[out - 1].object == deps[i].object &&
        deps[out - 1].world_line == deps[i].world_line) {
      deps[out - 1].version = deps[i].version;  // sorted, so this one is larger or equal
    } else {
      deps[out++] = deps[i];
    }
  }
  deps.resize(out);
}

inline std::vector<Vertex> merge_deps(const std::vector<Vertex>& a, const std::vector<Vertex>& b) {
  std::vector<Vertex> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  normalize_deps(out);
  return out;
}

// ---------------------------------------------------------------------------
// codecs

namespace wire {

inline void put_vertex(ByteWriter& w, const Vertex& v) {
  w.u64(v.object);
  w.u64(v.world_line);
  w.u64(v.version);
}

inline Vertex get_vertex(ByteReader& r, const char* what) {
  Vertex v;
  v.object = r.u64(what);
  v.world_line = r.u64(what);
  v.version = r.u64(what);
  return v;
}

inline void put_vertex_set(ByteWriter& w, const std::vector<Vertex>& vs) {
  w.u32(static_cast<std::uint32_t>(vs.size()));
  for (const auto& v : vs) put_vertex(w, v);
}

inline std::vector<Vertex> get_vertex_set(ByteReader& r, const char* what) {
  std::uint32_t n = r.u32(what);
  std::vector<Vertex> vs;
  vs.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Vertex v = get_vertex(r, what);
    if (!vs.empty() && !(vs.back() < v))
      throw MalformedHeader(std::string(what) + ": vertex set not strictly ascending");
    vs.push_back(v);
  }
  return vs;
}

inline void put_header(ByteWriter& w, const Header& h) {
  w.u64(h.world_line);
  put_vertex_set(w, h.deps);
}

inline Header get_header(ByteReader& r) {
  Header h;
  h.world_line = r.u64("header");
  h.deps = get_vertex_set(r, "header.deps");
  for (const auto& d : h.deps)
    if (d.world_line > h.world_line)
      throw MalformedHeader("header: dep world_line above header world_line");
  return h;
}

inline void put_fragment(ByteWriter& w, const GraphFragment& f) {
  put_vertex(w, f.vertex);
  put_vertex_set(w, f.out_edges);
}

inline GraphFragment get_fragment(ByteReader& r) {
  GraphFragment f;
  f.vertex = get_vertex(r, "fragment");
  f.out_edges = get_vertex_set(r, "fragment.out_edges");
  for (const auto& e : f.out_edges)
    if (e == f.vertex) throw MalformedHeader("fragment: self edge");
  return f;
}

inline void put_plan(ByteWriter& w, const RollbackPlan& p) {
  w.u64(p.failure_seq);
  w.u32(static_cast<std::uint32_t>(p.entries.size()));
  for (const auto& [obj, e] : p.entries) {  // std::map iterates ascending
    w.u64(obj);
    w.u64(e.target_version);
    w.u8(e.skip ? 1 : 0);
  }
  put_vertex_set(w, p.lost);
}

inline RollbackPlan get_plan(ByteReader& r) {
  RollbackPlan p;
  p.failure_seq = r.u64("plan");
  std::uint32_t n = r.u32("plan.entries");
  ObjectId prev = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    ObjectId obj = r.u64("plan.entry");
    if (i > 0 && obj <= prev) throw MalformedHeader("plan: entries not strictly ascending");
    prev = obj;
    PlanEntry e;
    e.target_version = r.u64("plan.entry");
    std::uint8_t skip = r.u8("plan.entry");
    if (skip > 1) throw MalformedHeader("plan: skip flag out of range");
    e.skip = skip == 1;
    p.entries.emplace(obj, e);
  }
  p.lost = get_vertex_set(r, "plan.lost");
  return p;
}

inline void put_event(ByteWriter& w, const ClusterEvent& ev) {
  w.u64(ev.sequence);
  w.u8(static_cast<std::uint8_t>(ev.kind));
  switch (ev.kind) {
    case ClusterEvent::Kind::MemberJoin:
    case ClusterEvent::Kind::MemberRejoin:
      w.u64(ev.member);
      w.u64(ev.incarnation);
      break;
    case ClusterEvent::Kind::RollbackDecision:
      put_plan(w, ev.plan);
      break;
  }
}

inline ClusterEvent get_event(ByteReader& r) {
  ClusterEvent ev;
  ev.sequence = r.u64("event");
  std::uint8_t k = r.u8("event.kind");
  if (k < 1 || k > 3) throw MalformedHeader("event: unknown kind");
  ev.kind = static_cast<ClusterEvent::Kind>(k);
  if (ev.kind == ClusterEvent::Kind::RollbackDecision) {
    ev.plan = get_plan(r);
  } else {
    ev.member = r.u64("event.member");
    ev.incarnation = r.u64("event.incarnation");
  }
  return ev;
}

}  // namespace wire

inline Bytes encode_header(const Header& h) {
  ByteWriter w;
  wire::put_header(w, h);
  return w.take();
}

inline Header decode_header(const Bytes& b) {
  ByteReader r(b);
  Header h = wire::get_header(r);
  r.expect_end("header");
  return h;
}

inline Bytes encode_fragment(const GraphFragment& f) {
  ByteWriter w;
  wire::put_fragment(w, f);
  return w.take();
}

inline GraphFragment decode_fragment(const Bytes& b) {
  ByteReader r(b);
  GraphFragment f = wire::get_fragment(r);
  r.expect_end("fragment");
  return f;
}

inline Bytes encode_plan(const RollbackPlan& p) {
  ByteWriter w;
  wire::put_plan(w, p);
  return w.take();
}

inline RollbackPlan decode_plan(const Bytes& b) {
  ByteReader r(b);
  RollbackPlan p = wire::get_plan(r);
  r.expect_end("plan");
  return p;
}

inline Bytes encode_event(const ClusterEvent& ev) {
  ByteWriter w;
  wire::put_event(w, ev);
  return w.take();
}

inline ClusterEvent decode_event(const Bytes& b) {
  ByteReader r(b);
  ClusterEvent ev = wire::get_event(r);
  r.expect_end("event");
  return ev;
}

}  // namespace dse
