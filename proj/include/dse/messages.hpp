#pragma once

// Runtime <-> coordinator message schema with a canonical wire encoding.
//
// Flow: a member sends ConnectRequest once per process incarnation and
// retries it until ConnectResponse arrives; it must not exchange application
// messages before that. After connecting it pushes Report as persists become
// durable, polls with PullRequest, and receives Update (pushed on boundary or
// plan changes, or as the PullRequest reply). After a coordinator restart the
// coordinator sends ResendRequest to every member; live members answer
// ResendResponse, members that restarted meanwhile answer with their new
// ConnectRequest instead.
//
// Incarnation counts process lives: 1 on first boot, +1 per restart. The
// coordinator tracks the current incarnation per member: a ConnectRequest
// repeating the current incarnation is an idempotent retry; a higher one
// means the member died and restarted, which triggers a rollback decision.
// Report and PullRequest carrying a stale incarnation are dropped.
//
// Wire format (integers little-endian; Vertex/VertexSet/GraphFragment/
// RollbackPlan encodings from the core schema):
//
//   Cutoff          world_line u64 | version u64
//   BoundarySummary epoch u64 | basis_seq u64 | count u32 |
//                   count * (object u64 | Cutoff), strictly ascending object
//   FragmentList    count u32 | count * GraphFragment,
//                   strictly ascending by vertex version
//   PlanList        count u32 | count * RollbackPlan,
//                   consecutive failure_seq
//   StatusPayload   boundary_valid u8 in {0,1} | BoundarySummary | PlanList |
//                   report_ack u64 | prune_upto u64
//
//   message         kind u8 | body
//     1 ConnectRequest  object u64 | incarnation u64 | FragmentList
//     2 ConnectResponse object u64 | incarnation u64 | StatusPayload
//     3 Report          object u64 | incarnation u64 | world_line u64 |
//                       applied_seq u64 | FragmentList
//     4 PullRequest     object u64 | incarnation u64 | applied_seq u64 |
//                       boundary_epoch u64
//     5 Update          object u64 | StatusPayload
//     6 ResendRequest   (empty)
//     7 ResendResponse  object u64 | incarnation u64 | applied_seq u64 |
//                       FragmentList

#include <cstdint>
#include <map>
#include <variant>
#include <vector>

#include "dse/bytes.hpp"
#include "dse/core.hpp"
#include "dse/errors.hpp"

namespace dse {

// Highest covered identity of one object: every version <= `version` that is
// still alive at the member lies inside the boundary. world_line records the
// world in which that version was current when the boundary was computed
// (used for monotonicity checks and diagnostics, not for coverage).
struct Cutoff {
  std::uint64_t world_line = 0;
  std::uint64_t version = 0;

  bool operator==(const Cutoff&) const = default;
};

struct BoundarySummary {
  std::uint64_t epoch = 0;      // bumps on every content change
  std::uint64_t basis_seq = 0;  // plans <= basis_seq are reflected; members
                                // must apply them before using the cuts
  std::map<ObjectId, Cutoff> cuts;

  bool operator==(const BoundarySummary&) const = default;

  std::uint64_t cut_version(ObjectId o) const {
    auto it = cuts.find(o);
    return it == cuts.end() ? 0 : it->second.version;
  }
};

// Shared body of ConnectResponse and Update.
struct StatusPayload {
  bool boundary_valid = false;  // false while the coordinator is rebuilding its view
  BoundarySummary boundary;
  std::vector<RollbackPlan> plans;  // undelivered decisions, consecutive failure_seq
  std::uint64_t report_ack = 0;     // highest version incorporated into the view
  std::uint64_t prune_upto = 0;     // advise prune(prune_upto); 0 means none

  bool operator==(const StatusPayload&) const = default;
};

struct ConnectRequest {
  ObjectId object = 0;
  std::uint64_t incarnation = 0;
  std::vector<GraphFragment> durables;  // decoded persist metadata, ascending version

  bool operator==(const ConnectRequest&) const = default;
};

struct ConnectResponse {
  ObjectId object = 0;
  std::uint64_t incarnation = 0;  // echo; the member ignores responses to older attempts
  StatusPayload status;

  bool operator==(const ConnectResponse&) const = default;
};

struct Report {
  ObjectId object = 0;
  std::uint64_t incarnation = 0;
  std::uint64_t world_line = 0;
  std::uint64_t applied_seq = 0;  // acknowledges plans <= applied_seq
  std::vector<GraphFragment> fragments;

  bool operator==(const Report&) const = default;
};

struct PullRequest {
  ObjectId object = 0;
  std::uint64_t incarnation = 0;
  std::uint64_t applied_seq = 0;
  std::uint64_t boundary_epoch = 0;  // highest epoch already adopted

  bool operator==(const PullRequest&) const = default;
};

struct Update {
  ObjectId object = 0;  // destination member
  StatusPayload status;

  bool operator==(const Update&) const = default;
};

struct ResendRequest {
  bool operator==(const ResendRequest&) const = default;
};

struct ResendResponse {
  ObjectId object = 0;
  std::uint64_t incarnation = 0;
  std::uint64_t applied_seq = 0;
  std::vector<GraphFragment> durables;

  bool operator==(const ResendResponse&) const = default;
};

using CoordMsg = std::variant<ConnectRequest, ConnectResponse, Report, PullRequest, Update,
                              ResendRequest, ResendResponse>;

namespace wire {

inline void put_cutoff(ByteWriter& w, const Cutoff& c) {
  w.u64(c.world_line);
  w.u64(c.version);
}

inline Cutoff get_cutoff(ByteReader& r) {
  Cutoff c;
  c.world_line = r.u64("cutoff");
  c.version = r.u64("cutoff");
  return c;
}

inline void put_boundary(ByteWriter& w, const BoundarySummary& b) {
  w.u64(b.epoch);
  w.u64(b.basis_seq);
  w.u32(static_cast<std::uint32_t>(b.cuts.size()));
  for (const auto& [obj, cut] : b.cuts) {  // std::map iterates ascending
    w.u64(obj);
    put_cutoff(w, cut);
  }
}

inline BoundarySummary get_boundary(ByteReader& r) {
  BoundarySummary b;
  b.epoch = r.u64("boundary");
  b.basis_seq = r.u64("boundary");
  std::uint32_t n = r.u32("boundary.cuts");
  ObjectId prev = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    ObjectId obj = r.u64("boundary.cut");
    if (i > 0 && obj <= prev) throw MalformedHeader("boundary: cuts not strictly ascending");
    prev = obj;
    b.cuts.emplace(obj, get_cutoff(r));
  }
  return b;
}

inline void put_fragment_list(ByteWriter& w, const std::vector<GraphFragment>& fs) {
  w.u32(static_cast<std::uint32_t>(fs.size()));
  for (const auto& f : fs) put_fragment(w, f);
}

inline std::vector<GraphFragment> get_fragment_list(ByteReader& r) {
  std::uint32_t n = r.u32("fragments");
  std::vector<GraphFragment> fs;
  fs.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    GraphFragment f = get_fragment(r);
    if (!fs.empty() && fs.back().vertex.version >= f.vertex.version)
      throw MalformedHeader("fragments: versions not strictly ascending");
    fs.push_back(std::move(f));
  }
  return fs;
}

inline void put_plan_list(ByteWriter& w, const std::vector<RollbackPlan>& ps) {
  w.u32(static_cast<std::uint32_t>(ps.size()));
  for (const auto& p : ps) put_plan(w, p);
}

inline std::vector<RollbackPlan> get_plan_list(ByteReader& r) {
  std::uint32_t n = r.u32("plans");
  std::vector<RollbackPlan> ps;
  ps.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    RollbackPlan p = get_plan(r);
    if (!ps.empty() && p.failure_seq != ps.back().failure_seq + 1)
      throw MalformedHeader("plans: failure_seq not consecutive");
    ps.push_back(std::move(p));
  }
  return ps;
}

inline void put_status(ByteWriter& w, const StatusPayload& s) {
  w.u8(s.boundary_valid ? 1 : 0);
  put_boundary(w, s.boundary);
  put_plan_list(w, s.plans);
  w.u64(s.report_ack);
  w.u64(s.prune_upto);
}

inline StatusPayload get_status(ByteReader& r) {
  StatusPayload s;
  std::uint8_t valid = r.u8("status");
  if (valid > 1) throw MalformedHeader("status: boundary_valid out of range");
  s.boundary_valid = valid == 1;
  s.boundary = get_boundary(r);
  s.plans = get_plan_list(r);
  s.report_ack = r.u64("status");
  s.prune_upto = r.u64("status");
  return s;
}

}  // namespace wire

inline Bytes encode_msg(const CoordMsg& m) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(m.index() + 1));
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ConnectRequest>) {
          w.u64(v.object);
          w.u64(v.incarnation);
          wire::put_fragment_list(w, v.durables);
        } else if constexpr (std::is_same_v<T, ConnectResponse>) {
          w.u64(v.object);
          w.u64(v.incarnation);
          wire::put_status(w, v.status);
        } else if constexpr (std::is_same_v<T, Report>) {
          w.u64(v.object);
          w.u64(v.incarnation);
          w.u64(v.world_line);
          w.u64(v.applied_seq);
          wire::put_fragment_list(w, v.fragments);
        } else if constexpr (std::is_same_v<T, PullRequest>) {
          w.u64(v.object);
          w.u64(v.incarnation);
          w.u64(v.applied_seq);
          w.u64(v.boundary_epoch);
        } else if constexpr (std::is_same_v<T, Update>) {
          w.u64(v.object);
          wire::put_status(w, v.status);
        } else if constexpr (std::is_same_v<T, ResendRequest>) {
          // empty body
        } else {
          static_assert(std::is_same_v<T, ResendResponse>);
          w.u64(v.object);
          w.u64(v.incarnation);
          w.u64(v.applied_seq);
          wire::put_fragment_list(w, v.durables);
        }
      },
      m);
  return w.take();
}

inline CoordMsg decode_msg(const Bytes& b) {
  ByteReader r(b);
  std::uint8_t kind = r.u8("msg.kind");
  CoordMsg m;
  switch (kind) {
    case 1: {
      ConnectRequest v;
      v.object = r.u64("connect");
      v.incarnation = r.u64("connect");
      v.durables = wire::get_fragment_list(r);
      m = std::move(v);
      break;
    }
    case 2: {
      ConnectResponse v;
      v.object = r.u64("connect_resp");
      v.incarnation = r.u64("connect_resp");
      v.status = wire::get_status(r);
      m = std::move(v);
      break;
    }
    case 3: {
      Report v;
      v.object = r.u64("report");
      v.incarnation = r.u64("report");
      v.world_line = r.u64("report");
      v.applied_seq = r.u64("report");
      v.fragments = wire::get_fragment_list(r);
      m = std::move(v);
      break;
    }
    case 4: {
      PullRequest v;
      v.object = r.u64("pull");
      v.incarnation = r.u64("pull");
      v.applied_seq = r.u64("pull");
      v.boundary_epoch = r.u64("pull");
      m = std::move(v);
      break;
    }
    case 5: {
      Update v;
      v.object = r.u64("update");
      v.status = wire::get_status(r);
      m = std::move(v);
      break;
    }
    case 6:
      m = ResendRequest{};
      break;
    case 7: {
      ResendResponse v;
      v.object = r.u64("resend_resp");
      v.incarnation = r.u64("resend_resp");
      v.applied_seq = r.u64("resend_resp");
      v.durables = wire::get_fragment_list(r);
      m = std::move(v);
      break;
    }
    default:
      throw MalformedHeader("msg: unknown kind");
  }
  r.expect_end("msg");
  return m;
}

}  // namespace dse
