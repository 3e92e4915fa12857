#pragma once

// Pure closure computations over the persisted part of a dependency graph.
//
// The graph is reduced to per-object version levels: each level is one
// reported-persistent version with its recorded out-edges. Within one object,
// version numbers are totally ordered across world-lines (the runtime never
// reuses them), and the implicit precedence dependency of a later version on
// every earlier one makes any consistent surviving set a per-object version
// prefix. A cut vector therefore describes a candidate set exactly: object o
// keeps everything at version <= cut[o].
//
// An edge into (o, v) is "covered" by a cut iff cut[o] >= v. Coverage, not
// membership: the state named by (o, v) is embedded in every later version of
// o, so the target version itself does not have to be a reported level.

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "dse/core.hpp"

namespace dse {

struct GraphLevel {
  std::uint64_t version = 0;
  std::vector<std::pair<ObjectId, std::uint64_t>> edges;  // (target object, target version)
};

// Levels per object, ascending by version. Only persistent versions appear.
using LevelGraph = std::map<ObjectId, std::vector<GraphLevel>>;

// version cut per object; 0 = nothing kept / nothing covered
using Cuts = std::map<ObjectId, std::uint64_t>;

inline std::uint64_t cut_of(const Cuts& c, ObjectId o) {
  auto it = c.find(o);
  return it == c.end() ? 0 : it->second;
}

// Lowers `cuts` until no kept level has an uncovered edge, and returns the
// result: the greatest fixpoint at or below the initial cuts. Removing a
// violating level removes everything above it too (prefix property).
inline Cuts cascade_cuts(const LevelGraph& g, Cuts cuts) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& [obj, levels] : g) {
      std::uint64_t cur = cut_of(cuts, obj);
      if (cur == 0) continue;
      for (const auto& lv : levels) {
        if (lv.version > cur) break;
        bool violated = false;
        for (const auto& [to, tv] : lv.edges) {
          if (cut_of(cuts, to) < tv) {
            violated = true;
            break;
          }
        }
        if (violated) {
          // keep only the levels strictly below this one
          std::uint64_t keep = 0;
          for (const auto& below : levels) {
            if (below.version >= lv.version) break;
            keep = below.version;
          }
          cuts[obj] = keep;
          changed = true;
          break;
        }
      }
    }
  }
  return cuts;
}

// Maximal closure of the whole persistent graph: the recoverable boundary.
inline Cuts max_closure(const LevelGraph& g) {
  Cuts top;
  for (const auto& [obj, levels] : g)
    top[obj] = levels.empty() ? 0 : levels.back().version;
  return cascade_cuts(g, std::move(top));
}

}  // namespace dse
