#pragma once

// Execution trace: an append-only, line-delimited record stream written by
// the simulator and consumed by the post-hoc checkers and the CLI.
//
// One record per line: "t=<micros> <tag> key=value key=value ...". Values
// never contain whitespace; vertex triples are object:world:version, lists
// are comma-joined, and an empty list is "-". Records are emitted in
// simulation order, so replaying a configuration reproduces the file byte for
// byte.
//
// Tags (fields in emission order):
//   send id src dst chan n        chan app|coord, n payload bytes
//   deliver id src dst
//   drop id src dst why           why loss|down
//   defer id dst                  future-world message buffered at receiver
//   refuse id dst                 buffer full, transport will redeliver
//   stale obj hdr local           header world below local world, discarded
//   persist_issue obj world ver edges
//   persist_done obj world ver
//   action_start obj world ver deps
//   action_end obj world ver
//   sthread obj sid what          what new|merge_ok|merge_fail|rolledback
//   barrier_wait obj sid deps
//   barrier_pass obj sid deps     deps released as non-speculative
//   plan seq cuts lost            cuts object:target:skip, decision durable
//   apply obj seq target skip inc
//   connect obj inc world ver     runtime registered, may now communicate
//   crash who inc                 who is an object id, 0 the coordinator
//   restart who inc
//   boundary epoch basis cuts     cuts object:world:version, announced
//   adopt obj epoch
//   slog_commit obj ver off hash  commit record appended at byte offset
//   slog_recover obj ver off hash log state right after restore
//   note ...                      scenario-defined observations

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dse/core.hpp"
#include "dse/errors.hpp"

namespace dse {

struct TraceRecord {
  std::uint64_t t = 0;
  std::string tag;
  std::vector<std::pair<std::string, std::string>> kv;

  const std::string& get(std::string_view key) const {
    for (const auto& [k, v] : kv)
      if (k == key) return v;
    throw MalformedTrace("trace record '" + tag + "' lacks key " + std::string(key));
  }

  std::uint64_t get_u64(std::string_view key) const {
    const std::string& s = get(key);
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc() || p != s.data() + s.size())
      throw MalformedTrace("trace value not a number: " + s);
    return out;
  }

  bool operator==(const TraceRecord&) const = default;
};

inline std::string trace_line(const TraceRecord& r) {
  std::string out = "t=" + std::to_string(r.t) + " " + r.tag;
  for (const auto& [k, v] : r.kv) {
    out += " ";
    out += k;
    out += "=";
    out += v;
  }
  return out;
}

inline TraceRecord parse_trace_line(std::string_view line) {
  TraceRecord r;
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string_view {
    while (pos < line.size() && line[pos] == ' ') ++pos;
    std::size_t start = pos;
    while (pos < line.size() && line[pos] != ' ') ++pos;
    return line.substr(start, pos - start);
  };
  std::string_view t = next_token();
  if (t.substr(0, 2) != "t=") throw MalformedTrace("trace line lacks t=: " + std::string(line));
  {
    std::string_view num = t.substr(2);
    auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), r.t);
    if (ec != std::errc() || p != num.data() + num.size())
      throw MalformedTrace("bad trace time: " + std::string(line));
  }
  std::string_view tag = next_token();
  if (tag.empty()) throw MalformedTrace("trace line lacks tag: " + std::string(line));
  r.tag = std::string(tag);
  for (std::string_view tok = next_token(); !tok.empty(); tok = next_token()) {
    std::size_t eq = tok.find('=');
    if (eq == std::string_view::npos || eq == 0)
      throw MalformedTrace("bad trace field: " + std::string(tok));
    r.kv.emplace_back(std::string(tok.substr(0, eq)), std::string(tok.substr(eq + 1)));
  }
  return r;
}

// --- value formatting helpers ----------------------------------------------

inline std::string fmt_vertex(const Vertex& v) {
  return std::to_string(v.object) + ":" + std::to_string(v.world_line) + ":" +
         std::to_string(v.version);
}

inline std::string fmt_vertices(const std::vector<Vertex>& vs) {
  if (vs.empty()) return "-";
  std::string out;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (i) out += ",";
    out += fmt_vertex(vs[i]);
  }
  return out;
}

inline std::uint64_t parse_trace_u64(std::string_view s, const char* what) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || p != s.data() + s.size())
    throw MalformedTrace(std::string(what) + ": bad number '" + std::string(s) + "'");
  return out;
}

// Splits "a:b:c,d:e:f" into triples; accepts "-" as empty.
inline std::vector<std::array<std::uint64_t, 3>> parse_triples(std::string_view s,
                                                               const char* what) {
  std::vector<std::array<std::uint64_t, 3>> out;
  if (s == "-") return out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t end = s.find(',', pos);
    if (end == std::string_view::npos) end = s.size();
    std::string_view item = s.substr(pos, end - pos);
    std::size_t c1 = item.find(':');
    std::size_t c2 = c1 == std::string_view::npos ? c1 : item.find(':', c1 + 1);
    if (c1 == std::string_view::npos || c2 == std::string_view::npos)
      throw MalformedTrace(std::string(what) + ": bad triple '" + std::string(item) + "'");
    out.push_back({parse_trace_u64(item.substr(0, c1), what),
                   parse_trace_u64(item.substr(c1 + 1, c2 - c1 - 1), what),
                   parse_trace_u64(item.substr(c2 + 1), what)});
    pos = end + 1;
    if (end == s.size()) break;
  }
  return out;
}

inline std::vector<Vertex> parse_vertices(std::string_view s, const char* what) {
  std::vector<Vertex> out;
  for (const auto& t : parse_triples(s, what)) out.push_back(Vertex{t[0], t[1], t[2]});
  return out;
}

// --- log -------------------------------------------------------------------

class TraceLog {
 public:
  void emit(std::uint64_t t, std::string tag,
            std::vector<std::pair<std::string, std::string>> kv) {
    records_.push_back(TraceRecord{t, std::move(tag), std::move(kv)});
  }

  const std::vector<TraceRecord>& records() const { return records_; }

  std::string to_text() const {
    std::string out;
    for (const auto& r : records_) {
      out += trace_line(r);
      out += "\n";
    }
    return out;
  }

  void write_file(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open trace file for writing: " + path);
    f << to_text();
  }

  static std::vector<TraceRecord> parse_text(std::string_view text) {
    std::vector<TraceRecord> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      std::string_view line = text.substr(pos, end - pos);
      if (!line.empty()) out.push_back(parse_trace_line(line));
      pos = end + 1;
    }
    return out;
  }

  static std::vector<TraceRecord> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open trace file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str());
  }

 private:
  std::vector<TraceRecord> records_;
};

}  // namespace dse
