#pragma once

// Shared test helpers: a platform-stable RNG (libstdc++ distributions are not
// pinned by the standard, so tests that freeze derived values roll their own)
// and hex/golden-file utilities.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dse/bytes.hpp"

namespace dsetest {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : s_(seed) {}

  std::uint64_t next() {
    // splitmix64
    std::uint64_t z = (s_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, n)
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

  // uniform in [lo, hi] inclusive
  std::uint64_t range(std::uint64_t lo, std::uint64_t hi) { return lo + below(hi - lo + 1); }

  bool chance(std::uint64_t num, std::uint64_t den) { return below(den) < num; }

 private:
  std::uint64_t s_;
};

inline std::string to_hex(const dse::Bytes& b) {
  static const char* d = "0123456789abcdef";
  std::string s;
  s.reserve(b.size() * 2);
  for (auto c : b) {
    s.push_back(d[c >> 4]);
    s.push_back(d[c & 0xf]);
  }
  return s;
}

inline dse::Bytes from_hex(const std::string& s) {
  auto val = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw std::runtime_error("bad hex char");
  };
  if (s.size() % 2 != 0) throw std::runtime_error("odd hex length");
  dse::Bytes b;
  b.reserve(s.size() / 2);
  for (std::size_t i = 0; i < s.size(); i += 2)
    b.push_back(static_cast<std::uint8_t>(val(s[i]) * 16 + val(s[i + 1])));
  return b;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Reads a golden file of hex, ignoring whitespace and '#' comment lines.
inline dse::Bytes read_golden_hex(const std::string& name) {
  std::string raw = read_file(std::string(DSE_GOLDEN_DIR) + "/" + name);
  std::string hex;
  bool comment = false;
  for (char c : raw) {
    if (c == '#') comment = true;
    if (c == '\n') comment = false;
    if (!comment && !isspace(static_cast<unsigned char>(c))) hex.push_back(c);
  }
  return from_hex(hex);
}

}  // namespace dsetest
