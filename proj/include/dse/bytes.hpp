#pragma once

// Little-endian fixed-width primitives shared by every wire format in the
// library. Readers bound-check each access and reject trailing bytes through
// expect_end(), which is what makes the encodings canonical.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dse/errors.hpp"

namespace dse {

using Bytes = std::vector<std::uint8_t>;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }

  void bytes(const Bytes& b) {
    u32(static_cast<std::uint32_t>(b.size()));
    raw(b.data(), b.size());
  }

  std::size_t size() const { return buf_.size(); }
  const Bytes& data() const { return buf_; }
  Bytes take() { return std::move(buf_); }

 private:
  Bytes buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  explicit ByteReader(const Bytes& b) : ByteReader(b.data(), b.size()) {}

  std::uint8_t u8(const char* what) {
    need(1, what);
    return p_[off_++];
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[off_ + i]) << (8 * i);
    off_ += 4;
    return v;
  }

  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[off_ + i]) << (8 * i);
    off_ += 8;
    return v;
  }

  Bytes bytes(const char* what) {
    std::uint32_t n = u32(what);
    need(n, what);
    Bytes out(p_ + off_, p_ + off_ + n);
    off_ += n;
    return out;
  }

  std::size_t remaining() const { return n_ - off_; }

  void expect_end(const char* what) const {
    if (off_ != n_)
      throw MalformedHeader(std::string(what) + ": " + std::to_string(n_ - off_) +
                            " trailing byte(s)");
  }

 private:
  void need(std::size_t k, const char* what) {
    if (n_ - off_ < k)
      throw MalformedHeader(std::string(what) + ": truncated at offset " + std::to_string(off_));
  }

  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t off_ = 0;
};

}  // namespace dse
