#ifndef DLSN_BINARY_IO_HPP
#define DLSN_BINARY_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dlsn/tensor.hpp"

namespace dlsn {

/// Little-endian append-only byte writer.
class ByteWriter {
 public:
  void bytes(const char* s, std::size_t n) { out_.insert(out_.end(), s, s + n); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }

  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

/// Little-endian reader; every short read throws ParseError at the offset
/// where the missing data should have started.
class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& in) : in_(in) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(in_[pos_ + std::size_t(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(in_[pos_ + std::size_t(i)]) << (8 * i);
    pos_ += 8;
    return v;
  }

  double f32(const char* what) { return double(std::bit_cast<float>(u32(what))); }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) throw ParseError(std::string("truncated input while reading ") + what, in_.size());
  }

  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace dlsn

#endif  // DLSN_BINARY_IO_HPP
