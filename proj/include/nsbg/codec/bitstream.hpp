#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "nsbg/error.hpp"
#include "nsbg/model/rvq.hpp"

namespace nsbg::codec {

// Side-information stream.
//   header (20 bytes, little-endian):
//     "NSBG" | version u8 | sample_rate u32 | n_core u8 | n_hf u8 | n_q u8 |
//     M u16 | H u16 | num_frames u32
//   payload: per frame, n_q codes of ceil(log2 M) bits, MSB-first,
//   zero-padded to the next byte.
inline constexpr std::uint8_t kBitstreamVersion = 1;
inline constexpr std::size_t kHeaderBytes = 20;

struct SbgBitstream {
  std::uint8_t version = kBitstreamVersion;
  std::uint32_t sample_rate = 48000;
  std::uint8_t n_core = 0;
  std::uint8_t n_hf = 0;
  std::uint8_t n_q = 0;
  std::uint16_t codebook_size = 1024;
  std::uint16_t hop = 2048;
  std::uint32_t frames = 0;
  std::vector<std::vector<std::int32_t>> indices;  // [n_q][frames]

  std::size_t bits_per_code() const { return model::bits_per_code(codebook_size); }
  std::size_t bytes_per_frame() const { return (std::size_t(n_q) * bits_per_code() + 7) / 8; }
  std::size_t payload_bytes() const { return bytes_per_frame() * frames; }
};

namespace detail {

class BitWriter {
 public:
  explicit BitWriter(std::string& out) : out_(out) {}
  void put(std::uint32_t v, std::size_t bits) {
    for (std::size_t i = bits; i-- > 0;) {
      acc_ = std::uint8_t((acc_ << 1) | ((v >> i) & 1u));
      if (++n_ == 8) flush_byte();
    }
  }
  // Zero-pads to a byte boundary.
  void align() {
    if (n_ == 0) return;
    acc_ = std::uint8_t(acc_ << (8 - n_));
    flush_byte();
  }

 private:
  void flush_byte() {
    out_.push_back(char(acc_));
    acc_ = 0;
    n_ = 0;
  }
  std::string& out_;
  std::uint8_t acc_ = 0;
  std::size_t n_ = 0;
};

class BitReader {
 public:
  BitReader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}
  std::uint32_t get(std::size_t bits) {
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < bits; ++i) {
      if (pos_ >= 8 * n_) throw FormatError("truncated payload");
      const std::uint8_t byte = p_[pos_ / 8];
      v = (v << 1) | ((byte >> (7 - pos_ % 8)) & 1u);
      ++pos_;
    }
    return v;
  }
  void align() { pos_ = (pos_ + 7) / 8 * 8; }

 private:
  const unsigned char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

inline void put_le(std::string& s, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void check_indices(const SbgBitstream& bs) {
  if (bs.indices.size() != bs.n_q) throw FormatError("index grid has " + std::to_string(bs.indices.size()) + " layers, header says " + std::to_string(bs.n_q));
  for (const auto& layer : bs.indices) {
    if (layer.size() != bs.frames) throw FormatError("index layer length differs from frame count");
    for (auto i : layer)
      if (i < 0 || std::uint32_t(i) >= bs.codebook_size) throw FormatError("code index " + std::to_string(i) + " out of range");
  }
}

inline std::string pack(const SbgBitstream& bs) {
  if (bs.codebook_size < 2) throw UsageError("codebook size must be at least 2");
  check_indices(bs);
  std::string out = "NSBG";
  detail::put_le(out, bs.version, 1);
  detail::put_le(out, bs.sample_rate, 4);
  detail::put_le(out, bs.n_core, 1);
  detail::put_le(out, bs.n_hf, 1);
  detail::put_le(out, bs.n_q, 1);
  detail::put_le(out, bs.codebook_size, 2);
  detail::put_le(out, bs.hop, 2);
  detail::put_le(out, bs.frames, 4);
  const std::size_t bits = bs.bits_per_code();
  detail::BitWriter w(out);
  for (std::size_t t = 0; t < bs.frames; ++t) {
    for (std::size_t s = 0; s < bs.n_q; ++s) w.put(std::uint32_t(bs.indices[s][t]), bits);
    w.align();
  }
  return out;
}

inline SbgBitstream unpack(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "NSBG", 4) != 0) throw FormatError("not an NSBG stream");
  if (bytes.size() < kHeaderBytes) throw FormatError("truncated header");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  SbgBitstream bs;
  bs.version = p[4];
  if (bs.version != kBitstreamVersion) throw FormatError("unsupported stream version " + std::to_string(bs.version));
  bs.sample_rate = std::uint32_t(detail::get_le(p + 5, 4));
  bs.n_core = p[9];
  bs.n_hf = p[10];
  bs.n_q = p[11];
  bs.codebook_size = std::uint16_t(detail::get_le(p + 12, 2));
  bs.hop = std::uint16_t(detail::get_le(p + 14, 2));
  bs.frames = std::uint32_t(detail::get_le(p + 16, 4));
  if (bs.codebook_size < 2) throw FormatError("invalid codebook size in header");
  const std::size_t need = kHeaderBytes + bs.payload_bytes();
  if (bytes.size() < need) throw FormatError("truncated payload");
  if (bytes.size() > need) throw FormatError("trailing bytes after payload");
  detail::BitReader r(p + kHeaderBytes, bytes.size() - kHeaderBytes);
  const std::size_t bits = bs.bits_per_code();
  bs.indices.assign(bs.n_q, std::vector<std::int32_t>(bs.frames));
  for (std::size_t t = 0; t < bs.frames; ++t) {
    for (std::size_t s = 0; s < bs.n_q; ++s) {
      const auto v = r.get(bits);
      if (v >= bs.codebook_size) throw FormatError("code index " + std::to_string(v) + " out of range");
      bs.indices[s][t] = std::int32_t(v);
    }
    r.align();
  }
  return bs;
}

// Measured side-information rate: payload bits per second, header excluded.
inline double measured_bitrate(const SbgBitstream& bs) {
  if (bs.frames == 0) return 0.0;
  return double(bs.bytes_per_frame() * 8) * double(bs.sample_rate) / double(bs.hop);
}

// Upper bound on measured - formula rate from per-frame byte padding.
inline double padding_overhead_bound(const SbgBitstream& bs) {
  const double exact = double(bs.n_q) * double(bs.bits_per_code()) / 8.0;
  return 8.0 * (double(bs.bytes_per_frame()) - exact) * double(bs.sample_rate) / double(bs.hop);
}

}  // namespace nsbg::codec
