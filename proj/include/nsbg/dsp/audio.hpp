#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "nsbg/error.hpp"

namespace nsbg::dsp {

inline constexpr int kSampleRate = 48000;

// Mono audio at a fixed sample rate.
struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  AudioBuffer() = default;
  AudioBuffer(std::vector<double> s, int rate = kSampleRate) : samples(std::move(s)), sample_rate(rate) {}

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

inline void validate(const AudioBuffer& x) {
  if (x.sample_rate <= 0) throw FormatError("sample rate must be positive");
  for (double v : x.samples)
    if (!std::isfinite(v)) throw NumericError("audio contains non-finite samples");
}

inline double energy(const std::vector<double>& v) {
  double e = 0.0;
  for (double s : v) e += s * s;
  return e;
}

// Zero-pads (or keeps) x so its length is a multiple of `multiple` and at least `min_len`.
inline std::vector<double> pad_to_multiple(const std::vector<double>& x, std::size_t multiple,
                                           std::size_t min_len = 0) {
  std::size_t n = std::max(x.size(), min_len);
  n = (n + multiple - 1) / multiple * multiple;
  if (n == 0) n = multiple;
  std::vector<double> out(n, 0.0);
  std::copy(x.begin(), x.end(), out.begin());
  return out;
}

// ---------------------------------------------------------------------------
// WAV I/O. Accepts mono 16-bit PCM or 32-bit IEEE float; anything else is
// rejected with a FormatError.

namespace wav_detail {

inline std::uint32_t rd_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t rd_u16(const unsigned char* p) { return std::uint16_t(p[0] | (p[1] << 8)); }

inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(char(v & 0xff));
  s.push_back(char(v >> 8));
}

}  // namespace wav_detail

inline AudioBuffer parse_wav(const std::string& bytes, bool require_48k = true) {
  using namespace wav_detail;
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file");
  std::size_t pos = 12;
  int format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (pos + 8 <= bytes.size()) {
    std::uint32_t len = rd_u32(p + pos + 4);
    const unsigned char* body = p + pos + 8;
    if (pos + 8 + len > bytes.size()) len = std::uint32_t(bytes.size() - pos - 8);
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (len < 16) throw FormatError("truncated fmt chunk");
      format = rd_u16(body);
      channels = rd_u16(body + 2);
      rate = rd_u32(body + 4);
      bits = rd_u16(body + 14);
      if (format == 0xFFFE && len >= 26) format = rd_u16(body + 24);  // WAVE_FORMAT_EXTENSIBLE
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk");
      if (channels != 1) throw FormatError("only mono WAV is supported (got " + std::to_string(channels) + " channels)");
      if (require_48k && rate != std::uint32_t(kSampleRate))
        throw FormatError("sample rate must be 48000 Hz (got " + std::to_string(rate) + ")");
      AudioBuffer out;
      out.sample_rate = int(rate);
      if (format == 1 && bits == 16) {
        out.samples.resize(len / 2);
        for (std::size_t i = 0; i < out.samples.size(); ++i)
          out.samples[i] = double(std::int16_t(rd_u16(body + 2 * i))) / 32768.0;
      } else if (format == 3 && bits == 32) {
        out.samples.resize(len / 4);
        for (std::size_t i = 0; i < out.samples.size(); ++i) {
          std::uint32_t u = rd_u32(body + 4 * i);
          float f;
          std::memcpy(&f, &u, 4);
          out.samples[i] = f;
        }
      } else {
        throw FormatError("unsupported WAV encoding (need 16-bit PCM or 32-bit float)");
      }
      validate(out);
      return out;
    }
    pos += 8 + len + (len & 1);
  }
  throw FormatError("WAV file has no data chunk");
}

inline AudioBuffer read_wav(const std::string& path, bool require_48k = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_wav(bytes, require_48k);
}

enum class WavEncoding { Pcm16, Float32 };

inline std::string encode_wav(const AudioBuffer& x, WavEncoding enc = WavEncoding::Float32) {
  using namespace wav_detail;
  const std::uint16_t bits = enc == WavEncoding::Pcm16 ? 16 : 32;
  const std::uint32_t data_len = std::uint32_t(x.size() * (bits / 8));
  std::string s;
  s.reserve(44 + data_len);
  s += "RIFF";
  put_u32(s, 36 + data_len);
  s += "WAVEfmt ";
  put_u32(s, 16);
  put_u16(s, enc == WavEncoding::Pcm16 ? 1 : 3);
  put_u16(s, 1);
  put_u32(s, std::uint32_t(x.sample_rate));
  put_u32(s, std::uint32_t(x.sample_rate) * (bits / 8));
  put_u16(s, bits / 8);
  put_u16(s, bits);
  s += "data";
  put_u32(s, data_len);
  for (double v : x.samples) {
    if (enc == WavEncoding::Pcm16) {
      double c = std::clamp(v, -1.0, 32767.0 / 32768.0);
      put_u16(s, std::uint16_t(std::int16_t(std::lround(c * 32768.0))));
    } else {
      float f = float(v);
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      put_u32(s, u);
    }
  }
  return s;
}

inline void write_wav(const std::string& path, const AudioBuffer& x, WavEncoding enc = WavEncoding::Float32) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  auto s = encode_wav(x, enc);
  out.write(s.data(), std::streamsize(s.size()));
}

}  // namespace nsbg::dsp
