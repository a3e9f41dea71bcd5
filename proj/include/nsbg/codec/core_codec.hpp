#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "nsbg/config.hpp"
#include "nsbg/dsp/audio.hpp"
#include "nsbg/dsp/pqmf.hpp"
#include "nsbg/error.hpp"

namespace nsbg::codec {

class CoreCodec {
 public:
  virtual ~CoreCodec() = default;
  virtual std::string encode(const dsp::AudioBuffer& x) = 0;
  virtual dsp::AudioBuffer decode(const std::string& payload) = 0;
  virtual double bandwidth_hz() const = 0;
  virtual std::string name() const = 0;
};

// Mid-tread uniform quantizer with step 2^(1-bits); values are clipped to [-1, 1].
inline std::int32_t quantize_sample(double v, int bits) {
  const double step = std::ldexp(1.0, 1 - bits);
  const double c = std::clamp(v, -1.0, 1.0);
  return std::int32_t(std::lround(c / step));
}

inline double dequantize_sample(std::int32_t q, int bits) { return double(q) * std::ldexp(1.0, 1 - bits); }

// Stand-in core: PQMF analysis, bands >= n_keep dropped, kept subband
// samples quantized, synthesis with the filterbank delay removed.
class SurrogateCore final : public CoreCodec {
 public:
  SurrogateCore(std::size_t n_keep, int bits, std::size_t bands = 32, std::size_t taps = 8, double atten = 100.0)
      : n_keep_(n_keep), bits_(bits), bank_(dsp::design_pqmf(bands, taps, atten)) {
    if (n_keep < 1 || n_keep > bank_.num_bands) throw UsageError("surrogate core keeps 1..32 bands");
    if (bits < 2) throw UsageError("surrogate core needs at least 2 quantizer bits");
    if (bits > 31) throw UsageError("surrogate core supports at most 31 quantizer bits");
  }

  // Payload: "NSCR" | u32 rate | u32 length | u8 n_keep | u8 bits | u32 sublen | i32 codes[n_keep * sublen]
  std::string encode(const dsp::AudioBuffer& x) override {
    dsp::validate(x);
    const auto padded = dsp::pad_to_multiple(x.samples, bank_.num_bands, x.size() + bank_.delay());
    const auto sb = dsp::pqmf_analysis(dsp::AudioBuffer(padded, x.sample_rate), bank_);
    std::string out = "NSCR";
    put(out, std::uint32_t(x.sample_rate));
    put(out, std::uint32_t(x.size()));
    out.push_back(char(n_keep_));
    out.push_back(char(bits_));
    put(out, std::uint32_t(sb.length));
    for (std::size_t k = 0; k < n_keep_; ++k)
      for (std::size_t m = 0; m < sb.length; ++m) put(out, std::uint32_t(quantize_sample(sb.at(k, m), bits_)));
    return out;
  }

  dsp::AudioBuffer decode(const std::string& payload) override {
    if (payload.size() < 18 || payload.compare(0, 4, "NSCR") != 0) throw FormatError("not a surrogate core payload");
    const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
    const int rate = int(get(p + 4));
    const std::size_t len = get(p + 8);
    const std::size_t keep = p[12];
    const int bits = p[13];
    const std::size_t sublen = get(p + 14);
    if (keep < 1 || keep > bank_.num_bands || bits < 2 || bits > 31) throw FormatError("corrupt surrogate core header");
    if (payload.size() != 18 + 4 * keep * sublen) throw FormatError("surrogate core payload has wrong size");
    if (sublen * bank_.num_bands < len + bank_.delay()) throw FormatError("surrogate core payload too short for its length");
    dsp::SubbandFrameSet sb(bank_.num_bands, sublen, bank_.band_width_hz(rate));
    for (std::size_t k = 0; k < keep; ++k)
      for (std::size_t m = 0; m < sublen; ++m)
        sb.at(k, m) = dequantize_sample(std::int32_t(get(p + 18 + 4 * (k * sublen + m))), bits);
    const auto y = dsp::pqmf_synthesis(sb, bank_);
    const auto d = long(bank_.delay());
    return dsp::AudioBuffer(std::vector<double>(y.samples.begin() + d, y.samples.begin() + d + long(len)), rate);
  }

  double bandwidth_hz() const override { return double(n_keep_) * bank_.band_width_hz(dsp::kSampleRate); }
  std::string name() const override { return "surrogate"; }

 private:
  static void put(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
  }
  static std::uint32_t get(const unsigned char* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
  }

  std::size_t n_keep_;
  int bits_;
  dsp::PqmfBank bank_;
};

inline dsp::AudioBuffer surrogate_core(const dsp::AudioBuffer& x, std::size_t n_keep_bands, int quant_bits) {
  SurrogateCore core(n_keep_bands, quant_bits);
  return core.decode(core.encode(x));
}

namespace detail {

inline std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) s.replace(pos, from.size(), to);
  return s;
}

inline std::string shell_quote(const std::string& s) { return "'" + replace_all(s, "'", "'\\''") + "'"; }

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) return {};
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("nsbg-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Runs `tmpl` with {in}/{out} substituted; throws with the command line and
// captured stderr on failure.
inline void run_template(const std::string& tmpl, const std::filesystem::path& in, const std::filesystem::path& out,
                         const std::filesystem::path& err) {
  if (tmpl.find("{in}") == std::string::npos || tmpl.find("{out}") == std::string::npos)
    throw UsageError("core command template must contain {in} and {out}: " + tmpl);
  std::string cmd = replace_all(replace_all(tmpl, "{in}", shell_quote(in.string())), "{out}", shell_quote(out.string()));
  const std::string full = "(" + cmd + ") 2> " + shell_quote(err.string());
  const int rc = std::system(full.c_str());
  if (rc != 0) {
    std::string diag = slurp(err);
    if (diag.size() > 2000) diag.resize(2000);
    throw FormatError("core command failed (status " + std::to_string(rc) + "): " + cmd + (diag.empty() ? "" : "\n" + diag));
  }
}

}  // namespace detail

// Adapter for an external codec driven through command templates. Encode
// receives a float WAV as {in} and writes its payload to {out}; decode gets
// that payload as {in} and must write a 48 kHz mono WAV to {out}. The
// decoded signal is advanced by `delay` samples and cut to the input length.
class ExternalCore final : public CoreCodec {
 public:
  ExternalCore(std::string encode_cmd, std::string decode_cmd, long delay, double bandwidth_hz)
      : enc_(std::move(encode_cmd)), dec_(std::move(decode_cmd)), delay_(delay), bandwidth_(bandwidth_hz) {
    if (enc_.empty() || dec_.empty()) throw UsageError("external core needs encode and decode command templates");
    if (delay_ < 0) throw UsageError("core delay must be non-negative");
  }

  // The payload carries the input length ahead of the codec's own bytes.
  std::string encode(const dsp::AudioBuffer& x) override {
    dsp::validate(x);
    detail::TempDir dir;
    const auto in = dir.path() / "in.wav", out = dir.path() / "payload.bin", err = dir.path() / "stderr.txt";
    dsp::write_wav(in.string(), x, dsp::WavEncoding::Float32);
    detail::run_template(enc_, in, out, err);
    if (!std::filesystem::exists(out)) throw FormatError("core encoder produced no output: " + enc_);
    std::string payload;
    const auto n = std::uint32_t(x.size());
    for (int i = 0; i < 4; ++i) payload.push_back(char((n >> (8 * i)) & 0xff));
    return payload + detail::slurp(out);
  }

  dsp::AudioBuffer decode(const std::string& payload) override {
    if (payload.size() < 4) throw FormatError("external core payload too short");
    const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
    const std::size_t len = std::size_t(p[0]) | std::size_t(p[1]) << 8 | std::size_t(p[2]) << 16 | std::size_t(p[3]) << 24;
    detail::TempDir dir;
    const auto in = dir.path() / "payload.bin", out = dir.path() / "out.wav", err = dir.path() / "stderr.txt";
    {
      std::ofstream f(in, std::ios::binary);
      f.write(payload.data() + 4, std::streamsize(payload.size() - 4));
    }
    detail::run_template(dec_, in, out, err);
    if (!std::filesystem::exists(out)) throw FormatError("core decoder produced no output: " + dec_);
    auto y = dsp::read_wav(out.string());
    dsp::validate(y);
    std::vector<double> s(len, 0.0);
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t j = i + std::size_t(delay_);
      if (j < y.size()) s[i] = y.samples[j];
    }
    return dsp::AudioBuffer(std::move(s), y.sample_rate);
  }

  double bandwidth_hz() const override { return bandwidth_; }
  std::string name() const override { return "external"; }

 private:
  std::string enc_, dec_;
  long delay_;
  double bandwidth_;
};

inline dsp::AudioBuffer external_core(const dsp::AudioBuffer& x, const std::string& encode_cmd,
                                      const std::string& decode_cmd, long delay = 0) {
  ExternalCore core(encode_cmd, decode_cmd, delay, 0.0);
  return core.decode(core.encode(x));
}

inline std::unique_ptr<CoreCodec> make_core(const SbgConfig& cfg, const std::string& kind = "") {
  const std::string k = kind.empty() ? cfg.core : kind;
  if (k == "surrogate")
    return std::make_unique<SurrogateCore>(cfg.core_bands, cfg.core_bits, cfg.pqmf_bands, cfg.pqmf_taps, cfg.pqmf_atten_db);
  if (k == "external") {
    const double bw = double(cfg.n_core) * double(cfg.sample_rate) / (2.0 * double(cfg.pqmf_bands));
    return std::make_unique<ExternalCore>(cfg.core_encode_cmd, cfg.core_decode_cmd, cfg.core_delay, bw);
  }
  throw UsageError("unknown core codec '" + k + "' (expected surrogate or external)");
}

}  // namespace nsbg::codec
