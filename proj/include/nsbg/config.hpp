#pragma once

#include <array>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nsbg/error.hpp"

namespace nsbg {

struct LossWeights {
  double mel = 15.0;
  double adv = 3.0;
  double fm = 6.0;
  double cb = 1.0;
  double cm = 0.5;
  double adv_d = 1.0;
};

// Every fixed hyperparameter of the codec and its training.
struct SbgConfig {
  int sample_rate = 48000;
  std::size_t hop = 2048;     // H
  std::size_t window = 2048;
  std::size_t pqmf_bands = 32;
  std::size_t pqmf_taps = 8;
  double pqmf_atten_db = 100.0;

  std::size_t n_core = 5;
  std::size_t n_hf = 10;

  std::size_t enc_channels = 512;  // D
  std::size_t freq_reduction = 32;  // S_f
  std::size_t dec_channels = 64;    // C
  std::array<std::size_t, 4> strides{1, 2, 2, 2};

  std::size_t n_q = 11;
  std::size_t codebook_size = 1024;  // M
  std::size_t codebook_dim = 8;      // N

  // Discriminators.
  std::vector<std::size_t> mpd_periods{2, 3, 5, 7, 11};
  std::size_t mpd_channels = 16;  // first layer; doubles per layer up to 8x
  std::vector<std::size_t> stft_windows{2048, 1024, 512};
  std::size_t stft_disc_channels = 16;

  LossWeights weights;

  // Core codec.
  std::string core = "surrogate";  // surrogate | external
  std::size_t core_bands = 5;
  int core_bits = 8;
  std::string core_encode_cmd;
  std::string core_decode_cmd;
  long core_delay = 0;

  // Training.
  std::size_t segment_len = 32768;
  std::size_t batch_size = 4;
  std::size_t steps = 500;
  std::uint64_t seed = 1;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double lr_decay = 0.999996;
  double grad_clip = 10.0;
  bool quantizer_dropout = true;
  double dropout_prob = 0.5;
  std::size_t checkpoint_every = 0;

  std::size_t cond_channels() const { return 4 * dec_channels; }
  std::size_t bins_per_band() const { return window / (2 * pqmf_bands); }
  std::size_t slab_bins() const { return bins_per_band() * n_hf; }  // F'
  std::size_t temporal_factor() const {
    std::size_t f = pqmf_bands;
    for (auto s : strides) f *= s;
    return f;
  }

  void validate() const {
    NSBG_CHECK_ARG(sample_rate > 0, "sample_rate must be positive");
    NSBG_CHECK_ARG(hop > 0 && window >= hop && window % 2 == 0, "invalid STFT window/hop");
    NSBG_CHECK_ARG(n_hf > 0, "n_hf must be positive (empty generation range)");
    NSBG_CHECK_ARG(n_core > 0 && n_core + n_hf <= pqmf_bands, "band split exceeds the filterbank");
    NSBG_CHECK_ARG(window % (2 * pqmf_bands) == 0, "window must hold an integral number of bins per band");
    NSBG_CHECK_ARG(enc_channels % 8 == 0 && enc_channels >= 8, "encoder width must be a multiple of 8");
    NSBG_CHECK_ARG(freq_reduction == 32, "the encoder stack reduces frequency by exactly 32");
    NSBG_CHECK_ARG(dec_channels >= 2 && dec_channels % 2 == 0, "decoder width must be even");
    NSBG_CHECK_ARG(codebook_size >= 2 && (codebook_size & (codebook_size - 1)) == 0, "codebook size must be a power of two");
    NSBG_CHECK_ARG(codebook_dim >= 1 && codebook_dim < slab_bins(), "codebook dimension must be below F'");
    NSBG_CHECK_ARG(hop % temporal_factor() == 0, "hop must be a multiple of the decoder's temporal reduction");
    NSBG_CHECK_ARG(segment_len % hop == 0, "segment length must be a multiple of the hop");
    NSBG_CHECK_ARG(core == "surrogate" || core == "external", "core must be surrogate or external");
    NSBG_CHECK_ARG(core_bits >= 2, "core quantizer needs at least 2 bits");
    NSBG_CHECK_ARG(core_bands >= 1 && core_bands <= pqmf_bands, "core_bands out of range");
  }
};

// Presets for the two operating points.
inline SbgConfig config_12kbps() {
  SbgConfig c;
  c.n_core = 5;
  c.n_hf = 10;
  c.n_q = 11;
  return c;
}

inline SbgConfig config_16kbps() {
  SbgConfig c;
  c.n_core = 5;
  c.n_hf = 11;
  c.n_q = 13;
  return c;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw UsageError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

template <class N>
std::vector<N> parse_list(const std::string& key, std::string v) {
  if (!v.empty() && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
  std::vector<N> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<N>(key, item));
  }
  return out;
}

}  // namespace detail

// Parses "key = value" lines. '#' starts a comment, "[section]" prefixes
// following keys with "section.", strings may be double-quoted.
inline std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']' && line.find('=') == std::string::npos) {
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string val = detail::trim(line.substr(eq + 1));
    if (val.size() >= 2 && val.front() == '"' && val.back() == '"') val = val.substr(1, val.size() - 2);
    if (!section.empty()) key = section + "." + key;
    kv[key] = val;
  }
  return kv;
}

// Applies parsed keys onto `cfg`. Unknown keys are rejected.
inline void apply_key_values(SbgConfig& cfg, const std::map<std::string, std::string>& kv) {
  using detail::parse_list;
  using detail::parse_number;
  for (const auto& [key, v] : kv) {
    // Section prefixes are accepted but not required.
    const auto dot = key.rfind('.');
    const std::string k = dot == std::string::npos ? key : key.substr(dot + 1);
    auto sz = [&] { return parse_number<std::size_t>(key, v); };
    auto dbl = [&] { return parse_number<double>(key, v); };
    if (k == "sample_rate") cfg.sample_rate = parse_number<int>(key, v);
    else if (k == "hop") cfg.hop = sz();
    else if (k == "window") cfg.window = sz();
    else if (k == "pqmf_bands") cfg.pqmf_bands = sz();
    else if (k == "pqmf_taps") cfg.pqmf_taps = sz();
    else if (k == "pqmf_atten_db") cfg.pqmf_atten_db = dbl();
    else if (k == "n_core") cfg.n_core = sz();
    else if (k == "n_hf") cfg.n_hf = sz();
    else if (k == "enc_channels") cfg.enc_channels = sz();
    else if (k == "freq_reduction") cfg.freq_reduction = sz();
    else if (k == "dec_channels") cfg.dec_channels = sz();
    else if (k == "strides") {
      auto s = parse_list<std::size_t>(key, v);
      if (s.size() != 4) throw UsageError("strides needs four entries");
      std::copy(s.begin(), s.end(), cfg.strides.begin());
    } else if (k == "n_q") cfg.n_q = sz();
    else if (k == "codebook_size") cfg.codebook_size = sz();
    else if (k == "codebook_dim") cfg.codebook_dim = sz();
    else if (k == "mpd_periods") cfg.mpd_periods = parse_list<std::size_t>(key, v);
    else if (k == "mpd_channels") cfg.mpd_channels = sz();
    else if (k == "stft_windows") cfg.stft_windows = parse_list<std::size_t>(key, v);
    else if (k == "stft_disc_channels") cfg.stft_disc_channels = sz();
    else if (k == "lambda_mel") cfg.weights.mel = dbl();
    else if (k == "lambda_adv") cfg.weights.adv = dbl();
    else if (k == "lambda_fm") cfg.weights.fm = dbl();
    else if (k == "lambda_cb") cfg.weights.cb = dbl();
    else if (k == "lambda_cm") cfg.weights.cm = dbl();
    else if (k == "lambda_adv_d") cfg.weights.adv_d = dbl();
    else if (k == "core") cfg.core = v;
    else if (k == "core_bands") cfg.core_bands = sz();
    else if (k == "core_bits") cfg.core_bits = parse_number<int>(key, v);
    else if (k == "core_encode_cmd") cfg.core_encode_cmd = v;
    else if (k == "core_decode_cmd") cfg.core_decode_cmd = v;
    else if (k == "core_delay") cfg.core_delay = parse_number<long>(key, v);
    else if (k == "segment_len") cfg.segment_len = sz();
    else if (k == "batch_size") cfg.batch_size = sz();
    else if (k == "steps") cfg.steps = sz();
    else if (k == "seed") cfg.seed = parse_number<std::uint64_t>(key, v);
    else if (k == "lr") cfg.lr = dbl();
    else if (k == "beta1") cfg.beta1 = dbl();
    else if (k == "beta2") cfg.beta2 = dbl();
    else if (k == "lr_decay") cfg.lr_decay = dbl();
    else if (k == "grad_clip") cfg.grad_clip = dbl();
    else if (k == "quantizer_dropout") cfg.quantizer_dropout = (v == "true" || v == "1");
    else if (k == "dropout_prob") cfg.dropout_prob = dbl();
    else if (k == "checkpoint_every") cfg.checkpoint_every = sz();
    else throw UsageError("unknown config key '" + key + "'");
  }
}

// Key/value text that parse_config reads back to the same configuration.
inline std::string format_config(const SbgConfig& c) {
  std::ostringstream o;
  o << std::setprecision(17);
  auto list = [](const auto& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  o << "sample_rate = " << c.sample_rate << "\nhop = " << c.hop << "\nwindow = " << c.window
    << "\npqmf_bands = " << c.pqmf_bands << "\npqmf_taps = " << c.pqmf_taps << "\npqmf_atten_db = " << c.pqmf_atten_db
    << "\nn_core = " << c.n_core << "\nn_hf = " << c.n_hf << "\nenc_channels = " << c.enc_channels
    << "\nfreq_reduction = " << c.freq_reduction << "\ndec_channels = " << c.dec_channels
    << "\nstrides = " << list(c.strides) << "\nn_q = " << c.n_q << "\ncodebook_size = " << c.codebook_size
    << "\ncodebook_dim = " << c.codebook_dim << "\nmpd_periods = " << list(c.mpd_periods)
    << "\nmpd_channels = " << c.mpd_channels << "\nstft_windows = " << list(c.stft_windows)
    << "\nstft_disc_channels = " << c.stft_disc_channels << "\nlambda_mel = " << c.weights.mel
    << "\nlambda_adv = " << c.weights.adv << "\nlambda_fm = " << c.weights.fm << "\nlambda_cb = " << c.weights.cb
    << "\nlambda_cm = " << c.weights.cm << "\nlambda_adv_d = " << c.weights.adv_d << "\ncore = \"" << c.core << "\""
    << "\ncore_bands = " << c.core_bands << "\ncore_bits = " << c.core_bits << "\ncore_encode_cmd = \""
    << c.core_encode_cmd << "\"\ncore_decode_cmd = \"" << c.core_decode_cmd << "\"\ncore_delay = " << c.core_delay
    << "\nsegment_len = " << c.segment_len << "\nbatch_size = " << c.batch_size << "\nsteps = " << c.steps
    << "\nseed = " << c.seed << "\nlr = " << c.lr << "\nbeta1 = " << c.beta1 << "\nbeta2 = " << c.beta2
    << "\nlr_decay = " << c.lr_decay << "\ngrad_clip = " << c.grad_clip
    << "\nquantizer_dropout = " << (c.quantizer_dropout ? "true" : "false") << "\ndropout_prob = " << c.dropout_prob
    << "\ncheckpoint_every = " << c.checkpoint_every << "\n";
  return o.str();
}

inline SbgConfig parse_config(const std::string& text, SbgConfig base = {}) {
  apply_key_values(base, parse_key_values(text));
  base.validate();
  return base;
}

inline SbgConfig load_config(const std::string& path, SbgConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

}  // namespace nsbg
