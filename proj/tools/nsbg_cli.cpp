// nsbg: encode, decode, train, eval and inspect.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "nsbg/ad/checkpoint.hpp"
#include "nsbg/codec/bitstream.hpp"
#include "nsbg/codec/core_codec.hpp"
#include "nsbg/codec/pipeline.hpp"
#include "nsbg/config.hpp"
#include "nsbg/dsp/audio.hpp"
#include "nsbg/dsp/pqmf.hpp"
#include "nsbg/dsp/stft.hpp"
#include "nsbg/error.hpp"
#include "nsbg/metrics.hpp"
#include "nsbg/model/rvq.hpp"
#include "nsbg/model/sbg.hpp"
#include "nsbg/train/dataset.hpp"
#include "nsbg/train/trainer.hpp"

namespace {

using namespace nsbg;
using json = nlohmann::json;

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

Level log_level() {
  static const Level lvl = [] {
    const char* e = std::getenv("NSBG_LOG");
    if (!e) return Level::Warn;
    const std::string s = e;
    if (s == "error" || s == "0") return Level::Error;
    if (s == "info" || s == "2") return Level::Info;
    if (s == "debug" || s == "3") return Level::Debug;
    return Level::Warn;
  }();
  return lvl;
}

void log(Level l, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (int(l) <= int(log_level())) std::cerr << "[nsbg " << names[int(l)] << "] " << msg << '\n';
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot write " + path);
  f.write(bytes.data(), std::streamsize(bytes.size()));
}

struct Common {
  std::string config_path;
  std::string model_path;
  std::string core;
  std::uint64_t seed = 1;
  bool seed_set = false;

  SbgConfig config() const {
    SbgConfig cfg = config_path.empty() ? SbgConfig{} : load_config(config_path);
    if (!core.empty()) cfg.core = core;
    if (seed_set) cfg.seed = seed;
    cfg.validate();
    return cfg;
  }

  std::unique_ptr<model::SbgModel<float>> model(const SbgConfig& cfg) const {
    auto m = std::make_unique<model::SbgModel<float>>(cfg, cfg.seed);
    if (model_path.empty())
      log(Level::Warn, "no --model given; using seed-initialized weights (seed " + std::to_string(cfg.seed) + ")");
    else
      ad::load_checkpoint(m->params(), model_path);
    return m;
  }
};

void add_common(CLI::App* app, Common& c, bool with_model = true) {
  app->add_option("--config", c.config_path, "Key/value configuration file");
  if (with_model) app->add_option("--model", c.model_path, "Generator checkpoint");
  app->add_option("--core", c.core, "Core codec")->check(CLI::IsMember({"surrogate", "external"}));
  app->add_option_function<std::uint64_t>(
      "--seed", [&c](const std::uint64_t& s) { c.seed = s, c.seed_set = true; }, "Random seed");
}

json header_json(const codec::SbgBitstream& bs) {
  return {{"version", bs.version}, {"sample_rate", bs.sample_rate}, {"n_core", bs.n_core}, {"n_hf", bs.n_hf},
          {"n_q", bs.n_q},         {"codebook_size", bs.codebook_size}, {"hop", bs.hop}, {"frames", bs.frames},
          {"bytes_per_frame", bs.bytes_per_frame()}};
}

int cmd_encode(const Common& c, const std::string& in, const std::string& out, std::string core_out, int nq) {
  const auto cfg = c.config();
  const auto x = dsp::read_wav(in);
  auto core = codec::make_core(cfg);
  auto m = c.model(cfg);
  const std::size_t n_active = nq < 0 ? cfg.n_q : std::size_t(nq);
  const auto r = codec::encode(x, *core, *m, n_active);
  const auto bytes = codec::pack(r.bitstream);
  write_file(out, bytes);
  if (core_out.empty()) core_out = out + ".core";
  write_file(core_out, r.core_payload);
  const auto formula = model::side_info_bitrate(cfg.sample_rate, cfg.hop, n_active, cfg.codebook_size);
  const double measured = codec::measured_bitrate(r.bitstream);
  std::cout << "frames: " << r.bitstream.frames << "\n";
  std::cout << "side-info formula bps: " << formula.value() << "\n";
  std::cout << "side-info measured bps: " << measured << "\n";
  std::cout << "padding overhead bound bps: " << codec::padding_overhead_bound(r.bitstream) << "\n";
  log(Level::Info, "core payload written to " + core_out);
  return 0;
}

int cmd_decode(const Common& c, const std::string& core_in, const std::string& stream, const std::string& out) {
  const auto cfg = c.config();
  const auto bs = codec::unpack(read_file(stream));
  auto m = c.model(cfg);
  const auto core_bytes = read_file(core_in);
  codec::DecodeResult r;
  if (core_bytes.size() >= 4 && core_bytes.compare(0, 4, "RIFF") == 0) {
    r = codec::decode_with_core(dsp::parse_wav(core_bytes), bs, *m);
  } else {
    auto core = codec::make_core(cfg);
    r = codec::decode(core_bytes, bs, *core, *m);
  }
  dsp::write_wav(out, r.audio);
  const double bw = double(cfg.sample_rate) / (2.0 * double(cfg.pqmf_bands));
  std::cout << "band split: core " << cfg.n_core << " + generated " << cfg.n_hf << " of " << cfg.pqmf_bands << "\n";
  std::cout << "bandwidth Hz: " << bw * double(cfg.n_core + cfg.n_hf) << "\n";
  std::cout << "samples: " << r.audio.size() << "\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& data_dir, const std::string& out_dir, long steps) {
  auto cfg = c.config();
  if (steps >= 0) cfg.steps = std::size_t(steps);
  auto core = codec::make_core(cfg);
  const auto data = data_dir.empty() ? train::synthetic_dataset(cfg, *core, cfg.seed) : train::load_directory(data_dir, cfg, *core);
  for (const auto& r : data.rejected()) log(Level::Warn, "skipped " + r);
  log(Level::Info, "dataset: " + std::to_string(data.files().size()) + " files, " + std::to_string(data.segments().size()) +
                       " segments, " + std::to_string(data.total_seconds()) + " s");
  const auto examples = train::prepare_examples(data, cfg);
  train::Trainer tr(cfg, cfg.seed);
  if (!c.model_path.empty()) ad::load_checkpoint(tr.model().params(), c.model_path);
  std::filesystem::create_directories(out_dir);
  write_file(out_dir + "/config.txt", format_config(cfg));
  train::TrainOptions opt;
  opt.csv_path = out_dir + "/loss.csv";
  opt.out_dir = out_dir;
  opt.on_step = [](const train::LossRecord& r) { log(Level::Info, train::csv_row(r)); };
  const auto log_rows = train::toy_train(tr, data, examples, opt);
  std::cout << "steps: " << log_rows.size() << "\ncheckpoint: " << out_dir << "/model.ckpt\nloss log: " << opt.csv_path << "\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& ref_path, const std::string& test_path, std::size_t delay,
             const std::string& stream, const std::string& json_out, const std::string& csv_out) {
  const auto cfg = c.config();
  const auto ref = dsp::read_wav(ref_path);
  const auto test = dsp::read_wav(test_path);
  auto rep = metrics::evaluate(ref, test, cfg, delay);
  if (!stream.empty()) {
    const auto bs = codec::unpack(read_file(stream));
    rep.side_info_bps = metrics::BitrateReport{codec::measured_bitrate(bs),
                                               model::side_info_bitrate(bs.sample_rate, bs.hop, bs.n_q, bs.codebook_size).value()};
  }
  json j = {{"lsd_db", rep.lsd}, {"band_snr_db", rep.band_snr}};
  if (rep.side_info_bps) j["side_info_bps"] = {{"measured", rep.side_info_bps->measured}, {"formula", rep.side_info_bps->formula}};
  std::cout << j.dump(2) << "\n";
  if (!json_out.empty()) write_file(json_out, j.dump(2) + "\n");
  if (!csv_out.empty()) {
    std::ostringstream s;
    s << "band,snr_db\n";
    for (std::size_t k = 0; k < rep.band_snr.size(); ++k) s << k << ',' << rep.band_snr[k] << '\n';
    s << "lsd," << rep.lsd << '\n';
    write_file(csv_out, s.str());
  }
  return 0;
}

int cmd_inspect(const Common& c, const std::string& what, const std::string& in, const std::string& out) {
  const auto cfg = c.config();
  std::ostringstream s;
  s << std::setprecision(12);
  if (what == "pqmf") {
    const auto bank = dsp::design_pqmf(cfg.pqmf_bands, cfg.pqmf_taps, cfg.pqmf_atten_db);
    s << "tap,prototype\n";
    for (std::size_t i = 0; i < bank.prototype.size(); ++i) s << i << ',' << bank.prototype[i] << '\n';
  } else if (what == "spectrogram") {
    if (in.empty()) throw UsageError("inspect spectrogram needs an input WAV");
    const auto lp = dsp::log_power(dsp::stft(dsp::read_wav(in), cfg.window, cfg.hop));
    // Frame-major: one row per frame.
    s << "frame";
    for (std::size_t k = 0; k < lp.bins; ++k) s << ",bin" << k;
    s << '\n';
    for (std::size_t t = 0; t < lp.frames; ++t) {
      s << t;
      for (std::size_t k = 0; k < lp.bins; ++k) s << ',' << lp.at(k, t);
      s << '\n';
    }
  } else if (what == "stream") {
    if (in.empty()) throw UsageError("inspect stream needs a bitstream file");
    s << header_json(codec::unpack(read_file(in))).dump(2) << '\n';
  } else if (what == "config") {
    s << format_config(cfg);
  } else if (what == "checkpoint") {
    if (in.empty()) throw UsageError("inspect checkpoint needs a checkpoint file");
    json j = json::array();
    for (const auto& [name, a] : ad::parse_checkpoint(read_file(in))) j.push_back({{"name", name}, {"shape", a.shape}});
    s << j.dump(2) << '\n';
  } else {
    throw UsageError("unknown inspect target '" + what + "'");
  }
  if (out.empty())
    std::cout << s.str();
  else
    write_file(out, s.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::cout << std::setprecision(12);
  CLI::App app{"Neural subband generation codec tools"};
  app.require_subcommand(1);
  Common common;
  std::string in, out, core_out, stream, json_out, csv_out, data_dir, what;
  int nq = -1;
  long steps = -1;
  std::size_t delay = 0;

  auto* enc = app.add_subcommand("encode", "Encode side information for a WAV file");
  add_common(enc, common);
  enc->add_option("input", in, "Input WAV (48 kHz mono)")->required();
  enc->add_option("--out", out, "Output bitstream")->required();
  enc->add_option("--core-out", core_out, "Core payload output (default: <out>.core)");
  enc->add_option("--nq", nq, "Active VQ layers")->check(CLI::NonNegativeNumber);

  auto* dec = app.add_subcommand("decode", "Decode a bitstream with a core payload or core WAV");
  add_common(dec, common);
  dec->add_option("core_input", in, "Core payload or decoded core WAV")->required();
  dec->add_option("stream", stream, "Bitstream")->required();
  dec->add_option("--out", out, "Output WAV")->required();

  auto* trn = app.add_subcommand("train", "Train generator and discriminators");
  add_common(trn, common);
  trn->add_option("--data", data_dir, "Directory of 48 kHz mono WAV files (default: synthetic set)");
  trn->add_option("--out", out, "Output directory")->required();
  trn->add_option("--steps", steps, "Override the configured step count");

  auto* ev = app.add_subcommand("eval", "Objective metrics between a reference and a test WAV");
  add_common(ev, common, false);
  ev->add_option("ref", in, "Reference WAV")->required();
  ev->add_option("test", out, "Test WAV")->required();
  ev->add_option("--delay", delay, "Samples to drop from the start of the test signal");
  ev->add_option("--stream", stream, "Bitstream for side-information rate reporting");
  ev->add_option("--json", json_out, "Write the report as JSON");
  ev->add_option("--csv", csv_out, "Write per-band SNR as CSV");

  auto* ins = app.add_subcommand("inspect", "Dump filterbank, spectrogram, stream or checkpoint contents");
  add_common(ins, common, false);
  ins->add_option("what", what, "pqmf | spectrogram | stream | config | checkpoint")->required();
  ins->add_option("input", stream, "Input file");
  ins->add_option("--out", json_out, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*enc) return cmd_encode(common, in, out, core_out, nq);
    if (*dec) return cmd_decode(common, in, stream, out);
    if (*trn) return cmd_train(common, data_dir, out, steps);
    if (*ev) return cmd_eval(common, in, out, delay, stream, json_out, csv_out);
    if (*ins) return cmd_inspect(common, what, stream, json_out);
  } catch (const UsageError& e) {
    log(Level::Error, e.what());
    return 1;
  } catch (const FormatError& e) {
    log(Level::Error, e.what());
    return 2;
  } catch (const NumericError& e) {
    log(Level::Error, e.what());
    return 3;
  } catch (const std::exception& e) {
    log(Level::Error, std::string("internal error: ") + e.what());
    return 3;
  }
  return 1;
}
