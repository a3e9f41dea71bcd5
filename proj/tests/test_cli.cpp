#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "nsbg/codec/bitstream.hpp"
#include "nsbg/codec/core_codec.hpp"
#include "nsbg/dsp/audio.hpp"
#include "nsbg/metrics.hpp"
#include "test_util.hpp"

using namespace nsbg;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;  // stdout and stderr
};

Run run(const std::string& args) {
  const std::string cmd = std::string(NSBG_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("nsbg_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(path("small.cfg")) << "enc_channels = 64\ndec_channels = 8\n";
    std::ofstream(path("small16.cfg")) << "enc_channels = 64\ndec_channels = 8\nn_hf = 11\n";
    auto x = testutil::white_noise(20000, 3, 0.2);
    for (std::size_t i = 0; i < x.size(); ++i) x.samples[i] += 0.3 * std::sin(2.0 * M_PI * 1000.0 * double(i) / 48000.0);
    dsp::write_wav(path("in.wav"), x);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string small() const { return " --config " + path("small.cfg"); }

  fs::path dir_;
};

std::string slurp(const std::string& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

}  // namespace

TEST_F(Cli, EncodePrintsFormulaRate) {
  const auto r = run("encode " + path("in.wav") + " --out " + path("a.nsbg") + " --nq 11");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("side-info formula bps: 2578.125"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("side-info measured bps: 2625"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("padding overhead bound bps: 46.875"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(path("a.nsbg.core")));
  EXPECT_NE(r.out.find("seed-initialized"), std::string::npos);
}

TEST_F(Cli, RoundTripIsLengthExact) {
  auto r = run("encode " + path("in.wav") + small() + " --out " + path("a.nsbg") + " --nq 6");
  ASSERT_EQ(r.code, 0) << r.out;
  r = run("decode " + path("a.nsbg.core") + " " + path("a.nsbg") + small() + " --out " + path("y.wav"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("band split: core 5 + generated 10 of 32"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("bandwidth Hz: 11250"), std::string::npos) << r.out;
  const auto y = dsp::read_wav(path("y.wav"));
  EXPECT_EQ(y.size(), 20000u);
  EXPECT_EQ(y.sample_rate, 48000);
}

TEST_F(Cli, DecodeAcceptsCoreWav) {
  ASSERT_EQ(run("encode " + path("in.wav") + small() + " --out " + path("a.nsbg")).code, 0);
  const auto xc = codec::SurrogateCore(5, 8).decode(slurp(path("a.nsbg.core")));
  dsp::write_wav(path("core.wav"), xc);
  ASSERT_EQ(run("decode " + path("a.nsbg.core") + " " + path("a.nsbg") + small() + " --out " + path("y1.wav")).code, 0);
  ASSERT_EQ(run("decode " + path("core.wav") + " " + path("a.nsbg") + small() + " --out " + path("y2.wav")).code, 0);
  const auto y1 = dsp::read_wav(path("y1.wav")), y2 = dsp::read_wav(path("y2.wav"));
  ASSERT_EQ(y1.size(), y2.size());
  // The core WAV is float32, so allow its rounding.
  EXPECT_GE(testutil::snr_db(y1.samples, y2.samples), 80.0);
}

TEST_F(Cli, HeaderOnlyStream) {
  auto r = run("encode " + path("in.wav") + small() + " --out " + path("a.nsbg") + " --nq 0");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(fs::file_size(path("a.nsbg")), codec::kHeaderBytes);
  EXPECT_NE(r.out.find("side-info formula bps: 0"), std::string::npos) << r.out;
  r = run("decode " + path("a.nsbg.core") + " " + path("a.nsbg") + small() + " --out " + path("y.wav"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(dsp::read_wav(path("y.wav")).size(), 20000u);
}

TEST_F(Cli, StereoInputIsRejected) {
  std::vector<double> st(2 * 4000, 0.1);
  dsp::AudioBuffer x(st);
  std::string wav = dsp::encode_wav(x, dsp::WavEncoding::Pcm16);
  // Rewrite the fmt chunk as 2 channels at the same sample rate.
  wav[22] = 2;
  const std::uint32_t byte_rate = 48000u * 4u;
  std::memcpy(&wav[28], &byte_rate, 4);
  wav[32] = 4;
  std::ofstream(path("stereo.wav"), std::ios::binary) << wav;
  const auto r = run("encode " + path("stereo.wav") + small() + " --out " + path("a.nsbg"));
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("mono"), std::string::npos) << r.out;
}

TEST_F(Cli, UsageErrors) {
  auto r = run("encode " + path("in.wav") + small() + " --out " + path("a.nsbg") + " --nq 12");
  EXPECT_EQ(r.code, 1) << r.out;
  EXPECT_NE(r.out.find("12"), std::string::npos) << r.out;
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("encode").code, 1);
  EXPECT_EQ(run("encode " + path("missing.wav") + " --out " + path("a.nsbg")).code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, CorruptedMagic) {
  ASSERT_EQ(run("encode " + path("in.wav") + small() + " --out " + path("a.nsbg")).code, 0);
  auto bytes = slurp(path("a.nsbg"));
  bytes[1] = 'X';
  std::ofstream(path("bad.nsbg"), std::ios::binary) << bytes;
  const auto r = run("decode " + path("a.nsbg.core") + " " + path("bad.nsbg") + small() + " --out " + path("y.wav"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("not an NSBG stream"), std::string::npos) << r.out;
}

TEST_F(Cli, TruncatedPayload) {
  ASSERT_EQ(run("encode " + path("in.wav") + small() + " --out " + path("a.nsbg")).code, 0);
  const auto bytes = slurp(path("a.nsbg"));
  std::ofstream(path("cut.nsbg"), std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  const auto r = run("decode " + path("a.nsbg.core") + " " + path("cut.nsbg") + small() + " --out " + path("y.wav"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("truncated"), std::string::npos) << r.out;
}

TEST_F(Cli, SplitMismatch) {
  ASSERT_EQ(run("encode " + path("in.wav") + small() + " --out " + path("a.nsbg")).code, 0);
  const auto r = run("decode " + path("a.nsbg.core") + " " + path("a.nsbg") + " --config " + path("small16.cfg") + " --out " + path("y.wav"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("config mismatch: stream N_HF = 10, model expects 11"), std::string::npos) << r.out;
}

TEST_F(Cli, EvalReportsJsonAndCsv) {
  const auto r = run("eval " + path("in.wav") + " " + path("in.wav") + " --json " + path("m.json") + " --csv " + path("m.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(slurp(path("m.json")));
  EXPECT_EQ(j["lsd_db"].get<double>(), 0.0);
  ASSERT_EQ(j["band_snr_db"].size(), 32u);
  for (const auto& v : j["band_snr_db"]) EXPECT_EQ(v.get<double>(), 120.0);
  const auto csv = slurp(path("m.csv"));
  EXPECT_EQ(csv.rfind("band,snr_db\n0,120\n", 0), 0u) << csv;
  EXPECT_NE(csv.find("lsd,0"), std::string::npos);
}

TEST_F(Cli, EvalWithStreamAndDelay) {
  ASSERT_EQ(run("encode " + path("in.wav") + small() + " --out " + path("a.nsbg") + " --nq 11").code, 0);
  auto x = dsp::read_wav(path("in.wav"));
  x.samples.insert(x.samples.begin(), 37, 0.0);
  dsp::write_wav(path("late.wav"), x);
  auto r = run("eval " + path("in.wav") + " " + path("late.wav") + " --delay 37 --stream " + path("a.nsbg"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out.substr(r.out.find('{')));
  EXPECT_EQ(j["lsd_db"].get<double>(), 0.0);
  EXPECT_EQ(j["side_info_bps"]["formula"].get<double>(), 2578.125);
  EXPECT_EQ(j["side_info_bps"]["measured"].get<double>(), 2625.0);
  r = run("eval " + path("in.wav") + " " + path("late.wav"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("length mismatch"), std::string::npos) << r.out;
}

TEST_F(Cli, Inspect) {
  ASSERT_EQ(run("encode " + path("in.wav") + small() + " --out " + path("a.nsbg") + " --nq 3").code, 0);
  auto r = run("inspect stream " + path("a.nsbg"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["n_q"].get<int>(), 3);
  EXPECT_EQ(j["bytes_per_frame"].get<int>(), 4);
  EXPECT_EQ(j["frames"].get<int>(), 10);
  r = run("inspect pqmf --out " + path("p.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto csv = slurp(path("p.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 32 * 8);
  r = run("inspect config" + small());
  EXPECT_NE(r.out.find("enc_channels = 64"), std::string::npos) << r.out;
  r = run("inspect spectrogram " + path("in.wav"));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1 + 10);
  EXPECT_EQ(run("inspect nothing").code, 1);
}

TEST_F(Cli, TrainShortRun) {
  std::ofstream(path("train.cfg")) << "enc_channels = 32\ndec_channels = 4\nmpd_channels = 2\nstft_disc_channels = 2\n"
                                      "segment_len = 8192\nbatch_size = 1\ncheckpoint_every = 1\n";
  fs::create_directories(path("data"));
  dsp::write_wav(path("data/a.wav"), testutil::white_noise(17000, 4));
  auto r = run("train --config " + path("train.cfg") + " --data " + path("data") + " --out " + path("run") + " --steps 2 --seed 5");
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* f : {"loss.csv", "model.ckpt", "disc.ckpt", "step1.ckpt", "config.txt"}) EXPECT_TRUE(fs::exists(path("run/") + f)) << f;
  r = run("inspect checkpoint " + path("run/model.ckpt"));
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("encoder.proj.weight"), std::string::npos);
  // The trained checkpoint and the saved config drive the codec.
  ASSERT_EQ(run("encode " + path("in.wav") + " --config " + path("run/config.txt") + " --model " + path("run/model.ckpt") +
                " --out " + path("t.nsbg")).code,
            0);
  EXPECT_EQ(run("train --config " + path("train.cfg") + " --data " + path("nowhere") + " --out " + path("run2")).code, 1);
}

TEST(Metrics, IdenticalSignals) {
  SbgConfig cfg;
  const auto x = testutil::white_noise(24000, 5);
  const auto rep = metrics::evaluate(x, x, cfg);
  EXPECT_EQ(rep.lsd, 0.0);
  for (double s : rep.band_snr) EXPECT_EQ(s, 120.0);
}

TEST(Metrics, AddedNoiseMatchesAnalyticSnr) {
  SbgConfig cfg;
  const auto bank = dsp::design_pqmf(32, 8, 100.0);
  const auto x = testutil::white_noise(96000, 6, 0.3);
  const auto n = testutil::white_noise(96000, 7, 0.03);
  auto y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y.samples[i] += n.samples[i];
  // Both signals are white, so every band sees the broadband power ratio.
  double ex = 0, en = 0;
  for (std::size_t i = 0; i < x.size(); ++i) ex += x.samples[i] * x.samples[i], en += n.samples[i] * n.samples[i];
  const double analytic = 10.0 * std::log10(ex / en);
  EXPECT_NEAR(analytic, 20.0, 0.2);
  const auto snr = metrics::band_snr(x, y, bank);
  for (std::size_t k = 0; k < 32; ++k) EXPECT_NEAR(snr[k], analytic, 1.0) << k;
  EXPECT_GT(metrics::lsd(x, y, cfg), 0.0);
}

TEST(Metrics, BandLimitedTestHasZeroDbHighBands) {
  const auto bank = dsp::design_pqmf(32, 8, 100.0);
  const auto x = testutil::white_noise(48000, 8);
  const auto y = codec::surrogate_core(x, 5, 24);
  const auto snr = metrics::band_snr(x, y, bank);
  for (std::size_t k = 7; k < 32; ++k) EXPECT_NEAR(snr[k], 0.0, 0.05) << k;
  for (std::size_t k = 0; k < 4; ++k) EXPECT_GE(snr[k], 40.0) << k;
}

TEST(Metrics, Errors) {
  SbgConfig cfg;
  const auto x = testutil::white_noise(5000, 9);
  EXPECT_THROW(metrics::evaluate(x, testutil::white_noise(5001, 9), cfg), FormatError);
  EXPECT_THROW(metrics::evaluate(x, x, cfg, 10), FormatError);
  auto x44 = x;
  x44.sample_rate = 44100;
  EXPECT_THROW(metrics::align(x, x44, 0), FormatError);
  EXPECT_EQ(metrics::snr_db(1.0, 0.0), 120.0);
  EXPECT_EQ(metrics::snr_db(0.0, 1.0), -120.0);
}
