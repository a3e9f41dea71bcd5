#include <gtest/gtest.h>

#include "nsbg/model/encoder.hpp"
#include "nsbg/model/sbg.hpp"
#include "test_util.hpp"

using namespace nsbg;
using namespace nsbg::model;
using ad::Shape;
using ad::Tensor;
using testutil::random_tensor;

namespace {

// Spectrogram whose value at (bin, frame) is bin + frame/1000.
dsp::Spectrogram ramp_spectrogram(std::size_t bins, std::size_t frames) {
  dsp::Spectrogram s;
  s.bins = bins;
  s.frames = frames;
  s.bin_hz = 48000.0 / 2048.0;
  s.hop = 2048;
  s.values.resize(bins * frames);
  for (std::size_t k = 0; k < bins; ++k)
    for (std::size_t t = 0; t < frames; ++t) s.values[k * frames + t] = double(k) + double(t) / 1000.0;
  return s;
}

SbgConfig small_encoder_config() {
  SbgConfig cfg;
  cfg.enc_channels = 64;
  cfg.dec_channels = 8;
  return cfg;
}

bool same_frames_before(const Tensor<float>& a, const Tensor<float>& b, std::size_t t_limit) {
  const std::size_t T = a.shape().back();
  const std::size_t rows = a.numel() / T;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < std::min(t_limit, T); ++t)
      if (a[r * T + t] != b[r * T + t]) return false;
  return true;
}

}  // namespace

TEST(SelectHfBins, TwelveKbpsSplit) {
  SbgConfig cfg;
  const auto s = ramp_spectrogram(1025, 4);
  const auto slab = select_hf_bins(s, cfg);
  EXPECT_EQ(slab.bins, 320u);
  EXPECT_EQ(slab.frames, 4u);
  // 3750 Hz / 23.4375 Hz = bin 160.
  EXPECT_DOUBLE_EQ(cfg.n_core * 750.0 / (48000.0 / 2048.0), 160.0);
  for (std::size_t k = 0; k < slab.bins; ++k)
    for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(slab.at(k, t), double(160 + k) + double(t) / 1000.0);
}

TEST(SelectHfBins, SixteenKbpsSplit) {
  SbgConfig cfg;
  cfg.n_hf = 11;
  const auto slab = select_hf_bins(ramp_spectrogram(1025, 3), cfg);
  EXPECT_EQ(slab.bins, 352u);
  EXPECT_EQ(slab.at(0, 0), 160.0);
  EXPECT_EQ(slab.at(351, 0), 511.0);
  EXPECT_EQ(slab.bins % cfg.freq_reduction, 0u);
}

TEST(SelectHfBins, Errors) {
  SbgConfig cfg;
  cfg.n_hf = 0;
  EXPECT_THROW(select_hf_bins(ramp_spectrogram(1025, 2), cfg), UsageError);
  cfg.n_core = 30;
  cfg.n_hf = 3;
  EXPECT_THROW(select_hf_bins(ramp_spectrogram(1025, 2), cfg), UsageError);
}

TEST(FeatureEncoder, FullWidthShapes) {
  SbgConfig cfg;
  ad::ParameterSet<float> ps;
  ad::Rng rng(1);
  FeatureEncoder<float> enc(ps, cfg, rng);
  ad::NoGradGuard ng;
  auto slab = random_tensor<float>({1, 320, 32}, rng, 3.0);
  auto h = random_tensor<float>({256, 256}, rng);
  const auto z = enc(slab, h);
  EXPECT_EQ(z.shape(), (Shape{512, 10, 32}));
  const auto zp = enc.project_reshape(z);
  EXPECT_EQ(zp.shape(), (Shape{320, 32}));
}

TEST(FeatureEncoder, SixteenKbpsShapes) {
  SbgConfig cfg;
  cfg.n_hf = 11;
  ad::ParameterSet<float> ps;
  ad::Rng rng(2);
  FeatureEncoder<float> enc(ps, cfg, rng);
  ad::NoGradGuard ng;
  const auto z = enc(random_tensor<float>({1, 352, 6}, rng), random_tensor<float>({256, 48}, rng));
  EXPECT_EQ(z.shape(), (Shape{512, 11, 6}));
  EXPECT_EQ(enc.project_reshape(z).shape(), (Shape{352, 6}));
}

TEST(FeatureEncoder, StageChannelTrace) {
  SbgConfig cfg;
  ad::ParameterSet<float> ps;
  ad::Rng rng(3);
  FeatureEncoder<float> enc(ps, cfg, rng);
  EXPECT_EQ(ps.find("encoder.stem.weight")->shape(), (Shape{64, 1, 7, 7}));
  EXPECT_EQ(ps.find("encoder.stage1.block1.conv1.weight")->shape(), (Shape{64, 64, 3, 3}));
  EXPECT_EQ(ps.find("encoder.stage2.block1.conv1.weight")->shape(), (Shape{128, 64, 3, 3}));
  EXPECT_EQ(ps.find("encoder.stage3.block1.conv1.weight")->shape(), (Shape{256, 128, 3, 3}));
  EXPECT_EQ(ps.find("encoder.stage4.block2.conv2.weight")->shape(), (Shape{512, 512, 3, 3}));
  EXPECT_EQ(ps.find("encoder.proj.weight")->shape(), (Shape{32, 512}));
}

TEST(FeatureEncoder, RejectsIndivisibleHeight) {
  auto cfg = small_encoder_config();
  ad::ParameterSet<float> ps;
  ad::Rng rng(4);
  FeatureEncoder<float> enc(ps, cfg, rng);
  EXPECT_THROW(enc(random_tensor<float>({1, 330, 4}, rng), random_tensor<float>({256 / 8, 32}, rng)), ShapeError);
}

TEST(FeatureEncoder, TimeCausality) {
  auto cfg = small_encoder_config();
  ad::ParameterSet<float> ps;
  ad::Rng rng(5);
  FeatureEncoder<float> enc(ps, cfg, rng);
  ad::NoGradGuard ng;
  const std::size_t T = 12;
  for (int trial = 0; trial < 20; ++trial) {
    auto slab = random_tensor<float>({1, 320, T}, rng, 3.0);
    auto h = random_tensor<float>({cfg.cond_channels(), 8 * T}, rng);
    const auto base = enc.project_reshape(enc(slab, h));
    const std::size_t t = rng.below(T);
    auto s2 = slab.detach();
    for (std::size_t f = 0; f < 320; ++f) s2.values()[f * T + t] += 1.0f;
    const auto pert = enc.project_reshape(enc(s2, h));
    EXPECT_TRUE(same_frames_before(base, pert, t)) << "slab frame " << t;
    EXPECT_FALSE(same_frames_before(base, pert, T)) << "perturbation had no effect";
    // h at timestep tau reaches frame tau/8 and later.
    const std::size_t tau = rng.below(8 * T);
    auto h2 = h.detach();
    for (std::size_t c = 0; c < h2.dim(0); ++c) h2.values()[c * 8 * T + tau] += 1.0f;
    const auto hp = enc.project_reshape(enc(slab, h2));
    EXPECT_TRUE(same_frames_before(base, hp, tau / 8)) << "h step " << tau;
  }
}

TEST(FeatureEncoder, ConditioningDependence) {
  auto cfg = small_encoder_config();
  ad::ParameterSet<float> ps;
  ad::Rng rng(6);
  FeatureEncoder<float> enc(ps, cfg, rng);
  for (auto& f : enc.films()) {
    auto w = f.proj.weight;
    for (auto& v : w.values()) v = float(rng.uniform(-0.3, 0.3));
  }
  ad::NoGradGuard ng;
  auto slab = random_tensor<float>({1, 320, 4}, rng, 3.0);
  auto h1 = random_tensor<float>({cfg.cond_channels(), 32}, rng);
  auto h2 = random_tensor<float>({cfg.cond_channels(), 32}, rng);
  const auto a = enc(slab, h1), b = enc(slab, h2);
  EXPECT_NE(a.values(), b.values());
  for (auto& f : enc.films()) {
    auto w = f.proj.weight;
    auto bias = f.proj.bias;
    std::fill(w.values().begin(), w.values().end(), 0.0f);
    std::fill(bias.values().begin(), bias.values().end(), 0.0f);
  }
  EXPECT_EQ(enc(slab, h1).values(), enc(slab, h2).values());
}

TEST(ProjectReshape, ChunkMajorLayout) {
  auto cfg = small_encoder_config();
  ad::ParameterSet<float> ps;
  ad::Rng rng(7);
  FeatureEncoder<float> enc(ps, cfg, rng);
  auto z = random_tensor<float>({64, 10, 5}, rng);
  const auto out = enc.project_reshape(z);
  ASSERT_EQ(out.shape(), (Shape{320, 5}));
  const auto& w = ps.find("encoder.proj.weight")->values();
  const auto& b = ps.find("encoder.proj.bias")->values();
  // Row chunk*32 + s holds channel s of the projection at frequency chunk.
  for (std::size_t chunk = 0; chunk < 10; ++chunk)
    for (std::size_t s = 0; s < 32; ++s)
      for (std::size_t t = 0; t < 5; ++t) {
        double acc = b[s];
        for (std::size_t d = 0; d < 64; ++d) acc += double(w[s * 64 + d]) * double(z[(d * 10 + chunk) * 5 + t]);
        EXPECT_NEAR(out[(chunk * 32 + s) * 5 + t], acc, 1e-5);
      }
}

TEST(ProjectReshape, ZeroInputZeroOutput) {
  auto cfg = small_encoder_config();
  ad::ParameterSet<float> ps;
  ad::Rng rng(8);
  FeatureEncoder<float> enc(ps, cfg, rng);
  const auto out = enc.project_reshape(Tensor<float>(Shape{64, 10, 3}));
  for (float v : out.values()) EXPECT_EQ(v, 0.0f);
}

TEST(ProjectReshape, ReshapeRoundTrip) {
  ad::Rng rng(9);
  auto p = random_tensor<float>({10, 32, 7}, rng);
  const auto merged = ad::reshape(p, {320, 7});
  const auto back = ad::reshape(merged, {10, 32, 7});
  EXPECT_EQ(back.values(), p.values());
  EXPECT_EQ(ad::reshape(back, {320, 7}).values(), merged.values());
}

TEST(FeatureEncoder, HfSlabFromAudio) {
  SbgConfig cfg;
  const auto x = testutil::white_noise(4 * 2048, 10);
  const auto slab = hf_slab<float>(x, cfg);
  EXPECT_EQ(slab.shape(), (Shape{1, 320, 4}));
  const auto full = dsp::log_power(dsp::stft(x, 2048, 2048));
  for (std::size_t k = 0; k < 320; k += 37)
    for (std::size_t t = 0; t < 4; ++t) EXPECT_FLOAT_EQ(slab[k * 4 + t], float(full.at(160 + k, t)));
}
