#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "nsbg/train/trainer.hpp"
#include "test_util.hpp"

using namespace nsbg;
using namespace nsbg::train;

namespace {

SbgConfig tiny_config() {
  SbgConfig cfg;
  cfg.enc_channels = 32;
  cfg.dec_channels = 4;
  cfg.mpd_channels = 2;
  cfg.stft_disc_channels = 2;
  cfg.segment_len = 8192;
  cfg.batch_size = 2;
  cfg.steps = 3;
  return cfg;
}

SyntheticSpec tiny_spec() {
  SyntheticSpec s;
  s.files = 2;
  s.seconds = 0.4;
  return s;
}

std::vector<const Example*> batch_of(const std::vector<Example>& ex, std::size_t n) {
  std::vector<const Example*> b;
  for (std::size_t i = 0; i < n; ++i) b.push_back(&ex[i % ex.size()]);
  return b;
}

struct TinyData {
  SbgConfig cfg = tiny_config();
  codec::SurrogateCore core{5, 8};
  DatasetIndex data = synthetic_dataset(cfg, core, 3, tiny_spec());
  std::vector<Example> examples = prepare_examples(data, cfg);
};

const TinyData& tiny() {
  static const TinyData d;
  return d;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("nsbg_trainer_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::vector<float> snapshot(ad::ParameterSet<float>& ps) {
  std::vector<float> v;
  for (auto& [_, t] : ps) v.insert(v.end(), t.values().begin(), t.values().end());
  return v;
}

}  // namespace

TEST(Dataset, SegmentGrid) {
  const auto& d = tiny();
  // 0.4 s = 19200 samples holds two 8192-sample segments per file.
  EXPECT_EQ(d.data.segments().size(), 4u);
  for (const auto& s : d.data.segments()) EXPECT_LE(s.offset + d.cfg.segment_len, d.data.files()[s.file].x.size());
  EXPECT_NEAR(d.data.total_seconds(), 0.8, 1e-9);
  const auto& ex = d.examples.front();
  EXPECT_EQ(ex.x_tgt.shape(), (ad::Shape{1, 8192}));
  EXPECT_EQ(ex.core_bands.shape(), (ad::Shape{5, 256}));
  EXPECT_EQ(ex.slab.shape(), (ad::Shape{1, 320, 4}));
}

TEST(Dataset, OrderIsDeterministicPermutation) {
  const auto& d = tiny();
  const auto a = d.data.order(11, 0), b = d.data.order(11, 0);
  EXPECT_EQ(a, b);
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), a.size());
  bool differs = false;
  for (std::size_t e = 1; e < 8 && !differs; ++e) differs = d.data.order(11, e) != a;
  EXPECT_TRUE(differs);
}

TEST(Dataset, CoreIsBandLimited) {
  const auto& d = tiny();
  const auto& f = d.data.files().front();
  const auto mid = testutil::tapered({f.x_core.samples.begin() + 4096, f.x_core.samples.begin() + 8192});
  const auto ref = testutil::tapered({f.x.samples.begin() + 4096, f.x.samples.begin() + 8192});
  EXPECT_LE(10.0 * std::log10(testutil::energy_above(mid, 4125.0) / testutil::energy_above(ref, 4125.0)), -40.0);
}

TEST(Dataset, EmptyInputsAreErrors) {
  EXPECT_THROW(DatasetIndex({}, 8192), UsageError);
  AudioFile shortf;
  shortf.x = dsp::AudioBuffer(std::vector<double>(100, 0.0));
  shortf.x_core = shortf.x;
  EXPECT_THROW(DatasetIndex({shortf}, 8192), UsageError);
  const auto dir = scratch("empty");
  codec::SurrogateCore core(5, 8);
  EXPECT_THROW(load_directory(dir.string(), tiny_config(), core), UsageError);
  EXPECT_THROW(load_directory((dir / "missing").string(), tiny_config(), core), UsageError);
}

TEST(Dataset, LoadDirectoryRejectsOtherRates) {
  const auto dir = scratch("rates");
  dsp::write_wav((dir / "a.wav").string(), testutil::white_noise(9000, 1));
  auto x44 = testutil::white_noise(9000, 2);
  x44.sample_rate = 44100;
  dsp::write_wav((dir / "b.wav").string(), x44);
  std::ofstream(dir / "c.txt") << "not audio";
  codec::SurrogateCore core(5, 8);
  const auto idx = load_directory(dir.string(), tiny_config(), core);
  EXPECT_EQ(idx.files().size(), 1u);
  EXPECT_EQ(idx.files()[0].name, "a.wav");
  ASSERT_EQ(idx.rejected().size(), 1u);
  EXPECT_NE(idx.rejected()[0].find("b.wav"), std::string::npos);
}

TEST(Trainer, TwoStepsAreDeterministic) {
  const auto& d = tiny();
  Trainer a(d.cfg, 5), b(d.cfg, 5);
  for (int s = 0; s < 2; ++s) {
    const auto ra = a.train_step(batch_of(d.examples, 2));
    const auto rb = b.train_step(batch_of(d.examples, 2));
    EXPECT_TRUE(same_losses(ra, rb)) << csv_row(ra) << "\n" << csv_row(rb);
  }
  EXPECT_EQ(a.model().params().find("encoder.proj.weight")->values(), b.model().params().find("encoder.proj.weight")->values());
}

TEST(Trainer, ReducedObjectiveWithoutDiscriminators) {
  auto cfg = tiny_config();
  cfg.weights.adv = 0.0;
  cfg.weights.fm = 0.0;
  Trainer tr(cfg, 6);
  tr.freeze_discriminators(true);
  const auto before = snapshot(tr.disc_params());
  const auto& d = tiny();
  for (int s = 0; s < 2; ++s) {
    const auto r = tr.train_step(batch_of(d.examples, 2));
    EXPECT_EQ(r.adv, 0.0);
    EXPECT_EQ(r.fm, 0.0);
    EXPECT_EQ(r.d, 0.0);
    EXPECT_NEAR(r.total, 15.0 * r.mel + r.cb + 0.5 * r.cm, 1e-5 * std::max(1.0, r.total));
  }
  EXPECT_EQ(snapshot(tr.disc_params()), before);
}

TEST(Trainer, FullObjectiveCombination) {
  const auto& d = tiny();
  Trainer tr(d.cfg, 7);
  const auto r = tr.train_step(batch_of(d.examples, 2));
  EXPECT_NEAR(r.total, 15.0 * r.mel + 3.0 * r.adv + 6.0 * r.fm + r.cb + 0.5 * r.cm, 1e-5 * std::max(1.0, r.total));
  EXPECT_GT(r.d, 0.0);
  EXPECT_GT(r.fm, 0.0);
}

TEST(Trainer, CoreIsNeverTrained) {
  const auto& d = tiny();
  Trainer tr(d.cfg, 8);
  for (const auto& [name, p] : tr.model().params()) EXPECT_EQ(name.rfind("core", 0), std::string::npos) << name;
  const auto bank_before = tr.model().bank().analysis;
  tr.train_step(batch_of(d.examples, 2));
  EXPECT_EQ(tr.model().bank().analysis, bank_before);
}

TEST(Trainer, QuantizerDropout) {
  auto cfg = tiny_config();
  cfg.quantizer_dropout = false;
  Trainer off(cfg, 9);
  for (int i = 0; i < 200; ++i) EXPECT_EQ(off.sample_n_active(), cfg.n_q);
  cfg.quantizer_dropout = true;
  Trainer on(cfg, 9);
  std::vector<int> hist(cfg.n_q + 1, 0);
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto k = on.sample_n_active();
    ASSERT_GE(k, 1u);
    ASSERT_LE(k, cfg.n_q);
    ++hist[k];
  }
  // P(k) = 0.5/N_q for k < N_q, 0.5 + 0.5/N_q for k = N_q.
  const double p = 0.5 / double(cfg.n_q);
  for (std::size_t k = 1; k < cfg.n_q; ++k) EXPECT_NEAR(hist[k] / double(n), p, 0.01) << k;
  EXPECT_NEAR(hist[cfg.n_q] / double(n), 0.5 + p, 0.015);
}

TEST(Trainer, LearningRateDecay) {
  ad::ParameterSet<float> ps;
  ps.add("w", {1}, {0.0f});
  ad::Adam<float> opt(ps, adam_config(SbgConfig{}));
  for (int s = 0; s < 100000; ++s) opt.step();
  const double closed = 1e-4 * std::exp(100000.0 * std::log(0.999996));
  EXPECT_NEAR(opt.learning_rate(), closed, 1e-15);
  EXPECT_NEAR(opt.learning_rate(), 6.70e-5, 5e-8);
}

TEST(Trainer, LossRecordCarriesScheduledRate) {
  const auto& d = tiny();
  Trainer tr(d.cfg, 10);
  const auto r1 = tr.train_step(batch_of(d.examples, 2));
  const auto r2 = tr.train_step(batch_of(d.examples, 2));
  EXPECT_DOUBLE_EQ(r1.lr, 1e-4);
  EXPECT_DOUBLE_EQ(r2.lr, 1e-4 * 0.999996);
}

TEST(Trainer, NonFiniteParameterAborts) {
  const auto& d = tiny();
  Trainer tr(d.cfg, 11);
  auto w = *tr.model().params().find("decoder.generator.out.weight");
  w.values()[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    tr.train_step(batch_of(d.examples, 2));
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("mel="), std::string::npos) << e.what();
  }
}

TEST(Trainer, EmptyBatchAndDataset) {
  Trainer tr(tiny_config(), 12);
  EXPECT_THROW(tr.train_step({}), UsageError);
  DatasetIndex empty;
  EXPECT_THROW(toy_train(tr, empty, {}), UsageError);
}

// Silence does not give a silent model output (log-power floor at the
// encoder, biases, FiLM shifts), so the loss is finite and trained downward.
TEST(Trainer, ZeroedDatasetRunsAndTrainsTowardSilence) {
  auto cfg = tiny_config();
  cfg.steps = 3;
  AudioFile f;
  f.name = "zeros";
  f.x = dsp::AudioBuffer(std::vector<double>(16384, 0.0));
  f.x_core = f.x;
  DatasetIndex data({f}, cfg.segment_len);
  const auto ex = prepare_examples(data, cfg);
  for (float v : ex[0].x_tgt.values()) ASSERT_EQ(v, 0.0f);
  Trainer tr(cfg, 13);
  const auto log = toy_train(tr, data, ex);
  ASSERT_EQ(log.size(), 3u);
  for (std::size_t i = 0; i < log.size(); ++i) {
    EXPECT_TRUE(std::isfinite(log[i].total)) << csv_row(log[i]);
    if (i > 0) {
      EXPECT_LT(log[i].mel, log[i - 1].mel) << csv_row(log[i]);
    }
  }
}

TEST(ToyTrain, WritesCsvAndCheckpoints) {
  auto cfg = tiny_config();
  cfg.steps = 4;
  cfg.checkpoint_every = 2;
  const auto& d = tiny();
  const auto dir = scratch("run");
  Trainer tr(cfg, 14);
  std::size_t seen = 0;
  const auto log = toy_train(tr, d.data, d.examples, {(dir / "loss.csv").string(), (dir / "ckpt").string(), [&](const LossRecord&) { ++seen; }});
  EXPECT_EQ(log.size(), 4u);
  EXPECT_EQ(seen, 4u);
  std::ifstream in(dir / "loss.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, csv_header());
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(line, csv_row(log[rows]));
    ++rows;
  }
  EXPECT_EQ(rows, 4u);
  for (const char* f : {"step2.ckpt", "step4.ckpt", "model.ckpt", "disc.ckpt"}) EXPECT_TRUE(std::filesystem::exists(dir / "ckpt" / f)) << f;
  // The final checkpoint restores the trained generator exactly.
  model::SbgModel<float> m(cfg, 99);
  ad::load_checkpoint(m.params(), (dir / "ckpt" / "model.ckpt").string());
  EXPECT_EQ(snapshot(m.params()), snapshot(tr.model().params()));
  EXPECT_EQ(tr.steps_done(), 4u);
}

TEST(ToyTrain, MeanMelWindow) {
  std::vector<LossRecord> log(5);
  for (std::size_t i = 0; i < 5; ++i) log[i].mel = double(i);
  EXPECT_DOUBLE_EQ(mean_mel(log, 0, 2), 0.5);
  EXPECT_DOUBLE_EQ(mean_mel(log, 3, 2), 3.5);
  EXPECT_THROW(mean_mel(log, 4, 2), UsageError);
}
