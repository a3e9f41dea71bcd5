#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "nsbg/ad/checkpoint.hpp"
#include "nsbg/ad/nn.hpp"
#include "nsbg/ad/optim.hpp"
#include "nsbg/config.hpp"
#include "nsbg/model/discriminator.hpp"
#include "nsbg/model/losses.hpp"
#include "nsbg/model/sbg.hpp"
#include "nsbg/train/dataset.hpp"

namespace nsbg::train {

struct LossRecord {
  std::size_t step = 0;
  std::size_t n_active = 0;
  double mel = 0, adv = 0, fm = 0, cb = 0, cm = 0;
  double d = 0;      // discriminator objective (before its update)
  double total = 0;  // generator objective
  double lr = 0;
  double seconds = 0;
};

inline std::string csv_header() { return "step,n_active,mel,adv,fm,cb,cm,d,total,lr,seconds"; }

inline std::string csv_row(const LossRecord& r) {
  std::ostringstream s;
  s << std::setprecision(9) << r.step << ',' << r.n_active << ',' << r.mel << ',' << r.adv << ',' << r.fm << ',' << r.cb
    << ',' << r.cm << ',' << r.d << ',' << r.total << ',' << r.lr << ',' << std::setprecision(4) << r.seconds;
  return s.str();
}

inline bool same_losses(const LossRecord& a, const LossRecord& b) {
  return a.step == b.step && a.n_active == b.n_active && a.mel == b.mel && a.adv == b.adv && a.fm == b.fm &&
         a.cb == b.cb && a.cm == b.cm && a.d == b.d && a.total == b.total && a.lr == b.lr;
}

inline ad::AdamConfig adam_config(const SbgConfig& cfg) { return {cfg.lr, cfg.beta1, cfg.beta2, 1e-8, cfg.lr_decay}; }

template <class T>
void set_trainable(ad::ParameterSet<T>& ps, bool on) {
  for (auto& [_, p] : ps) p.set_requires_grad(on);
}

// Generator, quantizer and discriminators with their optimizers. One
// train_step = discriminator update on (x_tgt, detached x_hat) followed by a
// generator update on the weighted objective.
class Trainer {
 public:
  Trainer(const SbgConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), model_(std::make_unique<model::SbgModel<float>>(cfg, seed)), rng_(seed ^ 0xD1B54A32D192ED03ull) {
    ad::Rng drng(seed + 0x632BE59BD9B4E019ull);
    disc_ = model::DiscriminatorSet<float>(disc_params_, cfg_, drng);
    model_->rvq().enforce_escape_code();
    opt_g_ = std::make_unique<ad::Adam<float>>(model_->params(), adam_config(cfg_));
    opt_d_ = std::make_unique<ad::Adam<float>>(disc_params_, adam_config(cfg_));
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const SbgConfig& config() const { return cfg_; }
  model::SbgModel<float>& model() { return *model_; }
  const model::SbgModel<float>& model() const { return *model_; }
  const model::DiscriminatorSet<float>& discriminators() const { return disc_; }
  ad::ParameterSet<float>& disc_params() { return disc_params_; }
  std::size_t steps_done() const { return step_; }

  // Freezes the discriminators (no update, no gradient); used for ablations.
  void freeze_discriminators(bool on) { freeze_d_ = on; }

  std::size_t sample_n_active() {
    if (!cfg_.quantizer_dropout || cfg_.n_q == 0) return cfg_.n_q;
    if (rng_.uniform() < cfg_.dropout_prob) return 1 + rng_.below(cfg_.n_q);
    return cfg_.n_q;
  }

  LossRecord train_step(const std::vector<const Example*>& batch) {
    if (batch.empty()) throw UsageError("empty batch");
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n_active = sample_n_active();
    const float inv_b = 1.0f / float(batch.size());
    LossRecord rec;
    rec.step = step_ + 1;
    rec.n_active = n_active;
    rec.lr = opt_g_->learning_rate();

    // Generator forward with graphs kept for the generator update.
    std::vector<model::SbgForward<float>> fwd;
    fwd.reserve(batch.size());
    for (const auto* ex : batch) fwd.push_back(model_->forward(ex->core_bands, ex->slab, n_active));

    // Discriminator update.
    if (!freeze_d_) {
      set_trainable(disc_params_, true);
      disc_params_.zero_grad();
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto real = disc_(batch[i]->x_tgt);
        const auto fake = disc_(fwd[i].x_hat.detach());
        const auto h = model::hinge_losses(real.scores, fake.scores);
        const auto ld = ad::scale(h.d, float(cfg_.weights.adv_d) * inv_b);
        rec.d += double(h.d.item()) / double(batch.size());
        check_finite(rec, "discriminator");
        ad::backward(ld);
      }
      clip(disc_params_, rec, "discriminator");
      opt_d_->step();
    }

    // Generator update against the refreshed discriminators.
    set_trainable(disc_params_, false);
    model_->params().zero_grad();
    const bool use_disc = cfg_.weights.adv != 0.0 || cfg_.weights.fm != 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto& f = fwd[i];
      model::GeneratorLossTerms<float> c;
      c.mel = model::mel_loss(f.x_hat, batch[i]->x_tgt, cfg_.sample_rate);
      c.cb = f.q.codebook_loss;
      c.cm = f.q.commitment_loss;
      if (use_disc) {
        model::DiscOutput<float> real;
        {
          ad::NoGradGuard ng;
          real = disc_(batch[i]->x_tgt);
        }
        const auto fake = disc_(f.x_hat);
        c.adv = model::hinge_losses<float>({}, fake.scores).g;
        c.fm = model::feature_matching(real.features, fake.features);
      } else {
        c.adv = Tensor<float>::scalar(0.0f);
        c.fm = Tensor<float>::scalar(0.0f);
      }
      const auto total = model::total_generator_loss(c, cfg_.weights);
      const double b = double(batch.size());
      rec.mel += double(c.mel.item()) / b;
      rec.adv += double(c.adv.item()) / b;
      rec.fm += double(c.fm.item()) / b;
      rec.cb += double(c.cb.item()) / b;
      rec.cm += double(c.cm.item()) / b;
      rec.total += double(total.item()) / b;
      check_finite(rec, "generator");
      ad::backward(ad::scale(total, inv_b));
      f = {};  // release the graph
    }
    clip(model_->params(), rec, "generator");
    opt_g_->step();
    model_->rvq().enforce_escape_code();
    ++step_;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
  }

  // Mel loss of the current generator on one example with `n_active` layers.
  double eval_mel(const Example& ex, std::size_t n_active) const {
    ad::NoGradGuard ng;
    const auto f = model_->forward(ex.core_bands, ex.slab, n_active);
    return double(model::mel_loss(f.x_hat, ex.x_tgt, cfg_.sample_rate).item());
  }

  void save(const std::string& generator_path, const std::string& disc_path = "") const {
    ad::save_checkpoint(model_->params(), generator_path);
    if (!disc_path.empty()) ad::save_checkpoint(disc_params_, disc_path);
  }

 private:
  static std::string dump(const LossRecord& r, const char* stage) {
    std::ostringstream s;
    s << " in " << stage << " update at step " << r.step << ": mel=" << r.mel << " adv=" << r.adv << " fm=" << r.fm
      << " cb=" << r.cb << " cm=" << r.cm << " d=" << r.d << " total=" << r.total;
    return s.str();
  }

  static void check_finite(const LossRecord& r, const char* stage) {
    for (double v : {r.mel, r.adv, r.fm, r.cb, r.cm, r.d, r.total})
      if (!std::isfinite(v)) throw NumericError("non-finite loss" + dump(r, stage));
  }

  void clip(ad::ParameterSet<float>& ps, const LossRecord& r, const char* stage) const {
    try {
      ad::clip_grad_norm(ps, cfg_.grad_clip);
    } catch (const NumericError& e) {
      throw NumericError(e.what() + dump(r, stage));
    }
  }

  SbgConfig cfg_;
  std::unique_ptr<model::SbgModel<float>> model_;
  ad::ParameterSet<float> disc_params_;
  model::DiscriminatorSet<float> disc_;
  std::unique_ptr<ad::Adam<float>> opt_g_, opt_d_;
  ad::Rng rng_;
  std::size_t step_ = 0;
  bool freeze_d_ = false;
};

// Prepared examples for every segment of the dataset, built once.
inline std::vector<Example> prepare_examples(const DatasetIndex& data, const SbgConfig& cfg) {
  const auto bank = dsp::design_pqmf(cfg.pqmf_bands, cfg.pqmf_taps, cfg.pqmf_atten_db);
  std::vector<Example> out;
  out.reserve(data.segments().size());
  for (std::size_t i = 0; i < data.segments().size(); ++i) {
    const auto [x, xc] = data.segment_audio(i);
    out.push_back(make_example(x, xc, cfg, bank));
  }
  return out;
}

struct TrainOptions {
  std::string csv_path;     // per-step loss log; empty = none
  std::string out_dir;      // checkpoints; empty = none
  std::function<void(const LossRecord&)> on_step;
};

// Runs cfg.steps steps over the shuffled segment order, epoch after epoch.
inline std::vector<LossRecord> toy_train(Trainer& tr, const DatasetIndex& data, const std::vector<Example>& examples,
                                         const TrainOptions& opt = {}) {
  const auto& cfg = tr.config();
  if (data.segments().empty()) throw UsageError("dataset is empty");
  if (examples.size() != data.segments().size()) throw UsageError("prepared examples do not match the dataset");
  std::ofstream csv;
  if (!opt.csv_path.empty()) {
    csv.open(opt.csv_path);
    if (!csv) throw FormatError("cannot write " + opt.csv_path);
    csv << csv_header() << '\n';
  }
  if (!opt.out_dir.empty()) std::filesystem::create_directories(opt.out_dir);
  std::vector<LossRecord> log;
  std::size_t epoch = 0, cursor = 0;
  auto order = data.order(cfg.seed, epoch);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    std::vector<const Example*> batch;
    while (batch.size() < cfg.batch_size) {
      if (cursor == order.size()) {
        order = data.order(cfg.seed, ++epoch);
        cursor = 0;
      }
      batch.push_back(&examples[order[cursor++]]);
    }
    log.push_back(tr.train_step(batch));
    if (csv) csv << csv_row(log.back()) << '\n' << std::flush;
    if (opt.on_step) opt.on_step(log.back());
    if (!opt.out_dir.empty() && cfg.checkpoint_every > 0 && (s + 1) % cfg.checkpoint_every == 0)
      tr.save(opt.out_dir + "/step" + std::to_string(s + 1) + ".ckpt");
  }
  if (!opt.out_dir.empty()) tr.save(opt.out_dir + "/model.ckpt", opt.out_dir + "/disc.ckpt");
  return log;
}

inline double mean_mel(const std::vector<LossRecord>& log, std::size_t first, std::size_t count) {
  if (first + count > log.size()) throw UsageError("loss window exceeds the log");
  double s = 0.0;
  for (std::size_t i = first; i < first + count; ++i) s += log[i].mel;
  return s / double(count);
}

}  // namespace nsbg::train
