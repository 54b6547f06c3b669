// SPDX-License-Identifier: Apache-2.0
#include "punet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace punet {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

std::vector<i64> byte_ids(const std::string& text) {
  std::vector<i64> out;
  out.reserve(text.size());
  for (unsigned char ch : text) out.push_back(static_cast<i64>(ch));
  return out;
}

std::vector<i64> with_leading_sos(const std::vector<i64>& target, i64 sos) {
  std::vector<i64> out;
  out.reserve(target.size() + 1);
  out.push_back(sos);
  out.insert(out.end(), target.begin(), target.end());
  return out;
}

std::vector<i64> with_trailing_sos(const std::vector<i64>& target, i64 sos) {
  std::vector<i64> out = target;
  out.push_back(sos);
  return out;
}

void check_corpus_vocab(const ModelConfig& cfg, const Corpus& corpus,
                        const char* who) {
  const Vocabulary model_vocab = cfg.vocabulary();
  require(model_vocab.tokens() == corpus.meta.vocab.tokens(),
          std::string(who) + ": model and corpus vocabularies differ");
}

// Audio tensor for one training sample: optional babble at a drawn SNR,
// optional SpecAugment, then standardization. The rng draw order (SNR,
// babble, augmentation) is part of the determinism contract.
Tensor train_audio(const Utterance& utt, const StftConfig& stft_cfg,
                   const TrainConfig& cfg, const BabbleSource* babble,
                   Rng& rng) {
  std::vector<double> wave = utt.wave;
  if (cfg.noisy) {
    const SnrDb snr = draw_snr(rng);
    if (snr.has_value()) {
      require(babble != nullptr, "train: noisy training needs a babble pool");
      wave = mix_at_snr(wave, babble->sample(rng), snr);
    }
  }
  Spectrogram spec = stft(wave, stft_cfg);
  if (cfg.augment) spec = spec_augment(spec, cfg.spec_aug, rng);
  return prep_audio(spec);
}

// Corpus-level greedy best-path CER over (a prefix of) a split.
double greedy_dev_cer(const std::function<Tensor(const Utterance&)>& ctc_lp_of,
                      const std::vector<Utterance>& dev,
                      const Vocabulary& vocab, i64 limit) {
  const i64 n = limit > 0
                    ? std::min<i64>(limit, static_cast<i64>(dev.size()))
                    : static_cast<i64>(dev.size());
  i64 edits = 0, total = 0;
  for (i64 i = 0; i < n; ++i) {
    const Tensor lp = ctc_lp_of(dev[i]);
    const std::string hyp =
        vocab.decode(greedy_ctc_decode(lp, vocab.blank()));
    edits += edit_distance(byte_ids(hyp), byte_ids(dev[i].text)).distance;
    total += static_cast<i64>(dev[i].text.size());
  }
  return total > 0 ? static_cast<double>(edits) / static_cast<double>(total)
                   : 0.0;
}

std::vector<i64> visual_lengths(const std::vector<Utterance>& utts) {
  std::vector<i64> out;
  out.reserve(utts.size());
  for (const Utterance& u : utts) out.push_back(u.visual.frames);
  return out;
}

}  // namespace

// ---- optimizer ----

double noam_lr(i64 step, i64 warmup, double peak) {
  require(step >= 1, "noam_lr: steps are 1-based");
  require(warmup >= 1, "noam_lr: warmup must be at least one step");
  require(peak > 0.0, "noam_lr: peak rate must be positive");
  if (step <= warmup)
    return peak * static_cast<double>(step) / static_cast<double>(warmup);
  return peak * std::sqrt(static_cast<double>(warmup) /
                          static_cast<double>(step));
}

void Adam::step(ParamStore& params, double lr) {
  require(lr > 0.0, "adam: learning rate must be positive");
  for (auto& [name, tensor] : params.entries()) {
    const std::vector<double>& g = tensor.grad();
    if (g.empty()) continue;
    Slot& slot = slots_[name];
    if (slot.m.empty()) {
      slot.m.assign(g.size(), 0.0);
      slot.v.assign(g.size(), 0.0);
    }
    require(slot.m.size() == g.size(),
            "adam: gradient size changed for " + name);
    ++slot.t;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(slot.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(slot.t));
    double* x = tensor.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g[i];
      slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      x[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  ++steps_;
  params.bump_version();
}

double clip_gradients(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, tensor] : params.entries())
    for (double g : tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, tensor] : params.entries()) {
      auto& buf = tensor.node()->grad;
      for (double& g : buf) g *= s;
    }
  }
  return norm;
}

// ---- noise plumbing ----

SnrDb draw_snr(Rng& rng) {
  static const double kTable[] = {20.0, 15.0, 10.0, 5.0, 0.0, -5.0};
  const i64 pick = rng.uniform_int(0, 6);
  if (pick == 0) return SnrDb();
  return kTable[pick - 1];
}

BabbleSource::BabbleSource(const std::vector<Utterance>& pool, i64 voices)
    : voices_(voices) {
  require(!pool.empty(), "babble: empty utterance pool");
  require(voices >= 2, "babble: need at least two voices");
  waves_.reserve(pool.size());
  for (const Utterance& u : pool) waves_.push_back(&u.wave);
}

std::vector<double> BabbleSource::sample(Rng& rng) const {
  return make_babble(waves_, voices_, rng);
}

Tensor eval_audio(const Utterance& utt, const StftConfig& stft_cfg, SnrDb snr,
                  const BabbleSource* babble, std::uint64_t noise_seed) {
  std::vector<double> wave = utt.wave;
  if (snr.has_value()) {
    require(babble != nullptr, "eval: babble source required at finite SNR");
    Rng rng = Rng(noise_seed).derive(utt.seed);
    wave = mix_at_snr(wave, babble->sample(rng), snr);
  }
  return prep_audio(stft(wave, stft_cfg));
}

// ---- training loop ----

void TrainConfig::validate() const {
  require(epochs >= 1, "train: epochs must be at least 1");
  require(batch >= 1, "train: batch must be at least 1");
  require(warmup >= 1, "train: warmup must be at least 1");
  require(peak_lr > 0.0, "train: peak_lr must be positive");
  require(lambda >= 0.0 && lambda <= 1.0, "train: lambda must lie in [0,1]");
  require(label_smoothing >= 0.0 && label_smoothing < 1.0,
          "train: label_smoothing must lie in [0,1)");
  require(limit_train >= 0 && limit_dev >= 0, "train: limits must be >= 0");
  require(babble_voices >= 2, "train: babble_voices must be at least 2");
}

std::vector<double> TrainLog::first_losses(i64 n) const {
  std::vector<double> out;
  const i64 m = std::min<i64>(n, static_cast<i64>(steps.size()));
  out.reserve(m);
  for (i64 i = 0; i < m; ++i) out.push_back(steps[i].total);
  return out;
}

TrainLog run_training(ParamStore& params, i64 n_train,
                      const SampleLossFn& sample_loss, const TrainConfig& cfg,
                      const DevMetricFn& dev, const std::vector<i64>& lengths) {
  cfg.validate();
  require(n_train >= 1, "train: empty training split");
  const i64 n =
      cfg.limit_train > 0 ? std::min(cfg.limit_train, n_train) : n_train;
  require(lengths.empty() || static_cast<i64>(lengths.size()) >= n,
          "train: curriculum lengths shorter than the training split");

  const auto t0 = std::chrono::steady_clock::now();
  Adam adam;
  TrainLog log;
  const Rng master(cfg.seed);
  std::vector<i64> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  i64 opt_step = 0;
  for (i64 epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.curriculum && epoch == 0 && !lengths.empty()) {
      std::stable_sort(order.begin(), order.end(),
                       [&](i64 a, i64 b) { return lengths[a] < lengths[b]; });
    } else {
      Rng shuffle_rng =
          master.derive(0x5B00000000ULL + static_cast<std::uint64_t>(epoch));
      for (i64 i = n - 1; i >= 1; --i) {
        const i64 j = shuffle_rng.uniform_int(0, i);
        std::swap(order[i], order[j]);
      }
    }

    for (i64 start = 0; start < n; start += cfg.batch) {
      const i64 bsz = std::min(cfg.batch, n - start);
      params.zero_grads();
      StepRecord rec;
      double ctc_sum = 0.0;
      i64 ctc_n = 0;
      const Rng epoch_rng =
          master.derive(0xA500000000ULL + static_cast<std::uint64_t>(epoch));
      for (i64 k = 0; k < bsz; ++k) {
        const i64 idx = order[start + k];
        Rng srng = epoch_rng.derive(static_cast<std::uint64_t>(idx));
        const LossBreakdown lb = sample_loss(idx, srng);
        backward(scale(lb.total, 1.0 / static_cast<double>(bsz)));
        rec.total += lb.total.scalar();
        rec.att += lb.att_nll;
        if (lb.ctc_feasible) {
          ctc_sum += lb.ctc_nll;
          ++ctc_n;
        }
      }
      rec.total /= static_cast<double>(bsz);
      rec.att /= static_cast<double>(bsz);
      rec.ctc = ctc_n > 0 ? ctc_sum / static_cast<double>(ctc_n) : 0.0;
      rec.grad_norm = clip_gradients(params, cfg.clip_norm);
      rec.lr = noam_lr(++opt_step, cfg.warmup, cfg.peak_lr);
      adam.step(params, rec.lr);
      params.zero_grads();
      log.steps.push_back(rec);
    }
    if (dev) log.dev_curve.push_back(dev());
  }

  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return log;
}

// ---- model trainers ----

TrainLog pretrain_lip(ParamStore& params, const LipModel& model,
                      const Corpus& corpus, const TrainConfig& cfg) {
  check_corpus_vocab(model.config(), corpus, "pretrain_lip");
  require(model.config().d_v == corpus.meta.cfg.d_v,
          "pretrain_lip: visual width mismatch");
  const Vocabulary vocab = corpus.meta.vocab;
  const std::vector<Utterance>& train = corpus.train;

  SampleLossFn loss = [&params, &model, &train, &vocab,
                       &cfg](i64 idx, Rng&) -> LossBreakdown {
    const Utterance& utt = train[static_cast<std::size_t>(idx)];
    const Tensor visual = prep_visual(utt.visual);
    const Tensor feats = model.encode(params, visual);
    const CtcLoss ctc = ctc_forward_loss(model.ctc_log_probs(params, feats),
                                         utt.target, vocab.blank());
    const Tensor rows = model.decoder().forward(
        params, feats, with_leading_sos(utt.target, vocab.sos()));
    const Tensor att =
        attention_ce_loss(rows, with_trailing_sos(utt.target, vocab.sos()),
                          cfg.label_smoothing, true);
    return hybrid_loss(ctc, att, cfg.lambda);
  };

  DevMetricFn dev = [&params, &model, &corpus, &vocab, &cfg]() {
    return greedy_dev_cer(
        [&](const Utterance& utt) {
          return model.ctc_log_probs(params,
                                     model.encode(params,
                                                  prep_visual(utt.visual)));
        },
        corpus.dev, vocab, cfg.limit_dev);
  };

  return run_training(params, static_cast<i64>(train.size()), loss, cfg, dev,
                      visual_lengths(train));
}

TrainLog pretrain_asr(ParamStore& params, const AsrModel& model,
                      const Corpus& corpus, const TrainConfig& cfg) {
  check_corpus_vocab(model.config(), corpus, "pretrain_asr");
  require(model.config().audio_bins == corpus.meta.cfg.stft.n_bins(),
          "pretrain_asr: spectrogram bin mismatch");
  const Vocabulary vocab = corpus.meta.vocab;
  const std::vector<Utterance>& train = corpus.train;
  const StftConfig stft_cfg = corpus.meta.cfg.stft;
  const BabbleSource babble(train, cfg.babble_voices);

  SampleLossFn loss = [&params, &model, &train, &vocab, &cfg, stft_cfg,
                       &babble](i64 idx, Rng& rng) -> LossBreakdown {
    const Utterance& utt = train[static_cast<std::size_t>(idx)];
    const Tensor audio = train_audio(utt, stft_cfg, cfg, &babble, rng);
    const Tensor feats = model.encode(params, audio);
    const CtcLoss ctc = ctc_forward_loss(model.ctc_log_probs(params, feats),
                                         utt.target, vocab.blank());
    const Tensor rows = model.decoder().forward(
        params, feats, with_leading_sos(utt.target, vocab.sos()));
    const Tensor att =
        attention_ce_loss(rows, with_trailing_sos(utt.target, vocab.sos()),
                          cfg.label_smoothing, true);
    return hybrid_loss(ctc, att, cfg.lambda);
  };

  DevMetricFn dev = [&params, &model, &corpus, &vocab, &cfg, stft_cfg]() {
    return greedy_dev_cer(
        [&](const Utterance& utt) {
          const Tensor audio =
              prep_audio(stft(utt.wave, stft_cfg));  // clean dev audio
          return model.ctc_log_probs(params, model.encode(params, audio));
        },
        corpus.dev, vocab, cfg.limit_dev);
  };

  return run_training(params, static_cast<i64>(train.size()), loss, cfg, dev,
                      visual_lengths(train));
}

TrainLog pretrain_lm(ParamStore& params, const CharLM& lm,
                     const Corpus& corpus, const TrainConfig& cfg) {
  const Vocabulary vocab = corpus.meta.vocab;
  require(lm.n_classes() == vocab.size(),
          "pretrain_lm: model and corpus vocabularies differ");
  const std::vector<Utterance>& train = corpus.train;

  SampleLossFn loss = [&params, &lm, &train, &vocab,
                       &cfg](i64 idx, Rng&) -> LossBreakdown {
    const Utterance& utt = train[static_cast<std::size_t>(idx)];
    const Tensor rows =
        lm.forward(params, with_leading_sos(utt.target, vocab.sos()));
    const Tensor att =
        attention_ce_loss(rows, with_trailing_sos(utt.target, vocab.sos()),
                          cfg.label_smoothing, true);
    // Pure next-character objective: an always-feasible zero CTC term under
    // lambda == 0 keeps the shared loop unchanged.
    CtcLoss none;
    none.nll = Tensor::zeros({1});
    none.feasible = true;
    return hybrid_loss(none, att, 0.0);
  };

  DevMetricFn dev = [&params, &lm, &corpus, &vocab, &cfg]() {
    const i64 n = cfg.limit_dev > 0
                      ? std::min<i64>(cfg.limit_dev,
                                      static_cast<i64>(corpus.dev.size()))
                      : static_cast<i64>(corpus.dev.size());
    double nll = 0.0;
    i64 chars = 0;
    for (i64 i = 0; i < n; ++i) {
      const Utterance& utt = corpus.dev[static_cast<std::size_t>(i)];
      const Tensor rows =
          lm.forward(params, with_leading_sos(utt.target, vocab.sos()));
      const std::vector<i64> tgt = with_trailing_sos(utt.target, vocab.sos());
      for (std::size_t p = 0; p < tgt.size(); ++p)
        nll -= rows.at(static_cast<i64>(p), tgt[p]);
      chars += static_cast<i64>(tgt.size());
    }
    return chars > 0 ? nll / static_cast<double>(chars) : 0.0;
  };

  std::vector<i64> lengths;
  lengths.reserve(train.size());
  for (const Utterance& u : train)
    lengths.push_back(static_cast<i64>(u.target.size()));
  return run_training(params, static_cast<i64>(train.size()), loss, cfg, dev,
                      lengths);
}

TrainLog train_punet(ParamStore& params, const PUNet& model,
                     const Corpus& corpus, const TrainConfig& cfg) {
  check_corpus_vocab(model.config(), corpus, "train_punet");
  require(model.config().d_v == corpus.meta.cfg.d_v,
          "train_punet: visual width mismatch");
  require(model.config().audio_bins == corpus.meta.cfg.stft.n_bins(),
          "train_punet: spectrogram bin mismatch");
  const Vocabulary vocab = corpus.meta.vocab;
  const std::vector<Utterance>& train = corpus.train;
  const StftConfig stft_cfg = corpus.meta.cfg.stft;
  const BabbleSource babble(train, cfg.babble_voices);

  SampleLossFn loss = [&params, &model, &train, &vocab, &cfg, stft_cfg,
                       &babble](i64 idx, Rng& rng) -> LossBreakdown {
    const Utterance& utt = train[static_cast<std::size_t>(idx)];
    const Tensor audio = train_audio(utt, stft_cfg, cfg, &babble, rng);
    const Tensor visual = prep_visual(utt.visual);
    const PUNet::Encoded enc = model.encode(params, audio, visual);
    const CtcLoss ctc = ctc_forward_loss(model.ctc_log_probs(params, enc.r),
                                         utt.target, vocab.blank());
    const Tensor rows = model.decoder().forward(
        params, enc.r, with_leading_sos(utt.target, vocab.sos()));
    const Tensor att =
        attention_ce_loss(rows, with_trailing_sos(utt.target, vocab.sos()),
                          cfg.label_smoothing, true);
    return hybrid_loss(ctc, att, cfg.lambda);
  };

  DevMetricFn dev = [&params, &model, &corpus, &vocab, &cfg, stft_cfg]() {
    return greedy_dev_cer(
        [&](const Utterance& utt) {
          const Tensor audio = prep_audio(stft(utt.wave, stft_cfg));
          const PUNet::Encoded enc =
              model.encode(params, audio, prep_visual(utt.visual));
          return model.ctc_log_probs(params, enc.r);
        },
        corpus.dev, vocab, cfg.limit_dev);
  };

  return run_training(params, static_cast<i64>(train.size()), loss, cfg, dev,
                      visual_lengths(train));
}

TrainLog train_concat(ParamStore& params, const FeatConcatModel& model,
                      const Corpus& corpus, const TrainConfig& cfg) {
  check_corpus_vocab(model.config(), corpus, "train_concat");
  require(model.config().d_v == corpus.meta.cfg.d_v,
          "train_concat: visual width mismatch");
  require(model.config().audio_bins == corpus.meta.cfg.stft.n_bins(),
          "train_concat: spectrogram bin mismatch");
  const Vocabulary vocab = corpus.meta.vocab;
  const std::vector<Utterance>& train = corpus.train;
  const StftConfig stft_cfg = corpus.meta.cfg.stft;
  const BabbleSource babble(train, cfg.babble_voices);

  SampleLossFn loss = [&params, &model, &train, &vocab, &cfg, stft_cfg,
                       &babble](i64 idx, Rng& rng) -> LossBreakdown {
    const Utterance& utt = train[static_cast<std::size_t>(idx)];
    const Tensor audio = train_audio(utt, stft_cfg, cfg, &babble, rng);
    const Tensor visual = prep_visual(utt.visual);
    const Tensor r = model.encode(params, audio, visual);
    const CtcLoss ctc = ctc_forward_loss(model.ctc_log_probs(params, r),
                                         utt.target, vocab.blank());
    const Tensor rows = model.decoder().forward(
        params, r, with_leading_sos(utt.target, vocab.sos()));
    const Tensor att =
        attention_ce_loss(rows, with_trailing_sos(utt.target, vocab.sos()),
                          cfg.label_smoothing, true);
    return hybrid_loss(ctc, att, cfg.lambda);
  };

  DevMetricFn dev = [&params, &model, &corpus, &vocab, &cfg, stft_cfg]() {
    return greedy_dev_cer(
        [&](const Utterance& utt) {
          const Tensor audio = prep_audio(stft(utt.wave, stft_cfg));
          const Tensor r =
              model.encode(params, audio, prep_visual(utt.visual));
          return model.ctc_log_probs(params, r);
        },
        corpus.dev, vocab, cfg.limit_dev);
  };

  return run_training(params, static_cast<i64>(train.size()), loss, cfg, dev,
                      visual_lengths(train));
}

void init_concat_from_pretrained(ParamStore& params,
                                 const FeatConcatModel& model,
                                 const Checkpoint& asr, const Checkpoint& lip) {
  (void)model;
  for (auto& [name, tensor] : params.entries()) {
    const Checkpoint* src = nullptr;
    std::string which;
    if (name.rfind("fuse.", 0) == 0) continue;  // fresh fusion layers stay
    if (name.rfind("frontend.", 0) == 0 || name.rfind("enc.", 0) == 0 ||
        name.rfind("ctc.", 0) == 0) {
      src = &asr;
      which = "asr";
    } else if (name.rfind("dec.", 0) == 0) {
      src = &lip;
      which = "lip";
    } else {
      fail("init: no pretrained source for parameter '" + name + "'");
    }
    require(src->has(name), "init: missing tensor '" + name + "' in " + which +
                                " checkpoint");
    const CheckpointEntry& e = src->entry(name);
    require(e.dtype == 'f', "init: " + name + ": not a float tensor");
    require(e.shape == tensor.shape(),
            "init: " + name + ": stored shape " + shape_str(e.shape) +
                " vs expected " + shape_str(tensor.shape()));
    params.set_data(name, e.f64);
  }
  params.bump_version();
}

// ---- evaluation ----

Recognizer make_recognizer(const ParamStore& params, const PUNet& net) {
  Recognizer r;
  r.encode = [&params, &net](const Tensor& audio, const Tensor& visual) {
    const PUNet::Encoded enc = net.encode(params, audio, visual);
    return UtteranceScores{net.ctc_log_probs(params, enc.r), enc.r};
  };
  r.decoder_scorer = [&params, &net](const Tensor& memory) {
    return make_decoder_scorer(params, net.decoder(), memory);
  };
  return r;
}

Recognizer make_recognizer(const ParamStore& params, const AsrModel& net) {
  Recognizer r;
  r.uses_visual = false;
  r.encode = [&params, &net](const Tensor& audio, const Tensor&) {
    const Tensor feats = net.encode(params, audio);
    return UtteranceScores{net.ctc_log_probs(params, feats), feats};
  };
  r.decoder_scorer = [&params, &net](const Tensor& memory) {
    return make_decoder_scorer(params, net.decoder(), memory);
  };
  return r;
}

Recognizer make_recognizer(const ParamStore& params,
                           const FeatConcatModel& net) {
  Recognizer r;
  r.encode = [&params, &net](const Tensor& audio, const Tensor& visual) {
    const Tensor feats = net.encode(params, audio, visual);
    return UtteranceScores{net.ctc_log_probs(params, feats), feats};
  };
  r.decoder_scorer = [&params, &net](const Tensor& memory) {
    return make_decoder_scorer(params, net.decoder(), memory);
  };
  return r;
}

Recognizer make_recognizer(const ParamStore& params, const LipModel& net) {
  Recognizer r;
  r.uses_audio = false;
  r.encode = [&params, &net](const Tensor&, const Tensor& visual) {
    const Tensor feats = net.encode(params, visual);
    return UtteranceScores{net.ctc_log_probs(params, feats), feats};
  };
  r.decoder_scorer = [&params, &net](const Tensor& memory) {
    return make_decoder_scorer(params, net.decoder(), memory);
  };
  return r;
}

EvalReport evaluate_split(const Recognizer& rec,
                          const std::vector<Utterance>& utts,
                          const StftConfig& stft_cfg, const Vocabulary& vocab,
                          const EvalOptions& opt, const StepScorer& lm) {
  opt.decode.validate();
  require(!opt.snr.has_value() || opt.babble != nullptr,
          "eval: a babble source is required at finite SNR");
  require(opt.greedy_ctc || opt.decode.psi == 0.0 || lm,
          "eval: psi > 0 requires a language model scorer");
  require(rec.encode != nullptr, "eval: recognizer has no encoder");

  EvalReport rep;
  const i64 n = opt.limit > 0
                    ? std::min<i64>(opt.limit, static_cast<i64>(utts.size()))
                    : static_cast<i64>(utts.size());
  for (i64 i = 0; i < n; ++i) {
    const Utterance& utt = utts[static_cast<std::size_t>(i)];
    Tensor audio, visual;
    if (rec.uses_audio)
      audio = eval_audio(utt, stft_cfg, opt.snr, opt.babble, opt.noise_seed);
    if (rec.uses_visual) visual = prep_visual(utt.visual);
    const UtteranceScores scores = rec.encode(audio, visual);

    EvalRecord r;
    r.id = utt.id;
    r.ref_text = utt.text;
    if (opt.greedy_ctc) {
      r.hyp_text =
          vocab.decode(greedy_ctc_decode(scores.ctc_lp, vocab.blank()));
    } else {
      StepScorer dec_scorer;
      if (opt.decode.gamma > 0.0)
        dec_scorer = rec.decoder_scorer(scores.memory);
      const DecodeResult d =
          joint_beam_search(scores.ctc_lp, dec_scorer, lm, opt.decode,
                            vocab.blank(), vocab.sos());
      r.hyp_text = vocab.decode(d.tokens);
      r.joint = d.joint;
      r.ctc = d.ctc;
      r.dec = d.dec;
      r.lm = d.lm;
      r.truncated = d.truncated;
    }

    rep.char_edits +=
        edit_distance(byte_ids(r.hyp_text), byte_ids(r.ref_text)).distance;
    rep.char_total += static_cast<i64>(r.ref_text.size());
    rep.word_edits +=
        edit_distance(split_words(r.hyp_text), split_words(r.ref_text))
            .distance;
    rep.word_total += static_cast<i64>(split_words(r.ref_text).size());
    rep.records.push_back(std::move(r));
  }
  rep.cer = rep.char_total > 0 ? static_cast<double>(rep.char_edits) /
                                     static_cast<double>(rep.char_total)
                               : 0.0;
  rep.wer = rep.word_total > 0 ? static_cast<double>(rep.word_edits) /
                                     static_cast<double>(rep.word_total)
                               : 0.0;
  return rep;
}

std::pair<double, double> rates_from_records(
    const std::vector<EvalRecord>& records) {
  i64 ce = 0, ct = 0, we = 0, wt = 0;
  for (const EvalRecord& r : records) {
    ce += edit_distance(byte_ids(r.hyp_text), byte_ids(r.ref_text)).distance;
    ct += static_cast<i64>(r.ref_text.size());
    we += edit_distance(split_words(r.hyp_text), split_words(r.ref_text))
              .distance;
    wt += static_cast<i64>(split_words(r.ref_text).size());
  }
  return {ct > 0 ? static_cast<double>(ce) / static_cast<double>(ct) : 0.0,
          wt > 0 ? static_cast<double>(we) / static_cast<double>(wt) : 0.0};
}

SimilarityProfile representation_profile(const Recognizer& rec,
                                         const std::vector<Utterance>& utts,
                                         const StftConfig& stft_cfg,
                                         const std::vector<double>& grid_db,
                                         const BabbleSource& babble,
                                         std::uint64_t noise_seed, i64 limit) {
  require(rec.uses_audio, "profile: recognizer must consume audio");
  require(!grid_db.empty(), "profile: empty SNR grid");
  const i64 n = limit > 0
                    ? std::min<i64>(limit, static_cast<i64>(utts.size()))
                    : static_cast<i64>(utts.size());
  require(n >= 1, "profile: no utterances");

  std::vector<std::vector<double>> values(grid_db.size());
  for (i64 i = 0; i < n; ++i) {
    const Utterance& utt = utts[static_cast<std::size_t>(i)];
    Tensor visual;
    if (rec.uses_visual) visual = prep_visual(utt.visual);
    const Tensor clean =
        eval_audio(utt, stft_cfg, SnrDb(), nullptr, noise_seed);
    const Tensor r_clean = rec.encode(clean, visual).memory;
    for (std::size_t g = 0; g < grid_db.size(); ++g) {
      const Tensor noisy =
          eval_audio(utt, stft_cfg, grid_db[g], &babble, noise_seed);
      const Tensor r_noisy = rec.encode(noisy, visual).memory;
      values[g].push_back(cosine_frames(r_clean, r_noisy).mean);
    }
  }
  return make_profile(grid_db, values, false);
}

// ---- run manifests ----

std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<std::uint64_t>(p[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& text) {
  return fnv1a64(text.data(), text.size());
}

namespace {

void hash_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<std::uint64_t>(p[i]);
    h *= 0x100000001b3ULL;
  }
}

void hash_doubles(std::uint64_t& h, const std::vector<double>& v) {
  if (!v.empty()) hash_bytes(h, v.data(), v.size() * sizeof(double));
}

void hash_i64s(std::uint64_t& h, const std::vector<i64>& v) {
  if (!v.empty()) hash_bytes(h, v.data(), v.size() * sizeof(i64));
}

void hash_string(std::uint64_t& h, const std::string& s) {
  hash_bytes(h, s.data(), s.size());
  const char sep = '\x1f';
  hash_bytes(h, &sep, 1);
}

}  // namespace

std::uint64_t corpus_fingerprint(const Corpus& corpus) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::string& tok : corpus.meta.vocab.tokens())
    hash_string(h, tok);
  hash_i64s(h, corpus.meta.visemes.viseme_of);
  for (const auto& bins : corpus.meta.char_bins) hash_i64s(h, bins);
  for (const auto& amps : corpus.meta.char_amps) hash_doubles(h, amps);
  for (const auto& tmpl : corpus.meta.viseme_templates) hash_doubles(h, tmpl);
  for (const std::vector<Utterance>* split :
       {&corpus.train, &corpus.dev, &corpus.test}) {
    for (const Utterance& u : *split) {
      hash_string(h, u.id);
      hash_string(h, u.text);
      hash_i64s(h, u.target);
      hash_doubles(h, u.wave);
      hash_doubles(h, u.visual.values);
      hash_i64s(h, u.frame_char);
    }
  }
  return h;
}

std::string format_g17(double v) {
  char buf[64];
  std::string best;
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v &&
        (best.empty() || std::strlen(buf) < best.size()))
      best = buf;
  }
  if (!best.empty()) return best;
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join_g17(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += format_g17(v[i]);
  }
  return out;
}

void RunManifest::set(const std::string& key, const std::string& value) {
  require(!key.empty() && key.find('=') == std::string::npos &&
              key.find('\n') == std::string::npos,
          "manifest: bad key '" + key + "'");
  require(value.find('\n') == std::string::npos,
          "manifest: value for '" + key + "' contains a newline");
  for (auto& [k, v] : fields_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  fields_.emplace_back(key, value);
}

void RunManifest::set_int(const std::string& key, i64 value) {
  set(key, std::to_string(value));
}

void RunManifest::set_double(const std::string& key, double value) {
  set(key, format_g17(value));
}

bool RunManifest::has(const std::string& key) const {
  for (const auto& [k, v] : fields_)
    if (k == key) return true;
  return false;
}

const std::string& RunManifest::get(const std::string& key) const {
  for (const auto& [k, v] : fields_)
    if (k == key) return v;
  fail("manifest: missing key '" + key + "'");
}

std::string RunManifest::text() const {
  std::string out;
  for (const auto& [k, v] : fields_) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

void RunManifest::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "manifest: cannot open '" + path + "' for writing");
  const std::string body = text();
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  require(f.good(), "manifest: write to '" + path + "' failed");
}

RunManifest RunManifest::parse(const std::string& body) {
  RunManifest m;
  std::istringstream in(body);
  std::string line;
  i64 lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::size_t eq = line.find(" = ");
    require(eq != std::string::npos,
            "manifest: malformed line " + std::to_string(lineno));
    const std::string key = line.substr(0, eq);
    require(!m.has(key), "manifest: duplicate key '" + key + "'");
    m.set(key, line.substr(eq + 3));
  }
  return m;
}

RunManifest RunManifest::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "manifest: cannot open '" + path + "'");
  std::ostringstream body;
  body << f.rdbuf();
  return parse(body.str());
}

}  // namespace punet
