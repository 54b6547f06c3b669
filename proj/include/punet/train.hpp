// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "punet/corpus.hpp"
#include "punet/decoding.hpp"
#include "punet/features.hpp"
#include "punet/losses.hpp"
#include "punet/metrics.hpp"
#include "punet/model.hpp"
#include "punet/tensor.hpp"

namespace punet {

// ---- optimizer ----

// Learning rate at a 1-based optimizer step: linear warmup to `peak`
// reached exactly at step == warmup, then peak * sqrt(warmup / step).
double noam_lr(i64 step, i64 warmup, double peak);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

// Adam with bias correction. Moment slots are keyed by parameter name;
// parameters whose gradient buffer is empty this step are left untouched
// (their slot step does not advance).
class Adam {
 public:
  explicit Adam(AdamConfig cfg = AdamConfig()) : cfg_(cfg) {}

  void step(ParamStore& params, double lr);
  i64 steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  struct Slot {
    i64 t = 0;
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  i64 steps_ = 0;
  std::map<std::string, Slot> slots_;
};

// Scales all gradients so their global L2 norm is at most max_norm;
// returns the pre-clip norm. max_norm <= 0 measures without clipping.
double clip_gradients(ParamStore& params, double max_norm);

// ---- noise plumbing ----

// Uniform draw from the training noise table
// {no noise, 20, 15, 10, 5, 0, -5} dB.
SnrDb draw_snr(Rng& rng);

// Babble built by summing `voices` waveforms drawn from a fixed pool
// (normally the training split), mean-removed and scaled to unit RMS.
class BabbleSource {
 public:
  BabbleSource(const std::vector<Utterance>& pool, i64 voices = 6);
  std::vector<double> sample(Rng& rng) const;
  i64 voices() const { return voices_; }

 private:
  std::vector<const std::vector<double>*> waves_;
  i64 voices_;
};

// Standardized spectrogram tensor for an utterance, optionally mixed with
// babble at `snr` first. The per-utterance noise draw is deterministic in
// (noise_seed, utt.seed).
Tensor eval_audio(const Utterance& utt, const StftConfig& stft, SnrDb snr,
                  const BabbleSource* babble, std::uint64_t noise_seed);

// ---- training loop ----

struct TrainConfig {
  i64 epochs = 10;
  i64 batch = 8;   // gradient-accumulation size
  i64 warmup = 300;
  double peak_lr = 1e-3;
  double lambda = 0.3;  // CTC weight in the hybrid loss
  double label_smoothing = 0.1;
  double clip_norm = 5.0;  // 0 disables clipping
  bool noisy = false;      // per-sample SNR draws from the table
  bool augment = false;    // SpecAugment on the (possibly noisy) audio
  SpecAugmentConfig spec_aug{2, 8, 2, 8, 2};
  bool curriculum = false;  // shortest-first ordering in the first epoch
  i64 babble_voices = 6;
  i64 limit_train = 0;  // 0 = whole split
  i64 limit_dev = 0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct StepRecord {
  double total = 0.0;  // batch mean of the hybrid objective
  double ctc = 0.0;    // batch mean over feasible CTC terms
  double att = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;  // pre-clip global norm
};

struct TrainLog {
  std::vector<StepRecord> steps;   // one per optimizer step
  std::vector<double> dev_curve;   // one per epoch when a dev metric runs
  double wall_seconds = 0.0;

  std::vector<double> first_losses(i64 n = 10) const;
};

// Builds the scalar training graph for one utterance index. The rng is the
// sample's private stream (augmentation, noise); draws must not depend on
// position within the batch.
using SampleLossFn = std::function<LossBreakdown(i64 index, Rng& rng)>;
using DevMetricFn = std::function<double()>;

// Shuffle / accumulate / clip / Adam-step loop shared by every trainer.
// `lengths` (one per training index) feed the optional shortest-first
// first epoch; later epochs always shuffle.
TrainLog run_training(ParamStore& params, i64 n_train,
                      const SampleLossFn& sample_loss, const TrainConfig& cfg,
                      const DevMetricFn& dev = DevMetricFn(),
                      const std::vector<i64>& lengths = {});

// ---- model trainers (hybrid CTC/attention unless noted) ----

// Lipreading: visual stream only.
TrainLog pretrain_lip(ParamStore& params, const LipModel& model,
                      const Corpus& corpus, const TrainConfig& cfg);

// Audio only; cfg.noisy draws per-sample SNR (clean pretraining leaves it
// off, the noise-trained baseline turns it on).
TrainLog pretrain_asr(ParamStore& params, const AsrModel& model,
                      const Corpus& corpus, const TrainConfig& cfg);

// Next-character language model on the training transcripts; dev metric is
// mean per-character NLL.
TrainLog pretrain_lm(ParamStore& params, const CharLM& lm,
                     const Corpus& corpus, const TrainConfig& cfg);

TrainLog train_punet(ParamStore& params, const PUNet& model,
                     const Corpus& corpus, const TrainConfig& cfg);

TrainLog train_concat(ParamStore& params, const FeatConcatModel& model,
                      const Corpus& corpus, const TrainConfig& cfg);

// Pretrained initialization for the concatenation baseline: frontend,
// encoder, and CTC head from the audio checkpoint, decoder from the
// lipreading checkpoint; the fusion layers keep their fresh values.
void init_concat_from_pretrained(ParamStore& params,
                                 const FeatConcatModel& model,
                                 const Checkpoint& asr, const Checkpoint& lip);

// ---- evaluation ----

struct UtteranceScores {
  Tensor ctc_lp;  // (T, C) per-frame log-probabilities
  Tensor memory;  // (T, d_a) encoder output fed to the decoder
};

// Uniform per-utterance interface over the concrete recognizers. The
// closures capture the model and parameter store by reference; both must
// outlive the recognizer.
struct Recognizer {
  std::function<UtteranceScores(const Tensor& audio, const Tensor& visual)>
      encode;
  std::function<StepScorer(const Tensor& memory)> decoder_scorer;
  bool uses_audio = true;
  bool uses_visual = true;
};

Recognizer make_recognizer(const ParamStore& params, const PUNet& net);
Recognizer make_recognizer(const ParamStore& params, const AsrModel& net);
Recognizer make_recognizer(const ParamStore& params,
                           const FeatConcatModel& net);
Recognizer make_recognizer(const ParamStore& params, const LipModel& net);

struct EvalOptions {
  DecodeConfig decode;
  SnrDb snr;  // no value = clean audio
  const BabbleSource* babble = nullptr;  // required when snr is set
  std::uint64_t noise_seed = 77;
  i64 limit = 0;  // 0 = whole split
  bool greedy_ctc = false;  // best-path decode instead of beam search
};

struct EvalRecord {
  std::string id, ref_text, hyp_text;
  double joint = 0.0, ctc = 0.0, dec = 0.0, lm = 0.0;
  bool truncated = false;
};

struct EvalReport {
  std::vector<EvalRecord> records;
  i64 char_edits = 0, char_total = 0;
  i64 word_edits = 0, word_total = 0;
  double cer = 0.0, wer = 0.0;  // corpus level: edits over reference length
};

// Decodes a split and aggregates corpus-level CER/WER. `lm` must be given
// when opt.decode.psi > 0 and beam search is in use.
EvalReport evaluate_split(const Recognizer& rec,
                          const std::vector<Utterance>& utts,
                          const StftConfig& stft, const Vocabulary& vocab,
                          const EvalOptions& opt,
                          const StepScorer& lm = StepScorer());

// Recomputes corpus-level CER/WER from the records alone; equal to the
// report's own totals by construction.
std::pair<double, double> rates_from_records(
    const std::vector<EvalRecord>& records);

// Mean per-frame cosine between the encoder representation on clean audio
// and on babble-mixed audio at every grid SNR (same visual stream). The
// grid must be strictly descending in dB.
SimilarityProfile representation_profile(const Recognizer& rec,
                                         const std::vector<Utterance>& utts,
                                         const StftConfig& stft,
                                         const std::vector<double>& grid_db,
                                         const BabbleSource& babble,
                                         std::uint64_t noise_seed,
                                         i64 limit = 0);

// ---- run manifests ----

std::uint64_t fnv1a64(const void* data, std::size_t n);
std::uint64_t fnv1a64(const std::string& text);
// Content hash over meta, transcripts, targets, waves, and visual frames
// of every split in order.
std::uint64_t corpus_fingerprint(const Corpus& corpus);

// Shortest decimal that round-trips the double exactly.
std::string format_g17(double v);
std::string join_g17(const std::vector<double>& v);

// Ordered key = value record describing one command invocation. Keys are
// unique; serialization is line-per-field and stable.
class RunManifest {
 public:
  void set(const std::string& key, const std::string& value);
  void set_int(const std::string& key, i64 value);
  void set_double(const std::string& key, double value);
  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;

  const std::vector<std::pair<std::string, std::string>>& fields() const {
    return fields_;
  }

  std::string text() const;
  void save(const std::string& path) const;
  static RunManifest parse(const std::string& text);
  static RunManifest load(const std::string& path);

 private:
  std::vector<std::pair<std::string, std::string>> fields_;
};

}  // namespace punet
