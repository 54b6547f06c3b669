// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "punet/blocks.hpp"
#include "punet/checkpoint.hpp"
#include "punet/features.hpp"
#include "punet/rng.hpp"
#include "punet/tensor.hpp"
#include "punet/vocab.hpp"

namespace punet {

// Which update-encoder blocks are cross-modal. Preset names: none, all,
// early / middle / late with an optional block count suffix (early4, late2,
// ...); an unsuffixed name takes n/3 blocks. early = the first c blocks,
// late = the last c, middle = c blocks centred in the stack.
struct FusionPlan {
  std::string name = "none";
  i64 n = 0;
  std::vector<char> cross;  // one flag per block

  static FusionPlan parse(const std::string& name, i64 n);
  i64 n_cross() const;
  bool any_cross() const { return n_cross() > 0; }
};

// Architecture hyperparameters. Defaults are the desk scale; paper() is the
// full-scale configuration (constructible for shape checks).
struct ModelConfig {
  std::string vocab = "toy";  // toy | paper
  i64 d_a = 64;               // model width
  i64 d_k = 64;               // attention width
  i64 d_ff = 256;             // FFN hidden width
  i64 h = 4;                  // heads
  i64 conv_kernel = 7;
  double dropout = 0.0;

  i64 K = 8;                   // factor subspaces
  i64 d_l = 32;                // subspace width (K * d_l = d_ff)
  std::string fe_slot = "second";

  i64 n_update = 6;     // update-encoder blocks
  i64 n_predictor = 3;  // predictor / lipreading encoder blocks
  i64 n_decoder = 2;    // transformer decoder blocks

  i64 d_v = 10;         // visual feature width
  i64 audio_bins = 65;  // spectrogram bins fed to the frontend
  i64 dec_max_len = 64;

  i64 lm_d = 32;  // character LM width
  i64 lm_ff = 64;
  i64 lm_h = 2;
  i64 lm_blocks = 2;
  i64 lm_max_len = 64;

  std::string fusion = "early";  // default plan for the update encoder

  static ModelConfig toy() { return ModelConfig{}; }
  static ModelConfig paper();

  Vocabulary vocabulary() const;
  ConformerConfig encoder_block() const {
    return ConformerConfig{d_a, d_k, d_ff, h, conv_kernel, dropout};
  }
  FEConfig fe(i64 n_classes) const {
    return FEConfig{K, d_l, n_classes, fe_slot};
  }
};

// Overlays kv entries (same keys as the field names) onto `base`; unknown
// keys are rejected.
ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv,
                                 ModelConfig base = ModelConfig());

// ---- shared pieces ----

// Sinusoidal absolute positions, rows 0..t-1.
Tensor abs_pos_encoding(i64 t, i64 d);

// Utterance-standardized input tensors (zero mean, unit variance overall).
Tensor prep_audio(const Spectrogram& spec);
Tensor prep_visual(const VisualSequence& visual);

// n Conformer blocks under prefix.{i}; cross[i] marks cross-modal blocks.
class EncoderStack {
 public:
  EncoderStack(const ModelConfig& cfg, i64 n_classes, std::string prefix,
               i64 n, std::vector<char> cross);

  void declare(ParamStore& params, Rng& rng) const;
  // rho required iff any block is cross-modal; same rho feeds every one.
  Tensor forward(const ParamStore& params, const Tensor& x, const Tensor* rho,
                 Rng* dropout_rng = nullptr) const;
  i64 param_count() const;
  i64 size() const { return static_cast<i64>(blocks_.size()); }
  bool any_cross() const;

 private:
  std::vector<ConformerBlock> blocks_;
};

// Two stride-2 convolutions with swish: (T, bins) -> (ceil(T/4), d_a).
class AudioFrontend {
 public:
  AudioFrontend(const ModelConfig& cfg, std::string prefix = "frontend");
  void declare(ParamStore& params, Rng& rng) const;
  Tensor forward(const ParamStore& params, const Tensor& spec) const;
  i64 param_count() const;

 private:
  i64 bins_, d_a_;
  std::string prefix_;
};

// Visual stream: linear embedding, n_predictor blocks, projection head,
// softmax -> per-frame character posteriors. Names: pred.embed pred.enc.{i}
// pred.proj.
class Predictor {
 public:
  Predictor(const ModelConfig& cfg, i64 n_classes);
  void declare(ParamStore& params, Rng& rng) const;
  Tensor features(const ParamStore& params, const Tensor& visual,
                  Rng* dropout_rng = nullptr) const;  // (T, d_a)
  Tensor forward(const ParamStore& params, const Tensor& visual,
                 Rng* dropout_rng = nullptr) const;  // rho (T, C)
  i64 param_count() const;

 private:
  i64 d_v_, d_a_, n_classes_;
  EncoderStack stack_;
};

// Autoregressive transformer with absolute positions, causal self-attention
// and cross-attention over the encoder output. Tokens include the leading
// [sos]; output rows are log-probabilities over the vocabulary.
class TransformerDecoder {
 public:
  TransformerDecoder(const ModelConfig& cfg, i64 n_classes,
                     std::string prefix = "dec");
  void declare(ParamStore& params, Rng& rng) const;
  // Teacher mode: one log-prob row per input position.
  Tensor forward(const ParamStore& params, const Tensor& memory,
                 const std::vector<i64>& tokens) const;
  // Step mode: log-probs of the next token after `prefix` (starts with
  // [sos]); recomputes the prefix, so it agrees with teacher mode exactly.
  std::vector<double> step(const ParamStore& params, const Tensor& memory,
                           const std::vector<i64>& prefix) const;
  i64 max_len() const { return max_len_; }
  i64 param_count() const;

 private:
  i64 d_a_, d_k_, d_ff_, h_, n_blocks_, n_classes_, max_len_;
  std::string prefix_;
};

// Causal character transformer over the vocabulary minus [blank].
class CharLM {
 public:
  CharLM(const ModelConfig& cfg, const Vocabulary& vocab);
  void declare(ParamStore& params, Rng& rng) const;
  // One log-prob row per position ([blank] masked out of the support).
  Tensor forward(const ParamStore& params,
                 const std::vector<i64>& tokens) const;
  std::vector<double> score(const ParamStore& params,
                            const std::vector<i64>& prefix) const;
  i64 param_count() const;
  i64 n_classes() const { return n_classes_; }

 private:
  i64 d_, d_ff_, h_, n_blocks_, max_len_, n_classes_, blank_;
};

// ---- full models; all share the checkpoint naming of their pieces ----

// Lipreading model: embed. enc.{i}. ctc. dec.
class LipModel {
 public:
  explicit LipModel(const ModelConfig& cfg);
  void declare(ParamStore& params, Rng& rng) const;
  Tensor encode(const ParamStore& params, const Tensor& visual,
                Rng* dropout_rng = nullptr) const;
  Tensor ctc_log_probs(const ParamStore& params, const Tensor& feats) const;
  Tensor posteriors(const ParamStore& params, const Tensor& feats) const;
  const TransformerDecoder& decoder() const { return decoder_; }
  const ModelConfig& config() const { return cfg_; }
  i64 param_count() const;

 private:
  ModelConfig cfg_;
  i64 n_classes_;
  EncoderStack stack_;
  TransformerDecoder decoder_;
};

// Audio-only recognizer: frontend. enc.{i}. ctc. dec.
class AsrModel {
 public:
  explicit AsrModel(const ModelConfig& cfg);
  void declare(ParamStore& params, Rng& rng) const;
  Tensor encode(const ParamStore& params, const Tensor& spec,
                Rng* dropout_rng = nullptr) const;
  Tensor ctc_log_probs(const ParamStore& params, const Tensor& feats) const;
  const TransformerDecoder& decoder() const { return decoder_; }
  const AudioFrontend& frontend() const { return frontend_; }
  const ModelConfig& config() const { return cfg_; }
  i64 param_count() const;

 private:
  ModelConfig cfg_;
  i64 n_classes_;
  AudioFrontend frontend_;
  EncoderStack stack_;
  TransformerDecoder decoder_;
};

// The predict-and-update network: pred.* frontend. enc.{i}. ctc. dec.
class PUNet {
 public:
  PUNet(const ModelConfig& cfg, FusionPlan plan);
  void declare(ParamStore& params, Rng& rng) const;

  Tensor predict(const ParamStore& params, const Tensor& visual,
                 Rng* dropout_rng = nullptr) const;  // rho
  Tensor frontend_forward(const ParamStore& params, const Tensor& spec) const;
  // Audio features and posteriors must have equal frame counts.
  Tensor update(const ParamStore& params, const Tensor& audio,
                const Tensor* rho, Rng* dropout_rng = nullptr) const;

  struct Encoded {
    Tensor rho;
    Tensor r;
  };
  Encoded encode(const ParamStore& params, const Tensor& spec,
                 const Tensor& visual, Rng* dropout_rng = nullptr) const;

  Tensor ctc_log_probs(const ParamStore& params, const Tensor& r) const;
  const TransformerDecoder& decoder() const { return decoder_; }
  const FusionPlan& plan() const { return plan_; }
  const ModelConfig& config() const { return cfg_; }
  i64 param_count() const;

 private:
  ModelConfig cfg_;
  i64 n_classes_;
  FusionPlan plan_;
  Predictor predictor_;
  AudioFrontend frontend_;
  EncoderStack stack_;
  TransformerDecoder decoder_;
};

// Baseline that concatenates the two streams per frame: frontend. fuse.l1
// fuse.l2 enc.{i}. ctc. dec.
class FeatConcatModel {
 public:
  explicit FeatConcatModel(const ModelConfig& cfg);
  void declare(ParamStore& params, Rng& rng) const;
  Tensor encode(const ParamStore& params, const Tensor& spec,
                const Tensor& visual, Rng* dropout_rng = nullptr) const;
  Tensor ctc_log_probs(const ParamStore& params, const Tensor& feats) const;
  const TransformerDecoder& decoder() const { return decoder_; }
  const ModelConfig& config() const { return cfg_; }
  i64 param_count() const;

 private:
  ModelConfig cfg_;
  i64 n_classes_;
  AudioFrontend frontend_;
  EncoderStack stack_;
  TransformerDecoder decoder_;
};

// Copies pretrained weights into a freshly declared PUNet store: the
// predictor from the lipreading encoder (projection head from its CTC head),
// frontend / update encoder / CTC head from the audio model, decoder from
// the lipreading model. Factor parameters (w_rho/b_rho) keep their fresh
// near-identity initialization. Any missing tensor or shape mismatch is
// rejected with the tensor's name.
void init_from_pretrained(ParamStore& params, const PUNet& net,
                          const Checkpoint& asr, const Checkpoint& lip);

}  // namespace punet
