// SPDX-License-Identifier: Apache-2.0
#include "punet/model.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

#include "punet/config.hpp"

namespace punet {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

// ---- absolute-position multi-head attention ----
// Names under prefix: wq bq wk bk wv bv wo bo. Queries come from x_q,
// keys/values from x_kv; `mask` (if any) is added to the scaled scores.

void declare_mha(ParamStore& params, const std::string& prefix, i64 d_q,
                 i64 d_kv, i64 d_k, i64 d_out, Rng& rng) {
  params.declare(prefix + ".wq", Tensor::xavier(d_k, d_q, rng, true));
  params.declare(prefix + ".bq", Tensor::zeros({d_k}, true));
  params.declare(prefix + ".wk", Tensor::xavier(d_k, d_kv, rng, true));
  params.declare(prefix + ".bk", Tensor::zeros({d_k}, true));
  params.declare(prefix + ".wv", Tensor::xavier(d_k, d_kv, rng, true));
  params.declare(prefix + ".bv", Tensor::zeros({d_k}, true));
  params.declare(prefix + ".wo", Tensor::xavier(d_out, d_k, rng, true));
  params.declare(prefix + ".bo", Tensor::zeros({d_out}, true));
}

i64 mha_param_count(i64 d_q, i64 d_kv, i64 d_k, i64 d_out) {
  return (d_k * d_q + d_k) + 2 * (d_k * d_kv + d_k) + (d_out * d_k + d_out);
}

Tensor mha_abs(const ParamStore& p, const std::string& prefix, i64 h,
               const Tensor& x_q, const Tensor& x_kv, const Tensor* mask) {
  const Tensor& wq = p.get(prefix + ".wq");
  const i64 d_k = wq.dim(0);
  require(d_k % h == 0, prefix + ": heads must divide d_k");
  const i64 dh = d_k / h;
  Tensor q = add_rowvec(matmul_nt(x_q, wq), p.get(prefix + ".bq"));
  Tensor k = add_rowvec(matmul_nt(x_kv, p.get(prefix + ".wk")),
                        p.get(prefix + ".bk"));
  Tensor v = add_rowvec(matmul_nt(x_kv, p.get(prefix + ".wv")),
                        p.get(prefix + ".bv"));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(h);
  for (i64 i = 0; i < h; ++i) {
    Tensor qh = slice_cols(q, i * dh, dh);
    Tensor kh = slice_cols(k, i * dh, dh);
    Tensor vh = slice_cols(v, i * dh, dh);
    Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
    if (mask != nullptr) scores = add(scores, *mask);
    heads.push_back(matmul(softmax_rows(scores), vh));
  }
  return add_rowvec(matmul_nt(concat_cols(heads), p.get(prefix + ".wo")),
                    p.get(prefix + ".bo"));
}

// Additive causal mask: position i may attend to j <= i.
Tensor causal_mask(i64 t) {
  std::vector<double> m(t * t, 0.0);
  for (i64 i = 0; i < t; ++i)
    for (i64 j = i + 1; j < t; ++j) m[i * t + j] = -1e30;
  return Tensor::from_data({t, t}, std::move(m), false);
}

Tensor linear_named(const ParamStore& p, const std::string& prefix,
                    const Tensor& x) {
  return add_rowvec(matmul_nt(x, p.get(prefix + ".w")),
                    p.get(prefix + ".b"));
}

void declare_linear(ParamStore& params, const std::string& prefix, i64 d_out,
                    i64 d_in, Rng& rng) {
  params.declare(prefix + ".w", Tensor::xavier(d_out, d_in, rng, true));
  params.declare(prefix + ".b", Tensor::zeros({d_out}, true));
}

void check_tokens(const std::vector<i64>& tokens, i64 n_classes, i64 max_len,
                  const std::string& who) {
  require(!tokens.empty(), who + ": empty token sequence");
  require(static_cast<i64>(tokens.size()) <= max_len,
          who + ": sequence length " + std::to_string(tokens.size()) +
              " exceeds max length " + std::to_string(max_len));
  for (i64 id : tokens)
    require(id >= 0 && id < n_classes,
            who + ": unknown token id " + std::to_string(id));
}

Tensor standardize(const std::vector<double>& values, Shape shape) {
  const i64 n = shape_numel(shape);
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + 1e-8);
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = (values[i] - mean) * inv;
  return Tensor::from_data(std::move(shape), std::move(out), false);
}

}  // namespace

// ---- fusion plan ----

FusionPlan FusionPlan::parse(const std::string& name, i64 n) {
  require(n >= 1, "fusion plan: block count must be positive");
  FusionPlan plan;
  plan.name = name;
  plan.n = n;
  plan.cross.assign(n, 0);
  if (name == "none") return plan;
  if (name == "all") {
    plan.cross.assign(n, 1);
    return plan;
  }
  std::string base;
  for (const std::string& candidate : {"early", "middle", "late"}) {
    if (name.rfind(candidate, 0) == 0) {
      base = candidate;
      break;
    }
  }
  require(!base.empty(), "fusion plan: unknown preset '" + name + "'");
  std::string suffix = name.substr(base.size());
  i64 count = 0;
  if (suffix.empty()) {
    count = n / 3;
  } else {
    for (char c : suffix)
      require(c >= '0' && c <= '9',
              "fusion plan: unknown preset '" + name + "'");
    count = std::atoll(suffix.c_str());
  }
  require(count >= 1 && count <= n,
          "fusion plan: '" + name + "' needs between 1 and " +
              std::to_string(n) + " cross-modal blocks");
  i64 first = 0;
  if (base == "middle")
    first = (n - count) / 2;
  else if (base == "late")
    first = n - count;
  for (i64 i = first; i < first + count; ++i) plan.cross[i] = 1;
  return plan;
}

i64 FusionPlan::n_cross() const {
  i64 c = 0;
  for (char f : cross) c += f != 0;
  return c;
}

// ---- config ----

ModelConfig ModelConfig::paper() {
  ModelConfig cfg;
  cfg.vocab = "paper";
  cfg.d_a = 256;
  cfg.d_k = 256;
  cfg.d_ff = 2048;
  cfg.h = 4;
  cfg.conv_kernel = 31;
  cfg.K = 32;
  cfg.d_l = 64;
  cfg.n_update = 12;
  cfg.n_predictor = 12;
  cfg.n_decoder = 6;
  cfg.d_v = 512;
  cfg.audio_bins = 321;
  cfg.dec_max_len = 256;
  cfg.fusion = "early8";
  return cfg;
}

Vocabulary ModelConfig::vocabulary() const {
  if (vocab == "toy") return Vocabulary::toy();
  if (vocab == "paper") return Vocabulary::paper();
  fail("config: unknown vocabulary '" + vocab + "'");
}

ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv,
                                 ModelConfig base) {
  static const std::map<std::string, int> known = {
      {"vocab", 0},       {"d_a", 1},        {"d_k", 1},
      {"d_ff", 1},        {"h", 1},          {"conv_kernel", 1},
      {"dropout", 2},     {"K", 1},          {"d_l", 1},
      {"fe_slot", 0},     {"n_update", 1},   {"n_predictor", 1},
      {"n_decoder", 1},   {"d_v", 1},        {"audio_bins", 1},
      {"dec_max_len", 1}, {"lm_d", 1},       {"lm_ff", 1},
      {"lm_h", 1},        {"lm_blocks", 1},  {"lm_max_len", 1},
      {"fusion", 0}};
  for (const auto& [key, value] : kv)
    require(known.count(key) > 0, "config: unknown key '" + key + "'");
  ModelConfig cfg = base;
  cfg.vocab = kv_string(kv, "vocab", cfg.vocab);
  cfg.d_a = kv_int(kv, "d_a", cfg.d_a);
  cfg.d_k = kv_int(kv, "d_k", cfg.d_k);
  cfg.d_ff = kv_int(kv, "d_ff", cfg.d_ff);
  cfg.h = kv_int(kv, "h", cfg.h);
  cfg.conv_kernel = kv_int(kv, "conv_kernel", cfg.conv_kernel);
  cfg.dropout = kv_double(kv, "dropout", cfg.dropout);
  cfg.K = kv_int(kv, "K", cfg.K);
  cfg.d_l = kv_int(kv, "d_l", cfg.d_l);
  cfg.fe_slot = kv_string(kv, "fe_slot", cfg.fe_slot);
  cfg.n_update = kv_int(kv, "n_update", cfg.n_update);
  cfg.n_predictor = kv_int(kv, "n_predictor", cfg.n_predictor);
  cfg.n_decoder = kv_int(kv, "n_decoder", cfg.n_decoder);
  cfg.d_v = kv_int(kv, "d_v", cfg.d_v);
  cfg.audio_bins = kv_int(kv, "audio_bins", cfg.audio_bins);
  cfg.dec_max_len = kv_int(kv, "dec_max_len", cfg.dec_max_len);
  cfg.lm_d = kv_int(kv, "lm_d", cfg.lm_d);
  cfg.lm_ff = kv_int(kv, "lm_ff", cfg.lm_ff);
  cfg.lm_h = kv_int(kv, "lm_h", cfg.lm_h);
  cfg.lm_blocks = kv_int(kv, "lm_blocks", cfg.lm_blocks);
  cfg.lm_max_len = kv_int(kv, "lm_max_len", cfg.lm_max_len);
  cfg.fusion = kv_string(kv, "fusion", cfg.fusion);
  validate(cfg.encoder_block());
  cfg.vocabulary();  // rejects unknown names
  return cfg;
}

// ---- shared pieces ----

Tensor abs_pos_encoding(i64 t, i64 d) {
  std::vector<double> pe(t * d);
  for (i64 p = 0; p < t; ++p) {
    for (i64 i = 0; i < d; i += 2) {
      const double rate =
          std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe[p * d + i] = std::sin(static_cast<double>(p) / rate);
      if (i + 1 < d)
        pe[p * d + i + 1] = std::cos(static_cast<double>(p) / rate);
    }
  }
  return Tensor::from_data({t, d}, std::move(pe), false);
}

Tensor prep_audio(const Spectrogram& spec) {
  return standardize(spec.values, {spec.frames, spec.bins});
}

Tensor prep_visual(const VisualSequence& visual) {
  return standardize(visual.values, {visual.frames, visual.dim});
}

// ---- encoder stack ----

EncoderStack::EncoderStack(const ModelConfig& cfg, i64 n_classes,
                           std::string prefix, i64 n,
                           std::vector<char> cross) {
  require(n >= 1, prefix + ": need at least one block");
  require(static_cast<i64>(cross.size()) == n,
          prefix + ": cross flags must cover every block");
  blocks_.reserve(n);
  for (i64 i = 0; i < n; ++i) {
    std::optional<FEConfig> fe;
    if (cross[i]) fe = cfg.fe(n_classes);
    blocks_.emplace_back(cfg.encoder_block(),
                         prefix + "." + std::to_string(i), fe);
  }
}

void EncoderStack::declare(ParamStore& params, Rng& rng) const {
  for (const auto& b : blocks_) b.declare(params, rng);
}

Tensor EncoderStack::forward(const ParamStore& params, const Tensor& x,
                             const Tensor* rho, Rng* dropout_rng) const {
  if (any_cross()) {
    require(rho != nullptr,
            blocks_.front().prefix() + ": cross-modal stack needs posteriors");
    require(rho->dim(0) == x.dim(0),
            blocks_.front().prefix() + ": posterior frames " +
                std::to_string(rho->dim(0)) + " vs audio frames " +
                std::to_string(x.dim(0)));
  }
  Tensor y = x;
  for (const auto& b : blocks_)
    y = b.forward(params, y, b.cross_modal() ? rho : nullptr, 0, dropout_rng);
  return y;
}

i64 EncoderStack::param_count() const {
  i64 n = 0;
  for (const auto& b : blocks_) n += b.param_count();
  return n;
}

bool EncoderStack::any_cross() const {
  for (const auto& b : blocks_)
    if (b.cross_modal()) return true;
  return false;
}

// ---- audio frontend ----

AudioFrontend::AudioFrontend(const ModelConfig& cfg, std::string prefix)
    : bins_(cfg.audio_bins), d_a_(cfg.d_a), prefix_(std::move(prefix)) {}

void AudioFrontend::declare(ParamStore& params, Rng& rng) const {
  params.declare(prefix_ + ".conv1.w",
                 Tensor::xavier(d_a_, bins_ * 3, rng, true));
  params.declare(prefix_ + ".conv1.b", Tensor::zeros({d_a_}, true));
  params.declare(prefix_ + ".conv2.w",
                 Tensor::xavier(d_a_, d_a_ * 3, rng, true));
  params.declare(prefix_ + ".conv2.b", Tensor::zeros({d_a_}, true));
}

Tensor AudioFrontend::forward(const ParamStore& params,
                              const Tensor& spec) const {
  require(spec.shape().size() == 2 && spec.dim(1) == bins_,
          prefix_ + ": expected (T," + std::to_string(bins_) + ") input");
  Tensor y = swish(conv1d(spec, params.get(prefix_ + ".conv1.w"),
                          params.get(prefix_ + ".conv1.b"), 3, 2));
  return swish(conv1d(y, params.get(prefix_ + ".conv2.w"),
                      params.get(prefix_ + ".conv2.b"), 3, 2));
}

i64 AudioFrontend::param_count() const {
  return d_a_ * bins_ * 3 + d_a_ + d_a_ * d_a_ * 3 + d_a_;
}

// ---- predictor ----

Predictor::Predictor(const ModelConfig& cfg, i64 n_classes)
    : d_v_(cfg.d_v),
      d_a_(cfg.d_a),
      n_classes_(n_classes),
      stack_(cfg, n_classes, "pred.enc", cfg.n_predictor,
             std::vector<char>(cfg.n_predictor, 0)) {}

void Predictor::declare(ParamStore& params, Rng& rng) const {
  declare_linear(params, "pred.embed", d_a_, d_v_, rng);
  stack_.declare(params, rng);
  declare_linear(params, "pred.proj", n_classes_, d_a_, rng);
}

Tensor Predictor::features(const ParamStore& params, const Tensor& visual,
                           Rng* dropout_rng) const {
  require(visual.shape().size() == 2 && visual.dim(1) == d_v_,
          "predictor: expected (T," + std::to_string(d_v_) + ") input");
  Tensor x = linear_named(params, "pred.embed", visual);
  return stack_.forward(params, x, nullptr, dropout_rng);
}

Tensor Predictor::forward(const ParamStore& params, const Tensor& visual,
                          Rng* dropout_rng) const {
  return softmax_rows(
      linear_named(params, "pred.proj", features(params, visual, dropout_rng)));
}

i64 Predictor::param_count() const {
  return (d_a_ * d_v_ + d_a_) + stack_.param_count() +
         (n_classes_ * d_a_ + n_classes_);
}

// ---- transformer decoder ----

TransformerDecoder::TransformerDecoder(const ModelConfig& cfg, i64 n_classes,
                                       std::string prefix)
    : d_a_(cfg.d_a),
      d_k_(cfg.d_k),
      d_ff_(cfg.d_ff),
      h_(cfg.h),
      n_blocks_(cfg.n_decoder),
      n_classes_(n_classes),
      max_len_(cfg.dec_max_len),
      prefix_(std::move(prefix)) {
  require(d_k_ % h_ == 0, prefix_ + ": heads must divide d_k");
}

void TransformerDecoder::declare(ParamStore& params, Rng& rng) const {
  params.declare(prefix_ + ".embed.w",
                 Tensor::randn({n_classes_, d_a_}, rng, 0.1, true));
  ConformerConfig ffn_cfg{d_a_, d_k_, d_ff_, h_, 1, 0.0};
  for (i64 i = 0; i < n_blocks_; ++i) {
    const std::string b = prefix_ + "." + std::to_string(i);
    declare_norm(params, b + ".self.ln", d_a_);
    declare_mha(params, b + ".self", d_a_, d_a_, d_k_, d_a_, rng);
    declare_norm(params, b + ".cross.ln", d_a_);
    declare_mha(params, b + ".cross", d_a_, d_a_, d_k_, d_a_, rng);
    declare_norm(params, b + ".ffn.ln", d_a_);
    declare_ffn(params, b + ".ffn", ffn_cfg, rng);
  }
  declare_norm(params, prefix_ + ".ln_out", d_a_);
  declare_linear(params, prefix_ + ".out", n_classes_, d_a_, rng);
}

Tensor TransformerDecoder::forward(const ParamStore& params,
                                   const Tensor& memory,
                                   const std::vector<i64>& tokens) const {
  check_tokens(tokens, n_classes_, max_len_, prefix_);
  require(memory.shape().size() == 2 && memory.dim(1) == d_a_,
          prefix_ + ": memory width must be " + std::to_string(d_a_));
  const i64 len = static_cast<i64>(tokens.size());
  Tensor x = add(gather_rows(params.get(prefix_ + ".embed.w"), tokens),
                 abs_pos_encoding(len, d_a_));
  Tensor mask = causal_mask(len);
  for (i64 i = 0; i < n_blocks_; ++i) {
    const std::string b = prefix_ + "." + std::to_string(i);
    Tensor s = norm_forward(params, b + ".self.ln", x);
    x = add(x, mha_abs(params, b + ".self", h_, s, s, &mask));
    Tensor c = norm_forward(params, b + ".cross.ln", x);
    x = add(x, mha_abs(params, b + ".cross", h_, c, memory, nullptr));
    x = add(x, ffn_forward(params, b + ".ffn",
                           norm_forward(params, b + ".ffn.ln", x)));
  }
  x = norm_forward(params, prefix_ + ".ln_out", x);
  return log_softmax_rows(linear_named(params, prefix_ + ".out", x));
}

std::vector<double> TransformerDecoder::step(
    const ParamStore& params, const Tensor& memory,
    const std::vector<i64>& prefix) const {
  require(!prefix.empty() && prefix.front() == 1,
          prefix_ + ": prefix must begin with [sos]");
  Tensor lp = forward(params, memory, prefix);
  const i64 last = lp.dim(0) - 1;
  std::vector<double> out(n_classes_);
  for (i64 c = 0; c < n_classes_; ++c) out[c] = lp.at(last, c);
  return out;
}

i64 TransformerDecoder::param_count() const {
  const i64 per_block = 3 * 2 * d_a_ +
                        2 * mha_param_count(d_a_, d_a_, d_k_, d_a_) +
                        (d_ff_ * d_a_ + d_ff_ + d_a_ * d_ff_ + d_a_);
  return n_classes_ * d_a_ + n_blocks_ * per_block + 2 * d_a_ +
         (n_classes_ * d_a_ + n_classes_);
}

// ---- character LM ----

CharLM::CharLM(const ModelConfig& cfg, const Vocabulary& vocab)
    : d_(cfg.lm_d),
      d_ff_(cfg.lm_ff),
      h_(cfg.lm_h),
      n_blocks_(cfg.lm_blocks),
      max_len_(cfg.lm_max_len),
      n_classes_(vocab.size()),
      blank_(vocab.blank()) {
  require(d_ % h_ == 0, "lm: heads must divide width");
}

void CharLM::declare(ParamStore& params, Rng& rng) const {
  params.declare("lm.embed.w", Tensor::randn({n_classes_, d_}, rng, 0.1, true));
  ConformerConfig ffn_cfg{d_, d_, d_ff_, h_, 1, 0.0};
  for (i64 i = 0; i < n_blocks_; ++i) {
    const std::string b = "lm." + std::to_string(i);
    declare_norm(params, b + ".self.ln", d_);
    declare_mha(params, b + ".self", d_, d_, d_, d_, rng);
    declare_norm(params, b + ".ffn.ln", d_);
    declare_ffn(params, b + ".ffn", ffn_cfg, rng);
  }
  declare_norm(params, "lm.ln_out", d_);
  declare_linear(params, "lm.out", n_classes_, d_, rng);
}

Tensor CharLM::forward(const ParamStore& params,
                       const std::vector<i64>& tokens) const {
  check_tokens(tokens, n_classes_, max_len_, "lm");
  for (i64 id : tokens)
    require(id != blank_, "lm: unknown token id " + std::to_string(id) +
                              " ([blank] is outside the LM vocabulary)");
  require(tokens.front() == 1, "lm: prefix must begin with [sos]");
  const i64 len = static_cast<i64>(tokens.size());
  Tensor x = add(gather_rows(params.get("lm.embed.w"), tokens),
                 abs_pos_encoding(len, d_));
  Tensor mask = causal_mask(len);
  for (i64 i = 0; i < n_blocks_; ++i) {
    const std::string b = "lm." + std::to_string(i);
    Tensor s = norm_forward(params, b + ".self.ln", x);
    x = add(x, mha_abs(params, b + ".self", h_, s, s, &mask));
    x = add(x, ffn_forward(params, b + ".ffn",
                           norm_forward(params, b + ".ffn.ln", x)));
  }
  x = norm_forward(params, "lm.ln_out", x);
  Tensor logits = linear_named(params, "lm.out", x);
  // [blank] is not part of the LM's support.
  std::vector<double> m(n_classes_, 0.0);
  m[blank_] = -1e30;
  logits = add_rowvec(logits, Tensor::from_data({n_classes_}, m, false));
  return log_softmax_rows(logits);
}

std::vector<double> CharLM::score(const ParamStore& params,
                                  const std::vector<i64>& prefix) const {
  Tensor lp = forward(params, prefix);
  const i64 last = lp.dim(0) - 1;
  std::vector<double> out(n_classes_);
  for (i64 c = 0; c < n_classes_; ++c) out[c] = lp.at(last, c);
  return out;
}

i64 CharLM::param_count() const {
  const i64 per_block = 2 * 2 * d_ + mha_param_count(d_, d_, d_, d_) +
                        (d_ff_ * d_ + d_ff_ + d_ * d_ff_ + d_);
  return n_classes_ * d_ + n_blocks_ * per_block + 2 * d_ +
         (n_classes_ * d_ + n_classes_);
}

// ---- lipreading model ----

LipModel::LipModel(const ModelConfig& cfg)
    : cfg_(cfg),
      n_classes_(cfg.vocabulary().size()),
      stack_(cfg, n_classes_, "enc", cfg.n_predictor,
             std::vector<char>(cfg.n_predictor, 0)),
      decoder_(cfg, n_classes_) {}

void LipModel::declare(ParamStore& params, Rng& rng) const {
  declare_linear(params, "embed", cfg_.d_a, cfg_.d_v, rng);
  stack_.declare(params, rng);
  declare_linear(params, "ctc", n_classes_, cfg_.d_a, rng);
  decoder_.declare(params, rng);
}

Tensor LipModel::encode(const ParamStore& params, const Tensor& visual,
                        Rng* dropout_rng) const {
  require(visual.shape().size() == 2 && visual.dim(1) == cfg_.d_v,
          "lip: expected (T," + std::to_string(cfg_.d_v) + ") input");
  Tensor x = linear_named(params, "embed", visual);
  return stack_.forward(params, x, nullptr, dropout_rng);
}

Tensor LipModel::ctc_log_probs(const ParamStore& params,
                               const Tensor& feats) const {
  return log_softmax_rows(linear_named(params, "ctc", feats));
}

Tensor LipModel::posteriors(const ParamStore& params,
                            const Tensor& feats) const {
  return softmax_rows(linear_named(params, "ctc", feats));
}

i64 LipModel::param_count() const {
  return (cfg_.d_a * cfg_.d_v + cfg_.d_a) + stack_.param_count() +
         (n_classes_ * cfg_.d_a + n_classes_) + decoder_.param_count();
}

// ---- audio-only model ----

AsrModel::AsrModel(const ModelConfig& cfg)
    : cfg_(cfg),
      n_classes_(cfg.vocabulary().size()),
      frontend_(cfg),
      stack_(cfg, n_classes_, "enc", cfg.n_update,
             std::vector<char>(cfg.n_update, 0)),
      decoder_(cfg, n_classes_) {}

void AsrModel::declare(ParamStore& params, Rng& rng) const {
  frontend_.declare(params, rng);
  stack_.declare(params, rng);
  declare_linear(params, "ctc", n_classes_, cfg_.d_a, rng);
  decoder_.declare(params, rng);
}

Tensor AsrModel::encode(const ParamStore& params, const Tensor& spec,
                        Rng* dropout_rng) const {
  Tensor x = frontend_.forward(params, spec);
  return stack_.forward(params, x, nullptr, dropout_rng);
}

Tensor AsrModel::ctc_log_probs(const ParamStore& params,
                               const Tensor& feats) const {
  return log_softmax_rows(linear_named(params, "ctc", feats));
}

i64 AsrModel::param_count() const {
  return frontend_.param_count() + stack_.param_count() +
         (n_classes_ * cfg_.d_a + n_classes_) + decoder_.param_count();
}

// ---- predict-and-update network ----

PUNet::PUNet(const ModelConfig& cfg, FusionPlan plan)
    : cfg_(cfg),
      n_classes_(cfg.vocabulary().size()),
      plan_(std::move(plan)),
      predictor_(cfg, n_classes_),
      frontend_(cfg),
      stack_(cfg, n_classes_, "enc", cfg.n_update, plan_.cross),
      decoder_(cfg, n_classes_) {
  require(plan_.n == cfg.n_update,
          "punet: plan covers " + std::to_string(plan_.n) + " blocks, model has " +
              std::to_string(cfg.n_update));
}

void PUNet::declare(ParamStore& params, Rng& rng) const {
  predictor_.declare(params, rng);
  frontend_.declare(params, rng);
  stack_.declare(params, rng);
  declare_linear(params, "ctc", n_classes_, cfg_.d_a, rng);
  decoder_.declare(params, rng);
}

Tensor PUNet::predict(const ParamStore& params, const Tensor& visual,
                      Rng* dropout_rng) const {
  return predictor_.forward(params, visual, dropout_rng);
}

Tensor PUNet::frontend_forward(const ParamStore& params,
                               const Tensor& spec) const {
  return frontend_.forward(params, spec);
}

Tensor PUNet::update(const ParamStore& params, const Tensor& audio,
                     const Tensor* rho, Rng* dropout_rng) const {
  if (rho != nullptr)
    require(rho->dim(0) == audio.dim(0),
            "punet: posterior frames " + std::to_string(rho->dim(0)) +
                " vs audio frames " + std::to_string(audio.dim(0)));
  return stack_.forward(params, audio, rho, dropout_rng);
}

PUNet::Encoded PUNet::encode(const ParamStore& params, const Tensor& spec,
                             const Tensor& visual, Rng* dropout_rng) const {
  Tensor feats = frontend_.forward(params, spec);
  require(feats.dim(0) == visual.dim(0),
          "punet: subsampled audio frames " + std::to_string(feats.dim(0)) +
              " vs visual frames " + std::to_string(visual.dim(0)));
  Tensor rho = predictor_.forward(params, visual, dropout_rng);
  Tensor r = stack_.forward(params, feats, &rho, dropout_rng);
  return Encoded{rho, r};
}

Tensor PUNet::ctc_log_probs(const ParamStore& params, const Tensor& r) const {
  return log_softmax_rows(linear_named(params, "ctc", r));
}

i64 PUNet::param_count() const {
  return predictor_.param_count() + frontend_.param_count() +
         stack_.param_count() + (n_classes_ * cfg_.d_a + n_classes_) +
         decoder_.param_count();
}

// ---- feature-concatenation baseline ----

FeatConcatModel::FeatConcatModel(const ModelConfig& cfg)
    : cfg_(cfg),
      n_classes_(cfg.vocabulary().size()),
      frontend_(cfg),
      stack_(cfg, n_classes_, "enc", cfg.n_update,
             std::vector<char>(cfg.n_update, 0)),
      decoder_(cfg, n_classes_) {}

void FeatConcatModel::declare(ParamStore& params, Rng& rng) const {
  frontend_.declare(params, rng);
  declare_linear(params, "fuse.l1", cfg_.d_a, cfg_.d_a + cfg_.d_v, rng);
  declare_linear(params, "fuse.l2", cfg_.d_a, cfg_.d_a, rng);
  stack_.declare(params, rng);
  declare_linear(params, "ctc", n_classes_, cfg_.d_a, rng);
  decoder_.declare(params, rng);
}

Tensor FeatConcatModel::encode(const ParamStore& params, const Tensor& spec,
                               const Tensor& visual, Rng* dropout_rng) const {
  Tensor audio = frontend_.forward(params, spec);
  require(audio.dim(0) == visual.dim(0),
          "feat-concat: subsampled audio frames " +
              std::to_string(audio.dim(0)) + " vs visual frames " +
              std::to_string(visual.dim(0)));
  require(visual.dim(1) == cfg_.d_v,
          "feat-concat: expected (T," + std::to_string(cfg_.d_v) +
              ") visual input");
  Tensor x = concat_cols({audio, visual});
  x = swish(linear_named(params, "fuse.l1", x));
  x = linear_named(params, "fuse.l2", x);
  return stack_.forward(params, x, nullptr, dropout_rng);
}

Tensor FeatConcatModel::ctc_log_probs(const ParamStore& params,
                                      const Tensor& feats) const {
  return log_softmax_rows(linear_named(params, "ctc", feats));
}

i64 FeatConcatModel::param_count() const {
  return frontend_.param_count() +
         (cfg_.d_a * (cfg_.d_a + cfg_.d_v) + cfg_.d_a) +
         (cfg_.d_a * cfg_.d_a + cfg_.d_a) + stack_.param_count() +
         (n_classes_ * cfg_.d_a + n_classes_) + decoder_.param_count();
}

// ---- pretrained initialization ----

void init_from_pretrained(ParamStore& params, const PUNet& net,
                          const Checkpoint& asr, const Checkpoint& lip) {
  (void)net;
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (auto& [name, tensor] : params.entries()) {
    const Checkpoint* src = nullptr;
    std::string sname;
    std::string which;
    if (name.rfind("pred.embed.", 0) == 0) {
      src = &lip;
      which = "lip";
      sname = "embed." + name.substr(11);
    } else if (name.rfind("pred.enc.", 0) == 0) {
      src = &lip;
      which = "lip";
      sname = name.substr(5);  // enc.{i}...
    } else if (name.rfind("pred.proj.", 0) == 0) {
      src = &lip;
      which = "lip";
      sname = "ctc." + name.substr(10);
    } else if (name.rfind("frontend.", 0) == 0 || name.rfind("ctc.", 0) == 0) {
      src = &asr;
      which = "asr";
      sname = name;
    } else if (name.rfind("enc.", 0) == 0) {
      if (ends_with(name, ".w_rho") || ends_with(name, ".b_rho"))
        continue;  // fresh near-identity factors stay
      src = &asr;
      which = "asr";
      sname = name;
    } else if (name.rfind("dec.", 0) == 0) {
      src = &lip;
      which = "lip";
      sname = name;
    } else {
      fail("init: no pretrained source for parameter '" + name + "'");
    }
    require(src->has(sname), "init: missing tensor '" + sname + "' in " +
                                 which + " checkpoint (needed for '" + name +
                                 "')");
    const CheckpointEntry& e = src->entry(sname);
    require(e.dtype == 'f', "init: " + sname + ": not a float tensor");
    require(e.shape == tensor.shape(),
            "init: " + name + ": stored shape " + shape_str(e.shape) +
                " vs expected " + shape_str(tensor.shape()));
    params.set_data(name, e.f64);
  }
}

}  // namespace punet
