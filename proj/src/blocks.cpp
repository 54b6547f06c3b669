// SPDX-License-Identifier: Apache-2.0
#include "punet/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace punet {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("blocks: " + msg);
}

void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

Tensor linear(const ParamStore& p, const std::string& prefix,
              const std::string& w, const std::string& b, const Tensor& x) {
  return add_rowvec(matmul_nt(x, p.get(prefix + "." + w)),
                    p.get(prefix + "." + b));
}

// Sinusoidal embedding of the signed offsets pos[j] - pos[0] for
// j in [0, 2t-1): row p encodes offset (base + p) - (base + t - 1), i.e.
// p - (t-1), computed through the shifted absolute positions so the
// cancellation is explicit.
Tensor rel_embeddings(i64 t, i64 d, i64 position_base) {
  const i64 rows = 2 * t - 1;
  std::vector<double> pe(rows * d);
  for (i64 p = 0; p < rows; ++p) {
    const double offset = static_cast<double>(position_base + p) -
                          static_cast<double>(position_base + t - 1);
    for (i64 i = 0; i < d; i += 2) {
      const double rate =
          std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe[p * d + i] = std::sin(offset / rate);
      if (i + 1 < d) pe[p * d + i + 1] = std::cos(offset / rate);
    }
  }
  return Tensor::from_data({rows, d}, std::move(pe), false);
}

Tensor maybe_dropout(const Tensor& x, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) return x;
  return dropout(x, rate, *rng);
}

}  // namespace

void validate(const ConformerConfig& cfg) {
  require(cfg.d_a > 0 && cfg.d_k > 0 && cfg.d_ff > 0 && cfg.h > 0,
          "widths must be positive");
  require(cfg.conv_kernel > 0 && cfg.conv_kernel % 2 == 1,
          "conv kernel must be odd, got " + std::to_string(cfg.conv_kernel));
  require(cfg.d_k % cfg.h == 0, "heads " + std::to_string(cfg.h) +
                                    " must divide d_k " +
                                    std::to_string(cfg.d_k));
}

void validate(const FEConfig& fe, const ConformerConfig& cfg) {
  require(fe.K >= 1, "K must be at least 1");
  require(fe.C >= 2, "C must be at least 2");
  require(fe.d_l * fe.K == cfg.d_ff,
          "d_l x K = " + std::to_string(fe.d_l) + " x " +
              std::to_string(fe.K) + " must equal d_ff " +
              std::to_string(cfg.d_ff));
  require(fe.slot == "first" || fe.slot == "second" || fe.slot == "both",
          "unknown FE slot '" + fe.slot + "'");
}

// ---- FFN ----

void declare_ffn(ParamStore& params, const std::string& prefix,
                 const ConformerConfig& cfg, Rng& rng) {
  params.declare(prefix + ".w1", Tensor::xavier(cfg.d_ff, cfg.d_a, rng, true));
  params.declare(prefix + ".b1", Tensor::zeros({cfg.d_ff}, true));
  params.declare(prefix + ".w2", Tensor::xavier(cfg.d_a, cfg.d_ff, rng, true));
  params.declare(prefix + ".b2", Tensor::zeros({cfg.d_a}, true));
}

Tensor ffn_forward(const ParamStore& params, const std::string& prefix,
                   const Tensor& x) {
  Tensor hidden = swish(linear(params, prefix, "w1", "b1", x));
  return linear(params, prefix, "w2", "b2", hidden);
}

// ---- FE-FFN ----

void declare_fe_ffn(ParamStore& params, const std::string& prefix,
                    const ConformerConfig& cfg, const FEConfig& fe, Rng& rng) {
  validate(fe, cfg);
  declare_ffn(params, prefix, cfg, rng);
  // Near-identity factors: rho' starts close to 1 so a fresh cross-modal
  // block behaves like the vanilla block whose weights it inherited.
  params.declare(prefix + ".w_rho",
                 Tensor::randn({fe.K, fe.C}, rng, 0.02, true));
  params.declare(prefix + ".b_rho", Tensor::full({fe.K}, 1.0, true));
}

Tensor fe_ffn_forward(const ParamStore& params, const std::string& prefix,
                      const ConformerConfig& cfg, const FEConfig& fe,
                      const Tensor& x, const Tensor& rho) {
  require(rho.defined() && rho.shape().size() == 2 && rho.dim(1) == fe.C,
          prefix + ": rho must be (T," + std::to_string(fe.C) + ")");
  require(rho.dim(0) == x.dim(0),
          prefix + ": rho frames " + std::to_string(rho.dim(0)) +
              " vs input frames " + std::to_string(x.dim(0)));
  for (i64 t = 0; t < rho.dim(0); ++t) {
    double sum = 0.0;
    for (i64 c = 0; c < fe.C; ++c) {
      const double v = rho.at(t, c);
      require(v >= -1e-12, prefix + ": negative posterior entry");
      sum += v;
    }
    require(std::abs(sum - 1.0) < 1e-6,
            prefix + ": posterior row " + std::to_string(t) +
                " sums to " + std::to_string(sum));
  }

  // Eq-by-eq: factors, gated first linear, activation, second linear.
  Tensor rho_p = add_rowvec(matmul_nt(rho, params.get(prefix + ".w_rho")),
                            params.get(prefix + ".b_rho"));  // (T,K)
  Tensor hidden = matmul_nt(x, params.get(prefix + ".w1"));  // (T,d_ff)
  Tensor gated = mul(repeat_cols(rho_p, fe.d_l), hidden);
  Tensor activated =
      swish(add_rowvec(gated, params.get(prefix + ".b1")));
  return linear(params, prefix, "w2", "b2", activated);
}

// ---- MHSA ----

void declare_mhsa(ParamStore& params, const std::string& prefix,
                  const ConformerConfig& cfg, Rng& rng) {
  params.declare(prefix + ".wq", Tensor::xavier(cfg.d_k, cfg.d_a, rng, true));
  params.declare(prefix + ".bq", Tensor::zeros({cfg.d_k}, true));
  params.declare(prefix + ".wk", Tensor::xavier(cfg.d_k, cfg.d_a, rng, true));
  params.declare(prefix + ".bk", Tensor::zeros({cfg.d_k}, true));
  params.declare(prefix + ".wv", Tensor::xavier(cfg.d_k, cfg.d_a, rng, true));
  params.declare(prefix + ".bv", Tensor::zeros({cfg.d_k}, true));
  params.declare(prefix + ".wo", Tensor::xavier(cfg.d_a, cfg.d_k, rng, true));
  params.declare(prefix + ".bo", Tensor::zeros({cfg.d_a}, true));
  params.declare(prefix + ".wr", Tensor::xavier(cfg.d_k, cfg.d_a, rng, true));
  const i64 dh = cfg.d_k / cfg.h;
  params.declare(prefix + ".u", Tensor::randn({cfg.h, dh}, rng, 0.02, true));
  params.declare(prefix + ".v", Tensor::randn({cfg.h, dh}, rng, 0.02, true));
}

Tensor mhsa_forward(const ParamStore& params, const std::string& prefix,
                    const ConformerConfig& cfg, const Tensor& x,
                    i64 position_base) {
  const i64 t = x.dim(0);
  const i64 dh = cfg.d_k / cfg.h;
  Tensor q = linear(params, prefix, "wq", "bq", x);
  Tensor k = linear(params, prefix, "wk", "bk", x);
  Tensor v = linear(params, prefix, "wv", "bv", x);
  Tensor r = matmul_nt(rel_embeddings(t, cfg.d_a, position_base),
                       params.get(prefix + ".wr"));  // (2t-1, d_k)
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Tensor> heads;
  heads.reserve(cfg.h);
  for (i64 i = 0; i < cfg.h; ++i) {
    Tensor qh = slice_cols(q, i * dh, dh);
    Tensor kh = slice_cols(k, i * dh, dh);
    Tensor vh = slice_cols(v, i * dh, dh);
    Tensor rh = slice_cols(r, i * dh, dh);
    Tensor uh = reshape(gather_rows(params.get(prefix + ".u"), {i}), {dh});
    Tensor vbh = reshape(gather_rows(params.get(prefix + ".v"), {i}), {dh});
    // content-content and content-position terms, skewed into alignment
    Tensor ac = matmul_nt(add_rowvec(qh, uh), kh);            // (t,t)
    Tensor bd = rel_shift(matmul_nt(add_rowvec(qh, vbh), rh));  // (t,t)
    Tensor attn = softmax_rows(scale(add(ac, bd), inv_sqrt));
    heads.push_back(matmul(attn, vh));
  }
  return add_rowvec(matmul_nt(concat_cols(heads), params.get(prefix + ".wo")),
                    params.get(prefix + ".bo"));
}

// ---- conv block ----

void declare_conv_block(ParamStore& params, const std::string& prefix,
                        const ConformerConfig& cfg, Rng& rng) {
  params.declare(prefix + ".pw1",
                 Tensor::xavier(2 * cfg.d_a, cfg.d_a, rng, true));
  params.declare(prefix + ".pb1", Tensor::zeros({2 * cfg.d_a}, true));
  params.declare(prefix + ".dw",
                 Tensor::xavier(cfg.d_a, cfg.conv_kernel, rng, true));
  params.declare(prefix + ".db", Tensor::zeros({cfg.d_a}, true));
  declare_norm(params, prefix + ".ln2", cfg.d_a);
  params.declare(prefix + ".pw2", Tensor::xavier(cfg.d_a, cfg.d_a, rng, true));
  params.declare(prefix + ".pb2", Tensor::zeros({cfg.d_a}, true));
}

Tensor conv_block_core(const ParamStore& params, const std::string& prefix,
                       const ConformerConfig& cfg, const Tensor& x) {
  Tensor y = glu_cols(linear(params, prefix, "pw1", "pb1", x));
  y = depthwise_conv1d(y, params.get(prefix + ".dw"),
                       params.get(prefix + ".db"));
  y = norm_forward(params, prefix + ".ln2", y);
  y = swish(y);
  return linear(params, prefix, "pw2", "pb2", y);
}

Tensor conv_block_forward(const ParamStore& params, const std::string& prefix,
                          const ConformerConfig& cfg, const Tensor& x) {
  return add(x, conv_block_core(params, prefix, cfg, x));
}

// ---- norms ----

void declare_norm(ParamStore& params, const std::string& prefix, i64 width) {
  params.declare(prefix + ".g", Tensor::full({width}, 1.0, true));
  params.declare(prefix + ".b", Tensor::zeros({width}, true));
}

Tensor norm_forward(const ParamStore& params, const std::string& prefix,
                    const Tensor& x) {
  return layer_norm_rows(x, params.get(prefix + ".g"),
                         params.get(prefix + ".b"));
}

// ---- full block ----

ConformerBlock::ConformerBlock(ConformerConfig cfg, std::string prefix,
                               std::optional<FEConfig> fe)
    : cfg_(cfg), prefix_(std::move(prefix)), fe_(std::move(fe)) {
  validate(cfg_);
  if (fe_) validate(*fe_, cfg_);
}

void ConformerBlock::declare(ParamStore& params, Rng& rng) const {
  const bool fe1 = fe_ && fe_->first_slot();
  const bool fe2 = fe_ && fe_->second_slot();
  declare_norm(params, prefix_ + ".ffn1.ln", cfg_.d_a);
  if (fe1)
    declare_fe_ffn(params, prefix_ + ".ffn1", cfg_, *fe_, rng);
  else
    declare_ffn(params, prefix_ + ".ffn1", cfg_, rng);
  declare_norm(params, prefix_ + ".mhsa.ln", cfg_.d_a);
  declare_mhsa(params, prefix_ + ".mhsa", cfg_, rng);
  declare_norm(params, prefix_ + ".conv.ln", cfg_.d_a);
  declare_conv_block(params, prefix_ + ".conv", cfg_, rng);
  declare_norm(params, prefix_ + ".ffn2.ln", cfg_.d_a);
  if (fe2)
    declare_fe_ffn(params, prefix_ + ".ffn2", cfg_, *fe_, rng);
  else
    declare_ffn(params, prefix_ + ".ffn2", cfg_, rng);
  declare_norm(params, prefix_ + ".ln_out", cfg_.d_a);
}

Tensor ConformerBlock::forward(const ParamStore& params, const Tensor& x,
                               const Tensor* rho, i64 position_base,
                               Rng* dropout_rng) const {
  require(!cross_modal() || rho != nullptr,
          prefix_ + ": cross-modal block needs rho");
  const double rate = cfg_.dropout;
  auto ffn_slot = [&](const std::string& sub, bool fe_here,
                      const Tensor& in) {
    Tensor normed = norm_forward(params, prefix_ + "." + sub + ".ln", in);
    Tensor out = fe_here ? fe_ffn_forward(params, prefix_ + "." + sub, cfg_,
                                          *fe_, normed, *rho)
                         : ffn_forward(params, prefix_ + "." + sub, normed);
    // Macaron half-step residual
    return add(in, scale(maybe_dropout(out, rate, dropout_rng), 0.5));
  };

  Tensor y = ffn_slot("ffn1", fe_ && fe_->first_slot(), x);
  Tensor attn = mhsa_forward(params, prefix_ + ".mhsa", cfg_,
                             norm_forward(params, prefix_ + ".mhsa.ln", y),
                             position_base);
  y = add(y, maybe_dropout(attn, rate, dropout_rng));
  Tensor conv = conv_block_core(params, prefix_ + ".conv", cfg_,
                                norm_forward(params, prefix_ + ".conv.ln", y));
  y = add(y, maybe_dropout(conv, rate, dropout_rng));
  y = ffn_slot("ffn2", fe_ && fe_->second_slot(), y);
  return norm_forward(params, prefix_ + ".ln_out", y);
}

i64 ConformerBlock::param_count() const {
  const i64 d_a = cfg_.d_a, d_k = cfg_.d_k, d_ff = cfg_.d_ff;
  const i64 ffn = d_ff * d_a + d_ff + d_a * d_ff + d_a;
  const i64 mhsa = 3 * (d_k * d_a + d_k) + (d_a * d_k + d_a) + d_k * d_a +
                   2 * d_k;  // qkv, output, rel proj, u+v
  const i64 conv = (2 * d_a * d_a + 2 * d_a) + (d_a * cfg_.conv_kernel + d_a) +
                   2 * d_a + (d_a * d_a + d_a);
  const i64 norms = 5 * 2 * d_a;  // four pre-norms and the final norm
  i64 total = 2 * ffn + mhsa + conv + norms;
  if (fe_) {
    const i64 extra = fe_->K * fe_->C + fe_->K;
    if (fe_->first_slot()) total += extra;
    if (fe_->second_slot()) total += extra;
  }
  return total;
}

}  // namespace punet
