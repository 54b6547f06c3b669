// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "punet/rng.hpp"
#include "punet/tensor.hpp"

namespace punet {

struct ConformerConfig {
  i64 d_a = 64;   // model width
  i64 d_k = 64;   // attention width
  i64 d_ff = 256; // FFN hidden width
  i64 h = 4;      // heads
  i64 conv_kernel = 7;
  double dropout = 0.0;
};

// Factorized-excitation configuration: K audio subspaces of width d_l gated
// by a C-class posterior; d_l * K must equal d_ff.
struct FEConfig {
  i64 K = 8;
  i64 d_l = 32;
  i64 C = 12;
  std::string slot = "second";  // first | second | both

  bool first_slot() const { return slot == "first" || slot == "both"; }
  bool second_slot() const { return slot == "second" || slot == "both"; }
};

void validate(const ConformerConfig& cfg);
void validate(const FEConfig& fe, const ConformerConfig& cfg);

// ---- feed-forward ----
// Names under prefix: w1 (d_ff,d_a), b1 (d_ff), w2 (d_a,d_ff), b2 (d_a).
void declare_ffn(ParamStore& params, const std::string& prefix,
                 const ConformerConfig& cfg, Rng& rng);
// w2 * swish(w1 x + b1) + b2, per frame.
Tensor ffn_forward(const ParamStore& params, const std::string& prefix,
                   const Tensor& x);

// ---- factorized-excitation feed-forward ----
// Same names as declare_ffn plus w_rho (K,C) and b_rho (K); w1/b1 hold the
// stacked subspace weights, so vanilla FFN weights load unchanged.
void declare_fe_ffn(ParamStore& params, const std::string& prefix,
                    const ConformerConfig& cfg, const FEConfig& fe, Rng& rng);
// Per frame t: rho'_t = w_rho rho_t + b_rho; subspace k of the hidden layer
// is scaled by rho'_{t,k} before its bias; then the usual second linear.
Tensor fe_ffn_forward(const ParamStore& params, const std::string& prefix,
                      const ConformerConfig& cfg, const FEConfig& fe,
                      const Tensor& x, const Tensor& rho);

// ---- multi-head self-attention with relative positions ----
// Names under prefix: wq wk wv (d_k,d_a), bq bk bv (d_k), wo (d_a,d_k),
// bo (d_a), wr (d_k,d_a), u v (h, d_k/h).
void declare_mhsa(ParamStore& params, const std::string& prefix,
                  const ConformerConfig& cfg, Rng& rng);
// position_base shifts every absolute frame index; relative attention is
// invariant to it (exactly, in integer-valued double arithmetic).
Tensor mhsa_forward(const ParamStore& params, const std::string& prefix,
                    const ConformerConfig& cfg, const Tensor& x,
                    i64 position_base = 0);

// ---- convolution block (residual inside) ----
// Names under prefix: pw1 (2d_a,d_a), pb1 (2d_a), dw (d_a,kernel), db (d_a),
// ln2.g ln2.b (d_a), pw2 (d_a,d_a), pb2 (d_a).
void declare_conv_block(ParamStore& params, const std::string& prefix,
                        const ConformerConfig& cfg, Rng& rng);
// pw2(swish(norm(depthwise(glu(pw1(x)))))) — the branch alone.
Tensor conv_block_core(const ParamStore& params, const std::string& prefix,
                       const ConformerConfig& cfg, const Tensor& x);
// Branch plus skip connection; pre-norm is the caller's job.
Tensor conv_block_forward(const ParamStore& params, const std::string& prefix,
                          const ConformerConfig& cfg, const Tensor& x);

// ---- layer norm parameter pair ----
void declare_norm(ParamStore& params, const std::string& prefix, i64 width);
Tensor norm_forward(const ParamStore& params, const std::string& prefix,
                    const Tensor& x);

// ---- full block ----
// Submodule prefixes under `prefix`: ffn1 mhsa conv ffn2 ln_out, each with
// its pre-norm at {sub}.ln. A cross-modal block swaps the FE slots in and
// adds only w_rho/b_rho there; every other name and shape is unchanged.
class ConformerBlock {
 public:
  ConformerBlock(ConformerConfig cfg, std::string prefix,
                 std::optional<FEConfig> fe = std::nullopt);

  bool cross_modal() const { return fe_.has_value(); }
  const std::string& prefix() const { return prefix_; }
  const ConformerConfig& config() const { return cfg_; }

  void declare(ParamStore& params, Rng& rng) const;
  // rho required iff cross-modal; dropout_rng enables dropout at the
  // configured rate (training only).
  Tensor forward(const ParamStore& params, const Tensor& x,
                 const Tensor* rho = nullptr, i64 position_base = 0,
                 Rng* dropout_rng = nullptr) const;

  i64 param_count() const;  // closed form

 private:
  ConformerConfig cfg_;
  std::string prefix_;
  std::optional<FEConfig> fe_;
};

}  // namespace punet
