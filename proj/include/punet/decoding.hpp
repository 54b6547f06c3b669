// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "punet/model.hpp"
#include "punet/tensor.hpp"

namespace punet {

// Incremental CTC prefix scoring over a fixed (T, C) log-prob matrix.
// A state carries, for every frame t, the log probability of paths that
// emit exactly the prefix and end at t in its last symbol (r_nb) or in
// blank (r_b), plus the log prefix probability itself: the total mass of
// complete paths whose collapsed output begins with the prefix.
class CtcPrefixScorer {
 public:
  explicit CtcPrefixScorer(const Tensor& log_probs, i64 blank = 0);

  struct State {
    std::vector<double> r_nb, r_b;  // index t = 0..T, frame-prefix sums
    double score = 0.0;             // log P(prefix is a prefix of collapse)
    i64 last = -1;                  // last prefix token, -1 for empty
  };

  // Empty prefix: every path begins with it, so score is 0.
  State initial() const;
  // State for prefix+c; c must be a non-blank class id. score becomes
  // -inf when the extended prefix cannot be embedded in T frames.
  State extend(const State& s, i64 c) const;
  // log P(collapse equals the prefix exactly).
  double complete(const State& s) const;
  // Fold extend() over a whole prefix (no leading [sos]).
  State score_prefix(const std::vector<i64>& prefix) const;

  i64 frames() const { return t_; }
  i64 classes() const { return c_; }

 private:
  i64 t_, c_, blank_;
  std::vector<double> lp_;  // row-major (t_, c_)
};

// Next-token scorer: maps a token prefix (leading [sos] included) to
// per-class log probabilities for the following token.
using StepScorer = std::function<std::vector<double>(const std::vector<i64>&)>;

struct DecodeConfig {
  i64 beam = 20;
  double gamma = 0.1;          // decoder weight; CTC weight is 1 - gamma
  double psi = 0.6;            // language model weight
  double max_len_ratio = 1.0;  // output length bound as a fraction of T

  void validate() const;  // beam >= 1, 0 <= gamma <= 1, psi >= 0, ratio > 0
};

// One search hypothesis. joint = (1-gamma)*ctc + gamma*dec + psi*lm, with
// zero-weight components dropped from the sum so impossible branches under
// a zero weight cannot poison the score.
struct Hypothesis {
  std::vector<i64> tokens;  // starts with [sos]; finished ones end with it
  CtcPrefixScorer::State ctc_state;
  double ctc = 0.0;  // prefix score, or complete score once finished
  double dec = 0.0;  // decoder log-prob sum
  double lm = 0.0;   // language model log-prob sum
  double joint = 0.0;
  bool finished = false;
};

struct DecodeResult {
  std::vector<i64> tokens;  // emitted characters, no [sos] markers
  double joint = 0.0, ctc = 0.0, dec = 0.0, lm = 0.0;
  std::vector<double> joint_trace;  // joint score after each emission
  bool truncated = false;  // no hypothesis could finish within the bound
};

// Label-synchronous beam search over character emissions. Each round every
// unfinished hypothesis proposes all character extensions plus an
// [sos]-as-eos completion; finished hypotheses keep competing for beam
// slots unchanged. The search stops as soon as the best beam entry is
// finished (admissible: scores never improve along an extension) and
// breaks exact ties by lexicographic token order. `lm` may be empty when
// cfg.psi == 0, `decoder` when cfg.gamma == 0.
DecodeResult joint_beam_search(const Tensor& ctc_log_probs,
                               const StepScorer& decoder, const StepScorer& lm,
                               const DecodeConfig& cfg, i64 blank = 0,
                               i64 sos = 1);

// Best path decoding: per-frame argmax, collapse repeats, drop blanks.
std::vector<i64> greedy_ctc_decode(const Tensor& log_probs, i64 blank = 0);

struct GreedyResult {
  std::vector<i64> tokens;  // emitted characters, no [sos] markers
  double score = 0.0;       // log-prob sum including the final [sos]
  bool truncated = false;
};

// Argmax decoding with the attention decoder alone: repeatedly take the
// most probable non-blank token (lowest id on ties) until [sos] or the
// length bound.
GreedyResult greedy_attention_decode(const StepScorer& decoder, i64 n_classes,
                                     i64 max_len, i64 blank = 0, i64 sos = 1);

// Adapters binding model components into StepScorer closures.
StepScorer make_decoder_scorer(const ParamStore& params,
                               const TransformerDecoder& decoder,
                               const Tensor& memory);
StepScorer make_lm_scorer(const ParamStore& params, const CharLM& lm);

}  // namespace punet
