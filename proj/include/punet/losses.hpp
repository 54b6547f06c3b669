// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "punet/tensor.hpp"

namespace punet {

// CTC negative log-likelihood. `nll` is a scalar in the autodiff graph;
// when the target cannot be aligned (too few frames for its repeats) it is
// a +inf constant and `feasible` is false — never a crash.
struct CtcLoss {
  Tensor nll;
  bool feasible = true;
};

// Log-space forward algorithm over the blank-interleaved label sequence.
// `target` must not contain the blank id.
CtcLoss ctc_forward_loss(const Tensor& log_probs,
                         const std::vector<i64>& target, i64 blank = 0);

// The same quantity from a plain forward-backward recursion, with the exact
// gradient with respect to every log-probability. No autodiff involved;
// serves as the independent check of the graph route.
struct CtcAnalytic {
  double nll = 0.0;
  bool feasible = true;
  std::vector<double> grad;  // T*C, d nll / d log_probs
};
CtcAnalytic ctc_analytic(const std::vector<double>& log_probs, i64 t, i64 c,
                         const std::vector<i64>& target, i64 blank = 0);

// Sums the probability of every frame-label path whose collapse (merge
// repeats, drop blanks) equals the target. Only for enumerable instances:
// T <= 10 and C <= 6, otherwise rejected.
double ctc_brute_force_oracle(const std::vector<double>& log_probs, i64 t,
                              i64 c, const std::vector<i64>& target,
                              i64 blank = 0);

// Teacher-forced cross entropy over per-position log-probs with uniform
// label smoothing; `mean` averages over positions, otherwise sums.
Tensor attention_ce_loss(const Tensor& log_probs,
                         const std::vector<i64>& targets, double epsilon = 0.1,
                         bool mean = true);

// total = lambda * ctc + (1 - lambda) * att, with gradients into both
// branches; the endpoints use the surviving branch alone so an infeasible
// CTC term cannot poison a pure-attention objective.
struct LossBreakdown {
  Tensor total;
  double ctc_nll = 0.0;
  double att_nll = 0.0;
  double lambda = 0.0;
  bool ctc_feasible = true;
};
LossBreakdown hybrid_loss(const CtcLoss& ctc, const Tensor& att_nll,
                          double lambda);

}  // namespace punet
