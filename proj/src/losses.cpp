// SPDX-License-Identifier: Apache-2.0
#include "punet/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace punet {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kPosInf = std::numeric_limits<double>::infinity();

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

void check_target(const std::vector<i64>& target, i64 c, i64 blank) {
  require(blank >= 0 && blank < c, "ctc: blank id outside vocabulary");
  for (i64 y : target) {
    require(y >= 0 && y < c,
            "ctc: target id " + std::to_string(y) + " outside vocabulary");
    require(y != blank, "ctc: target contains the blank id");
  }
}

// Frames needed: one per label plus a separating blank per repeat.
i64 min_frames(const std::vector<i64>& target) {
  i64 need = static_cast<i64>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++need;
  return need;
}

std::vector<i64> interleave_blanks(const std::vector<i64>& target, i64 blank) {
  std::vector<i64> ext;
  ext.reserve(2 * target.size() + 1);
  ext.push_back(blank);
  for (i64 y : target) {
    ext.push_back(y);
    ext.push_back(blank);
  }
  return ext;
}

double logsumexp2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

CtcLoss ctc_forward_loss(const Tensor& log_probs,
                         const std::vector<i64>& target, i64 blank) {
  require(log_probs.defined() && log_probs.shape().size() == 2,
          "ctc: log_probs must be (T,C)");
  const i64 t = log_probs.dim(0), c = log_probs.dim(1);
  check_target(target, c, blank);
  if (t < min_frames(target))
    return CtcLoss{Tensor::full({1}, kPosInf, false), false};

  const std::vector<i64> ext = interleave_blanks(target, blank);
  const i64 s = static_cast<i64>(ext.size());

  // Start states: the leading blank or the first label.
  std::vector<double> start(s, kNegInf);
  start[0] = 0.0;
  if (s > 1) start[1] = 0.0;
  // A jump over the previous state's blank is allowed only between distinct
  // labels.
  std::vector<double> skip(s, kNegInf);
  for (i64 i = 2; i < s; ++i)
    if (ext[i] != blank && ext[i] != ext[i - 2]) skip[i] = 0.0;
  Tensor start_mask = Tensor::from_data({1, s}, std::move(start), false);
  Tensor skip_mask = Tensor::from_data({1, s}, std::move(skip), false);

  Tensor alpha =
      add(gather_cols(slice_rows(log_probs, 0, 1), ext), start_mask);
  for (i64 i = 1; i < t; ++i) {
    Tensor trans = s >= 2 ? logaddexp(alpha, shift_cols(alpha, 1, kNegInf))
                          : alpha;
    if (s >= 3)
      trans = logaddexp(trans, add(shift_cols(alpha, 2, kNegInf), skip_mask));
    alpha = add(trans, gather_cols(slice_rows(log_probs, i, 1), ext));
  }
  Tensor final_mass =
      s == 1 ? slice_cols(alpha, 0, 1)
             : logaddexp(slice_cols(alpha, s - 1, 1),
                         slice_cols(alpha, s - 2, 1));
  return CtcLoss{scale(reshape(final_mass, {1}), -1.0), true};
}

CtcAnalytic ctc_analytic(const std::vector<double>& log_probs, i64 t, i64 c,
                         const std::vector<i64>& target, i64 blank) {
  require(static_cast<i64>(log_probs.size()) == t * c,
          "ctc: log_probs size mismatch");
  check_target(target, c, blank);
  CtcAnalytic out;
  out.grad.assign(t * c, 0.0);
  if (t < min_frames(target)) {
    out.nll = kPosInf;
    out.feasible = false;
    return out;
  }
  const std::vector<i64> ext = interleave_blanks(target, blank);
  const i64 s = static_cast<i64>(ext.size());
  auto lp = [&](i64 i, i64 k) { return log_probs[i * c + k]; };

  // Forward: emission at frame i included in a[i][.].
  std::vector<double> a(t * s, kNegInf), b(t * s, kNegInf);
  a[0 * s + 0] = lp(0, ext[0]);
  if (s > 1) a[0 * s + 1] = lp(0, ext[1]);
  for (i64 i = 1; i < t; ++i) {
    for (i64 j = 0; j < s; ++j) {
      double m = a[(i - 1) * s + j];
      if (j >= 1) m = logsumexp2(m, a[(i - 1) * s + j - 1]);
      if (j >= 2 && ext[j] != blank && ext[j] != ext[j - 2])
        m = logsumexp2(m, a[(i - 1) * s + j - 2]);
      a[i * s + j] = m + lp(i, ext[j]);
    }
  }
  double log_p = a[(t - 1) * s + s - 1];
  if (s > 1) log_p = logsumexp2(log_p, a[(t - 1) * s + s - 2]);
  out.nll = -log_p;

  // Backward: b[i][j] excludes emission at frame i.
  b[(t - 1) * s + s - 1] = 0.0;
  if (s > 1) b[(t - 1) * s + s - 2] = 0.0;
  for (i64 i = t - 2; i >= 0; --i) {
    for (i64 j = 0; j < s; ++j) {
      double m = b[(i + 1) * s + j] + lp(i + 1, ext[j]);
      if (j + 1 < s)
        m = logsumexp2(m, b[(i + 1) * s + j + 1] + lp(i + 1, ext[j + 1]));
      if (j + 2 < s && ext[j + 2] != blank && ext[j + 2] != ext[j])
        m = logsumexp2(m, b[(i + 1) * s + j + 2] + lp(i + 1, ext[j + 2]));
      b[i * s + j] = m;
    }
  }

  // d nll / d lp(i,k) = -sum_{j: ext[j]=k} exp(a[i][j] + b[i][j] - log_p).
  for (i64 i = 0; i < t; ++i) {
    std::vector<double> acc(c, kNegInf);
    for (i64 j = 0; j < s; ++j)
      acc[ext[j]] = logsumexp2(acc[ext[j]], a[i * s + j] + b[i * s + j]);
    for (i64 k = 0; k < c; ++k)
      if (acc[k] != kNegInf) out.grad[i * c + k] = -std::exp(acc[k] - log_p);
  }
  return out;
}

double ctc_brute_force_oracle(const std::vector<double>& log_probs, i64 t,
                              i64 c, const std::vector<i64>& target,
                              i64 blank) {
  require(t >= 1 && t <= 10 && c >= 1 && c <= 6,
          "ctc oracle: instance too large (need T <= 10, C <= 6)");
  require(static_cast<i64>(log_probs.size()) == t * c,
          "ctc oracle: log_probs size mismatch");
  check_target(target, c, blank);
  std::vector<i64> path(t, 0);
  std::vector<i64> collapsed;
  collapsed.reserve(t);
  double total = 0.0;
  while (true) {
    collapsed.clear();
    for (i64 i = 0; i < t; ++i) {
      if (path[i] == blank) continue;
      if (i > 0 && path[i] == path[i - 1]) continue;
      collapsed.push_back(path[i]);
    }
    if (collapsed == target) {
      double lp = 0.0;
      for (i64 i = 0; i < t; ++i) lp += log_probs[i * c + path[i]];
      total += std::exp(lp);
    }
    // Odometer step over all C^T paths.
    i64 pos = t - 1;
    while (pos >= 0 && path[pos] == c - 1) {
      path[pos] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++path[pos];
  }
  return total > 0.0 ? -std::log(total) : kPosInf;
}

Tensor attention_ce_loss(const Tensor& log_probs,
                         const std::vector<i64>& targets, double epsilon,
                         bool mean) {
  require(log_probs.defined() && log_probs.shape().size() == 2,
          "attention ce: log_probs must be (L,C)");
  require(static_cast<i64>(targets.size()) == log_probs.dim(0),
          "attention ce: " + std::to_string(targets.size()) +
              " targets for " + std::to_string(log_probs.dim(0)) +
              " positions");
  Tensor loss = nll_smoothed(log_probs, targets, epsilon);
  if (!mean) loss = scale(loss, static_cast<double>(targets.size()));
  return loss;
}

LossBreakdown hybrid_loss(const CtcLoss& ctc, const Tensor& att_nll,
                          double lambda) {
  require(lambda >= 0.0 && lambda <= 1.0,
          "hybrid loss: lambda must lie in [0,1], got " +
              std::to_string(lambda));
  require(att_nll.defined() && att_nll.numel() == 1,
          "hybrid loss: attention term must be scalar");
  require(ctc.nll.defined() && ctc.nll.numel() == 1,
          "hybrid loss: ctc term must be scalar");
  LossBreakdown out;
  out.lambda = lambda;
  out.ctc_nll = ctc.nll.scalar();
  out.att_nll = att_nll.scalar();
  out.ctc_feasible = ctc.feasible;
  Tensor flat_ctc = reshape(ctc.nll, {1});
  Tensor flat_att = reshape(att_nll, {1});
  if (lambda == 0.0)
    out.total = flat_att;
  else if (lambda == 1.0)
    out.total = flat_ctc;
  else
    out.total =
        add(scale(flat_ctc, lambda), scale(flat_att, 1.0 - lambda));
  return out;
}

}  // namespace punet
