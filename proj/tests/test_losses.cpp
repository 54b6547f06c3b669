// CTC forward loss against enumeration and analytic recursions, attention
// cross entropy, and the hybrid objective.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <vector>

#include "punet/losses.hpp"
#include "punet/rng.hpp"
#include "punet/tensor.hpp"

using namespace punet;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Row-wise log-softmax on plain values.
std::vector<double> random_log_probs(i64 t, i64 c, Rng& rng) {
  std::vector<double> lp(t * c);
  for (auto& v : lp) v = rng.gaussian(0.0, 2.0);
  for (i64 i = 0; i < t; ++i) {
    double mx = lp[i * c];
    for (i64 j = 1; j < c; ++j) mx = std::max(mx, lp[i * c + j]);
    double sum = 0.0;
    for (i64 j = 0; j < c; ++j) sum += std::exp(lp[i * c + j] - mx);
    const double lse = mx + std::log(sum);
    for (i64 j = 0; j < c; ++j) lp[i * c + j] -= lse;
  }
  return lp;
}

Tensor uniform_log_probs(i64 t, i64 c) {
  return Tensor::full({t, c}, -std::log(static_cast<double>(c)), false);
}

}  // namespace

TEST_CASE("ctc on uniform two-frame posteriors matches enumeration") {
  // C = 3: blank, a, b; every frame distribution is 1/3.
  Tensor lp = uniform_log_probs(2, 3);
  // target "a": alignments (a,a) (a,-) (-,a) -> P = 3/9.
  CtcLoss one = ctc_forward_loss(lp, {1});
  CHECK(one.feasible);
  CHECK(std::abs(one.nll.scalar() - std::log(3.0)) < 1e-12);
  // target "ab": only (a,b) -> P = 1/9.
  CtcLoss two = ctc_forward_loss(lp, {1, 2});
  CHECK(two.feasible);
  CHECK(std::abs(two.nll.scalar() - std::log(9.0)) < 1e-12);
  // target "aa" needs a separating blank: infeasible in two frames.
  CtcLoss rep = ctc_forward_loss(lp, {1, 1});
  CHECK_FALSE(rep.feasible);
  CHECK(rep.nll.scalar() == kInf);
  // ... but fits in three frames: only (a,-,a).
  CtcLoss rep3 = ctc_forward_loss(uniform_log_probs(3, 3), {1, 1});
  CHECK(rep3.feasible);
  CHECK(std::abs(rep3.nll.scalar() - std::log(27.0)) < 1e-12);
}

TEST_CASE("ctc edge targets") {
  // Empty target, one frame: probability of blank at that frame.
  Rng rng(5);
  std::vector<double> vals = random_log_probs(1, 3, rng);
  Tensor lp = Tensor::from_data({1, 3}, vals, false);
  CtcLoss empty = ctc_forward_loss(lp, {});
  CHECK(empty.feasible);
  CHECK(std::abs(empty.nll.scalar() + vals[0]) < 1e-12);
  CHECK(std::abs(ctc_brute_force_oracle(vals, 1, 3, {}) + vals[0]) < 1e-12);

  // One-hot frames spelling the target directly: nll ~ 0.
  std::vector<double> hot(2 * 3, -50.0);
  hot[0 * 3 + 1] = 0.0;  // a
  hot[1 * 3 + 2] = 0.0;  // b
  CtcLoss spelled =
      ctc_forward_loss(Tensor::from_data({2, 3}, hot, false), {1, 2});
  CHECK(spelled.feasible);
  CHECK(std::abs(spelled.nll.scalar()) < 1e-9);

  // Malformed targets are rejected outright.
  CHECK_THROWS(ctc_forward_loss(lp, {0}));   // blank in target
  CHECK_THROWS(ctc_forward_loss(lp, {7}));   // outside vocabulary
  CHECK_THROWS(ctc_forward_loss(lp, {-1}));  // outside vocabulary
}

TEST_CASE("ctc forward agrees with brute force on random instances") {
  Rng rng(77);
  i64 checked = 0, infeasible = 0;
  for (int iter = 0; iter < 200; ++iter) {
    const i64 t = rng.uniform_int(1, 6);
    const i64 c = rng.uniform_int(2, 4);
    const i64 len = rng.uniform_int(0, t + 1);
    std::vector<i64> target(len);
    for (auto& y : target) y = rng.uniform_int(1, c - 1);
    std::vector<double> vals = random_log_probs(t, c, rng);
    Tensor lp = Tensor::from_data({t, c}, vals, false);

    CtcLoss fwd = ctc_forward_loss(lp, target);
    double oracle = ctc_brute_force_oracle(vals, t, c, target);
    CtcAnalytic ana = ctc_analytic(vals, t, c, target);
    if (!fwd.feasible) {
      ++infeasible;
      CHECK(oracle == kInf);
      CHECK_FALSE(ana.feasible);
      continue;
    }
    ++checked;
    CHECK(std::isfinite(fwd.nll.scalar()));  // no log-space underflow
    CHECK(std::abs(fwd.nll.scalar() - oracle) < 1e-9);
    CHECK(std::abs(ana.nll - oracle) < 1e-9);
  }
  CHECK(checked >= 100);  // the sweep must exercise real instances
  CHECK(infeasible >= 10);
}

TEST_CASE("ctc graph gradient equals the analytic forward-backward") {
  Rng rng(11);
  for (int iter = 0; iter < 50; ++iter) {
    const i64 t = rng.uniform_int(2, 6);
    const i64 c = rng.uniform_int(2, 4);
    const i64 len = rng.uniform_int(1, 2);
    std::vector<i64> target(len);
    for (auto& y : target) y = rng.uniform_int(1, c - 1);
    std::vector<double> vals = random_log_probs(t, c, rng);
    Tensor lp = Tensor::from_data({t, c}, vals, true);
    CtcLoss fwd = ctc_forward_loss(lp, target);
    if (!fwd.feasible) continue;
    backward(fwd.nll);
    CtcAnalytic ana = ctc_analytic(vals, t, c, target);
    for (i64 i = 0; i < t * c; ++i)
      CHECK(std::abs(lp.grad()[i] - ana.grad[i]) < 1e-9);
  }
}

TEST_CASE("ctc gradient passes a finite-difference check") {
  ParamStore params;
  Rng rng(13);
  std::vector<double> vals = random_log_probs(5, 4, rng);
  params.declare("lp", Tensor::from_data({5, 4}, vals, true));
  std::vector<i64> target = {2, 1, 3};
  auto f = [&](ParamStore& p) {
    return ctc_forward_loss(p.get("lp"), target).nll;
  };
  FiniteDiffReport report = finite_difference_check(f, params, 1e-5, 4, 3);
  INFO("worst: ", report.worst_param, " rel ", report.max_rel_error);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("ctc oracle rejects unenumerable instances") {
  std::vector<double> lp(11 * 2, -std::log(2.0));
  CHECK_THROWS(ctc_brute_force_oracle(lp, 11, 2, {1}));
  std::vector<double> lp2(2 * 7, -std::log(7.0));
  CHECK_THROWS(ctc_brute_force_oracle(lp2, 2, 7, {1}));
}

TEST_CASE("attention cross entropy closed forms") {
  const i64 c = 5;
  // Sharp predictions hitting the target.
  std::vector<i64> targets = {2, 0, 4};
  std::vector<double> vals(3 * c);
  Rng rng(17);
  for (i64 i = 0; i < 3; ++i) {
    double sum = 0.0;
    for (i64 j = 0; j < c; ++j) {
      double logit = (j == targets[i]) ? 25.0 : 0.0;
      vals[i * c + j] = logit;
    }
    double mx = 25.0;
    for (i64 j = 0; j < c; ++j) sum += std::exp(vals[i * c + j] - mx);
    for (i64 j = 0; j < c; ++j) vals[i * c + j] -= mx + std::log(sum);
  }
  Tensor sharp = Tensor::from_data({3, c}, vals, false);
  CHECK(attention_ce_loss(sharp, targets, 0.0).scalar() ==
        doctest::Approx(0.0).epsilon(1e-9));

  // Uniform predictions: ln C per token regardless of smoothing target.
  Tensor unif = uniform_log_probs(3, c);
  CHECK(std::abs(attention_ce_loss(unif, targets, 0.0).scalar() -
                 std::log(static_cast<double>(c))) < 1e-12);

  // Smoothing on the sharp predictions: scalar-loop oracle.
  const double eps = 0.1;
  double expect = 0.0;
  for (i64 i = 0; i < 3; ++i) {
    double mean_nll = 0.0;
    for (i64 j = 0; j < c; ++j) mean_nll -= vals[i * c + j];
    mean_nll /= static_cast<double>(c);
    expect += (1.0 - eps) * (-vals[i * c + targets[i]]) + eps * mean_nll;
  }
  expect /= 3.0;
  CHECK(std::abs(attention_ce_loss(sharp, targets, eps).scalar() - expect) <
        1e-12);

  // Sum mode is positions times the mean.
  double mean_loss = attention_ce_loss(unif, targets, 0.0).scalar();
  double sum_loss = attention_ce_loss(unif, targets, 0.0, false).scalar();
  CHECK(std::abs(sum_loss - 3.0 * mean_loss) < 1e-12);

  // Length mismatch is rejected.
  CHECK_THROWS(attention_ce_loss(unif, {1, 2}));
}

TEST_CASE("hybrid objective arithmetic and endpoints") {
  Tensor ctc_term = Tensor::full({1}, 2.0, true);
  Tensor att_term = Tensor::full({1}, 1.0, true);
  CtcLoss ctc{ctc_term, true};

  LossBreakdown mixed = hybrid_loss(ctc, att_term, 0.3);
  CHECK(std::abs(mixed.total.scalar() - 1.3) < 1e-12);
  CHECK(mixed.ctc_nll == 2.0);
  CHECK(mixed.att_nll == 1.0);
  CHECK(mixed.lambda == 0.3);
  CHECK(std::abs(mixed.total.scalar() -
                 (mixed.lambda * mixed.ctc_nll +
                  (1.0 - mixed.lambda) * mixed.att_nll)) < 1e-12);

  // Gradients flow to both branches with the mixing weights.
  backward(mixed.total);
  CHECK(std::abs(ctc_term.grad()[0] - 0.3) < 1e-15);
  CHECK(std::abs(att_term.grad()[0] - 0.7) < 1e-15);

  CHECK(hybrid_loss(ctc, att_term, 0.0).total.scalar() == 1.0);
  CHECK(hybrid_loss(ctc, att_term, 1.0).total.scalar() == 2.0);
  CHECK_THROWS(hybrid_loss(ctc, att_term, -0.1));
  CHECK_THROWS(hybrid_loss(ctc, att_term, 1.1));

  // Monotone in each component for interior lambda.
  CtcLoss bigger{Tensor::full({1}, 2.5, false), true};
  CHECK(hybrid_loss(bigger, att_term, 0.3).total.scalar() >
        mixed.total.scalar());
  Tensor att_bigger = Tensor::full({1}, 1.5, false);
  CHECK(hybrid_loss(ctc, att_bigger, 0.3).total.scalar() >
        mixed.total.scalar());

  // An infeasible CTC term never poisons a pure attention objective.
  CtcLoss infeasible{Tensor::full({1}, kInf, false), false};
  LossBreakdown pure_att = hybrid_loss(infeasible, att_term, 0.0);
  CHECK(pure_att.total.scalar() == 1.0);
  CHECK_FALSE(pure_att.ctc_feasible);
  CHECK(hybrid_loss(infeasible, att_term, 0.3).total.scalar() == kInf);
}
