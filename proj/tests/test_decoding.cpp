// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "punet/decoding.hpp"
#include "punet/losses.hpp"
#include "punet/rng.hpp"
#include "punet/tensor.hpp"

using namespace punet;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Tensor random_log_probs(i64 t, i64 c, Rng& rng) {
  std::vector<double> vals(static_cast<std::size_t>(t * c));
  for (auto& v : vals) v = rng.gaussian(0.0, 1.5);
  return log_softmax_rows(Tensor::from_data({t, c}, vals, false));
}

// Log-prob matrix whose per-frame argmax spells the given class sequence.
Tensor frames_spelling(const std::vector<i64>& argmaxes, i64 c) {
  const i64 t = static_cast<i64>(argmaxes.size());
  std::vector<double> vals(static_cast<std::size_t>(t * c), std::log(0.01));
  for (i64 i = 0; i < t; ++i) vals[i * c + argmaxes[i]] = std::log(0.9);
  return Tensor::from_data({t, c}, vals, false);
}

std::vector<i64> collapse(const std::vector<i64>& path, i64 blank) {
  std::vector<i64> out;
  i64 prev = -1;
  for (i64 s : path) {
    if (s != prev && s != blank) out.push_back(s);
    prev = s;
  }
  return out;
}

bool starts_with(const std::vector<i64>& seq, const std::vector<i64>& prefix) {
  if (prefix.size() > seq.size()) return false;
  return std::equal(prefix.begin(), prefix.end(), seq.begin());
}

// Sums path probabilities over all class^t paths: total mass whose collapse
// starts with `prefix`, and mass whose collapse equals it exactly.
struct PathMass {
  double prefix_mass = 0.0;
  double exact_mass = 0.0;
};
PathMass enumerate_paths(const Tensor& lp, const std::vector<i64>& prefix,
                         i64 blank) {
  const i64 t = lp.dim(0), c = lp.dim(1);
  REQUIRE(t <= 8);
  PathMass m;
  std::vector<i64> path(static_cast<std::size_t>(t), 0);
  for (;;) {
    double logp = 0.0;
    for (i64 i = 0; i < t; ++i) logp += lp.at(i, path[i]);
    const std::vector<i64> lab = collapse(path, blank);
    if (starts_with(lab, prefix)) m.prefix_mass += std::exp(logp);
    if (lab == prefix) m.exact_mass += std::exp(logp);
    i64 pos = t - 1;
    while (pos >= 0 && path[pos] == c - 1) path[pos--] = 0;
    if (pos < 0) break;
    ++path[pos];
  }
  return m;
}

// Independent forward recursion over the blank-interleaved prefix giving
// the frame-wise non-blank / blank ending masses.
struct InterleavedForward {
  std::vector<double> r_nb, r_b;  // index t = 0..T
};
InterleavedForward interleaved_forward(const Tensor& lp,
                                       const std::vector<i64>& prefix,
                                       i64 blank) {
  const i64 t = lp.dim(0);
  const i64 l = static_cast<i64>(prefix.size());
  const i64 s = 2 * l + 1;
  std::vector<i64> ext(static_cast<std::size_t>(s), blank);
  for (i64 i = 0; i < l; ++i) ext[2 * i + 1] = prefix[i];
  std::vector<double> alpha(static_cast<std::size_t>(s), -kInf);
  InterleavedForward out;
  out.r_nb.assign(t + 1, -kInf);
  out.r_b.assign(t + 1, -kInf);
  out.r_b[0] = l == 0 ? 0.0 : -kInf;
  if (l == 0) out.r_nb[0] = -kInf;
  auto lse = [](double a, double b) {
    if (a == -kInf) return b;
    if (b == -kInf) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
  };
  for (i64 i = 0; i < t; ++i) {
    std::vector<double> next(static_cast<std::size_t>(s), -kInf);
    for (i64 j = 0; j < s; ++j) {
      double acc = i == 0 ? (j <= 1 ? 0.0 : -kInf) : alpha[j];
      if (i > 0) {
        if (j >= 1) acc = lse(acc, alpha[j - 1]);
        if (j >= 2 && ext[j] != blank && ext[j] != ext[j - 2])
          acc = lse(acc, alpha[j - 2]);
      }
      if (i == 0 && j > 1) acc = -kInf;
      next[j] = acc + lp.at(i, ext[j]);
    }
    alpha = next;
    if (l > 0) {
      out.r_nb[i + 1] = alpha[s - 2];
      out.r_b[i + 1] = alpha[s - 1];
    } else {
      out.r_b[i + 1] = alpha[0];
    }
  }
  return out;
}

// Deterministic synthetic next-token scorer: a pure function of the prefix.
StepScorer fake_scorer(i64 n_classes, std::uint64_t seed, i64 blank = 0,
                       double eos_boost = 0.0, i64 sos = 1) {
  return [n_classes, seed, blank, eos_boost, sos](
             const std::vector<i64>& prefix) {
    std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
    for (i64 tok : prefix) h = h * 1099511628211ULL + static_cast<std::uint64_t>(tok + 3);
    Rng r(h);
    std::vector<double> v(static_cast<std::size_t>(n_classes));
    for (auto& x : v) x = r.gaussian(0.0, 1.0);
    v[sos] += eos_boost;
    double mx = -kInf;
    for (i64 j = 0; j < n_classes; ++j)
      if (j != blank) mx = std::max(mx, v[j]);
    double z = 0.0;
    for (i64 j = 0; j < n_classes; ++j) {
      if (j == blank) continue;
      z += std::exp(v[j] - mx);
    }
    const double logz = mx + std::log(z);
    for (i64 j = 0; j < n_classes; ++j)
      v[j] = j == blank ? -1e30 : v[j] - logz;
    return v;
  };
}

}  // namespace

TEST_CASE("greedy ctc collapses the argmax path") {
  const i64 c = 5;  // 0=[blank] 1=[sos] 2,3,4 characters
  CHECK(greedy_ctc_decode(frames_spelling({2, 2, 0, 3}, c)) ==
        std::vector<i64>{2, 3});
  CHECK(greedy_ctc_decode(frames_spelling({0, 0, 0, 0}, c)).empty());
  CHECK(greedy_ctc_decode(frames_spelling({2, 0, 2, 3}, c)) ==
        std::vector<i64>{2, 2, 3});
  CHECK(greedy_ctc_decode(frames_spelling({2, 2, 2}, c)) ==
        std::vector<i64>{2});
}

TEST_CASE("ctc prefix score matches exhaustive path enumeration") {
  Rng rng(401);
  i64 checked = 0, impossible = 0;
  for (int rep = 0; rep < 40; ++rep) {
    const i64 t = rng.uniform_int(1, 6);
    const i64 c = rng.uniform_int(2, 4);
    Tensor lp = random_log_probs(t, c, rng);
    CtcPrefixScorer scorer(lp, 0);
    const i64 len = rng.uniform_int(0, 3);
    std::vector<i64> prefix(static_cast<std::size_t>(len));
    for (auto& y : prefix) y = rng.uniform_int(1, c - 1);
    CtcPrefixScorer::State st = scorer.score_prefix(prefix);
    const PathMass mass = enumerate_paths(lp, prefix, 0);
    if (mass.prefix_mass == 0.0) {
      CHECK(st.score == -kInf);
      ++impossible;
    } else {
      CHECK(st.score ==
            doctest::Approx(std::log(mass.prefix_mass)).epsilon(1e-9));
      ++checked;
    }
    if (mass.exact_mass == 0.0) {
      CHECK(scorer.complete(st) == -kInf);
    } else {
      CHECK(scorer.complete(st) ==
            doctest::Approx(std::log(mass.exact_mass)).epsilon(1e-9));
    }
  }
  CHECK(checked >= 20);
  CHECK(impossible >= 1);
}

TEST_CASE("incremental prefix states equal a from-scratch recursion") {
  Rng rng(402);
  for (int rep = 0; rep < 40; ++rep) {
    const i64 t = rng.uniform_int(2, 7);
    const i64 c = rng.uniform_int(3, 5);
    Tensor lp = random_log_probs(t, c, rng);
    CtcPrefixScorer scorer(lp, 0);
    const i64 len = rng.uniform_int(0, 3);
    std::vector<i64> prefix(static_cast<std::size_t>(len));
    for (auto& y : prefix) y = rng.uniform_int(1, c - 1);
    CtcPrefixScorer::State st = scorer.score_prefix(prefix);
    const InterleavedForward ref = interleaved_forward(lp, prefix, 0);
    for (i64 i = 0; i <= t; ++i) {
      if (ref.r_nb[i] == -kInf) {
        CHECK(st.r_nb[i] == -kInf);
      } else {
        CHECK(st.r_nb[i] == doctest::Approx(ref.r_nb[i]).epsilon(1e-9));
      }
      if (ref.r_b[i] == -kInf) {
        CHECK(st.r_b[i] == -kInf);
      } else {
        CHECK(st.r_b[i] == doctest::Approx(ref.r_b[i]).epsilon(1e-9));
      }
    }
    // The complete-sequence score is the (negated) forward-loss quantity.
    if (!prefix.empty()) {
      CtcLoss loss = ctc_forward_loss(lp, prefix);
      if (loss.feasible) {
        CHECK(scorer.complete(st) ==
              doctest::Approx(-loss.nll.scalar()).epsilon(1e-9));
      } else {
        CHECK(scorer.complete(st) == -kInf);
      }
    }
  }
}

TEST_CASE("beam one with full decoder weight reduces to greedy attention") {
  Rng rng(403);
  DecodeConfig cfg;
  cfg.beam = 1;
  cfg.gamma = 1.0;
  cfg.psi = 0.0;
  int finished = 0;
  for (int rep = 0; rep < 60; ++rep) {
    const i64 t = rng.uniform_int(3, 8);
    const i64 c = 6;
    Tensor lp = random_log_probs(t, c, rng);
    StepScorer dec = fake_scorer(c, 1000 + static_cast<std::uint64_t>(rep),
                                 0, rep % 2 == 0 ? 1.5 : 0.0);
    DecodeResult beam = joint_beam_search(lp, dec, {}, cfg);
    GreedyResult greedy = greedy_attention_decode(dec, c, t);
    CHECK(beam.tokens == greedy.tokens);
    CHECK(!beam.truncated);  // the scorer always leaves [sos] reachable
    CHECK(beam.joint == doctest::Approx(greedy.score).epsilon(1e-12));
    if (!greedy.truncated) ++finished;
  }
  CHECK(finished >= 20);
}

TEST_CASE("ctc-only wide beam equals exhaustive prefix enumeration") {
  Rng rng(404);
  DecodeConfig cfg;
  cfg.beam = 400;
  cfg.gamma = 0.0;
  cfg.psi = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const i64 t = rng.uniform_int(2, 6);
    const i64 c = 4;  // blank, sos, two characters
    Tensor lp = random_log_probs(t, c, rng);
    CtcPrefixScorer scorer(lp, 0);

    // Every character sequence of length 0..t, scored by its exact
    // complete-sequence probability; ties broken lexicographically.
    std::vector<i64> best_tokens;
    double best_score = -kInf;
    bool have = false;
    std::vector<std::vector<i64>> level = {{}};
    for (i64 len = 0; len <= t; ++len) {
      std::vector<std::vector<i64>> next_level;
      for (const auto& seq : level) {
        const double sc = scorer.complete(scorer.score_prefix(seq));
        if (sc > -kInf &&
            (!have || sc > best_score ||
             (sc == best_score &&
              std::lexicographical_compare(seq.begin(), seq.end(),
                                           best_tokens.begin(),
                                           best_tokens.end())))) {
          best_tokens = seq;
          best_score = sc;
          have = true;
        }
        if (len < t) {
          for (i64 ch = 2; ch < c; ++ch) {
            auto ext = seq;
            ext.push_back(ch);
            next_level.push_back(std::move(ext));
          }
        }
      }
      level = std::move(next_level);
    }

    DecodeResult result = joint_beam_search(lp, {}, {}, cfg);
    REQUIRE(have);
    CHECK(!result.truncated);
    CHECK(result.tokens == best_tokens);
    CHECK(result.joint == doctest::Approx(best_score).epsilon(1e-9));
  }
}

// A next-token scorer with the consistency of a trained model: it prefers
// continuing a planted true sequence, with bounded per-step noise. (A
// scorer whose prefix scores say nothing about its continuations admits no
// width-monotonicity — no beam search has that property unconditionally.)
static StepScorer planted_scorer(i64 n_classes, std::vector<i64> truth,
                                 std::uint64_t seed, double noise,
                                 i64 sos = 1) {
  return [n_classes, truth, seed, noise, sos](const std::vector<i64>& prefix) {
    const std::size_t pos = prefix.size() - 1;
    std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
    for (i64 tok : prefix)
      h = h * 1099511628211ULL + static_cast<std::uint64_t>(tok + 3);
    Rng r(h);
    std::vector<double> v(static_cast<std::size_t>(n_classes));
    for (auto& x : v) x = r.gaussian(0.0, noise);
    bool on_truth = pos <= truth.size();
    for (std::size_t i = 0; on_truth && i + 1 < prefix.size(); ++i)
      if (prefix[i + 1] != truth[i]) on_truth = false;
    if (on_truth && pos < truth.size()) v[truth[pos]] += 4.0;
    else v[sos] += 4.0;
    double mx = -kInf;
    for (i64 j = 1; j < n_classes; ++j) mx = std::max(mx, v[j]);
    double z = 0.0;
    for (i64 j = 1; j < n_classes; ++j) z += std::exp(v[j] - mx);
    const double logz = mx + std::log(z);
    for (i64 j = 0; j < n_classes; ++j)
      v[j] = j == 0 ? -1e30 : v[j] - logz;
    return v;
  };
}

TEST_CASE("widening the beam never lowers the best joint score") {
  Rng rng(405);
  DecodeConfig base;
  base.gamma = 0.3;
  base.psi = 0.5;
  for (int rep = 0; rep < 40; ++rep) {
    const i64 t = rng.uniform_int(4, 8);
    const i64 c = 6;
    std::vector<i64> truth(
        static_cast<std::size_t>(rng.uniform_int(1, t - 1)));
    for (auto& y : truth) y = rng.uniform_int(2, c - 1);
    std::vector<double> vals(static_cast<std::size_t>(t * c));
    for (auto& v : vals) v = rng.gaussian(0.0, 0.5);
    for (i64 i = 0; i < t; ++i) {
      const std::size_t k = static_cast<std::size_t>(
          (i * static_cast<i64>(truth.size() + 1)) / t);
      const i64 target = k < truth.size() ? truth[k] : 0;
      vals[i * c + target] += 4.0;
    }
    Tensor lp = log_softmax_rows(Tensor::from_data({t, c}, vals, false));
    StepScorer dec = planted_scorer(c, truth,
                                    7000 + static_cast<std::uint64_t>(rep),
                                    1.0);
    StepScorer lm = planted_scorer(c, truth,
                                   9000 + static_cast<std::uint64_t>(rep),
                                   1.0);
    double prev = -kInf;
    for (i64 width : {1, 2, 4, 8, 20}) {
      DecodeConfig cfg = base;
      cfg.beam = width;
      DecodeResult r = joint_beam_search(lp, dec, lm, cfg);
      CHECK(r.joint >= prev - 1e-12);
      prev = std::max(prev, r.joint);
    }
  }
}

TEST_CASE("joint score recomposes from its components") {
  Rng rng(406);
  DecodeConfig cfg;
  cfg.beam = 4;
  cfg.gamma = 0.25;
  cfg.psi = 0.4;
  const i64 c = 6;
  Tensor lp = random_log_probs(6, c, rng);
  StepScorer dec = fake_scorer(c, 31);
  StepScorer lm = fake_scorer(c, 32);
  DecodeResult r = joint_beam_search(lp, dec, lm, cfg);
  CHECK(r.joint == doctest::Approx((1.0 - cfg.gamma) * r.ctc +
                                   cfg.gamma * r.dec + cfg.psi * r.lm)
                       .epsilon(1e-12));
  CHECK(!r.joint_trace.empty());
}

TEST_CASE("decode configuration defaults and validation") {
  DecodeConfig cfg;
  CHECK(cfg.beam == 20);
  CHECK(cfg.gamma == doctest::Approx(0.1));
  CHECK(cfg.psi == doctest::Approx(0.6));
  CHECK(cfg.max_len_ratio == doctest::Approx(1.0));

  Rng rng(407);
  Tensor lp = random_log_probs(4, 5, rng);
  StepScorer dec = fake_scorer(5, 3);
  DecodeConfig bad = cfg;
  bad.beam = 0;
  CHECK_THROWS_AS(joint_beam_search(lp, dec, dec, bad), std::invalid_argument);
  bad = cfg;
  bad.gamma = 1.5;
  CHECK_THROWS_AS(joint_beam_search(lp, dec, dec, bad), std::invalid_argument);
  bad = cfg;
  bad.psi = -0.1;
  CHECK_THROWS_AS(joint_beam_search(lp, dec, dec, bad), std::invalid_argument);
  CHECK_THROWS_AS(joint_beam_search(lp, {}, {}, cfg), std::invalid_argument);
  DecodeConfig no_lm = cfg;
  no_lm.psi = 0.0;
  CHECK_NOTHROW(joint_beam_search(lp, dec, {}, no_lm));
}

TEST_CASE("unfinishable searches return the best prefix with a flag") {
  Rng rng(408);
  const i64 c = 6;
  Tensor lp = random_log_probs(5, c, rng);
  // A decoder that assigns exactly zero probability to [sos]-as-eos.
  StepScorer dec = [](const std::vector<i64>& prefix) {
    std::vector<double> v(6, std::log(0.2));
    v[0] = -1e30;
    v[1] = -kInf;
    (void)prefix;
    return v;
  };
  DecodeConfig cfg;
  cfg.beam = 2;
  cfg.gamma = 1.0;
  cfg.psi = 0.0;
  DecodeResult r = joint_beam_search(lp, dec, {}, cfg);
  CHECK(r.truncated);
  CHECK(r.tokens.size() == 5);  // ran to the length bound
  GreedyResult greedy = greedy_attention_decode(dec, c, 5);
  CHECK(greedy.truncated);
  CHECK(r.tokens == greedy.tokens);
}

TEST_CASE("decoding is deterministic") {
  Rng rng(409);
  const i64 c = 6;
  Tensor lp = random_log_probs(7, c, rng);
  StepScorer dec = fake_scorer(c, 51);
  StepScorer lm = fake_scorer(c, 52);
  DecodeConfig cfg;
  cfg.beam = 6;
  DecodeResult a = joint_beam_search(lp, dec, lm, cfg);
  DecodeResult b = joint_beam_search(lp, dec, lm, cfg);
  CHECK(a.tokens == b.tokens);
  CHECK(a.joint == b.joint);
  CHECK(a.ctc == b.ctc);
  CHECK(a.dec == b.dec);
  CHECK(a.lm == b.lm);
  CHECK(a.joint_trace == b.joint_trace);
}

TEST_CASE("model adapters drive the search end to end") {
  ModelConfig cfg;
  cfg.d_a = 16;
  cfg.d_k = 16;
  cfg.d_ff = 32;
  cfg.h = 2;
  cfg.conv_kernel = 3;
  cfg.K = 4;
  cfg.d_l = 8;
  cfg.n_update = 1;
  cfg.n_predictor = 1;
  cfg.n_decoder = 1;
  cfg.d_v = 6;
  cfg.audio_bins = 9;
  cfg.dec_max_len = 16;
  cfg.lm_d = 8;
  cfg.lm_ff = 16;
  cfg.lm_h = 2;
  cfg.lm_blocks = 1;
  cfg.lm_max_len = 16;
  const Vocabulary vocab = cfg.vocabulary();
  const i64 c = vocab.size();

  ParamStore params;
  Rng rng(777);
  AsrModel asr(cfg);
  asr.declare(params, rng);
  CharLM lm(cfg, vocab);
  lm.declare(params, rng);

  Rng noise(11);
  Tensor spec = Tensor::randn({20, cfg.audio_bins}, noise);
  Tensor memory = asr.encode(params, spec);
  Tensor ctc_lp = asr.ctc_log_probs(params, memory);
  REQUIRE(ctc_lp.dim(1) == c);

  DecodeConfig dc;
  dc.beam = 3;
  dc.gamma = 0.2;
  dc.psi = 0.3;
  DecodeResult r = joint_beam_search(
      ctc_lp, make_decoder_scorer(params, asr.decoder(), memory),
      make_lm_scorer(params, lm), dc);
  CHECK(std::isfinite(r.joint));
  for (i64 tok : r.tokens) {
    CHECK(tok >= 2);
    CHECK(tok < c);
  }
}
