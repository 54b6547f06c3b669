// SPDX-License-Identifier: Apache-2.0
#include "punet/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace punet {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = a > b ? a : b;
  return m + std::log1p(std::exp(-(std::abs(a - b))));
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("decoding: " + msg);
}

}  // namespace

CtcPrefixScorer::CtcPrefixScorer(const Tensor& log_probs, i64 blank)
    : t_(log_probs.dim(0)), c_(log_probs.dim(1)), blank_(blank) {
  require(log_probs.shape().size() == 2, "log-prob matrix must be rank 2");
  require(blank >= 0 && blank < c_, "blank id out of range");
  lp_.assign(log_probs.data(), log_probs.data() + t_ * c_);
}

CtcPrefixScorer::State CtcPrefixScorer::initial() const {
  State s;
  s.r_nb.assign(t_ + 1, kNegInf);
  s.r_b.assign(t_ + 1, kNegInf);
  s.r_b[0] = 0.0;
  for (i64 t = 1; t <= t_; ++t)
    s.r_b[t] = s.r_b[t - 1] + lp_[(t - 1) * c_ + blank_];
  s.score = 0.0;
  s.last = -1;
  return s;
}

CtcPrefixScorer::State CtcPrefixScorer::extend(const State& s, i64 c) const {
  require(c >= 0 && c < c_ && c != blank_,
          "extension token must be a non-blank class id");
  State n;
  n.r_nb.assign(t_ + 1, kNegInf);
  n.r_b.assign(t_ + 1, kNegInf);
  n.last = c;
  double psi = kNegInf;
  for (i64 t = 1; t <= t_; ++t) {
    // Mass that has emitted exactly the old prefix by frame t-1 and may
    // now start c: after a repeat a separating blank is required.
    const double phi = (c == s.last) ? s.r_b[t - 1]
                                     : lse(s.r_b[t - 1], s.r_nb[t - 1]);
    const double lc = lp_[(t - 1) * c_ + c];
    n.r_nb[t] = lse(phi, n.r_nb[t - 1]) + lc;
    n.r_b[t] = lse(n.r_b[t - 1], n.r_nb[t - 1]) + lp_[(t - 1) * c_ + blank_];
    psi = lse(psi, phi + lc);
  }
  n.score = psi;
  return n;
}

double CtcPrefixScorer::complete(const State& s) const {
  return lse(s.r_nb[t_], s.r_b[t_]);
}

CtcPrefixScorer::State CtcPrefixScorer::score_prefix(
    const std::vector<i64>& prefix) const {
  State s = initial();
  for (i64 c : prefix) s = extend(s, c);
  return s;
}

void DecodeConfig::validate() const {
  require(beam >= 1, "beam width must be at least 1");
  require(gamma >= 0.0 && gamma <= 1.0, "gamma must lie in [0, 1]");
  require(psi >= 0.0, "psi must be non-negative");
  require(max_len_ratio > 0.0, "max length ratio must be positive");
}

namespace {

// joint = (1-gamma)*ctc + gamma*dec + psi*lm with zero-weight terms dropped.
double joint_score(const DecodeConfig& cfg, double ctc, double dec, double lm) {
  double j = 0.0;
  if (cfg.gamma < 1.0) j += (1.0 - cfg.gamma) * ctc;
  if (cfg.gamma > 0.0) j += cfg.gamma * dec;
  if (cfg.psi > 0.0) j += cfg.psi * lm;
  return j;
}

// Rank: higher joint first, exact ties by lexicographic token order.
bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.joint != b.joint) return a.joint > b.joint;
  return std::lexicographical_compare(a.tokens.begin(), a.tokens.end(),
                                      b.tokens.begin(), b.tokens.end());
}

DecodeResult to_result(const Hypothesis& h, i64 sos, bool truncated) {
  DecodeResult r;
  r.tokens.assign(h.tokens.begin() + 1, h.tokens.end());
  if (h.finished && !r.tokens.empty() && r.tokens.back() == sos)
    r.tokens.pop_back();
  r.joint = h.joint;
  r.ctc = h.ctc;
  r.dec = h.dec;
  r.lm = h.lm;
  r.truncated = truncated;
  return r;
}

}  // namespace

DecodeResult joint_beam_search(const Tensor& ctc_log_probs,
                               const StepScorer& decoder, const StepScorer& lm,
                               const DecodeConfig& cfg, i64 blank, i64 sos) {
  cfg.validate();
  require(cfg.gamma == 0.0 || static_cast<bool>(decoder),
          "decoder scorer required when gamma > 0");
  require(cfg.psi == 0.0 || static_cast<bool>(lm),
          "language model scorer required when psi > 0");
  CtcPrefixScorer scorer(ctc_log_probs, blank);
  const i64 t = scorer.frames();
  const i64 c_count = scorer.classes();
  require(sos >= 0 && sos < c_count && sos != blank, "sos id out of range");
  const i64 cap =
      std::max<i64>(1, static_cast<i64>(std::floor(cfg.max_len_ratio * t)));

  Hypothesis root;
  root.tokens = {sos};
  root.ctc_state = scorer.initial();
  root.joint = joint_score(cfg, root.ctc_state.score, 0.0, 0.0);
  std::vector<Hypothesis> beam = {root};
  std::vector<double> trace;

  // Finished hypotheses compete for beam slots like any other (this is
  // what collapses beam=1 to greedy decoding), but once one has earned a
  // slot it is also remembered here, so a transiently crowded beam cannot
  // lose an already-found completion.
  bool have_pooled = false;
  Hypothesis best_pooled;
  bool have_truncated = false;
  Hypothesis best_truncated;

  for (i64 round = 0; round <= cap; ++round) {
    if (beam.front().finished) break;
    std::vector<Hypothesis> cands;
    for (const Hypothesis& h : beam) {
      if (h.finished) {
        cands.push_back(h);
        continue;
      }
      const i64 len = static_cast<i64>(h.tokens.size()) - 1;
      std::vector<double> dec_lp, lm_lp;
      if (cfg.gamma > 0.0) dec_lp = decoder(h.tokens);
      if (cfg.psi > 0.0) lm_lp = lm(h.tokens);

      // Completion through [sos]-as-eos: the CTC component becomes the
      // complete-sequence score. Impossible completions are not admitted.
      Hypothesis fin = h;
      fin.tokens.push_back(sos);
      fin.finished = true;
      fin.ctc = scorer.complete(h.ctc_state);
      if (cfg.gamma > 0.0) fin.dec = h.dec + dec_lp[sos];
      if (cfg.psi > 0.0) fin.lm = h.lm + lm_lp[sos];
      fin.joint = joint_score(cfg, fin.ctc, fin.dec, fin.lm);
      if (fin.joint > kNegInf) cands.push_back(std::move(fin));

      if (len >= cap) {
        // Length bound reached: the completion above was the last move.
        if (!have_truncated || better(h, best_truncated)) {
          best_truncated = h;
          have_truncated = true;
        }
        continue;
      }
      for (i64 tok = 0; tok < c_count; ++tok) {
        if (tok == blank || tok == sos) continue;
        Hypothesis ext = h;
        ext.tokens.push_back(tok);
        ext.ctc_state = scorer.extend(h.ctc_state, tok);
        ext.ctc = ext.ctc_state.score;
        if (cfg.gamma > 0.0) ext.dec = h.dec + dec_lp[tok];
        if (cfg.psi > 0.0) ext.lm = h.lm + lm_lp[tok];
        ext.joint = joint_score(cfg, ext.ctc, ext.dec, ext.lm);
        cands.push_back(std::move(ext));
      }
    }
    if (cands.empty()) break;
    // A completion enters the pool when fewer than `beam` unfinished
    // candidates outrank it: it would have survived pruning had finished
    // hypotheses not been competing for the same slots. At beam width 1
    // this is exactly the greedy stopping rule.
    std::vector<const Hypothesis*> unfinished;
    for (const Hypothesis& h : cands)
      if (!h.finished) unfinished.push_back(&h);
    std::stable_sort(unfinished.begin(), unfinished.end(),
                     [](const Hypothesis* a, const Hypothesis* b) {
                       return better(*a, *b);
                     });
    const Hypothesis* bar =
        static_cast<i64>(unfinished.size()) >= cfg.beam
            ? unfinished[static_cast<std::size_t>(cfg.beam - 1)]
            : nullptr;
    for (const Hypothesis& h : cands) {
      if (!h.finished) continue;
      if (bar != nullptr && !better(h, *bar)) continue;
      if (!have_pooled || better(h, best_pooled)) {
        best_pooled = h;
        have_pooled = true;
      }
    }
    std::stable_sort(cands.begin(), cands.end(), better);
    if (static_cast<i64>(cands.size()) > cfg.beam)
      cands.resize(static_cast<std::size_t>(cfg.beam));
    beam = std::move(cands);
    trace.push_back(beam.front().joint);
    // Admissible stop: extensions never improve the joint score, so once
    // the pooled completion outranks every live hypothesis nothing can
    // beat it.
    if (have_pooled) {
      bool live_better = false;
      for (const Hypothesis& h : beam)
        if (!h.finished && better(h, best_pooled)) live_better = true;
      if (!live_better) break;
    }
  }

  // The best completion that ever earned a beam slot wins; otherwise report
  // the best unfinished hypothesis with the truncation flag.
  DecodeResult result;
  if (have_pooled) {
    result = to_result(best_pooled, sos, false);
  } else {
    const Hypothesis* best_unf = nullptr;
    for (const Hypothesis& h : beam)
      if (!h.finished && (best_unf == nullptr || better(h, *best_unf)))
        best_unf = &h;
    if (best_unf == nullptr && have_truncated) best_unf = &best_truncated;
    require(best_unf != nullptr, "search exhausted without any hypothesis");
    result = to_result(*best_unf, sos, true);
  }
  result.joint_trace = std::move(trace);
  return result;
}

std::vector<i64> greedy_ctc_decode(const Tensor& log_probs, i64 blank) {
  require(log_probs.shape().size() == 2, "log-prob matrix must be rank 2");
  const i64 t = log_probs.dim(0), c = log_probs.dim(1);
  require(blank >= 0 && blank < c, "blank id out of range");
  std::vector<i64> out;
  i64 prev = -1;
  for (i64 i = 0; i < t; ++i) {
    i64 arg = 0;
    for (i64 j = 1; j < c; ++j)
      if (log_probs.at(i, j) > log_probs.at(i, arg)) arg = j;
    if (arg != prev && arg != blank) out.push_back(arg);
    prev = arg;
  }
  return out;
}

GreedyResult greedy_attention_decode(const StepScorer& decoder, i64 n_classes,
                                     i64 max_len, i64 blank, i64 sos) {
  require(static_cast<bool>(decoder), "decoder scorer required");
  require(max_len >= 1, "max length must be at least 1");
  GreedyResult r;
  std::vector<i64> prefix = {sos};
  for (i64 step = 0; step < max_len; ++step) {
    const std::vector<double> lp = decoder(prefix);
    require(static_cast<i64>(lp.size()) == n_classes,
            "scorer returned wrong class count");
    i64 arg = -1;
    for (i64 j = 0; j < n_classes; ++j) {
      if (j == blank) continue;
      if (arg < 0 || lp[j] > lp[arg]) arg = j;
    }
    r.score += lp[arg];
    if (arg == sos) {
      r.tokens.assign(prefix.begin() + 1, prefix.end());
      return r;
    }
    prefix.push_back(arg);
  }
  // Length bound reached: close the transcript with a forced [sos]-as-eos.
  r.score += decoder(prefix)[sos];
  r.tokens.assign(prefix.begin() + 1, prefix.end());
  r.truncated = true;
  return r;
}

StepScorer make_decoder_scorer(const ParamStore& params,
                               const TransformerDecoder& decoder,
                               const Tensor& memory) {
  return [&params, &decoder, memory](const std::vector<i64>& prefix) {
    return decoder.step(params, memory, prefix);
  };
}

StepScorer make_lm_scorer(const ParamStore& params, const CharLM& lm) {
  return [&params, &lm](const std::vector<i64>& prefix) {
    return lm.score(params, prefix);
  };
}

}  // namespace punet
