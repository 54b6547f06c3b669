// SPDX-License-Identifier: Apache-2.0
#include "punet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace punet {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("metrics: " + msg);
}

EditStats edit_core(const std::vector<i64>& hyp, const std::vector<i64>& ref) {
  const i64 n = static_cast<i64>(hyp.size());
  const i64 m = static_cast<i64>(ref.size());
  std::vector<i64> d(static_cast<std::size_t>((n + 1) * (m + 1)), 0);
  auto at = [&](i64 i, i64 j) -> i64& { return d[i * (m + 1) + j]; };
  for (i64 i = 0; i <= n; ++i) at(i, 0) = i;
  for (i64 j = 0; j <= m; ++j) at(0, j) = j;
  for (i64 i = 1; i <= n; ++i)
    for (i64 j = 1; j <= m; ++j) {
      const i64 sub = at(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      const i64 ins = at(i - 1, j) + 1;
      const i64 del = at(i, j - 1) + 1;
      at(i, j) = std::min({sub, ins, del});
    }
  EditStats s;
  s.distance = at(n, m);
  // Backtrace, preferring match/substitution, then deletion, then
  // insertion on ties, for a deterministic breakdown.
  i64 i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        at(i, j) == at(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0 : 1)) {
      if (hyp[i - 1] != ref[j - 1]) ++s.substitutions;
      --i;
      --j;
    } else if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
      ++s.deletions;
      --j;
    } else {
      ++s.insertions;
      --i;
    }
  }
  return s;
}

}  // namespace

EditStats edit_distance(const std::vector<i64>& hyp,
                        const std::vector<i64>& ref) {
  return edit_core(hyp, ref);
}

EditStats edit_distance(const std::vector<std::string>& hyp,
                        const std::vector<std::string>& ref) {
  std::map<std::string, i64> intern;
  auto encode = [&intern](const std::vector<std::string>& toks) {
    std::vector<i64> ids;
    ids.reserve(toks.size());
    for (const auto& t : toks) {
      auto it = intern.find(t);
      if (it == intern.end())
        it = intern.emplace(t, static_cast<i64>(intern.size())).first;
      ids.push_back(it->second);
    }
    return ids;
  };
  const std::vector<i64> h = encode(hyp);
  const std::vector<i64> r = encode(ref);
  return edit_core(h, r);
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    if (ch == ' ') {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

double wer(const std::string& hyp, const std::string& ref) {
  const std::vector<std::string> r = split_words(ref);
  require(!r.empty(), "wer: reference has no words");
  const EditStats s = edit_distance(split_words(hyp), r);
  return static_cast<double>(s.distance) / static_cast<double>(r.size());
}

double cer(const std::string& hyp, const std::string& ref) {
  require(!ref.empty(), "cer: reference is empty");
  std::vector<i64> h(hyp.begin(), hyp.end());
  std::vector<i64> r(ref.begin(), ref.end());
  const EditStats s = edit_distance(h, r);
  return static_cast<double>(s.distance) / static_cast<double>(r.size());
}

FrameCosine cosine_frames(const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2,
          "cosine: matrices must be rank 2");
  require(a.dim(0) == b.dim(0) && a.dim(1) == b.dim(1),
          "cosine: shape mismatch");
  const i64 t = a.dim(0), d = a.dim(1);
  FrameCosine out;
  double sum = 0.0;
  for (i64 i = 0; i < t; ++i) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    bool identical = true;
    for (i64 j = 0; j < d; ++j) {
      const double x = a.at(i, j), y = b.at(i, j);
      dot += x * y;
      na += x * x;
      nb += y * y;
      if (x != y) identical = false;
    }
    if (na == 0.0 || nb == 0.0) {
      ++out.frames_skipped;
      continue;
    }
    double theta =
        identical ? 1.0 : dot / (std::sqrt(na) * std::sqrt(nb));
    theta = std::min(1.0, std::max(-1.0, theta));
    sum += theta;
    ++out.frames_used;
  }
  if (out.frames_used > 0) out.mean = sum / out.frames_used;
  return out;
}

SimilarityProfile make_profile(const std::vector<double>& snr_db,
                               const std::vector<std::vector<double>>& values,
                               bool keep_per_utterance) {
  require(snr_db.size() == values.size(),
          "profile: one value row per grid entry required");
  require(std::is_sorted(snr_db.rbegin(), snr_db.rend()),
          "profile: SNR grid must be sorted descending");
  SimilarityProfile p;
  p.snr_db = snr_db;
  for (std::size_t i = 0; i < values.size(); ++i) {
    require(!values[i].empty(), "profile: empty utterance set");
    require(values[i].size() == values[0].size(),
            "profile: ragged utterance sets");
    double sum = 0.0;
    for (double v : values[i]) sum += v;
    p.theta.push_back(sum / static_cast<double>(values[i].size()));
  }
  p.utterances = values.empty() ? 0 : static_cast<i64>(values[0].size());
  if (keep_per_utterance) p.per_utterance = values;
  return p;
}

}  // namespace punet
