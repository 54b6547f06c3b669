// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "punet/tensor.hpp"

namespace punet {

// Unit-cost Levenshtein alignment with an operation breakdown;
// distance = substitutions + insertions + deletions always holds.
struct EditStats {
  i64 distance = 0;
  i64 substitutions = 0;
  i64 insertions = 0;  // hypothesis tokens with no reference counterpart
  i64 deletions = 0;   // reference tokens the hypothesis missed
};

EditStats edit_distance(const std::vector<i64>& hyp,
                        const std::vector<i64>& ref);
EditStats edit_distance(const std::vector<std::string>& hyp,
                        const std::vector<std::string>& ref);

// Splits on the space character; multiple spaces collapse, so punctuation
// stays attached to its word.
std::vector<std::string> split_words(const std::string& text);

// Word error rate: edit distance over space-split words divided by the
// reference word count. Empty references are rejected.
double wer(const std::string& hyp, const std::string& ref);
// Character error rate over every character of the text, spaces included.
double cer(const std::string& hyp, const std::string& ref);

// Row-wise cosine similarity between two equally shaped (T, d)
// representation matrices. Zero-norm rows are skipped and counted;
// bitwise-identical rows score exactly 1.
struct FrameCosine {
  double mean = 0.0;
  i64 frames_used = 0;
  i64 frames_skipped = 0;
};
FrameCosine cosine_frames(const Tensor& a, const Tensor& b);

// Mean cosine similarity per signal-to-noise ratio, averaged over frames
// then utterances; the grid is kept sorted descending.
struct SimilarityProfile {
  std::vector<double> snr_db;
  std::vector<double> theta;             // one mean per grid entry
  i64 utterances = 0;
  std::vector<std::vector<double>> per_utterance;  // [snr][utterance]
};

// Folds per-utterance frame means into a profile; values[i][j] is the
// frame-mean cosine of utterance j at grid entry i.
SimilarityProfile make_profile(const std::vector<double>& snr_db,
                               const std::vector<std::vector<double>>& values,
                               bool keep_per_utterance = false);

}  // namespace punet
