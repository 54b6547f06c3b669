// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "punet/features.hpp"
#include "punet/rng.hpp"
#include "punet/vocab.hpp"

namespace punet {

// Synthetic audio-visual corpus. Each character owns a few fixed sinusoid
// partials on the analysis-bin grid (audio), each viseme a fixed template
// vector (video). The visual stream shows the viseme of the character that
// will sound `visual_lead` frames later — lips move before the voice.
struct CorpusConfig {
  i64 train_count = 2000;
  i64 dev_count = 200;
  i64 test_count = 200;

  i64 min_words = 1, max_words = 3;          // words per utterance
  i64 min_syllables = 1, max_syllables = 2;  // CV syllables per word
  i64 min_char_frames = 3, max_char_frames = 6;  // subsampled frames
  i64 silence_frames = 3;                    // leading/trailing silence
  i64 visual_lead = 2;                       // frames, subsampled rate

  i64 d_v = 10;
  double visual_noise = 0.5;
  double audio_noise = 0.01;  // generation-noise RMS on the waveform
  i64 partials = 3;
  double freq_lo_hz = 200.0, freq_hi_hz = 1400.0;
  double amp_lo = 0.6, amp_hi = 1.4;  // per-occurrence loudness range

  StftConfig stft;  // desk scale: 3.2 kHz -> 65 bins at 25 Hz
  std::uint64_t seed = 1234;
};

// Frozen per-corpus draw: partial bins/amplitudes per character, template
// vector per viseme.
struct CorpusMeta {
  CorpusConfig cfg;
  Vocabulary vocab;
  VisemeMap visemes;
  std::vector<std::vector<i64>> char_bins;      // token id -> partial bins
  std::vector<std::vector<double>> char_amps;   // token id -> partial amps
  std::vector<std::vector<double>> viseme_templates;  // viseme id -> d_v
};

struct Utterance {
  std::string id;
  std::string split;
  std::string text;
  std::vector<i64> target;      // encoded text, no [sos]/[blank]
  std::vector<double> wave;
  VisualSequence visual;        // frames at the subsampled audio rate
  std::vector<i64> frame_char;  // active token per subsampled frame
  i64 visual_lead = 0;
  std::uint64_t seed = 0;
};

CorpusMeta make_corpus_meta(const CorpusConfig& cfg);

// Pure given (meta, split, index): the same call always yields the same
// utterance regardless of generation order.
Utterance synth_utterance(const CorpusMeta& meta, const std::string& split,
                          i64 index);

struct Corpus {
  CorpusMeta meta;
  std::vector<Utterance> train, dev, test;

  const std::vector<Utterance>& split(const std::string& name) const;
};

// In-memory generation of all three splits.
Corpus synth_corpus(const CorpusConfig& cfg);

// Directory layout: <dir>/manifest.tsv, <dir>/meta.bin, <dir>/utt/<id>.bin.
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& manifest_path);

void save_utterance(const Utterance& utt, const std::string& path);
Utterance load_utterance(const std::string& path, const Vocabulary& vocab);

}  // namespace punet
