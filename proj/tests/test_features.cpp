// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "doctest.h"
#include "punet/corpus.hpp"
#include "punet/features.hpp"

using namespace punet;

namespace {

std::vector<double> sine(double freq_hz, double seconds, i64 rate,
                         double amp = 1.0) {
  std::vector<double> w(static_cast<i64>(seconds * rate));
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = amp * std::sin(2.0 * std::numbers::pi * freq_hz *
                          static_cast<double>(i) / static_cast<double>(rate));
  return w;
}

double kurtosis(const std::vector<double>& w) {
  double m = 0.0;
  for (double v : w) m += v;
  m /= static_cast<double>(w.size());
  double m2 = 0.0, m4 = 0.0;
  for (double v : w) {
    const double d = v - m;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m2 /= static_cast<double>(w.size());
  m4 /= static_cast<double>(w.size());
  return m4 / (m2 * m2);
}

CorpusConfig tiny_corpus_cfg() {
  CorpusConfig cfg;
  cfg.train_count = 12;
  cfg.dev_count = 4;
  cfg.test_count = 4;
  return cfg;
}

}  // namespace

TEST_CASE("paper-scale stft geometry: 1 s at 16 kHz -> 100 x 321") {
  StftConfig cfg;
  cfg.sample_rate = 16000;
  CHECK(cfg.window_samples() == 640);
  CHECK(cfg.hop_samples() == 160);
  CHECK(cfg.n_bins() == 321);
  CHECK(cfg.bin_spacing_hz() == 25.0);
  Spectrogram spec = stft(sine(440.0, 1.0, 16000), cfg);
  CHECK(spec.frames == 100);
  CHECK(spec.bins == 321);
}

TEST_CASE("desk-scale stft geometry keeps the 25 Hz grid") {
  StftConfig cfg;  // defaults: 3.2 kHz
  CHECK(cfg.window_samples() == 128);
  CHECK(cfg.hop_samples() == 32);
  CHECK(cfg.n_bins() == 65);
  CHECK(cfg.bin_spacing_hz() == 25.0);
}

TEST_CASE("zero waveform sits at the log floor everywhere") {
  StftConfig cfg;
  Spectrogram spec = stft(std::vector<double>(3200, 0.0), cfg);
  const double floor_db = std::log(1e-10);
  for (double v : spec.values) CHECK(v == floor_db);
}

TEST_CASE("empty waveform is rejected") {
  CHECK_THROWS_AS(stft({}, StftConfig{}), std::runtime_error);
}

TEST_CASE("pure sine at an exact bin peaks in that bin in interior frames") {
  StftConfig cfg;
  const i64 bin = 20;  // 500 Hz
  Spectrogram spec = stft(sine(bin * 25.0, 1.0, cfg.sample_rate), cfg);
  REQUIRE(spec.frames == 100);
  for (i64 t = 3; t < spec.frames - 3; ++t) {
    i64 argmax = 0;
    for (i64 f = 1; f < spec.bins; ++f)
      if (spec.at(t, f) > spec.at(t, argmax)) argmax = f;
    CHECK(argmax == bin);
  }
}

TEST_CASE("spec_augment with zero-width masks is the identity") {
  StftConfig scfg;
  Spectrogram spec = stft(sine(500.0, 0.5, scfg.sample_rate), scfg);
  SpecAugmentConfig cfg;
  cfg.max_time_mask = 0;
  cfg.max_freq_mask = 0;
  cfg.max_warp = 0;
  Rng rng(5);
  Spectrogram out = spec_augment(spec, cfg, rng);
  CHECK(out.values == spec.values);
}

TEST_CASE("spec_augment time masks touch at most 80 of 100 frames") {
  StftConfig scfg;
  Spectrogram spec = stft(sine(500.0, 1.0, scfg.sample_rate), scfg);
  SpecAugmentConfig cfg;
  cfg.max_freq_mask = 0;  // isolate the time masks
  cfg.max_warp = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    Spectrogram out = spec_augment(spec, cfg, rng);
    i64 changed = 0;
    for (i64 t = 0; t < spec.frames; ++t) {
      bool differs = false;
      for (i64 f = 0; f < spec.bins; ++f)
        if (out.at(t, f) != spec.at(t, f)) differs = true;
      changed += differs ? 1 : 0;
    }
    CHECK(changed <= 80);
  }
}

TEST_CASE("spec_augment is deterministic for a fixed seed") {
  StftConfig scfg;
  Spectrogram spec = stft(sine(700.0, 0.8, scfg.sample_rate), scfg);
  SpecAugmentConfig cfg;
  Rng a(99), b(99);
  CHECK(spec_augment(spec, cfg, a).values == spec_augment(spec, cfg, b).values);
}

TEST_CASE("spec_augment masked cells take the utterance mean") {
  StftConfig scfg;
  Spectrogram spec = stft(sine(500.0, 1.0, scfg.sample_rate), scfg);
  double mean = 0.0;
  for (double v : spec.values) mean += v;
  mean /= static_cast<double>(spec.values.size());
  SpecAugmentConfig cfg;
  cfg.max_warp = 0;  // keep the pre-mask mean equal to the input mean
  Rng rng(7);
  Spectrogram out = spec_augment(spec, cfg, rng);
  std::set<double> masked_values;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    if (out.values[i] != spec.values[i]) masked_values.insert(out.values[i]);
  REQUIRE(!masked_values.empty());
  CHECK(masked_values.size() == 1);
  CHECK(*masked_values.begin() == doctest::Approx(mean));
}

TEST_CASE("mix_at_snr: 0 dB equalizes powers, 20 dB is 1/100") {
  Rng rng(3);
  std::vector<double> clean = sine(500.0, 0.5, 3200);
  std::vector<double> noise(clean.size());
  for (double& v : noise) v = rng.gaussian();

  auto mixed0 = mix_at_snr(clean, noise, 0.0);
  std::vector<double> part(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) part[i] = mixed0[i] - clean[i];
  CHECK(waveform_power(part) ==
        doctest::Approx(waveform_power(clean)).epsilon(1e-9));

  auto mixed20 = mix_at_snr(clean, noise, 20.0);
  for (std::size_t i = 0; i < clean.size(); ++i)
    part[i] = mixed20[i] - clean[i];
  CHECK(waveform_power(part) ==
        doctest::Approx(waveform_power(clean) / 100.0).epsilon(1e-9));
}

TEST_CASE("the no-noise sentinel passes clean through untouched") {
  std::vector<double> clean = sine(300.0, 0.2, 3200);
  std::vector<double> noise(clean.size(), 0.5);
  CHECK(mix_at_snr(clean, noise, std::nullopt) == clean);
}

TEST_CASE("mix_at_snr rejects a silent clean signal") {
  std::vector<double> silent(100, 0.0), noise(100, 1.0);
  CHECK_THROWS_AS(mix_at_snr(silent, noise, 10.0), std::runtime_error);
}

TEST_CASE("mix_at_snr tiles short noise") {
  std::vector<double> clean = sine(400.0, 0.5, 3200);
  std::vector<double> noise = {1.0, -1.0};  // much shorter than clean
  auto mixed = mix_at_snr(clean, noise, 0.0);
  CHECK(mixed.size() == clean.size());
}

TEST_CASE("mix_at_snr is scale-equivariant in clean") {
  Rng rng(17);
  std::vector<double> clean = sine(600.0, 0.3, 3200);
  std::vector<double> noise(clean.size());
  for (double& v : noise) v = rng.gaussian();
  const double c = 3.5;
  std::vector<double> scaled(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) scaled[i] = c * clean[i];

  auto base = mix_at_snr(clean, noise, 5.0);
  auto big = mix_at_snr(scaled, noise, 5.0);
  // noise component scales by |c| too, so SNR is preserved
  for (std::size_t i = 0; i < clean.size(); ++i)
    CHECK(big[i] - scaled[i] ==
          doctest::Approx(c * (base[i] - clean[i])).epsilon(1e-12));
}

TEST_CASE("make_babble normalizes to unit RMS and is reproducible") {
  Corpus corpus = synth_corpus(tiny_corpus_cfg());
  std::vector<const std::vector<double>*> pool;
  for (const auto& u : corpus.train) pool.push_back(&u.wave);

  Rng a(11), b(11);
  auto w1 = make_babble(pool, 4, a);
  auto w2 = make_babble(pool, 4, b);
  CHECK(w1 == w2);
  CHECK(std::sqrt(waveform_power(w1)) == doctest::Approx(1.0).epsilon(1e-9));

  CHECK_THROWS_AS(make_babble({}, 4, a), std::runtime_error);
  CHECK_THROWS_AS(make_babble(pool, 1, a), std::runtime_error);
}

TEST_CASE("babble from more speakers has lower kurtosis") {
  CorpusConfig cfg = tiny_corpus_cfg();
  cfg.train_count = 40;
  Corpus corpus = synth_corpus(cfg);
  std::vector<const std::vector<double>*> pool;
  for (const auto& u : corpus.train) pool.push_back(&u.wave);

  double kurt2 = 0.0, kurt8 = 0.0;
  const int trials = 30;
  for (int i = 0; i < trials; ++i) {
    Rng r2(100 + i), r8(200 + i);
    kurt2 += kurtosis(make_babble(pool, 2, r2));
    kurt8 += kurtosis(make_babble(pool, 8, r8));
  }
  CHECK(kurt2 / trials > kurt8 / trials);
}

TEST_CASE("corpus: deterministic and pure per (split, index)") {
  CorpusConfig cfg = tiny_corpus_cfg();
  CorpusMeta meta = make_corpus_meta(cfg);
  Utterance a = synth_utterance(meta, "train", 3);
  Utterance b = synth_utterance(meta, "train", 3);
  CHECK(a.wave == b.wave);
  CHECK(a.visual.values == b.visual.values);
  CHECK(a.text == b.text);
  Utterance c = synth_utterance(meta, "train", 4);
  CHECK(a.wave != c.wave);
}

TEST_CASE("corpus: characters in one viseme group share visual templates") {
  CorpusMeta meta = make_corpus_meta(tiny_corpus_cfg());
  const Vocabulary& v = meta.vocab;
  const VisemeMap& vm = meta.visemes;
  CHECK(vm.viseme_of[v.id("b")] == vm.viseme_of[v.id("p")]);
  CHECK(vm.viseme_of[v.id("b")] == vm.viseme_of[v.id("m")]);
  CHECK(vm.viseme_of[v.id("d")] == vm.viseme_of[v.id("t")]);
  CHECK(vm.viseme_of[v.id("d")] == vm.viseme_of[v.id("n")]);
  CHECK(vm.viseme_of[v.id("b")] != vm.viseme_of[v.id("d")]);
  CHECK(vm.viseme_of[v.id("a")] != vm.viseme_of[v.id("e")]);
  CHECK(vm.max_fan_in() >= 3);
}

TEST_CASE("corpus: audio partial bins are disjoint across characters") {
  CorpusMeta meta = make_corpus_meta(tiny_corpus_cfg());
  std::set<i64> seen;
  for (i64 id = 0; id < meta.vocab.size(); ++id)
    for (i64 b : meta.char_bins[id]) {
      CHECK(seen.insert(b).second);  // never reused
      CHECK(b * 25.0 >= meta.cfg.freq_lo_hz);
      CHECK(b * 25.0 <= meta.cfg.freq_hi_hz);
    }
}

TEST_CASE("corpus: visual frame t carries the viseme active at t+lead") {
  CorpusConfig cfg = tiny_corpus_cfg();
  CorpusMeta meta = make_corpus_meta(cfg);
  Utterance utt = synth_utterance(meta, "dev", 1);
  const i64 T = utt.visual.frames;
  REQUIRE(T == static_cast<i64>(utt.frame_char.size()));
  // Subtract the known noise-free template of the led character: what is
  // left must be white noise, i.e. far closer than to any other template.
  for (i64 t = 0; t < T; ++t) {
    const i64 src = std::min(t + cfg.visual_lead, T - 1);
    const i64 want = meta.visemes.viseme_of[utt.frame_char[src]];
    i64 best = -1;
    double best_d = 1e300;
    for (i64 v = 0; v < meta.visemes.viseme_count; ++v) {
      double d = 0.0;
      for (i64 k = 0; k < cfg.d_v; ++k) {
        const double diff = utt.visual.at(t, k) - meta.viseme_templates[v][k];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = v;
      }
    }
    CHECK(best == want);
  }
}

TEST_CASE("corpus: lead must stay below the minimum character duration") {
  CorpusConfig cfg = tiny_corpus_cfg();
  cfg.visual_lead = cfg.min_char_frames;
  CHECK_THROWS_AS(make_corpus_meta(cfg), std::runtime_error);
}

TEST_CASE("corpus: mean utterance length lands in 20-60 subsampled frames") {
  CorpusConfig cfg;
  cfg.train_count = 200;
  cfg.dev_count = 0;
  cfg.test_count = 0;
  Corpus corpus = synth_corpus(cfg);
  double mean = 0.0;
  for (const auto& u : corpus.train) mean += u.visual.frames;
  mean /= static_cast<double>(corpus.train.size());
  CHECK(mean > 20.0);
  CHECK(mean < 60.0);
}

TEST_CASE("corpus: waveform length aligns stft frames with visual frames") {
  CorpusConfig cfg = tiny_corpus_cfg();
  Corpus corpus = synth_corpus(cfg);
  for (const auto& u : corpus.train) {
    Spectrogram spec = stft(u.wave, cfg.stft);
    CHECK(spec.frames == 4 * u.visual.frames);
    CHECK((spec.frames + 3) / 4 == u.visual.frames);
  }
}

TEST_CASE("corpus round trip through disk is exact") {
  namespace fs = std::filesystem;
  const std::string dir = "/tmp/punet_corpus_test";
  fs::remove_all(dir);

  Corpus corpus = synth_corpus(tiny_corpus_cfg());
  save_corpus(corpus, dir);
  Corpus back = load_corpus(dir + "/manifest.tsv");

  REQUIRE(back.train.size() == corpus.train.size());
  REQUIRE(back.dev.size() == corpus.dev.size());
  REQUIRE(back.test.size() == corpus.test.size());
  for (std::size_t i = 0; i < corpus.train.size(); ++i) {
    CHECK(back.train[i].wave == corpus.train[i].wave);
    CHECK(back.train[i].visual.values == corpus.train[i].visual.values);
    CHECK(back.train[i].target == corpus.train[i].target);
    CHECK(back.train[i].frame_char == corpus.train[i].frame_char);
    CHECK(back.train[i].text == corpus.train[i].text);
    CHECK(back.train[i].id == corpus.train[i].id);
  }
  CHECK(back.meta.char_bins == corpus.meta.char_bins);
  CHECK(back.meta.viseme_templates == corpus.meta.viseme_templates);
  CHECK(back.meta.cfg.seed == corpus.meta.cfg.seed);
  fs::remove_all(dir);
}

TEST_CASE("vocabulary: toy has 12 tokens, paper has 40") {
  CHECK(Vocabulary::toy().size() == 12);
  CHECK(Vocabulary::paper().size() == 40);
  Vocabulary v = Vocabulary::toy();
  CHECK(v.token(v.blank()) == "[blank]");
  CHECK(v.token(v.sos()) == "[sos]");
  CHECK(v.decode(v.encode("bat mop")) == "bat mop");
  CHECK_THROWS_AS(v.id("z"), std::runtime_error);
  CHECK(Vocabulary::paper().prime() >= 0);
  CHECK(v.prime() == -1);
}
