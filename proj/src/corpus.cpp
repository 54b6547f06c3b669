// SPDX-License-Identifier: Apache-2.0
#include "punet/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "punet/checkpoint.hpp"

namespace punet {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("corpus: " + msg);
}

void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

void validate(const CorpusConfig& cfg) {
  require(cfg.visual_lead < cfg.min_char_frames,
          "visual lead " + std::to_string(cfg.visual_lead) +
              " must stay below the minimum character duration " +
              std::to_string(cfg.min_char_frames));
  require(cfg.silence_frames >= cfg.visual_lead + 1,
          "silence padding must cover the visual lead");
  require(cfg.min_char_frames >= 1 &&
              cfg.max_char_frames >= cfg.min_char_frames,
          "bad character duration range");
  require(cfg.partials >= 1, "need at least one partial per character");
  require(cfg.stft.window_samples() % 2 == 0, "odd analysis window");
}

i64 split_code(const std::string& split) {
  if (split == "train") return 1;
  if (split == "dev") return 2;
  if (split == "test") return 3;
  fail("unknown split " + split);
}

std::uint64_t utt_seed(const CorpusConfig& cfg, const std::string& split,
                       i64 index) {
  return mix_seed(cfg.seed ^ mix_seed(static_cast<std::uint64_t>(
                      split_code(split) * 1000003 + index)));
}

const std::vector<std::string> kConsonants = {"b", "d", "m", "n", "p", "t"};
const std::vector<std::string> kVowels = {"a", "e", "o"};

}  // namespace

const std::vector<Utterance>& Corpus::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  fail("unknown split " + name);
}

CorpusMeta make_corpus_meta(const CorpusConfig& cfg) {
  validate(cfg);
  CorpusMeta meta;
  meta.cfg = cfg;
  meta.vocab = Vocabulary::toy();
  meta.visemes = VisemeMap::toy(meta.vocab);
  require(meta.visemes.max_fan_in() >= 2, "viseme map must be ambiguous");

  Rng rng = Rng(cfg.seed).derive(0);

  // Disjoint partial bins per character, on the 25 Hz analysis grid inside
  // [freq_lo, freq_hi]. Disjointness keeps characters separable from clean
  // audio; babble noise overlaps everything.
  const double spacing = cfg.stft.bin_spacing_hz();
  const i64 lo_bin = static_cast<i64>(std::ceil(cfg.freq_lo_hz / spacing));
  const i64 hi_bin = static_cast<i64>(std::floor(cfg.freq_hi_hz / spacing));
  std::vector<i64> bins;
  for (i64 b = lo_bin; b <= hi_bin; ++b) bins.push_back(b);

  std::vector<i64> letters;
  for (i64 id = 0; id < meta.vocab.size(); ++id)
    if (id > meta.vocab.space()) letters.push_back(id);
  require(static_cast<i64>(bins.size()) >=
              static_cast<i64>(letters.size()) * cfg.partials,
          "frequency band too narrow for disjoint character templates");

  // Fisher-Yates driven by the corpus seed.
  for (i64 i = static_cast<i64>(bins.size()) - 1; i > 0; --i)
    std::swap(bins[i], bins[rng.uniform_int(0, i)]);

  meta.char_bins.assign(meta.vocab.size(), {});
  meta.char_amps.assign(meta.vocab.size(), {});
  i64 next = 0;
  for (i64 id : letters) {
    for (i64 p = 0; p < cfg.partials; ++p) {
      meta.char_bins[id].push_back(bins[next++]);
      meta.char_amps[id].push_back(rng.uniform(0.5, 1.0));
    }
  }

  meta.viseme_templates.assign(meta.visemes.viseme_count, {});
  for (i64 v = 0; v < meta.visemes.viseme_count; ++v) {
    meta.viseme_templates[v].resize(cfg.d_v);
    for (double& x : meta.viseme_templates[v]) x = rng.gaussian();
  }
  // Silence template pinned to zero: no lip movement.
  std::fill(meta.viseme_templates[0].begin(), meta.viseme_templates[0].end(),
            0.0);
  return meta;
}

Utterance synth_utterance(const CorpusMeta& meta, const std::string& split,
                          i64 index) {
  const CorpusConfig& cfg = meta.cfg;
  const Vocabulary& vocab = meta.vocab;
  Utterance utt;
  utt.split = split;
  utt.seed = utt_seed(cfg, split, index);
  utt.visual_lead = cfg.visual_lead;
  {
    std::ostringstream os;
    os << split << "-" << std::setfill('0') << std::setw(5) << index;
    utt.id = os.str();
  }
  Rng rng(utt.seed);

  // 1. text: words of consonant-vowel syllables; the CV structure gives a
  //    character LM something real to learn
  const i64 n_words = rng.uniform_int(cfg.min_words, cfg.max_words);
  std::string text;
  for (i64 w = 0; w < n_words; ++w) {
    if (w) text += ' ';
    const i64 n_syll = rng.uniform_int(cfg.min_syllables, cfg.max_syllables);
    for (i64 s = 0; s < n_syll; ++s) {
      text += kConsonants[rng.uniform_int(
          0, static_cast<i64>(kConsonants.size()) - 1)];
      text += kVowels[rng.uniform_int(0, static_cast<i64>(kVowels.size()) - 1)];
    }
  }
  utt.text = text;
  utt.target = vocab.encode(text);

  // 2. frame timeline at the subsampled rate
  struct Segment {
    i64 token;
    i64 frames;
    double amp;
    std::vector<double> phase;
  };
  std::vector<Segment> segments;
  segments.push_back({vocab.space(), cfg.silence_frames, 0.0, {}});
  for (i64 tok : utt.target) {
    Segment seg;
    seg.token = tok;
    seg.frames = rng.uniform_int(cfg.min_char_frames, cfg.max_char_frames);
    seg.amp = rng.uniform(cfg.amp_lo, cfg.amp_hi);
    for (i64 p = 0; p < cfg.partials; ++p)
      seg.phase.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
    segments.push_back(std::move(seg));
  }
  segments.push_back({vocab.space(), cfg.silence_frames, 0.0, {}});

  i64 total_frames = 0;
  for (const auto& s : segments) total_frames += s.frames;
  utt.frame_char.clear();
  for (const auto& s : segments)
    utt.frame_char.insert(utt.frame_char.end(), s.frames, s.token);

  // 3. audio: one subsampled frame spans 4 hops of the analysis front end
  const i64 samples_per_frame = 4 * cfg.stft.hop_samples();
  const i64 n_samples = total_frames * samples_per_frame;
  const double rate = static_cast<double>(cfg.stft.sample_rate);
  const double spacing = cfg.stft.bin_spacing_hz();
  utt.wave.assign(n_samples, 0.0);
  const i64 ramp = cfg.stft.hop_samples();  // fade edges to avoid clicks
  i64 frame0 = 0;
  for (const auto& seg : segments) {
    const i64 s0 = frame0 * samples_per_frame;
    const i64 s1 = (frame0 + seg.frames) * samples_per_frame;
    if (seg.token != vocab.space()) {
      for (i64 p = 0; p < cfg.partials; ++p) {
        const double f = static_cast<double>(meta.char_bins[seg.token][p]) *
                         spacing;
        const double a = seg.amp * meta.char_amps[seg.token][p];
        const double w = 2.0 * std::numbers::pi * f / rate;
        for (i64 s = s0; s < s1; ++s) {
          double env = 1.0;
          if (s - s0 < ramp) env = static_cast<double>(s - s0 + 1) / ramp;
          if (s1 - s <= ramp)
            env = std::min(env, static_cast<double>(s1 - s) / ramp);
          utt.wave[s] += a * env *
                         std::sin(w * static_cast<double>(s) + seg.phase[p]);
        }
      }
    }
    frame0 += seg.frames;
  }
  for (double& v : utt.wave) v += cfg.audio_noise * rng.gaussian();

  // 4. visual: the viseme of the character active visual_lead frames LATER
  //    in the audio stream (lip movement precedes the voice)
  utt.visual.frames = total_frames;
  utt.visual.dim = cfg.d_v;
  utt.visual.values.assign(total_frames * cfg.d_v, 0.0);
  for (i64 t = 0; t < total_frames; ++t) {
    const i64 src = std::min(t + cfg.visual_lead, total_frames - 1);
    const i64 vis = meta.visemes.viseme_of[utt.frame_char[src]];
    for (i64 d = 0; d < cfg.d_v; ++d)
      utt.visual.at(t, d) = meta.viseme_templates[vis][d] +
                            cfg.visual_noise * rng.gaussian();
  }
  return utt;
}

Corpus synth_corpus(const CorpusConfig& cfg) {
  Corpus corpus;
  corpus.meta = make_corpus_meta(cfg);
  auto fill = [&](const std::string& split, i64 count,
                  std::vector<Utterance>& out) {
    out.reserve(count);
    for (i64 i = 0; i < count; ++i)
      out.push_back(synth_utterance(corpus.meta, split, i));
  };
  fill("train", cfg.train_count, corpus.train);
  fill("dev", cfg.dev_count, corpus.dev);
  fill("test", cfg.test_count, corpus.test);
  return corpus;
}

// ---- persistence ----

namespace {

void put_meta(Checkpoint& ck, const CorpusMeta& meta) {
  const CorpusConfig& c = meta.cfg;
  ck.put_i64("cfg/counts", {3}, {c.train_count, c.dev_count, c.test_count});
  ck.put_i64("cfg/words", {2}, {c.min_words, c.max_words});
  ck.put_i64("cfg/syllables", {2}, {c.min_syllables, c.max_syllables});
  ck.put_i64("cfg/char_frames", {2}, {c.min_char_frames, c.max_char_frames});
  ck.put_int("cfg/silence_frames", c.silence_frames);
  ck.put_int("cfg/visual_lead", c.visual_lead);
  ck.put_int("cfg/d_v", c.d_v);
  ck.put_scalar("cfg/visual_noise", c.visual_noise);
  ck.put_scalar("cfg/audio_noise", c.audio_noise);
  ck.put_int("cfg/partials", c.partials);
  ck.put_f64("cfg/freq_range", {2}, {c.freq_lo_hz, c.freq_hi_hz});
  ck.put_f64("cfg/amp_range", {2}, {c.amp_lo, c.amp_hi});
  ck.put_i64("cfg/stft", {3},
             {c.stft.sample_rate, c.stft.window_ms, c.stft.hop_ms});
  ck.put_scalar("cfg/log_floor", c.stft.log_floor);
  ck.put_int("cfg/seed", static_cast<i64>(c.seed));

  const i64 C = meta.vocab.size();
  std::vector<i64> bins(C * c.partials, -1);
  std::vector<double> amps(C * c.partials, 0.0);
  for (i64 id = 0; id < C; ++id)
    for (std::size_t p = 0; p < meta.char_bins[id].size(); ++p) {
      bins[id * c.partials + static_cast<i64>(p)] = meta.char_bins[id][p];
      amps[id * c.partials + static_cast<i64>(p)] = meta.char_amps[id][p];
    }
  ck.put_i64("char_bins", {C, c.partials}, std::move(bins));
  ck.put_f64("char_amps", {C, c.partials}, std::move(amps));
  ck.put_i64("viseme_of", {C}, meta.visemes.viseme_of);

  const i64 V = meta.visemes.viseme_count;
  std::vector<double> tpl(V * c.d_v);
  for (i64 v = 0; v < V; ++v)
    for (i64 d = 0; d < c.d_v; ++d)
      tpl[v * c.d_v + d] = meta.viseme_templates[v][d];
  ck.put_f64("viseme_templates", {V, c.d_v}, std::move(tpl));
}

CorpusMeta get_meta(const Checkpoint& ck) {
  CorpusMeta meta;
  CorpusConfig& c = meta.cfg;
  const auto& counts = ck.i64s("cfg/counts");
  c.train_count = counts[0];
  c.dev_count = counts[1];
  c.test_count = counts[2];
  c.min_words = ck.i64s("cfg/words")[0];
  c.max_words = ck.i64s("cfg/words")[1];
  c.min_syllables = ck.i64s("cfg/syllables")[0];
  c.max_syllables = ck.i64s("cfg/syllables")[1];
  c.min_char_frames = ck.i64s("cfg/char_frames")[0];
  c.max_char_frames = ck.i64s("cfg/char_frames")[1];
  c.silence_frames = ck.integer("cfg/silence_frames");
  c.visual_lead = ck.integer("cfg/visual_lead");
  c.d_v = ck.integer("cfg/d_v");
  c.visual_noise = ck.scalar("cfg/visual_noise");
  c.audio_noise = ck.scalar("cfg/audio_noise");
  c.partials = ck.integer("cfg/partials");
  c.freq_lo_hz = ck.f64("cfg/freq_range")[0];
  c.freq_hi_hz = ck.f64("cfg/freq_range")[1];
  c.amp_lo = ck.f64("cfg/amp_range")[0];
  c.amp_hi = ck.f64("cfg/amp_range")[1];
  c.stft.sample_rate = ck.i64s("cfg/stft")[0];
  c.stft.window_ms = ck.i64s("cfg/stft")[1];
  c.stft.hop_ms = ck.i64s("cfg/stft")[2];
  c.stft.log_floor = ck.scalar("cfg/log_floor");
  c.seed = static_cast<std::uint64_t>(ck.integer("cfg/seed"));

  meta.vocab = Vocabulary::toy();
  const i64 C = meta.vocab.size();
  meta.visemes.viseme_of = ck.i64s("viseme_of");
  meta.visemes.viseme_count =
      1 + *std::max_element(meta.visemes.viseme_of.begin(),
                            meta.visemes.viseme_of.end());
  const auto& bins = ck.i64s("char_bins");
  const auto& amps = ck.f64("char_amps");
  meta.char_bins.assign(C, {});
  meta.char_amps.assign(C, {});
  for (i64 id = 0; id < C; ++id)
    for (i64 p = 0; p < c.partials; ++p) {
      if (bins[id * c.partials + p] < 0) continue;
      meta.char_bins[id].push_back(bins[id * c.partials + p]);
      meta.char_amps[id].push_back(amps[id * c.partials + p]);
    }
  const auto& tpl = ck.f64("viseme_templates");
  meta.viseme_templates.assign(meta.visemes.viseme_count, {});
  for (i64 v = 0; v < meta.visemes.viseme_count; ++v) {
    meta.viseme_templates[v].assign(tpl.begin() + v * c.d_v,
                                    tpl.begin() + (v + 1) * c.d_v);
  }
  return meta;
}

}  // namespace

void save_utterance(const Utterance& utt, const std::string& path) {
  Checkpoint ck;
  ck.put_f64("wave", {static_cast<i64>(utt.wave.size())}, utt.wave);
  ck.put_f64("visual", {utt.visual.frames, utt.visual.dim},
             utt.visual.values);
  ck.put_i64("target", {static_cast<i64>(utt.target.size())}, utt.target);
  ck.put_i64("frame_char", {static_cast<i64>(utt.frame_char.size())},
             utt.frame_char);
  ck.put_int("visual_lead", utt.visual_lead);
  ck.put_int("seed", static_cast<i64>(utt.seed));
  ck.save(path);
}

Utterance load_utterance(const std::string& path, const Vocabulary& vocab) {
  Checkpoint ck = Checkpoint::load(path);
  Utterance utt;
  utt.wave = ck.f64("wave");
  const auto& vshape = ck.entry("visual").shape;
  utt.visual.frames = vshape[0];
  utt.visual.dim = vshape[1];
  utt.visual.values = ck.f64("visual");
  utt.target = ck.i64s("target");
  utt.frame_char = ck.i64s("frame_char");
  utt.visual_lead = ck.integer("visual_lead");
  utt.seed = static_cast<std::uint64_t>(ck.integer("seed"));
  utt.text = vocab.decode(utt.target);
  return utt;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "utt");

  Checkpoint meta_ck;
  put_meta(meta_ck, corpus.meta);
  meta_ck.save((fs::path(dir) / "meta.bin").string());

  std::ofstream manifest(fs::path(dir) / "manifest.tsv");
  require(bool(manifest), "cannot write manifest in " + dir);
  manifest << "# punet-corpus v1\n";
  auto emit = [&](const std::vector<Utterance>& utts) {
    for (const Utterance& u : utts) {
      const std::string rel = "utt/" + u.id + ".bin";
      save_utterance(u, (fs::path(dir) / rel).string());
      manifest << u.id << '\t' << u.split << '\t' << u.visual_lead << '\t'
               << u.seed << '\t' << rel << '\t' << u.text << '\n';
    }
  };
  emit(corpus.train);
  emit(corpus.dev);
  emit(corpus.test);
  require(bool(manifest), "manifest write failed in " + dir);
}

Corpus load_corpus(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(manifest_path).parent_path();
  std::ifstream manifest(manifest_path);
  require(bool(manifest), "cannot open " + manifest_path);

  Corpus corpus;
  corpus.meta = get_meta(Checkpoint::load((dir / "meta.bin").string()));

  std::string line;
  std::getline(manifest, line);
  require(line == "# punet-corpus v1",
          manifest_path + ": unrecognized manifest header");
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, split, lead, seed, rel, text;
    std::getline(row, id, '\t');
    std::getline(row, split, '\t');
    std::getline(row, lead, '\t');
    std::getline(row, seed, '\t');
    std::getline(row, rel, '\t');
    std::getline(row, text);
    require(!rel.empty(), manifest_path + ": malformed row '" + line + "'");
    Utterance utt = load_utterance((dir / rel).string(), corpus.meta.vocab);
    utt.id = id;
    utt.split = split;
    if (split == "train")
      corpus.train.push_back(std::move(utt));
    else if (split == "dev")
      corpus.dev.push_back(std::move(utt));
    else if (split == "test")
      corpus.test.push_back(std::move(utt));
    else
      fail(manifest_path + ": unknown split " + split);
  }
  return corpus;
}

}  // namespace punet
