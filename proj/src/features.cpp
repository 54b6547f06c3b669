// SPDX-License-Identifier: Apache-2.0
#include "punet/features.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace punet {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("features: " + msg);
}

void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

}  // namespace

double waveform_power(const std::vector<double>& w) {
  double p = 0.0;
  for (double v : w) p += v * v;
  return w.empty() ? 0.0 : p / static_cast<double>(w.size());
}

Spectrogram stft(const std::vector<double>& waveform, const StftConfig& cfg) {
  require(!waveform.empty(), "stft: empty waveform");
  require(cfg.sample_rate * cfg.window_ms % 1000 == 0 &&
              cfg.sample_rate * cfg.hop_ms % 1000 == 0,
          "stft: rate " + std::to_string(cfg.sample_rate) +
              " does not give integer window/hop");
  const i64 win = cfg.window_samples();
  const i64 hop = cfg.hop_samples();
  const i64 n = static_cast<i64>(waveform.size());
  const i64 frames = (n + hop - 1) / hop;
  const i64 bins = cfg.n_bins();

  std::vector<double> hann(win);
  for (i64 i = 0; i < win; ++i)
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi *
                                   static_cast<double>(i) /
                                   static_cast<double>(win));

  // One basis table per (bin, sample-in-window) pair; window folded in.
  std::vector<double> cos_t(bins * win), sin_t(bins * win);
  for (i64 f = 0; f < bins; ++f)
    for (i64 i = 0; i < win; ++i) {
      const double ang = 2.0 * std::numbers::pi * static_cast<double>(f) *
                         static_cast<double>(i) / static_cast<double>(win);
      cos_t[f * win + i] = std::cos(ang) * hann[i];
      sin_t[f * win + i] = std::sin(ang) * hann[i];
    }

  Spectrogram spec;
  spec.frames = frames;
  spec.bins = bins;
  spec.frame_rate_hz = 1000.0 / static_cast<double>(cfg.hop_ms);
  spec.bin_spacing_hz = cfg.bin_spacing_hz();
  spec.values.assign(frames * bins, 0.0);

  for (i64 t = 0; t < frames; ++t) {
    const i64 start = t * hop - win / 2;  // centered framing, zero padded
    for (i64 f = 0; f < bins; ++f) {
      double re = 0.0, im = 0.0;
      for (i64 i = 0; i < win; ++i) {
        const i64 s = start + i;
        if (s < 0 || s >= n) continue;
        re += waveform[s] * cos_t[f * win + i];
        im += waveform[s] * sin_t[f * win + i];
      }
      const double mag = std::sqrt(re * re + im * im);
      spec.at(t, f) = std::log(std::max(mag, cfg.log_floor));
    }
  }
  return spec;
}

Spectrogram spec_augment(const Spectrogram& spec, const SpecAugmentConfig& cfg,
                         Rng& rng) {
  Spectrogram out = spec;
  const i64 t_len = spec.frames, f_len = spec.bins;

  // 1. time warp: shift a pivot by up to max_warp frames, resampling the
  //    two segments around it by nearest neighbor
  if (cfg.max_warp > 0 && t_len > 2 * cfg.max_warp + 2) {
    const i64 w = rng.uniform_int(-cfg.max_warp, cfg.max_warp);
    const i64 pivot = rng.uniform_int(cfg.max_warp + 1, t_len - cfg.max_warp - 2);
    if (w != 0) {
      const i64 shifted = pivot + w;
      Spectrogram warped = out;
      for (i64 t = 0; t < t_len; ++t) {
        double src;
        if (t <= shifted)
          src = static_cast<double>(t) * static_cast<double>(pivot) /
                static_cast<double>(shifted);
        else
          src = pivot + static_cast<double>(t - shifted) *
                            static_cast<double>(t_len - 1 - pivot) /
                            static_cast<double>(t_len - 1 - shifted);
        i64 si = static_cast<i64>(std::llround(src));
        si = std::max<i64>(0, std::min(t_len - 1, si));
        for (i64 f = 0; f < f_len; ++f) warped.at(t, f) = out.at(si, f);
      }
      out = warped;
    }
  }

  double mean = 0.0;
  for (double v : out.values) mean += v;
  mean /= static_cast<double>(out.values.size());

  // 2. time masks
  for (i64 m = 0; m < cfg.time_masks; ++m) {
    const i64 width = rng.uniform_int(0, std::min(cfg.max_time_mask, t_len));
    const i64 start = rng.uniform_int(0, t_len - width);
    for (i64 t = start; t < start + width; ++t)
      for (i64 f = 0; f < f_len; ++f) out.at(t, f) = mean;
  }
  // 3. frequency masks
  for (i64 m = 0; m < cfg.freq_masks; ++m) {
    const i64 width = rng.uniform_int(0, std::min(cfg.max_freq_mask, f_len));
    const i64 start = rng.uniform_int(0, f_len - width);
    for (i64 f = start; f < start + width; ++f)
      for (i64 t = 0; t < t_len; ++t) out.at(t, f) = mean;
  }
  return out;
}

std::vector<double> mix_at_snr(const std::vector<double>& clean,
                               const std::vector<double>& noise, SnrDb snr_db) {
  if (!snr_db.has_value()) return clean;
  const double p_clean = waveform_power(clean);
  require(p_clean > 0.0, "mix_at_snr: clean signal has zero power");
  require(!noise.empty(), "mix_at_snr: empty noise");

  std::vector<double> out(clean.size());
  double p_noise = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double v = noise[i % noise.size()];  // tile or trim to length
    out[i] = v;
    p_noise += v * v;
  }
  p_noise /= static_cast<double>(clean.size());
  require(p_noise > 0.0, "mix_at_snr: noise has zero power");

  const double target_p = p_clean / std::pow(10.0, *snr_db / 10.0);
  const double s = std::sqrt(target_p / p_noise);
  for (std::size_t i = 0; i < clean.size(); ++i)
    out[i] = clean[i] + s * out[i];
  return out;
}

std::vector<double> make_babble(
    const std::vector<const std::vector<double>*>& pool, i64 n, Rng& rng) {
  require(!pool.empty(), "make_babble: empty corpus");
  require(n >= 2, "make_babble: need at least 2 sources");

  std::vector<const std::vector<double>*> drawn;
  i64 len = 0;
  for (i64 i = 0; i < n; ++i) {
    const auto* w = pool[rng.uniform_int(0, static_cast<i64>(pool.size()) - 1)];
    require(!w->empty(), "make_babble: empty waveform in corpus");
    drawn.push_back(w);
    len = std::max(len, static_cast<i64>(w->size()));
  }

  std::vector<double> out(len, 0.0);
  for (const auto* w : drawn)
    for (i64 i = 0; i < len; ++i) out[i] += (*w)[i % w->size()];

  double mean = 0.0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(len);
  double rms = 0.0;
  for (double& v : out) {
    v -= mean;
    rms += v * v;
  }
  rms = std::sqrt(rms / static_cast<double>(len));
  require(rms > 0.0, "make_babble: degenerate silent mixture");
  for (double& v : out) v /= rms;
  return out;
}

}  // namespace punet
