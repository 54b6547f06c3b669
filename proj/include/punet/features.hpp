// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "punet/rng.hpp"
#include "punet/tensor.hpp"

namespace punet {

// Analysis frame geometry: 40 ms windows hopped every 10 ms. The sample
// rate must make both spans integral; the transform length equals the
// window, so bins are spaced rate/n_fft apart (25 Hz at both 16 kHz/640
// and the desk-scale 3.2 kHz/128).
struct StftConfig {
  i64 sample_rate = 3200;
  i64 window_ms = 40;
  i64 hop_ms = 10;
  double log_floor = 1e-10;

  i64 window_samples() const { return sample_rate * window_ms / 1000; }
  i64 hop_samples() const { return sample_rate * hop_ms / 1000; }
  i64 n_bins() const { return window_samples() / 2 + 1; }
  double bin_spacing_hz() const {
    return static_cast<double>(sample_rate) /
           static_cast<double>(window_samples());
  }
};

struct Spectrogram {
  i64 frames = 0;
  i64 bins = 0;
  double frame_rate_hz = 0.0;
  double bin_spacing_hz = 0.0;
  std::vector<double> values;  // frames x bins, row-major log-magnitudes

  double& at(i64 t, i64 f) { return values[t * bins + f]; }
  double at(i64 t, i64 f) const { return values[t * bins + f]; }
  Tensor tensor() const {
    return Tensor::from_data({frames, bins}, values, false);
  }
};

struct VisualSequence {
  i64 frames = 0;
  i64 dim = 0;
  std::vector<double> values;  // frames x dim

  double& at(i64 t, i64 d) { return values[t * dim + d]; }
  double at(i64 t, i64 d) const { return values[t * dim + d]; }
  Tensor tensor() const {
    return Tensor::from_data({frames, dim}, values, false);
  }
};

// Center-padded log-magnitude STFT with a Hann window; T = ceil(N/hop).
Spectrogram stft(const std::vector<double>& waveform, const StftConfig& cfg);

struct SpecAugmentConfig {
  i64 time_masks = 2;
  i64 max_time_mask = 40;  // frames; 0.4 s at the 10 ms hop
  i64 freq_masks = 2;
  i64 max_freq_mask = 39;  // bins; strictly under 1 kHz at 25 Hz spacing
  i64 max_warp = 5;        // frames
};

// Time warp, then time and frequency masks filled with the utterance mean.
// Deterministic given the rng state; zero-width config is the identity.
Spectrogram spec_augment(const Spectrogram& spec, const SpecAugmentConfig& cfg,
                         Rng& rng);

// nullopt = the "no noise" sentinel.
using SnrDb = std::optional<double>;

// Adds `noise` scaled so 10*log10(P_clean / P_noise) = snr_db. Noise is
// tiled or trimmed to the clean length. No-noise passes clean through.
std::vector<double> mix_at_snr(const std::vector<double>& clean,
                               const std::vector<double>& noise, SnrDb snr_db);

// Sum of n randomly drawn waveforms, mean-removed and scaled to unit RMS.
std::vector<double> make_babble(
    const std::vector<const std::vector<double>*>& pool, i64 n, Rng& rng);

double waveform_power(const std::vector<double>& w);

}  // namespace punet
