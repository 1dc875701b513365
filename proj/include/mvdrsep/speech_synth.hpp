// Copyright 2026 mvdrsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Synthetic "speech": a pulse-train/noise source through per-speaker formant
// resonators with a syllabic on/off envelope. Enough spectral and temporal
// structure to exercise masking, beamforming and speaker embeddings without
// a real corpus.

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "mvdrsep/error.hpp"

namespace mvdrsep {

struct SpeakerProfile {
  double f0 = 120.0;
  std::array<double, 4> formants{500, 1500, 2500, 3500};
  std::array<double, 4> bandwidths{80, 120, 160, 200};
  double tilt = 0.6;  // one-pole lowpass coefficient on the excitation

  /// Deterministic profile for a speaker seed.
  static SpeakerProfile from_seed(std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x5eedf00dULL);
    auto u = [&](double lo, double hi) {
      return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    SpeakerProfile p;
    p.f0 = u(85.0, 255.0);
    p.formants = {u(350, 850), u(900, 2300), u(2300, 3200), u(3300, 4300)};
    p.bandwidths = {u(60, 120), u(80, 150), u(120, 200), u(150, 250)};
    p.tilt = u(0.3, 0.85);
    return p;
  }
};

namespace detail {

/// Two-pole resonator with unity gain at DC.
struct Resonator {
  double a1 = 0, a2 = 0, b0 = 1, y1 = 0, y2 = 0;

  void tune(double freq, double bw, int fs) {
    const double r = std::exp(-std::numbers::pi * bw / fs);
    a1 = 2.0 * r * std::cos(2.0 * std::numbers::pi * freq / fs);
    a2 = -r * r;
    b0 = 1.0 - a1 - a2;
  }

  double step(double x) {
    const double y = b0 * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

}  // namespace detail

/// Renders `seconds` of synthetic speech for `profile`. The utterance seed
/// controls syllable timing, vowel variation and noise.
inline Eigen::VectorXd synthesize_speech(const SpeakerProfile &profile, double seconds,
                                         int sample_rate, std::uint64_t utterance_seed) {
  require(seconds > 0 && sample_rate > 0, ErrorKind::config,
          "speech duration and sample rate must be positive");
  const auto n = static_cast<Eigen::Index>(std::llround(seconds * sample_rate));
  std::mt19937_64 rng(utterance_seed);
  auto u = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  std::normal_distribution<double> gauss(0.0, 1.0);

  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  std::array<detail::Resonator, 4> tract;
  double lowpass = 0.0;
  double pulse_phase = 0.0;

  Eigen::Index pos = static_cast<Eigen::Index>(u(0.03, 0.12) * sample_rate);
  while (pos < n) {
    const auto len = static_cast<Eigen::Index>(u(0.12, 0.35) * sample_rate);
    const bool voiced = u(0.0, 1.0) < 0.8;
    const double amp = u(0.6, 1.0);
    const double f0_start = profile.f0 * u(0.9, 1.1);
    const double f0_end = f0_start * u(0.9, 1.1);
    for (int k = 0; k < 4; ++k) {
      const double scale = voiced ? u(0.85, 1.15) : u(1.0, 1.6);
      tract[k].tune(std::min(profile.formants[k] * scale, 0.45 * sample_rate),
                    profile.bandwidths[k] * (voiced ? 1.0 : 2.0), sample_rate);
    }
    const auto ramp = static_cast<Eigen::Index>(0.02 * sample_rate);
    for (Eigen::Index i = 0; i < len && pos + i < n; ++i) {
      const double frac = static_cast<double>(i) / len;
      double excitation = 0.05 * gauss(rng);
      if (voiced) {
        pulse_phase += (f0_start + (f0_end - f0_start) * frac) / sample_rate;
        if (pulse_phase >= 1.0) {
          pulse_phase -= 1.0;
          excitation += 1.0;
        }
      } else {
        excitation += 0.4 * gauss(rng);
      }
      lowpass = profile.tilt * lowpass + (1.0 - profile.tilt) * excitation;
      double y = lowpass;
      // Parallel-in-cascade: sum of cascaded stages keeps every formant audible.
      double acc = 0.0;
      for (auto &r : tract) {
        y = r.step(y);
        acc += y;
      }
      double env = amp;
      if (i < ramp) env *= 0.5 - 0.5 * std::cos(std::numbers::pi * i / ramp);
      if (len - i < ramp) env *= 0.5 - 0.5 * std::cos(std::numbers::pi * (len - i) / ramp);
      out(pos + i) = env * acc;
    }
    pos += len;
    pos += static_cast<Eigen::Index>(
        (u(0.0, 1.0) < 0.15 ? u(0.2, 0.4) : u(0.03, 0.15)) * sample_rate);
  }

  const double rms = std::sqrt(out.squaredNorm() / std::max<Eigen::Index>(n, 1));
  if (rms > 0.0) out *= 0.1 / rms;
  return out;
}

inline Eigen::VectorXd white_noise(Eigen::Index n, std::uint64_t seed, double stddev = 0.1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, stddev);
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i) x(i) = gauss(rng);
  return x;
}

}  // namespace mvdrsep
