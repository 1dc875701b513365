// Copyright 2026 mvdrsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Time-frequency analysis/synthesis and the spectral features shared by the
// rest of the library.

#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "mvdrsep/error.hpp"

namespace mvdrsep {

using Complex = std::complex<double>;

/// Multichannel time-domain signal, one row per channel.
struct MultichannelWaveform {
  Eigen::MatrixXd samples;  // [R x N]
  int sample_rate = 16000;

  MultichannelWaveform() = default;
  MultichannelWaveform(Eigen::MatrixXd s, int fs)
      : samples(std::move(s)), sample_rate(fs) {}

  static MultichannelWaveform mono(const Eigen::VectorXd &x, int fs) {
    return {Eigen::MatrixXd(x.transpose()), fs};
  }

  Eigen::Index channels() const { return samples.rows(); }
  Eigen::Index length() const { return samples.cols(); }
  Eigen::VectorXd channel(Eigen::Index r) const {
    return samples.row(r).transpose();
  }

  void validate() const {
    require(channels() >= 1, ErrorKind::data, "waveform has no channels");
    require(sample_rate > 0, ErrorKind::data, "sample rate must be positive");
    require(samples.allFinite(), ErrorKind::data,
            "waveform contains non-finite samples");
  }
};

enum class WindowKind { hann };

struct StftConfig {
  int fft_size = 512;
  int hop = 256;
  WindowKind window = WindowKind::hann;
  int sample_rate = 16000;

  int num_bins() const { return fft_size / 2 + 1; }

  void validate() const {
    require(fft_size >= 2 && fft_size % 2 == 0, ErrorKind::config,
            "fft_size must be even and >= 2");
    require(hop >= 1 && hop <= fft_size, ErrorKind::config,
            "hop must be in [1, fft_size]");
    // Periodic Hann is constant-overlap-add for hops dividing fft_size/2.
    require((fft_size / 2) % hop == 0, ErrorKind::config,
            "hop must divide fft_size/2 for the Hann window to overlap-add");
    require(sample_rate > 0, ErrorKind::config, "sample_rate must be positive");
  }

  bool operator==(const StftConfig &) const = default;
};

/// One-sided complex STFT; channels[r] is a [T x F] matrix.
struct ComplexSpectrogram {
  std::vector<Eigen::MatrixXcd> channels;
  StftConfig config;

  Eigen::Index num_channels() const {
    return static_cast<Eigen::Index>(channels.size());
  }
  Eigen::Index num_frames() const {
    return channels.empty() ? 0 : channels.front().rows();
  }
  Eigen::Index num_bins() const {
    return channels.empty() ? 0 : channels.front().cols();
  }

  /// Multichannel observation y(t, f) as a length-R vector.
  Eigen::VectorXcd at(Eigen::Index t, Eigen::Index f) const {
    Eigen::VectorXcd y(num_channels());
    for (Eigen::Index r = 0; r < num_channels(); ++r) y(r) = channels[r](t, f);
    return y;
  }

  /// All frames of one frequency bin as an [R x T] matrix.
  Eigen::MatrixXcd bin(Eigen::Index f) const {
    Eigen::MatrixXcd out(num_channels(), num_frames());
    for (Eigen::Index r = 0; r < num_channels(); ++r)
      out.row(r) = channels[r].col(f).transpose();
    return out;
  }

  bool same_shape(const ComplexSpectrogram &o) const {
    return num_channels() == o.num_channels() && num_frames() == o.num_frames() &&
           num_bins() == o.num_bins();
  }
};

/// Periodic Hann window of the given length.
inline Eigen::VectorXd hann_window(int n) {
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i)
    w(i) = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

inline Eigen::VectorXd analysis_window(const StftConfig &cfg) {
  switch (cfg.window) {
    case WindowKind::hann: return hann_window(cfg.fft_size);
  }
  return hann_window(cfg.fft_size);
}

inline Eigen::Index num_stft_frames(Eigen::Index length, const StftConfig &cfg) {
  if (length < cfg.fft_size) return 0;
  return 1 + (length - cfg.fft_size) / cfg.hop;
}

/// Frame t covers samples [t*hop, t*hop + fft_size). Trailing samples that do
/// not fill a frame are dropped.
inline ComplexSpectrogram stft(const MultichannelWaveform &wave,
                               const StftConfig &cfg) {
  cfg.validate();
  wave.validate();
  require(wave.length() >= cfg.fft_size, ErrorKind::data, "input too short");

  const Eigen::Index frames = num_stft_frames(wave.length(), cfg);
  const int bins = cfg.num_bins();
  const Eigen::VectorXd window = analysis_window(cfg);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(cfg.fft_size);
  std::vector<Complex> spectrum;

  ComplexSpectrogram out;
  out.config = cfg;
  out.config.sample_rate = wave.sample_rate;
  out.channels.assign(wave.channels(), Eigen::MatrixXcd(frames, bins));
  for (Eigen::Index r = 0; r < wave.channels(); ++r) {
    for (Eigen::Index t = 0; t < frames; ++t) {
      const Eigen::Index start = t * cfg.hop;
      for (int n = 0; n < cfg.fft_size; ++n)
        frame[n] = wave.samples(r, start + n) * window(n);
      fft.fwd(spectrum, frame);
      for (int f = 0; f < bins; ++f) out.channels[r](t, f) = spectrum[f];
    }
  }
  return out;
}

/// Weighted overlap-add synthesis normalised by the summed squared window.
/// Output length is (T-1)*hop + fft_size.
inline MultichannelWaveform istft(const ComplexSpectrogram &spec,
                                  const StftConfig &cfg) {
  cfg.validate();
  require(spec.config.fft_size == cfg.fft_size && spec.config.hop == cfg.hop &&
              spec.config.window == cfg.window,
          ErrorKind::config, "stft config mismatch");
  require(spec.num_bins() == cfg.num_bins(), ErrorKind::config,
          "stft config mismatch: bin count");

  const Eigen::Index frames = spec.num_frames();
  const Eigen::Index length =
      frames == 0 ? 0 : (frames - 1) * cfg.hop + cfg.fft_size;
  const Eigen::VectorXd window = analysis_window(cfg);

  Eigen::VectorXd norm = Eigen::VectorXd::Zero(length);
  for (Eigen::Index t = 0; t < frames; ++t)
    norm.segment(t * cfg.hop, cfg.fft_size) += window.cwiseProduct(window);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<Complex> spectrum(cfg.num_bins());
  std::vector<double> frame;

  MultichannelWaveform out(Eigen::MatrixXd::Zero(spec.num_channels(), length),
                           spec.config.sample_rate);
  for (Eigen::Index r = 0; r < spec.num_channels(); ++r) {
    for (Eigen::Index t = 0; t < frames; ++t) {
      for (Eigen::Index f = 0; f < spec.num_bins(); ++f)
        spectrum[f] = spec.channels[r](t, f);
      fft.inv(frame, spectrum, cfg.fft_size);
      const Eigen::Index start = t * cfg.hop;
      for (int n = 0; n < cfg.fft_size; ++n)
        out.samples(r, start + n) += frame[n] * window(n);
    }
    for (Eigen::Index n = 0; n < length; ++n)
      if (norm(n) > 1e-10) out.samples(r, n) /= norm(n);
  }
  return out;
}

inline constexpr double kLogFloor = 1e-12;

/// ln(|y|^2 + eps) for one channel, [T x F].
inline Eigen::MatrixXd log_power_spectrum(const ComplexSpectrogram &spec,
                                          Eigen::Index channel) {
  require(channel >= 0 && channel < spec.num_channels(), ErrorKind::data,
          "channel index out of range");
  return (spec.channels[channel].cwiseAbs2().array() + kLogFloor).log().matrix();
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

/// Triangular filters spanning 0 Hz to Nyquist, [n_mels x F].
inline Eigen::MatrixXd mel_filterbank(int n_mels, int fft_size, int sample_rate) {
  require(n_mels >= 1, ErrorKind::config, "n_mels must be >= 1");
  const int bins = fft_size / 2 + 1;
  const double nyquist = sample_rate / 2.0;
  const double mel_max = hz_to_mel(nyquist);
  std::vector<double> edges(n_mels + 2);
  for (int m = 0; m < n_mels + 2; ++m)
    edges[m] = mel_to_hz(mel_max * m / (n_mels + 1));

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double hz = static_cast<double>(k) * sample_rate / fft_size;
      if (hz > lo && hz <= mid) fb(m, k) = (hz - lo) / (mid - lo);
      else if (hz > mid && hz < hi) fb(m, k) = (hi - hz) / (hi - mid);
    }
    // Very narrow low bands can fall between bins; give them the nearest bin.
    if (fb.row(m).sum() == 0.0) {
      const int k = static_cast<int>(std::lround(mid * fft_size / sample_rate));
      fb(m, std::min(k, bins - 1)) = 1.0;
    }
  }
  return fb;
}

/// Log mel energies of one channel, [T x n_mels].
inline Eigen::MatrixXd log_mel(const ComplexSpectrogram &spec, Eigen::Index channel,
                               int n_mels) {
  require(channel >= 0 && channel < spec.num_channels(), ErrorKind::data,
          "channel index out of range");
  const Eigen::MatrixXd fb =
      mel_filterbank(n_mels, spec.config.fft_size, spec.config.sample_rate);
  const Eigen::MatrixXd power = spec.channels[channel].cwiseAbs2();
  return ((power * fb.transpose()).array() + kLogFloor).log().matrix();
}

}  // namespace mvdrsep
