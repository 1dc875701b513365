// Copyright 2026 mvdrsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Short-time objective intelligibility with the originally published
// constants: 10 kHz, 256-sample frames, 512-point FFT, 15 one-third-octave
// bands from 150 Hz, 30-frame segments, -15 dB clipping, 40 dB silence range.

#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include "mvdrsep/error.hpp"

namespace mvdrsep {

namespace stoi_constants {
inline constexpr int kSampleRate = 10000;
inline constexpr int kFrameLength = 256;
inline constexpr int kFftSize = 512;
inline constexpr int kNumBands = 15;
inline constexpr double kMinFreq = 150.0;
inline constexpr int kSegmentLength = 30;
inline constexpr double kBeta = -15.0;
inline constexpr double kDynamicRange = 40.0;
inline constexpr double kEps = std::numeric_limits<double>::epsilon();
}  // namespace stoi_constants

/// Rational-rate resampler: Hann-windowed sinc low-pass evaluated directly on
/// the polyphase grid. Output length is ceil(N * to / from).
inline Eigen::VectorXd resample(const Eigen::VectorXd &x, int from_rate, int to_rate) {
  require(from_rate > 0 && to_rate > 0, ErrorKind::config, "sample rates must be positive");
  if (from_rate == to_rate) return x;
  const int g = std::gcd(from_rate, to_rate);
  const long up = to_rate / g, down = from_rate / g;
  const long factor = std::max(up, down);
  const double cutoff = 0.5 / static_cast<double>(factor);  // cycles per upsampled sample
  constexpr int kZeroCrossings = 16;
  const long half = kZeroCrossings * factor;

  const auto n_out = static_cast<Eigen::Index>(
      (static_cast<long>(x.size()) * up + down - 1) / down);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n_out);
  for (Eigen::Index k = 0; k < n_out; ++k) {
    const long u = k * down;  // position on the upsampled grid
    const long n_lo = std::max<long>(0, (u - half + up - 1) / up);
    const long n_hi = std::min<long>(x.size() - 1, (u + half) / up);
    double acc = 0.0;
    for (long n = n_lo; n <= n_hi; ++n) {
      const double t = static_cast<double>(u - n * up);
      const double arg = 2.0 * cutoff * t;
      const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) /
                                                 (std::numbers::pi * arg);
      const double win = 0.5 + 0.5 * std::cos(std::numbers::pi * t / (half + 1));
      acc += x(n) * 2.0 * cutoff * sinc * win;
    }
    y(k) = acc * static_cast<double>(up);
  }
  return y;
}

namespace detail {

/// Symmetric Hann without the zero end points (length n).
inline Eigen::VectorXd hanning_inner(int n) {
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i)
    w(i) = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 1) / (n + 1));
  return w;
}

/// One-third-octave band matrix, [bands x (fft/2 + 1)].
inline Eigen::MatrixXd third_octave_bands(int fs, int nfft, int num_bands, double min_freq) {
  const int bins = nfft / 2 + 1;
  Eigen::MatrixXd obm = Eigen::MatrixXd::Zero(num_bands, bins);
  std::vector<double> freqs(bins);
  for (int k = 0; k < bins; ++k) freqs[k] = static_cast<double>(k) * fs / nfft;
  auto nearest = [&](double hz) {
    int best = 0;
    for (int k = 1; k < bins; ++k)
      if (std::abs(freqs[k] - hz) < std::abs(freqs[best] - hz)) best = k;
    return best;
  };
  for (int b = 0; b < num_bands; ++b) {
    const double lo = min_freq * std::pow(2.0, (2.0 * b - 1.0) / 6.0);
    const double hi = min_freq * std::pow(2.0, (2.0 * b + 1.0) / 6.0);
    const int lo_k = nearest(lo), hi_k = nearest(hi);
    for (int k = lo_k; k < hi_k; ++k) obm(b, k) = 1.0;
  }
  return obm;
}

/// Drops frames more than `range` dB below the loudest reference frame and
/// overlap-adds the survivors back together.
inline void remove_silent_frames(const Eigen::VectorXd &x, const Eigen::VectorXd &y,
                                 Eigen::VectorXd &x_out, Eigen::VectorXd &y_out) {
  using namespace stoi_constants;
  const int len = kFrameLength, hop = kFrameLength / 2;
  const Eigen::VectorXd w = hanning_inner(len);
  std::vector<Eigen::VectorXd> xf, yf;
  std::vector<double> energy;
  for (Eigen::Index i = 0; i + len < x.size(); i += hop) {
    xf.push_back(w.cwiseProduct(x.segment(i, len)));
    yf.push_back(w.cwiseProduct(y.segment(i, len)));
    energy.push_back(20.0 * std::log10(xf.back().norm() + kEps));
  }
  x_out.resize(0);
  y_out.resize(0);
  if (xf.empty()) return;
  const double top = *std::max_element(energy.begin(), energy.end());
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < energy.size(); ++i)
    if (top - kDynamicRange - energy[i] < 0.0) keep.push_back(i);
  const Eigen::Index out_len = (static_cast<Eigen::Index>(keep.size()) - 1) * hop + len;
  x_out = Eigen::VectorXd::Zero(out_len);
  y_out = Eigen::VectorXd::Zero(out_len);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    x_out.segment(i * hop, len) += xf[keep[i]];
    y_out.segment(i * hop, len) += yf[keep[i]];
  }
}

/// Magnitude-squared spectra of Hann frames (hop = len/2), [frames x bins].
inline Eigen::MatrixXd power_frames(const Eigen::VectorXd &x) {
  using namespace stoi_constants;
  const int len = kFrameLength, hop = kFrameLength / 2;
  const Eigen::VectorXd w = hanning_inner(len);
  std::vector<Eigen::Index> starts;
  for (Eigen::Index i = 0; i + len < x.size(); i += hop) starts.push_back(i);
  Eigen::MatrixXd out(starts.size(), kFftSize / 2 + 1);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(kFftSize, 0.0);
  std::vector<std::complex<double>> spec;
  for (std::size_t t = 0; t < starts.size(); ++t) {
    std::fill(frame.begin(), frame.end(), 0.0);
    for (int n = 0; n < len; ++n) frame[n] = w(n) * x(starts[t] + n);
    fft.fwd(spec, frame);
    for (int k = 0; k <= kFftSize / 2; ++k) out(t, k) = std::norm(spec[k]);
  }
  return out;
}

}  // namespace detail

/// Intelligibility of `est` against clean `ref`; roughly in [0, 1].
inline double stoi(const Eigen::VectorXd &est, const Eigen::VectorXd &ref, int sample_rate) {
  using namespace stoi_constants;
  require(est.size() == ref.size(), ErrorKind::data, "STOI inputs differ in length");
  const Eigen::VectorXd x_rs = resample(ref, sample_rate, kSampleRate);
  const Eigen::VectorXd y_rs = resample(est, sample_rate, kSampleRate);

  Eigen::VectorXd x, y;
  detail::remove_silent_frames(x_rs, y_rs, x, y);
  const Eigen::MatrixXd xp = detail::power_frames(x);
  const Eigen::MatrixXd yp = detail::power_frames(y);
  require(xp.rows() >= kSegmentLength, ErrorKind::data,
          "STOI input too short after silence removal");

  const Eigen::MatrixXd obm =
      detail::third_octave_bands(kSampleRate, kFftSize, kNumBands, kMinFreq);
  const Eigen::MatrixXd x_tob = (obm * xp.transpose()).cwiseSqrt();  // bands x frames
  const Eigen::MatrixXd y_tob = (obm * yp.transpose()).cwiseSqrt();

  const double clip = std::pow(10.0, -kBeta / 20.0);
  const Eigen::Index frames = x_tob.cols();
  double total = 0.0;
  long count = 0;
  for (Eigen::Index m = kSegmentLength; m <= frames; ++m) {
    for (int b = 0; b < kNumBands; ++b) {
      Eigen::VectorXd xs = x_tob.row(b).segment(m - kSegmentLength, kSegmentLength);
      Eigen::VectorXd ys = y_tob.row(b).segment(m - kSegmentLength, kSegmentLength);
      const double norm_const = xs.norm() / (ys.norm() + kEps);
      Eigen::VectorXd yn = (ys * norm_const).cwiseMin(xs * (1.0 + clip));
      yn.array() -= yn.mean();
      xs.array() -= xs.mean();
      yn /= yn.norm() + kEps;
      xs /= xs.norm() + kEps;
      total += yn.dot(xs);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace mvdrsep
