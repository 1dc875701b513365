// Copyright 2026 mvdrsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Oracle time-frequency masks, mask-weighted spatial covariance estimation and
// the reference-channel MVDR filter
//
//   w(f) = Phi_n(f)^-1 Phi_x(f) u_r / tr(Phi_n(f)^-1 Phi_x(f)),
//   S(t, f) = w(f)^H y(t, f).

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mvdrsep/error.hpp"
#include "mvdrsep/signal_core.hpp"

namespace mvdrsep {

enum class MaskKind { ibm, irm, cirm };

inline const char *to_string(MaskKind k) {
  switch (k) {
    case MaskKind::ibm: return "ibm";
    case MaskKind::irm: return "irm";
    case MaskKind::cirm: return "cirm";
  }
  return "?";
}

inline MaskKind parse_mask_kind(const std::string &s) {
  if (s == "ibm") return MaskKind::ibm;
  if (s == "irm") return MaskKind::irm;
  if (s == "cirm") return MaskKind::cirm;
  fail(ErrorKind::config, "unknown mask kind '" + s + "'");
}

inline constexpr double kCirmMaxMagnitude = 2.0;
inline constexpr double kMixtureFloor = 1e-8;

/// [T x F] mask. Real kinds keep a zero imaginary part.
struct TFMask {
  MaskKind kind = MaskKind::irm;
  Eigen::MatrixXcd values;

  Eigen::Index num_frames() const { return values.rows(); }
  Eigen::Index num_bins() const { return values.cols(); }

  /// Real weight in [0, 1] used for covariance estimation.
  Eigen::MatrixXd weights() const {
    if (kind == MaskKind::cirm) return values.cwiseAbs().cwiseMin(1.0);
    return values.real().cwiseMax(0.0).cwiseMin(1.0);
  }

  static TFMask real(MaskKind kind, const Eigen::MatrixXd &m) {
    require(kind != MaskKind::cirm, ErrorKind::config, "cIRM masks are complex");
    return {kind, m.cast<Complex>()};
  }
};

namespace detail {

inline void check_aligned(const ComplexSpectrogram &a, const ComplexSpectrogram &b,
                          const char *what) {
  require(a.same_shape(b), ErrorKind::data, std::string("shape mismatch: ") + what);
}

inline TFMask mask_from(const Eigen::MatrixXcd &s, const Eigen::MatrixXcd &v,
                        const Eigen::MatrixXcd &y, MaskKind kind) {
  const Eigen::Index T = s.rows(), F = s.cols();
  TFMask m{kind, Eigen::MatrixXcd::Zero(T, F)};
  for (Eigen::Index f = 0; f < F; ++f)
    for (Eigen::Index t = 0; t < T; ++t) {
      const double ms = std::abs(s(t, f)), mv = std::abs(v(t, f));
      switch (kind) {
        case MaskKind::irm: {
          const double denom = std::sqrt(ms * ms + mv * mv);
          m.values(t, f) = denom > 0.0 ? ms / denom : 0.0;
          break;
        }
        case MaskKind::ibm:
          m.values(t, f) = ms > mv ? 1.0 : 0.0;
          break;
        case MaskKind::cirm: {
          Complex yy = y(t, f);
          const double my = std::abs(yy);
          if (my < kMixtureFloor) yy = my > 0.0 ? yy * (kMixtureFloor / my) : kMixtureFloor;
          Complex c = s(t, f) / yy;
          if (std::abs(c) > kCirmMaxMagnitude) c *= kCirmMaxMagnitude / std::abs(c);
          m.values(t, f) = c;
          break;
        }
      }
    }
  return m;
}

}  // namespace detail

/// Oracle target mask on one channel; `others` is interferer plus noise.
inline TFMask oracle_mask(const ComplexSpectrogram &target, const ComplexSpectrogram &others,
                          const ComplexSpectrogram &mixture, Eigen::Index channel,
                          MaskKind kind) {
  detail::check_aligned(target, others, "target vs others");
  detail::check_aligned(target, mixture, "target vs mixture");
  require(channel >= 0 && channel < target.num_channels(), ErrorKind::data,
          "mask channel out of range");
  return detail::mask_from(target.channels[channel], others.channels[channel],
                           mixture.channels[channel], kind);
}

/// Oracle mask for the interference (roles of target and others swapped).
inline TFMask oracle_noise_mask(const ComplexSpectrogram &target,
                                const ComplexSpectrogram &others,
                                const ComplexSpectrogram &mixture, Eigen::Index channel,
                                MaskKind kind) {
  return oracle_mask(others, target, mixture, channel, kind);
}

/// Direct single-channel masking (cIRM or real masks).
inline ComplexSpectrogram apply_mask(const ComplexSpectrogram &spec, const TFMask &mask,
                                     Eigen::Index channel) {
  require(channel >= 0 && channel < spec.num_channels(), ErrorKind::data,
          "mask channel out of range");
  require(mask.num_frames() == spec.num_frames() && mask.num_bins() == spec.num_bins(),
          ErrorKind::data, "mask shape does not match spectrogram");
  ComplexSpectrogram out;
  out.config = spec.config;
  out.channels.push_back(spec.channels[channel].cwiseProduct(mask.values));
  return out;
}

using PsdMatrices = std::vector<Eigen::MatrixXcd>;  // [F] of R x R

struct PsdSet {
  PsdMatrices phi_x;
  PsdMatrices phi_n;
};

/// Mask-weighted covariance of one bin; nullopt when the weights sum to zero.
inline std::optional<Eigen::MatrixXcd> estimate_psd_bin(const ComplexSpectrogram &spec,
                                                        const Eigen::MatrixXd &weights,
                                                        Eigen::Index f) {
  const Eigen::VectorXd w = weights.col(f);
  const double total = w.sum();
  if (!(total > 0.0)) return std::nullopt;
  const Eigen::MatrixXcd y = spec.bin(f);  // R x T
  const Eigen::MatrixXcd phi = (y * w.cast<Complex>().asDiagonal()) * y.adjoint() / total;
  return Eigen::MatrixXcd((phi + phi.adjoint()) * 0.5);
}

inline PsdMatrices estimate_psd(const ComplexSpectrogram &spec, const TFMask &mask) {
  require(mask.num_frames() == spec.num_frames() && mask.num_bins() == spec.num_bins(),
          ErrorKind::data, "mask shape does not match spectrogram");
  const Eigen::MatrixXd weights = mask.weights();
  PsdMatrices out;
  out.reserve(spec.num_bins());
  for (Eigen::Index f = 0; f < spec.num_bins(); ++f) {
    auto phi = estimate_psd_bin(spec, weights, f);
    require(phi.has_value(), ErrorKind::numeric,
            "degenerate mask at frequency bin " + std::to_string(f));
    out.push_back(std::move(*phi));
  }
  return out;
}

struct BeamformerFilter {
  Eigen::MatrixXcd weights;  // [F x R]
  int reference_index = 0;

  Eigen::Index num_bins() const { return weights.rows(); }
  Eigen::Index num_channels() const { return weights.cols(); }

  static BeamformerFilter passthrough(Eigen::Index bins, Eigen::Index channels, int ref) {
    BeamformerFilter f{Eigen::MatrixXcd::Zero(bins, channels), ref};
    f.weights.col(ref).setOnes();
    return f;
  }
};

inline constexpr double kDefaultDiagonalLoading = 1e-6;

/// MVDR weights for one frequency. Phi_n is loaded with
/// (eps_rel * tr(Phi_n) / R + 1e-10) I before solving.
inline Eigen::VectorXcd mvdr_bin(const Eigen::MatrixXcd &phi_x, const Eigen::MatrixXcd &phi_n,
                                 int reference, double diag_loading) {
  const Eigen::Index R = phi_n.rows();
  require(phi_n.cols() == R && phi_x.rows() == R && phi_x.cols() == R, ErrorKind::data,
          "PSD matrices must be square and equally sized");
  require(reference >= 0 && reference < R, ErrorKind::config, "reference index out of range");
  require(diag_loading >= 0.0, ErrorKind::config, "diagonal loading must be non-negative");
  const double load = diag_loading * phi_n.trace().real() / static_cast<double>(R) + 1e-10;
  const Eigen::MatrixXcd loaded = phi_n + load * Eigen::MatrixXcd::Identity(R, R);
  const Eigen::MatrixXcd ratio = loaded.partialPivLu().solve(phi_x);
  const Complex tr = ratio.trace();
  require(std::abs(tr) >= 1e-12, ErrorKind::numeric, "no target energy at frequency");
  Eigen::VectorXcd w = ratio.col(reference) / tr;
  require(w.allFinite(), ErrorKind::numeric, "non-finite MVDR weights");
  return w;
}

inline BeamformerFilter mvdr_weights(const PsdSet &psd, int reference,
                                     double diag_loading = kDefaultDiagonalLoading) {
  require(psd.phi_x.size() == psd.phi_n.size() && !psd.phi_x.empty(), ErrorKind::data,
          "PSD sets must be non-empty and have equal bin counts");
  const auto F = static_cast<Eigen::Index>(psd.phi_x.size());
  const Eigen::Index R = psd.phi_x.front().rows();
  BeamformerFilter out{Eigen::MatrixXcd(F, R), reference};
  for (Eigen::Index f = 0; f < F; ++f) {
    try {
      out.weights.row(f) = mvdr_bin(psd.phi_x[f], psd.phi_n[f], reference, diag_loading);
    } catch (const Error &e) {
      if (e.kind() != ErrorKind::numeric) throw;
      throw Error(ErrorKind::numeric, std::string(e.what()) + " bin " + std::to_string(f));
    }
  }
  return out;
}

/// S(t, f) = w(f)^H y(t, f); single-channel result.
inline ComplexSpectrogram apply_beamformer(const BeamformerFilter &filter,
                                           const ComplexSpectrogram &spec) {
  require(filter.num_bins() == spec.num_bins() &&
              filter.num_channels() == spec.num_channels(),
          ErrorKind::data, "beamformer shape does not match spectrogram");
  ComplexSpectrogram out;
  out.config = spec.config;
  Eigen::MatrixXcd s = Eigen::MatrixXcd::Zero(spec.num_frames(), spec.num_bins());
  for (Eigen::Index r = 0; r < spec.num_channels(); ++r) {
    const Eigen::RowVectorXcd wc = filter.weights.col(r).conjugate().transpose();
    s += spec.channels[r] * wc.asDiagonal();
  }
  out.channels.push_back(std::move(s));
  return out;
}

enum class NoiseMaskMode { complement, oracle };

inline NoiseMaskMode parse_noise_mask_mode(const std::string &s) {
  if (s == "complement") return NoiseMaskMode::complement;
  if (s == "oracle") return NoiseMaskMode::oracle;
  fail(ErrorKind::config, "unknown noise mask mode '" + s + "'");
}

struct SeparationOptions {
  StftConfig stft;
  MaskKind mask_kind = MaskKind::irm;
  NoiseMaskMode noise_mask = NoiseMaskMode::complement;
  double diag_loading = kDefaultDiagonalLoading;
  int reference = 0;
  std::optional<TFMask> external_mask;  // replaces the oracle target mask
};

struct SeparationResult {
  MultichannelWaveform enhanced;  // one channel, same length as the mixture
  BeamformerFilter filter;
  TFMask target_mask;
  int passthrough_bins = 0;  // bins that fell back to u_r
};

namespace detail {

/// Pads so every original sample is covered by a full set of overlapping frames.
inline MultichannelWaveform pad_for_stft(const MultichannelWaveform &w, const StftConfig &cfg,
                                         Eigen::Index &front) {
  front = cfg.fft_size - cfg.hop;
  Eigen::Index total = w.length() + 2 * front;
  if (total < cfg.fft_size) total = cfg.fft_size;
  const Eigen::Index rem = (total - cfg.fft_size) % cfg.hop;
  if (rem) total += cfg.hop - rem;
  MultichannelWaveform out(Eigen::MatrixXd::Zero(w.channels(), total), w.sample_rate);
  out.samples.middleCols(front, w.length()) = w.samples;
  return out;
}

}  // namespace detail

/// Frame-aligned STFT of a waveform padded the same way separate_utterance pads.
inline ComplexSpectrogram padded_stft(const MultichannelWaveform &w, const StftConfig &cfg) {
  Eigen::Index front = 0;
  return stft(detail::pad_for_stft(w, cfg, front), cfg);
}

/// Mask-based MVDR separation of one utterance. `others` is the sum of the
/// interfering components; it and `target` only feed the oracle masks.
inline SeparationResult separate_utterance(const MultichannelWaveform &mixture,
                                           const MultichannelWaveform &target,
                                           const MultichannelWaveform &others,
                                           const SeparationOptions &opt) {
  require(mixture.channels() == target.channels() && mixture.channels() == others.channels() &&
              mixture.length() == target.length() && mixture.length() == others.length(),
          ErrorKind::data, "mixture and components must be aligned");
  require(opt.reference >= 0 && opt.reference < mixture.channels(), ErrorKind::config,
          "reference channel out of range");
  StftConfig cfg = opt.stft;
  cfg.sample_rate = mixture.sample_rate;

  Eigen::Index front = 0;
  const ComplexSpectrogram y = stft(detail::pad_for_stft(mixture, cfg, front), cfg);
  const ComplexSpectrogram s = stft(detail::pad_for_stft(target, cfg, front), cfg);
  const ComplexSpectrogram v = stft(detail::pad_for_stft(others, cfg, front), cfg);

  SeparationResult result;
  if (opt.external_mask) {
    require(opt.external_mask->num_frames() == y.num_frames() &&
                opt.external_mask->num_bins() == y.num_bins(),
            ErrorKind::data, "external mask shape does not match the mixture STFT");
    result.target_mask = *opt.external_mask;
  } else {
    result.target_mask = oracle_mask(s, v, y, opt.reference, opt.mask_kind);
  }
  const Eigen::MatrixXd wx = result.target_mask.weights();
  Eigen::MatrixXd wn;
  if (opt.noise_mask == NoiseMaskMode::oracle)
    wn = oracle_noise_mask(s, v, y, opt.reference, result.target_mask.kind).weights();
  else
    wn = (1.0 - wx.array()).matrix();

  const Eigen::Index F = y.num_bins();
  result.filter = BeamformerFilter::passthrough(F, y.num_channels(), opt.reference);
  for (Eigen::Index f = 0; f < F; ++f) {
    const auto phi_x = estimate_psd_bin(y, wx, f);
    const auto phi_n = estimate_psd_bin(y, wn, f);
    if (!phi_x || !phi_n) {
      ++result.passthrough_bins;
      continue;
    }
    try {
      result.filter.weights.row(f) = mvdr_bin(*phi_x, *phi_n, opt.reference, opt.diag_loading);
    } catch (const Error &e) {
      if (e.kind() != ErrorKind::numeric) throw;
      ++result.passthrough_bins;
    }
  }

  const ComplexSpectrogram enhanced = apply_beamformer(result.filter, y);
  const MultichannelWaveform full = istft(enhanced, cfg);
  result.enhanced = MultichannelWaveform(full.samples.middleCols(front, mixture.length()),
                                         mixture.sample_rate);
  return result;
}

}  // namespace mvdrsep
