// Copyright 2026 mvdrsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Inter-microphone phase differences, far-field steering phases and the
// angle feature, plus assembly of the separation front-end input.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "mvdrsep/array_file.hpp"
#include "mvdrsep/error.hpp"
#include "mvdrsep/room_sim.hpp"
#include "mvdrsep/signal_core.hpp"

namespace mvdrsep {

struct MicPairSet {
  std::vector<std::pair<int, int>> pairs;

  std::size_t size() const { return pairs.size(); }

  /// Outer-to-inner symmetric pairs of the 15-mic array.
  static MicPairSet wide_aperture_default() {
    return {{{0, 14}, {1, 13}, {2, 12}, {3, 11}, {4, 10}, {5, 9}}};
  }

  void validate(Eigen::Index channels) const {
    for (auto [i, j] : pairs) {
      require(i != j, ErrorKind::config, "mic pair must use two distinct channels");
      require(i >= 0 && j >= 0 && i < channels && j < channels, ErrorKind::config,
              "mic pair index out of range");
    }
  }
};

struct IpdFeatures {
  std::vector<Eigen::MatrixXd> cos;  // per pair, [T x F]
  std::vector<Eigen::MatrixXd> sin;
};

struct SpatialFeatures {
  IpdFeatures ipd;
  Eigen::MatrixXd af;  // [T x F]
};

/// Phase of channel i minus phase of channel j as (cos, sin). Bins where
/// either channel is exactly zero get IPD 0.
inline IpdFeatures ipd(const ComplexSpectrogram &spec, const MicPairSet &pairs) {
  pairs.validate(spec.num_channels());
  IpdFeatures out;
  const Eigen::Index T = spec.num_frames(), F = spec.num_bins();
  for (auto [i, j] : pairs.pairs) {
    Eigen::MatrixXd c(T, F), s(T, F);
    for (Eigen::Index f = 0; f < F; ++f)
      for (Eigen::Index t = 0; t < T; ++t) {
        const Complex z = spec.channels[i](t, f) * std::conj(spec.channels[j](t, f));
        const double mag = std::abs(z);
        if (mag == 0.0) {
          c(t, f) = 1.0;
          s(t, f) = 0.0;
        } else {
          c(t, f) = z.real() / mag;
          s(t, f) = z.imag() / mag;
        }
      }
    out.cos.push_back(std::move(c));
    out.sin.push_back(std::move(s));
  }
  return out;
}

/// Raw IPD angles in (-pi, pi], one [T x F] matrix per pair.
inline std::vector<Eigen::MatrixXd> ipd_angles(const ComplexSpectrogram &spec,
                                               const MicPairSet &pairs) {
  const IpdFeatures f = ipd(spec, pairs);
  std::vector<Eigen::MatrixXd> out;
  for (std::size_t p = 0; p < f.cos.size(); ++p)
    out.push_back(f.sin[p].binaryExpr(f.cos[p], [](double s, double c) {
      return std::atan2(s, c);
    }));
  return out;
}

/// Bin centre frequencies of a one-sided spectrum.
inline std::vector<double> bin_frequencies(const StftConfig &cfg) {
  std::vector<double> f(cfg.num_bins());
  for (int k = 0; k < cfg.num_bins(); ++k)
    f[k] = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
  return f;
}

/// Far-field phase difference 2*pi*f*(p_i - p_j)*cos(theta)/c, [pairs x F].
inline Eigen::MatrixXd steering_phase(const ArrayGeometry &geometry, double angle_deg,
                                      const std::vector<double> &freqs,
                                      const MicPairSet &pairs) {
  const std::vector<double> coord = geometry.axis_coordinates();
  pairs.validate(geometry.num_mics());
  const double cos_theta = std::cos(angle_deg * std::numbers::pi / 180.0);
  Eigen::MatrixXd phase(pairs.size(), freqs.size());
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs.pairs[p];
    const double tau = (coord[i] - coord[j]) * cos_theta / kSpeedOfSound;
    for (std::size_t k = 0; k < freqs.size(); ++k)
      phase(p, k) = 2.0 * std::numbers::pi * freqs[k] * tau;
  }
  return phase;
}

/// Mean over pairs of cos(IPD - steering phase) for the hypothesised angle.
inline Eigen::MatrixXd angle_feature(const ComplexSpectrogram &spec,
                                     const ArrayGeometry &geometry, double target_angle,
                                     const MicPairSet &pairs) {
  require(pairs.size() > 0, ErrorKind::config, "angle feature needs at least one pair");
  const IpdFeatures f = ipd(spec, pairs);
  const Eigen::MatrixXd phase =
      steering_phase(geometry, target_angle, bin_frequencies(spec.config), pairs);
  const Eigen::Index T = spec.num_frames(), F = spec.num_bins();
  Eigen::MatrixXd af = Eigen::MatrixXd::Zero(T, F);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    for (Eigen::Index k = 0; k < F; ++k) {
      // cos(a - b) = cos a cos b + sin a sin b
      const double cb = std::cos(phase(p, k)), sb = std::sin(phase(p, k));
      af.col(k) += f.cos[p].col(k) * cb + f.sin[p].col(k) * sb;
    }
  }
  af /= static_cast<double>(pairs.size());
  return af.cwiseMax(-1.0).cwiseMin(1.0);
}

inline SpatialFeatures spatial_features(const ComplexSpectrogram &spec,
                                        const ArrayGeometry &geometry,
                                        double target_angle, const MicPairSet &pairs) {
  return {ipd(spec, pairs), angle_feature(spec, geometry, target_angle, pairs)};
}

/// Per-frame concatenation (LPS, IPD cos..., IPD sin..., AF) -> [T x D_in].
inline Eigen::MatrixXd assemble_frontend_input(const Eigen::MatrixXd &lps,
                                               const IpdFeatures &ipd_features,
                                               const Eigen::MatrixXd &af) {
  const Eigen::Index T = lps.rows();
  Eigen::Index width = lps.cols() + af.cols();
  require(af.rows() == T, ErrorKind::data, "frame count mismatch between LPS and AF");
  require(ipd_features.cos.size() == ipd_features.sin.size(), ErrorKind::data,
          "IPD cos/sin pair count mismatch");
  for (std::size_t p = 0; p < ipd_features.cos.size(); ++p) {
    require(ipd_features.cos[p].rows() == T && ipd_features.sin[p].rows() == T,
            ErrorKind::data, "frame count mismatch between LPS and IPD");
    width += ipd_features.cos[p].cols() + ipd_features.sin[p].cols();
  }
  Eigen::MatrixXd out(T, width);
  Eigen::Index col = 0;
  auto put = [&](const Eigen::MatrixXd &m) {
    out.middleCols(col, m.cols()) = m;
    col += m.cols();
  };
  put(lps);
  for (const auto &m : ipd_features.cos) put(m);
  for (const auto &m : ipd_features.sin) put(m);
  put(af);
  return out;
}

/// Writes LPS, IPD and AF arrays of one utterance with a layout description.
inline void write_feature_dump(const std::string &path, const std::string &utt_id,
                               const Eigen::MatrixXd &lps, const SpatialFeatures &feats,
                               const MicPairSet &pairs) {
  ArrayFile file;
  file.meta["utterance"] = utt_id;
  file.meta["dtype"] = "f64";
  file.meta["layout"] = "frames x bins";
  nlohmann::json pj = nlohmann::json::array();
  for (auto [i, j] : pairs.pairs) pj.push_back({i, j});
  file.meta["pairs"] = pj;
  file.arrays.push_back(NamedArray::from_matrix("lps", lps));
  for (std::size_t p = 0; p < feats.ipd.cos.size(); ++p) {
    file.arrays.push_back(
        NamedArray::from_matrix("ipd_cos_" + std::to_string(p), feats.ipd.cos[p]));
    file.arrays.push_back(
        NamedArray::from_matrix("ipd_sin_" + std::to_string(p), feats.ipd.sin[p]));
  }
  file.arrays.push_back(NamedArray::from_matrix("af", feats.af));
  write_array_file(path, file);
}

}  // namespace mvdrsep
