// Copyright 2026 mvdrsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Shoebox room simulation: scenario sampling, image-source impulse responses
// and level-controlled mixing of target, interferer and point-source noise.

#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mvdrsep/error.hpp"
#include "mvdrsep/signal_core.hpp"

namespace mvdrsep {

inline constexpr double kSpeedOfSound = 343.0;

struct ArrayGeometry {
  std::vector<Eigen::Vector3d> mic_positions;  // relative to the array centre
  int reference_index = 0;

  int num_mics() const { return static_cast<int>(mic_positions.size()); }

  /// 15-channel symmetric linear array along x with gaps
  /// [7,6,5,4,3,2,1,1,2,3,4,5,6,7] cm, centred at the origin.
  static ArrayGeometry symmetric_linear_15() {
    constexpr std::array<double, 14> gaps_cm = {7, 6, 5, 4, 3, 2, 1,
                                                1, 2, 3, 4, 5, 6, 7};
    double total = 0.0;
    for (double g : gaps_cm) total += g;
    ArrayGeometry geo;
    double x = -total / 200.0;
    geo.mic_positions.emplace_back(x, 0.0, 0.0);
    for (double g : gaps_cm) {
      x += g / 100.0;
      geo.mic_positions.emplace_back(x, 0.0, 0.0);
    }
    return geo;
  }

  /// Unit vector along the array line; throws if the mics are not collinear.
  Eigen::Vector3d axis() const {
    require(num_mics() >= 2, ErrorKind::config, "AF requires linear array");
    Eigen::Vector3d dir = mic_positions.back() - mic_positions.front();
    require(dir.norm() > 1e-9, ErrorKind::config, "AF requires linear array");
    dir.normalize();
    for (const auto &p : mic_positions) {
      const Eigen::Vector3d rel = p - mic_positions.front();
      require((rel - rel.dot(dir) * dir).norm() < 1e-6, ErrorKind::config,
              "AF requires linear array");
    }
    return dir;
  }

  /// Signed coordinate of every mic along axis().
  std::vector<double> axis_coordinates() const {
    const Eigen::Vector3d dir = axis();
    std::vector<double> out;
    for (const auto &p : mic_positions) out.push_back(p.dot(dir));
    return out;
  }

  void validate() const {
    require(num_mics() >= 1, ErrorKind::config, "array has no microphones");
    require(reference_index >= 0 && reference_index < num_mics(), ErrorKind::config,
            "reference index out of range");
  }
};

struct AngleBin {
  double lo, hi;  // degrees, [lo, hi)
};

inline const std::array<AngleBin, 4> &angle_bins() {
  static const std::array<AngleBin, 4> bins = {
      AngleBin{0, 15}, AngleBin{15, 45}, AngleBin{45, 90}, AngleBin{90, 180}};
  return bins;
}

inline std::string angle_bin_label(int bin) {
  const auto &b = angle_bins().at(bin);
  return "[" + std::to_string(static_cast<int>(b.lo)) + "," +
         std::to_string(static_cast<int>(b.hi)) + ")";
}

/// Index of the bin containing an angle difference; 180 itself joins the last bin.
inline int angle_bin_of(double diff_deg) {
  diff_deg = std::abs(diff_deg);
  const auto &bins = angle_bins();
  for (int i = 0; i < static_cast<int>(bins.size()); ++i)
    if (diff_deg >= bins[i].lo && diff_deg < bins[i].hi) return i;
  if (diff_deg == 180.0) return 3;
  fail(ErrorKind::data, "angle difference outside [0, 180]");
}

struct SimulationConfig {
  Eigen::Vector3d room_min{4.0, 4.0, 3.0};
  Eigen::Vector3d room_max{10.0, 10.0, 6.0};
  double t60_min = 0.14, t60_max = 0.92;
  double distance_min = 1.0, distance_max = 5.0;
  std::vector<double> snr_choices{0, 5, 10, 15, 20};
  std::vector<double> sir_choices{-6, 0, 6};
  double overlap_ratio = 0.8;
  double wall_margin = 0.3;
  int sample_rate = 16000;
  int max_attempts = 1000;

  void validate() const {
    require((room_min.array() > 0).all() && (room_max.array() >= room_min.array()).all(),
            ErrorKind::config, "invalid room dimension range");
    require(t60_min >= 0 && t60_max >= t60_min, ErrorKind::config, "invalid T60 range");
    require(distance_min > 0 && distance_max >= distance_min, ErrorKind::config,
            "invalid source distance range");
    require(!snr_choices.empty() && !sir_choices.empty(), ErrorKind::config,
            "SNR/SIR choice lists must be non-empty");
    require(overlap_ratio >= 0 && overlap_ratio <= 1, ErrorKind::config,
            "overlap_ratio must be in [0, 1]");
    require(sample_rate > 0, ErrorKind::config, "sample_rate must be positive");
  }
};

struct RoomScenario {
  Eigen::Vector3d room_dims = Eigen::Vector3d::Zero();
  double t60 = 0.0;
  Eigen::Vector3d array_center = Eigen::Vector3d::Zero();
  Eigen::Vector3d target_pos = Eigen::Vector3d::Zero();
  Eigen::Vector3d interferer_pos = Eigen::Vector3d::Zero();
  Eigen::Vector3d noise_pos = Eigen::Vector3d::Zero();
  double target_angle = 0.0;  // degrees from the array axis
  double interferer_angle = 0.0;
  double target_distance = 0.0;
  double interferer_distance = 0.0;
  double snr = 0.0;  // dB
  double sir = 0.0;  // dB
  double overlap_ratio = 0.8;
  bool interferer_leads = false;
  int angle_bin = 0;
  std::uint64_t seed = 0;

  double angle_difference() const { return std::abs(target_angle - interferer_angle); }
};

namespace detail {

inline bool inside_room(const Eigen::Vector3d &p, const Eigen::Vector3d &room,
                        double margin) {
  return (p.array() >= margin).all() && (p.array() <= room.array() - margin).all();
}

inline Eigen::Vector3d source_position(const Eigen::Vector3d &center, double angle_deg,
                                       double distance) {
  const double a = angle_deg * std::numbers::pi / 180.0;
  return center + distance * Eigen::Vector3d(std::cos(a), std::sin(a), 0.0);
}

}  // namespace detail

/// Draws one scenario. Every field is a deterministic function of `seed`.
inline RoomScenario sample_scenario(const SimulationConfig &cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  auto pick = [&](const std::vector<double> &choices) {
    std::uniform_int_distribution<std::size_t> d(0, choices.size() - 1);
    return choices[d(rng)];
  };

  RoomScenario s;
  s.seed = seed;
  for (int k = 0; k < 3; ++k) s.room_dims(k) = uniform(cfg.room_min(k), cfg.room_max(k));
  s.t60 = uniform(cfg.t60_min, cfg.t60_max);
  s.snr = pick(cfg.snr_choices);
  s.sir = pick(cfg.sir_choices);
  s.overlap_ratio = cfg.overlap_ratio;
  s.interferer_leads = std::bernoulli_distribution(0.5)(rng);

  // Bin first, then the difference inside it, so bins are equiprobable.
  s.angle_bin = std::uniform_int_distribution<int>(0, 3)(rng);
  const AngleBin bin = angle_bins()[s.angle_bin];
  const double diff = uniform(bin.lo, bin.hi);
  for (int attempt = 0;; ++attempt) {
    require(attempt < cfg.max_attempts, ErrorKind::data,
            "could not place interferer angle");
    s.target_angle = uniform(0.0, 180.0);
    const bool plus = std::bernoulli_distribution(0.5)(rng);
    const double first = s.target_angle + (plus ? diff : -diff);
    const double second = s.target_angle + (plus ? -diff : diff);
    if (first >= 0.0 && first <= 180.0) {
      s.interferer_angle = first;
      break;
    }
    if (second >= 0.0 && second <= 180.0) {
      s.interferer_angle = second;
      break;
    }
  }

  const double m = cfg.wall_margin;
  const Eigen::Vector3d &room = s.room_dims;
  for (int attempt = 0;; ++attempt) {
    require(attempt < cfg.max_attempts, ErrorKind::data,
            "geometrically infeasible scenario after " +
                std::to_string(cfg.max_attempts) + " attempts");
    Eigen::Vector3d center(uniform(m + 0.3, room.x() - m - 0.3), uniform(m, room.y() - m),
                           uniform(1.0, std::min(2.0, room.z() - m)));
    const double dt = uniform(cfg.distance_min, cfg.distance_max);
    const double di = uniform(cfg.distance_min, cfg.distance_max);
    const Eigen::Vector3d tp = detail::source_position(center, s.target_angle, dt);
    const Eigen::Vector3d ip = detail::source_position(center, s.interferer_angle, di);
    const Eigen::Vector3d np(uniform(m, room.x() - m), uniform(m, room.y() - m),
                             uniform(m, room.z() - m));
    if (!detail::inside_room(tp, room, m) || !detail::inside_room(ip, room, m)) continue;
    if ((np - center).norm() < 0.5 || (np - tp).norm() < 0.3 || (np - ip).norm() < 0.3)
      continue;
    s.array_center = center;
    s.target_pos = tp;
    s.interferer_pos = ip;
    s.noise_pos = np;
    s.target_distance = dt;
    s.interferer_distance = di;
    break;
  }
  return s;
}

struct ImpulseResponse {
  Eigen::VectorXd taps;
  int sample_rate = 16000;
  double direct_path_delay = 0.0;  // samples, fractional
};

inline constexpr int kSincTaps = 81;

/// Uniform wall reflection coefficient beta = sqrt(1 - alpha) with alpha from
/// Eyring's formula. t60 == 0 means anechoic.
inline double eyring_reflection_coefficient(const Eigen::Vector3d &room, double t60) {
  require(t60 >= 0.0, ErrorKind::config, "t60 must be non-negative");
  if (t60 == 0.0) return 0.0;
  const double volume = room.prod();
  const double surface =
      2.0 * (room.x() * room.y() + room.x() * room.z() + room.y() * room.z());
  const double alpha = 1.0 - std::exp(-0.161 * volume / (surface * t60));
  require(alpha < 1.0, ErrorKind::config, "infeasible T60");
  return std::sqrt(1.0 - alpha);
}

inline int default_max_order(const Eigen::Vector3d &room, double t60) {
  const int order = static_cast<int>(std::ceil(kSpeedOfSound * t60 / room.minCoeff())) + 1;
  return std::min(order, 40);
}

inline constexpr double kRirHighpassHz = 100.0;

/// Allen-Berkley 100 Hz high-pass. The image sum has only positive gains, so
/// reflections pile up a DC offset that this removes.
inline void highpass_rir(Eigen::VectorXd &taps, int sample_rate) {
  const double w = 2.0 * std::numbers::pi * kRirHighpassHz / sample_rate;
  const double r1 = std::exp(-w), b1 = 2.0 * r1 * std::cos(w), b2 = -r1 * r1, a1 = -(1.0 + r1);
  double y0 = 0.0, y1 = 0.0, y2 = 0.0;
  for (auto &v : taps) {
    y2 = y1;
    y1 = y0;
    y0 = b1 * y1 + b2 * y2 + v;
    v = y0 + a1 * y1 + r1 * y2;
  }
}

/// Image-source RIR for an explicit wall reflection coefficient; reverberant
/// responses (beta > 0) are high-passed. `length` <= 0 selects the direct
/// path plus half the interpolation kernel.
inline ImpulseResponse image_source_rir(const Eigen::Vector3d &room,
                                        const Eigen::Vector3d &source,
                                        const Eigen::Vector3d &mic, double beta,
                                        int sample_rate, int max_order,
                                        Eigen::Index length = 0) {
  require(detail::inside_room(source, room, 1e-9) && detail::inside_room(mic, room, 1e-9),
          ErrorKind::config, "source and microphone must lie strictly inside the room");
  require(sample_rate > 0, ErrorKind::config, "sample_rate must be positive");
  require(beta >= 0.0 && beta <= 1.0, ErrorKind::config,
          "reflection coefficient must be in [0, 1]");
  const double direct = (source - mic).norm();
  require(direct >= 0.01, ErrorKind::config, "source-microphone distance below 1 cm");

  const double samples_per_meter = sample_rate / kSpeedOfSound;
  constexpr int half = kSincTaps / 2;
  ImpulseResponse rir;
  rir.sample_rate = sample_rate;
  rir.direct_path_delay = direct * samples_per_meter;
  length = std::max<Eigen::Index>(
      length, static_cast<Eigen::Index>(std::ceil(rir.direct_path_delay)) + half + 1);
  rir.taps = Eigen::VectorXd::Zero(length);

  const double max_distance = (length + half) / samples_per_meter;
  std::array<int, 3> n_max{};
  for (int k = 0; k < 3; ++k)
    n_max[k] = std::min(max_order,
                        static_cast<int>(std::ceil(max_distance / (2.0 * room(k)))) + 1);

  // Hann-windowed sinc centred on the fractional delay. sin(pi*(k - f)) and the
  // window phase are advanced by recurrence rather than per-tap trig calls.
  const Complex window_step = std::polar(1.0, std::numbers::pi / (half + 1));
  double *taps = rir.taps.data();
  auto add_image = [&](double delay, double gain) {
    const double base = std::floor(delay);
    const double frac = delay - base;
    const auto n0 = static_cast<Eigen::Index>(base);
    const double s = std::sin(std::numbers::pi * std::min(frac, 1.0 - frac));
    Complex phase = std::polar(1.0, std::numbers::pi * (-half - frac) / (half + 1));
    for (int k = -half; k <= half; ++k, phase *= window_step) {
      const Eigen::Index n = n0 + k;
      if (n < 0 || n >= length) continue;
      const double t = k - frac;
      double sinc;
      if (t == 0.0) sinc = 1.0;
      else sinc = ((k & 1) ? s : -s) / (std::numbers::pi * t);
      taps[n] += gain * 0.5 * (1.0 + phase.real()) * sinc;
    }
  };

  const double inv_4pi = 1.0 / (4.0 * std::numbers::pi);
  for (int qx = 0; qx <= 1; ++qx)
    for (int qy = 0; qy <= 1; ++qy)
      for (int qz = 0; qz <= 1; ++qz)
        for (int mx = -n_max[0]; mx <= n_max[0]; ++mx) {
          const int rx = std::abs(mx - qx) + std::abs(mx);
          if (rx > max_order) continue;
          const double dx = (1 - 2 * qx) * source.x() + 2.0 * mx * room.x() - mic.x();
          for (int my = -n_max[1]; my <= n_max[1]; ++my) {
            const int ry = std::abs(my - qy) + std::abs(my);
            if (rx + ry > max_order) continue;
            const double dy = (1 - 2 * qy) * source.y() + 2.0 * my * room.y() - mic.y();
            for (int mz = -n_max[2]; mz <= n_max[2]; ++mz) {
              const int rz = std::abs(mz - qz) + std::abs(mz);
              const int order = rx + ry + rz;
              if (order > max_order) continue;
              if (order > 0 && beta == 0.0) continue;
              const double dz = (1 - 2 * qz) * source.z() + 2.0 * mz * room.z() - mic.z();
              const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
              const double delay = dist * samples_per_meter;
              if (delay - half >= static_cast<double>(length)) continue;
              add_image(delay, std::pow(beta, order) * inv_4pi / dist);
            }
          }
        }
  if (beta > 0.0) highpass_rir(rir.taps, sample_rate);
  return rir;
}

inline double estimate_t60(const ImpulseResponse &rir);

/// Reflection coefficient that makes the simulated decay hit `t60`.
///
/// The image lattice of a shoebox is not a diffuse field: paths that cross few
/// walls dominate the tail, so Eyring's beta alone yields decays 30-50% too
/// long. Eyring's value seeds a secant refinement on kappa = -2 ln(beta)
/// (decay time scales as 1/kappa), measured on a fixed source/mic placement.
inline double t60_reflection_coefficient(const Eigen::Vector3d &room, double t60,
                                         int sample_rate, int max_order = -1) {
  double beta = eyring_reflection_coefficient(room, t60);
  if (beta == 0.0) return 0.0;
  if (max_order < 0) max_order = default_max_order(room, t60);
  const Eigen::Vector3d src = room.cwiseProduct(Eigen::Vector3d(0.31, 0.43, 0.52));
  const Eigen::Vector3d mic = room.cwiseProduct(Eigen::Vector3d(0.62, 0.55, 0.45));
  const auto length = static_cast<Eigen::Index>(std::ceil(t60 * sample_rate));
  double kappa = -2.0 * std::log(beta);
  for (int iter = 0; iter < 4; ++iter) {
    const auto rir = image_source_rir(room, src, mic, std::exp(-kappa / 2.0), sample_rate,
                                      max_order, length);
    double measured;
    try {
      measured = estimate_t60(rir);
    } catch (const Error &) {
      break;
    }
    const double ratio = measured / t60;
    if (std::abs(ratio - 1.0) < 0.02) break;
    kappa *= std::clamp(ratio, 0.5, 2.0);
  }
  return std::exp(-kappa / 2.0);
}

/// Image-source RIR for a target reverberation time. Fractional delays use an
/// 81-tap Hann-windowed sinc. `max_order` < 0 selects the default order;
/// `length` <= 0 selects max(t60*fs, direct path + kernel).
inline ImpulseResponse simulate_rir(const Eigen::Vector3d &room,
                                    const Eigen::Vector3d &source,
                                    const Eigen::Vector3d &mic, double t60,
                                    int sample_rate, int max_order = -1,
                                    Eigen::Index length = 0) {
  require(t60 >= 0.0, ErrorKind::config, "t60 must be non-negative");
  if (max_order < 0) max_order = default_max_order(room, t60);
  if (length <= 0) length = static_cast<Eigen::Index>(std::ceil(t60 * sample_rate));
  require(detail::inside_room(source, room, 1e-9) && detail::inside_room(mic, room, 1e-9),
          ErrorKind::config, "source and microphone must lie strictly inside the room");
  require((source - mic).norm() >= 0.01, ErrorKind::config,
          "source-microphone distance below 1 cm");
  const double beta = t60_reflection_coefficient(room, t60, sample_rate, max_order);
  return image_source_rir(room, source, mic, beta, sample_rate, max_order, length);
}

/// Schroeder backward integration with a least-squares line on the
/// -5 dB .. -25 dB span, extrapolated to -60 dB.
inline double estimate_t60(const ImpulseResponse &rir) {
  const Eigen::Index n = rir.taps.size();
  Eigen::VectorXd edc(n);
  double acc = 0.0;
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    acc += rir.taps(i) * rir.taps(i);
    edc(i) = acc;
  }
  require(n > 0 && acc > 0.0, ErrorKind::data, "impulse response has no energy");
  Eigen::Index start = -1, stop = -1;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double db = 10.0 * std::log10(edc(i) / acc);
    if (start < 0 && db <= -5.0) start = i;
    if (db <= -25.0) {
      stop = i;
      break;
    }
  }
  require(start >= 0 && stop > start + 1, ErrorKind::data, "insufficient decay");

  double st = 0, sy = 0, stt = 0, sty = 0;
  const auto count = static_cast<double>(stop - start + 1);
  for (Eigen::Index i = start; i <= stop; ++i) {
    const double t = static_cast<double>(i) / rir.sample_rate;
    const double y = 10.0 * std::log10(edc(i) / acc);
    st += t;
    sy += y;
    stt += t * t;
    sty += t * y;
  }
  const double slope = (count * sty - st * sy) / (count * stt - st * st);
  require(slope < 0.0, ErrorKind::data, "insufficient decay");
  return -60.0 / slope;
}

/// Linear convolution of one dry signal with many filters, truncated to
/// `out_len` samples. The dry spectrum is computed once.
class FftConvolver {
 public:
  FftConvolver(const Eigen::VectorXd &signal, Eigen::Index max_filter_len,
               Eigen::Index out_len)
      : out_len_(out_len) {
    size_ = 1;
    while (size_ < signal.size() + max_filter_len - 1) size_ <<= 1;
    std::vector<double> padded(size_, 0.0);
    std::copy(signal.data(), signal.data() + signal.size(), padded.begin());
    fft_.fwd(signal_spec_, padded);
    max_filter_len_ = max_filter_len;
  }

  Eigen::VectorXd apply(const Eigen::VectorXd &filter) {
    require(filter.size() <= max_filter_len_, ErrorKind::data, "filter too long");
    std::vector<double> padded(size_, 0.0);
    std::copy(filter.data(), filter.data() + filter.size(), padded.begin());
    std::vector<Complex> spec;
    fft_.fwd(spec, padded);
    for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= signal_spec_[k];
    std::vector<double> out;
    fft_.inv(out, spec);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(out_len_);
    const Eigen::Index n = std::min<Eigen::Index>(out_len_, size_);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = out[i];
    return y;
  }

 private:
  Eigen::FFT<double> fft_;
  std::vector<Complex> signal_spec_;
  Eigen::Index size_ = 1;
  Eigen::Index max_filter_len_ = 0;
  Eigen::Index out_len_ = 0;
};

struct MixResult {
  MultichannelWaveform mixture;
  MultichannelWaveform target;
  MultichannelWaveform interferer;
  MultichannelWaveform noise;
};

inline double channel_power(const MultichannelWaveform &w, Eigen::Index ch) {
  return w.samples.row(ch).squaredNorm() / static_cast<double>(w.length());
}

/// Scales interferer and noise so reference-channel power ratios hit the
/// requested SIR/SNR, then sums.
inline MixResult mix_at_levels(const MultichannelWaveform &target,
                               const MultichannelWaveform &interferer,
                               const MultichannelWaveform &noise, double sir_db,
                               double snr_db, Eigen::Index reference = 0) {
  require(target.channels() == interferer.channels() &&
              target.channels() == noise.channels() &&
              target.length() == interferer.length() && target.length() == noise.length(),
          ErrorKind::data, "mix components must have equal shapes");
  require(target.length() > 0 && reference >= 0 && reference < target.channels(),
          ErrorKind::data, "invalid reference channel");
  const double pt = channel_power(target, reference);
  const double pi = channel_power(interferer, reference);
  const double pn = channel_power(noise, reference);
  require(pt > 0.0, ErrorKind::data, "target has zero power");
  require(pi > 0.0, ErrorKind::data, "interferer has zero power");
  require(pn > 0.0, ErrorKind::data, "noise has zero power");

  MixResult out;
  out.target = target;
  out.interferer = interferer;
  out.noise = noise;
  out.interferer.samples *= std::sqrt(pt / (pi * std::pow(10.0, sir_db / 10.0)));
  out.noise.samples *= std::sqrt(pt / (pn * std::pow(10.0, snr_db / 10.0)));
  out.mixture = out.target;
  out.mixture.samples += out.interferer.samples;
  out.mixture.samples += out.noise.samples;
  return out;
}

struct RenderedUtterance {
  MultichannelWaveform mixture;
  MultichannelWaveform target;  // reverberant target image, the separation reference
  MultichannelWaveform interferer;
  MultichannelWaveform noise;
  Eigen::Index target_offset = 0;
  Eigen::Index interferer_offset = 0;
  double realized_overlap_ratio = 0.0;  // overlap / shorter utterance
};

/// Layout of target and interferer on a common timeline for a given overlap
/// ratio (overlap measured against the shorter utterance).
struct OverlapLayout {
  Eigen::Index target_offset = 0, interferer_offset = 0, length = 0;
  double realized_ratio = 0.0;
};

inline OverlapLayout overlap_layout(Eigen::Index target_len, Eigen::Index interferer_len,
                                    double ratio, bool interferer_leads) {
  require(target_len > 0 && interferer_len > 0, ErrorKind::data, "empty dry signal");
  require(ratio >= 0 && ratio <= 1, ErrorKind::config, "overlap ratio must be in [0, 1]");
  const Eigen::Index shorter = std::min(target_len, interferer_len);
  const auto overlap = static_cast<Eigen::Index>(std::llround(ratio * shorter));
  OverlapLayout l;
  if (interferer_leads) l.target_offset = interferer_len - overlap;
  else l.interferer_offset = target_len - overlap;
  l.length = std::max(l.target_offset + target_len, l.interferer_offset + interferer_len);
  const Eigen::Index ov =
      std::min(l.target_offset + target_len, l.interferer_offset + interferer_len) -
      std::max(l.target_offset, l.interferer_offset);
  l.realized_ratio = static_cast<double>(std::max<Eigen::Index>(ov, 0)) / shorter;
  return l;
}

namespace detail {

inline MultichannelWaveform spatialize(const Eigen::VectorXd &dry, Eigen::Index offset,
                                       Eigen::Index length, const RoomScenario &sc,
                                       double beta, const Eigen::Vector3d &source,
                                       const ArrayGeometry &geo, int fs) {
  Eigen::VectorXd placed = Eigen::VectorXd::Zero(length);
  const Eigen::Index n = std::min<Eigen::Index>(dry.size(), length - offset);
  placed.segment(offset, n) = dry.head(n);

  const int order = default_max_order(sc.room_dims, sc.t60);
  const auto rir_len = static_cast<Eigen::Index>(std::ceil(sc.t60 * fs));
  std::vector<ImpulseResponse> rirs;
  Eigen::Index longest = 1;
  for (const auto &rel : geo.mic_positions) {
    rirs.push_back(image_source_rir(sc.room_dims, source, sc.array_center + rel, beta, fs,
                                    order, rir_len));
    longest = std::max(longest, rirs.back().taps.size());
  }
  FftConvolver conv(placed, longest, length);
  MultichannelWaveform out(Eigen::MatrixXd(geo.num_mics(), length), fs);
  for (int m = 0; m < geo.num_mics(); ++m)
    out.samples.row(m) = conv.apply(rirs[m].taps).transpose();
  return out;
}

}  // namespace detail

/// Convolves the dry sources with their per-mic RIRs, places the interferer
/// to realise the scenario's overlap ratio and mixes at the scenario SIR/SNR.
inline RenderedUtterance render_mixture(const RoomScenario &scenario,
                                        const ArrayGeometry &geometry,
                                        const Eigen::VectorXd &dry_target,
                                        const Eigen::VectorXd &dry_interferer,
                                        const Eigen::VectorXd &dry_noise, int sample_rate) {
  geometry.validate();
  const OverlapLayout layout =
      overlap_layout(dry_target.size(), dry_interferer.size(), scenario.overlap_ratio,
                     scenario.interferer_leads);
  require(dry_noise.size() >= layout.length, ErrorKind::data,
          "dry noise shorter than the mixture");

  const double beta =
      t60_reflection_coefficient(scenario.room_dims, scenario.t60, sample_rate);
  const auto target = detail::spatialize(dry_target, layout.target_offset, layout.length,
                                         scenario, beta, scenario.target_pos, geometry,
                                         sample_rate);
  const auto interferer =
      detail::spatialize(dry_interferer, layout.interferer_offset, layout.length, scenario,
                         beta, scenario.interferer_pos, geometry, sample_rate);
  const auto noise =
      detail::spatialize(dry_noise.head(layout.length), 0, layout.length, scenario, beta,
                         scenario.noise_pos, geometry, sample_rate);

  MixResult mix = mix_at_levels(target, interferer, noise, scenario.sir, scenario.snr,
                                geometry.reference_index);
  RenderedUtterance out;
  out.mixture = std::move(mix.mixture);
  out.target = std::move(mix.target);
  out.interferer = std::move(mix.interferer);
  out.noise = std::move(mix.noise);
  out.target_offset = layout.target_offset;
  out.interferer_offset = layout.interferer_offset;
  out.realized_overlap_ratio = layout.realized_ratio;
  return out;
}

}  // namespace mvdrsep
