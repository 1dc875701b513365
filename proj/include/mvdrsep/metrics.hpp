// Copyright 2026 mvdrsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mvdrsep/error.hpp"

namespace mvdrsep {

inline constexpr double kSiSnrEps = 1e-12;

namespace detail {

inline void check_si_snr_inputs(const Eigen::VectorXd &est, const Eigen::VectorXd &ref) {
  require(est.size() == ref.size(), ErrorKind::data, "SI-SNR inputs differ in length");
  require(ref.size() > 0, ErrorKind::data, "SI-SNR inputs are empty");
}

}  // namespace detail

/// Scale-invariant SNR in dB after removing the means of both signals.
inline double si_snr(const Eigen::VectorXd &est, const Eigen::VectorXd &ref) {
  detail::check_si_snr_inputs(est, ref);
  const Eigen::VectorXd e = est.array() - est.mean();
  const Eigen::VectorXd r = ref.array() - ref.mean();
  const double rr = r.squaredNorm();
  require(rr > 0.0, ErrorKind::data, "SI-SNR reference has zero power");
  const Eigen::VectorXd target = (e.dot(r) / rr) * r;
  const Eigen::VectorXd noise = e - target;
  return 10.0 * std::log10(target.squaredNorm() / (noise.squaredNorm() + kSiSnrEps));
}

/// Analytic gradient of si_snr with respect to `est`.
///
/// With zero-mean e, r: p = <e,r>, q = |r|^2, P = p^2/q, E = |e - (p/q) r|^2,
/// SI = 10/ln10 (ln P - ln(E + eps)); dP/de = 2 (p/q) r, dE/de = 2 (e - (p/q) r).
/// The gradient is already zero-mean, so the mean-removal Jacobian is a no-op.
inline Eigen::VectorXd si_snr_grad(const Eigen::VectorXd &est, const Eigen::VectorXd &ref) {
  detail::check_si_snr_inputs(est, ref);
  const Eigen::VectorXd e = est.array() - est.mean();
  const Eigen::VectorXd r = ref.array() - ref.mean();
  const double q = r.squaredNorm();
  require(q > 0.0, ErrorKind::data, "SI-SNR reference has zero power");
  const double p = e.dot(r);
  const Eigen::VectorXd proj = (p / q) * r;
  const Eigen::VectorXd resid = e - proj;
  const double P = proj.squaredNorm();
  const double E = resid.squaredNorm() + kSiSnrEps;
  const double scale = 10.0 / std::numbers::ln10;
  Eigen::VectorXd g = scale * (2.0 * proj / P - 2.0 * resid / E);
  return g.array() - g.mean();
}

struct LossTerms {
  double l_att = 0.0;
  double l_ctc = 0.0;
  double beta = 0.3;
};

/// (1 - beta) * L_att + beta * L_ctc
inline double multitask_loss(const LossTerms &terms) {
  require(terms.beta >= 0.0 && terms.beta <= 1.0, ErrorKind::config,
          "beta must be in [0, 1]");
  return std::lerp(terms.l_att, terms.l_ctc, terms.beta);
}

inline double pearson_correlation(const std::vector<double> &xs, const std::vector<double> &ys) {
  require(xs.size() == ys.size(), ErrorKind::data, "series differ in length");
  require(xs.size() >= 2, ErrorKind::data, "correlation needs at least two points");
  const auto n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  require(sxx > 0.0 && syy > 0.0, ErrorKind::data, "degenerate series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct WerBreakdown {
  int substitutions = 0;
  int deletions = 0;
  int insertions = 0;
  int reference_length = 0;
  double wer = 0.0;

  int errors() const { return substitutions + deletions + insertions; }
};

/// Levenshtein alignment with unit costs. On ties the backtrace prefers a
/// substitution (or match), then an insertion, then a deletion.
inline WerBreakdown wer(const std::vector<std::string> &ref,
                        const std::vector<std::string> &hyp) {
  require(!ref.empty(), ErrorKind::data, "empty reference transcript");
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::vector<int>> d(n + 1, std::vector<int>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      d[i][j] = std::min({sub, d[i][j - 1] + 1, d[i - 1][j] + 1});
    }

  WerBreakdown out;
  out.reference_length = static_cast<int>(n);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        d[i][j] == d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++out.substitutions;
      --i;
      --j;
    } else if (j > 0 && d[i][j] == d[i][j - 1] + 1) {
      ++out.insertions;
      --j;
    } else {
      ++out.deletions;
      --i;
    }
  }
  out.wer = static_cast<double>(out.errors()) / static_cast<double>(n);
  return out;
}

/// Whitespace split with ASCII case folding.
inline std::vector<std::string> tokenize_transcript(const std::string &text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string word;
  while (is >> word) {
    std::transform(word.begin(), word.end(), word.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(word);
  }
  return out;
}

}  // namespace mvdrsep
