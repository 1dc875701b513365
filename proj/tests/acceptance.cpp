// Copyright 2026 mvdrsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Acceptance checks. Prints one PASS/FAIL line per criterion; exits non-zero
// if any criterion fails.
//
//   acceptance [--work-dir DIR] [--only N]

#include <unsupported/Eigen/FFT>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mvdrsep/mvdrsep.hpp"

using namespace mvdrsep;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char *f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path &p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

Eigen::MatrixXcd random_complex(Eigen::Index rows, Eigen::Index cols, std::mt19937_64 &rng) {
  std::normal_distribution<double> g(0.0, std::sqrt(0.5));
  Eigen::MatrixXcd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = Complex(g(rng), g(rng));
  return m;
}

Eigen::VectorXd gaussian(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::VectorXd x(n);
  for (auto &v : x) v = g(rng);
  return x;
}

double wrap(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a <= -std::numbers::pi ? a + 2.0 * std::numbers::pi : a;
}

// --- 1 -------------------------------------------------------------------------

Outcome mvdr_correctness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> log_scale(-4.0, 0.0);
  const int sizes[] = {2, 3, 8, 15};
  double worst_identity = 0.0;
  long violations = 0, comparisons = 0;
  for (int pair = 0; pair < 1000; ++pair) {
    const int R = sizes[pair % 4];
    // Point-source target (rank-1 PSD) in full-rank Hermitian PSD noise.
    const Eigen::VectorXcd d = random_complex(R, 1, rng);
    const Eigen::MatrixXcd a = random_complex(R, 2 * R, rng);
    const Eigen::MatrixXcd phi_n = a * a.adjoint() / static_cast<double>(2 * R);
    const Eigen::MatrixXcd phi_x = d * d.adjoint();
    const Eigen::VectorXcd w = mvdr_bin(phi_x, phi_n, 0, 0.0);
    worst_identity = std::max(worst_identity, std::abs(w.dot(d) - d(0)) / std::abs(d(0)));

    // Competing filters share the response v^H d = w^H d: half are independent
    // random draws rescaled to it, half are w + z with z orthogonal to d at
    // scales from 1e-4 to 1 of |w|.
    const double best = w.dot(phi_n * w).real();
    const double dd = d.squaredNorm();
    const Complex response = w.dot(d);
    for (int k = 0; k < 10000; ++k) {
      Eigen::VectorXcd v = random_complex(R, 1, rng);
      if (k % 2 == 0) {
        v *= std::conj(response / v.dot(d));
      } else {
        v -= d * (d.dot(v) / dd);
        v = w + (std::pow(10.0, log_scale(rng)) * w.norm() / v.norm()) * v;
      }
      const double power = v.dot(phi_n * v).real();
      ++comparisons;
      if (power < best * (1.0 - 1e-9)) ++violations;
    }
  }
  const double elapsed = seconds_since(t0);
  return {worst_identity <= 1e-8 && violations == 0 && elapsed < 30.0,
          fmt("max |w^H d - d_ref|/|d_ref| = %.2e over 1000 pairs; %ld/%ld equal-response "
              "filters beat MVDR; %.1f s",
              worst_identity, violations, comparisons, elapsed)};
}

// --- 2 and 7 share one oracle run ------------------------------------------------

struct OracleRun {
  RunManifest sim, bf;
  MetricsReport report;
  FileAccessLog beamform_log;
  double seconds = 0.0;
};

void oracle_run(const fs::path &dir, OracleRun &run) {
  const auto t0 = Clock::now();
  PipelineConfig cfg;
  cfg.num_utts = 50;
  cfg.seed = 2026;
  run.sim = cmd_simulate(cfg, dir / "sim");
  BeamformOptions opt = BeamformOptions::from_config(cfg);
  opt.mask = "irm";
  opt.adapt_mode = AdaptMode::enrollment_free;
  RunContext ctx;
  ctx.access_log = &run.beamform_log;
  run.bf = cmd_beamform(run.sim, opt, dir / "bf", ctx);
  EvaluateOptions eval;
  eval.metrics = {"sisnr"};
  run.report = cmd_evaluate(run.bf, eval);
  run.seconds = seconds_since(t0);
}

Outcome oracle_separation(const OracleRun &run) {
  double gain = 0.0, out = 0.0, in = 0.0;
  for (const auto &r : run.report.records) {
    out += r.at("sisnr_db").get<double>();
    in += r.at("sisnr_input_db").get<double>();
  }
  const auto n = static_cast<double>(run.report.records.size());
  out /= n;
  in /= n;
  gain = out - in;
  return {gain >= 5.0 && run.seconds < 300.0,
          fmt("mean SI-SNR %.2f dB (raw first channel %.2f dB), improvement %.2f dB over "
              "%zu utterances; %.1f s",
              out, in, gain, run.report.records.size(), run.seconds)};
}

Outcome adaptation_contract(const OracleRun &run) {
  std::size_t clean_reads = 0, completed = 0;
  for (const auto &r : run.sim.records) {
    for (const char *key : {"clean_target_path", "enrollment_path"})
      if (r.contains(key) && run.beamform_log.was_read(run.sim.resolve(r, key))) ++clean_reads;
  }
  for (const auto &r : run.bf.records)
    if (r.value("provenance", std::string()) == "enrollment_free" &&
        r.contains("cosine_similarity") && fs::exists(run.bf.resolve(r, "enhanced_path")))
      ++completed;
  const AnalysisResult a = cmd_analyze({run.report});
  const double r = a.r_cosine_sisnr.value_or(0.0);
  return {clean_reads == 0 && completed == run.bf.size() && r < 0.0,
          fmt("%zu/%zu enrollment-free utterances completed, %zu clean-target reads; "
              "Pearson r(cosine, SI-SNR) = %.3f",
              completed, run.bf.size(), clean_reads, r)};
}

// --- 3 -------------------------------------------------------------------------

Outcome simulation_fidelity() {
  const Eigen::Vector3d room(10, 10, 6);
  const std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> placements{
      {{2.5, 3.0, 1.5}, {6.5, 5.5, 1.2}},
      {{7.8, 8.1, 2.0}, {4.0, 2.2, 1.6}},
      {{5.0, 1.5, 4.5}, {5.2, 7.0, 1.0}}};
  double worst = 0.0;
  std::string per;
  for (double x : {0.14, 0.3, 0.5, 0.92}) {
    for (const auto &[src, mic] : placements) {
      const double t = estimate_t60(simulate_rir(room, src, mic, x, 16000));
      worst = std::max(worst, std::abs(t - x) / x);
      per += fmt(" %.3f", t);
    }
  }

  // Direct-path peaks of each channel against the far-field TDOA at 4 m.
  const auto geo = ArrayGeometry::symmetric_linear_15();
  const auto coord = geo.axis_coordinates();
  const Eigen::Vector3d center(5.0, 3.0, 1.5);
  double worst_tdoa = 0.0;
  for (double angle : {20.0, 60.0, 90.0, 120.0, 160.0}) {
    const double a = angle * std::numbers::pi / 180.0;
    const Eigen::Vector3d src = center + 4.0 * Eigen::Vector3d(std::cos(a), std::sin(a), 0.0);
    std::vector<double> peak;
    for (const auto &rel : geo.mic_positions) {
      const auto rir = simulate_rir(room, src, center + rel, 0.3, 16000);
      Eigen::Index k = 0;
      rir.taps.head(static_cast<Eigen::Index>(4.5 / kSpeedOfSound * 16000)).maxCoeff(&k);
      const double ym = rir.taps(k - 1), y0 = rir.taps(k), yp = rir.taps(k + 1);
      peak.push_back(static_cast<double>(k) + 0.5 * (ym - yp) / (ym - 2.0 * y0 + yp));
    }
    for (int m = 1; m < geo.num_mics(); ++m) {
      const double tau = -(coord[m] - coord[0]) * std::cos(a) / kSpeedOfSound * 16000.0;
      worst_tdoa = std::max(worst_tdoa, std::abs((peak[m] - peak[0]) - tau));
    }
  }
  return {worst <= 0.2 && worst_tdoa <= 1.0,
          fmt("T60 estimates for 0.14/0.3/0.5/0.92 s:%s (max relative error %.1f%%); "
              "max TDOA error %.3f samples",
              per.c_str(), 100.0 * worst, worst_tdoa)};
}

// --- 4 -------------------------------------------------------------------------

Outcome feature_analytics() {
  // IPD of integer circular delays against the DFT shift theorem.
  double worst_ipd = 0.0;
  Eigen::FFT<double> fft;
  const Eigen::VectorXd x = gaussian(512, 41);
  for (int delay : {1, 3, 4, 7, 13}) {
    ComplexSpectrogram spec;
    spec.config = StftConfig{};
    for (int ch = 0; ch < 2; ++ch) {
      std::vector<double> buf(512);
      for (int t = 0; t < 512; ++t) buf[t] = ch == 0 ? x(t) : x((t - delay + 512) % 512);
      std::vector<Complex> out;
      fft.fwd(out, buf);
      Eigen::MatrixXcd frame(1, 257);
      for (int k = 0; k <= 256; ++k) frame(0, k) = out[k];
      spec.channels.push_back(frame);
    }
    const auto angles = ipd_angles(spec, MicPairSet{{{0, 1}}});
    for (int k = 1; k < 256; ++k) {
      const double expected = 2.0 * std::numbers::pi * k * delay / 512.0;
      worst_ipd = std::max(worst_ipd, std::abs(wrap(angles[0](0, k) - expected)));
    }
  }

  // AF DOA scan on an anechoic image-method rendering.
  const auto geo = ArrayGeometry::symmetric_linear_15();
  const auto pairs = MicPairSet::wide_aperture_default();
  const Eigen::Vector3d room(12, 12, 6), center(6.0, 3.0, 1.5);
  const Eigen::VectorXd dry = gaussian(16000, 42);
  std::string found;
  bool doa_ok = true;
  for (double truth : {20.0, 60.0, 120.0}) {
    const double a = truth * std::numbers::pi / 180.0;
    const Eigen::Vector3d src = center + 3.0 * Eigen::Vector3d(std::cos(a), std::sin(a), 0.0);
    Eigen::MatrixXd wave = Eigen::MatrixXd::Zero(geo.num_mics(), dry.size());
    for (int m = 0; m < geo.num_mics(); ++m) {
      const auto rir = image_source_rir(room, src, center + geo.mic_positions[m], 0.0, 16000, 0);
      for (Eigen::Index k = 0; k < rir.taps.size(); ++k) {
        if (rir.taps(k) == 0.0) continue;
        const Eigen::Index n = dry.size() - k;
        if (n > 0) wave.row(m).segment(k, n) += rir.taps(k) * dry.head(n).transpose();
      }
    }
    const auto spec = stft(MultichannelWaveform(wave, 16000), {});
    const Eigen::MatrixXd power = spec.channels[0].cwiseAbs2();
    const double floor = 1e-3 * power.mean();
    double best = -2.0, best_angle = -1.0;
    for (double hyp = 0.0; hyp <= 180.0; hyp += 5.0) {
      const Eigen::MatrixXd af = angle_feature(spec, geo, hyp, pairs);
      double sum = 0.0;
      long count = 0;
      for (Eigen::Index t = 0; t < af.rows(); ++t)
        for (Eigen::Index f = 1; f < af.cols(); ++f)
          if (power(t, f) > floor) {
            sum += af(t, f);
            ++count;
          }
      if (sum / count > best) {
        best = sum / count;
        best_angle = hyp;
      }
    }
    doa_ok = doa_ok && std::abs(best_angle - truth) <= 5.0;
    found += fmt(" %g->%g", truth, best_angle);
  }
  return {worst_ipd <= 1e-6 && doa_ok,
          fmt("max IPD shift-theorem error %.2e rad; DOA scan (truth->found):%s", worst_ipd,
              found.c_str())};
}

// --- 5 -------------------------------------------------------------------------

int brute_edit_distance(const std::vector<int> &a, std::size_t i, const std::vector<int> &b,
                        std::size_t j) {
  if (i == a.size()) return static_cast<int>(b.size() - j);
  if (j == b.size()) return static_cast<int>(a.size() - i);
  return std::min({brute_edit_distance(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1),
                   brute_edit_distance(a, i + 1, b, j) + 1,
                   brute_edit_distance(a, i, b, j + 1) + 1});
}

Outcome numerical_objectives() {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> noise_level(0.1, 3.0);
  double worst_grad = 0.0;
  for (int pair = 0; pair < 100; ++pair) {
    const Eigen::VectorXd ref = gaussian(64, 1000 + pair);
    const Eigen::VectorXd est = ref + noise_level(rng) * gaussian(64, 2000 + pair);
    const Eigen::VectorXd g = si_snr_grad(est, ref);
    Eigen::VectorXd fd(64);
    for (Eigen::Index i = 0; i < 64; ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(est(i)));
      Eigen::VectorXd plus = est, minus = est;
      plus(i) += h;
      minus(i) -= h;
      fd(i) = (si_snr(plus, ref) - si_snr(minus, ref)) / (2.0 * h);
    }
    worst_grad = std::max(worst_grad, (g - fd).cwiseAbs().maxCoeff() / fd.cwiseAbs().maxCoeff());
  }

  // Scaling the estimate only moves the epsilon-regularised denominator.
  const Eigen::VectorXd ref = gaussian(16000, 52);
  const Eigen::VectorXd est = ref + 0.5 * gaussian(16000, 53);
  const double base = si_snr(est, ref);
  double worst_scale = 0.0;
  for (double c : {1e-3, 0.1, 3.0, 1e3})
    worst_scale = std::max(worst_scale, std::abs(si_snr(c * est, ref) - base));

  std::vector<std::vector<int>> seqs{{}};
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    if (seqs[s].size() == 6) continue;
    for (int w = 0; w < 3; ++w) {
      auto next = seqs[s];
      next.push_back(w);
      seqs.push_back(std::move(next));
    }
  }
  const std::vector<std::string> vocab{"x", "y", "z"};
  auto words = [&](const std::vector<int> &s) {
    std::vector<std::string> out;
    for (int w : s) out.push_back(vocab[w]);
    return out;
  };
  long mismatches = 0, pairs = 0;
  for (const auto &r : seqs) {
    if (r.empty()) continue;
    const auto rw = words(r);
    for (const auto &h : seqs) {
      ++pairs;
      if (wer(rw, words(h)).errors() != brute_edit_distance(r, 0, h, 0)) ++mismatches;
    }
  }
  return {worst_grad <= 1e-4 && worst_scale <= 1e-6 && mismatches == 0,
          fmt("max FD relative error %.2e over 100 pairs; max SI-SNR change under scaling "
              "%.2e dB; WER DP vs brute force: %ld/%ld mismatches",
              worst_grad, worst_scale, mismatches, pairs)};
}

// --- 6 -------------------------------------------------------------------------

Outcome fusion_mechanics() {
  std::mt19937_64 rng(61);
  std::normal_distribution<double> g;
  auto fill = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (auto &v : m.reshaped()) v = 0.1 * g(rng);
    return m;
  };
  FusionGateParams p{fill(200, 256), fill(200, 1), fill(256, 200), fill(256, 1)};
  const Eigen::VectorXd spk = fill(256, 1);
  const Eigen::VectorXd gate = fusion_gate(spk, p);
  bool shapes = gate.size() == 256;
  for (auto bad : {FusionGateParams{fill(199, 256), fill(199, 1), fill(256, 199), fill(256, 1)},
                   FusionGateParams{fill(200, 256), fill(200, 1), fill(255, 200), fill(255, 1)}}) {
    try {
      fusion_gate(spk, bad);
      shapes = false;
    } catch (const Error &) {
    }
  }
  try {
    fusion_gate(fill(100, 1), p);
    shapes = false;
  } catch (const Error &) {
  }

  const Eigen::MatrixXd hidden = fill(50, 256);
  const bool identity = fuse_activation_scaling(hidden, Eigen::VectorXd::Ones(256)) == hidden;
  const bool annihilation =
      fuse_activation_scaling(hidden, Eigen::VectorXd::Zero(256)).cwiseAbs().maxCoeff() == 0.0;

  const Eigen::MatrixXd x = fill(300, 32);
  const bool tcn_identity = tcn_forward(x, TcnParams::zeros(32, 64)) == x;

  // Perturbing one frame reaches exactly the frames within the receptive field.
  auto tcn = TcnParams::random(8, 16, 62);
  for (auto &b : tcn.blocks) {
    b.in_w = b.in_w.cwiseAbs().array() + 0.01;
    b.dw = b.dw.cwiseAbs().array() + 0.01;
    b.out_w = b.out_w.cwiseAbs().array() + 0.01;
  }
  const Eigen::Index T = 1500, t0 = 700;
  const Eigen::MatrixXd in = fill(T, 8).cwiseAbs();
  Eigen::MatrixXd bumped = in;
  bumped.row(t0).array() += 1.0;
  const Eigen::MatrixXd diff = (tcn_forward(bumped, tcn) - tcn_forward(in, tcn)).cwiseAbs();
  Eigen::Index first = -1, last = -1;
  for (Eigen::Index t = 0; t < T; ++t)
    if (diff.row(t).maxCoeff() > 0.0) {
      if (first < 0) first = t;
      last = t;
    }
  const long probe = first < 0 ? 0 : static_cast<long>(last - first + 1);
  return {shapes && identity && annihilation && tcn_identity && probe == 511 &&
              receptive_field(tcn) == 511,
          fmt("gate 256->200->256 shapes %s; gate=1 identity %s; gate=0 annihilation %s; "
              "zero-weight TCN identity %s; receptive field probe %ld frames (formula %ld)",
              shapes ? "ok" : "wrong", identity ? "exact" : "broken",
              annihilation ? "exact" : "broken", tcn_identity ? "exact" : "broken", probe,
              receptive_field(tcn))};
}

// --- 8 -------------------------------------------------------------------------

double full_pipeline(const fs::path &dir, int threads) {
  const auto t0 = Clock::now();
  fs::remove_all(dir);
  PipelineConfig cfg;
  cfg.num_utts = 20;
  cfg.seed = 808;
  RunContext ctx;
  ctx.threads = threads;
  const auto sim = cmd_simulate(cfg, dir / "sim", ctx);
  BeamformOptions opt = BeamformOptions::from_config(cfg);
  opt.adapt_mode = AdaptMode::enrollment_free;
  const auto bf = cmd_beamform(sim, opt, dir / "bf", ctx);
  const auto report = cmd_evaluate(bf, {}, ctx);
  write_report(dir / "report.jsonl", report);
  std::ofstream os(dir / "analysis.tsv", std::ios::binary);
  write_analysis(os, cmd_analyze({report}));
  return seconds_since(t0);
}

std::map<std::string, std::string> tree_contents(const fs::path &root) {
  std::map<std::string, std::string> out;
  for (const auto &e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  return out;
}

Outcome determinism(const fs::path &dir) {
  const double ta = full_pipeline(dir / "run_a", 1);
  const double tb = full_pipeline(dir / "run_b", 1);
  const double tc = full_pipeline(dir / "run_c", 8);
  const auto a = tree_contents(dir / "run_a"), b = tree_contents(dir / "run_b"),
             c = tree_contents(dir / "run_c");
  auto differing = [&](const std::map<std::string, std::string> &other) {
    std::size_t n = 0;
    for (const auto &[path, bytes] : a) {
      const auto it = other.find(path);
      if (it == other.end() || it->second != bytes) ++n;
    }
    return n + (other.size() > a.size() ? other.size() - a.size() : 0);
  };
  const std::size_t dab = differing(b), dac = differing(c);
  const double slowest = std::max({ta, tb, tc});
  return {dab == 0 && dac == 0 && a.size() > 20 && slowest < 180.0,
          fmt("%zu files per run; %zu differ between two 1-thread runs, %zu between 1 and 8 "
              "threads; runs took %.1f/%.1f/%.1f s",
              a.size(), dab, dac, ta, tb, tc)};
}

// --- 9 -------------------------------------------------------------------------

Outcome multitask_objective() {
  const double mid = multitask_loss({1.0, 2.0, 0.3});
  const double at0 = multitask_loss({1.0, 2.0, 0.0});
  const double at1 = multitask_loss({1.0, 2.0, 1.0});
  return {mid == 1.3 && at0 == 1.0 && at1 == 2.0,
          fmt("loss(beta=0.3, 1, 2) = %.17g; beta=0 -> %.17g; beta=1 -> %.17g", mid, at0, at1)};
}

}  // namespace

int main(int argc, char **argv) {
  fs::path work = fs::temp_directory_path() / "mvdrsep_acceptance";
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work-dir" && i + 1 < argc) work = argv[++i];
    else if (arg == "--only" && i + 1 < argc) only = std::stoi(argv[++i]);
    else {
      std::cerr << "usage: acceptance [--work-dir DIR] [--only N]\n";
      return 2;
    }
  }
  fs::create_directories(work);

  std::optional<OracleRun> oracle;
  auto shared = [&]() -> const OracleRun & {
    if (!oracle) {
      fs::remove_all(work / "oracle");
      oracle.emplace();
      oracle_run(work / "oracle", *oracle);
    }
    return *oracle;
  };

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, mvdr_correctness},
      {2, [&] { return oracle_separation(shared()); }},
      {3, simulation_fidelity},
      {4, feature_analytics},
      {5, numerical_objectives},
      {6, fusion_mechanics},
      {7, [&] { return adaptation_contract(shared()); }},
      {8, [&] { return determinism(work / "determinism"); }},
      {9, multitask_objective}};

  int failures = 0;
  for (const auto &[id, check] : criteria) {
    if (only && id != only) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception &e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
