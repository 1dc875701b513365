// Copyright 2026 mvdrsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// End-to-end orchestration: simulate -> beamform -> evaluate -> analyze.

#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mvdrsep/adaptive_frontend.hpp"
#include "mvdrsep/array_file.hpp"
#include "mvdrsep/beamforming.hpp"
#include "mvdrsep/error.hpp"
#include "mvdrsep/manifest.hpp"
#include "mvdrsep/metrics.hpp"
#include "mvdrsep/room_sim.hpp"
#include "mvdrsep/signal_core.hpp"
#include "mvdrsep/spatial_features.hpp"
#include "mvdrsep/speech_synth.hpp"
#include "mvdrsep/stoi.hpp"
#include "mvdrsep/wav_io.hpp"

namespace mvdrsep {

inline AdaptMode parse_adapt_mode(const std::string &s) {
  if (s == "none") return AdaptMode::none;
  if (s == "enroll") return AdaptMode::enrollment;
  if (s == "enroll-free") return AdaptMode::enrollment_free;
  fail(ErrorKind::config, "unknown adaptation mode '" + s + "'");
}

inline const char *to_string(AdaptMode m) {
  switch (m) {
    case AdaptMode::none: return "none";
    case AdaptMode::enrollment: return "enroll";
    case AdaptMode::enrollment_free: return "enroll-free";
  }
  return "?";
}

struct PipelineConfig {
  SimulationConfig simulation;
  int num_utts = 8;
  double utterance_min_seconds = 2.5, utterance_max_seconds = 4.0;
  int num_speakers = 40;
  std::string dry_source_list;  // "speaker<TAB>path" lines; empty -> synthetic speech
  std::string noise_source_list;  // one path per line; empty -> white noise
  StftConfig stft;
  std::string mask = "irm";  // irm | ibm | cirm | external:<dir>
  NoiseMaskMode noise_mask = NoiseMaskMode::complement;
  double diag_loading = kDefaultDiagonalLoading;
  AdaptMode adapt_mode = AdaptMode::none;
  FusionKind fusion = FusionKind::none;
  std::string embedding_dir;
  std::string params_path;
  EmbeddingConfig embedding;
  int residual_dim = 256, hidden_dim = 512;
  std::uint64_t frontend_seed = 1;
  std::vector<std::string> metrics{"sisnr", "stoi"};
  std::uint64_t seed = 0;
  int threads = 1;
  std::string simulate_dir = "sim", beamform_dir = "bf";

  void validate() const {
    simulation.validate();
    stft.validate();
    require(num_utts >= 1, ErrorKind::config, "num_utts must be >= 1");
    require(utterance_min_seconds >= 0.5 && utterance_max_seconds >= utterance_min_seconds,
            ErrorKind::config, "utterance durations must satisfy 0.5 <= min <= max");
    require(num_speakers >= 2, ErrorKind::config, "need at least two synthetic speakers");
    if (mask.rfind("external:", 0) != 0) parse_mask_kind(mask);
    else require(mask.size() > 9, ErrorKind::config, "external mask needs a directory");
    require(diag_loading >= 0, ErrorKind::config, "diag_loading must be >= 0");
    require(embedding.dim == 100 || embedding.dim == 256, ErrorKind::config,
            "embedding dim must be 100 or 256");
    require(fusion == FusionKind::none || adapt_mode != AdaptMode::none ||
                !embedding_dir.empty(),
            ErrorKind::config, "speaker fusion needs an adaptation mode or embedding dir");
    require(fusion != FusionKind::activation_scaling || embedding.dim == kGateOutput,
            ErrorKind::config, "activation scaling requires 256-dim embeddings");
    require(residual_dim >= 1 && hidden_dim >= 1, ErrorKind::config,
            "front-end widths must be >= 1");
    for (const auto &m : metrics)
      require(m == "sisnr" || m == "stoi" || m == "wer", ErrorKind::config,
              "unknown metric '" + m + "'");
    require(threads >= 1, ErrorKind::config, "threads must be >= 1");
  }
};

namespace detail {

template <class T>
void read_field(const nlohmann::json &j, const char *key, T &out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception &) {
    fail(ErrorKind::config, std::string("config field '") + key + "' has the wrong type");
  }
}

inline void read_range(const nlohmann::json &j, const char *key, double &lo, double &hi) {
  std::vector<double> v{lo, hi};
  read_field(j, key, v);
  require(v.size() == 2, ErrorKind::config, std::string(key) + " must be [min, max]");
  lo = v[0];
  hi = v[1];
}

inline void read_vec3(const nlohmann::json &j, const char *key, Eigen::Vector3d &out) {
  std::vector<double> v{out.x(), out.y(), out.z()};
  read_field(j, key, v);
  require(v.size() == 3, ErrorKind::config, std::string(key) + " must have 3 entries");
  out = {v[0], v[1], v[2]};
}

inline nlohmann::json vec3_json(const Eigen::Vector3d &v) { return {v.x(), v.y(), v.z()}; }

}  // namespace detail

/// Builds a config from a JSON object; absent fields keep their defaults.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json &j) {
  require(j.is_object(), ErrorKind::config, "config must be a JSON object");
  static const std::set<std::string> known{
      "simulation", "num_utts", "utterance_seconds", "num_speakers", "dry_source_list",
      "noise_source_list", "stft", "mask", "noise_mask", "diag_loading", "adapt_mode",
      "fusion", "embedding_dir", "params", "embedding", "frontend", "metrics", "seed",
      "threads", "output"};
  for (const auto &[key, _] : j.items())
    require(known.count(key) > 0, ErrorKind::config, "unknown config field '" + key + "'");

  PipelineConfig c;
  if (j.contains("simulation")) {
    const auto &s = j.at("simulation");
    auto &sim = c.simulation;
    detail::read_vec3(s, "room_min", sim.room_min);
    detail::read_vec3(s, "room_max", sim.room_max);
    detail::read_range(s, "t60", sim.t60_min, sim.t60_max);
    detail::read_range(s, "distance", sim.distance_min, sim.distance_max);
    detail::read_field(s, "snr_choices", sim.snr_choices);
    detail::read_field(s, "sir_choices", sim.sir_choices);
    detail::read_field(s, "overlap_ratio", sim.overlap_ratio);
    detail::read_field(s, "wall_margin", sim.wall_margin);
    detail::read_field(s, "sample_rate", sim.sample_rate);
    detail::read_field(s, "max_attempts", sim.max_attempts);
  }
  detail::read_field(j, "num_utts", c.num_utts);
  detail::read_range(j, "utterance_seconds", c.utterance_min_seconds, c.utterance_max_seconds);
  detail::read_field(j, "num_speakers", c.num_speakers);
  detail::read_field(j, "dry_source_list", c.dry_source_list);
  detail::read_field(j, "noise_source_list", c.noise_source_list);
  if (j.contains("stft")) {
    detail::read_field(j.at("stft"), "fft_size", c.stft.fft_size);
    detail::read_field(j.at("stft"), "hop", c.stft.hop);
    std::string window = "hann";
    detail::read_field(j.at("stft"), "window", window);
    require(window == "hann", ErrorKind::config, "only the hann window is supported");
  }
  c.stft.sample_rate = c.simulation.sample_rate;
  detail::read_field(j, "mask", c.mask);
  std::string s;
  if (j.contains("noise_mask")) {
    detail::read_field(j, "noise_mask", s);
    c.noise_mask = parse_noise_mask_mode(s);
  }
  detail::read_field(j, "diag_loading", c.diag_loading);
  if (j.contains("adapt_mode")) {
    detail::read_field(j, "adapt_mode", s);
    c.adapt_mode = parse_adapt_mode(s);
  }
  if (j.contains("fusion")) {
    detail::read_field(j, "fusion", s);
    c.fusion = parse_fusion_kind(s);
  }
  detail::read_field(j, "embedding_dir", c.embedding_dir);
  detail::read_field(j, "params", c.params_path);
  if (j.contains("embedding")) {
    detail::read_field(j.at("embedding"), "dim", c.embedding.dim);
    detail::read_field(j.at("embedding"), "n_mels", c.embedding.n_mels);
    detail::read_field(j.at("embedding"), "projection_seed", c.embedding.projection_seed);
  }
  if (j.contains("frontend")) {
    detail::read_field(j.at("frontend"), "residual_dim", c.residual_dim);
    detail::read_field(j.at("frontend"), "hidden_dim", c.hidden_dim);
    detail::read_field(j.at("frontend"), "seed", c.frontend_seed);
  }
  detail::read_field(j, "metrics", c.metrics);
  detail::read_field(j, "seed", c.seed);
  detail::read_field(j, "threads", c.threads);
  if (j.contains("output")) {
    detail::read_field(j.at("output"), "simulate_dir", c.simulate_dir);
    detail::read_field(j.at("output"), "beamform_dir", c.beamform_dir);
  }
  c.validate();
  return c;
}

inline PipelineConfig load_pipeline_config(const fs::path &path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::config, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception &e) {
    fail(ErrorKind::config, "malformed config " + path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

struct RunContext {
  int threads = 1;
  bool verbose = false;
  FileAccessLog *access_log = nullptr;
  std::ostream *log_stream = &std::cerr;

  void note(const std::string &msg) const {
    if (verbose && log_stream) *log_stream << msg << '\n';
  }
};

// --- simulate ----------------------------------------------------------------

namespace detail {

struct DrySource {
  std::string speaker;
  fs::path path;
};

inline std::vector<DrySource> read_dry_source_list(const fs::path &list) {
  std::ifstream is(list);
  require(static_cast<bool>(is), ErrorKind::data, "cannot open dry source list " + list.string());
  std::vector<DrySource> out;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    DrySource d;
    std::string p;
    if (!(ls >> d.speaker >> p)) continue;
    d.path = fs::path(p).is_absolute() ? fs::path(p) : list.parent_path() / p;
    out.push_back(d);
  }
  return out;
}

inline Eigen::VectorXd load_mono(const fs::path &path, int fs_expected, FileAccessLog *log) {
  const MultichannelWaveform w = read_audio(path, log);
  require(w.sample_rate == fs_expected, ErrorKind::data,
          "sample rate mismatch in " + path.string());
  return w.samples.row(0).transpose();
}

inline std::string utt_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "utt%05zu", i);
  return buf;
}

}  // namespace detail

/// Renders cfg.num_utts utterances into out_dir and writes out_dir/manifest.jsonl.
inline RunManifest cmd_simulate(const PipelineConfig &cfg, const fs::path &out_dir,
                                const RunContext &ctx = {}) {
  cfg.validate();
  ensure_directory(out_dir);
  ensure_directory(out_dir / "audio");
  const int fs_rate = cfg.simulation.sample_rate;
  const ArrayGeometry geometry = ArrayGeometry::symmetric_linear_15();

  std::vector<detail::DrySource> dry;
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  if (!cfg.dry_source_list.empty()) {
    dry = detail::read_dry_source_list(cfg.dry_source_list);
    for (std::size_t k = 0; k < dry.size(); ++k) by_speaker[dry[k].speaker].push_back(k);
    require(by_speaker.size() >= 2, ErrorKind::data,
            "dry source list must contain at least two speakers");
  }
  std::vector<fs::path> noises;
  if (!cfg.noise_source_list.empty()) {
    std::ifstream is(cfg.noise_source_list);
    require(static_cast<bool>(is), ErrorKind::data, "cannot open noise source list");
    std::string p;
    while (is >> p)
      noises.push_back(fs::path(p).is_absolute()
                           ? fs::path(p)
                           : fs::path(cfg.noise_source_list).parent_path() / p);
    require(!noises.empty(), ErrorKind::data, "noise source list is empty");
  }
  std::vector<std::string> speaker_names;
  for (const auto &[name, _] : by_speaker) speaker_names.push_back(name);

  RunManifest manifest{std::vector<nlohmann::json>(cfg.num_utts), out_dir};
  parallel_for(cfg.num_utts, ctx.threads, [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(cfg.seed, i);
    std::mt19937_64 rng(derive_seed(cfg.seed, i, 1));
    const RoomScenario sc = sample_scenario(cfg.simulation, seed);
    auto dur = [&] {
      return std::uniform_real_distribution<double>(cfg.utterance_min_seconds,
                                                    cfg.utterance_max_seconds)(rng);
    };

    std::string tgt_spk, int_spk;
    Eigen::VectorXd dry_t, dry_i, clean_enroll, dry_n;
    bool have_enrollment = true;
    if (dry.empty()) {
      std::uniform_int_distribution<int> pick(0, cfg.num_speakers - 1);
      const int a = pick(rng);
      int b = pick(rng);
      while (b == a) b = pick(rng);
      tgt_spk = "spk" + std::to_string(a);
      int_spk = "spk" + std::to_string(b);
      const auto pa = SpeakerProfile::from_seed(derive_seed(cfg.seed, a, 7));
      const auto pb = SpeakerProfile::from_seed(derive_seed(cfg.seed, b, 7));
      dry_t = synthesize_speech(pa, dur(), fs_rate, rng());
      dry_i = synthesize_speech(pb, dur(), fs_rate, rng());
      clean_enroll = synthesize_speech(pa, dur(), fs_rate, rng());
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, speaker_names.size() - 1);
      const std::size_t a = pick(rng);
      std::size_t b = pick(rng);
      while (b == a) b = pick(rng);
      tgt_spk = speaker_names[a];
      int_spk = speaker_names[b];
      const auto &ta = by_speaker[tgt_spk];
      const auto &tb = by_speaker[int_spk];
      const std::size_t ka = std::uniform_int_distribution<std::size_t>(0, ta.size() - 1)(rng);
      const std::size_t kb = std::uniform_int_distribution<std::size_t>(0, tb.size() - 1)(rng);
      dry_t = detail::load_mono(dry[ta[ka]].path, fs_rate, ctx.access_log);
      dry_i = detail::load_mono(dry[tb[kb]].path, fs_rate, ctx.access_log);
      if (ta.size() > 1)
        clean_enroll = detail::load_mono(dry[ta[(ka + 1) % ta.size()]].path, fs_rate,
                                         ctx.access_log);
      else
        have_enrollment = false;
    }
    const OverlapLayout layout =
        overlap_layout(dry_t.size(), dry_i.size(), sc.overlap_ratio, sc.interferer_leads);
    if (noises.empty()) {
      dry_n = white_noise(layout.length, rng());
    } else {
      const auto &np = noises[std::uniform_int_distribution<std::size_t>(0, noises.size() - 1)(rng)];
      Eigen::VectorXd raw = detail::load_mono(np, fs_rate, ctx.access_log);
      require(raw.size() > 0, ErrorKind::data, "empty noise file " + np.string());
      dry_n.resize(layout.length);
      for (Eigen::Index n = 0; n < layout.length; ++n) dry_n(n) = raw(n % raw.size());
    }

    const RenderedUtterance r = render_mixture(sc, geometry, dry_t, dry_i, dry_n, fs_rate);
    const std::string id = detail::utt_id(i);
    const fs::path audio = out_dir / "audio";
    auto put = [&](const std::string &suffix, const MultichannelWaveform &w) {
      const fs::path p = audio / (id + "_" + suffix + ".wav");
      write_wav_file(p.string(), w, WavFormat::float32);
      return manifest.relative(p);
    };
    nlohmann::json rec;
    rec["id"] = id;
    rec["mixture_path"] = put("mix", r.mixture);
    rec["target_path"] = put("target", r.target);
    rec["interferer_path"] = put("interferer", r.interferer);
    rec["noise_path"] = put("noise", r.noise);
    rec["clean_target_path"] = put("clean", MultichannelWaveform::mono(dry_t, fs_rate));
    if (have_enrollment)
      rec["enrollment_path"] = put("enroll", MultichannelWaveform::mono(clean_enroll, fs_rate));
    rec["target_speaker"] = tgt_spk;
    rec["interferer_speaker"] = int_spk;
    rec["sample_rate"] = fs_rate;
    rec["num_channels"] = geometry.num_mics();
    rec["num_samples"] = r.mixture.length();
    rec["room_dims"] = detail::vec3_json(sc.room_dims);
    rec["t60"] = sc.t60;
    rec["array_center"] = detail::vec3_json(sc.array_center);
    rec["target_pos"] = detail::vec3_json(sc.target_pos);
    rec["interferer_pos"] = detail::vec3_json(sc.interferer_pos);
    rec["noise_pos"] = detail::vec3_json(sc.noise_pos);
    rec["target_angle"] = sc.target_angle;
    rec["interferer_angle"] = sc.interferer_angle;
    rec["angle_diff"] = sc.angle_difference();
    rec["target_distance"] = sc.target_distance;
    rec["interferer_distance"] = sc.interferer_distance;
    rec["snr"] = sc.snr;
    rec["sir"] = sc.sir;
    rec["overlap_ratio"] = sc.overlap_ratio;
    rec["realized_overlap_ratio"] = r.realized_overlap_ratio;
    rec["interferer_leads"] = sc.interferer_leads;
    rec["target_offset"] = r.target_offset;
    rec["interferer_offset"] = r.interferer_offset;
    rec["angle_bin"] = angle_bin_label(sc.angle_bin);
    rec["angle_bin_index"] = sc.angle_bin;
    rec["seed"] = sc.seed;
    manifest.records[i] = std::move(rec);
    ctx.note("simulated " + id);
  });
  write_manifest(out_dir / "manifest.jsonl", manifest);
  return manifest;
}

// --- beamform ----------------------------------------------------------------

struct BeamformOptions {
  StftConfig stft;
  std::string mask = "irm";
  NoiseMaskMode noise_mask = NoiseMaskMode::complement;
  double diag_loading = kDefaultDiagonalLoading;
  AdaptMode adapt_mode = AdaptMode::none;
  FusionKind fusion = FusionKind::none;
  std::string embedding_dir;
  std::string params_path;
  EmbeddingConfig embedding;
  int residual_dim = 256, hidden_dim = 512;
  std::uint64_t frontend_seed = 1;

  static BeamformOptions from_config(const PipelineConfig &c) {
    BeamformOptions o;
    o.stft = c.stft;
    o.mask = c.mask;
    o.noise_mask = c.noise_mask;
    o.diag_loading = c.diag_loading;
    o.adapt_mode = c.adapt_mode;
    o.fusion = c.fusion;
    o.embedding_dir = c.embedding_dir;
    o.params_path = c.params_path;
    o.embedding = c.embedding;
    o.residual_dim = c.residual_dim;
    o.hidden_dim = c.hidden_dim;
    o.frontend_seed = c.frontend_seed;
    return o;
  }

  bool external_mask() const { return mask.rfind("external:", 0) == 0; }
  fs::path external_mask_dir() const { return mask.substr(9); }
  bool wants_embedding() const {
    return adapt_mode != AdaptMode::none || !embedding_dir.empty();
  }

  void validate() const {
    stft.validate();
    if (!external_mask()) parse_mask_kind(mask);
    require(diag_loading >= 0, ErrorKind::config, "diag_loading must be >= 0");
    require(fusion == FusionKind::none || wants_embedding(), ErrorKind::config,
            "speaker fusion needs an adaptation mode or embedding dir");
    require(!(adapt_mode != AdaptMode::none && !embedding_dir.empty()), ErrorKind::config,
            "--embedding-dir replaces the adaptation mode; use one of them");
  }
};

/// Mask file: ArrayFile with "mask" (real kinds) or "mask_re"/"mask_im" (cIRM)
/// on the padded STFT frame grid, meta.kind naming the mask kind.
inline TFMask read_mask_file(const fs::path &path, FileAccessLog *log) {
  require(fs::exists(path), ErrorKind::data, "missing mask file " + path.string());
  if (log) log->record(path);
  const ArrayFile f = read_array_file(path.string());
  const MaskKind kind = parse_mask_kind(f.meta.value("kind", std::string("irm")));
  if (kind == MaskKind::cirm) {
    const Eigen::MatrixXd re = f.get("mask_re").to_matrix(), im = f.get("mask_im").to_matrix();
    require(re.rows() == im.rows() && re.cols() == im.cols(), ErrorKind::data,
            "cIRM real/imaginary shapes differ in " + path.string());
    TFMask m{kind, Eigen::MatrixXcd(re.rows(), re.cols())};
    m.values.real() = re;
    m.values.imag() = im;
    return m;
  }
  return TFMask::real(kind, f.get("mask").to_matrix());
}

inline void write_mask_file(const fs::path &path, const TFMask &mask) {
  ArrayFile f;
  f.meta = {{"kind", to_string(mask.kind)}, {"layout", "frames x bins"}};
  if (mask.kind == MaskKind::cirm) {
    f.arrays.push_back(NamedArray::from_matrix("mask_re", mask.values.real()));
    f.arrays.push_back(NamedArray::from_matrix("mask_im", mask.values.imag()));
  } else {
    f.arrays.push_back(NamedArray::from_matrix("mask", mask.values.real()));
  }
  write_array_file(path.string(), f);
}

namespace detail {

inline MultichannelWaveform sum_of(const MultichannelWaveform &a, const MultichannelWaveform &b) {
  require(a.samples.rows() == b.samples.rows() && a.samples.cols() == b.samples.cols(),
          ErrorKind::data, "component shapes differ");
  return MultichannelWaveform(a.samples + b.samples, a.sample_rate);
}

inline MultichannelWaveform zeros_like(const MultichannelWaveform &w) {
  return MultichannelWaveform(Eigen::MatrixXd::Zero(w.channels(), w.length()), w.sample_rate);
}

inline Eigen::VectorXd channel0(const MultichannelWaveform &w) {
  return w.samples.row(0).transpose();
}

}  // namespace detail

/// Separates every manifest utterance; writes enhanced audio, embeddings and
/// gates under out_dir plus out_dir/manifest.jsonl.
inline RunManifest cmd_beamform(const RunManifest &input, const BeamformOptions &opt,
                                const fs::path &out_dir, const RunContext &ctx = {}) {
  opt.validate();
  input.validate();
  ensure_directory(out_dir);
  ensure_directory(out_dir / "enhanced");
  if (opt.wants_embedding()) ensure_directory(out_dir / "embeddings");
  if (opt.fusion != FusionKind::none) ensure_directory(out_dir / "frontend");
  RunManifest out = input.rebased(out_dir);

  std::optional<FrontendParams> params;
  if (opt.fusion != FusionKind::none && !opt.params_path.empty()) {
    if (ctx.access_log) ctx.access_log->record(opt.params_path);
    params = read_frontend_params(opt.params_path);
  }
  const MicPairSet pairs = MicPairSet::wide_aperture_default();
  std::mutex params_mutex;

  parallel_for(input.size(), ctx.threads, [&](std::size_t i) {
    const nlohmann::json &src = input.records[i];
    nlohmann::json rec = out.records[i];
    const std::string id = src.at("id").get<std::string>();
    FileAccessLog *log = ctx.access_log;
    const MultichannelWaveform mixture = read_audio(input.resolve(src, "mixture_path"), log);
    StftConfig stft_cfg = opt.stft;
    stft_cfg.sample_rate = mixture.sample_rate;

    SeparationOptions sep;
    sep.stft = stft_cfg;
    sep.noise_mask = opt.noise_mask;
    sep.diag_loading = opt.diag_loading;

    // Target, interferer and noise images only feed the oracle masks.
    MultichannelWaveform target, interferer, noise;
    const bool oracle_inputs = !opt.external_mask() || opt.noise_mask == NoiseMaskMode::oracle;
    if (oracle_inputs) {
      target = read_audio(input.resolve(src, "target_path"), log);
      interferer = read_audio(input.resolve(src, "interferer_path"), log);
      noise = read_audio(input.resolve(src, "noise_path"), log);
    } else {
      target = interferer = noise = detail::zeros_like(mixture);
    }
    if (opt.external_mask()) {
      sep.external_mask = read_mask_file(opt.external_mask_dir() / (id + ".mask"), log);
      sep.mask_kind = sep.external_mask->kind;
    } else {
      sep.mask_kind = parse_mask_kind(opt.mask);
    }

    const SeparationResult result =
        separate_utterance(mixture, target, detail::sum_of(interferer, noise), sep);
    const fs::path enhanced_path = out_dir / "enhanced" / (id + ".wav");
    write_wav_file(enhanced_path.string(), result.enhanced, WavFormat::float32);
    rec["enhanced_path"] = out.relative(enhanced_path);
    rec["mask"] = opt.external_mask() ? std::string("external") : opt.mask;
    rec["mask_kind"] = to_string(sep.mask_kind);
    rec["noise_mask"] = opt.noise_mask == NoiseMaskMode::oracle ? "oracle" : "complement";
    rec["passthrough_bins"] = result.passthrough_bins;

    std::optional<SpeakerEmbedding> target_emb;
    if (opt.wants_embedding()) {
      const std::string speaker = src.value("target_speaker", std::string());
      if (!opt.embedding_dir.empty()) {
        const fs::path p = fs::path(opt.embedding_dir) / (speaker + ".emb");
        require(fs::exists(p), ErrorKind::data, "missing external embedding " + p.string());
        if (log) log->record(p);
        target_emb = read_embedding(p.string());
        target_emb->provenance = Provenance::external;
      } else {
        AdaptationSources sources;
        sources.speaker_id = speaker;
        sources.sample_rate = mixture.sample_rate;
        if (src.contains("enrollment_path"))
          sources.read_enrollment = [&] {
            return detail::channel0(read_audio(input.resolve(src, "enrollment_path"), log));
          };
        // First pass: the speaker-independent separation output.
        sources.run_si_separation = [&] { return detail::channel0(result.enhanced); };
        target_emb = embedding_for_mode(opt.adapt_mode, sources, opt.embedding);
      }

      // Similarity of the two speakers, each from its own speech: the
      // component images when the run has them, else the separated streams.
      Eigen::VectorXd target_speech, interferer_speech;
      if (oracle_inputs) {
        target_speech = detail::channel0(target);
        interferer_speech = detail::channel0(interferer);
      } else {
        SeparationOptions isep = sep;
        const Eigen::MatrixXd w = sep.external_mask->weights();
        isep.external_mask = TFMask::real(MaskKind::irm, (1.0 - w.array()).matrix());
        isep.mask_kind = MaskKind::irm;
        target_speech = detail::channel0(result.enhanced);
        interferer_speech = detail::channel0(
            separate_utterance(mixture, interferer, detail::sum_of(target, noise), isep)
                .enhanced);
      }
      const SpeakerEmbedding target_speech_emb = speaker_embedding_stub(
          target_speech, mixture.sample_rate, opt.embedding, target_emb->provenance,
          src.value("target_speaker", std::string()));
      const SpeakerEmbedding interferer_emb = speaker_embedding_stub(
          interferer_speech, mixture.sample_rate, opt.embedding, target_emb->provenance,
          src.value("interferer_speaker", std::string()));
      require(interferer_emb.dim() == target_emb->dim(), ErrorKind::data,
              "external embedding dim differs from the configured embedding dim");

      const fs::path tp = out_dir / "embeddings" / (id + ".target.emb");
      const fs::path sp = out_dir / "embeddings" / (id + ".target_speech.emb");
      const fs::path ip = out_dir / "embeddings" / (id + ".interferer.emb");
      write_embedding(tp.string(), *target_emb);
      write_embedding(sp.string(), target_speech_emb);
      write_embedding(ip.string(), interferer_emb);
      rec["provenance"] = to_string(target_emb->provenance);
      rec["target_embedding_path"] = out.relative(tp);
      rec["target_speech_embedding_path"] = out.relative(sp);
      rec["interferer_embedding_path"] = out.relative(ip);
      rec["cosine_source"] = oracle_inputs ? "images" : "separated";
      rec["cosine_similarity"] = cosine_similarity(target_speech_emb, interferer_emb);
    }

    if (opt.fusion != FusionKind::none) {
      const ComplexSpectrogram y = padded_stft(mixture, stft_cfg);
      const Eigen::MatrixXd lps = log_power_spectrum(y, 0);
      const SpatialFeatures feats = spatial_features(
          y, ArrayGeometry::symmetric_linear_15(), src.at("target_angle").get<double>(), pairs);
      const Eigen::MatrixXd input_features = assemble_frontend_input(lps, feats.ipd, feats.af);
      const FrontendParams *p = nullptr;
      {
        std::lock_guard<std::mutex> lock(params_mutex);
        if (!params)
          params = FrontendParams::random(static_cast<int>(input_features.cols()),
                                          opt.frontend_seed, opt.residual_dim, opt.hidden_dim,
                                          static_cast<int>(target_emb->dim()));
        p = &*params;
      }
      const FrontendTrace trace = frontend_forward(input_features, *p, opt.fusion, target_emb);
      ArrayFile f;
      f.meta = {{"utterance", id}, {"fusion", to_string(opt.fusion)}};
      f.arrays.push_back(NamedArray::from_matrix("output", trace.output));
      if (trace.gate) f.arrays.push_back(NamedArray::from_vector("gate", *trace.gate));
      const fs::path fp = out_dir / "frontend" / (id + ".frontend");
      write_array_file(fp.string(), f);
      rec["fusion"] = to_string(opt.fusion);
      rec["frontend_path"] = out.relative(fp);
      rec["frontend_frames"] = trace.output.rows();
      if (trace.gate) rec["gate_width"] = trace.gate->size();
    }
    out.records[i] = std::move(rec);
    ctx.note("beamformed " + id);
  });
  write_manifest(out_dir / "manifest.jsonl", out);
  if (ctx.verbose && ctx.access_log) {
    std::vector<nlohmann::json> lines;
    for (const auto &r : ctx.access_log->reads()) lines.push_back(r);
    write_jsonl(out_dir / "file_access.jsonl", lines);
  }
  return out;
}

// --- evaluate ----------------------------------------------------------------

/// "id word word ..." per line.
inline std::map<std::string, std::string> read_transcripts(const fs::path &path,
                                                           FileAccessLog *log = nullptr) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::data, "cannot open transcripts " + path.string());
  if (log) log->record(path);
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string id;
    if (!(ls >> id)) continue;
    std::string rest;
    std::getline(ls, rest);
    out[id] = rest;
  }
  return out;
}

struct EvaluateOptions {
  std::vector<std::string> metrics{"sisnr", "stoi"};
  std::string est_dir;  // overrides enhanced_path when set: <est_dir>/<id>.wav
  std::string hyp_path, ref_path;
  std::string system;  // label copied into records
};

struct MetricsReport {
  std::vector<nlohmann::json> records;
  std::vector<nlohmann::json> aggregates;

  std::vector<nlohmann::json> lines() const {
    std::vector<nlohmann::json> out = records;
    out.insert(out.end(), aggregates.begin(), aggregates.end());
    return out;
  }
};

inline constexpr const char *kReportMetrics[] = {"sisnr_db", "sisnr_input_db", "stoi", "wer",
                                                 "cosine_similarity"};

/// Per-angle-bin and overall means of every numeric metric in the records.
inline std::vector<nlohmann::json> aggregate_records(const std::vector<nlohmann::json> &records) {
  std::vector<nlohmann::json> out;
  auto summarize = [&](const std::string &group, auto &&member) {
    nlohmann::json agg{{"type", "aggregate"}, {"group", group}};
    std::size_t count = 0;
    for (const auto &r : records)
      if (member(r)) ++count;
    agg["count"] = count;
    for (const char *m : kReportMetrics) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto &r : records)
        if (member(r) && r.contains(m) && r.at(m).is_number()) {
          sum += r.at(m).get<double>();
          ++n;
        }
      if (n > 0) agg[m] = sum / static_cast<double>(n);
    }
    out.push_back(std::move(agg));
  };
  for (int b = 0; b < static_cast<int>(angle_bins().size()); ++b) {
    const std::string label = angle_bin_label(b);
    summarize(label, [&](const nlohmann::json &r) {
      return r.value("angle_bin", std::string()) == label;
    });
  }
  summarize("overall", [](const nlohmann::json &) { return true; });
  return out;
}

inline MetricsReport cmd_evaluate(const RunManifest &manifest, const EvaluateOptions &opt,
                                  const RunContext &ctx = {}) {
  manifest.validate();
  for (const auto &m : opt.metrics)
    require(m == "sisnr" || m == "stoi" || m == "wer", ErrorKind::config,
            "unknown metric '" + m + "'");
  auto wants = [&](const char *m) {
    return std::find(opt.metrics.begin(), opt.metrics.end(), m) != opt.metrics.end();
  };
  std::map<std::string, std::string> hyps, refs;
  if (wants("wer")) {
    require(!opt.hyp_path.empty() && !opt.ref_path.empty(), ErrorKind::config,
            "wer needs --hyp and --ref transcript files");
    hyps = read_transcripts(opt.hyp_path, ctx.access_log);
    refs = read_transcripts(opt.ref_path, ctx.access_log);
  }

  MetricsReport report;
  report.records.resize(manifest.size());
  parallel_for(manifest.size(), ctx.threads, [&](std::size_t i) {
    const nlohmann::json &src = manifest.records[i];
    const std::string id = src.at("id").get<std::string>();
    nlohmann::json rec{{"type", "utterance"},
                       {"id", id},
                       {"angle_bin", src.value("angle_bin", std::string())}};
    if (!opt.system.empty()) rec["system"] = opt.system;
    if (src.contains("cosine_similarity")) rec["cosine_similarity"] = src["cosine_similarity"];

    if (wants("sisnr") || wants("stoi")) {
      fs::path est_path;
      if (!opt.est_dir.empty()) est_path = fs::path(opt.est_dir) / (id + ".wav");
      else est_path = manifest.resolve(src, "enhanced_path");
      require(fs::exists(est_path), ErrorKind::data, "missing enhanced file " + est_path.string());
      const MultichannelWaveform est = read_audio(est_path, ctx.access_log);
      const MultichannelWaveform ref = read_audio(manifest.resolve(src, "target_path"),
                                                  ctx.access_log);
      require(est.length() == ref.length(), ErrorKind::data,
              "enhanced and reference lengths differ for " + id);
      const Eigen::VectorXd e = detail::channel0(est), r = detail::channel0(ref);
      if (wants("sisnr")) {
        rec["sisnr_db"] = si_snr(e, r);
        if (src.contains("mixture_path")) {
          const MultichannelWaveform mix =
              read_audio(manifest.resolve(src, "mixture_path"), ctx.access_log);
          rec["sisnr_input_db"] = si_snr(detail::channel0(mix), r);
        }
      }
      if (wants("stoi")) rec["stoi"] = stoi(e, r, ref.sample_rate);
    }
    if (wants("wer")) {
      require(refs.count(id) > 0, ErrorKind::data, "no reference transcript for " + id);
      require(hyps.count(id) > 0, ErrorKind::data, "no hypothesis transcript for " + id);
      const WerBreakdown w = wer(tokenize_transcript(refs[id]), tokenize_transcript(hyps[id]));
      rec["wer"] = w.wer;
      rec["substitutions"] = w.substitutions;
      rec["deletions"] = w.deletions;
      rec["insertions"] = w.insertions;
      rec["reference_length"] = w.reference_length;
    }
    report.records[i] = std::move(rec);
    ctx.note("evaluated " + id);
  });
  report.aggregates = aggregate_records(report.records);
  return report;
}

inline void write_report(const fs::path &path, const MetricsReport &report) {
  write_jsonl(path, report.lines());
}

inline MetricsReport read_report(const fs::path &path) {
  MetricsReport r;
  for (auto &line : read_jsonl(path)) {
    if (line.value("type", std::string()) == "aggregate") r.aggregates.push_back(line);
    else r.records.push_back(line);
  }
  return r;
}

// --- analyze -----------------------------------------------------------------

struct ScatterPoint {
  std::string system, id, angle_bin;
  double cosine = 0.0, sisnr = 0.0;
  std::optional<double> wer;
};

struct AnalysisResult {
  std::vector<ScatterPoint> points;
  std::optional<double> r_cosine_sisnr;
  std::optional<double> r_cosine_wer;
  struct SystemMean {
    std::string system;
    std::size_t count = 0;
    double cosine = 0.0, sisnr = 0.0;
    std::optional<double> wer;
  };
  std::vector<SystemMean> system_means;
};

/// Pearson r between target-interferer cosine similarity and SI-SNR (and WER
/// when every record has it), pooled over all reports.
inline AnalysisResult cmd_analyze(const std::vector<MetricsReport> &reports,
                                  const std::vector<std::string> &system_names = {}) {
  AnalysisResult out;
  for (std::size_t k = 0; k < reports.size(); ++k) {
    for (const auto &rec : reports[k].records) {
      ScatterPoint p;
      p.id = rec.value("id", std::string());
      p.system = k < system_names.size() ? system_names[k]
                                         : rec.value("system", "system" + std::to_string(k));
      p.angle_bin = rec.value("angle_bin", std::string());
      require(rec.contains("cosine_similarity") && rec.at("cosine_similarity").is_number(),
              ErrorKind::data, "report lacks cosine_similarity for " + p.id);
      require(rec.contains("sisnr_db") && rec.at("sisnr_db").is_number(), ErrorKind::data,
              "report lacks sisnr_db for " + p.id);
      p.cosine = rec.at("cosine_similarity").get<double>();
      p.sisnr = rec.at("sisnr_db").get<double>();
      if (rec.contains("wer") && rec.at("wer").is_number()) p.wer = rec.at("wer").get<double>();
      out.points.push_back(p);
    }
  }
  require(out.points.size() >= 2, ErrorKind::data, "analysis needs at least two utterances");
  std::vector<double> cs, ss, ws;
  bool all_wer = true;
  for (const auto &p : out.points) {
    cs.push_back(p.cosine);
    ss.push_back(p.sisnr);
    if (p.wer) ws.push_back(*p.wer);
    else all_wer = false;
  }
  out.r_cosine_sisnr = pearson_correlation(cs, ss);
  if (all_wer) out.r_cosine_wer = pearson_correlation(cs, ws);

  std::map<std::string, std::size_t> index;
  for (const auto &p : out.points) {
    auto [it, inserted] = index.try_emplace(p.system, out.system_means.size());
    if (inserted) out.system_means.push_back({p.system, 0, 0.0, 0.0, std::nullopt});
    auto &m = out.system_means[it->second];
    ++m.count;
    m.cosine += p.cosine;
    m.sisnr += p.sisnr;
    if (p.wer) m.wer = m.wer.value_or(0.0) + *p.wer;
  }
  for (auto &m : out.system_means) {
    m.cosine /= static_cast<double>(m.count);
    m.sisnr /= static_cast<double>(m.count);
    if (m.wer) *m.wer /= static_cast<double>(m.count);
  }
  return out;
}

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// Tab-separated scatter data with '#'-prefixed summary lines.
inline void write_analysis(std::ostream &os, const AnalysisResult &a) {
  if (a.r_cosine_sisnr)
    os << "# pearson_r\tcosine_similarity\tsisnr_db\t" << format_number(*a.r_cosine_sisnr) << '\n';
  if (a.r_cosine_wer)
    os << "# pearson_r\tcosine_similarity\twer\t" << format_number(*a.r_cosine_wer) << '\n';
  for (const auto &m : a.system_means)
    os << "# system_mean\t" << m.system << '\t' << m.count << '\t' << format_number(m.cosine)
       << '\t' << format_number(m.sisnr) << '\t' << (m.wer ? format_number(*m.wer) : "NA")
       << '\n';
  os << "system\tid\tangle_bin\tcosine_similarity\tsisnr_db\twer\n";
  for (const auto &p : a.points)
    os << p.system << '\t' << p.id << '\t' << p.angle_bin << '\t' << format_number(p.cosine)
       << '\t' << format_number(p.sisnr) << '\t' << (p.wer ? format_number(*p.wer) : "NA")
       << '\n';
}

// --- wer -----------------------------------------------------------------------

struct WerSummary {
  std::vector<std::pair<std::string, WerBreakdown>> utterances;
  WerBreakdown total;  // corpus-level counts
};

inline WerSummary cmd_wer(const std::map<std::string, std::string> &refs,
                          const std::map<std::string, std::string> &hyps) {
  require(!refs.empty(), ErrorKind::data, "no reference transcripts");
  WerSummary out;
  for (const auto &[id, text] : refs) {
    const auto it = hyps.find(id);
    require(it != hyps.end(), ErrorKind::data, "no hypothesis transcript for " + id);
    const WerBreakdown w = wer(tokenize_transcript(text), tokenize_transcript(it->second));
    out.total.substitutions += w.substitutions;
    out.total.deletions += w.deletions;
    out.total.insertions += w.insertions;
    out.total.reference_length += w.reference_length;
    out.utterances.emplace_back(id, w);
  }
  out.total.wer = static_cast<double>(out.total.errors()) / out.total.reference_length;
  return out;
}

}  // namespace mvdrsep
