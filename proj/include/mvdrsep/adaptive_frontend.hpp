// Copyright 2026 mvdrsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Speaker-adaptive separation front-end: utterance-level speaker embeddings,
// input-bias and activation-scaling fusion, and a forward-only dilated TCN
// audio block. Parameters are supplied externally or drawn from a seed.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mvdrsep/array_file.hpp"
#include "mvdrsep/error.hpp"
#include "mvdrsep/signal_core.hpp"

namespace mvdrsep {

enum class Provenance { enrollment, enrollment_free, external };

inline const char *to_string(Provenance p) {
  switch (p) {
    case Provenance::enrollment: return "enrollment";
    case Provenance::enrollment_free: return "enrollment_free";
    case Provenance::external: return "external";
  }
  return "?";
}

inline Provenance parse_provenance(const std::string &s) {
  if (s == "enrollment") return Provenance::enrollment;
  if (s == "enrollment_free") return Provenance::enrollment_free;
  if (s == "external") return Provenance::external;
  fail(ErrorKind::data, "unknown embedding provenance '" + s + "'");
}

struct SpeakerEmbedding {
  Eigen::VectorXd vector;
  Provenance provenance = Provenance::enrollment;
  std::string speaker_id;

  Eigen::Index dim() const { return vector.size(); }
};

struct EmbeddingConfig {
  int dim = 256;
  int n_mels = 40;
  double min_seconds = 0.5;
  std::uint64_t projection_seed = 0x9e3779b97f4a7c15ULL;
  StftConfig stft;
};

/// Seeded [out_dim x in_dim] matrix with orthonormal columns (or rows when
/// out_dim < in_dim).
inline Eigen::MatrixXd orthonormal_projection(int out_dim, int in_dim, std::uint64_t seed) {
  require(out_dim >= 1 && in_dim >= 1, ErrorKind::config, "projection dims must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int tall = std::max(out_dim, in_dim), wide = std::min(out_dim, in_dim);
  Eigen::MatrixXd g(tall, wide);
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = gauss(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall, wide);
  return out_dim >= in_dim ? q : Eigen::MatrixXd(q.transpose());
}

/// Frames whose mel energy lies within this many dB of the loudest frame
/// take part in embedding pooling.
inline constexpr double kEmbeddingActiveRangeDb = 30.0;

/// Stand-in speaker encoder: 40-band log-mel over energetic frames, mean and
/// standard-deviation pooling with the per-utterance band average removed from
/// each, fixed orthonormal projection, L2 normalisation.
inline SpeakerEmbedding speaker_embedding_stub(const Eigen::VectorXd &wave, int sample_rate,
                                               const EmbeddingConfig &cfg = {},
                                               Provenance provenance = Provenance::enrollment,
                                               std::string speaker_id = {}) {
  require(static_cast<double>(wave.size()) >= cfg.min_seconds * sample_rate &&
              wave.size() >= cfg.stft.fft_size,
          ErrorKind::data, "input too short for speaker embedding");
  StftConfig stft_cfg = cfg.stft;
  stft_cfg.sample_rate = sample_rate;
  const auto spec = stft(MultichannelWaveform::mono(wave, sample_rate), stft_cfg);
  const Eigen::MatrixXd all = log_mel(spec, 0, cfg.n_mels);  // T x n_mels

  const Eigen::VectorXd energy = all.array().exp().rowwise().sum().log().matrix();
  const double threshold = energy.maxCoeff() - kEmbeddingActiveRangeDb * std::log(10.0) / 10.0;
  std::vector<Eigen::Index> active;
  for (Eigen::Index t = 0; t < all.rows(); ++t)
    if (energy(t) >= threshold) active.push_back(t);
  const Eigen::MatrixXd mel = all(active, Eigen::all);

  Eigen::RowVectorXd mean = mel.colwise().mean();
  Eigen::RowVectorXd stddev =
      (mel.rowwise() - mean).array().square().colwise().mean().sqrt().matrix();
  mean.array() -= mean.mean();
  stddev.array() -= stddev.mean();
  Eigen::VectorXd pooled(2 * cfg.n_mels);
  pooled << mean.transpose(), stddev.transpose();

  Eigen::VectorXd v =
      orthonormal_projection(cfg.dim, 2 * cfg.n_mels, cfg.projection_seed) * pooled;
  const double norm = v.norm();
  require(norm > 0.0, ErrorKind::data, "speaker embedding of a flat input is undefined");
  return {v / norm, provenance, std::move(speaker_id)};
}

inline double cosine_similarity(const Eigen::VectorXd &a, const Eigen::VectorXd &b) {
  require(a.size() == b.size(), ErrorKind::data, "embedding dimensions differ");
  const double na = a.norm(), nb = b.norm();
  require(na > 0.0 && nb > 0.0, ErrorKind::data, "zero-norm embedding");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

inline double cosine_similarity(const SpeakerEmbedding &a, const SpeakerEmbedding &b) {
  return cosine_similarity(a.vector, b.vector);
}

inline void write_embedding(const std::string &path, const SpeakerEmbedding &e) {
  ArrayFile file;
  file.meta = {{"dim", e.dim()},
               {"speaker_id", e.speaker_id},
               {"provenance", to_string(e.provenance)}};
  file.arrays.push_back(NamedArray::from_vector("embedding", e.vector));
  write_array_file(path, file);
}

inline SpeakerEmbedding read_embedding(const std::string &path) {
  const ArrayFile file = read_array_file(path);
  SpeakerEmbedding e;
  e.vector = file.get("embedding").to_vector();
  e.speaker_id = file.meta.value("speaker_id", "");
  e.provenance = parse_provenance(file.meta.value("provenance", "external"));
  require(file.meta.value("dim", e.dim()) == e.dim(), ErrorKind::data,
          "embedding header dim does not match payload: " + path);
  require(e.vector.norm() > 0.0, ErrorKind::data, "zero-norm embedding in " + path);
  return e;
}

enum class AdaptMode { none, enrollment, enrollment_free };

/// Callbacks that produce the audio an embedding is computed from. Only the
/// callback the chosen mode needs is ever invoked.
struct AdaptationSources {
  std::function<Eigen::VectorXd()> read_enrollment;    // clean target speech
  std::function<Eigen::VectorXd()> run_si_separation;  // speaker-independent output
  std::string speaker_id;
  int sample_rate = 16000;
};

/// Enrollment mode embeds clean enrollment audio; enrollment-free mode embeds
/// the output of a speaker-independent separation pass over the mixture.
inline SpeakerEmbedding embedding_for_mode(AdaptMode mode, const AdaptationSources &src,
                                           const EmbeddingConfig &cfg = {}) {
  switch (mode) {
    case AdaptMode::enrollment: {
      require(static_cast<bool>(src.read_enrollment), ErrorKind::data,
              "enrollment mode requires clean enrollment audio");
      return speaker_embedding_stub(src.read_enrollment(), src.sample_rate, cfg,
                                    Provenance::enrollment, src.speaker_id);
    }
    case AdaptMode::enrollment_free: {
      require(static_cast<bool>(src.run_si_separation), ErrorKind::config,
              "enrollment-free mode requires a speaker-independent separator");
      return speaker_embedding_stub(src.run_si_separation(), src.sample_rate, cfg,
                                    Provenance::enrollment_free, src.speaker_id);
    }
    case AdaptMode::none: break;
  }
  fail(ErrorKind::config, "no embedding is computed when adaptation is disabled");
}

// --- fusion ----------------------------------------------------------------

inline constexpr int kGateHidden = 200;
inline constexpr int kGateOutput = 256;

struct FusionGateParams {
  Eigen::MatrixXd w1;  // [200 x E]
  Eigen::VectorXd b1;  // [200]
  Eigen::MatrixXd w2;  // [256 x 200]
  Eigen::VectorXd b2;  // [256]

  static FusionGateParams zeros(int embedding_dim = 256) {
    return {Eigen::MatrixXd::Zero(kGateHidden, embedding_dim),
            Eigen::VectorXd::Zero(kGateHidden),
            Eigen::MatrixXd::Zero(kGateOutput, kGateHidden),
            Eigen::VectorXd::Zero(kGateOutput)};
  }
};

/// g = W2 relu(W1 e + b1) + b2
inline Eigen::VectorXd fusion_gate(const Eigen::VectorXd &spk, const FusionGateParams &p) {
  require(spk.size() == kGateOutput, ErrorKind::data,
          "activation scaling needs a 256-dim speaker embedding");
  require(p.w1.rows() == kGateHidden && p.w1.cols() == spk.size() &&
              p.b1.size() == kGateHidden && p.w2.rows() == kGateOutput &&
              p.w2.cols() == kGateHidden && p.b2.size() == kGateOutput,
          ErrorKind::data, "fusion gate parameter shapes must be 256 -> 200 -> 256");
  const Eigen::VectorXd hidden = (p.w1 * spk + p.b1).cwiseMax(0.0);
  return p.w2 * hidden + p.b2;
}

/// Appends the speaker vector to every frame: [T x D] -> [T x (D + E)].
inline Eigen::MatrixXd fuse_input_bias(const Eigen::MatrixXd &audio,
                                       const Eigen::VectorXd &spk) {
  Eigen::MatrixXd out(audio.rows(), audio.cols() + spk.size());
  out.leftCols(audio.cols()) = audio;
  out.rightCols(spk.size()) = spk.transpose().replicate(audio.rows(), 1);
  return out;
}

/// out[t] = hidden[t] * gate (element-wise, broadcast over time).
inline Eigen::MatrixXd fuse_activation_scaling(const Eigen::MatrixXd &hidden,
                                               const Eigen::VectorXd &gate) {
  require(hidden.cols() == gate.size(), ErrorKind::data,
          "gate width does not match hidden width");
  return hidden * gate.asDiagonal();
}

// --- TCN ---------------------------------------------------------------------

struct TcnBlockParams {
  Eigen::MatrixXd in_w;   // [H x D]
  Eigen::VectorXd in_b;   // [H]
  Eigen::MatrixXd dw;     // [H x K] depthwise taps
  Eigen::VectorXd dw_b;   // [H]
  Eigen::MatrixXd out_w;  // [D x H]
  Eigen::VectorXd out_b;  // [D]
  int dilation = 1;
};

struct TcnParams {
  std::vector<TcnBlockParams> blocks;
  int kernel = 3;

  Eigen::Index residual_dim() const { return blocks.empty() ? 0 : blocks.front().in_w.cols(); }

  /// Blocks with dilations 2^0 .. 2^(n-1), every weight and bias zero.
  static TcnParams zeros(int residual_dim, int hidden_dim, int num_blocks = 8,
                         int kernel = 3) {
    TcnParams p;
    p.kernel = kernel;
    for (int k = 0; k < num_blocks; ++k)
      p.blocks.push_back({Eigen::MatrixXd::Zero(hidden_dim, residual_dim),
                          Eigen::VectorXd::Zero(hidden_dim),
                          Eigen::MatrixXd::Zero(hidden_dim, kernel),
                          Eigen::VectorXd::Zero(hidden_dim),
                          Eigen::MatrixXd::Zero(residual_dim, hidden_dim),
                          Eigen::VectorXd::Zero(residual_dim), 1 << k});
    return p;
  }

  /// Gaussian weights scaled by 1/sqrt(fan_in), zero biases.
  static TcnParams random(int residual_dim, int hidden_dim, std::uint64_t seed,
                          int num_blocks = 8, int kernel = 3) {
    TcnParams p = zeros(residual_dim, hidden_dim, num_blocks, kernel);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto fill = [&](Eigen::MatrixXd &m, double fan_in) {
      const double s = 1.0 / std::sqrt(fan_in);
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = s * gauss(rng);
    };
    for (auto &b : p.blocks) {
      fill(b.in_w, residual_dim);
      fill(b.dw, kernel);
      fill(b.out_w, hidden_dim);
    }
    return p;
  }

  void validate() const {
    require(kernel >= 1 && kernel % 2 == 1, ErrorKind::config, "TCN kernel must be odd");
    const Eigen::Index d = residual_dim();
    for (const auto &b : blocks) {
      const Eigen::Index h = b.in_w.rows();
      require(b.in_w.cols() == d && b.out_w.rows() == d && b.out_w.cols() == h &&
                  b.in_b.size() == h && b.dw.rows() == h && b.dw.cols() == kernel &&
                  b.dw_b.size() == h && b.out_b.size() == d && b.dilation >= 1,
              ErrorKind::data, "inconsistent TCN block parameter shapes");
    }
  }
};

/// 1 + (kernel - 1) * sum of dilations.
inline long receptive_field(const TcnParams &params) {
  long total = 0;
  for (const auto &b : params.blocks) total += b.dilation;
  return 1 + static_cast<long>(params.kernel - 1) * total;
}

/// Non-causal (symmetric zero-padded) dilated TCN. Each block: pointwise
/// D->H, ReLU, depthwise dilated conv, ReLU, pointwise H->D, residual add.
inline Eigen::MatrixXd tcn_forward(const Eigen::MatrixXd &input, const TcnParams &params) {
  params.validate();
  require(input.rows() >= 1, ErrorKind::data, "TCN input needs at least one frame");
  require(params.blocks.empty() || input.cols() == params.residual_dim(), ErrorKind::data,
          "TCN input width does not match the residual dimension");
  const Eigen::Index T = input.rows();
  const int half = params.kernel / 2;
  Eigen::MatrixXd x = input;
  for (const auto &b : params.blocks) {
    Eigen::MatrixXd h = ((x * b.in_w.transpose()).rowwise() + b.in_b.transpose())
                            .cwiseMax(0.0);  // T x H
    Eigen::MatrixXd c = b.dw_b.transpose().replicate(T, 1);
    for (int j = 0; j < params.kernel; ++j) {
      const long shift = static_cast<long>(j - half) * b.dilation;
      // c[t] += dw[:, j] * h[t + shift]
      const Eigen::Index lo = std::max<long>(0, -shift);
      const Eigen::Index hi = std::min<long>(T, T - shift);
      if (hi <= lo) continue;
      c.middleRows(lo, hi - lo) +=
          h.middleRows(lo + shift, hi - lo) * b.dw.col(j).asDiagonal();
    }
    c = c.cwiseMax(0.0);
    x += (c * b.out_w.transpose()).rowwise() + b.out_b.transpose();
  }
  return x;
}

// --- front-end -----------------------------------------------------------------

enum class FusionKind { none, input_bias, activation_scaling };

inline FusionKind parse_fusion_kind(const std::string &s) {
  if (s == "none") return FusionKind::none;
  if (s == "input-bias") return FusionKind::input_bias;
  if (s == "act-scale") return FusionKind::activation_scaling;
  fail(ErrorKind::config, "unknown fusion kind '" + s + "'");
}

inline const char *to_string(FusionKind k) {
  switch (k) {
    case FusionKind::none: return "none";
    case FusionKind::input_bias: return "input-bias";
    case FusionKind::activation_scaling: return "act-scale";
  }
  return "?";
}

/// Conv1D projection of the assembled features, input-bias projection back to
/// the residual width, the audio TCN block and the activation-scaling gate.
struct FrontendParams {
  Eigen::MatrixXd conv_w;  // [D x D_in]
  Eigen::VectorXd conv_b;  // [D]
  Eigen::MatrixXd bias_w;  // [D x (D + E)]
  Eigen::VectorXd bias_b;  // [D]
  TcnParams tcn;
  FusionGateParams gate;

  static FrontendParams random(int input_dim, std::uint64_t seed, int residual_dim = 256,
                               int hidden_dim = 512, int embedding_dim = 256) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto mat = [&](Eigen::Index rows, Eigen::Index cols) {
      Eigen::MatrixXd m(rows, cols);
      const double s = 1.0 / std::sqrt(static_cast<double>(cols));
      for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = s * gauss(rng);
      return m;
    };
    FrontendParams p;
    p.conv_w = mat(residual_dim, input_dim);
    p.conv_b = Eigen::VectorXd::Zero(residual_dim);
    p.bias_w = mat(residual_dim, residual_dim + embedding_dim);
    p.bias_b = Eigen::VectorXd::Zero(residual_dim);
    p.tcn = TcnParams::random(residual_dim, hidden_dim, seed + 1);
    p.gate = FusionGateParams::zeros(embedding_dim);
    p.gate.w1 = mat(kGateHidden, embedding_dim);
    p.gate.w2 = mat(kGateOutput, kGateHidden);
    p.gate.b2 = Eigen::VectorXd::Ones(kGateOutput);
    return p;
  }

  Eigen::Index input_dim() const { return conv_w.cols(); }
};

inline void write_frontend_params(const std::string &path, const FrontendParams &p) {
  ArrayFile f;
  f.meta = {{"kind", "frontend-params"},
            {"tcn_blocks", p.tcn.blocks.size()},
            {"tcn_kernel", p.tcn.kernel}};
  auto add = [&](const std::string &name, const Eigen::MatrixXd &m) {
    f.arrays.push_back(NamedArray::from_matrix(name, m));
  };
  add("conv_w", p.conv_w);
  add("conv_b", p.conv_b);
  add("bias_w", p.bias_w);
  add("bias_b", p.bias_b);
  add("gate_w1", p.gate.w1);
  add("gate_b1", p.gate.b1);
  add("gate_w2", p.gate.w2);
  add("gate_b2", p.gate.b2);
  nlohmann::json dil = nlohmann::json::array();
  for (std::size_t k = 0; k < p.tcn.blocks.size(); ++k) {
    const auto &b = p.tcn.blocks[k];
    const std::string pre = "tcn" + std::to_string(k) + "_";
    add(pre + "in_w", b.in_w);
    add(pre + "in_b", b.in_b);
    add(pre + "dw", b.dw);
    add(pre + "dw_b", b.dw_b);
    add(pre + "out_w", b.out_w);
    add(pre + "out_b", b.out_b);
    dil.push_back(b.dilation);
  }
  f.meta["tcn_dilations"] = dil;
  write_array_file(path, f);
}

inline FrontendParams read_frontend_params(const std::string &path) {
  const ArrayFile f = read_array_file(path);
  auto mat = [&](const std::string &name) { return f.get(name).to_matrix(); };
  FrontendParams p;
  p.conv_w = mat("conv_w");
  p.conv_b = mat("conv_b").col(0);
  p.bias_w = mat("bias_w");
  p.bias_b = mat("bias_b").col(0);
  p.gate.w1 = mat("gate_w1");
  p.gate.b1 = mat("gate_b1").col(0);
  p.gate.w2 = mat("gate_w2");
  p.gate.b2 = mat("gate_b2").col(0);
  p.tcn.kernel = f.meta.value("tcn_kernel", 3);
  const auto dil = f.meta.value("tcn_dilations", std::vector<int>{});
  for (std::size_t k = 0; k < dil.size(); ++k) {
    const std::string pre = "tcn" + std::to_string(k) + "_";
    p.tcn.blocks.push_back({mat(pre + "in_w"), mat(pre + "in_b").col(0), mat(pre + "dw"),
                            mat(pre + "dw_b").col(0), mat(pre + "out_w"),
                            mat(pre + "out_b").col(0), dil[k]});
  }
  p.tcn.validate();
  return p;
}

struct FrontendTrace {
  Eigen::MatrixXd audio_embedding;  // after Conv1D, [T x D]
  Eigen::MatrixXd tcn_input;        // [T x D]
  Eigen::MatrixXd tcn_output;       // [T x D]
  Eigen::MatrixXd output;           // after activation scaling when enabled
  std::optional<Eigen::VectorXd> gate;
};

/// Forward pass of the adaptive audio front-end on assembled features.
inline FrontendTrace frontend_forward(const Eigen::MatrixXd &features,
                                      const FrontendParams &params, FusionKind fusion,
                                      const std::optional<SpeakerEmbedding> &spk) {
  require(features.cols() == params.input_dim(), ErrorKind::data,
          "feature width does not match front-end parameters");
  require(fusion == FusionKind::none || spk.has_value(), ErrorKind::config,
          "speaker fusion requires a speaker embedding");
  FrontendTrace trace;
  trace.audio_embedding =
      (features * params.conv_w.transpose()).rowwise() + params.conv_b.transpose();
  if (fusion == FusionKind::input_bias) {
    const Eigen::MatrixXd fused = fuse_input_bias(trace.audio_embedding, spk->vector);
    require(fused.cols() == params.bias_w.cols(), ErrorKind::data,
            "input-bias projection does not match the embedding width");
    trace.tcn_input = (fused * params.bias_w.transpose()).rowwise() + params.bias_b.transpose();
  } else {
    trace.tcn_input = trace.audio_embedding;
  }
  trace.tcn_output = tcn_forward(trace.tcn_input, params.tcn);
  if (fusion == FusionKind::activation_scaling) {
    trace.gate = fusion_gate(spk->vector, params.gate);
    trace.output = fuse_activation_scaling(trace.tcn_output, *trace.gate);
  } else {
    trace.output = trace.tcn_output;
  }
  return trace;
}

}  // namespace mvdrsep
