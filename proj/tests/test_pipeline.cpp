// Copyright 2026 mvdrsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "mvdrsep/mvdrsep.hpp"

using namespace mvdrsep;

namespace {

std::string slurp(const fs::path &p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

fs::path fresh_dir(const std::string &name) {
  const fs::path d = fs::path(::testing::TempDir()) / ("mvdrsep_pipeline_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

PipelineConfig small_config(int n, std::uint64_t seed) {
  PipelineConfig c;
  c.num_utts = n;
  c.seed = seed;
  c.utterance_min_seconds = 1.0;
  c.utterance_max_seconds = 1.5;
  c.simulation.t60_min = 0.14;
  c.simulation.t60_max = 0.3;
  return c;
}

ErrorKind kind_of(const std::function<void()> &fn) {
  try {
    fn();
  } catch (const Error &e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::numeric;
}

bool read_any(const FileAccessLog &log, const RunManifest &m, const std::string &key) {
  for (const auto &r : m.records)
    if (r.contains(key) && log.was_read(m.resolve(r, key))) return true;
  return false;
}

// Simulated once and shared by the read-only tests.
class PipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(fresh_dir("shared"));
    sim_ = new RunManifest(cmd_simulate(small_config(3, 11), *root_ / "sim"));
  }
  static void TearDownTestSuite() {
    delete sim_;
    delete root_;
  }
  static fs::path *root_;
  static RunManifest *sim_;
};

fs::path *PipelineTest::root_ = nullptr;
RunManifest *PipelineTest::sim_ = nullptr;

}  // namespace

TEST(PipelineConfig, JsonFieldsAndValidation) {
  const auto c = pipeline_config_from_json(nlohmann::json::parse(R"({
    "num_utts": 5, "seed": 9, "mask": "cirm", "adapt_mode": "enroll-free",
    "fusion": "act-scale", "embedding": {"dim": 256}, "threads": 3,
    "simulation": {"t60": [0.2, 0.4], "sir_choices": [0]}})"));
  EXPECT_EQ(c.num_utts, 5);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.mask, "cirm");
  EXPECT_EQ(c.adapt_mode, AdaptMode::enrollment_free);
  EXPECT_EQ(c.fusion, FusionKind::activation_scaling);
  EXPECT_EQ(c.threads, 3);
  EXPECT_EQ(c.simulation.t60_min, 0.2);
  EXPECT_EQ(c.simulation.sir_choices, std::vector<double>{0});

  auto bad = [](const char *text) {
    return kind_of([&] { pipeline_config_from_json(nlohmann::json::parse(text)); });
  };
  EXPECT_EQ(bad(R"({"num_utt": 5})"), ErrorKind::config);
  EXPECT_EQ(bad(R"({"num_utts": "five"})"), ErrorKind::config);
  EXPECT_EQ(bad(R"({"num_utts": 0})"), ErrorKind::config);
  EXPECT_EQ(bad(R"({"mask": "soft"})"), ErrorKind::config);
  EXPECT_EQ(bad(R"({"adapt_mode": "auto"})"), ErrorKind::config);
  EXPECT_EQ(bad(R"({"fusion": "act-scale"})"), ErrorKind::config);
  EXPECT_EQ(bad(R"({"fusion": "act-scale", "adapt_mode": "enroll", "embedding": {"dim": 100}})"),
            ErrorKind::config);
  EXPECT_EQ(bad(R"({"metrics": ["pesq"]})"), ErrorKind::config);
  EXPECT_EQ(bad(R"({"stft": {"window": "hamming"}})"), ErrorKind::config);
  EXPECT_EQ(bad(R"([1, 2])"), ErrorKind::config);
  EXPECT_EQ(kind_of([] { load_pipeline_config("/nonexistent/config.json"); }),
            ErrorKind::config);
}

TEST_F(PipelineTest, SimulateWritesConsistentRecords) {
  ASSERT_EQ(sim_->size(), 3u);
  sim_->validate();
  const auto reread = read_manifest(*root_ / "sim" / "manifest.jsonl");
  EXPECT_EQ(reread.records, sim_->records);
  for (const auto &r : sim_->records) {
    const auto mix = read_wav_file(sim_->resolve(r, "mixture_path").string());
    EXPECT_EQ(mix.channels(), 15);
    EXPECT_EQ(mix.length(), r.at("num_samples").get<Eigen::Index>());
    const auto t = read_wav_file(sim_->resolve(r, "target_path").string());
    const auto i = read_wav_file(sim_->resolve(r, "interferer_path").string());
    const auto n = read_wav_file(sim_->resolve(r, "noise_path").string());
    const Eigen::MatrixXd resid = mix.samples - t.samples - i.samples - n.samples;
    EXPECT_LT(resid.cwiseAbs().maxCoeff(), 1e-5);
    EXPECT_EQ(r.at("angle_bin_index").get<int>(), angle_bin_of(r.at("angle_diff").get<double>()));
    EXPECT_NE(r.at("target_speaker"), r.at("interferer_speaker"));
    EXPECT_TRUE(r.contains("enrollment_path"));
  }
}

TEST(Pipeline, SimulateIsSeedDeterministic) {
  const fs::path d = fresh_dir("seeded");
  const auto a = cmd_simulate(small_config(2, 5), d / "a");
  const auto b = cmd_simulate(small_config(2, 5), d / "b");
  const auto c = cmd_simulate(small_config(2, 6), d / "c");
  EXPECT_EQ(slurp(d / "a" / "manifest.jsonl"), slurp(d / "b" / "manifest.jsonl"));
  for (std::size_t k = 0; k < a.size(); ++k)
    EXPECT_EQ(slurp(a.resolve(a.records[k], "mixture_path")),
              slurp(b.resolve(b.records[k], "mixture_path")));
  EXPECT_NE(slurp(a.resolve(a.records[0], "mixture_path")),
            slurp(c.resolve(c.records[0], "mixture_path")));
}

TEST_F(PipelineTest, BeamformWithoutAdaptation) {
  const auto out = cmd_beamform(*sim_, BeamformOptions{}, *root_ / "bf_none");
  ASSERT_EQ(out.size(), sim_->size());
  for (const auto &r : out.records) {
    EXPECT_FALSE(r.contains("provenance"));
    EXPECT_FALSE(r.contains("cosine_similarity"));
    const auto e = read_wav_file(out.resolve(r, "enhanced_path").string());
    EXPECT_EQ(e.channels(), 1);
    EXPECT_EQ(e.length(), r.at("num_samples").get<Eigen::Index>());
  }
  // The rebased manifest still reaches the simulated audio.
  out.validate();
  EXPECT_TRUE(fs::exists(out.resolve(out.records[0], "mixture_path")));
}

TEST_F(PipelineTest, EnrollmentFreeNeverReadsCleanAudio) {
  FileAccessLog log;
  RunContext ctx;
  ctx.access_log = &log;
  BeamformOptions opt;
  opt.adapt_mode = AdaptMode::enrollment_free;
  const auto out = cmd_beamform(*sim_, opt, *root_ / "bf_free", ctx);
  EXPECT_FALSE(read_any(log, *sim_, "enrollment_path"));
  EXPECT_FALSE(read_any(log, *sim_, "clean_target_path"));
  EXPECT_TRUE(read_any(log, *sim_, "mixture_path"));
  for (const auto &r : out.records) {
    EXPECT_EQ(r.at("provenance"), "enrollment_free");
    const double c = r.at("cosine_similarity").get<double>();
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
    EXPECT_EQ(r.at("cosine_source"), "images");
    const auto t = read_embedding(out.resolve(r, "target_speech_embedding_path").string());
    const auto i = read_embedding(out.resolve(r, "interferer_embedding_path").string());
    EXPECT_NEAR(cosine_similarity(t, i), c, 1e-12);
    // Analysis embeddings come from each speaker's reverberant image.
    const auto image = read_wav_file(sim_->resolve(r, "target_path").string());
    const auto direct = speaker_embedding_stub(image.samples.row(0).transpose(), 16000, {});
    EXPECT_LT((direct.vector - t.vector).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST_F(PipelineTest, EnrollmentReadsEnrollmentAudio) {
  FileAccessLog log;
  RunContext ctx;
  ctx.access_log = &log;
  BeamformOptions opt;
  opt.adapt_mode = AdaptMode::enrollment;
  const auto out = cmd_beamform(*sim_, opt, *root_ / "bf_enroll", ctx);
  for (const auto &r : sim_->records)
    EXPECT_TRUE(log.was_read(sim_->resolve(r, "enrollment_path")));
  EXPECT_FALSE(read_any(log, *sim_, "clean_target_path"));
  for (const auto &r : out.records) EXPECT_EQ(r.at("provenance"), "enrollment");
}

TEST_F(PipelineTest, ActivationScalingRecordsFullWidthGate) {
  BeamformOptions opt;
  opt.adapt_mode = AdaptMode::enrollment_free;
  opt.fusion = FusionKind::activation_scaling;
  opt.embedding.dim = 256;
  opt.hidden_dim = 32;
  const auto out = cmd_beamform(*sim_, opt, *root_ / "bf_act", {});
  for (const auto &r : out.records) {
    EXPECT_EQ(r.at("gate_width"), 256);
    const auto f = read_array_file(out.resolve(r, "frontend_path").string());
    EXPECT_EQ(f.get("gate").to_vector().size(), 256);
    const Eigen::MatrixXd y = f.get("output").to_matrix();
    EXPECT_EQ(y.rows(), r.at("frontend_frames").get<Eigen::Index>());
    EXPECT_EQ(y.cols(), 256);
  }
}

TEST_F(PipelineTest, ExternalMasksReadOnlyMixtures) {
  const fs::path masks = *root_ / "masks";
  fs::create_directories(masks);
  for (const auto &r : sim_->records) {
    const auto y = padded_stft(read_wav_file(sim_->resolve(r, "mixture_path").string()), {});
    write_mask_file(masks / (r.at("id").get<std::string>() + ".mask"),
                    TFMask::real(MaskKind::irm,
                                 Eigen::MatrixXd::Constant(y.num_frames(), y.num_bins(), 0.7)));
  }
  FileAccessLog log;
  RunContext ctx;
  ctx.access_log = &log;
  BeamformOptions opt;
  opt.mask = "external:" + masks.string();
  const auto out = cmd_beamform(*sim_, opt, *root_ / "bf_ext", ctx);
  const auto reads = log.reads();
  EXPECT_EQ(reads.size(), 2 * sim_->size());
  for (const auto &r : sim_->records) {
    EXPECT_TRUE(log.was_read(sim_->resolve(r, "mixture_path")));
    EXPECT_TRUE(log.was_read(masks / (r.at("id").get<std::string>() + ".mask")));
  }
  for (const auto &r : out.records) EXPECT_EQ(r.at("mask"), "external");

  // Enrollment-free adaptation on external masks still reads only mixtures
  // and masks; speaker similarity then comes from the separated streams.
  log.clear();
  opt.adapt_mode = AdaptMode::enrollment_free;
  const auto adapted = cmd_beamform(*sim_, opt, *root_ / "bf_ext_free", ctx);
  EXPECT_EQ(log.reads(), reads);
  for (const auto &r : adapted.records) EXPECT_EQ(r.at("cosine_source"), "separated");
  opt.adapt_mode = AdaptMode::none;

  // A mask on the wrong frame grid is a data error.
  const fs::path wrong = *root_ / "masks_wrong";
  fs::create_directories(wrong);
  for (const auto &r : sim_->records)
    write_mask_file(wrong / (r.at("id").get<std::string>() + ".mask"),
                    TFMask::real(MaskKind::irm, Eigen::MatrixXd::Constant(3, 257, 0.7)));
  opt.mask = "external:" + wrong.string();
  EXPECT_EQ(kind_of([&] { cmd_beamform(*sim_, opt, *root_ / "bf_wrong"); }), ErrorKind::data);
}

TEST_F(PipelineTest, EvaluateScoresIdentityAsPerfect) {
  const fs::path est = *root_ / "identity";
  fs::create_directories(est);
  for (const auto &r : sim_->records)
    fs::copy_file(sim_->resolve(r, "target_path"), est / (r.at("id").get<std::string>() + ".wav"),
                  fs::copy_options::overwrite_existing);
  EvaluateOptions opt;
  opt.est_dir = est.string();
  opt.system = "identity";
  const auto report = cmd_evaluate(*sim_, opt);
  ASSERT_EQ(report.records.size(), sim_->size());
  double sum = 0.0;
  for (const auto &r : report.records) {
    EXPECT_GE(r.at("sisnr_db").get<double>(), 100.0);
    EXPECT_GE(r.at("stoi").get<double>(), 0.99);
    EXPECT_LT(r.at("sisnr_input_db").get<double>(), 30.0);
    EXPECT_EQ(r.at("system"), "identity");
    sum += r.at("sisnr_db").get<double>();
  }
  const auto &overall = report.aggregates.back();
  EXPECT_EQ(overall.at("group"), "overall");
  EXPECT_EQ(overall.at("count"), sim_->size());
  EXPECT_NEAR(overall.at("sisnr_db").get<double>(), sum / sim_->size(), 1e-9);
  std::size_t binned = 0;
  for (std::size_t b = 0; b + 1 < report.aggregates.size(); ++b)
    binned += report.aggregates[b].at("count").get<std::size_t>();
  EXPECT_EQ(binned, sim_->size());

  const fs::path path = *root_ / "identity.jsonl";
  write_report(path, report);
  const auto back = read_report(path);
  EXPECT_EQ(back.records, report.records);
  EXPECT_EQ(back.aggregates, report.aggregates);
}

TEST_F(PipelineTest, EvaluateErrors) {
  EvaluateOptions opt;
  opt.est_dir = (*root_ / "no_such_dir").string();
  EXPECT_EQ(kind_of([&] { cmd_evaluate(*sim_, opt); }), ErrorKind::data);
  opt = {};
  opt.metrics = {"pesq"};
  EXPECT_EQ(kind_of([&] { cmd_evaluate(*sim_, opt); }), ErrorKind::config);
  opt.metrics = {"wer"};
  EXPECT_EQ(kind_of([&] { cmd_evaluate(*sim_, opt); }), ErrorKind::config);
}

TEST(Pipeline, EvaluateWer) {
  const fs::path d = fresh_dir("wer");
  RunManifest m{{{{"id", "u1"}, {"angle_bin", "[0,15)"}}, {{"id", "u2"}, {"angle_bin", "[0,15)"}}},
                d};
  std::ofstream(d / "ref.txt") << "u1 the cat sat\nu2 a b c d\n";
  std::ofstream(d / "hyp.txt") << "u1 the cat sat\nu2 a x c\n";
  EvaluateOptions opt;
  opt.metrics = {"wer"};
  opt.ref_path = (d / "ref.txt").string();
  opt.hyp_path = (d / "hyp.txt").string();
  const auto report = cmd_evaluate(m, opt);
  EXPECT_EQ(report.records[0].at("wer").get<double>(), 0.0);
  EXPECT_EQ(report.records[1].at("wer").get<double>(), 0.5);
  EXPECT_EQ(report.aggregates.front().at("wer").get<double>(), 0.25);

  const auto s = cmd_wer(read_transcripts(d / "ref.txt"), read_transcripts(d / "hyp.txt"));
  EXPECT_EQ(s.total.errors(), 2);
  EXPECT_EQ(s.total.reference_length, 7);
  EXPECT_DOUBLE_EQ(s.total.wer, 2.0 / 7.0);
}

TEST(Pipeline, AnalyzeCorrelation) {
  MetricsReport a, b;
  for (int k = 0; k < 6; ++k) {
    const double s = 3.0 * k - 4.0;
    a.records.push_back({{"id", "a" + std::to_string(k)}, {"sisnr_db", s},
                         {"cosine_similarity", -s / 10.0}, {"wer", 0.1 * k}});
    b.records.push_back({{"id", "b" + std::to_string(k)}, {"sisnr_db", s + 1.0},
                         {"cosine_similarity", -(s + 1.0) / 10.0}, {"wer", 0.1 * k}});
  }
  const auto res = cmd_analyze({a, b}, {"A", "B"});
  ASSERT_TRUE(res.r_cosine_sisnr);
  EXPECT_NEAR(*res.r_cosine_sisnr, -1.0, 1e-12);
  ASSERT_TRUE(res.r_cosine_wer);
  EXPECT_LT(*res.r_cosine_wer, 0.0);
  ASSERT_EQ(res.system_means.size(), 2u);
  EXPECT_EQ(res.system_means[1].system, "B");
  EXPECT_NEAR(res.system_means[1].sisnr, res.system_means[0].sisnr + 1.0, 1e-12);
  EXPECT_EQ(res.points.size(), 12u);

  std::ostringstream os;
  write_analysis(os, res);
  EXPECT_EQ(os.str().rfind("# pearson_r\tcosine_similarity\tsisnr_db\t-1", 0), 0u);

  a.records[2].erase("cosine_similarity");
  EXPECT_EQ(kind_of([&] { cmd_analyze({a}); }), ErrorKind::data);
  MetricsReport one;
  one.records.push_back(b.records[0]);
  EXPECT_EQ(kind_of([&] { cmd_analyze({one}); }), ErrorKind::data);
  EXPECT_FALSE(cmd_analyze({b}).r_cosine_wer == std::nullopt);
}

TEST(Pipeline, ThreadCountDoesNotChangeOutputs) {
  const fs::path d = fresh_dir("threads");
  std::map<int, std::vector<std::string>> bytes;
  for (int threads : {1, 4}) {
    const fs::path run = d / ("t" + std::to_string(threads));
    RunContext ctx;
    ctx.threads = threads;
    const auto sim = cmd_simulate(small_config(3, 17), run / "sim", ctx);
    BeamformOptions opt;
    opt.adapt_mode = AdaptMode::enrollment_free;
    const auto bf = cmd_beamform(sim, opt, run / "bf", ctx);
    write_report(run / "report.jsonl", cmd_evaluate(bf, {}, ctx));
    auto &b = bytes[threads];
    b.push_back(slurp(run / "sim" / "manifest.jsonl"));
    b.push_back(slurp(run / "bf" / "manifest.jsonl"));
    b.push_back(slurp(run / "report.jsonl"));
    for (const auto &r : bf.records) {
      b.push_back(slurp(bf.resolve(r, "mixture_path")));
      b.push_back(slurp(bf.resolve(r, "enhanced_path")));
      b.push_back(slurp(bf.resolve(r, "target_embedding_path")));
    }
  }
  ASSERT_EQ(bytes[1].size(), bytes[4].size());
  for (std::size_t k = 0; k < bytes[1].size(); ++k) EXPECT_EQ(bytes[1][k], bytes[4][k]) << k;
}
