// Copyright 2026 mvdrsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// mvdrsep command-line front-end. Exit codes: 0 ok, 2 config error, 3 data error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mvdrsep/mvdrsep.hpp"

namespace {

using namespace mvdrsep;

std::string one_line(std::string s) {
  for (char &c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

int report_error(const std::string &kind, const std::string &what) {
  std::cerr << "error: " << kind << ": " << one_line(what) << '\n';
  return kind == "config" ? 2 : 3;
}

std::vector<std::string> split_list(const std::string &s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Mask-based MVDR speech separation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::uint64_t> seed;
  int threads = 1;
  bool verbose = false;
  std::string config_path;
  app.add_option("--seed", seed, "Random seed (overrides the config)");
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--verbose", verbose, "Progress on stderr and file-access log");
  app.add_option("--config", config_path, "JSON pipeline config");

  auto *sim = app.add_subcommand("simulate", "Render simulated multichannel mixtures");
  std::optional<int> num_utts;
  std::string sim_out;
  sim->add_option("--num-utts", num_utts, "Number of utterances");
  sim->add_option("--out-dir", sim_out, "Output directory")->required();

  auto *bf = app.add_subcommand("beamform", "Mask-based MVDR separation");
  std::string bf_manifest, bf_out;
  std::optional<std::string> mask, noise_mask, adapt_mode, fusion, embedding_dir, params;
  std::optional<double> diag_loading;
  bf->add_option("--manifest", bf_manifest, "Input manifest")->required();
  bf->add_option("--out-dir", bf_out, "Output directory")->required();
  bf->add_option("--mask", mask, "irm | ibm | cirm | external:<dir>");
  bf->add_option("--noise-mask", noise_mask, "complement | oracle");
  bf->add_option("--diag-loading", diag_loading, "Relative diagonal loading");
  bf->add_option("--adapt-mode", adapt_mode, "none | enroll | enroll-free");
  bf->add_option("--fusion", fusion, "none | input-bias | act-scale");
  bf->add_option("--embedding-dir", embedding_dir, "External per-speaker embeddings");
  bf->add_option("--params", params, "Front-end parameter file");

  auto *ev = app.add_subcommand("evaluate", "Score enhanced audio");
  std::string ev_manifest, ev_out, est_dir, hyp, ref, metrics, system;
  ev->add_option("--manifest", ev_manifest, "Beamform manifest")->required();
  ev->add_option("--out", ev_out, "Report file")->required();
  ev->add_option("--est-dir", est_dir, "Directory of <id>.wav estimates");
  ev->add_option("--metrics", metrics, "Comma-separated: sisnr,stoi,wer");
  ev->add_option("--hyp", hyp, "Hypothesis transcripts");
  ev->add_option("--ref", ref, "Reference transcripts");
  ev->add_option("--system", system, "System label stored in the report");

  auto *an = app.add_subcommand("analyze", "Cosine similarity vs SI-SNR/WER correlation");
  std::vector<std::string> reports;
  std::string an_out;
  an->add_option("--report", reports, "Report file (repeat for several systems)")->required();
  an->add_option("--out", an_out, "Output file (default stdout)");

  auto *wr = app.add_subcommand("wer", "Word error rate of transcript files");
  std::string wer_ref, wer_hyp, wer_out;
  wr->add_option("--ref", wer_ref, "Reference transcripts")->required();
  wr->add_option("--hyp", wer_hyp, "Hypothesis transcripts")->required();
  wr->add_option("--out", wer_out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    return report_error("config", e.what());
  }

  try {
    PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_pipeline_config(config_path);
    if (seed) cfg.seed = *seed;
    cfg.threads = threads;
    FileAccessLog access_log;
    RunContext ctx{threads, verbose, &access_log, &std::cerr};

    if (*sim) {
      if (num_utts) cfg.num_utts = *num_utts;
      cfg.validate();
      const RunManifest m = cmd_simulate(cfg, sim_out, ctx);
      std::cout << "simulated " << m.size() << " utterances -> " << sim_out << "/manifest.jsonl\n";
    } else if (*bf) {
      BeamformOptions opt = BeamformOptions::from_config(cfg);
      if (mask) opt.mask = *mask;
      if (noise_mask) opt.noise_mask = parse_noise_mask_mode(*noise_mask);
      if (diag_loading) opt.diag_loading = *diag_loading;
      if (adapt_mode) opt.adapt_mode = parse_adapt_mode(*adapt_mode);
      if (fusion) opt.fusion = parse_fusion_kind(*fusion);
      if (embedding_dir) opt.embedding_dir = *embedding_dir;
      if (params) opt.params_path = *params;
      const RunManifest m = cmd_beamform(read_manifest(bf_manifest), opt, bf_out, ctx);
      std::cout << "beamformed " << m.size() << " utterances -> " << bf_out << "/manifest.jsonl\n";
    } else if (*ev) {
      EvaluateOptions opt;
      opt.metrics = metrics.empty() ? cfg.metrics : split_list(metrics);
      opt.est_dir = est_dir;
      opt.hyp_path = hyp;
      opt.ref_path = ref;
      opt.system = system;
      const MetricsReport r = cmd_evaluate(read_manifest(ev_manifest), opt, ctx);
      write_report(ev_out, r);
      std::cout << "evaluated " << r.records.size() << " utterances -> " << ev_out << '\n';
    } else if (*an) {
      std::vector<MetricsReport> loaded;
      for (const auto &p : reports) loaded.push_back(read_report(p));
      const AnalysisResult a = cmd_analyze(loaded);
      if (an_out.empty()) {
        write_analysis(std::cout, a);
      } else {
        std::ofstream os(an_out);
        require(static_cast<bool>(os), ErrorKind::config, "cannot write " + an_out);
        write_analysis(os, a);
      }
    } else if (*wr) {
      const WerSummary s = cmd_wer(read_transcripts(wer_ref), read_transcripts(wer_hyp));
      std::ofstream file;
      if (!wer_out.empty()) {
        file.open(wer_out);
        require(static_cast<bool>(file), ErrorKind::config, "cannot write " + wer_out);
      }
      std::ostream &os = wer_out.empty() ? std::cout : file;
      os << "id\tS\tD\tI\tN\twer\n";
      for (const auto &[id, w] : s.utterances)
        os << id << '\t' << w.substitutions << '\t' << w.deletions << '\t' << w.insertions
           << '\t' << w.reference_length << '\t' << format_number(w.wer) << '\n';
      os << "TOTAL\t" << s.total.substitutions << '\t' << s.total.deletions << '\t'
         << s.total.insertions << '\t' << s.total.reference_length << '\t'
         << format_number(s.total.wer) << '\n';
    }
  } catch (const Error &e) {
    return report_error(to_string(e.kind()), e.what());
  } catch (const std::filesystem::filesystem_error &e) {
    return report_error("data", e.what());
  } catch (const std::exception &e) {
    return report_error("data", e.what());
  }
  return 0;
}
