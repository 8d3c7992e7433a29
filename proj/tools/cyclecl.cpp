// cyclecl: gen-data | train | eval | gradcheck
//
// Exit codes: 0 success, 1 usage or parameter error, 2 I/O or format error,
// 3 numeric failure.

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cyclecl/errors.hpp"
#include "cyclecl/binary_io.hpp"
#include "cyclecl/eval.hpp"
#include "cyclecl/gradient_suite.hpp"
#include "cyclecl/run_config.hpp"
#include "cyclecl/synthetic_videos.hpp"
#include "cyclecl/trainer.hpp"

namespace fs = std::filesystem;
using namespace cyclecl;

namespace {

std::vector<int> parse_k_list(const std::string& s) {
  std::vector<int> ks;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      ks.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ParameterError("bad --k entry '" + item + "'");
    }
  }
  if (ks.empty()) throw ParameterError("--k needs at least one value");
  return ks;
}

int cmd_gen_data(const GenerateOptions& opts, const std::string& out) {
  const auto data = generate(opts);
  write_dataset(data.videos, data.labels, out);
  const auto& v = data.videos;
  std::cout << "wrote " << out << ": " << v.num_videos << " videos x " << v.frames_per_video
            << " frames, " << v.height << "x" << v.width << ", " << v.num_classes
            << " classes, seed " << v.seed << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string loss;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) cfg = read_run_config(a.config);
  // Flags take precedence over the config file.
  if (!a.data.empty()) cfg.dataset = a.data;
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (!a.loss.empty()) set_config_value(cfg, "loss", a.loss);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.seed) cfg.train.seed = *a.seed;
  if (cfg.dataset.empty()) throw ParameterError("no dataset: pass --data or set dataset in the config");
  if (cfg.output_dir.empty()) throw ParameterError("no output directory: pass --out or set output_dir");
  cfg.train.validate();

  const auto data = read_dataset(cfg.dataset);
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw IoError("cannot create " + cfg.output_dir + ": " + ec.message());
  const auto echo = echo_run_config(cfg);
  io::write_file((fs::path(cfg.output_dir) / "config.txt").string(),
                 std::vector<unsigned char>(echo.begin(), echo.end()));

  FitOptions opts;
  opts.config_echo = echo;
  const auto result = fit(cfg.train, data.videos, cfg.output_dir, opts);
  std::cout << "steps " << result.metrics.size() << "\n";
  if (!result.metrics.empty()) {
    std::cout << "final loss " << std::setprecision(6) << result.metrics.back().loss_total << "\n";
  }
  std::cout << "checkpoint " << result.checkpoint.string() << "\n";
  std::cout << "metrics " << result.metrics_csv.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string test;
  std::string mode = "retrieve";
  std::string k = "1,5,10";
  std::string space = "backbone";
  std::string out;
  bool verbose = false;
  bool video_level = false;
  int probe_epochs = ProbeOptions{}.epochs;
  double probe_lr = ProbeOptions{}.lr;
};

int cmd_eval(const EvalArgs& a) {
  if (a.mode != "probe" && a.mode != "retrieve") {
    throw ParameterError("--mode must be probe or retrieve");
  }
  const auto space = parse_embedding_space(a.space);
  const auto ckpt = read_checkpoint(a.ckpt);
  const auto train = read_dataset(a.data);
  auto gallery = embed_dataset(ckpt, train.videos, train.labels, space);
  EmbeddingTable query;
  if (a.test.empty()) {
    query = gallery;
  } else {
    const auto test = read_dataset(a.test);
    query = embed_dataset(ckpt, test.videos, test.labels, space);
  }
  if (a.video_level) {
    gallery = video_level_table(gallery);
    query = video_level_table(query);
  }

  EvalReport report;
  report.mode = a.mode;
  report.space = to_string(space);
  report.num_queries = query.size();
  if (a.mode == "probe") {
    report.probe_accuracy = linear_probe(gallery, query, {a.probe_epochs, a.probe_lr});
  } else {
    const auto ks = parse_k_list(a.k);
    report.retrieval = knn_retrieval(query, gallery, ks);
  }
  const auto text = format_report(report);
  std::cout << text;
  if (!a.out.empty()) {
    write_report(report, a.out);
    if (a.verbose && report.retrieval) {
      write_ranks_csv(query, *report.retrieval, fs::path(a.out).string() + ".ranks.csv");
    }
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int trials) {
  constexpr double kTolerance = 1e-4;
  const auto result = run_gradient_suite(seed, trials);
  bool ok = true;
  for (const auto& [loss, worst] : result.worst_by_loss()) {
    const bool pass = worst <= kTolerance;
    ok = ok && pass;
    std::cout << std::left << std::setw(12) << loss << " worst relative error " << std::scientific
              << std::setprecision(3) << worst << (pass ? "" : "  FAIL") << "\n";
  }
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-video cycle-consistent contrastive learning"};
  app.require_subcommand(1);

  GenerateOptions gen;
  std::string gen_out;
  std::uint32_t size = 32;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic video dataset (CCV1)");
  g->add_option("--out", gen_out, "Output file")->required();
  g->add_option("--videos", gen.num_videos, "Number of videos")->capture_default_str();
  g->add_option("--frames", gen.frames_per_video, "Frames per video")->capture_default_str();
  g->add_option("--classes", gen.num_classes, "Number of classes")->capture_default_str();
  g->add_option("--size", size, "Frame height and width")->capture_default_str();
  g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();

  TrainArgs ta;
  auto* t = app.add_subcommand("train", "Train an encoder; flags override the config file");
  t->add_option("--config", ta.config, "key = value config file");
  t->add_option("--data", ta.data, "CCV1 dataset");
  t->add_option("--out", ta.out, "Output directory");
  t->add_option("--loss", ta.loss, "intra-image | intra-video | full");
  t->add_option("--epochs", ta.epochs, "Override epochs");
  t->add_option("--seed", ta.seed, "Override seed");

  EvalArgs ea;
  auto* e = app.add_subcommand("eval", "Linear probe or k-NN retrieval on frozen features");
  e->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
  e->add_option("--data", ea.data, "Training / gallery dataset")->required();
  e->add_option("--test", ea.test, "Test / query dataset (defaults to --data)");
  e->add_option("--mode", ea.mode, "probe | retrieve")->capture_default_str();
  e->add_option("--k", ea.k, "Comma-separated k values")->capture_default_str();
  e->add_option("--space", ea.space, "backbone | video_head | cycle_head")->capture_default_str();
  e->add_option("--out", ea.out, "Results file");
  e->add_flag("--verbose", ea.verbose, "Also write per-query ranks CSV next to --out");
  e->add_flag("--video-level", ea.video_level, "Average frame embeddings per video");
  e->add_option("--probe-epochs", ea.probe_epochs)->capture_default_str();
  e->add_option("--probe-lr", ea.probe_lr)->capture_default_str();

  std::uint64_t gc_seed = 0;
  int gc_trials = 20;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference check of every loss gradient");
  c->add_option("--seed", gc_seed)->capture_default_str();
  c->add_option("--trials", gc_trials)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*g) {
      gen.height = gen.width = size;
      return cmd_gen_data(gen, gen_out);
    }
    if (*t) return cmd_train(ta);
    if (*e) return cmd_eval(ea);
    if (*c) return cmd_gradcheck(gc_seed, gc_trials);
  } catch (const IoError& err) {
    std::cerr << "I/O error: " << err.what() << "\n";
    return 2;
  } catch (const FormatError& err) {
    std::cerr << "format error: " << err.what() << "\n";
    return 2;
  } catch (const NumericError& err) {
    std::cerr << "numeric error: " << err.what() << "\n";
    return 3;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
