// SPDX-License-Identifier: Apache-2.0
// aln: command-line front end for data generation, training, evaluation,
// ablation, gradient checking and embedding export.
//
// Exit status: 0 ok, 1 I/O or validation failure, 2 usage error,
// 3 numeric fault (non-finite loss during training).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include "aln/aln.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

/// Bad flag values that only surface when the config objects validate.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Fn>
void as_usage(Fn&& fn) {
  try {
    fn();
  } catch (const aln::ValidationError& e) {
    throw UsageError(e.what());
  }
}

const CLI::Validator kAtLeastOne(
    [](std::string& s) -> std::string {
      try {
        std::size_t used = 0;
        if (std::stoll(s, &used) >= 1 && used == s.size()) return {};
      } catch (const std::exception&) {
      }
      return "must be an integer >= 1, got '" + s + "'";
    },
    "INT>=1");

const CLI::Validator kPositive(
    [](std::string& s) -> std::string {
      try {
        std::size_t used = 0;
        if (std::stod(s, &used) > 0.0 && used == s.size()) return {};
      } catch (const std::exception&) {
      }
      return "must be a number > 0, got '" + s + "'";
    },
    "NUM>0");

/// A directory means its test.jsonl split.
fs::path dataset_file(const fs::path& p, const char* split = "test.jsonl") {
  return fs::is_directory(p) ? p / split : p;
}

void print_epoch(const aln::EpochMetrics& m, std::size_t epochs) {
  std::fprintf(stderr, "epoch %zu/%zu  loss %.6f  tl %.6f  intent %.6f  train_acc %.4f", m.epoch,
               epochs, m.mean_loss_total, m.mean_loss_tl, m.mean_loss_intent, m.train_accuracy);
  if (m.mean_student_teacher_cosine)
    std::fprintf(stderr, "  cosine %.4f", *m.mean_student_teacher_cosine);
  if (m.test_accuracy) std::fprintf(stderr, "  test_acc %.4f", *m.test_accuracy);
  std::fprintf(stderr, "  (%.1fs)\n", m.wall_time);
}

// --- gen-data ---------------------------------------------------------------

struct GenData {
  std::string out;
  aln::GeneratorConfig cfg;

  void attach(CLI::App& app) {
    const char* env = std::getenv("ALN_OUTPUT_DIR");
    if (env && *env) out = env;
    app.add_option("--out", out, "Output directory (default: $ALN_OUTPUT_DIR)");
    app.add_option("--seed", cfg.seed, "Generator seed")->capture_default_str();
    app.add_option("--classes", cfg.num_classes, "Number of intent classes")
        ->check(kAtLeastOne)
        ->capture_default_str();
    app.add_option("--train-n", cfg.train_count, "Training utterances")->capture_default_str();
    app.add_option("--test-n", cfg.test_count, "Test utterances")->capture_default_str();
    app.add_option("--d-acoustic", cfg.d_acoustic, "Acoustic embedding width")
        ->check(kAtLeastOne)
        ->capture_default_str();
    app.add_option("--d-ling", cfg.d_linguistic, "Teacher embedding width")
        ->check(kAtLeastOne)
        ->capture_default_str();
    app.add_option("--min-len", cfg.min_len, "Shortest utterance in frames")
        ->check(kAtLeastOne)
        ->capture_default_str();
    app.add_option("--max-len", cfg.max_len, "Longest utterance in frames")
        ->check(kAtLeastOne)
        ->capture_default_str();
    app.add_option("--teacher-noise", cfg.teacher_noise, "Teacher noise std")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app.add_option("--acoustic-noise", cfg.acoustic_noise, "Acoustic noise std")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app.add_option("--keyword-prob", cfg.keyword_prob, "Probability of a keyword frame")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    app.add_option("--centroid-scale", cfg.centroid_scale, "Scale of class centroids")
        ->check(kPositive)
        ->capture_default_str();
  }

  int run() {
    if (out.empty()) throw UsageError("gen-data: --out is required (or set ALN_OUTPUT_DIR)");
    as_usage([&] { cfg.validate(); });
    const auto data = aln::generate(cfg);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw aln::IoError("cannot create '" + out + "': " + ec.message());
    const fs::path train = fs::path(out) / "train.jsonl";
    const fs::path test = fs::path(out) / "test.jsonl";
    aln::save_dataset(data.train, train);
    aln::save_dataset(data.test, test);
    aln::textio::ordered_json summary{{"command", "gen-data"},
                                      {"train", train.string()},
                                      {"test", test.string()},
                                      {"train_count", data.train.size()},
                                      {"test_count", data.test.size()},
                                      {"seed", cfg.seed}};
    std::cout << summary.dump() << '\n';
    return 0;
  }
};

// --- shared training flags ----------------------------------------------------

struct TrainingFlags {
  aln::TrainConfig tcfg;
  std::uint64_t seed = 0;
  std::size_t d_attn = 256;
  std::size_t hidden = 128;

  void attach(CLI::App& app) {
    app.add_option("--epochs", tcfg.epochs, "Training epochs")
        ->check(kAtLeastOne)
        ->capture_default_str();
    app.add_option("--lr", tcfg.learning_rate, "Adam learning rate")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app.add_option("--batch-size", tcfg.batch_size, "Utterances per update")
        ->check(kAtLeastOne)
        ->capture_default_str();
    app.add_option("--seed", seed, "Initialisation and shuffling seed")->capture_default_str();
    app.add_option("--d-attn", d_attn, "Attention width")
        ->check(kAtLeastOne)
        ->capture_default_str();
    app.add_option("--hidden", hidden, "GRU state width")
        ->check(kAtLeastOne)
        ->capture_default_str();
    app.add_option("--eval-every", tcfg.eval_every, "Test-set evaluation interval in epochs")
        ->check(kAtLeastOne)
        ->capture_default_str();
  }

  aln::ModelConfig model_for(aln::Variant v, const aln::Dataset& ds) const {
    return {v, ds.d_acoustic, ds.d_linguistic, d_attn, hidden, ds.num_classes, seed};
  }

  void finalize() {
    tcfg.shuffle_seed = seed;
    as_usage([&] { tcfg.validate(); });
  }
};

struct DataPair {
  aln::Dataset train;
  aln::Dataset test;
};

DataPair load_pair(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw aln::IoError("data directory '" + dir.string() + "' does not exist");
  return {aln::load_dataset(dir / "train.jsonl"), aln::load_dataset(dir / "test.jsonl")};
}

// --- train ------------------------------------------------------------------

struct Train {
  std::string data;
  std::string model_out;
  std::string metrics_out;
  std::string variant = "aln";
  TrainingFlags flags;
  bool quiet = false;

  void attach(CLI::App& app) {
    app.add_option("--data", data, "Directory holding train.jsonl and test.jsonl")->required();
    app.add_option("--model-out", model_out, "Checkpoint path")->required();
    app.add_option("--metrics-out", metrics_out,
                   "Per-epoch metrics (default: <model-out>.metrics.jsonl)");
    app.add_option("--variant", variant, "baseline2 | aln-linguistic | aln")
        ->check(CLI::IsMember({"baseline2", "aln-linguistic", "aln_linguistic", "aln"}))
        ->capture_default_str();
    app.add_option("--alpha", flags.tcfg.alpha, "Weight of the distillation loss")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    app.add_flag("--quiet", quiet, "No per-epoch progress on stderr");
    flags.attach(app);
  }

  int run() {
    const auto v = aln::parse_variant(variant);
    flags.finalize();
    if (metrics_out.empty()) metrics_out = model_out + ".metrics.jsonl";
    const auto ds = load_pair(data);
    const auto mcfg = flags.model_for(v, ds.train);
    aln::MetricsWriter writer(metrics_out);
    aln::TrainHooks hooks;
    hooks.on_epoch = [&](const aln::EpochMetrics& m) {
      writer.write(m);
      if (!quiet) print_epoch(m, flags.tcfg.epochs);
    };
    hooks.on_warning = [](const std::string& w) { std::fprintf(stderr, "warning: %s\n", w.c_str()); };
    const auto result = aln::train(ds.train, ds.test, mcfg, flags.tcfg, hooks);
    aln::save_checkpoint(result.params, model_out);
    std::printf("%.4f\n", *result.history.back().test_accuracy);
    return 0;
  }
};

// --- eval -------------------------------------------------------------------

struct Eval {
  std::string model;
  std::string data;

  void attach(CLI::App& app) {
    app.add_option("--model", model, "Checkpoint path")->required();
    app.add_option("--data", data, "Dataset file, or a directory (uses its test.jsonl)")
        ->required();
  }

  int run() {
    const auto params = aln::load_checkpoint(model);
    const auto ds = aln::load_dataset(dataset_file(data));
    std::printf("%.4f\n", aln::evaluate(params, ds));
    return 0;
  }
};

// --- ablate -----------------------------------------------------------------

struct Ablate {
  std::string data;
  std::string out;
  std::vector<std::string> variants{"baseline2", "aln-linguistic", "aln"};
  std::vector<double> alphas{0.5, 0.8};
  TrainingFlags flags;

  void attach(CLI::App& app) {
    app.add_option("--data", data, "Directory holding train.jsonl and test.jsonl")->required();
    app.add_option("--out", out, "Output prefix; writes <prefix>.tsv and <prefix>.json")
        ->required();
    app.add_option("--variants", variants, "Comma-separated variants")
        ->delimiter(',')
        ->check(CLI::IsMember({"baseline2", "aln-linguistic", "aln_linguistic", "aln"}))
        ->capture_default_str();
    app.add_option("--alphas", alphas, "Comma-separated distillation weights")
        ->delimiter(',')
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    flags.attach(app);
  }

  int run() {
    std::vector<aln::Variant> vs;
    for (const auto& s : variants) vs.push_back(aln::parse_variant(s));
    flags.finalize();
    const auto ds = load_pair(data);
    const auto tmpl = flags.model_for(aln::Variant::aln, ds.train);
    aln::TrainHooks hooks;
    hooks.on_warning = [](const std::string& w) { std::fprintf(stderr, "warning: %s\n", w.c_str()); };
    const auto report = aln::run_ablation(ds.train, ds.test, vs, alphas, flags.tcfg, tmpl, hooks);
    aln::save_ablation(report, out);
    std::cout << aln::ablation_table(report);
    return 0;
  }
};

// --- gradcheck --------------------------------------------------------------

struct Gradcheck {
  double tolerance = 1e-3;
  double epsilon = 1e-4;

  void attach(CLI::App& app) {
    app.add_option("--tolerance", tolerance, "Largest acceptable relative error")
        ->check(kPositive)
        ->capture_default_str();
    app.add_option("--epsilon", epsilon, "Central-difference step")
        ->check(kPositive)
        ->capture_default_str();
  }

  int run() {
    const auto data = aln::tiny_gradcheck_data();
    bool ok = true;
    std::printf("variant\talpha\tparameter\tmax_rel_error\n");
    for (auto v : {aln::Variant::baseline2, aln::Variant::aln_linguistic, aln::Variant::aln}) {
      for (double alpha : {0.0, 0.5, 0.8, 1.0}) {
        auto params = aln::init_model(aln::tiny_gradcheck_config(v));
        aln::GradcheckOptions opt;
        opt.alpha = alpha;
        opt.epsilon = epsilon;
        opt.tolerance = tolerance;
        const auto report = aln::gradcheck(params, data.train.utterances, opt);
        for (const auto& e : report.entries)
          std::printf("%s\t%.1f\t%s\t%.3e%s\n", std::string(aln::to_string(v)).c_str(), alpha,
                      e.name.c_str(), e.max_rel_error, e.passed ? "" : "\tFAIL");
        ok = ok && report.passed();
      }
    }
    if (!ok) std::fprintf(stderr, "gradcheck: relative error above %g\n", tolerance);
    return ok ? 0 : kExitFailure;
  }
};

// --- export-embeddings --------------------------------------------------------

struct ExportEmbeddings {
  std::string model;
  std::string data;
  std::string out;

  void attach(CLI::App& app) {
    app.add_option("--model", model, "Checkpoint path")->required();
    app.add_option("--data", data, "Dataset file, or a directory (uses its test.jsonl)")
        ->required();
    app.add_option("--out", out, "Output TSV path")->required();
  }

  int run() {
    const auto params = aln::load_checkpoint(model);
    const auto ds = aln::load_dataset(dataset_file(data));
    aln::export_embeddings(params, ds, out);
    std::printf("%zu rows -> %s\n", 2 * ds.size(), out.c_str());
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acoustic-linguistic intent classification toolkit", "aln"};
  app.require_subcommand(1);
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "TOML/INI file with option values; command-line flags win");

  GenData gen;
  Train train;
  Eval eval;
  Ablate ablate;
  Gradcheck grad;
  ExportEmbeddings exporter;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic train/test dataset pair");
  auto* train_cmd = app.add_subcommand("train", "Train one model variant");
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy of a checkpoint on a dataset");
  auto* ablate_cmd = app.add_subcommand("ablate", "Train every (variant, alpha) cell");
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of all gradients");
  auto* export_cmd =
      app.add_subcommand("export-embeddings", "Teacher/student embeddings with a PCA projection");
  gen.attach(*gen_cmd);
  train.attach(*train_cmd);
  eval.attach(*eval_cmd);
  ablate.attach(*ablate_cmd);
  grad.attach(*grad_cmd);
  exporter.attach(*export_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return gen.run();
    if (*train_cmd) return train.run();
    if (*eval_cmd) return eval.run();
    if (*ablate_cmd) return ablate.run();
    if (*grad_cmd) return grad.run();
    if (*export_cmd) return exporter.run();
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const aln::NumericFault& e) {
    std::fprintf(stderr, "numeric fault: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
