// SPDX-License-Identifier: Apache-2.0
// Drives the aln executable end to end through the shell.
#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "aln/aln.hpp"

namespace {

namespace fs = std::filesystem;

const char* const kCli = ALN_CLI_PATH;

struct CliResult {
  int status;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("aln_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliResult run(const std::string& args, const std::string& env = "") {
    const auto out = dir_ / "stdout.txt";
    const auto err = dir_ / "stderr.txt";
    const std::string cmd = env + " '" + std::string(kCli) + "' " + args + " > '" +
                            out.string() + "' 2> '" + err.string() + "'";
    const int raw = std::system(cmd.c_str());
    CliResult r{WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, aln::textio::read_file(out),
          aln::textio::read_file(err)};
    return r;
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  /// Small dataset in <dir>/data.
  void make_data(const std::string& extra = "") {
    ASSERT_EQ(run("gen-data --out " + path("data") +
                  " --seed 3 --classes 4 --train-n 40 --test-n 16 --d-acoustic 8 --d-ling 12"
                  " --min-len 2 --max-len 6 " + extra)
                  .status,
              0);
  }

  std::string train_args(const std::string& model, const std::string& extra = "") const {
    return "train --data " + path("data") + " --model-out " + path(model) +
           " --epochs 3 --batch-size 8 --d-attn 8 --hidden 6 --seed 5 --quiet " + extra;
  }

  fs::path dir_;
};

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

TEST_F(Cli, GenDataIsDeterministicAndEchoesConfig) {
  const std::string flags = " --seed 9 --classes 3 --train-n 12 --test-n 6 --d-acoustic 5 --d-ling 7";
  ASSERT_EQ(run("gen-data --out " + path("a") + flags).status, 0);
  ASSERT_EQ(run("gen-data --out " + path("b") + flags).status, 0);
  for (const char* f : {"train.jsonl", "test.jsonl"})
    EXPECT_EQ(aln::textio::read_file(dir_ / "a" / f), aln::textio::read_file(dir_ / "b" / f));
  const auto ds = aln::load_dataset(dir_ / "a" / "train.jsonl");
  ASSERT_TRUE(ds.generator.has_value());
  EXPECT_EQ(ds.generator->seed, 9u);
  EXPECT_EQ(ds.generator->num_classes, 3u);
  EXPECT_EQ(ds.size(), 12u);
}

TEST_F(Cli, GenDataUsageErrors) {
  EXPECT_EQ(run("gen-data --out " + path("x") + " --classes 0").status, 2);
  EXPECT_EQ(run("gen-data --out " + path("x") + " --min-len 5 --max-len 3").status, 2);
  EXPECT_EQ(run("gen-data --out " + path("x") + " --keyword-prob 2").status, 2);
  EXPECT_EQ(run("gen-data").status, 2);
  EXPECT_FALSE(fs::exists(dir_ / "x"));
}

TEST_F(Cli, OutputDirectoryFromEnvironment) {
  ASSERT_EQ(run("gen-data --train-n 8 --test-n 8 --d-acoustic 3 --d-ling 4",
                "ALN_OUTPUT_DIR='" + path("env") + "'")
                .status,
            0);
  EXPECT_TRUE(fs::exists(dir_ / "env" / "train.jsonl"));
  EXPECT_TRUE(fs::exists(dir_ / "env" / "test.jsonl"));
}

TEST_F(Cli, TrainIsDeterministic) {
  make_data();
  ASSERT_EQ(run(train_args("a.ckpt")).status, 0);
  ASSERT_EQ(run(train_args("b.ckpt")).status, 0);
  EXPECT_EQ(aln::textio::read_file(path("a.ckpt")), aln::textio::read_file(path("b.ckpt")));
  EXPECT_EQ(aln::textio::read_file(path("a.ckpt.metrics.jsonl")),
            aln::textio::read_file(path("b.ckpt.metrics.jsonl")));
  EXPECT_EQ(count_lines(aln::textio::read_file(path("a.ckpt.metrics.jsonl"))), 3u);
}

TEST_F(Cli, ZeroLearningRateSavesInitialisation) {
  make_data();
  for (const char* v : {"baseline2", "aln-linguistic", "aln"}) {
    ASSERT_EQ(run(train_args("z.ckpt", std::string("--lr 0 --variant ") + v)).status, 0) << v;
    const auto saved = aln::load_checkpoint(path("z.ckpt"));
    const aln::ModelConfig c{aln::parse_variant(v), 8, 12, 8, 6, 4, 5};
    EXPECT_TRUE(same_values(saved, aln::init_model(c))) << v;
  }
}

TEST_F(Cli, EvalMatchesFinalMetricsRecord) {
  make_data();
  const auto trained = run(train_args("m.ckpt", "--metrics-out " + path("metrics.jsonl")));
  ASSERT_EQ(trained.status, 0);
  const auto text = aln::textio::read_file(path("metrics.jsonl"));
  const auto last = text.substr(text.rfind('\n', text.size() - 2) + 1);
  const auto m = aln::parse_metrics_record(last.substr(0, last.size() - 1));
  ASSERT_TRUE(m.test_accuracy.has_value());
  char expected[32];
  std::snprintf(expected, sizeof expected, "%.4f\n", *m.test_accuracy);

  const auto evaluated = run("eval --model " + path("m.ckpt") + " --data " + path("data"));
  ASSERT_EQ(evaluated.status, 0) << evaluated.err;
  EXPECT_EQ(evaluated.out, expected);
  EXPECT_EQ(trained.out, expected);
  // The library evaluation of the saved checkpoint equals the recorded value exactly.
  EXPECT_EQ(aln::evaluate(aln::load_checkpoint(path("m.ckpt")),
                          aln::load_dataset(dir_ / "data" / "test.jsonl")),
            *m.test_accuracy);
  const auto on_file =
      run("eval --model " + path("m.ckpt") + " --data " + (dir_ / "data" / "test.jsonl").string());
  EXPECT_EQ(on_file.out, expected);
}

TEST_F(Cli, EvalDimensionMismatchNamesBoth) {
  make_data();
  ASSERT_EQ(run(train_args("m.ckpt")).status, 0);
  ASSERT_EQ(run("gen-data --out " + path("other") +
                " --classes 4 --train-n 8 --test-n 8 --d-acoustic 5 --d-ling 12")
                .status,
            0);
  const auto r = run("eval --model " + path("m.ckpt") + " --data " + path("other"));
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find('5'), std::string::npos) << r.err;
  EXPECT_NE(r.err.find('8'), std::string::npos) << r.err;
}

TEST_F(Cli, TrainErrorStatuses) {
  make_data();
  EXPECT_EQ(run(train_args("m.ckpt", "--alpha 1.5")).status, 2);
  EXPECT_EQ(run(train_args("m.ckpt", "--variant nope")).status, 2);
  EXPECT_EQ(run(train_args("m.ckpt", "--no-such-flag")).status, 2);
  EXPECT_EQ(run("train --model-out " + path("m.ckpt")).status, 2);
  EXPECT_EQ(run("train --data " + path("missing") + " --model-out " + path("m.ckpt")).status, 1);
  const auto diverged = run(train_args("m.ckpt", "--lr 1e300"));
  EXPECT_EQ(diverged.status, 3);
  EXPECT_NE(diverged.err.find("non-finite"), std::string::npos) << diverged.err;
  EXPECT_FALSE(fs::exists(dir_ / "m.ckpt"));
}

TEST_F(Cli, AlphaOneWarns) {
  make_data();
  const auto r = run(train_args("m.ckpt", "--alpha 1"));
  EXPECT_EQ(r.status, 0);
  EXPECT_NE(r.err.find("warning"), std::string::npos);
}

TEST_F(Cli, ConfigFileLayersUnderFlags) {
  make_data();
  {
    std::FILE* f = std::fopen(path("cfg.toml").c_str(), "w");
    std::fputs("[train]\nepochs = 2\nbatch-size = 8\nd-attn = 8\nhidden = 6\n", f);
    std::fclose(f);
  }
  const std::string base =
      "--config " + path("cfg.toml") + " train --quiet --data " + path("data") + " --model-out " +
      path("m.ckpt");
  ASSERT_EQ(run(base).status, 0);
  EXPECT_EQ(count_lines(aln::textio::read_file(path("m.ckpt.metrics.jsonl"))), 2u);
  EXPECT_EQ(aln::load_checkpoint(path("m.ckpt")).config().d_attn, 8u);
  ASSERT_EQ(run(base + " --epochs 1").status, 0);
  EXPECT_EQ(count_lines(aln::textio::read_file(path("m.ckpt.metrics.jsonl"))), 1u);

  {
    std::FILE* f = std::fopen(path("bad.toml").c_str(), "w");
    std::fputs("[train]\nepochz = 2\n", f);
    std::fclose(f);
  }
  EXPECT_EQ(run("--config " + path("bad.toml") + " train --data " + path("data") +
                " --model-out " + path("m.ckpt"))
                .status,
            2);
}

TEST_F(Cli, GradcheckPassesWithDefaults) {
  const auto r = run("gradcheck");
  ASSERT_EQ(r.status, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    const auto tab = line.rfind('\t');
    EXPECT_LT(std::stod(line.substr(tab + 1)), 1e-3) << line;
    ++rows;
  }
  // 3 variants x 4 alphas, one row per parameter tensor.
  std::size_t expected = 0;
  for (auto v : {aln::Variant::baseline2, aln::Variant::aln_linguistic, aln::Variant::aln})
    expected += 4 * aln::parameter_layout(aln::tiny_gradcheck_config(v)).size();
  EXPECT_EQ(rows, expected);
  EXPECT_EQ(run("gradcheck --tolerance 1e-300").status, 1);
}

TEST_F(Cli, AblateWritesFourRowReport) {
  make_data();
  const auto r = run("ablate --data " + path("data") + " --out " + path("abl") +
                     " --variants aln-linguistic,aln --alphas 0.5,0.8 --epochs 2 --batch-size 8"
                     " --d-attn 8 --hidden 6");
  ASSERT_EQ(r.status, 0) << r.err;
  const auto table = aln::textio::read_file(path("abl") + ".tsv");
  EXPECT_EQ(count_lines(table), 5u);
  EXPECT_EQ(r.out, table);
  EXPECT_NE(table.find("aln_linguistic\t0.5\t"), std::string::npos) << table;
  EXPECT_NE(table.find("aln\t0.8\t"), std::string::npos) << table;
  const auto summary = nlohmann::json::parse(aln::textio::read_file(path("abl") + ".json"));
  EXPECT_EQ(summary["rows"].size(), 4u);
  EXPECT_EQ(summary["fingerprint"]["dataset_seed"], 3);
  EXPECT_EQ(run("ablate --data " + path("data") + " --out " + path("abl") + " --alphas 0.5,7")
                .status,
            2);
}

TEST_F(Cli, ExportEmbeddings) {
  make_data();
  ASSERT_EQ(run(train_args("m.ckpt")).status, 0);
  const auto r = run("export-embeddings --model " + path("m.ckpt") + " --data " + path("data") +
                     " --out " + path("emb.tsv"));
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(count_lines(aln::textio::read_file(path("emb.tsv"))), 1u + 2u * 16u);
  ASSERT_EQ(run(train_args("b.ckpt", "--variant baseline2")).status, 0);
  EXPECT_EQ(run("export-embeddings --model " + path("b.ckpt") + " --data " + path("data") +
                " --out " + path("emb2.tsv"))
                .status,
            1);
}

TEST_F(Cli, SmallProfileRunRecordsEveryEpoch) {
  ASSERT_EQ(run("gen-data --out " + path("data") + " --seed 42 --d-acoustic 32 --d-ling 96").status,
            0);
  const auto r = run("train --quiet --data " + path("data") + " --model-out " + path("m.ckpt") +
                     " --variant aln --alpha 0.8 --epochs 25 --seed 7 --d-attn 32 --hidden 32");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(count_lines(aln::textio::read_file(path("m.ckpt.metrics.jsonl"))), 25u);
}

}  // namespace
