#include "edge/cli.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <sstream>

#include <json.hpp>

#include "edge/config.hpp"
#include "edge/errors.hpp"
#include "test_util.hpp"

namespace edge {
namespace {

using testing::TempDir;

struct CliResult {
  int status;
  std::string out, err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "edge");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int status = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {status, out.str(), err.str()};
}

// Small model and corpus so command tests finish in seconds.
std::vector<std::string> small_sets() {
  return {"--set", "model.embed_dim=8",        "--set", "model.hidden=8",
          "--set", "model.phenotype_dim=4",    "--set", "model.phenotypes=6",
          "--set", "model.attention_hidden=5", "--set", "train.validate_every=5",
          "--set", "train.valid_episodes=3",   "--set", "eval.k=5,10",
          "--set", "generator.n_diseases=240", "--set", "generator.n_drugs=24",
          "--set", "generator.ontology_branching=2", "--set", "generator.n_phenotypes=6",
          "--set", "generator.records=700",    "--set", "generator.embed_dim=8",
          "--set", "split.train_until=2012",   "--set", "split.valid_until=2015",
          "--set", "train.n_neg_support=20"};
}

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

class CliCommands : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    const auto r = run(with({"generate", "--out", assets(), "--seed", "3"}, small_sets()));
    ASSERT_EQ(r.status, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string assets() { return dir_->file("assets"); }
  static std::string out(const std::string& name) { return dir_->file(name); }
  static std::vector<std::string> common() {
    return with({"--set", "assets.dir=" + assets(), "--seed", "4"}, small_sets());
  }
  static TempDir* dir_;
};
TempDir* CliCommands::dir_ = nullptr;

TEST(Config, DefaultsMatchProtocolConstants) {
  const RunConfig c;
  const auto tc = c.train_config();
  EXPECT_EQ(tc.shape.n_pos, 5);
  EXPECT_EQ(tc.shape.n_neg_support, 250);
  EXPECT_EQ(c.eval_n_pos(), 5);
  EXPECT_EQ(c.eval_n_neg(), 25);
  EXPECT_EQ(c.eval_episodes(), 1000);
  EXPECT_EQ(tc.lr, 1e-3);
  EXPECT_EQ(tc.warmup_fraction, 0.1);
  EXPECT_EQ(tc.dropout, 0.5);
  const auto hp = c.hyperparams();
  EXPECT_EQ(hp.phenotype_dim, 64);
  EXPECT_EQ(hp.phenotypes, 511);
  EXPECT_EQ(hp.embed_dim, 768);
  EXPECT_EQ(hp.hidden, 512);
  EXPECT_EQ(hp.dropout, 0.5);
}

TEST(Config, SnapshotListsDefaults) {
  const std::string snap = RunConfig().serialize();
  for (const char* line : {"train.n_pos = 5", "train.n_neg_support = 250", "eval.n_pos = 5",
                           "eval.n_neg = 25", "eval.episodes = 1000", "train.lr = 0.001",
                           "train.warmup_fraction = 0.1", "train.dropout = 0.5",
                           "model.phenotype_dim = 64", "model.phenotypes = 511",
                           "model.embed_dim = 768", "model.hidden = 512"})
    EXPECT_NE(snap.find(line), std::string::npos) << line;
}

TEST(Config, SnapshotRoundTrip) {
  RunConfig a;
  a.set("train.lr", "0.0025");
  a.set("ablation.no_ontology", "true");
  a.set("eval.k", "7,9");
  RunConfig b;
  b.merge_text(a.serialize(), "snapshot");
  EXPECT_EQ(a.values(), b.values());
  EXPECT_EQ(b.serialize(), a.serialize());
}

TEST(Config, PrecedenceDefaultsFileFlags) {
  TempDir dir("cfg");
  testing::write_text(dir.file("run.cfg"),
                      "# comment\n\ntrain.lr = 0.01\ntrain.episodes = 7\ngenerator.records = 50\n");
  const auto r = run({"generate", "--config", dir.file("run.cfg"), "--set", "train.episodes=3", "--out",
                      dir.file("out"), "--set", "generator.n_drugs=12"});
  ASSERT_EQ(r.status, 0) << r.err;
  RunConfig c;
  c.merge_file(dir.file("out/config.resolved"));
  EXPECT_EQ(c.train_config().lr, 0.01);       // file over default
  EXPECT_EQ(c.train_config().episodes, 3);    // flag over file
  EXPECT_EQ(c.train_config().dropout, 0.5);   // default
  EXPECT_EQ(c.generator_spec().records, 50);
  EXPECT_EQ(c.generator_spec().n_drugs, 12);
  EXPECT_NE(r.out.find("wrote 50 records, 12 drugs"), std::string::npos) << r.out;
}

TEST(Config, UnknownKeysAndBadValues) {
  RunConfig c;
  EXPECT_THROW(c.set("model.nope", "1"), ConfigError);
  EXPECT_THROW(c.merge_text("train.lr 0.1\n", "inline"), ConfigError);
  c.set("train.lr", "-1");
  EXPECT_THROW(c.train_config(), ConfigError);
  c.set("train.lr", "0.001");
  c.set("ablation.single_vector", "maybe");
  EXPECT_THROW(c.ablation(), ConfigError);
}

TEST(Config, EnvironmentAssetDirSitsBetweenFileAndFlags) {
  TempDir dir("env");
  testing::write_text(dir.file("run.cfg"), "assets.dir = /from/file\n");
  ::setenv("EDGE_ASSET_DIR", "/from/env", 1);
  RunConfig c;
  c.merge_file(dir.file("run.cfg"));
  c.merge_environment();
  EXPECT_EQ(c.get("assets.dir"), "/from/env");
  EXPECT_EQ(c.asset_paths().kb, AssetPaths::in_directory("/from/env").kb);
  c.set("assets.dir", "/from/flag");
  EXPECT_EQ(c.get("assets.dir"), "/from/flag");
  ::unsetenv("EDGE_ASSET_DIR");
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run({"--help"}).status, 0);
  EXPECT_EQ(run({}).status, 1);
  EXPECT_EQ(run({"frobnicate"}).status, 1);
  EXPECT_EQ(run({"train", "--set", "no.such=1"}).status, 1);
  EXPECT_EQ(run({"train", "--set", "missing-equals"}).status, 1);
}

TEST(Cli, MissingAssetFileIsNamed) {
  TempDir dir("missing");
  const auto r = run({"train", "--out", dir.file("out"), "--set", "assets.dir=" + dir.file("nowhere")});
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find(dir.file("nowhere")), std::string::npos) << r.err;
}

TEST_F(CliCommands, SmokeTrainingRunIsFast) {
  const auto start = std::chrono::steady_clock::now();
  const auto r = run(with({"train", "--out", out("smoke"), "--set", "train.episodes=10"}, common()));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_LT(seconds, 60.0);
  EXPECT_NE(r.out.find("trained 10 episodes"), std::string::npos) << r.out;
  EXPECT_TRUE(std::filesystem::exists(out("smoke/ckpt/best")));
  EXPECT_TRUE(std::filesystem::exists(out("smoke/config.resolved")));
  EXPECT_FALSE(testing::read_text(out("smoke/train_log.jsonl")).empty());
}

TEST_F(CliCommands, AblationFlagEchoedInSnapshot) {
  const auto r = run(with({"train", "--out", out("abl"), "--set", "train.episodes=2", "--ablation",
                           "no_ontology"},
                          common()));
  ASSERT_EQ(r.status, 0) << r.err;
  const std::string snap = testing::read_text(out("abl/config.resolved"));
  EXPECT_NE(snap.find("ablation.no_ontology = true"), std::string::npos);
  EXPECT_NE(snap.find("ablation.single_vector = false"), std::string::npos);
}

TEST_F(CliCommands, EvaluateWritesOneRowPerEpisode) {
  ASSERT_EQ(run(with({"train", "--out", out("ev"), "--set", "train.episodes=3"}, common())).status, 0);
  const auto r = run(with({"evaluate", "--out", out("ev"), "--set", "eval.episodes=2"}, common()));
  ASSERT_EQ(r.status, 0) << r.err;
  std::istringstream lines(testing::read_text(out("ev/report.jsonl")));
  std::string line;
  int episodes = 0;
  while (std::getline(lines, line))
    if (nlohmann::json::parse(line).value("type", "") == "episode") ++episodes;
  EXPECT_EQ(episodes, 2);
  EXPECT_NE(r.out.find("roc_auc"), std::string::npos);
}

TEST_F(CliCommands, CompareAddsWelchBlock) {
  ASSERT_EQ(run(with({"train", "--out", out("ca"), "--set", "train.episodes=2"}, common())).status, 0);
  ASSERT_EQ(run(with({"train", "--out", out("cb"), "--set", "train.episodes=4"}, common())).status, 0);
  const auto r = run(with({"evaluate", "--out", out("ca"), "--compare", out("cb/ckpt/best"), "--set",
                           "eval.episodes=4"},
                          common()));
  ASSERT_EQ(r.status, 0) << r.err;
  const std::string report = testing::read_text(out("ca/report.jsonl"));
  EXPECT_NE(report.find("\"t_test\""), std::string::npos) << report;
  EXPECT_NE(r.out.find("Welch"), std::string::npos) << r.out;
}

TEST_F(CliCommands, FixedSeedGivesIdenticalReport) {
  for (const char* name : {"d1", "d2"}) {
    ASSERT_EQ(run(with({"train", "--out", out(name), "--set", "train.episodes=5"}, common())).status, 0);
    ASSERT_EQ(run(with({"evaluate", "--out", out(name), "--set", "eval.episodes=3"}, common())).status, 0);
  }
  EXPECT_EQ(testing::read_text(out("d1/report.jsonl")), testing::read_text(out("d2/report.jsonl")));
  EXPECT_EQ(testing::read_text(out("d1/train_log.jsonl")), testing::read_text(out("d2/train_log.jsonl")));
}

TEST_F(CliCommands, ExportEmbeddings) {
  ASSERT_EQ(run(with({"train", "--out", out("ex"), "--set", "train.episodes=1"}, common())).status, 0);
  const auto r = run(with({"export-embeddings", "--out", out("ex")}, common()));
  ASSERT_EQ(r.status, 0) << r.err;
  const std::string tsv = testing::read_text(out("ex/drug_embeddings.tsv"));
  EXPECT_FALSE(tsv.empty());
}

TEST_F(CliCommands, CorruptCheckpointIsRuntimeFailure) {
  TempDir dir("corrupt");
  testing::write_text(dir.file("bad"), "not a checkpoint");
  const auto r = run(with({"evaluate", "--out", dir.file("o"), "--checkpoint", dir.file("bad")}, common()));
  EXPECT_EQ(r.status, 2) << r.err;
}

}  // namespace
}  // namespace edge
