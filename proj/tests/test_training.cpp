#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "edge/errors.hpp"
#include "edge/synthgen.hpp"
#include "edge/training.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace edge {
namespace {

TEST(LearningRate, LinearWarmup) {
  TrainConfig c;
  c.episodes = 1000;
  c.lr = 1e-3;
  c.warmup_fraction = 0.1;
  EXPECT_DOUBLE_EQ(lr_at(0, c), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(50, c), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at(100, c), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(900, c), 1e-3);
  c.warmup_fraction = 0.0;
  EXPECT_DOUBLE_EQ(lr_at(0, c), 1e-3);
}

TEST(TrainDefaults, MatchProtocolConstants) {
  const TrainConfig c;
  EXPECT_EQ(c.episodes, 100000);
  EXPECT_EQ(c.shape.n_pos, 5);
  EXPECT_EQ(c.shape.n_neg_support, 250);
  EXPECT_DOUBLE_EQ(c.lr, 1e-3);
  EXPECT_DOUBLE_EQ(c.warmup_fraction, 0.10);
  EXPECT_DOUBLE_EQ(c.dropout, 0.5);
  const AdamConfig a;
  EXPECT_DOUBLE_EQ(a.beta1, 0.9);
  EXPECT_DOUBLE_EQ(a.beta2, 0.999);
  EXPECT_DOUBLE_EQ(a.eps, 1e-8);
}

class LossTest : public ::testing::Test {
 protected:
  KnowledgeAssets assets = testing::toy_assets(8, 6);
  Hyperparams hp = testing::toy_hyperparams(8, 6);
  std::mt19937_64 rng{77};

  ModelParams params(std::uint64_t seed) { return ModelParams(hp, assets.vocabulary, assets.embeddings, seed); }
  std::vector<PatientRecord> records(const std::string& prefix, int n, int max_codes = 5) {
    std::vector<PatientRecord> out;
    for (int i = 0; i < n; ++i)
      out.push_back(testing::random_record(rng, prefix + std::to_string(i), max_codes, {"A1", "A2", "B1"}));
    return out;
  }
  Episode episode(const std::string& drug, int sp, int sn, int qp, int qn, int max_codes = 5) {
    Episode e;
    e.drug = drug;
    e.support_pos = records("sp", sp, max_codes);
    e.support_neg = records("sn", sn, max_codes);
    e.query_pos = records("qp", qp, max_codes);
    e.query_neg = records("qn", qn, max_codes);
    return e;
  }
};

TEST_F(LossTest, SymmetricSupportsGiveLnTwo) {
  ModelParams m = params(1);
  Episode e = episode("A1", 4, 0, 3, 5);
  e.support_neg = e.support_pos;
  EXPECT_NEAR(episode_loss(m, e, assets).loss, std::log(2.0), 1e-12);
}

TEST_F(LossTest, SinglePositiveQueryIsNegativeLogProbability) {
  ModelParams m = params(2);
  const Episode e = episode("A2", 3, 4, 1, 0);
  const double p = score_query(m, assets.ontology, assets.phenotypes, "A2", e.support_pos, e.support_neg,
                               e.query_pos[0]);
  EXPECT_NEAR(episode_loss(m, e, assets).loss, -std::log(p), 1e-12);
}

TEST_F(LossTest, MatchesScalarRecomputationFromOracle) {
  for (int k = 0; k < 10; ++k) {
    ModelParams m = params(10 + k);
    const Episode e = episode(k % 2 ? "A1" : "B1", 3, 5, 2, 4);
    double pos = 0, neg = 0;
    for (const auto& q : e.query_pos)
      pos -= std::log(oracle::score(m, assets, e.drug, e.support_pos, e.support_neg, q)) / e.query_pos.size();
    for (const auto& q : e.query_neg)
      neg -= std::log(1 - oracle::score(m, assets, e.drug, e.support_pos, e.support_neg, q)) / e.query_neg.size();
    const LossResult r = episode_loss(m, e, assets);
    EXPECT_NEAR(r.loss, 0.5 * (pos + neg), 1e-9);
    EXPECT_EQ(r.logits.size(), 6u);
  }
}

TEST_F(LossTest, GradientsMatchFiniteDifferences) {
  for (int k = 0; k < 3; ++k) {
    const Episode e = episode("A1", 2, 3, 2, 2);
    const auto g = testing::check_episode_gradients(params(30 + k), e, assets);
    EXPECT_LT(g.max_relative, 1e-4) << g.worst;
  }
}

TEST_F(LossTest, AblationGradientsMatchFiniteDifferences) {
  const Episode e = episode("A2", 2, 3, 2, 2);
  for (const Ablation ab : {Ablation{true, false, false, false}, Ablation{false, true, false, false},
                            Ablation{false, false, true, false}}) {
    const auto g = testing::check_episode_gradients(params(40), e, assets, ab);
    EXPECT_LT(g.max_relative, 1e-4) << g.worst;
  }
}

TEST_F(LossTest, EveryTensorGetsAFiniteGradient) {
  ModelParams m = params(5);
  episode_loss(m, episode("A1", 5, 25, 5, 25), assets);
  for (const auto* p : m.all()) {
    EXPECT_TRUE(p->grad.allFinite()) << p->name;
    EXPECT_GT(p->grad.norm(), 0.0) << p->name;
  }
}

TEST_F(LossTest, NoQueriesIsAnError) {
  ModelParams m = params(6);
  EXPECT_THROW(episode_loss(m, episode("A1", 2, 2, 0, 0), assets), EmptySupportError);
}

TEST_F(LossTest, AdamWithZeroGradientLeavesParametersUnchanged) {
  TrainState s = initial_state(params(7));
  s.params.zero_grad();
  const ModelParams before = s.params;
  adam_step(s, 1e-3);
  for (std::size_t i = 0; i < before.all().size(); ++i) EXPECT_EQ(s.params.all()[i]->value, before.all()[i]->value);
}

TEST_F(LossTest, AdamFirstStepMovesByLearningRate) {
  TrainState s = initial_state(params(8));
  s.params.zero_grad();
  s.params.imp_b.grad(0, 0) = 0.3;
  s.params.imp_b.grad(0, 1) = -2.0;
  const ad::Matrix before = s.params.imp_b.value;
  adam_step(s, 0.01);
  // Bias-corrected first step is lr * sign(g) up to eps.
  EXPECT_NEAR(s.params.imp_b.value(0, 0), before(0, 0) - 0.01, 1e-9);
  EXPECT_NEAR(s.params.imp_b.value(0, 1), before(0, 1) + 0.01, 1e-9);
  EXPECT_EQ(s.params.imp_b.value(0, 2), before(0, 2));
}

DatasetSplit small_split(const GeneratorSpec& spec, const GeneratedAssets& assets, YearCutoffs cut) {
  const GeneratedCohort cohort = generate_cohort(spec, assets);
  return split_by_introduction(cohort.records, first_prescription_years(cohort.records), cut);
}

GeneratorSpec small_spec() {
  GeneratorSpec s;
  s.n_diseases = 240;
  s.n_drugs = 24;
  s.ontology_branching = 2;
  s.ontology_depth = 3;
  s.n_phenotypes = 6;
  s.records = 700;
  s.embed_dim = 8;
  s.seed = 3;
  return s;
}

TrainConfig small_config(int episodes) {
  TrainConfig c;
  c.episodes = episodes;
  c.shape = {5, 40, 5, 10};
  c.seed = 9;
  c.validate_every = 25;
  c.valid_episodes = 3;
  return c;
}

TEST(Train, ZeroEpisodesReturnsInitialState) {
  const GeneratorSpec spec = small_spec();
  const GeneratedAssets g = generate_assets(spec);
  const DatasetSplit split = small_split(spec, g, {2012, 2015});
  const ModelParams init(testing::toy_hyperparams(8, 6), g.knowledge.vocabulary, g.knowledge.embeddings, 1);
  const TrainState s = train(small_config(0), split, g.knowledge, init);
  EXPECT_EQ(s.step, 0);
  EXPECT_TRUE(s.loss_trace.empty());
  for (std::size_t i = 0; i < init.all().size(); ++i) {
    EXPECT_EQ(s.params.all()[i]->value, init.all()[i]->value);
    EXPECT_EQ(s.best_params.all()[i]->value, init.all()[i]->value);
  }
}

TEST(Train, FixedSeedIsBitIdentical) {
  const GeneratorSpec spec = small_spec();
  const GeneratedAssets g = generate_assets(spec);
  const DatasetSplit split = small_split(spec, g, {2012, 2015});
  const ModelParams init(testing::toy_hyperparams(8, 6), g.knowledge.vocabulary, g.knowledge.embeddings, 1);
  const TrainState a = train(small_config(50), split, g.knowledge, init);
  const TrainState b = train(small_config(50), split, g.knowledge, init);
  ASSERT_EQ(a.loss_trace.size(), 50u);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  for (std::size_t i = 0; i < init.all().size(); ++i) EXPECT_EQ(a.params.all()[i]->value, b.params.all()[i]->value);
  ASSERT_EQ(a.validation.size(), 2u);
  EXPECT_EQ(a.validation[1].roc_auc, b.validation[1].roc_auc);
  EXPECT_EQ(a.best_step, b.best_step);
}

TEST(Train, FrozenEmbeddingsStayFixed) {
  const GeneratorSpec spec = small_spec();
  const GeneratedAssets g = generate_assets(spec);
  const DatasetSplit split = small_split(spec, g, {2012, 2015});
  const ModelParams init(testing::toy_hyperparams(8, 6), g.knowledge.vocabulary, g.knowledge.embeddings, 1);
  TrainConfig c = small_config(10);
  c.freeze_embeddings = true;
  const TrainState s = train(c, split, g.knowledge, init);
  EXPECT_EQ(s.params.embeddings.value, init.embeddings.value);
  EXPECT_NE(s.params.forward.w_in.value, init.forward.w_in.value);
}

TEST(Train, WritesLogAndCheckpoints) {
  testing::TempDir dir("train");
  const GeneratorSpec spec = small_spec();
  const GeneratedAssets g = generate_assets(spec);
  const DatasetSplit split = small_split(spec, g, {2012, 2015});
  const ModelParams init(testing::toy_hyperparams(8, 6), g.knowledge.vocabulary, g.knowledge.embeddings, 1);
  TrainConfig c = small_config(30);
  c.out_dir = dir.path().string();
  const TrainState s = train(c, split, g.knowledge, init);
  EXPECT_TRUE(std::filesystem::exists(dir.file("ckpt/step-25")));
  EXPECT_TRUE(std::filesystem::exists(dir.file("ckpt/step-30")));
  const ModelParams best = load_checkpoint(dir.file("ckpt/best"));
  for (std::size_t i = 0; i < best.all().size(); ++i) EXPECT_EQ(best.all()[i]->value, s.best_params.all()[i]->value);
  const std::string log = testing::read_text(dir.file("train_log.jsonl"));
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 30);
}

// A drug prescribed exactly to the records carrying X0.
TEST(Train, SeparableTaskLearnsBelowLnTwo) {
  KnowledgeAssets a = testing::toy_assets(8, 6);
  std::mt19937_64 gen(4);
  std::vector<PatientRecord> rs;
  for (int i = 0; i < 300; ++i) {
    PatientRecord r = testing::random_record(gen, "r" + std::to_string(i), 4, {"B1"});
    r.codes.erase(std::remove(r.codes.begin(), r.codes.end(), "X0"), r.codes.end());
    if (i % 4 == 0) r.codes.push_back("X0");
    if (r.codes.empty()) r.codes.push_back("X5");
    r.drugs = {i % 4 == 0 ? "A1" : "B1"};
    rs.push_back(r);
  }
  DatasetSplit split;
  split.train_drugs = {"A1"};
  split.train_records = rs;
  TrainConfig c;
  c.episodes = 200;
  c.shape = {5, 25, 5, 25};
  c.dropout = 0.0;
  c.validate_every = 0;
  c.seed = 1;
  c.ablation.uniform_negatives = true;
  const ModelParams init(testing::toy_hyperparams(8, 6), a.vocabulary, a.embeddings, 2);
  const TrainState s = train(c, split, a, init);
  double tail = 0;
  for (int k = 150; k < 200; ++k) tail += s.loss_trace[k] / 50;
  EXPECT_LT(tail, std::log(2.0));
}

TEST(Train, KbGuidedEpisodesNeverViolateTheFilter) {
  GeneratorSpec spec = small_spec();
  spec.records = 1500;
  const GeneratedAssets g = generate_assets(spec);
  const DatasetSplit split = small_split(spec, g, {2012, 2015});
  const RecordPool pool(split.train_records);
  const EpisodeShape shape{5, 40, 5, 10};
  const auto drugs = trainable_drugs(pool, split.train_drugs, shape, &g.knowledge.kb);
  ASSERT_FALSE(drugs.empty());
  random::Rng rng(1);
  int violations = 0;
  for (int k = 0; k < 1000; ++k) {
    const Episode e = sample_episode(pool, drugs[random::uniform_index(rng, drugs.size())], shape,
                                     &g.knowledge.kb, EpisodeMode::kTrain, rng);
    violations += count_kb_violations(e, g.knowledge.kb);
  }
  EXPECT_EQ(violations, 0);
}

}  // namespace
}  // namespace edge
