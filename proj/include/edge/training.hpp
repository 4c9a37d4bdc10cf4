#pragma once

// Episodic training: one sampled episode per Adam step, with linear warmup,
// periodic validation and best-model retention.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "edge/data.hpp"
#include "edge/knowledge.hpp"
#include "edge/model.hpp"

namespace edge {

struct TrainConfig {
  int episodes = 100000;
  EpisodeShape shape;  // 5 / 250 supports, 5 / 25 queries
  double lr = 1e-3;
  double warmup_fraction = 0.10;
  double dropout = 0.5;
  bool freeze_embeddings = false;  // keep code embeddings at their initial values
  std::uint64_t seed = 0;
  int validate_every = 1000;  // 0 disables periodic validation
  int valid_episodes = 100;
  int valid_n_pos = 5;
  int valid_n_neg = 25;
  std::optional<int> patience;  // validations without improvement before stopping
  Ablation ablation;
  int workers = 1;       // validation scoring threads
  std::string out_dir;   // empty: no checkpoints or log files
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ValidationPoint {
  int step = 0;
  double roc_auc = 0.0;
};

struct TrainState {
  int step = 0;
  ModelParams params;
  std::vector<ad::Matrix> first_moment, second_moment;
  double best_valid_metric = -1.0;
  int best_step = 0;
  ModelParams best_params;
  std::string rng_state;
  std::vector<double> loss_trace;
  std::vector<ValidationPoint> validation;
};

// Linear ramp from 0 to lr over warmup_fraction * episodes steps, then flat.
double lr_at(int step, const TrainConfig& config);

struct LossResult {
  double loss = 0.0;
  std::vector<double> logits;  // positive queries first, then negatives
};

// Balanced negative log-likelihood 0.5 * (mean over positive queries of
// -log p + mean over negative queries of -log(1 - p)); when one query set is
// empty the other's mean is used alone. Gradients are written into
// params' grad buffers (zeroed first). NonFiniteLossError on overflow.
LossResult episode_loss(ModelParams& params, const Episode& episode, const KnowledgeAssets& assets,
                        const Ablation& ablation = {}, random::Rng* dropout_rng = nullptr);

// Fresh state with zero moments around `params`.
TrainState initial_state(ModelParams params);
// One Adam update from the gradients currently held in state.params.
void adam_step(TrainState& state, double lr, const AdamConfig& adam = {});

// Train drugs that can form a train-mode episode of `shape`, KB filter included.
std::vector<std::string> trainable_drugs(const RecordPool& pool, const std::set<std::string>& drugs,
                                         const EpisodeShape& shape, const DrugDiseaseKB* kb);

// Runs the episodic loop from `initial`. With validation data, best_params
// holds the parameters with the highest mean validation ROC-AUC; otherwise the
// final parameters.
TrainState train(const TrainConfig& config, const DatasetSplit& split, const KnowledgeAssets& assets,
                 ModelParams initial);

}  // namespace edge
