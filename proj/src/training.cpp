#include "edge/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "edge/errors.hpp"
#include "edge/evaluation.hpp"
#include "edge/text.hpp"

namespace edge {

using ad::Matrix;
using ad::Var;

double lr_at(int step, const TrainConfig& config) {
  const double warm = config.warmup_fraction * config.episodes;
  if (warm <= 0.0) return config.lr;
  return config.lr * std::min(1.0, static_cast<double>(step) / warm);
}

namespace {

std::string fingerprint(const Episode& e) {
  std::uint64_t h = random::hash_string(e.drug);
  for (const auto* part : {&e.support_pos, &e.support_neg, &e.query_pos, &e.query_neg})
    for (const auto& r : *part) h = random::splitmix64(h ^ random::hash_string(r.id));
  std::ostringstream os;
  os << e.drug << "#" << std::hex << h;
  return os.str();
}

}  // namespace

LossResult episode_loss(ModelParams& params, const Episode& episode, const KnowledgeAssets& assets,
                        const Ablation& ablation, random::Rng* dropout_rng) {
  if (episode.query_pos.empty() && episode.query_neg.empty())
    throw EmptySupportError("episode for " + episode.drug + " has no queries");
  std::vector<const PatientRecord*> records;
  auto add = [&](const std::vector<PatientRecord>& part) {
    std::vector<int> idx;
    for (const auto& r : part) {
      idx.push_back(static_cast<int>(records.size()));
      records.push_back(&r);
    }
    return idx;
  };
  const auto sp = add(episode.support_pos), sn = add(episode.support_neg);
  auto queries = add(episode.query_pos);
  const auto qn = add(episode.query_neg);
  queries.insert(queries.end(), qn.begin(), qn.end());

  params.zero_grad();
  ad::Tape tape;
  Graph graph(tape, params, dropout_rng);
  EncodedBatch batch = graph.encode(assets.phenotypes, records);
  Var logits = graph.episode_logits(assets.ontology, episode.drug, batch, sp, sn, queries, ablation);

  // -log p = softplus(-x) for positives, -log(1 - p) = softplus(x) for negatives.
  const auto n_pos = static_cast<Eigen::Index>(episode.query_pos.size());
  const auto n_neg = static_cast<Eigen::Index>(episode.query_neg.size());
  const double w_pos = n_pos == 0 ? 0.0 : (n_neg == 0 ? 1.0 : 0.5) / static_cast<double>(n_pos);
  const double w_neg = n_neg == 0 ? 0.0 : (n_pos == 0 ? 1.0 : 0.5) / static_cast<double>(n_neg);
  Matrix sign(n_pos + n_neg, 1), weight(n_pos + n_neg, 1);
  sign.topRows(n_pos).setConstant(-1.0);
  sign.bottomRows(n_neg).setConstant(1.0);
  weight.topRows(n_pos).setConstant(w_pos);
  weight.bottomRows(n_neg).setConstant(w_neg);
  Var loss = ad::sum(ad::mul(ad::softplus(ad::mul(logits, tape.constant(sign))), tape.constant(weight)));

  LossResult out;
  out.loss = loss.scalar();
  const Matrix& lv = logits.value();
  out.logits.assign(lv.data(), lv.data() + lv.rows());
  if (!std::isfinite(out.loss))
    throw NonFiniteLossError("non-finite loss on episode " + fingerprint(episode));
  tape.backward(loss);
  for (const auto* p : params.all())
    if (!p->grad.allFinite())
      throw NonFiniteLossError("non-finite gradient for " + p->name + " on episode " + fingerprint(episode));
  return out;
}

TrainState initial_state(ModelParams params) {
  TrainState s;
  for (const auto* p : params.all()) {
    s.first_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    s.second_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
  s.best_params = params;
  s.params = std::move(params);
  return s;
}

void adam_step(TrainState& state, double lr, const AdamConfig& adam) {
  const auto params = state.params.all();
  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(adam.beta1, t);
  const double c2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    m = adam.beta1 * m + (1.0 - adam.beta1) * p.grad;
    v = adam.beta2 * v + (1.0 - adam.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + adam.eps);
  }
}

std::vector<std::string> trainable_drugs(const RecordPool& pool, const std::set<std::string>& drugs,
                                         const EpisodeShape& shape, const DrugDiseaseKB* kb) {
  std::vector<std::string> out;
  const std::size_t need_pos = shape.n_pos + (shape.n_query_pos > 0 ? 1 : 0);
  const std::size_t need_neg = shape.n_neg_support + (shape.n_query_neg > 0 ? 1 : 0);
  for (const auto& d : drugs) {
    const auto& users = pool.users_of(d);
    if (users.size() < need_pos) continue;
    std::size_t negatives = 0;
    const bool filter = kb != nullptr && kb->has(d);
    for (const auto& r : pool.records())
      if (!r.has_drug(d) && !(filter && kb->indicated(d, r.codes))) ++negatives;
    if (negatives >= need_neg) out.push_back(d);
  }
  return out;
}

TrainState train(const TrainConfig& config, const DatasetSplit& split, const KnowledgeAssets& assets,
                 ModelParams initial) {
  initial.hp.dropout = config.dropout;
  TrainState state = initial_state(std::move(initial));
  random::Rng rng(random::derive_seed(config.seed, "train-episodes"));
  random::Rng dropout_rng(random::derive_seed(config.seed, "train-dropout"));
  state.rng_state = random::save_state(rng);
  if (config.episodes <= 0) return state;

  const RecordPool pool(split.train_records);
  const DrugDiseaseKB* kb = config.ablation.uniform_negatives ? nullptr : &assets.kb;
  const auto drugs = trainable_drugs(pool, split.train_drugs, config.shape, kb);
  if (drugs.empty())
    throw InsufficientPositivesError("no training drug can form an episode of the configured shape");

  // Validation episodes are drawn once and reused at every check.
  const RecordPool valid_pool(split.valid_records);
  std::vector<Episode> valid;
  if (config.validate_every > 0 && config.valid_episodes > 0 &&
      !episode_drugs(valid_pool, split.valid_drugs, config.valid_n_pos, config.valid_n_neg).empty()) {
    random::Rng vrng(random::derive_seed(config.seed, "validation-episodes"));
    valid = make_eval_episodes(valid_pool, split.valid_drugs, config.valid_episodes,
                               config.valid_n_pos, config.valid_n_neg, vrng);
  }

  namespace fs = std::filesystem;
  std::ofstream log;
  if (!config.out_dir.empty()) {
    fs::create_directories(fs::path(config.out_dir) / "ckpt");
    log = text::open_output((fs::path(config.out_dir) / "train_log.jsonl").string());
  }
  auto checkpoint = [&](const std::string& name, const ModelParams& p) {
    if (!config.out_dir.empty()) save_checkpoint((fs::path(config.out_dir) / "ckpt" / name).string(), p);
  };

  EvalOptions eval_options;
  eval_options.ks = {};
  eval_options.ablation = config.ablation;
  eval_options.workers = config.workers;
  int stale = 0;
  for (int k = 0; k < config.episodes; ++k) {
    const std::string& drug = drugs[random::uniform_index(rng, drugs.size())];
    const Episode e = sample_episode(pool, drug, config.shape, kb, EpisodeMode::kTrain, rng);
    const LossResult res = episode_loss(state.params, e, assets, config.ablation, &dropout_rng);
    if (config.freeze_embeddings) state.params.embeddings.grad.setZero();
    const double lr = lr_at(k + 1, config);
    adam_step(state, lr);
    ++state.step;
    state.loss_trace.push_back(res.loss);
    nlohmann::json line = {{"step", state.step}, {"loss", res.loss}, {"lr", lr}, {"drug", drug}};

    const bool last = k + 1 == config.episodes;
    if (!valid.empty() && (state.step % config.validate_every == 0 || last)) {
      const auto results = evaluate_episodes(state.params, assets, valid_pool, valid, eval_options);
      const auto aucs = metric_values(results, "roc_auc");
      const double auc = summarize(aucs).mean;
      state.validation.push_back({state.step, auc});
      line["valid_roc_auc"] = auc;
      checkpoint("step-" + std::to_string(state.step), state.params);
      if (auc > state.best_valid_metric) {
        state.best_valid_metric = auc;
        state.best_step = state.step;
        state.best_params = state.params;
        checkpoint("best", state.params);
        stale = 0;
      } else {
        ++stale;
      }
    }
    if (log.is_open()) log << line.dump() << '\n';
    if (config.patience && stale >= *config.patience) break;
  }
  if (valid.empty()) {
    state.best_params = state.params;
    state.best_step = state.step;
    checkpoint("step-" + std::to_string(state.step), state.params);
    checkpoint("best", state.params);
  }
  state.rng_state = random::save_state(rng);
  return state;
}

}  // namespace edge
