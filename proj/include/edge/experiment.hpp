#pragma once

// Train-then-evaluate pipeline shared by the ablate command and benchmarks.

#include <string>
#include <vector>

#include "edge/data.hpp"
#include "edge/evaluation.hpp"
#include "edge/knowledge.hpp"
#include "edge/model.hpp"
#include "edge/synthgen.hpp"
#include "edge/training.hpp"

namespace edge {

struct Variant {
  std::string name;
  Ablation ablation;
};

// "full" followed by the four single-removal variants.
std::vector<Variant> ablation_variants();
Variant find_variant(const std::string& name);  // ConfigError
// The single-vector prototype baseline trained with uniform negatives.
Variant protonet_variant();

struct ExperimentData {
  KnowledgeAssets assets;
  std::vector<PatientRecord> records;
  DatasetSplit split;
};

ExperimentData load_experiment(const AssetPaths& paths, const YearCutoffs& cutoffs,
                               std::uint64_t fallback_seed);
ExperimentData make_experiment(const GeneratedAssets& assets, const GeneratedCohort& cohort,
                               const YearCutoffs& cutoffs);

struct VariantRun {
  Variant variant;
  TrainState state;
  EvaluationReport report;
};

// Initializes from `init_seed`, trains with the variant's ablation and scores
// the given test episodes with the selected (best) parameters.
VariantRun run_variant(const ExperimentData& data, const Hyperparams& hp, TrainConfig config,
                       const Variant& variant, std::uint64_t init_seed,
                       const std::vector<Episode>& test_episodes, EvalOptions options);

// One row per run; columns are mean +- ci95 for each metric.
std::string format_variant_table(const std::vector<VariantRun>& runs,
                                 const std::vector<std::string>& metrics);

}  // namespace edge
