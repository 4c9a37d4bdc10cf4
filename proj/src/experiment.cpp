#include "edge/experiment.hpp"

#include <iomanip>
#include <sstream>

#include "edge/errors.hpp"

namespace edge {

std::vector<Variant> ablation_variants() {
  std::vector<Variant> v(5);
  v[0].name = "full";
  v[1].name = "no_ontology";
  v[1].ablation.no_ontology = true;
  v[2].name = "single_vector";
  v[2].ablation.single_vector = true;
  v[3].name = "fixed_importance";
  v[3].ablation.fixed_importance = true;
  v[4].name = "uniform_negatives";
  v[4].ablation.uniform_negatives = true;
  return v;
}

Variant find_variant(const std::string& name) {
  for (const auto& v : ablation_variants())
    if (v.name == name) return v;
  if (name == "protonet") return protonet_variant();
  throw ConfigError("unknown variant: " + name);
}

Variant protonet_variant() {
  Variant v;
  v.name = "protonet";
  v.ablation.single_vector = true;
  v.ablation.uniform_negatives = true;
  return v;
}

ExperimentData load_experiment(const AssetPaths& paths, const YearCutoffs& cutoffs,
                               std::uint64_t fallback_seed) {
  ExperimentData d;
  d.assets = load_assets(paths, fallback_seed);
  d.records = load_records(paths.records, d.assets.vocabulary);
  d.split = split_by_introduction(d.records, first_prescription_years(d.records), cutoffs);
  return d;
}

ExperimentData make_experiment(const GeneratedAssets& assets, const GeneratedCohort& cohort,
                               const YearCutoffs& cutoffs) {
  ExperimentData d;
  d.assets = assets.knowledge;
  d.records = cohort.records;
  d.split = split_by_introduction(d.records, first_prescription_years(d.records), cutoffs);
  return d;
}

VariantRun run_variant(const ExperimentData& data, const Hyperparams& hp, TrainConfig config,
                       const Variant& variant, std::uint64_t init_seed,
                       const std::vector<Episode>& test_episodes, EvalOptions options) {
  config.ablation = variant.ablation;
  options.ablation = variant.ablation;
  ModelParams init(hp, data.assets.vocabulary, data.assets.embeddings, init_seed);
  VariantRun run;
  run.variant = variant;
  run.state = train(config, data.split, data.assets, std::move(init));
  const RecordPool pool(data.split.test_records);
  run.report = aggregate(evaluate_episodes(run.state.best_params, data.assets, pool, test_episodes, options));
  run.report.per_category = per_category_report(run.report.per_episode, data.assets.ontology);
  return run;
}

std::string format_variant_table(const std::vector<VariantRun>& runs,
                                 const std::vector<std::string>& metrics) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << std::left << std::setw(20) << "variant";
  for (const auto& m : metrics) os << std::right << std::setw(22) << m;
  os << '\n';
  for (const auto& r : runs) {
    os << std::left << std::setw(20) << r.variant.name;
    for (const auto& m : metrics) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(4);
      if (auto it = r.report.aggregates.find(m); it != r.report.aggregates.end())
        cell << it->second.mean << " +- " << it->second.ci95;
      else
        cell << "n/a";
      os << std::right << std::setw(22) << cell.str();
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace edge
