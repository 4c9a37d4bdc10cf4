#include "edge/cli.hpp"

#include <filesystem>
#include <functional>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "edge/errors.hpp"
#include "edge/experiment.hpp"
#include "edge/text.hpp"

namespace edge {

namespace fs = std::filesystem;

namespace {

int guarded(std::ostream& err, const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::kValidation ? 1 : 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

std::string require_out(const RunConfig& config) {
  const std::string& out = config.get("out");
  if (out.empty()) throw ConfigError("an output directory is required (--out)");
  fs::create_directories(out);
  return out;
}

std::string path_in(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::vector<Episode> test_episodes(const RunConfig& config, const DatasetSplit& split) {
  random::Rng rng(random::derive_seed(config.get_u64("seed"), "test-episodes"));
  return make_eval_episodes(RecordPool(split.test_records), split.test_drugs, config.eval_episodes(),
                            config.eval_n_pos(), config.eval_n_neg(), rng);
}

void write_split_summary(std::ostream& out, const DatasetSplit& split) {
  out << "split: drugs " << split.train_drugs.size() << "/" << split.valid_drugs.size() << "/"
      << split.test_drugs.size() << ", records " << split.train_records.size() << "/"
      << split.valid_records.size() << "/" << split.test_records.size() << " (train/valid/test)\n";
}

}  // namespace

int cmd_generate(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const std::string dir = require_out(config);
    const GeneratorSpec spec = config.generator_spec();
    const GeneratedAssets assets = generate_assets(spec);
    const GeneratedCohort cohort = generate_cohort(spec, assets);
    write_generated(dir, assets, cohort);
    config.write_snapshot(path_in(dir, "config.resolved"));
    out << "wrote " << cohort.records.size() << " records, " << assets.drugs.size() << " drugs to "
        << dir << '\n';
  });
}

int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const std::string dir = require_out(config);
    const Hyperparams hp = config.hyperparams();
    const TrainConfig tc = config.train_config();
    const ExperimentData data =
        load_experiment(config.asset_paths(), config.cutoffs(), config.get_u64("assets.fallback_seed"));
    config.write_snapshot(path_in(dir, "config.resolved"));
    write_split_summary(out, data.split);
    ModelParams init(hp, data.assets.vocabulary, data.assets.embeddings,
                     random::derive_seed(tc.seed, "init"));
    const TrainState state = train(tc, data.split, data.assets, std::move(init));
    if (state.step == 0) save_checkpoint(path_in(path_in(dir, "ckpt"), "best"), state.best_params);
    out << "trained " << state.step << " episodes";
    if (!state.loss_trace.empty()) out << ", final loss " << state.loss_trace.back();
    if (!state.validation.empty())
      out << ", best validation ROC-AUC " << state.best_valid_metric << " at step " << state.best_step;
    out << '\n';
  });
}

int cmd_evaluate(const RunConfig& config, const std::string& checkpoint, const std::string& compare,
                 std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const std::string dir = require_out(config);
    const std::string ckpt = checkpoint.empty() ? path_in(path_in(dir, "ckpt"), "best") : checkpoint;
    const ModelParams params = load_checkpoint(ckpt);
    const ExperimentData data =
        load_experiment(config.asset_paths(), config.cutoffs(), config.get_u64("assets.fallback_seed"));
    const EvalOptions options = config.eval_options();
    config.write_snapshot(path_in(dir, "config.resolved"));
    const auto episodes = test_episodes(config, data.split);
    const RecordPool pool(data.split.test_records);
    EvaluationReport report = aggregate(evaluate_episodes(params, data.assets, pool, episodes, options));
    report.per_category = per_category_report(report.per_episode, data.assets.ontology);
    if (!compare.empty()) {
      const ModelParams other = load_checkpoint(compare);
      const auto other_results = evaluate_episodes(other, data.assets, pool, episodes, options);
      for (const std::string metric : {"roc_auc", "pr_auc"}) {
        TTestResult t = welch_t_test(metric_values(report.per_episode, metric),
                                     metric_values(other_results, metric));
        t.method_a = ckpt;
        t.method_b = compare;
        t.metric = metric;
        report.comparisons.push_back(t);
      }
    }
    write_report_jsonl(path_in(dir, "report.jsonl"), report);
    const std::string table = format_report_table(report);
    auto txt = text::open_output(path_in(dir, "report.txt"));
    txt << table;
    out << table;
  });
}

int cmd_ablate(const RunConfig& config, const std::vector<std::string>& variants, std::ostream& out,
               std::ostream& err) {
  return guarded(err, [&] {
    const std::string dir = require_out(config);
    std::vector<Variant> chosen;
    if (variants.empty())
      chosen = ablation_variants();
    else
      for (const auto& name : variants) chosen.push_back(find_variant(name));
    const Hyperparams hp = config.hyperparams();
    const TrainConfig base = config.train_config();
    const EvalOptions options = config.eval_options();
    const ExperimentData data =
        load_experiment(config.asset_paths(), config.cutoffs(), config.get_u64("assets.fallback_seed"));
    config.write_snapshot(path_in(dir, "config.resolved"));
    write_split_summary(out, data.split);
    const auto episodes = test_episodes(config, data.split);

    std::vector<VariantRun> runs;
    auto jsonl = text::open_output(path_in(dir, "ablation.jsonl"));
    for (const auto& v : chosen) {
      TrainConfig tc = base;
      tc.out_dir = path_in(dir, v.name);
      out << "variant " << v.name << "..." << std::endl;
      runs.push_back(run_variant(data, hp, tc, v, random::derive_seed(tc.seed, "init"), episodes, options));
      write_report_jsonl(path_in(tc.out_dir, "report.jsonl"), runs.back().report);
      nlohmann::json line = {{"variant", v.name}};
      for (const auto& [name, s] : runs.back().report.aggregates)
        line["metrics"][name] = {{"mean", s.mean}, {"ci95", s.ci95}};
      jsonl << line.dump() << '\n';
    }
    const std::string table =
        format_variant_table(runs, {"roc_auc", "pr_auc", "precision@" + std::to_string(options.ks.empty() ? 100 : options.ks.front())});
    auto txt = text::open_output(path_in(dir, "ablation.txt"));
    txt << table;
    out << table;
  });
}

int cmd_export_embeddings(const RunConfig& config, const std::string& checkpoint, std::ostream& out,
                          std::ostream& err) {
  return guarded(err, [&] {
    const std::string dir = require_out(config);
    const std::string ckpt = checkpoint.empty() ? path_in(path_in(dir, "ckpt"), "best") : checkpoint;
    const ModelParams params = load_checkpoint(ckpt);
    const AssetPaths paths = config.asset_paths();
    const DrugOntology ontology = load_ontology(paths.ontology);
    const std::string target = path_in(dir, "drug_embeddings.tsv");
    export_drug_embeddings(target, params, ontology, !config.ablation().no_ontology);
    config.write_snapshot(path_in(dir, "config.resolved"));
    out << "wrote " << target << '\n';
  });
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot recommendation for newly introduced drugs"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::vector<std::string> sets, ablations, variants;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string checkpoint, compare, ks;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Flat key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Master seed");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--workers", workers, "Evaluation threads");
    sub->add_option("--set", sets, "Override a config key: key=value");
  };
  auto* gen = app.add_subcommand("generate", "Write a synthetic asset directory and cohort");
  common(gen);
  auto* tr = app.add_subcommand("train", "Episodic training with validation-based selection");
  common(tr);
  tr->add_option("--ablation", ablations,
                 "Disable components: no_ontology, single_vector, fixed_importance, uniform_negatives");
  auto* ev = app.add_subcommand("evaluate", "Score test episodes and write the report");
  common(ev);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/ckpt/best)");
  ev->add_option("--compare", compare, "Second checkpoint for t-tests");
  ev->add_option("--k", ks, "Comma-separated K list for P@K/R@K");
  ev->add_option("--ablation", ablations, "Ablation flags the checkpoint was trained with");
  auto* ab = app.add_subcommand("ablate", "Train and evaluate the ablation variants");
  common(ab);
  ab->add_option("--variants", variants, "Subset of: full, no_ontology, single_vector, fixed_importance, uniform_negatives");
  ab->add_option("--k", ks, "Comma-separated K list for P@K/R@K");
  auto* ex = app.add_subcommand("export-embeddings", "Write ontology-enriched drug vectors");
  common(ex);
  ex->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/ckpt/best)");
  ex->add_option("--ablation", ablations, "Ablation flags the checkpoint was trained with");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  }

  RunConfig config;
  const int status = guarded(err, [&] {
    if (!config_path.empty()) config.merge_file(config_path);
    config.merge_environment();
    if (seed) config.set("seed", std::to_string(*seed));
    if (!out_dir.empty()) config.set("out", out_dir);
    if (workers) config.set("workers", std::to_string(*workers));
    if (!ks.empty()) config.set("eval.k", ks);
    for (const auto& a : ablations) config.set("ablation." + a, "true");
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + s);
      config.set(std::string(text::trim(s.substr(0, eq))), std::string(text::trim(s.substr(eq + 1))));
    }
  });
  if (status != 0) return status;

  if (gen->parsed()) return cmd_generate(config, out, err);
  if (tr->parsed()) return cmd_train(config, out, err);
  if (ev->parsed()) return cmd_evaluate(config, checkpoint, compare, out, err);
  if (ab->parsed()) return cmd_ablate(config, variants, out, err);
  return cmd_export_embeddings(config, checkpoint, out, err);
}

}  // namespace edge
