#pragma once

// Episode-level ranking metrics, aggregation with confidence intervals,
// significance tests, false-negative analysis and the evaluation driver.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edge/data.hpp"
#include "edge/knowledge.hpp"
#include "edge/model.hpp"

namespace edge {

// Indices ordered by score descending; ties by id ascending, or by index when
// `ids` is empty.
std::vector<std::size_t> rank_order(std::span<const double> scores,
                                    std::span<const std::string> ids = {});

// Rank-based AUC with ties counted 1/2. DegenerateLabelsError without both labels.
double roc_auc(std::span<const double> scores, std::span<const int> labels);
// Average precision over the ranking from rank_order.
double pr_auc(std::span<const double> scores, std::span<const int> labels,
              std::span<const std::string> ids = {});

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;  // 0 when there are no positives
};
PrecisionRecall precision_recall_at_k(std::span<const double> scores, std::span<const int> labels,
                                      int k, std::span<const std::string> ids = {});

// P@k after flipping negatives whose codes hit an indication of `drug`.
double adjusted_precision_at_k(std::span<const double> scores, std::span<const int> labels,
                               std::span<const std::vector<std::string>> record_codes,
                               const DrugDiseaseKB& kb, const std::string& drug, int k,
                               std::span<const std::string> ids = {});

struct EpisodeResult {
  std::string drug;
  std::vector<std::string> record_ids;
  std::vector<double> scores;  // probabilities
  std::vector<double> logits;  // ranking key; monotone in `scores` without saturation ties
  std::vector<int> labels;
  std::map<std::string, double> metrics;
};

struct MetricSummary {
  double mean = 0.0;
  double ci95 = 0.0;  // half-width, 1.96 * sd / sqrt(n)
  int n = 0;
};

struct TTestResult {
  std::string method_a, method_b, metric;
  double statistic = 0.0;
  double df = 0.0;
  double p_value = 1.0;
};

struct EvaluationReport {
  std::vector<EpisodeResult> per_episode;
  std::map<std::string, MetricSummary> aggregates;
  std::vector<TTestResult> comparisons;
  std::map<std::string, double> per_category;
};

MetricSummary summarize(std::span<const double> values);
// Mean and ci95 per metric over the episodes that report it.
// InsufficientEpisodesError below two episodes.
EvaluationReport aggregate(std::vector<EpisodeResult> per_episode);

// Welch's unequal-variance two-sample t-test, two-sided.
TTestResult welch_t_test(std::span<const double> a, std::span<const double> b);
std::vector<double> metric_values(const std::vector<EpisodeResult>& episodes,
                                  const std::string& metric);

struct FalseNegativePrevalence {
  std::map<std::string, double> per_drug;
  double mean = 0.0;
};
// For each test drug: among all records of the split whose codes hit one of
// its indications, the fraction that do not use it. Drugs without any such
// record are left out; the mean is 0 when none remain.
FalseNegativePrevalence false_negative_prevalence(const DatasetSplit& split,
                                                  const DrugDiseaseKB& kb);

// Mean episode ROC-AUC grouped by the level-2 ancestor of each drug.
std::map<std::string, double> per_category_report(const std::vector<EpisodeResult>& per_episode,
                                                  const DrugOntology& ontology);

struct EvalOptions {
  std::vector<int> ks = {100, 500};
  Ablation ablation;
  int workers = 1;
  // Records per encoder batch when caching the pool.
  int encode_batch = 256;
};

// Encodes every record of `pool` once for reuse across episodes.
EncodedValues encode_pool(const ModelParams& params, const PhenotypeMap& phenotypes,
                          const RecordPool& pool, int batch_size = 256);

// Scores each episode's queries against its supports. Episodes' records must
// belong to `pool` (matched by record id). Results keep the episode order
// regardless of `workers`. P@k / R@k are reported only when k does not exceed
// the query count; adjusted P@k needs `kb`.
std::vector<EpisodeResult> evaluate_episodes(const ModelParams& params,
                                             const KnowledgeAssets& assets,
                                             const RecordPool& pool,
                                             const std::vector<Episode>& episodes,
                                             const EvalOptions& options);

// Line-delimited JSON records plus a fixed-width text table.
void write_report_jsonl(const std::string& path, const EvaluationReport& report);
std::string format_report_table(const EvaluationReport& report);

}  // namespace edge
