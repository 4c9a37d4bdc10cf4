#include "edge/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "edge/errors.hpp"
#include "edge/text.hpp"

namespace edge {

namespace {

void check_aligned(std::size_t scores, std::size_t labels) {
  if (scores != labels)
    throw DimensionMismatchError(std::to_string(scores) + " scores vs " + std::to_string(labels) +
                                 " labels");
}

std::size_t count_positive(std::span<const int> labels) {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int y) { return y != 0; }));
}

}  // namespace

std::vector<std::size_t> rank_order(std::span<const double> scores,
                                    std::span<const std::string> ids) {
  if (!ids.empty() && ids.size() != scores.size())
    throw DimensionMismatchError("ids and scores differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (!ids.empty()) return ids[a] < ids[b];
    return a < b;
  });
  return order;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_aligned(scores.size(), labels.size());
  const std::size_t pos = count_positive(labels);
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw DegenerateLabelsError("ROC-AUC needs both labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] != 0) rank_sum += avg;
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double pr_auc(std::span<const double> scores, std::span<const int> labels,
              std::span<const std::string> ids) {
  check_aligned(scores.size(), labels.size());
  const std::size_t pos = count_positive(labels);
  if (pos == 0 || pos == labels.size()) throw DegenerateLabelsError("PR-AUC needs both labels");
  const auto order = rank_order(scores, ids);
  double total = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (labels[order[i]] == 0) continue;
    ++hits;
    total += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return total / static_cast<double>(pos);
}

PrecisionRecall precision_recall_at_k(std::span<const double> scores, std::span<const int> labels,
                                      int k, std::span<const std::string> ids) {
  check_aligned(scores.size(), labels.size());
  if (k < 1 || static_cast<std::size_t>(k) > scores.size())
    throw KTooLargeError("k=" + std::to_string(k) + " with " + std::to_string(scores.size()) +
                         " scored records");
  const auto order = rank_order(scores, ids);
  std::size_t hits = 0;
  for (int i = 0; i < k; ++i) hits += labels[order[i]] != 0;
  const std::size_t pos = count_positive(labels);
  PrecisionRecall out;
  out.precision = static_cast<double>(hits) / k;
  out.recall = pos == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(pos);
  return out;
}

double adjusted_precision_at_k(std::span<const double> scores, std::span<const int> labels,
                               std::span<const std::vector<std::string>> record_codes,
                               const DrugDiseaseKB& kb, const std::string& drug, int k,
                               std::span<const std::string> ids) {
  check_aligned(scores.size(), labels.size());
  check_aligned(scores.size(), record_codes.size());
  std::vector<int> adjusted(labels.begin(), labels.end());
  for (std::size_t i = 0; i < adjusted.size(); ++i)
    if (adjusted[i] == 0 && kb.indicated(drug, record_codes[i])) adjusted[i] = 1;
  return precision_recall_at_k(scores, adjusted, k, ids).precision;
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary s;
  s.n = static_cast<int>(values.size());
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / s.n;
  if (s.n < 2) return s;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  const double sd = std::sqrt(ss / (s.n - 1));
  s.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(s.n));
  return s;
}

std::vector<double> metric_values(const std::vector<EpisodeResult>& episodes,
                                  const std::string& metric) {
  std::vector<double> out;
  for (const auto& e : episodes)
    if (auto it = e.metrics.find(metric); it != e.metrics.end()) out.push_back(it->second);
  return out;
}

EvaluationReport aggregate(std::vector<EpisodeResult> per_episode) {
  if (per_episode.size() < 2)
    throw InsufficientEpisodesError("aggregation needs at least 2 episodes, got " +
                                    std::to_string(per_episode.size()));
  EvaluationReport report;
  std::set<std::string> names;
  for (const auto& e : per_episode)
    for (const auto& [name, v] : e.metrics) names.insert(name);
  for (const auto& name : names) {
    const auto values = metric_values(per_episode, name);
    report.aggregates[name] = summarize(values);
  }
  report.per_episode = std::move(per_episode);
  return report;
}

TTestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2)
    throw InsufficientEpisodesError("t-test needs at least 2 values per sample");
  auto moments = [](std::span<const double> x) {
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, ss / (n - 1.0)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double qa = va / na, qb = vb / nb;
  TTestResult r;
  const double se2 = qa + qb;
  if (se2 == 0.0) {
    r.df = na + nb - 2.0;
    if (ma == mb) {
      r.statistic = 0.0;
      r.p_value = 1.0;
    } else {
      r.statistic = ma > mb ? std::numeric_limits<double>::infinity()
                            : -std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
    }
    return r;
  }
  r.statistic = (ma - mb) / std::sqrt(se2);
  r.df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
  boost::math::students_t dist(r.df);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.statistic)));
  r.p_value = std::min(1.0, r.p_value);
  return r;
}

FalseNegativePrevalence false_negative_prevalence(const DatasetSplit& split,
                                                  const DrugDiseaseKB& kb) {
  FalseNegativePrevalence out;
  std::vector<const PatientRecord*> all;
  for (const auto* part : {&split.train_records, &split.valid_records, &split.test_records})
    for (const auto& r : *part) all.push_back(&r);
  double total = 0.0;
  for (const auto& drug : split.test_drugs) {
    if (!kb.has(drug)) continue;
    std::size_t eligible = 0, missed = 0;
    for (const auto* r : all) {
      if (!kb.indicated(drug, r->codes)) continue;
      ++eligible;
      if (!r->has_drug(drug)) ++missed;
    }
    if (eligible == 0) continue;
    const double v = static_cast<double>(missed) / static_cast<double>(eligible);
    out.per_drug[drug] = v;
    total += v;
  }
  if (!out.per_drug.empty()) out.mean = total / static_cast<double>(out.per_drug.size());
  return out;
}

std::map<std::string, double> per_category_report(const std::vector<EpisodeResult>& per_episode,
                                                  const DrugOntology& ontology) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& e : per_episode) {
    if (!ontology.contains(e.drug)) throw UnknownDrugError("drug not in ontology: " + e.drug);
    auto it = e.metrics.find("roc_auc");
    if (it == e.metrics.end()) continue;
    auto& slot = acc[ontology.ancestor_at_level(e.drug, 2)];
    slot.first += it->second;
    slot.second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [cat, s] : acc) out[cat] = s.first / s.second;
  return out;
}

EncodedValues encode_pool(const ModelParams& params, const PhenotypeMap& phenotypes,
                          const RecordPool& pool, int batch_size) {
  batch_size = std::max(1, batch_size);
  const Eigen::Index g = params.hp.phenotype_dim, hidden = params.hp.hidden;
  std::vector<EncodedValues> parts;
  Eigen::Index group_rows = 0;
  for (std::size_t start = 0; start < pool.size(); start += batch_size) {
    const std::size_t end = std::min(pool.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const PatientRecord*> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(&pool[i]);
    parts.push_back(encode_values(params, phenotypes, chunk));
    group_rows += parts.back().groups.rows();
  }
  EncodedValues out;
  const auto n = static_cast<Eigen::Index>(pool.size());
  out.groups.resize(group_rows, g);
  out.pooled.resize(n, g);
  out.sequence.resize(n, hidden);
  Eigen::Index grow = 0, rrow = 0;
  for (auto& part : parts) {
    out.groups.middleRows(grow, part.groups.rows()) = part.groups;
    out.pooled.middleRows(rrow, part.pooled.rows()) = part.pooled;
    out.sequence.middleRows(rrow, part.sequence.rows()) = part.sequence;
    for (auto& lay : part.layout) {
      for (auto& entry : lay) entry.second += static_cast<int>(grow);
      out.layout.push_back(std::move(lay));
    }
    grow += part.groups.rows();
    rrow += part.pooled.rows();
  }
  return out;
}

namespace {

EpisodeResult evaluate_one(const ModelParams& params, const KnowledgeAssets& assets,
                           const RecordPool& pool, const EncodedValues& cache,
                           const std::unordered_map<std::string, int>& index_of,
                           const Episode& episode, const EvalOptions& options) {
  auto indices = [&](const std::vector<PatientRecord>& records) {
    std::vector<int> out;
    out.reserve(records.size());
    for (const auto& r : records) {
      auto it = index_of.find(r.id);
      if (it == index_of.end()) throw UnknownCodeError("episode record not in pool: " + r.id);
      out.push_back(it->second);
    }
    return out;
  };
  const auto sp = indices(episode.support_pos), sn = indices(episode.support_neg);
  auto queries = indices(episode.query_pos);
  const auto qn = indices(episode.query_neg);
  queries.insert(queries.end(), qn.begin(), qn.end());

  EpisodeResult res;
  res.drug = episode.drug;
  res.logits = score_cached(params, assets.ontology, episode.drug, cache, sp, sn, queries, options.ablation);
  res.labels.assign(episode.query_pos.size(), 1);
  res.labels.resize(queries.size(), 0);
  std::vector<std::vector<std::string>> codes;
  for (int q : queries) {
    res.record_ids.push_back(pool[q].id);
    codes.push_back(pool[q].codes);
  }
  for (double x : res.logits) res.scores.push_back(ad::stable_sigmoid(x));

  res.metrics["roc_auc"] = roc_auc(res.logits, res.labels);
  res.metrics["pr_auc"] = pr_auc(res.logits, res.labels, res.record_ids);
  for (int k : options.ks) {
    if (k < 1 || static_cast<std::size_t>(k) > queries.size()) continue;
    const auto pr = precision_recall_at_k(res.logits, res.labels, k, res.record_ids);
    const std::string suffix = "@" + std::to_string(k);
    res.metrics["precision" + suffix] = pr.precision;
    res.metrics["recall" + suffix] = pr.recall;
    res.metrics["adj_precision" + suffix] =
        adjusted_precision_at_k(res.logits, res.labels, codes, assets.kb, episode.drug, k, res.record_ids);
  }
  return res;
}

}  // namespace

std::vector<EpisodeResult> evaluate_episodes(const ModelParams& params,
                                             const KnowledgeAssets& assets,
                                             const RecordPool& pool,
                                             const std::vector<Episode>& episodes,
                                             const EvalOptions& options) {
  std::vector<EpisodeResult> results(episodes.size());
  if (episodes.empty()) return results;
  std::unordered_map<std::string, int> index_of;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (!index_of.emplace(pool[i].id, static_cast<int>(i)).second)
      throw ParseError("duplicate record id in evaluation pool: " + pool[i].id);
  const EncodedValues cache = encode_pool(params, assets.phenotypes, pool, options.encode_batch);

  const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(episodes.size())));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < episodes.size(); i = next++) {
      try {
        results[i] = evaluate_one(params, assets, pool, cache, index_of, episodes[i], options);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = episodes.size();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(work);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

void write_report_jsonl(const std::string& path, const EvaluationReport& report) {
  auto out = text::open_output(path);
  using nlohmann::json;
  for (std::size_t i = 0; i < report.per_episode.size(); ++i) {
    const auto& e = report.per_episode[i];
    json line = {{"type", "episode"}, {"episode", i}, {"drug", e.drug},
                 {"queries", e.labels.size()}, {"metrics", e.metrics}};
    out << line.dump() << '\n';
  }
  for (const auto& [name, s] : report.aggregates) {
    json line = {{"type", "aggregate"}, {"metric", name}, {"mean", s.mean}, {"ci95", s.ci95}, {"n", s.n}};
    out << line.dump() << '\n';
  }
  for (const auto& t : report.comparisons) {
    json line = {{"type", "t_test"},       {"method_a", t.method_a}, {"method_b", t.method_b},
                 {"metric", t.metric},     {"statistic", t.statistic}, {"df", t.df},
                 {"p_value", t.p_value}};
    out << line.dump() << '\n';
  }
  for (const auto& [cat, v] : report.per_category) {
    json line = {{"type", "category"}, {"category", cat}, {"roc_auc", v}};
    out << line.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

std::string format_report_table(const EvaluationReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(22) << "metric" << std::right << std::setw(10) << "mean"
     << std::setw(10) << "ci95" << std::setw(8) << "n" << '\n';
  for (const auto& [name, s] : report.aggregates)
    os << std::left << std::setw(22) << name << std::right << std::setw(10) << s.mean
       << std::setw(10) << s.ci95 << std::setw(8) << s.n << '\n';
  if (!report.comparisons.empty()) {
    os << "\nWelch t-tests\n";
    for (const auto& t : report.comparisons)
      os << "  " << t.method_a << " vs " << t.method_b << " on " << t.metric
         << ": t=" << t.statistic << " df=" << t.df << " p=" << std::setprecision(6) << t.p_value
         << std::setprecision(4) << '\n';
  }
  if (!report.per_category.empty()) {
    os << "\nROC-AUC by category\n";
    for (const auto& [cat, v] : report.per_category)
      os << "  " << std::left << std::setw(20) << cat << std::right << std::setw(10) << v << '\n';
  }
  return os.str();
}

}  // namespace edge
