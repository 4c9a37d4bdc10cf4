#pragma once

// Patient records, drug-introduction splits and few-shot episode sampling.

#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "edge/knowledge.hpp"
#include "edge/random.hpp"

namespace edge {

// One admission: ordered disease/procedure codes and the drugs prescribed.
struct PatientRecord {
  std::string id;
  int year = 0;
  std::vector<std::string> codes;
  std::vector<std::string> drugs;  // no duplicates, file order kept

  bool has_drug(const std::string& drug) const;
  bool operator==(const PatientRecord&) const = default;
};

// `record_id|year|c1,c2,...|m1,m2,...`
std::string format_record(const PatientRecord& r);
// Validates codes against `vocab` when it is non-null.
PatientRecord parse_record(const std::string& line, const CodeVocabulary* vocab,
                           const std::string& where);

std::vector<PatientRecord> load_records(const std::string& path, const CodeVocabulary& vocab);
std::vector<PatientRecord> read_records(std::istream& in, const CodeVocabulary* vocab,
                                        const std::string& source);
void save_records(const std::string& path, const std::vector<PatientRecord>& records);
void write_records(std::ostream& out, const std::vector<PatientRecord>& records);

// Earliest record year in which each drug is prescribed.
std::map<std::string, int> first_prescription_years(const std::vector<PatientRecord>& records);

struct YearCutoffs {
  int train_until = 0;  // drugs first seen up to and including this year are "old"
  int valid_until = 0;  // (train_until, valid_until] are validation; later are "new"
};

struct DatasetSplit {
  std::set<std::string> train_drugs, valid_drugs, test_drugs;
  std::vector<PatientRecord> train_records, valid_records, test_records;

  bool operator==(const DatasetSplit&) const = default;
};

// Partitions drugs by first year and assigns each record once, with priority
// test > validation > train.
DatasetSplit split_by_introduction(const std::vector<PatientRecord>& records,
                                   const std::map<std::string, int>& first_year_of,
                                   const YearCutoffs& cutoffs);

// Records plus a per-drug index of their users. Immutable after construction.
class RecordPool {
 public:
  RecordPool() = default;
  explicit RecordPool(std::vector<PatientRecord> records);

  const std::vector<PatientRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  const PatientRecord& operator[](std::size_t i) const { return records_[i]; }
  // Indices of records prescribing `drug`, ascending.
  const std::vector<int>& users_of(const std::string& drug) const;

 private:
  std::vector<PatientRecord> records_;
  std::unordered_map<std::string, std::vector<int>> users_;
  std::vector<int> none_;
};

enum class EpisodeMode { kTrain, kEval };

struct EpisodeShape {
  int n_pos = 5;
  int n_neg_support = 250;
  int n_query_pos = 5;
  int n_query_neg = 25;
};

struct Episode {
  std::string drug;
  std::vector<PatientRecord> support_pos, support_neg, query_pos, query_neg;
  EpisodeMode mode = EpisodeMode::kTrain;

  bool operator==(const Episode&) const = default;
};

// Samples one episode for `drug` without replacement. In train mode with a
// knowledge base, negatives whose codes hit an indication of `drug` are never
// drawn (drugs absent from the KB fall back to uniform negatives). Eval mode
// never filters.
Episode sample_episode(const RecordPool& pool, const std::string& drug, const EpisodeShape& shape,
                       const DrugDiseaseKB* kb, EpisodeMode mode, random::Rng& rng);

// Drugs in `drugs` with enough users and non-users in `pool` to form an
// episode of the given support sizes plus at least one query of each label.
std::vector<std::string> episode_drugs(const RecordPool& pool, const std::set<std::string>& drugs,
                                       int n_pos, int n_neg);

// Evaluation episodes: a random drug from `drugs`, `n_pos`/`n_neg` uniform
// supports, and every remaining record of the pool as a labeled query.
std::vector<Episode> make_eval_episodes(const RecordPool& pool, const std::set<std::string>& drugs,
                                        int n_episodes, int n_pos, int n_neg, random::Rng& rng);
// Split-level convenience over the test pool with 5 positive / 25 negative supports.
std::vector<Episode> make_eval_episodes(const DatasetSplit& split, int n_episodes,
                                        random::Rng& rng);

// Episodes as `#episode drug=<id> mode=<train|eval>` headers followed by
// `#support_pos`, `#support_neg`, `#query_pos`, `#query_neg` sections of record lines.
void write_episode(std::ostream& out, const Episode& e);
std::vector<Episode> read_episodes(std::istream& in);

// Number of negatives in `e` (support and query) indicated for its drug.
int count_kb_violations(const Episode& e, const DrugDiseaseKB& kb);

}  // namespace edge
