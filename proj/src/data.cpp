#include "edge/data.hpp"

#include <algorithm>
#include <istream>
#include <ostream>

#include "edge/errors.hpp"
#include "edge/text.hpp"

namespace edge {

bool PatientRecord::has_drug(const std::string& drug) const {
  return std::find(drugs.begin(), drugs.end(), drug) != drugs.end();
}

std::string format_record(const PatientRecord& r) {
  return r.id + '|' + std::to_string(r.year) + '|' + text::join(r.codes, ',') + '|' +
         text::join(r.drugs, ',');
}

PatientRecord parse_record(const std::string& line, const CodeVocabulary* vocab,
                           const std::string& where) {
  const auto fields = text::split(line, '|');
  if (fields.size() != 4) throw ParseError(where + ": expected id|year|codes|drugs");
  PatientRecord r;
  r.id = fields[0];
  if (r.id.empty()) throw ParseError(where + ": empty record id");
  r.year = text::parse_number<int>(fields[1], where);
  r.codes = text::split_list(fields[2], ',');
  r.drugs = text::split_list(fields[3], ',');
  if (r.codes.empty()) throw ParseError(where + ": record '" + r.id + "' has no codes");
  if (r.drugs.empty()) throw ParseError(where + ": record '" + r.id + "' has no drugs");
  for (std::size_t i = 0; i < r.drugs.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (r.drugs[i] == r.drugs[j])
        throw ParseError(where + ": drug '" + r.drugs[i] + "' listed twice");
  if (vocab != nullptr) {
    for (const auto& c : r.codes) {
      if (!vocab->contains(c)) throw UnknownCodeError(where + ": code '" + c + "'");
      const CodeKind k = vocab->at(c).kind;
      if (k != CodeKind::kDisease && k != CodeKind::kProcedure)
        throw ParseError(where + ": '" + c + "' is not a disease or procedure code");
    }
    for (const auto& m : r.drugs) {
      if (!vocab->contains(m)) throw UnknownCodeError(where + ": drug '" + m + "'");
      if (vocab->at(m).kind != CodeKind::kDrug)
        throw ParseError(where + ": '" + m + "' is not a drug (ontology leaf)");
    }
  }
  return r;
}

std::vector<PatientRecord> read_records(std::istream& in, const CodeVocabulary* vocab,
                                        const std::string& source) {
  std::vector<PatientRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty() || line[0] == '#') continue;
    out.push_back(parse_record(line, vocab, source + ":" + std::to_string(lineno)));
  }
  return out;
}

std::vector<PatientRecord> load_records(const std::string& path, const CodeVocabulary& vocab) {
  auto in = text::open_input(path);
  return read_records(in, &vocab, path);
}

void write_records(std::ostream& out, const std::vector<PatientRecord>& records) {
  for (const auto& r : records) out << format_record(r) << '\n';
}

void save_records(const std::string& path, const std::vector<PatientRecord>& records) {
  auto out = text::open_output(path);
  write_records(out, records);
}

std::map<std::string, int> first_prescription_years(const std::vector<PatientRecord>& records) {
  std::map<std::string, int> first;
  for (const auto& r : records)
    for (const auto& m : r.drugs) {
      const auto [it, inserted] = first.emplace(m, r.year);
      if (!inserted) it->second = std::min(it->second, r.year);
    }
  return first;
}

DatasetSplit split_by_introduction(const std::vector<PatientRecord>& records,
                                   const std::map<std::string, int>& first_year_of,
                                   const YearCutoffs& cutoffs) {
  if (cutoffs.train_until > cutoffs.valid_until)
    throw ConfigError("train cutoff " + std::to_string(cutoffs.train_until) +
                      " is after validation cutoff " + std::to_string(cutoffs.valid_until));
  DatasetSplit split;
  for (const auto& [drug, year] : first_year_of) {
    if (year <= cutoffs.train_until) split.train_drugs.insert(drug);
    else if (year <= cutoffs.valid_until) split.valid_drugs.insert(drug);
    else split.test_drugs.insert(drug);
  }
  for (const auto& r : records) {
    bool test = false, valid = false;
    for (const auto& m : r.drugs) {
      if (!first_year_of.count(m))
        throw MissingYearError("drug '" + m + "' in record '" + r.id + "' has no first year");
      test = test || split.test_drugs.count(m) > 0;
      valid = valid || split.valid_drugs.count(m) > 0;
    }
    if (test) split.test_records.push_back(r);
    else if (valid) split.valid_records.push_back(r);
    else split.train_records.push_back(r);
  }
  return split;
}

// ---------------------------------------------------------------------------
// RecordPool

RecordPool::RecordPool(std::vector<PatientRecord> records) : records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i)
    for (const auto& m : records_[i].drugs) users_[m].push_back(static_cast<int>(i));
}

const std::vector<int>& RecordPool::users_of(const std::string& drug) const {
  const auto it = users_.find(drug);
  return it == users_.end() ? none_ : it->second;
}

// ---------------------------------------------------------------------------
// Episodes

namespace {

std::vector<char> user_mask(const RecordPool& pool, const std::string& drug) {
  std::vector<char> is_user(pool.size(), 0);
  for (int i : pool.users_of(drug)) is_user[i] = 1;
  return is_user;
}

std::vector<PatientRecord> gather(const RecordPool& pool, const std::vector<int>& idx,
                                  std::size_t from, std::size_t to) {
  std::vector<PatientRecord> out;
  out.reserve(to - from);
  for (std::size_t i = from; i < to; ++i) out.push_back(pool[idx[i]]);
  return out;
}

}  // namespace

Episode sample_episode(const RecordPool& pool, const std::string& drug, const EpisodeShape& shape,
                       const DrugDiseaseKB* kb, EpisodeMode mode, random::Rng& rng) {
  const auto& users = pool.users_of(drug);
  const std::size_t need_pos = shape.n_pos + (shape.n_query_pos > 0 ? 1 : 0);
  if (users.size() < need_pos)
    throw InsufficientPositivesError("drug '" + drug + "' has " + std::to_string(users.size()) +
                                     " users, need " + std::to_string(need_pos));

  const bool filter = mode == EpisodeMode::kTrain && kb != nullptr && kb->has(drug);
  const auto is_user = user_mask(pool, drug);
  std::vector<int> candidates;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (is_user[i]) continue;
    if (filter && kb->indicated(drug, pool[i].codes)) continue;
    candidates.push_back(static_cast<int>(i));
  }
  const std::size_t need_neg = shape.n_neg_support + (shape.n_query_neg > 0 ? 1 : 0);
  if (candidates.size() < need_neg)
    throw InsufficientNegativesError("drug '" + drug + "' has " +
                                     std::to_string(candidates.size()) + " eligible negatives" +
                                     (filter ? " after knowledge-base filtering" : "") +
                                     ", need " + std::to_string(need_neg));

  const auto pos = random::sample_without_replacement(
      rng, users, static_cast<std::size_t>(shape.n_pos + shape.n_query_pos));
  const auto neg = random::sample_without_replacement(
      rng, std::move(candidates), static_cast<std::size_t>(shape.n_neg_support + shape.n_query_neg));

  Episode e;
  e.drug = drug;
  e.mode = mode;
  e.support_pos = gather(pool, pos, 0, shape.n_pos);
  e.query_pos = gather(pool, pos, shape.n_pos, pos.size());
  e.support_neg = gather(pool, neg, 0, shape.n_neg_support);
  e.query_neg = gather(pool, neg, shape.n_neg_support, neg.size());
  return e;
}

std::vector<std::string> episode_drugs(const RecordPool& pool, const std::set<std::string>& drugs,
                                       int n_pos, int n_neg) {
  std::vector<std::string> out;
  for (const auto& d : drugs) {
    const std::size_t users = pool.users_of(d).size();
    if (users >= static_cast<std::size_t>(n_pos + 1) &&
        pool.size() - users >= static_cast<std::size_t>(n_neg + 1))
      out.push_back(d);
  }
  return out;
}

std::vector<Episode> make_eval_episodes(const RecordPool& pool, const std::set<std::string>& drugs,
                                        int n_episodes, int n_pos, int n_neg, random::Rng& rng) {
  std::vector<Episode> out;
  if (n_episodes <= 0) return out;
  const auto eligible = episode_drugs(pool, drugs, n_pos, n_neg);
  if (eligible.empty())
    throw InsufficientPositivesError("no drug has " + std::to_string(n_pos + 1) +
                                     " users and " + std::to_string(n_neg + 1) +
                                     " non-users in the evaluation pool");
  out.reserve(n_episodes);
  for (int k = 0; k < n_episodes; ++k) {
    const std::string& drug = eligible[random::uniform_index(rng, eligible.size())];
    const auto is_user = user_mask(pool, drug);
    std::vector<int> non_users;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (!is_user[i]) non_users.push_back(static_cast<int>(i));
    const auto pos = random::sample_without_replacement(rng, pool.users_of(drug), n_pos);
    const auto neg = random::sample_without_replacement(rng, std::move(non_users), n_neg);

    std::vector<char> in_support(pool.size(), 0);
    for (int i : pos) in_support[i] = 1;
    for (int i : neg) in_support[i] = 1;

    Episode e;
    e.drug = drug;
    e.mode = EpisodeMode::kEval;
    e.support_pos = gather(pool, pos, 0, pos.size());
    e.support_neg = gather(pool, neg, 0, neg.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (in_support[i]) continue;
      (is_user[i] ? e.query_pos : e.query_neg).push_back(pool[i]);
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Episode> make_eval_episodes(const DatasetSplit& split, int n_episodes,
                                        random::Rng& rng) {
  if (n_episodes <= 0) return {};
  const RecordPool pool(split.test_records);
  return make_eval_episodes(pool, split.test_drugs, n_episodes, 5, 25, rng);
}

void write_episode(std::ostream& out, const Episode& e) {
  out << "#episode drug=" << e.drug << " mode=" << (e.mode == EpisodeMode::kTrain ? "train" : "eval")
      << '\n';
  out << "#support_pos\n";
  write_records(out, e.support_pos);
  out << "#support_neg\n";
  write_records(out, e.support_neg);
  out << "#query_pos\n";
  write_records(out, e.query_pos);
  out << "#query_neg\n";
  write_records(out, e.query_neg);
}

std::vector<Episode> read_episodes(std::istream& in) {
  std::vector<Episode> out;
  std::vector<PatientRecord>* section = nullptr;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const std::string where = "episode dump:" + std::to_string(lineno);
    if (line.rfind("#episode ", 0) == 0) {
      Episode e;
      for (const auto& kv : text::split(line.substr(9), ' ')) {
        if (kv.rfind("drug=", 0) == 0) e.drug = kv.substr(5);
        else if (kv == "mode=train") e.mode = EpisodeMode::kTrain;
        else if (kv == "mode=eval") e.mode = EpisodeMode::kEval;
        else throw ParseError(where + ": bad episode header field '" + kv + "'");
      }
      out.push_back(std::move(e));
      section = nullptr;
      continue;
    }
    if (out.empty()) throw ParseError(where + ": content before #episode header");
    Episode& e = out.back();
    if (line == "#support_pos") section = &e.support_pos;
    else if (line == "#support_neg") section = &e.support_neg;
    else if (line == "#query_pos") section = &e.query_pos;
    else if (line == "#query_neg") section = &e.query_neg;
    else if (section == nullptr) throw ParseError(where + ": record outside a section");
    else section->push_back(parse_record(line, nullptr, where));
  }
  return out;
}

int count_kb_violations(const Episode& e, const DrugDiseaseKB& kb) {
  int n = 0;
  for (const auto* set : {&e.support_neg, &e.query_neg})
    for (const auto& r : *set)
      if (kb.indicated(e.drug, r.codes)) ++n;
  return n;
}

}  // namespace edge
