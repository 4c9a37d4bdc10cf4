#pragma once

// Synthetic knowledge assets and cohorts with known ground truth.
//
// Ontology: a random tree with drug leaves at level `ontology_depth` below
// categories of the given branching. Each deepest category owns a phenotype
// and an anchor disease; each of its drugs takes the anchor with probability
// sqrt(sibling_share_prob), so two siblings share an indication with
// probability sibling_share_prob. The remaining indications come from unused
// diseases of the category phenotype, so they are never shared.
// Records are seeded by a few drugs (one indication each), filled with
// diseases of the first seed's phenotype plus background diseases, and
// prescribed every indicated drug with probability 1 - false_negative_rate.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "edge/data.hpp"
#include "edge/knowledge.hpp"

namespace edge {

struct IntRange {
  int min = 1;
  int max = 1;
  bool operator==(const IntRange&) const = default;
};

struct GeneratorSpec {
  int n_diseases = 1200;
  int n_drugs = 78;
  int ontology_branching = 3;
  int ontology_depth = 3;
  int n_phenotypes = 20;
  int indications_per_drug = 3;
  int records = 3000;
  IntRange codes_per_record{6, 12};
  // Number of drugs whose indications seed each record.
  IntRange prescriptions_per_record{1, 2};
  // Per (record, non-indicated drug) probability of a spurious prescription.
  double noise_rate = 0.002;
  double false_negative_rate = 0.25;
  double sibling_share_prob = 0.8;
  // Fraction of non-seed codes drawn from the dominant phenotype.
  double dominant_share = 0.3;
  int embed_dim = 32;
  // Ontology-structured base embeddings when true, independent ones otherwise.
  bool ontology_signal = true;
  double embedding_noise = 0.5;
  int year_min = 2000;
  int year_max = 2019;
  std::uint64_t seed = 7;

  void validate() const;  // SpecError
  bool operator==(const GeneratorSpec&) const = default;
};

struct GeneratedAssets {
  KnowledgeAssets knowledge;
  std::map<std::string, int> drug_year;  // introduction year per drug
  std::vector<std::string> drugs;        // leaves in creation order
};

struct GroundTruthEntry {
  std::string record_id;
  std::string drug;
  bool eligible = true;  // indicated or prescribed
  bool prescribed = false;
  bool indicated = false;
};

struct GeneratedCohort {
  std::vector<PatientRecord> records;
  std::vector<GroundTruthEntry> ground_truth;
};

GeneratedAssets generate_assets(const GeneratorSpec& spec);
GeneratedCohort generate_cohort(const GeneratorSpec& spec, const GeneratedAssets& assets);

// Writes ontology, phenotypes, kb, embeddings, records and ground_truth
// files under `dir` using AssetPaths::in_directory names.
void write_generated(const std::string& dir, const GeneratedAssets& assets,
                     const GeneratedCohort& cohort);
void save_ground_truth(const std::string& path, const std::vector<GroundTruthEntry>& entries);
std::vector<GroundTruthEntry> load_ground_truth(const std::string& path);

}  // namespace edge
