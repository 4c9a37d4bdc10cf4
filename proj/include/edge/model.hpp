#pragma once

// The drug-dependent multi-phenotype few-shot scorer.
//
// Drug side: a drug's base embedding attends over its ontology ancestors to
// give h; a single affine layer plus sigmoid maps h to per-phenotype
// importance weights beta.
// Patient side: a bidirectional GRU contextualizes the record's codes; each
// code is projected to the phenotype space and averaged within its phenotype.
// Scoring: prototypes are per-phenotype means over the support set; the
// query's per-phenotype distances to the positive and negative prototypes are
// weighted by beta and compared through a two-way softmax.

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "edge/autodiff.hpp"
#include "edge/data.hpp"
#include "edge/knowledge.hpp"
#include "edge/random.hpp"

namespace edge {

// How a support patient that lacks phenotype l enters the prototype for l.
enum class PrototypeRule {
  kSubstitutePooled,  // use the patient's pooled representation
  kSkipMissing,       // average only over patients that have l
};

struct Hyperparams {
  int embed_dim = 768;         // e: base code embeddings, drug attention, importance head
  int hidden = 512;            // encoder output; two directions of hidden / 2
  int phenotype_dim = 64;      // g
  int phenotypes = 511;        // L
  int attention_hidden = 128;  // width of the two-layer attention net
  ad::Distance distance = ad::Distance::kEuclidean;
  double dropout = 0.5;        // on encoder outputs, training only
  int max_ancestors = 0;       // 0 keeps the full ontology closure
  PrototypeRule prototype_rule = PrototypeRule::kSubstitutePooled;

  void validate() const;  // DimensionMismatchError
  bool operator==(const Hyperparams&) const = default;
};

// Switches that remove one component each.
struct Ablation {
  bool no_ontology = false;        // h = the drug's own embedding
  bool single_vector = false;      // one vector per patient, plain prototype distance
  bool fixed_importance = false;   // beta = 1
  bool uniform_negatives = false;  // sampler ignores the knowledge base

  bool operator==(const Ablation&) const = default;
};

struct GruParams {
  ad::Parameter w_in;      // e x 3H   (reset | update | candidate)
  ad::Parameter w_hidden;  // H x 3H
  ad::Parameter b_in;      // 1 x 3H
  ad::Parameter b_hidden;  // 1 x 3H
};

class ModelParams {
 public:
  ModelParams() = default;
  // Embeddings start from `base`; everything else is uniform in
  // +-1/sqrt(fan_in) from `seed`.
  ModelParams(const Hyperparams& hp, const CodeVocabulary& vocab, const BaseEmbeddingTable& base,
              std::uint64_t seed);

  Hyperparams hp;
  std::vector<std::string> code_ids;  // row order of `embeddings`
  ad::Parameter embeddings;           // n_codes x e
  GruParams forward, backward;
  ad::Parameter attn_w1, attn_b1, attn_w2, attn_b2;  // 2e -> H_a -> 1
  ad::Parameter proj_w, proj_b;                      // hidden -> g
  ad::Parameter imp_w, imp_b;                        // e -> L

  int code_index(const std::string& id) const;  // UnknownCodeError
  void rebuild_index();

  std::vector<ad::Parameter*> all();
  std::vector<const ad::Parameter*> all() const;
  void zero_grad();

 private:
  std::unordered_map<std::string, int> index_;
};

// Per-phenotype patient (or prototype) representation. `vectors` holds one
// g-vector per active phenotype; missing phenotypes fall back to `pooled`.
struct PhenotypeSet {
  std::map<int, Eigen::VectorXd> vectors;
  Eigen::VectorXd pooled;

  std::vector<int> active() const;
};

struct DrugEncoding {
  Eigen::VectorXd h;
  std::vector<std::string> ancestors;  // closure used, drug first
  Eigen::VectorXd attention;           // one weight per ancestor, sums to 1
};

// ---------------------------------------------------------------------------
// Tape-level building blocks. Everything below runs on an ad::Tape; the
// plain-value functions further down wrap them.

struct EncodedBatch {
  ad::Var groups;    // one row per (record, active phenotype)
  ad::Var pooled;    // n_records x g
  ad::Var sequence;  // n_records x hidden, mean of contextual code representations
  // Per record: (phenotype, row in `groups`) sorted by phenotype.
  std::vector<std::vector<std::pair<int, int>>> layout;
};

// Values of an EncodedBatch detached from any tape, for reuse across episodes.
struct EncodedValues {
  ad::Matrix groups, pooled, sequence;
  std::vector<std::vector<std::pair<int, int>>> layout;
};

struct Prototype {
  ad::Var rows;                 // one row per entry of `phenotypes`
  ad::Var pooled;               // 1 x g
  std::vector<int> phenotypes;  // sorted union of member phenotypes
};

struct PhenotypeDistances {
  ad::Var z;  // one row per (query, phenotype) pair in the union mask
  std::vector<int> row_query;
  std::vector<int> row_phenotype;
  int n_queries = 0;
};

// Tape-level operations that do not touch learnable parameters.
EncodedBatch bind_values(ad::Tape& tape, const EncodedValues& values);
// Builds a batch of constants from plain phenotype sets (sequence = pooled).
EncodedBatch bind_sets(ad::Tape& tape, std::span<const PhenotypeSet> sets);
Prototype bind_prototype(ad::Tape& tape, const PhenotypeSet& proto);

Prototype build_prototype(const EncodedBatch& batch, std::span<const int> members,
                          PrototypeRule rule);
// Distances over active(query) U active(proto), substituting the pooled
// vector on whichever side lacks the phenotype.
PhenotypeDistances build_distances(const EncodedBatch& batch, std::span<const int> queries,
                                   const Prototype& proto, ad::Distance metric);
// beta^T z per query (n_queries x 1); a null beta means all-ones weights.
ad::Var weighted_distance(const PhenotypeDistances& d, const ad::Var* beta);
// Distance of each query's sequence vector to the support mean (n_queries x 1).
ad::Var single_vector_distance(const EncodedBatch& batch, std::span<const int> support,
                               std::span<const int> queries, ad::Distance metric);

// One forward pass over the learnable parts. A mutable ModelParams binds
// parameters as gradient leaves; a const one enters the tape by reference.
class Graph {
 public:
  Graph(ad::Tape& tape, const ModelParams& params);
  // `dropout_rng` enables dropout on encoder outputs; pass nullptr to disable.
  Graph(ad::Tape& tape, ModelParams& params, random::Rng* dropout_rng);

  ad::Tape& tape() { return tape_; }
  const ModelParams& params() const { return params_; }

  ad::Var drug_representation(const DrugOntology& ontology, const std::string& drug,
                              bool use_ontology, ad::Var* attention = nullptr,
                              std::vector<std::string>* ancestors = nullptr);
  ad::Var importance(ad::Var h);  // 1 x L
  EncodedBatch encode(const PhenotypeMap& phenotypes,
                      std::span<const PatientRecord* const> records);

  // Logit of recommending `drug` to each query: beta^T z' - beta^T z.
  ad::Var episode_logits(const DrugOntology& ontology, const std::string& drug,
                         const EncodedBatch& batch, std::span<const int> support_pos,
                         std::span<const int> support_neg, std::span<const int> queries,
                         const Ablation& ablation);

 private:
  ad::Var bind(const ad::Parameter& p);
  ad::Var run_gru(const GruParams& gru, const std::vector<ad::SparseMatrix>& steps,
                  const std::vector<ad::Matrix>& masks, std::size_t n,
                  std::vector<ad::Var>& outputs);

  ad::Tape& tape_;
  const ModelParams& params_;
  bool trainable_ = false;
  random::Rng* dropout_rng_ = nullptr;
  std::unordered_map<const ad::Parameter*, ad::Var> bound_;
};

// ---------------------------------------------------------------------------
// Plain-value operations.

DrugEncoding encode_drug(const ModelParams& params, const DrugOntology& ontology,
                         const std::string& drug, bool use_ontology = true);
PhenotypeSet encode_patient(const ModelParams& params, const PatientRecord& record,
                            const PhenotypeMap& phenotypes);
PhenotypeSet compute_prototypes(std::span<const PhenotypeSet> sets,
                                PrototypeRule rule = PrototypeRule::kSubstitutePooled);
// Length-`n_phenotypes` vector; entries outside active(query) U active(proto) are 0.
Eigen::VectorXd phenotype_distances(const PhenotypeSet& query, const PhenotypeSet& proto,
                                    ad::Distance metric, int n_phenotypes);
Eigen::VectorXd drug_importance(const ModelParams& params, const Eigen::VectorXd& h);
// exp(-b.z) / (exp(-b.z) + exp(-b.z')), evaluated as a stable sigmoid.
double recommend_probability(const Eigen::VectorXd& beta, const Eigen::VectorXd& z,
                             const Eigen::VectorXd& z_neg);
double score_query(const ModelParams& params, const DrugOntology& ontology,
                   const PhenotypeMap& phenotypes, const std::string& drug,
                   const std::vector<PatientRecord>& support_pos,
                   const std::vector<PatientRecord>& support_neg, const PatientRecord& query,
                   const Ablation& ablation = {});

// Forward-only encoding of many records, reusable across episodes.
EncodedValues encode_values(const ModelParams& params, const PhenotypeMap& phenotypes,
                            std::span<const PatientRecord* const> records);
// Logits for `queries` given cached encodings (indices into the cache).
std::vector<double> score_cached(const ModelParams& params, const DrugOntology& ontology,
                                 const std::string& drug, const EncodedValues& cache,
                                 std::span<const int> support_pos,
                                 std::span<const int> support_neg, std::span<const int> queries,
                                 const Ablation& ablation);

// ---------------------------------------------------------------------------
// Persistence.

// Binary container: magic, version, hyperparameters, code ids, and every named
// tensor with its shape. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

// TSV `drug<TAB>h1,...,he` for each ontology leaf.
void export_drug_embeddings(const std::string& path, const ModelParams& params,
                            const DrugOntology& ontology, bool use_ontology = true);

std::string to_string(ad::Distance d);
ad::Distance distance_from_string(const std::string& s);  // ConfigError

std::map<std::string, std::string> to_key_values(const Hyperparams& hp);
// Keys missing from `kv` keep their defaults; unknown keys are ignored.
Hyperparams hyperparams_from_key_values(const std::map<std::string, std::string>& kv);

}  // namespace edge
