#pragma once

// Static knowledge assets: code vocabulary, drug ontology, phenotype map,
// drug-disease knowledge base and base code embeddings. Everything here is
// immutable after loading and safe to read from any number of threads.

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace edge {

enum class CodeKind { kDisease, kProcedure, kDrug, kDrugCategory };

struct Code {
  std::string id;
  CodeKind kind = CodeKind::kDisease;
  std::optional<std::string> description;

  bool operator==(const Code&) const = default;
};

// Every code known to the system, in a stable order that fixes the row of
// each code in the embedding matrix.
class CodeVocabulary {
 public:
  void add(Code code);  // throws ParseError on duplicate or empty ids
  bool contains(const std::string& id) const { return index_.count(id) > 0; }
  const Code& at(const std::string& id) const;  // UnknownCodeError
  int index_of(const std::string& id) const;    // UnknownCodeError
  const std::vector<Code>& codes() const { return codes_; }
  std::size_t size() const { return codes_.size(); }

 private:
  std::vector<Code> codes_;
  std::unordered_map<std::string, int> index_;
};

// Rooted tree of drugs and drug categories.
class DrugOntology {
 public:
  DrugOntology() = default;

  // Validates the edge list: every node must reach `root`, no cycles, at most
  // one parent per node.
  static DrugOntology from_edges(const std::string& root,
                                 const std::vector<std::pair<std::string, std::string>>& edges);

  const std::string& root() const { return root_; }
  bool contains(const std::string& id) const { return level_.count(id) > 0; }
  std::optional<std::string> parent(const std::string& id) const;
  int level(const std::string& id) const;
  const std::vector<std::string>& children(const std::string& id) const;
  bool is_leaf(const std::string& id) const { return children(id).empty(); }

  // Sorted node ids.
  std::vector<std::string> nodes() const;
  std::vector<std::string> leaves() const;
  // Edges (child, parent) sorted by child id.
  std::vector<std::pair<std::string, std::string>> edges() const;

  // [node, parent, ..., root]. A positive `max_length` truncates the list to
  // its first `max_length` entries (the node itself is always kept).
  std::vector<std::string> ancestor_closure(const std::string& id,
                                            std::size_t max_length = 0) const;
  // Ancestor at `level`, or the node itself when it sits above that level.
  std::string ancestor_at_level(const std::string& id, int level) const;

  bool operator==(const DrugOntology& o) const {
    return root_ == o.root_ && parent_ == o.parent_;
  }

 private:
  std::string root_;
  std::map<std::string, std::string> parent_;
  std::map<std::string, int> level_;
  std::map<std::string, std::vector<std::string>> children_;
};

DrugOntology load_ontology(const std::string& path);
void save_ontology(const std::string& path, const DrugOntology& ontology);

// Free-function form of DrugOntology::ancestor_closure; throws
// UnknownDrugError for ids outside the ontology.
std::vector<std::string> ancestor_closure(const DrugOntology& ontology, const std::string& drug);

// Maps each disease/procedure code to one of `count()` phenotypes.
class PhenotypeMap {
 public:
  PhenotypeMap() = default;
  explicit PhenotypeMap(int count) : count_(count) {}

  void set(const std::string& code, int phenotype, CodeKind kind = CodeKind::kDisease);
  int count() const { return count_; }
  bool contains(const std::string& code) const { return phenotype_of_.count(code) > 0; }
  int phenotype_of(const std::string& code) const;  // UnknownCodeError
  CodeKind kind_of(const std::string& code) const;
  // Codes in insertion order.
  const std::vector<std::string>& codes() const { return order_; }

  bool operator==(const PhenotypeMap& o) const {
    return count_ == o.count_ && phenotype_of_ == o.phenotype_of_ && order_ == o.order_;
  }

 private:
  int count_ = 0;
  std::unordered_map<std::string, int> phenotype_of_;
  std::unordered_map<std::string, CodeKind> kind_of_;
  std::vector<std::string> order_;
};

PhenotypeMap load_phenotype_map(const std::string& path);
void save_phenotype_map(const std::string& path, const PhenotypeMap& map);

// Drug -> diseases it treats. A drug missing from the map is different from
// a drug mapped to an empty set.
class DrugDiseaseKB {
 public:
  void set(const std::string& drug, std::set<std::string> diseases);
  bool has(const std::string& drug) const { return indications_.count(drug) > 0; }
  // nullptr when the drug is absent.
  const std::set<std::string>* indications(const std::string& drug) const;
  // True when any of `codes` is an indication of `drug`.
  template <typename Range>
  bool indicated(const std::string& drug, const Range& codes) const {
    const auto* ind = indications(drug);
    if (ind == nullptr || ind->empty()) return false;
    for (const auto& c : codes)
      if (ind->count(c)) return true;
    return false;
  }
  const std::map<std::string, std::set<std::string>>& entries() const { return indications_; }

  bool operator==(const DrugDiseaseKB&) const = default;

 private:
  std::map<std::string, std::set<std::string>> indications_;
};

DrugDiseaseKB load_kb(const std::string& path);
void save_kb(const std::string& path, const DrugDiseaseKB& kb);

// Base code embeddings. Lookup is total: codes missing from the table get a
// deterministic pseudo-random vector that depends only on (seed, code id).
class BaseEmbeddingTable {
 public:
  BaseEmbeddingTable() = default;
  BaseEmbeddingTable(int dim, std::uint64_t fallback_seed) : dim_(dim), seed_(fallback_seed) {}

  int dim() const { return dim_; }
  std::uint64_t fallback_seed() const { return seed_; }
  void set(const std::string& code, Eigen::VectorXd v);  // DimensionMismatchError
  bool contains(const std::string& code) const { return vectors_.count(code) > 0; }
  Eigen::VectorXd lookup(const std::string& code) const;
  const std::map<std::string, Eigen::VectorXd>& stored() const { return vectors_; }

  bool operator==(const BaseEmbeddingTable& o) const;

 private:
  int dim_ = 0;
  std::uint64_t seed_ = 0;
  std::map<std::string, Eigen::VectorXd> vectors_;
};

Eigen::VectorXd lookup_embedding(const BaseEmbeddingTable& table, const std::string& code);
BaseEmbeddingTable load_embeddings(const std::string& path, std::uint64_t fallback_seed);
void save_embeddings(const std::string& path, const BaseEmbeddingTable& table);

// Every asset the model needs, with the combined vocabulary
// (phenotype-mapped codes first, then ontology nodes in sorted order).
struct KnowledgeAssets {
  DrugOntology ontology;
  PhenotypeMap phenotypes;
  DrugDiseaseKB kb;
  BaseEmbeddingTable embeddings;
  CodeVocabulary vocabulary;
};

CodeVocabulary build_vocabulary(const DrugOntology& ontology, const PhenotypeMap& phenotypes);

struct AssetPaths {
  std::string ontology;
  std::string phenotypes;
  std::string kb;
  std::string embeddings;
  std::string records;
  std::string ground_truth;

  // Standard file names inside an asset directory.
  static AssetPaths in_directory(const std::string& dir);
};

// Loads and cross-validates the four knowledge files. Every KB key must be an
// ontology node and every KB indication a phenotype-mapped code.
KnowledgeAssets load_assets(const AssetPaths& paths, std::uint64_t fallback_seed);

}  // namespace edge
