#include "edge/knowledge.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "edge/errors.hpp"
#include "edge/random.hpp"
#include "edge/text.hpp"

namespace edge {

// ---------------------------------------------------------------------------
// CodeVocabulary

void CodeVocabulary::add(Code code) {
  if (code.id.empty()) throw ParseError("empty code id");
  if (index_.count(code.id)) throw ParseError("duplicate code id '" + code.id + "'");
  index_.emplace(code.id, static_cast<int>(codes_.size()));
  codes_.push_back(std::move(code));
}

const Code& CodeVocabulary::at(const std::string& id) const { return codes_[index_of(id)]; }

int CodeVocabulary::index_of(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw UnknownCodeError("'" + id + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// DrugOntology

DrugOntology DrugOntology::from_edges(
    const std::string& root, const std::vector<std::pair<std::string, std::string>>& edges) {
  if (root.empty()) throw ParseError("ontology root id is empty");
  DrugOntology o;
  o.root_ = root;
  std::set<std::string> nodes{root};
  for (const auto& [child, parent] : edges) {
    if (child.empty() || parent.empty()) throw ParseError("empty node id in ontology edge");
    if (child == parent) throw CycleError("'" + child + "' is its own parent");
    const auto [it, inserted] = o.parent_.emplace(child, parent);
    if (!inserted) throw ParseError("node '" + child + "' has more than one parent");
    nodes.insert(child);
    nodes.insert(parent);
  }

  // Walk every node up to the root; anything that loops or stops early is bad.
  for (const auto& node : nodes) {
    std::set<std::string> seen;
    std::string at = node;
    int depth = 0;
    while (at != root) {
      if (!seen.insert(at).second) throw CycleError("cycle through '" + at + "'");
      const auto it = o.parent_.find(at);
      if (it == o.parent_.end())
        throw OrphanError("node '" + node + "' has no path to root '" + root + "'");
      at = it->second;
      ++depth;
    }
    o.level_[node] = depth;
  }
  if (o.parent_.count(root)) throw CycleError("root '" + root + "' has a parent");

  for (const auto& node : nodes) o.children_[node];
  for (const auto& [child, parent] : o.parent_) o.children_[parent].push_back(child);
  return o;
}

std::optional<std::string> DrugOntology::parent(const std::string& id) const {
  if (!contains(id)) throw UnknownDrugError("'" + id + "' is not in the ontology");
  const auto it = parent_.find(id);
  if (it == parent_.end()) return std::nullopt;
  return it->second;
}

int DrugOntology::level(const std::string& id) const {
  const auto it = level_.find(id);
  if (it == level_.end()) throw UnknownDrugError("'" + id + "' is not in the ontology");
  return it->second;
}

const std::vector<std::string>& DrugOntology::children(const std::string& id) const {
  const auto it = children_.find(id);
  if (it == children_.end()) throw UnknownDrugError("'" + id + "' is not in the ontology");
  return it->second;
}

std::vector<std::string> DrugOntology::nodes() const {
  std::vector<std::string> out;
  out.reserve(level_.size());
  for (const auto& [id, lvl] : level_) out.push_back(id);
  return out;
}

std::vector<std::string> DrugOntology::leaves() const {
  std::vector<std::string> out;
  for (const auto& [id, kids] : children_)
    if (kids.empty()) out.push_back(id);
  return out;
}

std::vector<std::pair<std::string, std::string>> DrugOntology::edges() const {
  return {parent_.begin(), parent_.end()};
}

std::vector<std::string> DrugOntology::ancestor_closure(const std::string& id,
                                                        std::size_t max_length) const {
  if (!contains(id)) throw UnknownDrugError("'" + id + "' is not in the ontology");
  std::vector<std::string> out{id};
  for (auto it = parent_.find(id); it != parent_.end(); it = parent_.find(it->second)) {
    if (max_length > 0 && out.size() >= max_length) break;
    out.push_back(it->second);
  }
  return out;
}

std::string DrugOntology::ancestor_at_level(const std::string& id, int lvl) const {
  std::string at = id;
  while (level(at) > lvl) at = parent_.at(at);
  return at;
}

std::vector<std::string> ancestor_closure(const DrugOntology& ontology, const std::string& drug) {
  return ontology.ancestor_closure(drug);
}

DrugOntology load_ontology(const std::string& path) {
  auto in = text::open_input(path);
  std::string line;
  std::optional<std::string> root;
  std::vector<std::pair<std::string, std::string>> edges;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    if (line.rfind("#root=", 0) == 0) {
      if (root) throw ParseError(where + ": second #root header");
      root = line.substr(6);
      continue;
    }
    if (line[0] == '#') continue;
    const auto fields = text::split(line, '\t');
    if (fields.size() != 2) throw ParseError(where + ": expected child<TAB>parent");
    edges.emplace_back(fields[0], fields[1]);
  }
  if (!root) throw ParseError(path + ": missing #root=<id> header");
  return DrugOntology::from_edges(*root, edges);
}

void save_ontology(const std::string& path, const DrugOntology& ontology) {
  auto out = text::open_output(path);
  out << "#root=" << ontology.root() << '\n';
  for (const auto& [child, parent] : ontology.edges()) out << child << '\t' << parent << '\n';
}

// ---------------------------------------------------------------------------
// PhenotypeMap

void PhenotypeMap::set(const std::string& code, int phenotype, CodeKind kind) {
  if (code.empty()) throw ParseError("empty code id in phenotype map");
  if (phenotype < 0 || phenotype >= count_)
    throw ParseError("phenotype index " + std::to_string(phenotype) + " of '" + code +
                     "' outside [0, " + std::to_string(count_) + ")");
  if (kind != CodeKind::kDisease && kind != CodeKind::kProcedure)
    throw ParseError("phenotype map code '" + code + "' must be a disease or procedure");
  if (!phenotype_of_.count(code)) order_.push_back(code);
  phenotype_of_[code] = phenotype;
  kind_of_[code] = kind;
}

int PhenotypeMap::phenotype_of(const std::string& code) const {
  const auto it = phenotype_of_.find(code);
  if (it == phenotype_of_.end()) throw UnknownCodeError("'" + code + "' has no phenotype");
  return it->second;
}

CodeKind PhenotypeMap::kind_of(const std::string& code) const {
  const auto it = kind_of_.find(code);
  if (it == kind_of_.end()) throw UnknownCodeError("'" + code + "' has no phenotype");
  return it->second;
}

PhenotypeMap load_phenotype_map(const std::string& path) {
  auto in = text::open_input(path);
  std::string line;
  std::optional<PhenotypeMap> map;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    if (line.rfind("#phenotypes=", 0) == 0) {
      if (map) throw ParseError(where + ": second #phenotypes header");
      const int count = text::parse_number<int>(line.substr(12), where);
      if (count <= 0) throw ParseError(where + ": phenotype count must be positive");
      map.emplace(count);
      continue;
    }
    if (line[0] == '#') continue;
    if (!map) throw ParseError(where + ": missing #phenotypes=<L> header");
    const auto fields = text::split(line, '\t');
    if (fields.size() < 2 || fields.size() > 3)
      throw ParseError(where + ": expected code<TAB>phenotype[<TAB>kind]");
    CodeKind kind = CodeKind::kDisease;
    if (fields.size() == 3) {
      if (fields[2] == "procedure") kind = CodeKind::kProcedure;
      else if (fields[2] != "disease") throw ParseError(where + ": unknown kind '" + fields[2] + "'");
    }
    if (map->contains(fields[0])) throw ParseError(where + ": duplicate code '" + fields[0] + "'");
    map->set(fields[0], text::parse_number<int>(fields[1], where), kind);
  }
  if (!map) throw ParseError(path + ": missing #phenotypes=<L> header");
  return *map;
}

void save_phenotype_map(const std::string& path, const PhenotypeMap& map) {
  auto out = text::open_output(path);
  out << "#phenotypes=" << map.count() << '\n';
  for (const auto& code : map.codes()) {
    out << code << '\t' << map.phenotype_of(code);
    if (map.kind_of(code) == CodeKind::kProcedure) out << "\tprocedure";
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// DrugDiseaseKB

void DrugDiseaseKB::set(const std::string& drug, std::set<std::string> diseases) {
  if (drug.empty()) throw ParseError("empty drug id in knowledge base");
  indications_[drug] = std::move(diseases);
}

const std::set<std::string>* DrugDiseaseKB::indications(const std::string& drug) const {
  const auto it = indications_.find(drug);
  return it == indications_.end() ? nullptr : &it->second;
}

DrugDiseaseKB load_kb(const std::string& path) {
  auto in = text::open_input(path);
  DrugDiseaseKB kb;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty() || line[0] == '#') continue;
    const std::string where = path + ":" + std::to_string(lineno);
    const auto fields = text::split(line, '\t');
    if (fields.size() != 2) throw ParseError(where + ": expected drug<TAB>d1,d2,...");
    if (kb.has(fields[0])) throw ParseError(where + ": duplicate drug '" + fields[0] + "'");
    const auto diseases = text::split_list(fields[1], ',');
    kb.set(fields[0], {diseases.begin(), diseases.end()});
  }
  return kb;
}

void save_kb(const std::string& path, const DrugDiseaseKB& kb) {
  auto out = text::open_output(path);
  for (const auto& [drug, diseases] : kb.entries()) {
    out << drug << '\t' << text::join({diseases.begin(), diseases.end()}, ',') << '\n';
  }
}

// ---------------------------------------------------------------------------
// BaseEmbeddingTable

void BaseEmbeddingTable::set(const std::string& code, Eigen::VectorXd v) {
  if (v.size() != dim_)
    throw DimensionMismatchError("embedding for '" + code + "' has length " +
                                 std::to_string(v.size()) + ", expected " + std::to_string(dim_));
  vectors_[code] = std::move(v);
}

Eigen::VectorXd BaseEmbeddingTable::lookup(const std::string& code) const {
  const auto it = vectors_.find(code);
  if (it != vectors_.end()) return it->second;
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim_));
  const std::uint64_t key = random::hash_string(code);
  Eigen::VectorXd v(dim_);
  for (int k = 0; k < dim_; ++k) {
    const double u = random::counter_uniform(seed_, key, static_cast<std::uint64_t>(k));
    v[k] = (2.0 * u - 1.0) * bound;
  }
  return v;
}

bool BaseEmbeddingTable::operator==(const BaseEmbeddingTable& o) const {
  if (dim_ != o.dim_ || seed_ != o.seed_ || vectors_.size() != o.vectors_.size()) return false;
  for (const auto& [code, v] : vectors_) {
    const auto it = o.vectors_.find(code);
    if (it == o.vectors_.end() || it->second != v) return false;
  }
  return true;
}

Eigen::VectorXd lookup_embedding(const BaseEmbeddingTable& table, const std::string& code) {
  return table.lookup(code);
}

BaseEmbeddingTable load_embeddings(const std::string& path, std::uint64_t fallback_seed) {
  auto in = text::open_input(path);
  std::optional<BaseEmbeddingTable> table;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    if (line.rfind("#dim=", 0) == 0) {
      if (table) throw ParseError(where + ": second #dim header");
      const int dim = text::parse_number<int>(line.substr(5), where);
      if (dim <= 0) throw ParseError(where + ": dimension must be positive");
      table.emplace(dim, fallback_seed);
      continue;
    }
    if (line[0] == '#') continue;
    if (!table) throw ParseError(where + ": missing #dim=<e> header");
    const auto fields = text::split(line, '\t');
    if (fields.size() != 2) throw ParseError(where + ": expected code<TAB>v1,...,ve");
    const auto parts = text::split(fields[1], ',');
    if (static_cast<int>(parts.size()) != table->dim())
      throw ParseError(where + ": expected " + std::to_string(table->dim()) + " components");
    Eigen::VectorXd v(table->dim());
    for (int k = 0; k < table->dim(); ++k) v[k] = text::parse_number<double>(parts[k], where);
    if (table->contains(fields[0])) throw ParseError(where + ": duplicate code '" + fields[0] + "'");
    table->set(fields[0], std::move(v));
  }
  if (!table) throw ParseError(path + ": missing #dim=<e> header");
  return *table;
}

void save_embeddings(const std::string& path, const BaseEmbeddingTable& table) {
  auto out = text::open_output(path);
  out << "#dim=" << table.dim() << '\n';
  for (const auto& [code, v] : table.stored()) {
    out << code << '\t';
    for (int k = 0; k < v.size(); ++k) out << (k ? "," : "") << text::format_double(v[k]);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Asset bundle

CodeVocabulary build_vocabulary(const DrugOntology& ontology, const PhenotypeMap& phenotypes) {
  CodeVocabulary vocab;
  for (const auto& code : phenotypes.codes()) vocab.add({code, phenotypes.kind_of(code), {}});
  for (const auto& node : ontology.nodes()) {
    if (vocab.contains(node))
      throw ParseError("'" + node + "' is both a drug-ontology node and a phenotype-mapped code");
    vocab.add({node, ontology.is_leaf(node) ? CodeKind::kDrug : CodeKind::kDrugCategory, {}});
  }
  return vocab;
}

AssetPaths AssetPaths::in_directory(const std::string& dir) {
  const std::filesystem::path d(dir);
  return {(d / "ontology.tsv").string(),   (d / "phenotypes.tsv").string(),
          (d / "kb.tsv").string(),         (d / "embeddings.tsv").string(),
          (d / "records.txt").string(),    (d / "ground_truth.tsv").string()};
}

KnowledgeAssets load_assets(const AssetPaths& paths, std::uint64_t fallback_seed) {
  KnowledgeAssets a;
  a.ontology = load_ontology(paths.ontology);
  a.phenotypes = load_phenotype_map(paths.phenotypes);
  a.kb = load_kb(paths.kb);
  a.embeddings = load_embeddings(paths.embeddings, fallback_seed);
  a.vocabulary = build_vocabulary(a.ontology, a.phenotypes);
  for (const auto& [drug, diseases] : a.kb.entries()) {
    if (!a.ontology.contains(drug))
      throw UnknownDrugError("knowledge base drug '" + drug + "' is not in the ontology");
    for (const auto& d : diseases)
      if (!a.phenotypes.contains(d))
        throw UnknownCodeError("knowledge base indication '" + d + "' of '" + drug +
                               "' has no phenotype");
  }
  return a;
}

}  // namespace edge
