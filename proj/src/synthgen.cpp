#include "edge/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include "edge/errors.hpp"
#include "edge/random.hpp"
#include "edge/text.hpp"

namespace edge {

void GeneratorSpec::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw SpecError(what);
  };
  require(n_diseases > 0, "n_diseases must be positive");
  require(n_drugs > 0, "n_drugs must be positive");
  require(ontology_branching > 0, "ontology_branching must be positive");
  require(ontology_depth > 0, "ontology_depth must be positive");
  require(n_phenotypes > 0, "n_phenotypes must be positive");
  require(n_phenotypes <= n_diseases, "n_phenotypes exceeds n_diseases");
  require(indications_per_drug > 0, "indications_per_drug must be positive");
  require(records > 0, "records must be positive");
  require(codes_per_record.min > 0 && codes_per_record.min <= codes_per_record.max,
          "codes_per_record must be a nonempty positive range");
  require(prescriptions_per_record.min > 0 &&
              prescriptions_per_record.min <= prescriptions_per_record.max,
          "prescriptions_per_record must be a nonempty positive range");
  require(prescriptions_per_record.max <= codes_per_record.min,
          "prescriptions_per_record.max must not exceed codes_per_record.min");
  require(prescriptions_per_record.max <= n_drugs, "prescriptions_per_record.max exceeds n_drugs");
  require(codes_per_record.max <= n_diseases, "codes_per_record.max exceeds n_diseases");
  for (auto [v, name] : {std::pair{noise_rate, "noise_rate"},
                         std::pair{false_negative_rate, "false_negative_rate"},
                         std::pair{sibling_share_prob, "sibling_share_prob"},
                         std::pair{dominant_share, "dominant_share"}})
    require(v >= 0.0 && v <= 1.0, std::string(name) + " must lie in [0, 1]");
  require(embed_dim > 0, "embed_dim must be positive");
  require(embedding_noise >= 0.0, "embedding_noise must be non-negative");
  require(year_min <= year_max, "year_min must not exceed year_max");
}

namespace {

std::string padded(const std::string& prefix, int value, int width) {
  std::ostringstream os;
  os << prefix << std::setw(width) << std::setfill('0') << value;
  return os.str();
}

int digits(int n) { return static_cast<int>(std::to_string(std::max(1, n)).size()); }

int uniform_int(random::Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Eigen::VectorXd gaussian(random::Rng& rng, int dim, double sd) {
  std::normal_distribution<double> dist(0.0, sd);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = dist(rng);
  return v;
}

}  // namespace

GeneratedAssets generate_assets(const GeneratorSpec& spec) {
  spec.validate();
  random::Rng rng(random::derive_seed(spec.seed, "assets"));
  GeneratedAssets out;

  // Ontology: categories at levels 1..depth-1, drugs at level depth.
  const std::string root = "ROOT";
  std::vector<std::pair<std::string, std::string>> edges;
  std::vector<std::string> frontier{root};
  for (int level = 1; level < spec.ontology_depth; ++level) {
    std::vector<std::string> next;
    for (const auto& parent : frontier)
      for (int b = 1; b <= spec.ontology_branching; ++b) {
        const std::string id = (parent == root ? std::string("C") : parent + ".") + std::to_string(b);
        edges.emplace_back(id, parent);
        next.push_back(id);
      }
    frontier = std::move(next);
  }
  const auto& leaf_categories = frontier;
  std::map<std::string, std::string> category_of;
  const int drug_width = digits(spec.n_drugs);
  for (int d = 0; d < spec.n_drugs; ++d) {
    const std::string id = padded("M", d + 1, drug_width);
    // Round-robin keeps category sizes balanced; the shuffle below breaks the
    // link between drug number and introduction year.
    const std::string& cat = leaf_categories[static_cast<std::size_t>(d) % leaf_categories.size()];
    edges.emplace_back(id, cat);
    category_of[id] = cat;
    out.drugs.push_back(id);
  }
  out.knowledge.ontology = DrugOntology::from_edges(root, edges);

  // Phenotypes: diseases split into contiguous equal blocks.
  const int disease_width = digits(spec.n_diseases);
  std::vector<std::string> diseases;
  std::vector<std::vector<std::string>> diseases_of(spec.n_phenotypes);
  PhenotypeMap phen(spec.n_phenotypes);
  for (int i = 0; i < spec.n_diseases; ++i) {
    const std::string id = padded("X", i + 1, disease_width);
    const int l = static_cast<int>(static_cast<long long>(i) * spec.n_phenotypes / spec.n_diseases);
    phen.set(id, l, CodeKind::kDisease);
    diseases.push_back(id);
    diseases_of[l].push_back(id);
  }
  out.knowledge.phenotypes = phen;

  // Indications.
  std::map<std::string, int> phenotype_of_category;
  std::map<std::string, std::string> anchor_of;
  std::set<std::string> used;
  for (std::size_t c = 0; c < leaf_categories.size(); ++c) {
    const int l = static_cast<int>(c % static_cast<std::size_t>(spec.n_phenotypes));
    phenotype_of_category[leaf_categories[c]] = l;
    std::vector<std::string> pool;
    for (const auto& d : diseases_of[l])
      if (!used.count(d)) pool.push_back(d);
    if (pool.empty())
      for (const auto& d : diseases)
        if (!used.count(d)) pool.push_back(d);
    if (pool.empty()) throw SpecError("not enough diseases for category anchors");
    const std::string anchor = pool[random::uniform_index(rng, pool.size())];
    anchor_of[leaf_categories[c]] = anchor;
    used.insert(anchor);
  }
  const double p_anchor = std::sqrt(spec.sibling_share_prob);
  for (const auto& drug : out.drugs) {
    const std::string& cat = category_of[drug];
    std::set<std::string> ind;
    if (random::bernoulli(rng, p_anchor)) ind.insert(anchor_of[cat]);
    const int l = phenotype_of_category[cat];
    while (static_cast<int>(ind.size()) < spec.indications_per_drug) {
      std::vector<std::string> pool;
      for (const auto& d : diseases_of[l])
        if (!used.count(d)) pool.push_back(d);
      if (pool.empty())
        for (const auto& d : diseases)
          if (!used.count(d)) pool.push_back(d);
      if (pool.empty()) throw SpecError("not enough diseases for disjoint indications");
      const std::string pick = pool[random::uniform_index(rng, pool.size())];
      used.insert(pick);
      ind.insert(pick);
    }
    out.knowledge.kb.set(drug, ind);
  }

  // Base embeddings.
  const int e = spec.embed_dim;
  const double sd = 1.0 / std::sqrt(static_cast<double>(e));
  BaseEmbeddingTable table(e, random::derive_seed(spec.seed, "fallback"));
  std::vector<Eigen::VectorXd> centroid;
  for (int l = 0; l < spec.n_phenotypes; ++l) centroid.push_back(gaussian(rng, e, sd));
  for (const auto& d : diseases)
    table.set(d, centroid[phen.phenotype_of(d)] + gaussian(rng, e, spec.embedding_noise * sd));
  table.set(root, gaussian(rng, e, sd));
  for (const auto& [child, parent] : edges) {
    // Edges were emitted parents-first, so the parent vector already exists.
    if (spec.ontology_signal)
      table.set(child, table.lookup(parent) + gaussian(rng, e, spec.embedding_noise * sd));
    else
      table.set(child, gaussian(rng, e, sd));
  }
  out.knowledge.embeddings = std::move(table);
  out.knowledge.vocabulary = build_vocabulary(out.knowledge.ontology, out.knowledge.phenotypes);

  // Introduction years.
  for (const auto& drug : out.drugs) out.drug_year[drug] = uniform_int(rng, spec.year_min, spec.year_max);
  return out;
}

GeneratedCohort generate_cohort(const GeneratorSpec& spec, const GeneratedAssets& assets) {
  spec.validate();
  random::Rng rng(random::derive_seed(spec.seed, "cohort"));
  const auto& kb = assets.knowledge.kb;
  const auto& phen = assets.knowledge.phenotypes;
  const auto& drugs = assets.drugs;
  if (drugs.empty()) throw SpecError("assets contain no drugs");
  const std::vector<std::string>& diseases = phen.codes();
  std::vector<std::vector<std::string>> diseases_of(phen.count());
  for (const auto& d : diseases) diseases_of[phen.phenotype_of(d)].push_back(d);

  GeneratedCohort out;
  const int width = digits(spec.records);
  for (int i = 0; i < spec.records; ++i) {
    PatientRecord r;
    r.id = padded("R", i + 1, width);
    const int n_seeds = uniform_int(rng, spec.prescriptions_per_record.min, spec.prescriptions_per_record.max);
    const auto seeds = random::sample_without_replacement(rng, drugs, static_cast<std::size_t>(n_seeds));
    std::vector<std::string> codes;
    std::set<std::string> present;
    auto add_code = [&](const std::string& c) {
      if (present.insert(c).second) codes.push_back(c);
    };
    for (const auto& s : seeds) {
      const auto* ind = kb.indications(s);
      if (ind == nullptr || ind->empty()) continue;
      std::vector<std::string> options(ind->begin(), ind->end());
      add_code(options[random::uniform_index(rng, options.size())]);
    }
    const int target = std::max(uniform_int(rng, spec.codes_per_record.min, spec.codes_per_record.max),
                                static_cast<int>(codes.size()));
    const int dominant = codes.empty() ? static_cast<int>(random::uniform_index(rng, diseases_of.size()))
                                       : phen.phenotype_of(codes.front());
    // Bounded attempts: the dominant block may be smaller than the request.
    for (int attempts = 0; static_cast<int>(codes.size()) < target && attempts < 100 * target; ++attempts) {
      const bool from_dominant = random::bernoulli(rng, spec.dominant_share) && !diseases_of[dominant].empty();
      const auto& source = from_dominant ? diseases_of[dominant] : diseases;
      add_code(source[random::uniform_index(rng, source.size())]);
    }
    std::shuffle(codes.begin(), codes.end(), rng);
    r.codes = codes;

    std::vector<std::string> not_indicated;
    for (const auto& d : drugs) {
      const bool indicated = kb.indicated(d, r.codes);
      if (indicated) {
        const bool prescribed = random::bernoulli(rng, 1.0 - spec.false_negative_rate);
        if (prescribed) r.drugs.push_back(d);
        out.ground_truth.push_back({r.id, d, true, prescribed, true});
      } else {
        not_indicated.push_back(d);
        if (random::bernoulli(rng, spec.noise_rate)) {
          r.drugs.push_back(d);
          out.ground_truth.push_back({r.id, d, true, true, false});
        }
      }
    }
    if (r.drugs.empty()) {
      // Every record needs a prescription; a non-indicated one leaves the
      // false-negative statistics untouched.
      const auto& pool = not_indicated.empty() ? drugs : not_indicated;
      const std::string d = pool[random::uniform_index(rng, pool.size())];
      if (std::find(r.drugs.begin(), r.drugs.end(), d) == r.drugs.end()) r.drugs.push_back(d);
      bool found = false;
      for (auto& g : out.ground_truth)
        if (g.record_id == r.id && g.drug == d) {
          g.prescribed = true;
          found = true;
        }
      if (!found) out.ground_truth.push_back({r.id, d, true, true, false});
    }
    int year = spec.year_min;
    for (const auto& d : r.drugs) year = std::max(year, assets.drug_year.at(d));
    r.year = year;
    out.records.push_back(std::move(r));
  }
  return out;
}

void save_ground_truth(const std::string& path, const std::vector<GroundTruthEntry>& entries) {
  auto out = text::open_output(path);
  out << "#record_id\tdrug\teligible\tprescribed\tindicated\n";
  for (const auto& g : entries)
    out << g.record_id << '\t' << g.drug << '\t' << int(g.eligible) << '\t' << int(g.prescribed)
        << '\t' << int(g.indicated) << '\n';
  if (!out) throw IoError("failed writing " + path);
}

std::vector<GroundTruthEntry> load_ground_truth(const std::string& path) {
  auto in = text::open_input(path);
  std::vector<GroundTruthEntry> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    const auto f = text::split(line, '\t');
    if (f.size() != 5) throw ParseError(path + ":" + std::to_string(n) + ": expected 5 fields");
    auto flag = [&](const std::string& s) {
      if (s != "0" && s != "1") throw ParseError(path + ":" + std::to_string(n) + ": bad flag " + s);
      return s == "1";
    };
    out.push_back({f[0], f[1], flag(f[2]), flag(f[3]), flag(f[4])});
  }
  return out;
}

void write_generated(const std::string& dir, const GeneratedAssets& assets,
                     const GeneratedCohort& cohort) {
  std::filesystem::create_directories(dir);
  const AssetPaths paths = AssetPaths::in_directory(dir);
  save_ontology(paths.ontology, assets.knowledge.ontology);
  save_phenotype_map(paths.phenotypes, assets.knowledge.phenotypes);
  save_kb(paths.kb, assets.knowledge.kb);
  save_embeddings(paths.embeddings, assets.knowledge.embeddings);
  save_records(paths.records, cohort.records);
  save_ground_truth(paths.ground_truth, cohort.ground_truth);
}

}  // namespace edge
