#include "edge/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "edge/errors.hpp"
#include "edge/text.hpp"

namespace edge {

namespace {

std::string bool_text(bool b) { return b ? "true" : "false"; }

std::string range_text(const IntRange& r) {
  return std::to_string(r.min) + "," + std::to_string(r.max);
}

}  // namespace

RunConfig::RunConfig() {
  const Hyperparams hp;
  const TrainConfig tc;
  const GeneratorSpec gs;
  const EvalOptions eo;
  values_ = {
      {"seed", "0"},
      {"out", ""},
      {"workers", "1"},
      {"assets.dir", ""},
      {"assets.ontology", ""},
      {"assets.phenotypes", ""},
      {"assets.kb", ""},
      {"assets.embeddings", ""},
      {"assets.records", ""},
      {"assets.fallback_seed", "0"},
      {"split.train_until", "2014"},
      {"split.valid_until", "2016"},
      {"model.embed_dim", std::to_string(hp.embed_dim)},
      {"model.hidden", std::to_string(hp.hidden)},
      {"model.phenotype_dim", std::to_string(hp.phenotype_dim)},
      {"model.phenotypes", std::to_string(hp.phenotypes)},
      {"model.attention_hidden", std::to_string(hp.attention_hidden)},
      {"model.distance", to_string(hp.distance)},
      {"model.max_ancestors", std::to_string(hp.max_ancestors)},
      {"model.prototype_rule", "substitute"},
      {"train.episodes", std::to_string(tc.episodes)},
      {"train.n_pos", std::to_string(tc.shape.n_pos)},
      {"train.n_neg_support", std::to_string(tc.shape.n_neg_support)},
      {"train.n_query_pos", std::to_string(tc.shape.n_query_pos)},
      {"train.n_query_neg", std::to_string(tc.shape.n_query_neg)},
      {"train.lr", text::format_double(tc.lr)},
      {"train.warmup_fraction", text::format_double(tc.warmup_fraction)},
      {"train.dropout", text::format_double(tc.dropout)},
      {"train.freeze_embeddings", "false"},
      {"train.validate_every", std::to_string(tc.validate_every)},
      {"train.valid_episodes", std::to_string(tc.valid_episodes)},
      {"train.valid_n_pos", std::to_string(tc.valid_n_pos)},
      {"train.valid_n_neg", std::to_string(tc.valid_n_neg)},
      {"train.patience", ""},
      {"eval.episodes", "1000"},
      {"eval.n_pos", "5"},
      {"eval.n_neg", "25"},
      {"eval.k", "100,500"},
      {"eval.encode_batch", std::to_string(eo.encode_batch)},
      {"ablation.no_ontology", "false"},
      {"ablation.single_vector", "false"},
      {"ablation.fixed_importance", "false"},
      {"ablation.uniform_negatives", "false"},
      {"generator.n_diseases", std::to_string(gs.n_diseases)},
      {"generator.n_drugs", std::to_string(gs.n_drugs)},
      {"generator.ontology_branching", std::to_string(gs.ontology_branching)},
      {"generator.ontology_depth", std::to_string(gs.ontology_depth)},
      {"generator.n_phenotypes", std::to_string(gs.n_phenotypes)},
      {"generator.indications_per_drug", std::to_string(gs.indications_per_drug)},
      {"generator.records", std::to_string(gs.records)},
      {"generator.codes_per_record", range_text(gs.codes_per_record)},
      {"generator.prescriptions_per_record", range_text(gs.prescriptions_per_record)},
      {"generator.noise_rate", text::format_double(gs.noise_rate)},
      {"generator.false_negative_rate", text::format_double(gs.false_negative_rate)},
      {"generator.sibling_share_prob", text::format_double(gs.sibling_share_prob)},
      {"generator.dominant_share", text::format_double(gs.dominant_share)},
      {"generator.embed_dim", std::to_string(gs.embed_dim)},
      {"generator.ontology_signal", bool_text(gs.ontology_signal)},
      {"generator.embedding_noise", text::format_double(gs.embedding_noise)},
      {"generator.year_min", std::to_string(gs.year_min)},
      {"generator.year_max", std::to_string(gs.year_max)},
  };
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  it->second = value;
}

void RunConfig::merge_text(const std::string& content, const std::string& source) {
  std::istringstream in(content);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(source + ":" + std::to_string(n) + ": expected key = value");
    set(std::string(text::trim(t.substr(0, eq))), std::string(text::trim(t.substr(eq + 1))));
  }
}

void RunConfig::merge_file(const std::string& path) {
  auto in = text::open_input(path);
  std::ostringstream os;
  os << in.rdbuf();
  merge_text(os.str(), path);
}

void RunConfig::merge_environment() {
  if (const char* dir = std::getenv("EDGE_ASSET_DIR"); dir != nullptr && *dir != '\0')
    set("assets.dir", dir);
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  return it->second;
}

int RunConfig::get_int(const std::string& key) const { return text::parse_number<int>(get(key), key); }

double RunConfig::get_double(const std::string& key) const {
  return text::parse_number<double>(get(key), key);
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  return text::parse_number<std::uint64_t>(get(key), key);
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (const auto& part : text::split_list(get(key), ','))
    out.push_back(text::parse_number<int>(text::trim(part), key));
  return out;
}

Hyperparams RunConfig::hyperparams() const {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : values_)
    if (k.rfind("model.", 0) == 0) kv[k.substr(6)] = v;
  kv["dropout"] = get("train.dropout");
  Hyperparams hp = hyperparams_from_key_values(kv);
  hp.validate();
  return hp;
}

Ablation RunConfig::ablation() const {
  Ablation a;
  a.no_ontology = get_bool("ablation.no_ontology");
  a.single_vector = get_bool("ablation.single_vector");
  a.fixed_importance = get_bool("ablation.fixed_importance");
  a.uniform_negatives = get_bool("ablation.uniform_negatives");
  return a;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c;
  c.episodes = get_int("train.episodes");
  c.shape.n_pos = get_int("train.n_pos");
  c.shape.n_neg_support = get_int("train.n_neg_support");
  c.shape.n_query_pos = get_int("train.n_query_pos");
  c.shape.n_query_neg = get_int("train.n_query_neg");
  c.lr = get_double("train.lr");
  c.warmup_fraction = get_double("train.warmup_fraction");
  c.dropout = get_double("train.dropout");
  c.freeze_embeddings = get_bool("train.freeze_embeddings");
  c.seed = get_u64("seed");
  c.validate_every = get_int("train.validate_every");
  c.valid_episodes = get_int("train.valid_episodes");
  c.valid_n_pos = get_int("train.valid_n_pos");
  c.valid_n_neg = get_int("train.valid_n_neg");
  if (!get("train.patience").empty()) c.patience = get_int("train.patience");
  c.ablation = ablation();
  c.workers = get_int("workers");
  c.out_dir = get("out");
  if (c.episodes < 0) throw ConfigError("train.episodes must be >= 0");
  if (c.shape.n_pos < 1 || c.shape.n_neg_support < 1)
    throw ConfigError("training supports must be positive");
  if (c.lr <= 0.0) throw ConfigError("train.lr must be positive");
  if (c.warmup_fraction < 0.0 || c.warmup_fraction > 1.0)
    throw ConfigError("train.warmup_fraction must lie in [0, 1]");
  return c;
}

EvalOptions RunConfig::eval_options() const {
  EvalOptions o;
  o.ks = get_int_list("eval.k");
  o.ablation = ablation();
  o.workers = get_int("workers");
  o.encode_batch = get_int("eval.encode_batch");
  for (int k : o.ks)
    if (k < 1) throw ConfigError("eval.k values must be positive");
  if (o.workers < 1) throw ConfigError("workers must be >= 1");
  return o;
}

int RunConfig::eval_episodes() const { return get_int("eval.episodes"); }
int RunConfig::eval_n_pos() const { return get_int("eval.n_pos"); }
int RunConfig::eval_n_neg() const { return get_int("eval.n_neg"); }

GeneratorSpec RunConfig::generator_spec() const {
  GeneratorSpec s;
  auto range = [&](const std::string& key) {
    const auto v = get_int_list(key);
    if (v.size() != 2) throw ConfigError(key + ": expected min,max");
    return IntRange{v[0], v[1]};
  };
  s.n_diseases = get_int("generator.n_diseases");
  s.n_drugs = get_int("generator.n_drugs");
  s.ontology_branching = get_int("generator.ontology_branching");
  s.ontology_depth = get_int("generator.ontology_depth");
  s.n_phenotypes = get_int("generator.n_phenotypes");
  s.indications_per_drug = get_int("generator.indications_per_drug");
  s.records = get_int("generator.records");
  s.codes_per_record = range("generator.codes_per_record");
  s.prescriptions_per_record = range("generator.prescriptions_per_record");
  s.noise_rate = get_double("generator.noise_rate");
  s.false_negative_rate = get_double("generator.false_negative_rate");
  s.sibling_share_prob = get_double("generator.sibling_share_prob");
  s.dominant_share = get_double("generator.dominant_share");
  s.embed_dim = get_int("generator.embed_dim");
  s.ontology_signal = get_bool("generator.ontology_signal");
  s.embedding_noise = get_double("generator.embedding_noise");
  s.year_min = get_int("generator.year_min");
  s.year_max = get_int("generator.year_max");
  s.seed = get_u64("seed");
  return s;
}

YearCutoffs RunConfig::cutoffs() const {
  return {get_int("split.train_until"), get_int("split.valid_until")};
}

AssetPaths RunConfig::asset_paths() const {
  AssetPaths p;
  if (!get("assets.dir").empty()) p = AssetPaths::in_directory(get("assets.dir"));
  auto override_with = [&](const std::string& key, std::string& field) {
    if (!get(key).empty()) field = get(key);
  };
  override_with("assets.ontology", p.ontology);
  override_with("assets.phenotypes", p.phenotypes);
  override_with("assets.kb", p.kb);
  override_with("assets.embeddings", p.embeddings);
  override_with("assets.records", p.records);
  for (const auto* f : {&p.ontology, &p.phenotypes, &p.kb, &p.embeddings, &p.records})
    if (f->empty()) throw ConfigError("asset paths unset: give assets.dir or EDGE_ASSET_DIR");
  return p;
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
  return os.str();
}

void RunConfig::write_snapshot(const std::string& path) const {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  auto out = text::open_output(path);
  out << serialize();
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace edge
