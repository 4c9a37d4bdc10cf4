#include "edge/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "edge/errors.hpp"
#include "edge/text.hpp"

namespace edge {

using ad::Matrix;
using ad::SparseMatrix;
using ad::Triplet;
using ad::Var;

void Hyperparams::validate() const {
  auto fail = [](const std::string& what) { throw DimensionMismatchError(what); };
  if (embed_dim < 1) fail("embed_dim must be positive");
  if (hidden < 2 || hidden % 2 != 0) fail("hidden must be a positive even number");
  if (phenotype_dim < 1) fail("phenotype_dim must be positive");
  if (phenotypes < 1) fail("phenotypes must be positive");
  if (attention_hidden < 1) fail("attention_hidden must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (max_ancestors < 0) fail("max_ancestors must be >= 0");
}

namespace {

Matrix uniform_matrix(random::Rng& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  // Row-major fill so the draw order does not depend on Eigen's storage.
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

GruParams make_gru(random::Rng& rng, const std::string& prefix, int e, int h) {
  const double b = 1.0 / std::sqrt(static_cast<double>(h));
  GruParams g;
  g.w_in = {prefix + ".w_in", uniform_matrix(rng, e, 3 * h, b)};
  g.w_hidden = {prefix + ".w_hidden", uniform_matrix(rng, h, 3 * h, b)};
  g.b_in = {prefix + ".b_in", uniform_matrix(rng, 1, 3 * h, b)};
  g.b_hidden = {prefix + ".b_hidden", uniform_matrix(rng, 1, 3 * h, b)};
  return g;
}

}  // namespace

ModelParams::ModelParams(const Hyperparams& h, const CodeVocabulary& vocab,
                         const BaseEmbeddingTable& base, std::uint64_t seed)
    : hp(h) {
  hp.validate();
  if (base.dim() != hp.embed_dim)
    throw DimensionMismatchError("base embeddings have dim " + std::to_string(base.dim()) +
                                 ", model expects " + std::to_string(hp.embed_dim));
  const int e = hp.embed_dim;
  Matrix emb(static_cast<Eigen::Index>(vocab.size()), e);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    code_ids.push_back(vocab.codes()[i].id);
    emb.row(static_cast<Eigen::Index>(i)) = base.lookup(code_ids.back()).transpose();
  }
  embeddings = {"embeddings", std::move(emb)};

  random::Rng rng(random::derive_seed(seed, "model-init"));
  const int half = hp.hidden / 2;
  forward = make_gru(rng, "gru.forward", e, half);
  backward = make_gru(rng, "gru.backward", e, half);
  const double ba = 1.0 / std::sqrt(2.0 * e);
  attn_w1 = {"attention.w1", uniform_matrix(rng, 2 * e, hp.attention_hidden, ba)};
  attn_b1 = {"attention.b1", uniform_matrix(rng, 1, hp.attention_hidden, ba)};
  const double bh = 1.0 / std::sqrt(static_cast<double>(hp.attention_hidden));
  attn_w2 = {"attention.w2", uniform_matrix(rng, hp.attention_hidden, 1, bh)};
  attn_b2 = {"attention.b2", uniform_matrix(rng, 1, 1, bh)};
  const double bp = 1.0 / std::sqrt(static_cast<double>(hp.hidden));
  proj_w = {"projection.w", uniform_matrix(rng, hp.hidden, hp.phenotype_dim, bp)};
  proj_b = {"projection.b", uniform_matrix(rng, 1, hp.phenotype_dim, bp)};
  const double bi = 1.0 / std::sqrt(static_cast<double>(e));
  imp_w = {"importance.w", uniform_matrix(rng, e, hp.phenotypes, bi)};
  imp_b = {"importance.b", uniform_matrix(rng, 1, hp.phenotypes, bi)};
  rebuild_index();
}

int ModelParams::code_index(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw UnknownCodeError("code not in model vocabulary: " + id);
  return it->second;
}

void ModelParams::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < code_ids.size(); ++i) index_[code_ids[i]] = static_cast<int>(i);
}

std::vector<ad::Parameter*> ModelParams::all() {
  return {&embeddings,      &forward.w_in,  &forward.w_hidden,  &forward.b_in,
          &forward.b_hidden, &backward.w_in, &backward.w_hidden, &backward.b_in,
          &backward.b_hidden, &attn_w1,      &attn_b1,           &attn_w2,
          &attn_b2,          &proj_w,        &proj_b,            &imp_w,
          &imp_b};
}

std::vector<const ad::Parameter*> ModelParams::all() const {
  auto v = const_cast<ModelParams*>(this)->all();
  return {v.begin(), v.end()};
}

void ModelParams::zero_grad() {
  for (auto* p : all()) p->zero_grad();
}

std::vector<int> PhenotypeSet::active() const {
  std::vector<int> out;
  for (const auto& [l, v] : vectors) out.push_back(l);
  return out;
}

// ---------------------------------------------------------------------------
// Tape-level helpers.

namespace {

Matrix stack_rows(const std::vector<Eigen::VectorXd>& rows, Eigen::Index width) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), width);
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return m;
}

}  // namespace

EncodedBatch bind_values(ad::Tape& tape, const EncodedValues& values) {
  EncodedBatch b;
  b.groups = tape.reference(values.groups);
  b.pooled = tape.reference(values.pooled);
  b.sequence = tape.reference(values.sequence);
  b.layout = values.layout;
  return b;
}

EncodedBatch bind_sets(ad::Tape& tape, std::span<const PhenotypeSet> sets) {
  if (sets.empty()) throw EmptySupportError("no phenotype sets to bind");
  const Eigen::Index g = sets.front().pooled.size();
  std::vector<Eigen::VectorXd> groups, pooled;
  EncodedBatch b;
  for (const auto& s : sets) {
    if (s.pooled.size() != g) throw DimensionMismatchError("pooled vectors differ in length");
    pooled.push_back(s.pooled);
    auto& lay = b.layout.emplace_back();
    for (const auto& [l, v] : s.vectors) {
      if (v.size() != g) throw DimensionMismatchError("phenotype vector length differs from pooled");
      if (l < 0) throw DimensionMismatchError("negative phenotype index");
      lay.emplace_back(l, static_cast<int>(groups.size()));
      groups.push_back(v);
    }
  }
  b.groups = tape.constant(stack_rows(groups, g));
  b.pooled = tape.constant(stack_rows(pooled, g));
  b.sequence = b.pooled;
  return b;
}

Prototype bind_prototype(ad::Tape& tape, const PhenotypeSet& proto) {
  Prototype p;
  std::vector<Eigen::VectorXd> rows;
  for (const auto& [l, v] : proto.vectors) {
    if (v.size() != proto.pooled.size())
      throw DimensionMismatchError("prototype vector length differs from pooled");
    p.phenotypes.push_back(l);
    rows.push_back(v);
  }
  p.rows = tape.constant(stack_rows(rows, proto.pooled.size()));
  p.pooled = tape.constant(Matrix(proto.pooled.transpose()));
  return p;
}

Prototype build_prototype(const EncodedBatch& batch, std::span<const int> members,
                          PrototypeRule rule) {
  if (members.empty()) throw EmptySupportError("support set is empty");
  std::vector<int> phen;
  for (int m : members)
    for (const auto& [l, row] : batch.layout[m]) phen.push_back(l);
  std::sort(phen.begin(), phen.end());
  phen.erase(std::unique(phen.begin(), phen.end()), phen.end());

  std::vector<Triplet> from_groups, from_pooled;
  const double inv_n = 1.0 / static_cast<double>(members.size());
  if (rule == PrototypeRule::kSubstitutePooled) {
    for (std::size_t u = 0; u < phen.size(); ++u) {
      for (int m : members) {
        const auto& lay = batch.layout[m];
        auto it = std::lower_bound(lay.begin(), lay.end(), std::make_pair(phen[u], -1));
        if (it != lay.end() && it->first == phen[u])
          from_groups.emplace_back(static_cast<int>(u), it->second, inv_n);
        else
          from_pooled.emplace_back(static_cast<int>(u), m, inv_n);
      }
    }
  } else {
    std::vector<std::vector<int>> rows_of(phen.size());
    for (int m : members)
      for (const auto& [l, row] : batch.layout[m]) {
        auto u = std::lower_bound(phen.begin(), phen.end(), l) - phen.begin();
        rows_of[u].push_back(row);
      }
    for (std::size_t u = 0; u < phen.size(); ++u)
      for (int row : rows_of[u])
        from_groups.emplace_back(static_cast<int>(u), row, 1.0 / static_cast<double>(rows_of[u].size()));
  }

  const auto n_rows = static_cast<Eigen::Index>(phen.size());
  Prototype p;
  p.phenotypes = phen;
  Var rows = ad::spmm(ad::make_sparse(n_rows, batch.groups.rows(), from_groups), batch.groups);
  if (!from_pooled.empty())
    rows = ad::add(rows, ad::spmm(ad::make_sparse(n_rows, batch.pooled.rows(), from_pooled), batch.pooled));
  p.rows = rows;
  std::vector<Triplet> avg;
  for (int m : members) avg.emplace_back(0, m, inv_n);
  p.pooled = ad::spmm(ad::make_sparse(1, batch.pooled.rows(), avg), batch.pooled);
  return p;
}

PhenotypeDistances build_distances(const EncodedBatch& batch, std::span<const int> queries,
                                   const Prototype& proto, ad::Distance metric) {
  PhenotypeDistances d;
  d.n_queries = static_cast<int>(queries.size());
  std::vector<Triplet> qg, qp, pr, pp;
  int k = 0;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto& lay = batch.layout[queries[qi]];
    std::size_t a = 0, b = 0;
    while (a < lay.size() || b < proto.phenotypes.size()) {
      int l;
      const bool take_a = a < lay.size() && (b >= proto.phenotypes.size() || lay[a].first <= proto.phenotypes[b]);
      const bool take_b = b < proto.phenotypes.size() && (a >= lay.size() || proto.phenotypes[b] <= lay[a].first);
      if (take_a) {
        l = lay[a].first;
        qg.emplace_back(k, lay[a].second, 1.0);
      } else {
        l = proto.phenotypes[b];
        qp.emplace_back(k, queries[qi], 1.0);
      }
      if (take_b)
        pr.emplace_back(k, static_cast<int>(b), 1.0);
      else
        pp.emplace_back(k, 0, 1.0);
      if (take_a) ++a;
      if (take_b) ++b;
      d.row_query.push_back(static_cast<int>(qi));
      d.row_phenotype.push_back(l);
      ++k;
    }
  }
  auto gather = [k](const std::vector<Triplet>& t1, Var m1, const std::vector<Triplet>& t2, Var m2) {
    Var out = ad::spmm(ad::make_sparse(k, m1.rows(), t1), m1);
    if (!t2.empty()) out = ad::add(out, ad::spmm(ad::make_sparse(k, m2.rows(), t2), m2));
    return out;
  };
  Var lhs = gather(qg, batch.groups, qp, batch.pooled);
  Var rhs = gather(pr, proto.rows, pp, proto.pooled);
  d.z = ad::row_distance(lhs, rhs, metric);
  return d;
}

Var weighted_distance(const PhenotypeDistances& d, const Var* beta) {
  const auto n_rows = static_cast<Eigen::Index>(d.row_query.size());
  std::vector<Triplet> seg;
  for (Eigen::Index k = 0; k < n_rows; ++k) seg.emplace_back(d.row_query[k], static_cast<int>(k), 1.0);
  Var terms = d.z;
  if (beta != nullptr) {
    std::vector<Triplet> sel;
    for (Eigen::Index k = 0; k < n_rows; ++k) {
      if (d.row_phenotype[k] >= beta->cols())
        throw DimensionMismatchError("phenotype index " + std::to_string(d.row_phenotype[k]) +
                                     " outside importance vector");
      sel.emplace_back(static_cast<int>(k), d.row_phenotype[k], 1.0);
    }
    Var b = ad::spmm(ad::make_sparse(n_rows, beta->cols(), sel), ad::transpose(*beta));
    terms = ad::mul(terms, b);
  }
  return ad::spmm(ad::make_sparse(d.n_queries, n_rows, seg), terms);
}

Var single_vector_distance(const EncodedBatch& batch, std::span<const int> support,
                           std::span<const int> queries, ad::Distance metric) {
  if (support.empty()) throw EmptySupportError("support set is empty");
  const Eigen::Index n = batch.sequence.rows();
  std::vector<Triplet> avg, sel, ones;
  for (int s : support) avg.emplace_back(0, s, 1.0 / static_cast<double>(support.size()));
  for (std::size_t q = 0; q < queries.size(); ++q) {
    sel.emplace_back(static_cast<int>(q), queries[q], 1.0);
    ones.emplace_back(static_cast<int>(q), 0, 1.0);
  }
  const auto nq = static_cast<Eigen::Index>(queries.size());
  Var proto = ad::spmm(ad::make_sparse(1, n, avg), batch.sequence);
  Var q = ad::spmm(ad::make_sparse(nq, n, sel), batch.sequence);
  Var p = ad::spmm(ad::make_sparse(nq, 1, ones), proto);
  return ad::row_distance(q, p, metric);
}

// ---------------------------------------------------------------------------
// Graph.

Graph::Graph(ad::Tape& tape, const ModelParams& params) : tape_(tape), params_(params) {}

Graph::Graph(ad::Tape& tape, ModelParams& params, random::Rng* dropout_rng)
    : tape_(tape), params_(params), trainable_(true), dropout_rng_(dropout_rng) {}

Var Graph::bind(const ad::Parameter& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return it->second;
  Var v = trainable_ ? tape_.parameter(const_cast<ad::Parameter&>(p)) : tape_.reference(p.value);
  bound_.emplace(&p, v);
  return v;
}

Var Graph::drug_representation(const DrugOntology& ontology, const std::string& drug,
                               bool use_ontology, Var* attention,
                               std::vector<std::string>* ancestors) {
  if (!ontology.contains(drug)) throw UnknownDrugError("drug not in ontology: " + drug);
  Var emb = bind(params_.embeddings);
  const auto n_codes = emb.rows();
  const int self = params_.code_index(drug);
  std::vector<std::string> closure =
      use_ontology ? ontology.ancestor_closure(drug, params_.hp.max_ancestors)
                   : std::vector<std::string>{drug};
  if (ancestors != nullptr) *ancestors = closure;
  if (!use_ontology) {
    if (attention != nullptr) *attention = tape_.constant(Matrix::Ones(1, 1));
    return ad::spmm(ad::make_sparse(1, n_codes, {Triplet(0, self, 1.0)}), emb);
  }
  const auto k = static_cast<Eigen::Index>(closure.size());
  std::vector<Triplet> anc, me;
  for (Eigen::Index j = 0; j < k; ++j) {
    anc.emplace_back(static_cast<int>(j), params_.code_index(closure[j]), 1.0);
    me.emplace_back(static_cast<int>(j), self, 1.0);
  }
  Var m = ad::spmm(ad::make_sparse(k, n_codes, anc), emb);
  Var mi = ad::spmm(ad::make_sparse(k, n_codes, me), emb);
  Var hidden = ad::tanh(ad::add_row(ad::matmul(ad::hcat({mi, m}), bind(params_.attn_w1)),
                                    bind(params_.attn_b1)));
  Var logits = ad::add_row(ad::matmul(hidden, bind(params_.attn_w2)), bind(params_.attn_b2));
  Var alpha = ad::softmax_column(logits);
  if (attention != nullptr) *attention = alpha;
  return ad::matmul(ad::transpose(alpha), m);
}

Var Graph::importance(Var h) {
  return ad::sigmoid(ad::add_row(ad::matmul(h, bind(params_.imp_w)), bind(params_.imp_b)));
}

Var Graph::run_gru(const GruParams& gru, const std::vector<SparseMatrix>& steps,
                   const std::vector<Matrix>& masks, std::size_t n, std::vector<Var>& outputs) {
  const Eigen::Index h = params_.hp.hidden / 2;
  Var emb = bind(params_.embeddings);
  Var w_in = bind(gru.w_in), w_h = bind(gru.w_hidden), b_in = bind(gru.b_in),
      b_h = bind(gru.b_hidden);
  Var state = tape_.constant(Matrix::Zero(static_cast<Eigen::Index>(n), h));
  for (std::size_t t = 0; t < steps.size(); ++t) {
    Var x = ad::spmm(steps[t], emb);
    Var gi = ad::add_row(ad::matmul(x, w_in), b_in);
    Var gh = ad::add_row(ad::matmul(state, w_h), b_h);
    Var r = ad::sigmoid(ad::add(ad::cols(gi, 0, h), ad::cols(gh, 0, h)));
    Var z = ad::sigmoid(ad::add(ad::cols(gi, h, h), ad::cols(gh, h, h)));
    Var cand = ad::tanh(ad::add(ad::cols(gi, 2 * h, h), ad::mul(r, ad::cols(gh, 2 * h, h))));
    // h' = (1 - z) * cand + z * h
    Var next = ad::add(cand, ad::mul(z, ad::sub(state, cand)));
    if (masks[t].size() != 0)
      next = ad::add(state, ad::mul(tape_.constant(masks[t]), ad::sub(next, state)));
    state = next;
    outputs.push_back(state);
  }
  return state;
}

EncodedBatch Graph::encode(const PhenotypeMap& phenotypes,
                           std::span<const PatientRecord* const> records) {
  const std::size_t n = records.size();
  const int L = params_.hp.phenotypes;
  const Eigen::Index h = params_.hp.hidden / 2;
  const auto n_codes = static_cast<Eigen::Index>(params_.code_ids.size());
  std::size_t steps = 0, total = 0;
  for (const auto* r : records) {
    if (r->codes.empty()) throw EmptyRecordError("record " + r->id + " has no codes");
    steps = std::max(steps, r->codes.size());
    total += r->codes.size();
  }

  std::vector<std::vector<Triplet>> fwd(steps), bwd(steps);
  std::vector<Matrix> masks(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    bool all_active = true;
    for (const auto* r : records) all_active = all_active && t < r->codes.size();
    if (!all_active) {
      Matrix m = Matrix::Zero(static_cast<Eigen::Index>(n), h);
      for (std::size_t i = 0; i < n; ++i)
        if (t < records[i]->codes.size()) m.row(static_cast<Eigen::Index>(i)).setOnes();
      masks[t] = std::move(m);
    }
  }
  EncodedBatch batch;
  batch.layout.resize(n);
  std::vector<Triplet> gather_f, gather_b, group_mean, record_mean;
  int code_row = 0, group_row = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& codes = records[i]->codes;
    const std::size_t v = codes.size();
    std::map<int, std::vector<int>> members;
    for (std::size_t j = 0; j < v; ++j) {
      const int idx = params_.code_index(codes[j]);
      fwd[j].emplace_back(static_cast<int>(i), idx, 1.0);
      bwd[v - 1 - j].emplace_back(static_cast<int>(i), idx, 1.0);
      const int l = phenotypes.phenotype_of(codes[j]);
      if (l < 0 || l >= L)
        throw DimensionMismatchError("phenotype " + std::to_string(l) + " of code " + codes[j] +
                                     " outside [0, " + std::to_string(L) + ")");
      members[l].push_back(code_row);
      gather_f.emplace_back(code_row, static_cast<int>(j * n + i), 1.0);
      gather_b.emplace_back(code_row, static_cast<int>((v - 1 - j) * n + i), 1.0);
      record_mean.emplace_back(static_cast<int>(i), code_row, 1.0 / static_cast<double>(v));
      ++code_row;
    }
    for (const auto& [l, rows] : members) {
      for (int row : rows) group_mean.emplace_back(group_row, row, 1.0 / static_cast<double>(rows.size()));
      batch.layout[i].emplace_back(l, group_row);
      ++group_row;
    }
  }

  std::vector<SparseMatrix> fwd_sel, bwd_sel;
  for (std::size_t t = 0; t < steps; ++t) {
    fwd_sel.push_back(ad::make_sparse(static_cast<Eigen::Index>(n), n_codes, fwd[t]));
    bwd_sel.push_back(ad::make_sparse(static_cast<Eigen::Index>(n), n_codes, bwd[t]));
  }
  std::vector<Var> out_f, out_b;
  run_gru(params_.forward, fwd_sel, masks, n, out_f);
  run_gru(params_.backward, bwd_sel, masks, n, out_b);

  const auto rows = static_cast<Eigen::Index>(total);
  const auto stacked = static_cast<Eigen::Index>(steps * n);
  Var rf = ad::spmm(ad::make_sparse(rows, stacked, gather_f), ad::vcat(out_f));
  Var rb = ad::spmm(ad::make_sparse(rows, stacked, gather_b), ad::vcat(out_b));
  Var contextual = ad::hcat({rf, rb});
  const double p = params_.hp.dropout;
  if (trainable_ && dropout_rng_ != nullptr && p > 0.0) {
    Matrix keep(rows, params_.hp.hidden);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < keep.cols(); ++c)
        keep(r, c) = random::bernoulli(*dropout_rng_, 1.0 - p) ? 1.0 / (1.0 - p) : 0.0;
    contextual = ad::mul(contextual, tape_.constant(std::move(keep)));
  }
  Var proj_w = bind(params_.proj_w), proj_b = bind(params_.proj_b);
  Var projected = ad::add_row(ad::matmul(contextual, proj_w), proj_b);
  batch.groups = ad::spmm(ad::make_sparse(group_row, rows, group_mean), projected);
  batch.sequence = ad::spmm(ad::make_sparse(static_cast<Eigen::Index>(n), rows, record_mean), contextual);
  batch.pooled = ad::add_row(ad::matmul(batch.sequence, proj_w), proj_b);
  return batch;
}

Var Graph::episode_logits(const DrugOntology& ontology, const std::string& drug,
                          const EncodedBatch& batch, std::span<const int> support_pos,
                          std::span<const int> support_neg, std::span<const int> queries,
                          const Ablation& ablation) {
  const ad::Distance metric = params_.hp.distance;
  if (ablation.single_vector) {
    Var s_pos = single_vector_distance(batch, support_pos, queries, metric);
    Var s_neg = single_vector_distance(batch, support_neg, queries, metric);
    return ad::sub(s_neg, s_pos);
  }
  const PrototypeRule rule = params_.hp.prototype_rule;
  Prototype pos = build_prototype(batch, support_pos, rule);
  Prototype neg = build_prototype(batch, support_neg, rule);
  PhenotypeDistances dp = build_distances(batch, queries, pos, metric);
  PhenotypeDistances dn = build_distances(batch, queries, neg, metric);
  if (ablation.fixed_importance)
    return ad::sub(weighted_distance(dn, nullptr), weighted_distance(dp, nullptr));
  Var beta = importance(drug_representation(ontology, drug, !ablation.no_ontology));
  return ad::sub(weighted_distance(dn, &beta), weighted_distance(dp, &beta));
}

// ---------------------------------------------------------------------------
// Plain-value operations.

DrugEncoding encode_drug(const ModelParams& params, const DrugOntology& ontology,
                         const std::string& drug, bool use_ontology) {
  ad::Tape tape;
  Graph graph(tape, params);
  Var attention;
  DrugEncoding out;
  Var h = graph.drug_representation(ontology, drug, use_ontology, &attention, &out.ancestors);
  out.h = h.value().row(0).transpose();
  out.attention = attention.value().col(0);
  return out;
}

namespace {

PhenotypeSet set_from_values(const EncodedValues& v, std::size_t i) {
  PhenotypeSet s;
  for (const auto& [l, row] : v.layout[i]) s.vectors[l] = v.groups.row(row).transpose();
  s.pooled = v.pooled.row(static_cast<Eigen::Index>(i)).transpose();
  return s;
}

}  // namespace

PhenotypeSet encode_patient(const ModelParams& params, const PatientRecord& record,
                            const PhenotypeMap& phenotypes) {
  const PatientRecord* ptr = &record;
  EncodedValues v = encode_values(params, phenotypes, std::span<const PatientRecord* const>(&ptr, 1));
  return set_from_values(v, 0);
}

PhenotypeSet compute_prototypes(std::span<const PhenotypeSet> sets, PrototypeRule rule) {
  if (sets.empty()) throw EmptySupportError("support set is empty");
  ad::Tape tape;
  EncodedBatch batch = bind_sets(tape, sets);
  std::vector<int> members(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) members[i] = static_cast<int>(i);
  Prototype p = build_prototype(batch, members, rule);
  PhenotypeSet out;
  for (std::size_t u = 0; u < p.phenotypes.size(); ++u)
    out.vectors[p.phenotypes[u]] = p.rows.value().row(static_cast<Eigen::Index>(u)).transpose();
  out.pooled = p.pooled.value().row(0).transpose();
  return out;
}

Eigen::VectorXd phenotype_distances(const PhenotypeSet& query, const PhenotypeSet& proto,
                                    ad::Distance metric, int n_phenotypes) {
  if (query.pooled.size() != proto.pooled.size())
    throw DimensionMismatchError("query and prototype dims differ");
  ad::Tape tape;
  EncodedBatch batch = bind_sets(tape, std::span<const PhenotypeSet>(&query, 1));
  Prototype p = bind_prototype(tape, proto);
  const int q = 0;
  PhenotypeDistances d = build_distances(batch, std::span<const int>(&q, 1), p, metric);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(n_phenotypes);
  for (std::size_t k = 0; k < d.row_phenotype.size(); ++k) {
    const int l = d.row_phenotype[k];
    if (l >= n_phenotypes)
      throw DimensionMismatchError("phenotype " + std::to_string(l) + " outside distance vector");
    z(l) = d.z.value()(static_cast<Eigen::Index>(k), 0);
  }
  return z;
}

Eigen::VectorXd drug_importance(const ModelParams& params, const Eigen::VectorXd& h) {
  if (h.size() != params.hp.embed_dim)
    throw DimensionMismatchError("drug vector has length " + std::to_string(h.size()));
  ad::Tape tape;
  Graph graph(tape, params);
  Var beta = graph.importance(tape.constant(Matrix(h.transpose())));
  return beta.value().row(0).transpose();
}

double recommend_probability(const Eigen::VectorXd& beta, const Eigen::VectorXd& z,
                             const Eigen::VectorXd& z_neg) {
  if (beta.size() != z.size() || z.size() != z_neg.size())
    throw DimensionMismatchError("beta, z and z' must have equal length");
  if (!beta.allFinite() || !z.allFinite() || !z_neg.allFinite())
    throw NonFiniteError("non-finite input to recommend_probability");
  const double pos = beta.dot(z), neg = beta.dot(z_neg);
  // exp(-pos) / (exp(-pos) + exp(-neg)) = sigmoid(neg - pos)
  return ad::stable_sigmoid(neg - pos);
}

double score_query(const ModelParams& params, const DrugOntology& ontology,
                   const PhenotypeMap& phenotypes, const std::string& drug,
                   const std::vector<PatientRecord>& support_pos,
                   const std::vector<PatientRecord>& support_neg, const PatientRecord& query,
                   const Ablation& ablation) {
  if (support_pos.empty() || support_neg.empty()) throw EmptySupportError("support set is empty");
  std::vector<const PatientRecord*> records;
  std::vector<int> pos, neg;
  for (const auto& r : support_pos) {
    pos.push_back(static_cast<int>(records.size()));
    records.push_back(&r);
  }
  for (const auto& r : support_neg) {
    neg.push_back(static_cast<int>(records.size()));
    records.push_back(&r);
  }
  const int q = static_cast<int>(records.size());
  records.push_back(&query);
  ad::Tape tape;
  Graph graph(tape, params);
  EncodedBatch batch = graph.encode(phenotypes, records);
  Var logit = graph.episode_logits(ontology, drug, batch, pos, neg, std::span<const int>(&q, 1), ablation);
  return ad::stable_sigmoid(logit.scalar());
}

EncodedValues encode_values(const ModelParams& params, const PhenotypeMap& phenotypes,
                            std::span<const PatientRecord* const> records) {
  ad::Tape tape;
  Graph graph(tape, params);
  EncodedBatch b = graph.encode(phenotypes, records);
  return {b.groups.value(), b.pooled.value(), b.sequence.value(), std::move(b.layout)};
}

std::vector<double> score_cached(const ModelParams& params, const DrugOntology& ontology,
                                 const std::string& drug, const EncodedValues& cache,
                                 std::span<const int> support_pos,
                                 std::span<const int> support_neg, std::span<const int> queries,
                                 const Ablation& ablation) {
  ad::Tape tape;
  Graph graph(tape, params);
  EncodedBatch batch = bind_values(tape, cache);
  Var logits = graph.episode_logits(ontology, drug, batch, support_pos, support_neg, queries, ablation);
  const Matrix& v = logits.value();
  return {v.data(), v.data() + v.rows()};
}

// ---------------------------------------------------------------------------
// Persistence.

std::string to_string(ad::Distance d) {
  return d == ad::Distance::kEuclidean ? "euclidean" : "cosine";
}

ad::Distance distance_from_string(const std::string& s) {
  if (s == "euclidean") return ad::Distance::kEuclidean;
  if (s == "cosine") return ad::Distance::kCosine;
  throw ConfigError("unknown distance: " + s);
}

std::map<std::string, std::string> to_key_values(const Hyperparams& hp) {
  return {
      {"embed_dim", std::to_string(hp.embed_dim)},
      {"hidden", std::to_string(hp.hidden)},
      {"phenotype_dim", std::to_string(hp.phenotype_dim)},
      {"phenotypes", std::to_string(hp.phenotypes)},
      {"attention_hidden", std::to_string(hp.attention_hidden)},
      {"distance", to_string(hp.distance)},
      {"dropout", text::format_double(hp.dropout)},
      {"max_ancestors", std::to_string(hp.max_ancestors)},
      {"prototype_rule", hp.prototype_rule == PrototypeRule::kSubstitutePooled ? "substitute" : "skip"},
  };
}

Hyperparams hyperparams_from_key_values(const std::map<std::string, std::string>& kv) {
  Hyperparams hp;
  auto get_int = [&](const char* key, int& out) {
    if (auto it = kv.find(key); it != kv.end()) out = text::parse_number<int>(it->second, key);
  };
  get_int("embed_dim", hp.embed_dim);
  get_int("hidden", hp.hidden);
  get_int("phenotype_dim", hp.phenotype_dim);
  get_int("phenotypes", hp.phenotypes);
  get_int("attention_hidden", hp.attention_hidden);
  get_int("max_ancestors", hp.max_ancestors);
  if (auto it = kv.find("distance"); it != kv.end()) hp.distance = distance_from_string(it->second);
  if (auto it = kv.find("dropout"); it != kv.end())
    hp.dropout = text::parse_number<double>(it->second, "dropout");
  if (auto it = kv.find("prototype_rule"); it != kv.end()) {
    if (it->second == "substitute")
      hp.prototype_rule = PrototypeRule::kSubstitutePooled;
    else if (it->second == "skip")
      hp.prototype_rule = PrototypeRule::kSkipMissing;
    else
      throw ConfigError("unknown prototype_rule: " + it->second);
  }
  return hp;
}

namespace {

constexpr char kMagic[8] = {'E', 'D', 'G', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw CheckpointError("truncated checkpoint: " + path);
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_string(std::istream& in, const std::string& path) {
  const auto n = take<std::uint64_t>(in, path);
  if (n > (1ull << 32)) throw CheckpointError("corrupt string length in " + path);
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n)))
    throw CheckpointError("truncated checkpoint: " + path);
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
  const auto parent = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  std::ostringstream hp;
  for (const auto& [k, v] : to_key_values(params.hp)) hp << k << '=' << v << '\n';
  put_string(out, hp.str());
  put<std::uint64_t>(out, params.code_ids.size());
  for (const auto& id : params.code_ids) put_string(out, id);
  const auto tensors = params.all();
  put<std::uint64_t>(out, tensors.size());
  for (const auto* p : tensors) {
    put_string(out, p->name);
    put<std::int64_t>(out, p->value.rows());
    put<std::int64_t>(out, p->value.cols());
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) throw CheckpointError("failed writing checkpoint: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not a checkpoint file: " + path);
  if (const auto v = take<std::uint32_t>(in, path); v != kVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(v));

  ModelParams params;
  std::map<std::string, std::string> kv;
  std::istringstream hp(take_string(in, path));
  for (std::string line; std::getline(hp, line);) {
    auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  params.hp = hyperparams_from_key_values(kv);
  const auto n_codes = take<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < n_codes; ++i) params.code_ids.push_back(take_string(in, path));

  std::map<std::string, Matrix> stored;
  const auto n_tensors = take<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    std::string name = take_string(in, path);
    const auto rows = take<std::int64_t>(in, path);
    const auto cols = take<std::int64_t>(in, path);
    if (rows < 0 || cols < 0 || rows * cols > (1ll << 34))
      throw CheckpointError("corrupt tensor shape for " + name);
    Matrix m(rows, cols);
    if (m.size() > 0 &&
        !in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double))))
      throw CheckpointError("truncated tensor " + name);
    stored[name] = std::move(m);
  }

  // Names and expected shapes come from a freshly built parameter set.
  const int e = params.hp.embed_dim, half = params.hp.hidden / 2;
  auto expect = [&](ad::Parameter& p, const std::string& name, Eigen::Index r, Eigen::Index c) {
    auto it = stored.find(name);
    if (it == stored.end()) throw CheckpointError("checkpoint lacks tensor " + name);
    if (it->second.rows() != r || it->second.cols() != c)
      throw CheckpointError("tensor " + name + " has unexpected shape");
    p = {name, std::move(it->second)};
  };
  expect(params.embeddings, "embeddings", static_cast<Eigen::Index>(n_codes), e);
  for (auto [gru, prefix] : {std::pair{&params.forward, "gru.forward"}, std::pair{&params.backward, "gru.backward"}}) {
    const std::string pre = prefix;
    expect(gru->w_in, pre + ".w_in", e, 3 * half);
    expect(gru->w_hidden, pre + ".w_hidden", half, 3 * half);
    expect(gru->b_in, pre + ".b_in", 1, 3 * half);
    expect(gru->b_hidden, pre + ".b_hidden", 1, 3 * half);
  }
  expect(params.attn_w1, "attention.w1", 2 * e, params.hp.attention_hidden);
  expect(params.attn_b1, "attention.b1", 1, params.hp.attention_hidden);
  expect(params.attn_w2, "attention.w2", params.hp.attention_hidden, 1);
  expect(params.attn_b2, "attention.b2", 1, 1);
  expect(params.proj_w, "projection.w", params.hp.hidden, params.hp.phenotype_dim);
  expect(params.proj_b, "projection.b", 1, params.hp.phenotype_dim);
  expect(params.imp_w, "importance.w", e, params.hp.phenotypes);
  expect(params.imp_b, "importance.b", 1, params.hp.phenotypes);
  params.rebuild_index();
  return params;
}

void export_drug_embeddings(const std::string& path, const ModelParams& params,
                            const DrugOntology& ontology, bool use_ontology) {
  auto out = text::open_output(path);
  for (const auto& drug : ontology.leaves()) {
    const DrugEncoding enc = encode_drug(params, ontology, drug, use_ontology);
    out << drug << '\t';
    for (Eigen::Index i = 0; i < enc.h.size(); ++i)
      out << (i ? "," : "") << text::format_double(enc.h(i));
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace edge
