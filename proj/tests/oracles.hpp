#pragma once

// Loop-based reference implementations of the scorer, written against plain
// Eigen vectors without the tape. Shared by unit and acceptance tests.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "edge/knowledge.hpp"
#include "edge/model.hpp"

namespace edge::oracle {

using Vec = Eigen::VectorXd;

inline double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec row(const ad::Parameter& p, int r) { return p.value.row(r).transpose(); }

inline Vec embedding(const ModelParams& m, const std::string& code) {
  return row(m.embeddings, m.code_index(code));
}

// One GRU direction over `xs`, returning the state after each step.
inline std::vector<Vec> gru(const GruParams& g, const std::vector<Vec>& xs) {
  const int H = static_cast<int>(g.w_hidden.value.rows());
  Vec h = Vec::Zero(H);
  std::vector<Vec> out;
  for (const Vec& x : xs) {
    Vec next(H);
    for (int k = 0; k < H; ++k) {
      double ir = g.b_in.value(0, k), iz = g.b_in.value(0, H + k), in = g.b_in.value(0, 2 * H + k);
      double hr = g.b_hidden.value(0, k), hz = g.b_hidden.value(0, H + k), hn = g.b_hidden.value(0, 2 * H + k);
      for (int j = 0; j < x.size(); ++j) {
        ir += x(j) * g.w_in.value(j, k);
        iz += x(j) * g.w_in.value(j, H + k);
        in += x(j) * g.w_in.value(j, 2 * H + k);
      }
      for (int j = 0; j < H; ++j) {
        hr += h(j) * g.w_hidden.value(j, k);
        hz += h(j) * g.w_hidden.value(j, H + k);
        hn += h(j) * g.w_hidden.value(j, 2 * H + k);
      }
      const double r = sigm(ir + hr), z = sigm(iz + hz);
      const double n = std::tanh(in + r * hn);
      next(k) = (1 - z) * n + z * h(k);
    }
    h = next;
    out.push_back(h);
  }
  return out;
}

// Contextual representation of every code: [forward state ; backward state].
inline std::vector<Vec> contextual(const ModelParams& m, const PatientRecord& r) {
  std::vector<Vec> xs, rev;
  for (const auto& c : r.codes) xs.push_back(embedding(m, c));
  rev.assign(xs.rbegin(), xs.rend());
  const auto f = gru(m.forward, xs);
  const auto b = gru(m.backward, rev);
  const std::size_t v = xs.size();
  std::vector<Vec> out;
  for (std::size_t j = 0; j < v; ++j) {
    Vec c(f[j].size() + b[v - 1 - j].size());
    c << f[j], b[v - 1 - j];
    out.push_back(c);
  }
  return out;
}

inline Vec project(const ModelParams& m, const Vec& x) {
  Vec out = m.proj_b.value.row(0).transpose();
  for (int k = 0; k < out.size(); ++k)
    for (int j = 0; j < x.size(); ++j) out(k) += x(j) * m.proj_w.value(j, k);
  return out;
}

// Projects each code, then averages within phenotypes; pooled averages all
// projected codes.
inline PhenotypeSet patient(const ModelParams& m, const PatientRecord& r, const PhenotypeMap& pm) {
  const auto ctx = contextual(m, r);
  std::map<int, std::pair<Vec, int>> acc;
  PhenotypeSet s;
  s.pooled = Vec::Zero(m.hp.phenotype_dim);
  for (std::size_t j = 0; j < ctx.size(); ++j) {
    const Vec p = project(m, ctx[j]);
    s.pooled += p / static_cast<double>(ctx.size());
    auto& [sum, n] = acc.try_emplace(pm.phenotype_of(r.codes[j]), Vec::Zero(p.size()), 0).first->second;
    sum += p;
    ++n;
  }
  for (const auto& [l, sn] : acc) s.vectors[l] = sn.first / sn.second;
  return s;
}

inline Vec sequence_mean(const ModelParams& m, const PatientRecord& r) {
  const auto ctx = contextual(m, r);
  Vec s = Vec::Zero(ctx.front().size());
  for (const auto& c : ctx) s += c;
  return s / static_cast<double>(ctx.size());
}

struct DrugOracle {
  Vec h;
  Vec attention;
};

inline DrugOracle drug(const ModelParams& m, const DrugOntology& o, const std::string& d,
                       bool use_ontology = true) {
  if (!use_ontology) return {embedding(m, d), Vec::Ones(1)};
  std::vector<std::string> anc{d};
  for (auto p = o.parent(d); p; p = o.parent(*p)) anc.push_back(*p);
  const Vec self = embedding(m, d);
  const int e = static_cast<int>(self.size()), Ha = static_cast<int>(m.attn_w1.value.cols());
  std::vector<double> score;
  for (const auto& a : anc) {
    const Vec ea = embedding(m, a);
    double s = m.attn_b2.value(0, 0);
    for (int k = 0; k < Ha; ++k) {
      double u = m.attn_b1.value(0, k);
      for (int j = 0; j < e; ++j) u += self(j) * m.attn_w1.value(j, k) + ea(j) * m.attn_w1.value(e + j, k);
      s += std::tanh(u) * m.attn_w2.value(k, 0);
    }
    score.push_back(s);
  }
  double mx = score[0];
  for (double s : score) mx = std::max(mx, s);
  double z = 0;
  for (double s : score) z += std::exp(s - mx);
  DrugOracle out{Vec::Zero(e), Vec(static_cast<int>(anc.size()))};
  for (std::size_t i = 0; i < anc.size(); ++i) {
    out.attention(i) = std::exp(score[i] - mx) / z;
    out.h += out.attention(i) * embedding(m, anc[i]);
  }
  return out;
}

inline Vec importance(const ModelParams& m, const Vec& h) {
  Vec b(m.hp.phenotypes);
  for (int l = 0; l < b.size(); ++l) {
    double u = m.imp_b.value(0, l);
    for (int j = 0; j < h.size(); ++j) u += h(j) * m.imp_w.value(j, l);
    b(l) = sigm(u);
  }
  return b;
}

// Per-phenotype means; a member lacking phenotype l contributes its pooled
// vector (substitute) or is left out (skip).
inline PhenotypeSet prototype(const std::vector<PhenotypeSet>& sets, PrototypeRule rule) {
  PhenotypeSet p;
  p.pooled = Vec::Zero(sets.front().pooled.size());
  for (const auto& s : sets) p.pooled += s.pooled / static_cast<double>(sets.size());
  std::map<int, int> have;
  for (const auto& s : sets)
    for (const auto& [l, v] : s.vectors) ++have[l];
  for (const auto& [l, n] : have) {
    Vec sum = Vec::Zero(p.pooled.size());
    for (const auto& s : sets) {
      auto it = s.vectors.find(l);
      if (it != s.vectors.end()) sum += it->second;
      else if (rule == PrototypeRule::kSubstitutePooled) sum += s.pooled;
    }
    p.vectors[l] = sum / static_cast<double>(rule == PrototypeRule::kSubstitutePooled ? sets.size() : n);
  }
  return p;
}

inline double dist(const Vec& a, const Vec& b, ad::Distance metric) {
  if (metric == ad::Distance::kEuclidean) {
    double s = 0;
    for (int i = 0; i < a.size(); ++i) s += (a(i) - b(i)) * (a(i) - b(i));
    return std::sqrt(s);
  }
  double ab = 0, aa = 0, bb = 0;
  for (int i = 0; i < a.size(); ++i) {
    ab += a(i) * b(i);
    aa += a(i) * a(i);
    bb += b(i) * b(i);
  }
  return 1.0 - ab / std::sqrt(aa * bb);
}

inline Vec distances(const PhenotypeSet& q, const PhenotypeSet& p, ad::Distance metric, int L) {
  Vec z = Vec::Zero(L);
  for (int l = 0; l < L; ++l) {
    const bool in_q = q.vectors.count(l) > 0, in_p = p.vectors.count(l) > 0;
    if (!in_q && !in_p) continue;
    z(l) = dist(in_q ? q.vectors.at(l) : q.pooled, in_p ? p.vectors.at(l) : p.pooled, metric);
  }
  return z;
}

inline double probability(const Vec& beta, const Vec& z_pos, const Vec& z_neg) {
  double a = 0, b = 0;
  for (int l = 0; l < beta.size(); ++l) {
    a += beta(l) * z_pos(l);
    b += beta(l) * z_neg(l);
  }
  return std::exp(-a) / (std::exp(-a) + std::exp(-b));
}

// Probability of recommending `d` to `query` under the full model or an ablation.
inline double score(const ModelParams& m, const KnowledgeAssets& a, const std::string& d,
                    const std::vector<PatientRecord>& pos, const std::vector<PatientRecord>& neg,
                    const PatientRecord& query, const Ablation& ab = {}) {
  const ad::Distance metric = m.hp.distance;
  if (ab.single_vector) {
    auto mean = [&](const std::vector<PatientRecord>& rs) {
      Vec s = Vec::Zero(m.hp.hidden);
      for (const auto& r : rs) s += sequence_mean(m, r) / static_cast<double>(rs.size());
      return s;
    };
    const Vec q = sequence_mean(m, query);
    return sigm(dist(q, mean(neg), metric) - dist(q, mean(pos), metric));
  }
  auto sets = [&](const std::vector<PatientRecord>& rs) {
    std::vector<PhenotypeSet> out;
    for (const auto& r : rs) out.push_back(patient(m, r, a.phenotypes));
    return out;
  };
  const PhenotypeSet q = patient(m, query, a.phenotypes);
  const PhenotypeSet pp = prototype(sets(pos), m.hp.prototype_rule);
  const PhenotypeSet pn = prototype(sets(neg), m.hp.prototype_rule);
  const int L = m.hp.phenotypes;
  const Vec beta = ab.fixed_importance ? Vec::Ones(L) : importance(m, drug(m, a.ontology, d, !ab.no_ontology).h);
  return probability(beta, distances(q, pp, metric, L), distances(q, pn, metric, L));
}

}  // namespace edge::oracle
