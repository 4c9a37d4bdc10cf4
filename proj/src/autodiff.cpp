#include "edge/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace edge::ad {

const Matrix& Var::value() const { return tape->value(id); }

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::reference(const Matrix& value) {
  Node n;
  n.external = &value;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    const Matrix& v = value(id);
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Backward back) {
  Node n;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (v.tape != this) throw std::logic_error("Var from a different tape");
    n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
  }
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var loss) {
  if (loss.tape != this || value(loss.id).size() != 1)
    throw std::logic_error("backward() needs a 1x1 node of this tape");
  grad(loss.id)(0, 0) = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      n.param->grad += n.grad;
    } else if (n.back) {
      n.back(*this, id);
    }
  }
}

namespace {

void check_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: shape mismatch");
  Tape& t = *a.tape;
  const int ia = a.id, ib = b.id;
  return t.push(a.value() * b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).transpose();
    if (t.needs_grad(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Var transpose(Var a) {
  const int ia = a.id;
  return a.tape->push(a.value().transpose(), {a}, [ia](Tape& t, int self) {
    t.grad(ia) += t.grad(self).transpose();
  });
}

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    if (t.needs_grad(ia)) t.grad(ia) += t.grad(self);
    if (t.needs_grad(ib)) t.grad(ib) += t.grad(self);
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    if (t.needs_grad(ia)) t.grad(ia) += t.grad(self);
    if (t.needs_grad(ib)) t.grad(ib) -= t.grad(self);
  });
}

Var mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value().cwiseProduct(b.value()), {a, b},
                      [ia, ib](Tape& t, int self) {
                        const Matrix& g = t.grad(self);
                        if (t.needs_grad(ia)) t.grad(ia) += g.cwiseProduct(t.value(ib));
                        if (t.needs_grad(ib)) t.grad(ib) += g.cwiseProduct(t.value(ia));
                      });
}

Var scale(Var a, double alpha) { return affine(a, alpha, 0.0); }

Var affine(Var a, double alpha, double beta) {
  const int ia = a.id;
  Matrix v = (alpha * a.value()).array() + beta;
  return a.tape->push(std::move(v), {a}, [ia, alpha](Tape& t, int self) {
    t.grad(ia) += alpha * t.grad(self);
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw std::invalid_argument("add_row: shape mismatch");
  const int ia = a.id, ir = row.id;
  Matrix v = a.value();
  v.rowwise() += row.value().row(0);
  return a.tape->push(std::move(v), {a, row}, [ia, ir](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ir)) t.grad(ir) += g.colwise().sum();
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Var sigmoid(Var a) {
  const int ia = a.id;
  Matrix v = a.value().unaryExpr([](double x) { return stable_sigmoid(x); });
  return a.tape->push(std::move(v), {a}, [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.grad(ia).array() += t.grad(self).array() * y.array() * (1.0 - y.array());
  });
}

Var tanh(Var a) {
  const int ia = a.id;
  Matrix v = a.value().array().tanh().matrix();
  return a.tape->push(std::move(v), {a}, [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.grad(ia).array() += t.grad(self).array() * (1.0 - y.array().square());
  });
}

Var softplus(Var a) {
  const int ia = a.id;
  Matrix v = a.value().unaryExpr([](double x) { return stable_softplus(x); });
  return a.tape->push(std::move(v), {a}, [ia](Tape& t, int self) {
    const Matrix s = t.value(ia).unaryExpr([](double x) { return stable_sigmoid(x); });
    t.grad(ia).array() += t.grad(self).array() * s.array();
  });
}

Var hcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("hcat: no inputs");
  Tape& t = *parts.front().tape;
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("hcat: row mismatch");
    total += p.cols();
  }
  Matrix v(rows, total);
  std::vector<std::pair<int, Eigen::Index>> offsets;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    offsets.emplace_back(p.id, at);
    at += p.cols();
  }
  // push() takes an initializer_list; fold the dependency check manually.
  bool any = false;
  for (const Var& p : parts) any = any || t.needs_grad(p.id);
  Var anchor = parts.front();
  for (const Var& p : parts)
    if (t.needs_grad(p.id)) anchor = p;
  auto back = [offsets](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    for (const auto& [id, off] : offsets)
      if (t.needs_grad(id)) t.grad(id) += g.middleCols(off, t.value(id).cols());
  };
  return any ? t.push(std::move(v), {anchor}, back) : t.constant(std::move(v));
}

Var vcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("vcat: no inputs");
  Tape& t = *parts.front().tape;
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("vcat: column mismatch");
    total += p.rows();
  }
  Matrix v(total, cols);
  std::vector<std::pair<int, Eigen::Index>> offsets;
  Eigen::Index at = 0;
  bool any = false;
  Var anchor = parts.front();
  for (const Var& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    offsets.emplace_back(p.id, at);
    at += p.rows();
    if (t.needs_grad(p.id)) {
      any = true;
      anchor = p;
    }
  }
  if (!any) return t.constant(std::move(v));
  return t.push(std::move(v), {anchor}, [offsets](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    for (const auto& [id, off] : offsets)
      if (t.needs_grad(id)) t.grad(id) += g.middleRows(off, t.value(id).rows());
  });
}

Var cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a.cols()) throw std::invalid_argument("cols: out of range");
  const int ia = a.id;
  return a.tape->push(a.value().middleCols(start, count), {a},
                      [ia, start, count](Tape& t, int self) {
                        t.grad(ia).middleCols(start, count) += t.grad(self);
                      });
}

Var spmm(const SparseMatrix& s, Var a) {
  if (s.cols() != a.rows()) throw std::invalid_argument("spmm: shape mismatch");
  const int ia = a.id;
  Matrix v = s * a.value();
  if (!a.tape->needs_grad(ia)) return a.tape->constant(std::move(v));
  return a.tape->push(std::move(v), {a}, [ia, s](Tape& t, int self) {
    t.grad(ia).noalias() += s.transpose() * t.grad(self);
  });
}

Var sum(Var a) {
  const int ia = a.id;
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return a.tape->push(std::move(v), {a}, [ia](Tape& t, int self) {
    t.grad(ia).array() += t.grad(self)(0, 0);
  });
}

Var softmax_column(Var a) {
  if (a.cols() != 1) throw std::invalid_argument("softmax_column: expects k x 1");
  const int ia = a.id;
  const double shift = a.value().maxCoeff();
  Matrix e = (a.value().array() - shift).exp().matrix();
  e /= e.sum();
  return a.tape->push(std::move(e), {a}, [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    const double dot = y.cwiseProduct(g).sum();
    t.grad(ia).array() += y.array() * (g.array() - dot);
  });
}

Var row_distance(Var a, Var b, Distance metric) {
  check_same_shape(a, b, "row_distance");
  const int ia = a.id, ib = b.id;
  const Eigen::Index n = a.rows();
  Matrix v(n, 1);
  if (metric == Distance::kEuclidean) {
    for (Eigen::Index i = 0; i < n; ++i) v(i, 0) = (a.value().row(i) - b.value().row(i)).norm();
    return a.tape->push(std::move(v), {a, b}, [ia, ib](Tape& t, int self) {
      const Matrix& d = t.value(self);
      const Matrix& g = t.grad(self);
      const Matrix diff = t.value(ia) - t.value(ib);
      Matrix coef = Matrix::Zero(d.rows(), 1);
      for (Eigen::Index i = 0; i < d.rows(); ++i)
        if (d(i, 0) > 0) coef(i, 0) = g(i, 0) / d(i, 0);
      const Matrix contrib = diff.array().colwise() * coef.col(0).array();
      if (t.needs_grad(ia)) t.grad(ia) += contrib;
      if (t.needs_grad(ib)) t.grad(ib) -= contrib;
    });
  }
  constexpr double kTiny = 1e-12;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double na = std::max(a.value().row(i).norm(), kTiny);
    const double nb = std::max(b.value().row(i).norm(), kTiny);
    v(i, 0) = 1.0 - a.value().row(i).dot(b.value().row(i)) / (na * nb);
  }
  return a.tape->push(std::move(v), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& av = t.value(ia);
    const Matrix& bv = t.value(ib);
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
      const double na = av.row(i).norm(), nb = bv.row(i).norm();
      if (na < kTiny || nb < kTiny) continue;
      const double c = av.row(i).dot(bv.row(i)) / (na * nb);
      if (t.needs_grad(ia))
        t.grad(ia).row(i) -= g(i, 0) * (bv.row(i) / (na * nb) - c * av.row(i) / (na * na));
      if (t.needs_grad(ib))
        t.grad(ib).row(i) -= g(i, 0) * (av.row(i) / (na * nb) - c * bv.row(i) / (nb * nb));
    }
  });
}

SparseMatrix make_sparse(Eigen::Index rows, Eigen::Index cols,
                         const std::vector<Triplet>& entries) {
  SparseMatrix s(rows, cols);
  s.setFromTriplets(entries.begin(), entries.end());
  return s;
}

}  // namespace edge::ad
