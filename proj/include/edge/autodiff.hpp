#pragma once

// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every operation of one forward pass. Values are computed
// eagerly; calling backward() on a 1x1 result walks the tape in reverse and
// accumulates gradients into the Parameter objects bound as leaves. Nodes
// that do not depend on any parameter skip gradient work entirely, so the
// same code path serves training and inference.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <functional>
#include <string>
#include <vector>

namespace edge::ad {

using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<double>;

// A named learnable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)),
        grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Constant that refers to `value` without copying; `value` must outlive the tape.
  Var reference(const Matrix& value);
  // Binds a parameter as a leaf by reference. The parameter must outlive
  // backward().
  Var parameter(Parameter& p);

  const Matrix& value(int id) const {
    const Node& n = nodes_[id];
    return n.external != nullptr ? *n.external : n.value;
  }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  // Gradient buffer of node `id`, allocated as zeros on first use.
  Matrix& grad(int id);

  // Records a new node. `inputs` decide whether the node needs a gradient.
  Var push(Matrix value, std::initializer_list<Var> inputs, Backward back);

  // Seeds d(loss)/d(loss) = 1 and propagates to every bound parameter.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    Backward back;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
};

enum class Distance { kEuclidean, kCosine };

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                   // elementwise
Var scale(Var a, double alpha);
Var affine(Var a, double alpha, double beta);  // alpha * a + beta
Var add_row(Var a, Var row);             // a + 1 * row, row is 1 x cols
Var sigmoid(Var a);
Var tanh(Var a);
Var softplus(Var a);                     // log(1 + exp(a)), stable
Var hcat(const std::vector<Var>& parts);
Var vcat(const std::vector<Var>& parts);
Var cols(Var a, Eigen::Index start, Eigen::Index count);
Var spmm(const SparseMatrix& s, Var a);  // constant sparse map applied on the left
Var sum(Var a);                          // 1 x 1
Var softmax_column(Var a);               // a is k x 1
// Row-wise distance between two matrices of equal shape; returns rows x 1.
// Euclidean uses a zero subgradient where the two rows coincide.
Var row_distance(Var a, Var b, Distance metric);

// Builds a rows x cols sparse matrix from (row, col, weight) triplets.
SparseMatrix make_sparse(Eigen::Index rows, Eigen::Index cols,
                         const std::vector<Triplet>& entries);

double stable_sigmoid(double x);
double stable_softplus(double x);

}  // namespace edge::ad
