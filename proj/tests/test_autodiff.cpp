#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "edge/autodiff.hpp"

namespace edge::ad {
namespace {

Matrix random_matrix(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

using Fn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Central differences on every entry of every parameter.
void check_gradients(std::vector<Parameter> params, const Fn& f, double tol = 1e-6) {
  auto eval = [&](std::vector<Parameter>& ps) {
    Tape t;
    std::vector<Var> vs;
    for (auto& p : ps) vs.push_back(t.parameter(p));
    return f(t, vs).scalar();
  };
  {
    Tape t;
    std::vector<Var> vs;
    for (auto& p : params) vs.push_back(t.parameter(p));
    t.backward(f(t, vs));
  }
  const double h = 1e-5;
  for (auto& p : params) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double keep = p.value(i);
      p.value(i) = keep + h;
      const double up = eval(params);
      p.value(i) = keep - h;
      const double down = eval(params);
      p.value(i) = keep;
      const double numeric = (up - down) / (2 * h);
      EXPECT_NEAR(p.grad(i), numeric, tol * std::max(1.0, std::abs(numeric)))
          << p.name << "[" << i << "]";
    }
  }
}

class AdGrad : public ::testing::Test {
 protected:
  std::mt19937_64 rng{123};
  Parameter P(const std::string& name, int r, int c) { return Parameter(name, random_matrix(rng, r, c)); }
};

TEST_F(AdGrad, MatmulTransposeSum) {
  check_gradients({P("a", 3, 4), P("b", 4, 2)}, [](Tape&, const std::vector<Var>& v) {
    return sum(mul(matmul(v[0], v[1]), matmul(v[0], v[1])));
  });
  check_gradients({P("a", 3, 4)}, [](Tape&, const std::vector<Var>& v) {
    return sum(matmul(transpose(v[0]), v[0]));
  });
}

TEST_F(AdGrad, ElementwiseOps) {
  check_gradients({P("a", 2, 3), P("b", 2, 3)}, [](Tape&, const std::vector<Var>& v) {
    return sum(mul(sub(add(v[0], v[1]), scale(v[1], 3.0)), affine(v[0], 0.5, 2.0)));
  });
  check_gradients({P("a", 3, 3)}, [](Tape&, const std::vector<Var>& v) {
    return sum(mul(sigmoid(v[0]), tanh(v[0])));
  });
  check_gradients({P("a", 4, 2)}, [](Tape&, const std::vector<Var>& v) {
    return sum(softplus(scale(v[0], 4.0)));
  });
}

TEST_F(AdGrad, BroadcastAndConcat) {
  check_gradients({P("a", 3, 2), P("r", 1, 2), P("b", 3, 1)}, [](Tape&, const std::vector<Var>& v) {
    const Var x = hcat({add_row(v[0], v[1]), v[2]});
    const Var y = vcat({x, hcat({cols(x, 1, 2), v[2]})});
    return sum(mul(y, y));
  });
}

TEST_F(AdGrad, SparseGatherAndSoftmax) {
  const SparseMatrix s = make_sparse(2, 4, {{0, 1, 0.5}, {0, 3, 0.5}, {1, 0, 1.0}});
  check_gradients({P("a", 4, 3)}, [&](Tape&, const std::vector<Var>& v) {
    const Var g = spmm(s, v[0]);
    return sum(mul(g, g));
  });
  Parameter w = P("w", 1, 5);
  check_gradients({P("k", 5, 1), w}, [](Tape&, const std::vector<Var>& v) {
    return sum(matmul(v[1], mul(softmax_column(v[0]), v[0])));
  });
}

TEST_F(AdGrad, RowDistances) {
  for (const Distance d : {Distance::kEuclidean, Distance::kCosine}) {
    check_gradients({P("a", 4, 3), P("b", 4, 3), P("w", 1, 4)}, [d](Tape&, const std::vector<Var>& v) {
      return sum(matmul(v[2], row_distance(v[0], v[1], d)));
    });
  }
}

TEST(AdValues, SoftmaxSumsToOneAndIsStable) {
  Tape t;
  Matrix m(3, 1);
  m << 1000.0, 1001.0, -1000.0;
  const Var s = softmax_column(t.constant(m));
  EXPECT_NEAR(s.value().sum(), 1.0, 1e-12);
  EXPECT_TRUE(s.value().allFinite());
  EXPECT_NEAR(s.value()(1) / s.value()(0), std::exp(1.0), 1e-9);
}

TEST(AdValues, StableScalarsAtExtremes) {
  EXPECT_EQ(stable_sigmoid(-800.0), 0.0);
  EXPECT_EQ(stable_sigmoid(800.0), 1.0);
  EXPECT_NEAR(stable_softplus(800.0), 800.0, 1e-12);
  EXPECT_NEAR(stable_softplus(-800.0), 0.0, 1e-300);
  EXPECT_NEAR(stable_softplus(0.0), std::log(2.0), 1e-15);
}

TEST(AdValues, EuclideanCoincidentRowsGiveZeroGradient) {
  Parameter a("a", Matrix::Ones(1, 3));
  Tape t;
  const Var x = t.parameter(a);
  const Var d = row_distance(x, t.constant(Matrix::Ones(1, 3)), Distance::kEuclidean);
  EXPECT_EQ(d.scalar(), 0.0);
  t.backward(sum(d));
  EXPECT_TRUE(a.grad.allFinite());
  EXPECT_EQ(a.grad.norm(), 0.0);
}

TEST(AdValues, ConstantsNeedNoGradient) {
  Tape t;
  const Var c = t.constant(Matrix::Ones(2, 2));
  const Var y = matmul(c, c);
  EXPECT_FALSE(t.needs_grad(y.id));
  EXPECT_EQ(y.value()(0, 0), 2.0);
}

TEST(AdValues, GradientsAccumulateAcrossUses) {
  Parameter a("a", Matrix::Constant(1, 1, 3.0));
  Tape t;
  const Var x = t.parameter(a);
  t.backward(sum(add(mul(x, x), x)));  // d/dx (x^2 + x) = 2x + 1
  EXPECT_DOUBLE_EQ(a.grad(0, 0), 7.0);
}

}  // namespace
}  // namespace edge::ad
