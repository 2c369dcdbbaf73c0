#include <gtest/gtest.h>

#include "promptseg/autograd.hpp"
#include "test_support.hpp"

using namespace promptseg;
using namespace promptseg::testing;
using ag::Matrix;
using ag::Var;

namespace {

using Op = std::function<Var(const std::vector<Var> &)>;

/// Compares the recorded gradient of sum(W * op(inputs)) against central differences
/// for every input.
void expect_gradients(const Op &op, const std::vector<Matrix> &inputs, std::uint64_t seed,
                      double tol = 1e-6)
{
  std::mt19937_64 rng(seed);
  std::vector<Var> vars;
  for (const auto &m : inputs) {
    vars.emplace_back(m, true);
  }
  Var out = op(vars);
  const Matrix weights = random_matrix(static_cast<int>(out.rows()), static_cast<int>(out.cols()), rng);
  ag::backward(out, weights);

  for (size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Matrix &x) {
      ag::NoGradGuard guard;
      std::vector<Var> probe;
      for (size_t j = 0; j < inputs.size(); ++j) {
        probe.emplace_back(j == k ? x : inputs[j]);
      }
      return op(probe).value().cwiseProduct(weights).sum();
    };
    const Matrix numeric = numeric_gradient(f, inputs[k]);
    ASSERT_TRUE(vars[k].node()->has_grad()) << "input " << k << " received no gradient";
    EXPECT_LT(relative_error(vars[k].grad(), numeric), tol) << "input " << k;
  }
}

} // namespace

TEST(Autograd, MatmulAndTransposedMatmul)
{
  std::mt19937_64 rng(1);
  expect_gradients([](const auto &v) { return ag::matmul(v[0], v[1]); },
                   {random_matrix(3, 4, rng), random_matrix(4, 5, rng)}, 2);
  expect_gradients([](const auto &v) { return ag::matmul_nt(v[0], v[1]); },
                   {random_matrix(3, 4, rng), random_matrix(6, 4, rng)}, 3);
}

TEST(Autograd, ElementwiseOps)
{
  std::mt19937_64 rng(4);
  expect_gradients([](const auto &v) { return ag::add(v[0], v[1]); },
                   {random_matrix(3, 4, rng), random_matrix(3, 4, rng)}, 5);
  expect_gradients([](const auto &v) { return ag::add_row(v[0], v[1]); },
                   {random_matrix(3, 4, rng), random_matrix(1, 4, rng)}, 6);
  expect_gradients([](const auto &v) { return ag::scale(v[0], -2.5); },
                   {random_matrix(3, 4, rng)}, 7);
  expect_gradients([](const auto &v) { return ag::gelu(v[0]); }, {random_matrix(3, 4, rng)}, 8);
  // Keep relu inputs away from the kink.
  Matrix x = random_matrix(3, 4, rng);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x.data()[i] += x.data()[i] >= 0 ? 0.1 : -0.1;
  }
  expect_gradients([](const auto &v) { return ag::relu(v[0]); }, {x}, 9);
}

TEST(Autograd, NormalizationAndSoftmax)
{
  std::mt19937_64 rng(10);
  expect_gradients([](const auto &v) { return ag::layer_norm(v[0], v[1], v[2]); },
                   {random_matrix(4, 6, rng), random_matrix(1, 6, rng), random_matrix(1, 6, rng)},
                   11);
  expect_gradients([](const auto &v) { return ag::softmax_rows(v[0]); },
                   {random_matrix(4, 5, rng, -3, 3)}, 12);
}

TEST(Autograd, ShapeOps)
{
  std::mt19937_64 rng(13);
  expect_gradients([](const auto &v) { return ag::slice_cols(v[0], 1, 2); },
                   {random_matrix(3, 5, rng)}, 14);
  expect_gradients([](const auto &v) { return ag::slice_rows(v[0], 2, 2); },
                   {random_matrix(5, 3, rng)}, 15);
  expect_gradients([](const auto &v) { return ag::concat_cols({v[0], v[1]}); },
                   {random_matrix(3, 2, rng), random_matrix(3, 4, rng)}, 16);
  expect_gradients([](const auto &v) { return ag::concat_rows({v[0], v[1]}); },
                   {random_matrix(2, 3, rng), random_matrix(4, 3, rng)}, 17);
  expect_gradients([](const auto &v) { return ag::reshape(v[0], 2, 6); },
                   {random_matrix(3, 4, rng)}, 18);
  expect_gradients([](const auto &v) { return ag::pixel_shuffle(v[0], 2, 3, 2); },
                   {random_matrix(6, 4 * 3, rng)}, 19);
  expect_gradients([](const auto &v) { return ag::resize_bilinear(v[0], 7, 9); },
                   {random_matrix(3, 4, rng)}, 20);
}

TEST(Autograd, SharedSubgraphAccumulates)
{
  std::mt19937_64 rng(21);
  // x used twice: d/dx sum(W * (x @ x^T)) needs both paths.
  expect_gradients([](const auto &v) { return ag::matmul_nt(v[0], v[0]); },
                   {random_matrix(3, 4, rng)}, 22);
}

TEST(Autograd, MultiRootBackwardSumsContributions)
{
  std::mt19937_64 rng(23);
  const Matrix x0 = random_matrix(2, 3, rng);
  const Matrix s1 = random_matrix(2, 3, rng);
  const Matrix s2 = random_matrix(2, 3, rng);
  Var x(x0, true);
  Var a = ag::scale(x, 2.0);
  Var b = ag::scale(x, -3.0);
  ag::backward({{a, s1}, {b, s2}});
  const Matrix expected = 2.0 * s1 - 3.0 * s2;
  EXPECT_LT((x.grad() - expected).norm(), 1e-12);
}

TEST(Autograd, NoGradGuardRecordsNothing)
{
  Var x(Matrix::Ones(2, 2), true);
  {
    ag::NoGradGuard guard;
    EXPECT_FALSE(ag::grad_enabled());
    Var y = ag::scale(x, 3.0);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.node()->parents.empty());
  }
  EXPECT_TRUE(ag::grad_enabled());
  Var y = ag::scale(x, 3.0);
  EXPECT_TRUE(y.requires_grad());
}

TEST(Autograd, ConstantsReceiveNoGradient)
{
  Var c = ag::constant(Matrix::Ones(2, 2));
  Var x(Matrix::Ones(2, 2), true);
  Var y = ag::add(c, x);
  ag::backward(y, Matrix::Ones(2, 2));
  EXPECT_FALSE(c.node()->has_grad());
  EXPECT_TRUE(x.node()->has_grad());
}

TEST(Autograd, BilinearWeightsRowsSumToOne)
{
  for (auto [in, out] : {std::pair{4, 9}, std::pair{9, 4}, std::pair{5, 5}}) {
    const Matrix w = ag::bilinear_weights(in, out);
    ASSERT_EQ(w.rows(), out);
    ASSERT_EQ(w.cols(), in);
    for (int r = 0; r < out; ++r) {
      EXPECT_NEAR(w.row(r).sum(), 1.0, 1e-12);
    }
  }
  // Identity when sizes match.
  EXPECT_LT((ag::bilinear_weights(5, 5) - Matrix::Identity(5, 5)).norm(), 1e-12);
}

TEST(Autograd, MismatchedShapesThrow)
{
  Var a(Matrix::Ones(2, 3));
  Var b(Matrix::Ones(2, 3));
  EXPECT_THROW(ag::matmul(a, b), InvalidArgument);
  EXPECT_THROW(ag::add(a, Var(Matrix::Ones(3, 2))), InvalidArgument);
}
