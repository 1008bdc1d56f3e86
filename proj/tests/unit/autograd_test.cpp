#include <gtest/gtest.h>

#include <functional>

#include "dbias/autograd.hpp"

namespace dbias {
namespace {

Matrix random_matrix(Index r, Index c, Rng& rng) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

// d sum(f(x) .* w) / dx against central differences.
void expect_op_gradient(const std::function<Var(Tape&, Var)>& f, Matrix x, double tol = 1e-7) {
  Rng rng(11);
  Parameter p{x};
  Tape probe(false);
  const Matrix out = f(probe, probe.param(p)).value();
  const Matrix w = random_matrix(out.rows(), out.cols(), rng);
  auto objective = [&](Tape& t) { return sum(mul(f(t, t.param(p)), t.constant(w))); };
  Tape tape;
  Var root = objective(tape);
  tape.backward(root);
  const Matrix g = tape.grad(p);
  for (Index i = 0; i < x.size(); ++i) {
    const double orig = p.value.data()[i];
    p.value.data()[i] = orig + 1e-6;
    Tape up(false);
    const double fu = objective(up).scalar();
    p.value.data()[i] = orig - 1e-6;
    Tape down(false);
    const double fd = objective(down).scalar();
    p.value.data()[i] = orig;
    EXPECT_NEAR(g.data()[i], (fu - fd) / 2e-6, tol) << "entry " << i;
  }
}

class OpGradients : public ::testing::Test {
 protected:
  Rng rng{5};
};

TEST_F(OpGradients, Matmul) {
  const Matrix b = random_matrix(3, 2, rng);
  expect_op_gradient([&](Tape& t, Var x) { return matmul(x, t.constant(b)); }, random_matrix(4, 3, rng));
  expect_op_gradient([&](Tape& t, Var x) { return matmul_nt(x, t.constant(b.transpose())); },
                     random_matrix(4, 3, rng));
}

TEST_F(OpGradients, Elementwise) {
  expect_op_gradient([](Tape&, Var x) { return tanh(x); }, random_matrix(3, 3, rng));
  expect_op_gradient([](Tape&, Var x) { return sigmoid(x); }, random_matrix(3, 3, rng));
  expect_op_gradient([](Tape&, Var x) { return mul(x, x); }, random_matrix(2, 3, rng));
  expect_op_gradient([](Tape&, Var x) { return scale(sub(x, tanh(x)), 0.5); }, random_matrix(2, 3, rng));
}

TEST_F(OpGradients, Normalizers) {
  expect_op_gradient([](Tape&, Var x) { return softmax_rows(x); }, random_matrix(3, 4, rng));
  expect_op_gradient([](Tape&, Var x) { return log_softmax_rows(x); }, random_matrix(3, 4, rng));
  const Matrix gain = random_matrix(1, 4, rng), bias = random_matrix(1, 4, rng);
  expect_op_gradient(
      [&](Tape& t, Var x) { return layer_norm_rows(x, t.constant(gain), t.constant(bias)); },
      random_matrix(3, 4, rng), 1e-6);
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask(2, 3);
  mask << true, false, true, false, true, true;
  expect_op_gradient([&](Tape&, Var x) { return masked_softmax_rows(x, mask); }, random_matrix(2, 3, rng));
}

TEST_F(OpGradients, Structural) {
  const Matrix other = random_matrix(3, 2, rng);
  expect_op_gradient([&](Tape& t, Var x) { return concat_cols(x, t.constant(other)); }, random_matrix(3, 2, rng));
  expect_op_gradient([&](Tape& t, Var x) {
    const Var parts[] = {x, t.constant(other.transpose())};
    return concat_rows(parts);
  }, random_matrix(2, 3, rng));
  expect_op_gradient([](Tape&, Var x) { return slice_rows(x, 1, 2); }, random_matrix(4, 2, rng));
  expect_op_gradient([](Tape&, Var x) { return slice_cols(x, 1, 2); }, random_matrix(2, 4, rng));
  expect_op_gradient([](Tape&, Var x) { return transpose(x); }, random_matrix(2, 3, rng));
  const int idx[] = {2, 0, 2};
  expect_op_gradient([&](Tape&, Var x) { return gather_rows(x, idx); }, random_matrix(3, 2, rng));
  const Matrix row = random_matrix(1, 3, rng);
  expect_op_gradient([&](Tape& t, Var x) { return add_row(x, t.constant(row)); }, random_matrix(2, 3, rng));
  expect_op_gradient([&](Tape& t, Var x) { return add_row(t.constant(other.transpose()), x); },
                     random_matrix(1, 3, rng));
  expect_op_gradient([&](Tape& t, Var x) { return outer_sum_rows(x, t.constant(other)); },
                     random_matrix(2, 2, rng));
  expect_op_gradient([&](Tape& t, Var x) { return select_rows({true, false, true}, x, t.constant(other)); },
                     random_matrix(3, 2, rng));
}

TEST_F(OpGradients, Nll) {
  const int targets[] = {1, 0, 3};
  expect_op_gradient([&](Tape&, Var x) { return nll(log_softmax_rows(x), targets); }, random_matrix(3, 4, rng));
}

TEST(Tape, SharedParameterAccumulates) {
  Parameter p{Matrix::Constant(1, 1, 3.0)};
  Tape tape;
  Var a = tape.param(p);
  Var b = tape.param(p);
  EXPECT_EQ(a.id(), b.id());
  Var y = sum(mul(a, b));
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(p)(0, 0), 6.0);
}

TEST(Tape, UnusedParameterHasZeroGradient) {
  Parameter used{Matrix::Ones(1, 2)}, unused{Matrix::Ones(2, 2)};
  Tape tape;
  tape.backward(sum(tape.param(used)));
  EXPECT_TRUE(tape.grad(unused).isZero());
  EXPECT_EQ(tape.grad(unused).rows(), 2);
  EXPECT_FALSE(tape.used(unused));
}

TEST(Tape, ConstantsGetNoGradient) {
  Tape tape;
  Var c = tape.constant(Matrix::Ones(2, 2));
  EXPECT_FALSE(tape.needs_grad(c));
  EXPECT_FALSE(tape.needs_grad(tanh(c)));
}

}  // namespace
}  // namespace dbias
