#include "doctest.h"
#include "support.hpp"

using namespace mailproto;
using namespace mailproto::ag;
using testing::fd_check;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("elementwise and linear ops match finite differences") {
  const Matrix x = random_matrix(3, 4, 1);
  const Matrix w = random_matrix(4, 2, 2);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return sum_all(matmul(v, t.constant(w))); }) < 1e-6);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return sum_all(matmul_nt(v, t.constant(w.transpose()))); }) < 1e-6);
  CHECK(fd_check(x, [](Tape&, Var v) { return sum_all(hadamard(tanh(v), gelu(v))); }) < 1e-6);
  CHECK(fd_check(x, [](Tape&, Var v) { return sum_all(leaky_relu(scale(v, 1.5), 0.1)); }) < 1e-5);
  CHECK(fd_check(x, [](Tape&, Var v) { return abs_sum(add_scalar(v, 0.05)); }) < 1e-5);
}

TEST_CASE("normalisations and reductions match finite differences") {
  const Matrix x = random_matrix(3, 5, 3);
  const Matrix r = random_matrix(3, 5, 4);
  auto weighted = [&](Tape& t, Var v) { return sum_all(hadamard(v, t.constant(r))); };
  CHECK(fd_check(x, [&](Tape& t, Var v) { return weighted(t, softmax_rows(v)); }) < 1e-6);
  Matrix mask = Matrix::Ones(3, 5);
  mask(0, 1) = mask(2, 4) = 0.0;
  CHECK(fd_check(x, [&](Tape& t, Var v) { return weighted(t, softmax_rows(v, &mask)); }) < 1e-6);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return weighted(t, row_normalize(v)); }) < 1e-6);
  CHECK(fd_check(x, [&](Tape& t, Var v) {
          Var g = t.constant(Matrix::Constant(1, 5, 1.3));
          Var b = t.constant(Matrix::Constant(1, 5, 0.2));
          return weighted(t, layer_norm_rows(v, g, b));
        }) < 1e-5);
  CHECK(fd_check(x, [](Tape&, Var v) { return sum_all(mean_rows(v)); }) < 1e-6);
  CHECK(fd_check(x, [](Tape&, Var v) { return sum_all(max_rows(v)); }) < 1e-6);
}

TEST_CASE("shape ops route gradients to the right entries") {
  const Matrix x = random_matrix(4, 3, 5);
  const std::vector<int> rows{2, 0, 2};
  CHECK(fd_check(x, [&](Tape&, Var v) { return sum_all(tanh(gather_rows(v, rows))); }) < 1e-6);
  CHECK(fd_check(x, [](Tape&, Var v) { return sum_all(tanh(slice_rows(v, 1, 2))); }) < 1e-6);
  CHECK(fd_check(x, [](Tape&, Var v) { return sum_all(tanh(slice_cols(v, 1, 2))); }) < 1e-6);
  CHECK(fd_check(x, [](Tape&, Var v) {
          std::vector<Var> parts{v, scale(v, 2.0)};
          return sum_all(tanh(concat_rows(parts)));
        }) < 1e-6);
  CHECK(fd_check(x, [](Tape&, Var v) {
          std::vector<Var> parts{v, transpose(transpose(v))};
          return sum_all(tanh(concat_cols(parts)));
        }) < 1e-6);
  CHECK(fd_check(x, [](Tape&, Var v) { return sum_all(tanh(add_row(v, slice_rows(v, 0, 1)))); }) < 1e-6);
}

TEST_CASE("prototype geometry gradients") {
  const Matrix units = random_matrix(5, 3, 6);
  const Matrix protos = random_matrix(4, 3, 7);
  CHECK(fd_check(units, [&](Tape& t, Var v) {
          return sum_all(log_similarity(pairwise_sqdist(v, t.constant(protos)), 1e-4));
        }) < 1e-5);
  CHECK(fd_check(protos, [&](Tape& t, Var p) {
          return sum_all(log_similarity(pairwise_sqdist(t.constant(units), p), 1e-4));
        }) < 1e-5);
  Matrix mask = Matrix::Ones(5, 4);
  mask.col(0).setZero();
  CHECK(fd_check(units, [&](Tape& t, Var v) { return sum_all(masked_min_rows(pairwise_sqdist(v, t.constant(protos)), mask)); }) <
        1e-5);
}

TEST_CASE("weighted cross entropy gradient") {
  const Matrix logits = random_matrix(4, 2, 8);
  const std::vector<int> labels{0, 1, 1, 0};
  const std::array<double, 2> w{0.7, 0.3};
  CHECK(fd_check(logits, [&](Tape&, Var v) { return weighted_cross_entropy(v, labels, w); }) < 1e-6);
}

TEST_CASE("parameters are shared leaves and never written by the tape") {
  Parameter p{"p", Matrix::Constant(2, 2, 1.0)};
  Tape t;
  Var a = t.parameter(p);
  Var b = t.parameter(p);
  CHECK(a.id() == b.id());
  t.backward(sum_all(hadamard(a, b)));
  CHECK(t.grad(p).isApprox(Matrix::Constant(2, 2, 2.0)));
  CHECK(p.value.isApprox(Matrix::Constant(2, 2, 1.0)));
}
