#include <doctest.h>

#include <numeric>

#include "anchorfuse/numeric.hpp"
#include "support/ridge_oracle.hpp"

using namespace anchorfuse;

namespace {

Matrix random_matrix(SeededRng& rng, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = rng.next_normal();
  return m;
}

}  // namespace

TEST_CASE("pairwise_sum matches sequential accumulation") {
  SeededRng rng(7);
  for (Index n : {1, 2, 31, 32, 33, 100, 1000}) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = rng.next_normal();
    double sequential = std::accumulate(v.data(), v.data() + n, 0.0);
    CHECK(pairwise_sum(v) == doctest::Approx(sequential).epsilon(1e-12));
  }
}

TEST_CASE("SeededRng streams are reproducible and seed-dependent") {
  SeededRng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    auto x = a.next_u64();
    CHECK(x == b.next_u64());
  }
  bool differs = false;
  SeededRng a2(42);
  for (int i = 0; i < 100 && !differs; ++i) differs = a2.next_u64() != c.next_u64();
  CHECK(differs);

  SeededRng d(1);
  for (int i = 0; i < 1000; ++i) {
    double u = d.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(d.next_below(7) < 7);
  }
  CHECK_THROWS_AS(d.next_below(0), InvalidInput);
}

TEST_CASE("SeededRng normals have sane moments") {
  SeededRng rng(5);
  const int n = 20000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = rng.next_normal();
    sum += z;
    sum_sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sum_sq / n - 1.0) < 0.05);
}

TEST_CASE("fit_scaler column statistics") {
  Matrix symmetric(2, 1);
  symmetric << 1, -1;
  StandardScaler s1 = fit_scaler(symmetric);
  CHECK(s1.means[0] == 0.0);
  CHECK(s1.scales[0] == 1.0);

  Matrix constant(3, 1);
  constant << 5, 5, 5;
  StandardScaler s2 = fit_scaler(constant);
  CHECK(s2.means[0] == 5.0);
  CHECK(s2.scales[0] == kScaleFloor);

  Matrix pair(2, 1);
  pair << 0, 2;
  StandardScaler s3 = fit_scaler(pair);
  CHECK(s3.means[0] == doctest::Approx(1.0));
  CHECK(s3.scales[0] == doctest::Approx(1.0));  // population std of {0,2}

  CHECK_THROWS_AS(fit_scaler(Matrix(0, 3)), InvalidInput);
}

TEST_CASE("apply_scaler arithmetic and errors") {
  StandardScaler identity;
  identity.means = Vector::Zero(2);
  identity.scales = Vector::Ones(2);
  Matrix data(2, 2);
  data << 1, 2, 3, 4;
  CHECK(apply_scaler(identity, data) == data);

  StandardScaler scaler;
  scaler.means = Vector::Constant(1, 1.0);
  scaler.scales = Vector::Constant(1, 2.0);
  Matrix in(1, 1);
  in << 5;
  CHECK(apply_scaler(scaler, in)(0, 0) == 2.0);

  Matrix means_row(1, 2);
  means_row << 3, 7;
  StandardScaler fitted;
  fitted.means = means_row.row(0).transpose();
  fitted.scales = Vector::Constant(2, 4.0);
  CHECK(apply_scaler(fitted, means_row).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(apply_scaler(scaler, data), DimensionError);
}

TEST_CASE("scaler round trip is the identity within 1e-9") {
  SeededRng rng(11);
  Matrix data = random_matrix(rng, 40, 6);
  data.col(3) *= 100.0;
  data.col(1).array() += 5.0;
  StandardScaler scaler = fit_scaler(data);
  Matrix round_trip = invert_scaler(scaler, apply_scaler(scaler, data));
  for (Index i = 0; i < data.rows(); ++i)
    for (Index j = 0; j < data.cols(); ++j)
      CHECK(round_trip(i, j) ==
            doctest::Approx(data(i, j)).epsilon(1e-9));
}

TEST_CASE("ridge_solve hand examples") {
  Matrix X(2, 1), Y(2, 1);
  X << 1, -1;
  Y << 1, -1;
  CHECK(ridge_solve(X, Y, 0.0)(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  // Scalar normal equation (2 + 10) W = 2.
  CHECK(ridge_solve(X, Y, 10.0)(0, 0) == doctest::Approx(2.0 / 12.0).epsilon(1e-12));

  Matrix zero = Matrix::Zero(2, 3);
  CHECK(ridge_solve(X, zero, 1.0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ridge_solve error paths") {
  Matrix X(2, 1), Y(3, 1);
  X << 1, -1;
  Y << 1, 2, 3;
  CHECK_THROWS_AS(ridge_solve(X, Y, 1.0), DimensionError);

  Matrix rank_deficient(3, 2);
  rank_deficient << 1, 1, 2, 2, 3, 3;
  Matrix target(3, 1);
  target << 1, 2, 3;
  CHECK_THROWS_AS(ridge_solve(rank_deficient, target, 0.0), SingularMatrix);
  CHECK_NOTHROW(ridge_solve(rank_deficient, target, 1e-6));

  Matrix bad = Matrix::Ones(2, 1);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  Matrix ok = Matrix::Ones(2, 1);
  CHECK_THROWS_AS(ridge_solve(bad, ok, 1.0), InvalidInput);
  CHECK_THROWS_AS(ridge_solve(ok, ok, -1.0), InvalidInput);
}

TEST_CASE("ridge_solve norm shrinks as alpha grows") {
  SeededRng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix X = random_matrix(rng, 12, 4);
    Matrix Y = random_matrix(rng, 12, 2);
    double previous = ridge_solve(X, Y, 0.01).norm();
    for (double alpha : {0.1, 1.0, 10.0, 100.0}) {
      double current = ridge_solve(X, Y, alpha).norm();
      CHECK(current <= previous + 1e-12);
      previous = current;
    }
  }
}

TEST_CASE("ridge_solve agrees with the gradient-descent oracle") {
  SeededRng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix X = random_matrix(rng, 5, 3);
    Matrix Y = random_matrix(rng, 5, 2);
    for (double alpha : {0.0, 0.5, 10.0}) {
      Matrix closed_form = ridge_solve(X, Y, alpha);
      Matrix descent = testing::ridge_gradient_descent(X, Y, alpha);
      CHECK((closed_form - descent).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("r_squared definition cases") {
  Matrix y(2, 1);
  y << 0, 2;
  Matrix mean_pred(2, 1);
  mean_pred << 1, 1;
  CHECK(r_squared(y, y) == 1.0);
  CHECK(r_squared(y, mean_pred) == doctest::Approx(0.0));

  SeededRng rng(9);
  Matrix truth = random_matrix(rng, 30, 4);
  Matrix pred = random_matrix(rng, 30, 4);
  CHECK(r_squared(truth, pred) <= 1.0);
  CHECK(r_squared(truth, truth) == 1.0);

  Matrix constant = Matrix::Constant(5, 2, 3.0);
  CHECK_THROWS_AS(r_squared(constant, constant), DegenerateVariance);
  CHECK_THROWS_AS(r_squared(truth, random_matrix(rng, 30, 3)), DimensionError);
}
