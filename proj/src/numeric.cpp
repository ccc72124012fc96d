#include "anchorfuse/numeric.hpp"

#include <cmath>

namespace anchorfuse {

namespace {

constexpr Index kPairwiseBlock = 32;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

double pairwise_sum(const double* values, Index n) {
  if (n <= kPairwiseBlock) {
    double acc = 0.0;
    for (Index i = 0; i < n; ++i) acc += values[i];
    return acc;
  }
  Index half = n / 2;
  return pairwise_sum(values, half) + pairwise_sum(values + half, n - half);
}

double pairwise_sum(const Vector& values) {
  return pairwise_sum(values.data(), values.size());
}

std::uint64_t SeededRng::next_u64() {
  return splitmix64(seed_ + 0x9E3779B97F4A7C15ULL * ++counter_);
}

double SeededRng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::next_normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  // u1 in (0, 1] keeps the log finite.
  double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  double u2 = next_double();
  double radius = std::sqrt(-2.0 * std::log(u1));
  double angle = 2.0 * M_PI * u2;
  cached_normal_ = radius * std::sin(angle);
  has_cached_normal_ = true;
  return radius * std::cos(angle);
}

std::uint64_t SeededRng::next_below(std::uint64_t n) {
  if (n == 0) throw InvalidInput("next_below: n must be >= 1");
  std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t draw;
  do {
    draw = next_u64();
  } while (draw >= limit);
  return draw % n;
}

StandardScaler fit_scaler(const Matrix& data) {
  if (data.rows() < 1 || data.cols() < 1)
    throw InvalidInput("fit_scaler: matrix must have at least one row and column");
  if (!data.allFinite())
    throw InvalidInput("fit_scaler: input contains non-finite values");

  const Index n = data.rows();
  StandardScaler scaler;
  scaler.means.resize(data.cols());
  scaler.scales.resize(data.cols());
  Vector centered(n);
  for (Index j = 0; j < data.cols(); ++j) {
    double mean = pairwise_sum(data.col(j).data(), n) / static_cast<double>(n);
    centered = data.col(j).array() - mean;
    centered.array() *= centered.array();
    // Population variance: divide by N.
    double var = pairwise_sum(centered.data(), n) / static_cast<double>(n);
    scaler.means[j] = mean;
    scaler.scales[j] = std::max(std::sqrt(std::max(var, 0.0)), kScaleFloor);
  }
  return scaler;
}

Matrix apply_scaler(const StandardScaler& scaler, const Matrix& data) {
  if (data.cols() != scaler.dim())
    throw DimensionError("apply_scaler: data has " + std::to_string(data.cols()) +
                         " columns, scaler expects " + std::to_string(scaler.dim()));
  return (data.rowwise() - scaler.means.transpose()).array().rowwise() /
         scaler.scales.transpose().array();
}

Matrix invert_scaler(const StandardScaler& scaler, const Matrix& data) {
  if (data.cols() != scaler.dim())
    throw DimensionError("invert_scaler: data has " + std::to_string(data.cols()) +
                         " columns, scaler expects " + std::to_string(scaler.dim()));
  return (data.array().rowwise() * scaler.scales.transpose().array()).matrix().rowwise() +
         scaler.means.transpose();
}

Matrix ridge_solve(const Matrix& X, const Matrix& Y, double alpha) {
  if (X.rows() != Y.rows())
    throw DimensionError("ridge_solve: X has " + std::to_string(X.rows()) +
                         " rows, Y has " + std::to_string(Y.rows()));
  if (X.rows() < 1 || X.cols() < 1 || Y.cols() < 1)
    throw InvalidInput("ridge_solve: empty matrix");
  if (!(alpha >= 0.0))
    throw InvalidInput("ridge_solve: alpha must be non-negative");
  if (!X.allFinite() || !Y.allFinite())
    throw InvalidInput("ridge_solve: input contains non-finite values");

  const Index p = X.cols();
  Matrix gram = X.transpose() * X;
  gram.diagonal().array() += alpha;
  Matrix rhs = X.transpose() * Y;

  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() == Eigen::Success) {
    Matrix W = llt.solve(rhs);
    if (W.allFinite()) return W;
  }
  if (alpha == 0.0)
    throw SingularMatrix("ridge_solve: X'X is singular and alpha is zero");

  // Factorization failed despite alpha > 0: jittered singular-value solve.
  double jitter = 1e-12 * (gram.trace() / static_cast<double>(p) + 1.0);
  gram.diagonal().array() += jitter;
  Eigen::BDCSVD<Matrix> svd(gram, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Matrix W = svd.solve(rhs);
  if (!W.allFinite())
    throw SingularMatrix("ridge_solve: singular-value fallback failed");
  return W;
}

double r_squared(const Matrix& Y_true, const Matrix& Y_pred) {
  if (Y_true.rows() != Y_pred.rows() || Y_true.cols() != Y_pred.cols())
    throw DimensionError("r_squared: shape mismatch");
  if (Y_true.rows() < 1)
    throw InvalidInput("r_squared: empty matrix");
  if (!Y_true.allFinite() || !Y_pred.allFinite())
    throw InvalidInput("r_squared: input contains non-finite values");

  const Index n = Y_true.rows();
  Vector mean(Y_true.cols());
  for (Index j = 0; j < Y_true.cols(); ++j)
    mean[j] = pairwise_sum(Y_true.col(j).data(), n) / static_cast<double>(n);

  Vector residual_terms(n);
  Vector variance_terms(n);
  for (Index i = 0; i < n; ++i) {
    residual_terms[i] = (Y_true.row(i) - Y_pred.row(i)).squaredNorm();
    variance_terms[i] = (Y_true.row(i).transpose() - mean).squaredNorm();
  }
  double ss_res = pairwise_sum(residual_terms);
  double ss_tot = pairwise_sum(variance_terms);
  if (ss_tot <= 1e-24 * (Y_true.squaredNorm() + 1.0))
    throw DegenerateVariance("r_squared: Y_true has zero variance around its mean");
  return 1.0 - ss_res / ss_tot;
}

}  // namespace anchorfuse
