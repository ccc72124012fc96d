#ifndef ANCHORFUSE_NUMERIC_HPP_
#define ANCHORFUSE_NUMERIC_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "anchorfuse/errors.hpp"

namespace anchorfuse {

// All numeric work happens in double precision regardless of input dtype.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Floor applied to per-feature scales so constant columns become inert
// instead of dividing by zero.
inline constexpr double kScaleFloor = 1e-8;

// Deterministic pairwise (cascade) summation. This is the documented
// summation scheme for every reduction that may later be split across row
// blocks: the tree shape depends only on element count, so block-parallel
// evaluation reproduces the sequential result bit for bit.
double pairwise_sum(const double* values, Index n);
double pairwise_sum(const Vector& values);

// Counter-based generator: splitmix64 finalizer over seed + counter.
// Identical seed yields an identical stream on every platform.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  // Uniform in [0, 1), 53-bit resolution.
  double next_double();
  // Standard normal via Box-Muller; second deviate is cached.
  double next_normal();
  // Uniform integer in [0, n), n >= 1. Rejection sampled, no modulo bias.
  std::uint64_t next_below(std::uint64_t n);

  // Fisher-Yates shuffle driven by this stream.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

// Per-feature affine standardizer fitted on a train split.
struct StandardScaler {
  Vector means;
  Vector scales;  // every entry >= kScaleFloor

  Index dim() const { return means.size(); }
};

// Column means and population standard deviations (floored at kScaleFloor).
StandardScaler fit_scaler(const Matrix& data);

// (x - mean) / scale per column. Throws DimensionError on column mismatch.
Matrix apply_scaler(const StandardScaler& scaler, const Matrix& data);

// x * scale + mean; inverse of apply_scaler up to rounding.
Matrix invert_scaler(const StandardScaler& scaler, const Matrix& data);

// Minimizes ||X W - Y||_F^2 + alpha ||W||_F^2 through the normal equations
// (X'X + alpha I) W = X'Y with an LLT factorization, falling back to a
// jittered SVD solve when the factorization fails. alpha == 0 on a singular
// system throws SingularMatrix.
Matrix ridge_solve(const Matrix& X, const Matrix& Y, double alpha);

// 1 - sum_i ||y_i - yhat_i||^2 / sum_i ||y_i - ybar||^2 with ybar the
// column-wise mean of Y_true. Zero total variance throws DegenerateVariance.
double r_squared(const Matrix& Y_true, const Matrix& Y_pred);

}  // namespace anchorfuse

#endif  // ANCHORFUSE_NUMERIC_HPP_
