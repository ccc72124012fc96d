// Test-only oracle: minimizes ||X W - Y||_F^2 + alpha ||W||_F^2 by steepest
// descent with exact line search. Shares no code with ridge_solve.
#ifndef ANCHORFUSE_TESTS_RIDGE_ORACLE_HPP_
#define ANCHORFUSE_TESTS_RIDGE_ORACLE_HPP_

#include "anchorfuse/numeric.hpp"

namespace anchorfuse::testing {

inline Matrix ridge_gradient_descent(const Matrix& X, const Matrix& Y, double alpha,
                                     long max_iters = 2000000, double tol = 1e-12) {
  Matrix W = Matrix::Zero(X.cols(), Y.cols());
  const Matrix gram = X.transpose() * X;
  const Matrix target = X.transpose() * Y;
  const double scale = std::max(1.0, target.cwiseAbs().maxCoeff());
  for (long iter = 0; iter < max_iters; ++iter) {
    Matrix grad = 2.0 * (gram * W - target + alpha * W);
    double grad_norm = grad.cwiseAbs().maxCoeff();
    if (grad_norm <= tol * scale) break;
    // Exact step for the quadratic objective: t = <g,g> / <g, H g> with
    // H g = 2 (X'X g + alpha g).
    Matrix hg = 2.0 * (gram * grad + alpha * grad);
    double denom = (grad.array() * hg.array()).sum();
    if (denom <= 0.0) break;
    double step = (grad.array() * grad.array()).sum() / denom;
    W -= step * grad;
  }
  return W;
}

}  // namespace anchorfuse::testing

#endif  // ANCHORFUSE_TESTS_RIDGE_ORACLE_HPP_
