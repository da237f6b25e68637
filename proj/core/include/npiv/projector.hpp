#pragma once

#include <Eigen/Core>

namespace npiv {

// Least squares projection onto the column space of a basis matrix B.
// P = B (B'B)^+ B' is never materialized; applications go through the cached
// eigendecomposition of B'B, with eigenvalues below rel_tol * max truncated
// (pseudo-inverse), so duplicated or near-collinear columns are harmless.
class Projector {
 public:
  explicit Projector(Eigen::MatrixXd B, double rel_tol = 1e-10);

  // P v (or P applied to each column)
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;
  Eigen::MatrixXd apply(const Eigen::MatrixXd& m) const;

  // (B'B)^+ B' v: regression coefficients of v on B
  Eigen::VectorXd coeffs(const Eigen::VectorXd& v) const;

  int n() const { return static_cast<int>(B_.rows()); }
  int k() const { return static_cast<int>(B_.cols()); }
  int rank() const { return rank_; }
  const Eigen::MatrixXd& basis() const { return B_; }

 private:
  Eigen::MatrixXd B_;
  Eigen::MatrixXd evecs_;
  Eigen::VectorXd inv_evals_;
  int rank_ = 0;
};

// (A)^+ b via eigendecomposition of the symmetric psd matrix A with relative
// truncation, shared by the closed-form sieve solves.
Eigen::VectorXd psd_pinv_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                               double rel_tol = 1e-10);
Eigen::MatrixXd psd_pinv(const Eigen::MatrixXd& a, double rel_tol = 1e-10);

}  // namespace npiv
