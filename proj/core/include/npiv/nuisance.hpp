#pragma once

#include <string>

#include <Eigen/Core>

#include "npiv/basis.hpp"
#include "npiv/projector.hpp"

namespace npiv {

// Conditional variance of the structural residual given the instrument,
// floored at 1e-6 so downstream inversions are always defined.
struct CondVarEstimate {
  Eigen::VectorXd values;
  std::string method;
  int floored = 0;  // entries raised to the floor
};

// mean of squared residuals over the k nearest rows of x (self included),
// Euclidean distance on coordinates standardized to unit sample SD
CondVarEstimate estimate_sigma_knn(const Eigen::MatrixXd& x,
                                   const Eigen::VectorXd& squared_residuals, int k);

// fitted values of the projection of squared residuals onto the instrument basis
CondVarEstimate estimate_sigma_projection(const Projector& p_basis,
                                          const Eigen::VectorXd& squared_residuals);

// identity weight: w*(y2) = nu(y2)'beta, v* = -w*/(1 + mean d1 w*)
// optimal weight: v*(y2) = nu(y2)'beta with beta = R^+ F
enum class RieszMode { IdentityWeight, OptimalWeight };

struct RieszEstimate {
  RieszMode mode = RieszMode::IdentityWeight;
  Eigen::VectorXd beta;    // w* coefficients (identity) or v* coefficients (optimal)
  Eigen::VectorXd beta_v;  // v* coefficients in both modes
  Eigen::VectorXd w_star;  // identity mode only
  Eigen::VectorXd v_star;
  double d1_mean = 0.0;    // sample mean of d1 w* (identity mode only)
  Eigen::VectorXd F;       // optimal mode only
  Eigen::MatrixXd R;       // optimal mode only
  int truncated = 0;       // eigenvalues dropped by the pseudo-inverse
};

// Projection coefficient function Gamma(x): the demeaned cross-moment
// (d1h - theta)(resid - mean resid) projected onto the instrument basis, then
// divided by Sigma(x).
struct GammaEstimate {
  Eigen::VectorXd values;
};

GammaEstimate estimate_gamma(const Projector& p_phi, const Eigen::VectorXd& grad1_h,
                             double theta_prelim, const Eigen::VectorXd& resid,
                             const CondVarEstimate& sigma);

// beta solves the sampled quadratic for the identity-weight direction:
//   beta = -(nu'P nu / n + d d')^{-1} d,  d = column means of d1(nu)
RieszEstimate riesz_identity(const DesignMatrix& nu, const Projector& p_lambda);

// sieve representer under optimal weighting:
//   F = mean[d1(nu) + Gamma nu],  R = (P nu)' diag(1/Sigma) (P nu) / n,
//   beta = R^+ F
RieszEstimate riesz_optimal(const DesignMatrix& nu, const Projector& p_lambda,
                            const GammaEstimate& gamma, const CondVarEstimate& sigma);

// variance of the orthogonalized residual eps1 = d1h - theta - Gamma*(y1-h)
struct OrthoResidualStats {
  double sigma0_sq = 0.0;
  double theta_ref = 0.0;
  bool floored = false;
};

OrthoResidualStats sigma0_sq(const Eigen::VectorXd& grad1_h, double theta,
                             const Eigen::VectorXd& gamma_vals,
                             const Eigen::VectorXd& resid);

}  // namespace npiv
