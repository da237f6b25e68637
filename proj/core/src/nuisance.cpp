#include "npiv/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Eigenvalues>

namespace npiv {

namespace {

constexpr double kSigmaFloor = 1e-6;
constexpr double kRidgeScale = 1e-10;

int apply_floor(Eigen::VectorXd& v) {
  int floored = 0;
  for (int i = 0; i < v.size(); ++i) {
    if (!(v[i] >= kSigmaFloor)) {  // catches NaN too
      v[i] = kSigmaFloor;
      ++floored;
    }
  }
  return floored;
}

void check_lengths(const char* what, long a, long b) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": length mismatch");
}

}  // namespace

CondVarEstimate estimate_sigma_knn(const Eigen::MatrixXd& x,
                                   const Eigen::VectorXd& squared_residuals, int k) {
  const int n = static_cast<int>(x.rows());
  check_lengths("sigma knn", n, squared_residuals.size());
  if (k < 1 || k > n) throw std::invalid_argument("sigma knn: k must be in [1, n]");

  // standardize columns; constant columns contribute nothing to distances
  Eigen::MatrixXd z = x;
  for (int c = 0; c < z.cols(); ++c) {
    const double mean = z.col(c).mean();
    const double sd = std::sqrt((z.col(c).array() - mean).square().sum() /
                                std::max(n - 1, 1));
    if (sd > 0) z.col(c) /= sd;
  }

  CondVarEstimate out;
  out.values.resize(n);
  out.method = "knn:" + std::to_string(k);
  std::vector<std::pair<double, int>> dist(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j)
      dist[j] = {(z.row(i) - z.row(j)).squaredNorm(), j};
    // ties broken by row index for determinism
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    double s = 0;
    for (int m = 0; m < k; ++m) s += squared_residuals[dist[m].second];
    out.values[i] = s / k;
  }
  out.floored = apply_floor(out.values);
  return out;
}

CondVarEstimate estimate_sigma_projection(const Projector& p_basis,
                                          const Eigen::VectorXd& squared_residuals) {
  check_lengths("sigma projection", p_basis.n(), squared_residuals.size());
  CondVarEstimate out;
  out.values = p_basis.apply(squared_residuals);
  out.method = "projection";
  out.floored = apply_floor(out.values);
  return out;
}

GammaEstimate estimate_gamma(const Projector& p_phi, const Eigen::VectorXd& grad1_h,
                             double theta_prelim, const Eigen::VectorXd& resid,
                             const CondVarEstimate& sigma) {
  const long n = grad1_h.size();
  check_lengths("gamma", n, resid.size());
  check_lengths("gamma", n, sigma.values.size());
  check_lengths("gamma", n, p_phi.n());
  Eigen::VectorXd u =
      (grad1_h.array() - theta_prelim) * (resid.array() - resid.mean());
  // project, scale by the inverse variance, then project again to smooth the ratio
  const Eigen::VectorXd ratio = p_phi.apply(u).array() / sigma.values.array();
  GammaEstimate out;
  out.values = p_phi.apply(ratio);
  return out;
}

RieszEstimate riesz_identity(const DesignMatrix& nu, const Projector& p_lambda) {
  if (!nu.has_d1()) throw std::invalid_argument("riesz identity: nu lacks derivatives");
  const int n = static_cast<int>(nu.values.rows());
  const int K = static_cast<int>(nu.values.cols());
  check_lengths("riesz identity", n, p_lambda.n());

  const Eigen::MatrixXd pnu = p_lambda.apply(nu.values);
  Eigen::MatrixXd a = pnu.transpose() * pnu / n;
  const Eigen::VectorXd d = nu.d1.colwise().mean();
  a += d * d.transpose();
  a.diagonal().array() += kRidgeScale * a.trace() / K;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const double min_eval = es.eigenvalues().minCoeff();
  if (min_eval <= 0)
    throw std::runtime_error("riesz identity: singular system after ridge, smallest eigenvalue " +
                             std::to_string(min_eval));

  RieszEstimate out;
  out.mode = RieszMode::IdentityWeight;
  out.beta = -(es.eigenvectors() *
               (es.eigenvectors().transpose() * d).cwiseQuotient(es.eigenvalues()));
  out.w_star = nu.values * out.beta;
  out.d1_mean = d.dot(out.beta);
  const double denom = 1.0 + out.d1_mean;
  if (std::abs(denom) < 1e-12)
    throw std::runtime_error("riesz identity: degenerate normalization 1 + mean d1 w*");
  out.beta_v = -out.beta / denom;
  out.v_star = nu.values * out.beta_v;
  return out;
}

RieszEstimate riesz_optimal(const DesignMatrix& nu, const Projector& p_lambda,
                            const GammaEstimate& gamma, const CondVarEstimate& sigma) {
  if (!nu.has_d1()) throw std::invalid_argument("riesz optimal: nu lacks derivatives");
  const int n = static_cast<int>(nu.values.rows());
  const int K = static_cast<int>(nu.values.cols());
  check_lengths("riesz optimal", n, p_lambda.n());
  check_lengths("riesz optimal", n, gamma.values.size());
  check_lengths("riesz optimal", n, sigma.values.size());
  if (sigma.values.minCoeff() <= 0)
    throw std::invalid_argument("riesz optimal: sigma must be strictly positive");

  RieszEstimate out;
  out.mode = RieszMode::OptimalWeight;
  out.F = nu.d1.colwise().mean().transpose() +
          (nu.values.array().colwise() * gamma.values.array()).colwise().mean().matrix().transpose();

  const Eigen::MatrixXd pnu = p_lambda.apply(nu.values);
  out.R = pnu.transpose() * sigma.values.cwiseInverse().asDiagonal() * pnu / n;
  out.R = ((out.R + out.R.transpose()) / 2.0).eval();

  Eigen::MatrixXd r = out.R;
  r.diagonal().array() += kRidgeScale * r.trace() / K;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
  const double cutoff = 1e-10 * es.eigenvalues().maxCoeff();
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(K);
  for (int i = 0; i < K; ++i) {
    if (es.eigenvalues()[i] > cutoff) inv[i] = 1.0 / es.eigenvalues()[i];
    else ++out.truncated;
  }
  out.beta = es.eigenvectors() *
             (es.eigenvectors().transpose() * out.F).cwiseProduct(inv);
  out.beta_v = out.beta;
  out.v_star = nu.values * out.beta;
  return out;
}

OrthoResidualStats sigma0_sq(const Eigen::VectorXd& grad1_h, double theta,
                             const Eigen::VectorXd& gamma_vals,
                             const Eigen::VectorXd& resid) {
  const long n = grad1_h.size();
  if (n < 2) throw std::invalid_argument("sigma0: need at least 2 observations");
  check_lengths("sigma0", n, gamma_vals.size());
  check_lengths("sigma0", n, resid.size());
  Eigen::VectorXd eps =
      grad1_h.array() - theta - gamma_vals.array() * resid.array();
  OrthoResidualStats out;
  out.theta_ref = theta;
  out.sigma0_sq = (eps.array() - eps.mean()).square().mean();
  if (out.sigma0_sq < 1e-12) {
    out.sigma0_sq = 1e-12;
    out.floored = true;
  }
  return out;
}

}  // namespace npiv
