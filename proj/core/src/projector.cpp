#include "npiv/projector.hpp"

#include <stdexcept>

#include <Eigen/Dense>

namespace npiv {

namespace {

struct PsdFactorization {
  Eigen::MatrixXd evecs;
  Eigen::VectorXd inv_evals;
  int rank;
};

PsdFactorization factor_psd(const Eigen::MatrixXd& a, double rel_tol) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double cutoff = rel_tol * std::max(ev.size() ? ev.maxCoeff() : 0.0, 0.0);
  PsdFactorization f;
  f.evecs = es.eigenvectors();
  f.inv_evals.resize(ev.size());
  f.rank = 0;
  for (int i = 0; i < ev.size(); ++i) {
    if (ev[i] > cutoff && ev[i] > 0.0) {
      f.inv_evals[i] = 1.0 / ev[i];
      ++f.rank;
    } else {
      f.inv_evals[i] = 0.0;
    }
  }
  return f;
}

}  // namespace

Projector::Projector(Eigen::MatrixXd B, double rel_tol) : B_(std::move(B)) {
  if (B_.rows() < 1) throw std::invalid_argument("projector: empty basis");
  auto f = factor_psd(B_.transpose() * B_, rel_tol);
  evecs_ = std::move(f.evecs);
  inv_evals_ = std::move(f.inv_evals);
  rank_ = f.rank;
}

Eigen::VectorXd Projector::coeffs(const Eigen::VectorXd& v) const {
  if (v.size() != B_.rows()) throw std::invalid_argument("projector: length mismatch");
  Eigen::VectorXd btv = B_.transpose() * v;
  return evecs_ * inv_evals_.cwiseProduct(evecs_.transpose() * btv).matrix();
}

Eigen::VectorXd Projector::apply(const Eigen::VectorXd& v) const {
  return B_ * coeffs(v);
}

Eigen::MatrixXd Projector::apply(const Eigen::MatrixXd& m) const {
  if (m.rows() != B_.rows()) throw std::invalid_argument("projector: row mismatch");
  Eigen::MatrixXd t = evecs_.transpose() * (B_.transpose() * m);
  t.array().colwise() *= inv_evals_.array();
  return B_ * (evecs_ * t);
}

Eigen::VectorXd psd_pinv_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                               double rel_tol) {
  auto f = factor_psd(a, rel_tol);
  return f.evecs * f.inv_evals.cwiseProduct(f.evecs.transpose() * b).matrix();
}

Eigen::MatrixXd psd_pinv(const Eigen::MatrixXd& a, double rel_tol) {
  auto f = factor_psd(a, rel_tol);
  return f.evecs * f.inv_evals.asDiagonal() * f.evecs.transpose();
}

}  // namespace npiv
