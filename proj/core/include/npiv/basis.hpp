#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace npiv {

enum class BasisKind { SplineKnots2, PaperPhi1, PaperPhi2, Polynomial };

// Declarative description of a linear sieve basis. `columns` selects input
// coordinates (empty = all). For PaperPhi2, the first `phi2_split` selected
// columns are treated as X and the remainder as Xtilde.
struct BasisSpec {
  BasisKind kind = BasisKind::SplineKnots2;
  int order = 3;  // Spline(k,2): piecewise polynomial of order k-1; also the
                  // degree bound for Polynomial
  bool interactions = false;
  std::vector<int> columns;
  int phi2_split = 0;
};

// Expanded design matrix, optionally with the analytic partial derivative of
// every column with respect to the first column of the input data.
struct DesignMatrix {
  Eigen::MatrixXd values;
  Eigen::MatrixXd d1;

  bool has_d1() const { return d1.size() > 0; }
};

// A basis whose data-dependent pieces (interior knots at the 1/3 and 2/3
// empirical quantiles) have been resolved, so it can be evaluated on
// arbitrary data: held-out points, bootstrap draws, the opposite fold.
class FittedBasis {
 public:
  static FittedBasis fit(const BasisSpec& spec, const Eigen::MatrixXd& data);
  // explicit knots, a 2 x (#selected columns) matrix (rows: lower, upper)
  static FittedBasis with_knots(const BasisSpec& spec, int input_dim,
                                const Eigen::MatrixXd& knots);

  DesignMatrix eval(const Eigen::MatrixXd& data, bool want_d1 = false) const;

  int input_dim() const { return input_dim_; }
  int cols() const { return cols_; }
  const Eigen::MatrixXd& knots() const { return knots_; }
  const BasisSpec& spec() const { return spec_; }

 private:
  BasisSpec spec_;
  int input_dim_ = 0;
  int cols_ = 0;
  Eigen::MatrixXd knots_;  // 2 x (#selected columns); empty for phi1/phi2/poly
};

// Column-wise concatenation of fitted bases sharing the same input matrix,
// e.g. the instrument sieve [phi1(X1,X2,X3), phi2(X, Xtilde)]. Keeps exactly
// one intercept because phi2 contributes none.
class CompositeBasis {
 public:
  CompositeBasis() = default;
  explicit CompositeBasis(std::vector<FittedBasis> parts);

  DesignMatrix eval(const Eigen::MatrixXd& data, bool want_d1 = false) const;
  int cols() const { return cols_; }
  const std::vector<FittedBasis>& parts() const { return parts_; }

 private:
  std::vector<FittedBasis> parts_;
  int cols_ = 0;
};

// Free builders matching the operation contracts. Knots resolve from `data`.
DesignMatrix build_spline_basis(const Eigen::MatrixXd& data, const BasisSpec& spec,
                                bool want_d1 = false);
// The 26-term instrument list for three uniform covariates: powers up to 4,
// fixed-knot quartic hinges, and selected products.
DesignMatrix build_phi1_basis(const Eigen::MatrixXd& x123, bool want_d1 = false);
// [Xtilde levels, Xtilde squares, all products X_i * Xtilde_j] (i-major)
DesignMatrix build_phi2_basis(const Eigen::MatrixXd& x, const Eigen::MatrixXd& xtilde,
                              bool want_d1 = false);

std::string basis_kind_name(BasisKind k);
BasisKind basis_kind_from_name(const std::string& name);

}  // namespace npiv
