#include "npiv/basis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "npiv/stats.hpp"

namespace npiv {

namespace {

void check_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

double ipow(double x, int p) {
  double r = 1.0;
  for (int i = 0; i < p; ++i) r *= x;
  return r;
}

double hinge_pow(double x, double t, int p) {
  double d = x - t;
  if (d <= 0.0) return 0.0;
  return p == 0 ? 1.0 : ipow(d, p);
}

// d/dx (x-t)_+^p, with the subgradient at the knot fixed to 0
double hinge_pow_d(double x, double t, int p) {
  double d = x - t;
  if (d <= 0.0 || p == 0) return 0.0;
  return p * ipow(d, p - 1);
}

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& data, const std::vector<int>& cols) {
  if (cols.empty()) return data;
  Eigen::MatrixXd out(data.rows(), static_cast<int>(cols.size()));
  for (int j = 0; j < static_cast<int>(cols.size()); ++j) {
    if (cols[j] < 0 || cols[j] >= data.cols())
      throw std::invalid_argument("basis column index out of range");
    out.col(j) = data.col(cols[j]);
  }
  return out;
}

// position of the original first coordinate within the selection, -1 if absent
int deriv_position(const std::vector<int>& cols) {
  if (cols.empty()) return 0;
  for (int j = 0; j < static_cast<int>(cols.size()); ++j)
    if (cols[j] == 0) return j;
  return -1;
}

int spline_block_cols(int k) { return (k - 1) + 2; }

int spline_total_cols(int d, int k, bool interactions) {
  int c = 1 + d * spline_block_cols(k);
  if (interactions) c += d * (d - 1) / 2;
  return c;
}

int poly_total_cols(int d, int degree, bool interactions) {
  int c = 1 + d * degree;
  if (interactions) c += d * (d - 1) / 2;
  return c;
}

// Column layout for SplineKnots2 on a d-column input, order k, knots (2 x d):
//   [intercept]
//   per coordinate c: x, x^2, ..., x^{k-1}, (x-t1)_+^{k-1}, (x-t2)_+^{k-1}
//   if interactions: x_i * x_j for i < j, (i,j) lexicographic
DesignMatrix eval_spline(const Eigen::MatrixXd& D, int k, bool interactions,
                         const Eigen::MatrixXd& knots, bool want_d1, int dpos) {
  const int n = static_cast<int>(D.rows());
  const int d = static_cast<int>(D.cols());
  const int K = spline_total_cols(d, k, interactions);
  DesignMatrix out;
  out.values.resize(n, K);
  if (want_d1) out.d1 = Eigen::MatrixXd::Zero(n, K);

  out.values.col(0).setOnes();
  int col = 1;
  for (int c = 0; c < d; ++c) {
    for (int p = 1; p <= k - 1; ++p, ++col) {
      for (int i = 0; i < n; ++i) out.values(i, col) = ipow(D(i, c), p);
      if (want_d1 && c == dpos)
        for (int i = 0; i < n; ++i) out.d1(i, col) = p * ipow(D(i, c), p - 1);
    }
    for (int knot = 0; knot < 2; ++knot, ++col) {
      const double t = knots(knot, c);
      for (int i = 0; i < n; ++i) out.values(i, col) = hinge_pow(D(i, c), t, k - 1);
      if (want_d1 && c == dpos)
        for (int i = 0; i < n; ++i) out.d1(i, col) = hinge_pow_d(D(i, c), t, k - 1);
    }
  }
  if (interactions) {
    for (int a = 0; a < d; ++a) {
      for (int b = a + 1; b < d; ++b, ++col) {
        out.values.col(col) = D.col(a).cwiseProduct(D.col(b));
        if (want_d1) {
          if (a == dpos) out.d1.col(col) = D.col(b);
          else if (b == dpos) out.d1.col(col) = D.col(a);
        }
      }
    }
  }
  return out;
}

DesignMatrix eval_poly(const Eigen::MatrixXd& D, int degree, bool interactions,
                       bool want_d1, int dpos) {
  const int n = static_cast<int>(D.rows());
  const int d = static_cast<int>(D.cols());
  const int K = poly_total_cols(d, degree, interactions);
  DesignMatrix out;
  out.values.resize(n, K);
  if (want_d1) out.d1 = Eigen::MatrixXd::Zero(n, K);

  out.values.col(0).setOnes();
  int col = 1;
  for (int c = 0; c < d; ++c) {
    for (int p = 1; p <= degree; ++p, ++col) {
      for (int i = 0; i < n; ++i) out.values(i, col) = ipow(D(i, c), p);
      if (want_d1 && c == dpos)
        for (int i = 0; i < n; ++i) out.d1(i, col) = p * ipow(D(i, c), p - 1);
    }
  }
  if (interactions) {
    for (int a = 0; a < d; ++a) {
      for (int b = a + 1; b < d; ++b, ++col) {
        out.values.col(col) = D.col(a).cwiseProduct(D.col(b));
        if (want_d1) {
          if (a == dpos) out.d1.col(col) = D.col(b);
          else if (b == dpos) out.d1.col(col) = D.col(a);
        }
      }
    }
  }
  return out;
}

}  // namespace

DesignMatrix build_phi1_basis(const Eigen::MatrixXd& x123, bool want_d1) {
  if (x123.cols() != 3) throw std::invalid_argument("phi1 basis requires exactly 3 columns");
  check_finite(x123, "phi1 basis");
  const int n = static_cast<int>(x123.rows());
  DesignMatrix out;
  out.values.resize(n, 26);
  if (want_d1) out.d1 = Eigen::MatrixXd::Zero(n, 26);
  for (int i = 0; i < n; ++i) {
    const double x1 = x123(i, 0), x2 = x123(i, 1), x3 = x123(i, 2);
    Eigen::RowVectorXd v(26);
    int c = 0;
    v[c++] = 1.0;
    v[c++] = x1; v[c++] = x1 * x1; v[c++] = ipow(x1, 3); v[c++] = ipow(x1, 4);
    v[c++] = hinge_pow(x1, 0.5, 4);
    v[c++] = x2; v[c++] = x2 * x2; v[c++] = ipow(x2, 3); v[c++] = ipow(x2, 4);
    v[c++] = hinge_pow(x2, 0.5, 4);
    v[c++] = x3; v[c++] = x3 * x3; v[c++] = ipow(x3, 3); v[c++] = ipow(x3, 4);
    v[c++] = hinge_pow(x3, 0.1, 4);
    v[c++] = hinge_pow(x3, 0.25, 4);
    v[c++] = hinge_pow(x3, 0.5, 4);
    v[c++] = hinge_pow(x3, 0.75, 4);
    v[c++] = hinge_pow(x3, 0.9, 4);
    v[c++] = x1 * x3;
    v[c++] = x2 * x3;
    v[c++] = x1 * hinge_pow(x3, 0.25, 4);
    v[c++] = x2 * hinge_pow(x3, 0.25, 4);
    v[c++] = x1 * hinge_pow(x3, 0.75, 4);
    v[c++] = x2 * hinge_pow(x3, 0.75, 4);
    out.values.row(i) = v;
    if (want_d1) {
      Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(26);
      g[1] = 1.0; g[2] = 2.0 * x1; g[3] = 3.0 * x1 * x1; g[4] = 4.0 * ipow(x1, 3);
      g[5] = hinge_pow_d(x1, 0.5, 4);
      g[20] = x3;
      g[22] = hinge_pow(x3, 0.25, 4);
      g[24] = hinge_pow(x3, 0.75, 4);
      out.d1.row(i) = g;
    }
  }
  return out;
}

DesignMatrix build_phi2_basis(const Eigen::MatrixXd& x, const Eigen::MatrixXd& xtilde,
                              bool want_d1) {
  if (x.rows() != xtilde.rows() && xtilde.cols() > 0)
    throw std::invalid_argument("phi2 basis: row mismatch");
  check_finite(x, "phi2 basis");
  if (xtilde.cols() > 0) check_finite(xtilde, "phi2 basis");
  const int n = static_cast<int>(x.rows());
  const int q = static_cast<int>(x.cols());
  const int dt = static_cast<int>(xtilde.cols());
  const int K = 2 * dt + q * dt;
  DesignMatrix out;
  out.values.resize(n, K);
  if (want_d1) out.d1 = Eigen::MatrixXd::Zero(n, K);
  if (dt == 0) return out;

  int col = 0;
  for (int j = 0; j < dt; ++j, ++col) out.values.col(col) = xtilde.col(j);
  for (int j = 0; j < dt; ++j, ++col)
    out.values.col(col) = xtilde.col(j).cwiseAbs2();
  for (int i = 0; i < q; ++i) {
    for (int j = 0; j < dt; ++j, ++col) {
      out.values.col(col) = x.col(i).cwiseProduct(xtilde.col(j));
      if (want_d1 && i == 0) out.d1.col(col) = xtilde.col(j);
    }
  }
  return out;
}

DesignMatrix build_spline_basis(const Eigen::MatrixXd& data, const BasisSpec& spec,
                                bool want_d1) {
  return FittedBasis::fit(spec, data).eval(data, want_d1);
}

FittedBasis FittedBasis::fit(const BasisSpec& spec, const Eigen::MatrixXd& data) {
  check_finite(data, "basis fit");
  if (data.rows() < 1) throw std::invalid_argument("basis fit: empty data");
  FittedBasis fb;
  fb.spec_ = spec;
  fb.input_dim_ = static_cast<int>(data.cols());
  const Eigen::MatrixXd D = select_columns(data, spec.columns);
  const int d = static_cast<int>(D.cols());

  switch (spec.kind) {
    case BasisKind::SplineKnots2: {
      if (spec.order < 1) throw std::invalid_argument("spline order must be >= 1");
      fb.knots_.resize(2, d);
      for (int c = 0; c < d; ++c) {
        const double lo = D.col(c).minCoeff(), hi = D.col(c).maxCoeff();
        if (lo == hi)
          throw std::invalid_argument("knot placement failed: column " + std::to_string(c) +
                                      " has zero variance");
        std::vector<double> v(D.col(c).data(), D.col(c).data() + D.rows());
        fb.knots_(0, c) = sample_quantile(v, 1.0 / 3.0);
        fb.knots_(1, c) = sample_quantile(std::move(v), 2.0 / 3.0);
      }
      fb.cols_ = spline_total_cols(d, spec.order, spec.interactions);
      break;
    }
    case BasisKind::Polynomial:
      if (spec.order < 1) throw std::invalid_argument("polynomial degree must be >= 1");
      fb.cols_ = poly_total_cols(d, spec.order, spec.interactions);
      break;
    case BasisKind::PaperPhi1:
      if (d != 3) throw std::invalid_argument("phi1 basis requires exactly 3 columns");
      fb.cols_ = 26;
      break;
    case BasisKind::PaperPhi2: {
      if (spec.phi2_split < 0 || spec.phi2_split > d)
        throw std::invalid_argument("phi2_split out of range");
      const int q = spec.phi2_split, dt = d - spec.phi2_split;
      fb.cols_ = 2 * dt + q * dt;
      break;
    }
  }
  return fb;
}

FittedBasis FittedBasis::with_knots(const BasisSpec& spec, int input_dim,
                                    const Eigen::MatrixXd& knots) {
  if (spec.kind != BasisKind::SplineKnots2)
    throw std::invalid_argument("explicit knots only apply to spline bases");
  FittedBasis fb;
  fb.spec_ = spec;
  fb.input_dim_ = input_dim;
  fb.knots_ = knots;
  const int d = spec.columns.empty() ? input_dim : static_cast<int>(spec.columns.size());
  if (knots.rows() != 2 || knots.cols() != d)
    throw std::invalid_argument("knots must be 2 x (#selected columns)");
  fb.cols_ = spline_total_cols(d, spec.order, spec.interactions);
  return fb;
}

DesignMatrix FittedBasis::eval(const Eigen::MatrixXd& data, bool want_d1) const {
  check_finite(data, "basis eval");
  if (static_cast<int>(data.cols()) != input_dim_)
    throw std::invalid_argument("basis eval: input dimension mismatch");
  const Eigen::MatrixXd D = select_columns(data, spec_.columns);
  const int dpos = deriv_position(spec_.columns);

  switch (spec_.kind) {
    case BasisKind::SplineKnots2:
      return eval_spline(D, spec_.order, spec_.interactions, knots_, want_d1, dpos);
    case BasisKind::Polynomial:
      return eval_poly(D, spec_.order, spec_.interactions, want_d1, dpos);
    case BasisKind::PaperPhi1: {
      DesignMatrix out = build_phi1_basis(D, want_d1 && dpos == 0);
      if (want_d1 && !out.has_d1()) out.d1 = Eigen::MatrixXd::Zero(D.rows(), 26);
      return out;
    }
    case BasisKind::PaperPhi2: {
      const int q = spec_.phi2_split;
      DesignMatrix out = build_phi2_basis(D.leftCols(q), D.rightCols(D.cols() - q),
                                          want_d1 && dpos == 0);
      if (want_d1 && !out.has_d1())
        out.d1 = Eigen::MatrixXd::Zero(D.rows(), out.values.cols());
      return out;
    }
  }
  throw std::logic_error("unreachable basis kind");
}

CompositeBasis::CompositeBasis(std::vector<FittedBasis> parts) : parts_(std::move(parts)) {
  cols_ = 0;
  for (const auto& p : parts_) cols_ += p.cols();
}

DesignMatrix CompositeBasis::eval(const Eigen::MatrixXd& data, bool want_d1) const {
  DesignMatrix out;
  out.values.resize(data.rows(), cols_);
  if (want_d1) out.d1.resize(data.rows(), cols_);
  int col = 0;
  for (const auto& p : parts_) {
    DesignMatrix part = p.eval(data, want_d1);
    out.values.middleCols(col, p.cols()) = part.values;
    if (want_d1) out.d1.middleCols(col, p.cols()) = part.d1;
    col += p.cols();
  }
  return out;
}

std::string basis_kind_name(BasisKind k) {
  switch (k) {
    case BasisKind::SplineKnots2: return "spline";
    case BasisKind::PaperPhi1: return "phi1";
    case BasisKind::PaperPhi2: return "phi2";
    case BasisKind::Polynomial: return "polynomial";
  }
  return "unknown";
}

BasisKind basis_kind_from_name(const std::string& name) {
  if (name == "spline") return BasisKind::SplineKnots2;
  if (name == "phi1") return BasisKind::PaperPhi1;
  if (name == "phi2") return BasisKind::PaperPhi2;
  if (name == "polynomial") return BasisKind::Polynomial;
  throw std::invalid_argument("unknown basis kind: " + name);
}

}  // namespace npiv
