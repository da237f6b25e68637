#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "npiv/rng.hpp"
#include "npiv/smd.hpp"

using namespace npiv;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct IvSample {
  Dataset data;
  MatrixXd phi;  // instrument design for the projector
};

// small endogenous design: y2 driven by the instrument plus a disturbance
// that also enters y1
IvSample make_iv(int n, std::uint64_t seed) {
  Rng rng(seed);
  IvSample s;
  VectorXd x = rng.normal_vec(n);
  VectorXd u = rng.normal_vec(n);
  VectorXd e = rng.normal_vec(n);
  s.data.y2.resize(n, 1);
  s.data.y2.col(0) = 0.8 * x + 0.4 * u;
  s.data.x.resize(n, 1);
  s.data.x.col(0) = x;
  s.data.y1 = s.data.y2.col(0).array() * 1.5 +
              s.data.y2.col(0).array().square() * 0.3 + 0.5 * u.array() +
              0.3 * e.array();
  // instrument sieve richer than the 5-column h-sieve so minimizers are unique
  BasisSpec pspec{BasisKind::SplineKnots2, 4, false, {}, 0};
  s.phi = FittedBasis::fit(pspec, s.data.x).eval(s.data.x, false).values;
  return s;
}

MatrixXd materialize(const MatrixXd& b) {
  return b * (b.transpose() * b).inverse() * b.transpose();
}

}  // namespace

TEST_CASE("spline ismd equals the materialized linear-iv solve") {
  IvSample s = make_iv(200, 31);
  Projector p(s.phi);
  SmdProblem prob;
  prob.data = &s.data;
  prob.p_phi = &p;
  prob.sieve = SieveKind::Spline;
  prob.h_spec = {BasisKind::SplineKnots2, 3, false, {}, 0};
  FittedH h = fit_ismd(prob);

  const MatrixXd xmat = h.basis.eval(s.data.y2, false).values;
  const MatrixXd pm = materialize(s.phi);
  const MatrixXd b = pm * xmat;
  const VectorXd oracle =
      (b.transpose() * b).ldlt().solve(b.transpose() * (pm * s.data.y1));
  CHECK((h.coef - oracle).lpNorm<Eigen::Infinity>() < 1e-8);

  // first-order condition: projected residual orthogonal to the basis
  const VectorXd resid = s.data.y1 - h.eval(s.data.y2);
  CHECK((xmat.transpose() * p.apply(resid)).lpNorm<Eigen::Infinity>() < 1e-7);

  // criterion matches a direct evaluation
  const VectorXd m = p.apply(resid);
  CHECK(h.criterion == doctest::Approx(m.squaredNorm() / s.data.n()).epsilon(1e-10));
}

TEST_CASE("just-identified linear sieve reproduces two-stage least squares") {
  IvSample s = make_iv(150, 32);
  MatrixXd phi(150, 2);
  phi.col(0).setOnes();
  phi.col(1) = s.data.x.col(0);
  Projector p(phi);
  SmdProblem prob;
  prob.data = &s.data;
  prob.p_phi = &p;
  prob.h_spec = {BasisKind::Polynomial, 1, false, {}, 0};
  FittedH h = fit_ismd(prob);

  MatrixXd xmat(150, 2);
  xmat.col(0).setOnes();
  xmat.col(1) = s.data.y2.col(0);
  const VectorXd iv = (phi.transpose() * xmat)
                          .colPivHouseholderQr()
                          .solve(phi.transpose() * s.data.y1);
  CHECK((h.coef - iv).lpNorm<Eigen::Infinity>() < 1e-8);
  CHECK(theta_simple_plugin(h, s.data).theta == doctest::Approx(iv(1)).epsilon(1e-10));
}

TEST_CASE("exogenous data with a self-projector reduces to least squares") {
  Rng rng(33);
  const int n = 120;
  Dataset d;
  d.y2 = rng.normal_mat(n, 1);
  d.x = d.y2;
  d.y1 = d.y2.col(0).array() * 2.0 + rng.normal_vec(n).array() * 0.1;
  BasisSpec spec{BasisKind::SplineKnots2, 3, false, {}, 0};
  MatrixXd phi = FittedBasis::fit(spec, d.x).eval(d.x, false).values;
  Projector p(phi);
  SmdProblem prob;
  prob.data = &d;
  prob.p_phi = &p;
  prob.h_spec = spec;
  FittedH h = fit_ismd(prob);
  const MatrixXd xmat = h.basis.eval(d.y2, false).values;
  const VectorXd ols =
      (xmat.transpose() * xmat).ldlt().solve(xmat.transpose() * d.y1);
  CHECK((h.coef - ols).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("unit multiplier weights equal the unweighted fit") {
  IvSample s = make_iv(100, 34);
  Projector p(s.phi);
  SmdProblem prob;
  prob.data = &s.data;
  prob.p_phi = &p;
  prob.h_spec = {BasisKind::SplineKnots2, 3, false, {}, 0};
  FittedH plain = fit_ismd(prob);
  prob.omega = VectorXd::Ones(100);
  FittedH weighted = fit_ismd(prob);
  CHECK((plain.coef - weighted.coef).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("osmd is invariant to rescaling the conditional variance") {
  IvSample s = make_iv(150, 35);
  Projector p(s.phi);
  SmdProblem prob;
  prob.data = &s.data;
  prob.p_phi = &p;
  prob.h_spec = {BasisKind::SplineKnots2, 3, false, {}, 0};
  FittedH pre = fit_ismd(prob);

  SigmaSpec spec;
  spec.method = SigmaSpec::Method::Oracle;
  spec.oracle = (s.data.x.col(0).array().square() + 0.5).matrix();
  OsmdFit a = fit_osmd(prob, pre, spec);
  spec.oracle *= 7.0;
  OsmdFit b = fit_osmd(prob, pre, spec);
  CHECK((a.h.coef - b.h.coef).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("constant conditional variance reproduces the identity-weight fit") {
  IvSample s = make_iv(150, 36);
  Projector p(s.phi);
  SmdProblem prob;
  prob.data = &s.data;
  prob.p_phi = &p;
  prob.h_spec = {BasisKind::SplineKnots2, 3, false, {}, 0};
  FittedH pre = fit_ismd(prob);
  SigmaSpec spec;
  spec.method = SigmaSpec::Method::Oracle;
  spec.oracle = VectorXd::Constant(150, 2.0);
  OsmdFit o = fit_osmd(prob, pre, spec);
  CHECK((o.h.coef - pre.coef).lpNorm<Eigen::Infinity>() < 1e-9);
  CHECK(o.sigma.values == spec.oracle);
}

TEST_CASE("weighted solve matches a hand generalized-least-squares assembly") {
  IvSample s = make_iv(90, 37);
  Projector p(s.phi);
  SmdProblem prob;
  prob.data = &s.data;
  prob.p_phi = &p;
  prob.h_spec = {BasisKind::SplineKnots2, 3, false, {}, 0};
  FittedH pre = fit_ismd(prob);
  SigmaSpec spec;
  spec.method = SigmaSpec::Method::Oracle;
  spec.oracle = (s.data.x.col(0).array().abs() + 0.3).matrix();
  OsmdFit o = fit_osmd(prob, pre, spec);

  const MatrixXd xmat = o.h.basis.eval(s.data.y2, false).values;
  const MatrixXd pm = materialize(s.phi);
  const MatrixXd b = pm * xmat;
  const MatrixXd w = spec.oracle.cwiseInverse().asDiagonal();
  const VectorXd oracle = (b.transpose() * w * b)
                              .ldlt()
                              .solve(b.transpose() * w * (pm * s.data.y1));
  CHECK((o.h.coef - oracle).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("smd loss gradient matches finite differences") {
  Rng rng(38);
  const int n = 20;
  MatrixXd b(n, 3);
  b.col(0).setOnes();
  b.col(1) = rng.normal_vec(n);
  b.col(2) = b.col(1).array().square();
  Projector p(b);
  VectorXd wdiag = rng.uniform_vec(n).array() + 0.5;
  VectorXd omega = rng.uniform_vec(n).array() + 0.5;
  VectorXd y1 = rng.normal_vec(n);
  VectorXd h = rng.normal_vec(n);

  VectorXd grad;
  const double base = smd_loss(p, wdiag, omega, y1, h, &grad);
  CHECK(base > 0);
  const double eps = 1e-6;
  for (int i = 0; i < n; ++i) {
    VectorXd hp = h, hm = h;
    hp(i) += eps;
    hm(i) -= eps;
    const double fd =
        (smd_loss(p, wdiag, omega, y1, hp) - smd_loss(p, wdiag, omega, y1, hm)) /
        (2 * eps);
    CHECK(grad(i) == doctest::Approx(fd).epsilon(1e-5));
  }

  // unweighted overload agrees with unit weights
  VectorXd none;
  CHECK(smd_loss(p, none, none, y1, h) ==
        doctest::Approx(smd_loss(p, VectorXd::Ones(n), VectorXd::Ones(n), y1, h))
            .epsilon(1e-12));
}

TEST_CASE("plugin estimators on synthetic evaluators") {
  Dataset d;
  d.y2 = MatrixXd::Zero(5, 1);
  d.y2.col(0) << 1, 2, 3, 4, 5;
  d.x = d.y2;
  d.y1 = VectorXd::Ones(5);

  FittedH h;
  h.eval_fn = [](const MatrixXd& y2) { return VectorXd::Zero(y2.rows()); };
  h.d1_fn = [](const MatrixXd& y2) { return VectorXd::Constant(y2.rows(), 3.0); };
  CHECK(theta_simple_plugin(h, d).theta == 3.0);
  CHECK(theta_simple_plugin(h, d).kind == "simple-plugin");

  WeightFn doubling = [](const MatrixXd& y2) {
    return VectorXd::Constant(y2.rows(), 2.0);
  };
  CHECK(theta_simple_plugin(h, d, doubling).theta == 6.0);

  GammaEstimate g;
  g.values = VectorXd::Constant(5, 0.5);
  // y1 - h = 1, so theta = 3 - 0.5
  CHECK(theta_orthogonal_plugin(h, g, d).theta == doctest::Approx(2.5));
  g.values = VectorXd::Zero(5);
  CHECK(theta_orthogonal_plugin(h, g, d).theta == doctest::Approx(3.0));
}

TEST_CASE("partially linear fit recovers an exactly linear truth") {
  Rng rng(39);
  const int n = 150;
  Dataset d;
  d.y2 = rng.normal_mat(n, 2);
  d.x = d.y2;  // exogenous
  // theta = 1.7 on the first coordinate plus a nonlinear second coordinate
  d.y1 = 1.7 * d.y2.col(0).array() + (0.5 * d.y2.col(1).array()).sin();

  BasisSpec sspec{BasisKind::SplineKnots2, 4, false, {1}, 0};
  MatrixXd smat = FittedBasis::fit(sspec, d.y2).eval(d.y2, false).values;
  MatrixXd design(n, 1 + smat.cols());
  design.col(0) = d.y2.col(0);
  design.rightCols(smat.cols()) = smat;
  Projector p(design);  // instruments span the model, so the fit is exact LS

  SmdProblem prob;
  prob.data = &d;
  prob.p_phi = &p;
  prob.sieve = SieveKind::Spline;
  prob.h_spec = sspec;
  StructuredFit fit = fit_structured(prob, Structure::PartiallyLinear);

  const VectorXd ls = (design.transpose() * design)
                          .ldlt()
                          .solve(design.transpose() * d.y1);
  CHECK(fit.theta.theta == doctest::Approx(ls(0)).epsilon(1e-8));
  CHECK(fit.theta.kind == "structured-pl");
  // derivative evaluator reports the constant theta
  CHECK(fit.h.eval_d1(d.y2)(3) == doctest::Approx(fit.theta.theta));
  // fitted values agree with the least-squares fit on the assembled design
  CHECK((design * ls - fit.h.eval(d.y2)).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("partially additive spline fit is exact on an additive truth") {
  Rng rng(40);
  const int n = 160;
  Dataset d;
  d.y2 = rng.normal_mat(n, 3);
  d.x = d.y2;
  d.y1 = 0.9 * d.y2.col(0).array() + d.y2.col(1).array().square() * 0.4 +
         d.y2.col(2).array() * -0.6;

  BasisSpec s1{BasisKind::SplineKnots2, 3, false, {1}, 0};
  BasisSpec s2{BasisKind::SplineKnots2, 3, false, {2}, 0};
  MatrixXd m1 = FittedBasis::fit(s1, d.y2).eval(d.y2, false).values;
  MatrixXd m2 = FittedBasis::fit(s2, d.y2).eval(d.y2, false).values;
  MatrixXd design(n, 1 + m1.cols() + m2.cols() - 1);
  design.col(0) = d.y2.col(0);
  design.middleCols(1, m1.cols()) = m1;
  design.rightCols(m2.cols() - 1) = m2.rightCols(m2.cols() - 1);
  Projector p(design);

  SmdProblem prob;
  prob.data = &d;
  prob.p_phi = &p;
  prob.sieve = SieveKind::Spline;
  prob.h_spec = {BasisKind::SplineKnots2, 3, false, {}, 0};
  StructuredFit fit = fit_structured(prob, Structure::PartiallyAdditive);
  CHECK(fit.theta.theta == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(fit.theta.kind == "structured-pa");
  CHECK((d.y1 - fit.h.eval(d.y2)).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("ann fit improves the criterion and respects the step budget") {
  Rng rng(41);
  const int n = 120;
  Dataset d;
  d.y2 = rng.normal_mat(n, 1);
  d.x = d.y2;
  d.y1 = (d.y2.col(0).array() * 1.2).tanh() + 0.05 * rng.normal_vec(n).array();
  MatrixXd phi(n, 3);
  phi.col(0).setOnes();
  phi.col(1) = d.x.col(0);
  phi.col(2) = d.x.col(0).array().square();
  Projector p(phi);

  SmdProblem prob;
  prob.data = &d;
  prob.p_phi = &p;
  prob.sieve = SieveKind::Ann;
  prob.ann.spec.hidden = {8};
  prob.ann.spec.act = Activation::Tanh;
  prob.ann.lr = 0.01;
  prob.ann.stop = {200, 400, 100, 1e-9};
  FittedH h = fit_ismd(prob);
  CHECK(h.kind == SieveKind::Ann);
  CHECK(h.steps >= 200);
  CHECK(h.steps <= 400);
  CHECK(h.trace.size() == static_cast<std::size_t>(h.steps));

  VectorXd none;
  const double at_zero = smd_loss(p, none, none, d.y1, VectorXd::Zero(n));
  CHECK(h.criterion < 0.5 * at_zero);
  // reported criterion equals the loss at the returned parameters
  CHECK(h.criterion ==
        doctest::Approx(smd_loss(p, none, none, d.y1, h.eval(d.y2))).epsilon(1e-10));

  // same seed reproduces the fit exactly
  FittedH h2 = fit_ismd(prob);
  CHECK(h.criterion == h2.criterion);
  CHECK((h.net_params.flatten() - h2.net_params.flatten()).norm() == 0.0);
}

TEST_CASE("warm start and step scaling shrink the ann budget") {
  Rng rng(42);
  const int n = 80;
  Dataset d;
  d.y2 = rng.normal_mat(n, 1);
  d.x = d.y2;
  d.y1 = d.y2.col(0) * 0.7;
  MatrixXd phi(n, 2);
  phi.col(0).setOnes();
  phi.col(1) = d.x.col(0);
  Projector p(phi);

  SmdProblem prob;
  prob.data = &d;
  prob.p_phi = &p;
  prob.sieve = SieveKind::Ann;
  prob.ann.spec.hidden = {4};
  prob.ann.stop = {100, 200, 50, 1e-9};
  FittedH full = fit_ismd(prob);

  prob.warm_start = &full.net_params;
  prob.steps_scale = 0.2;
  FittedH warm = fit_ismd(prob);
  CHECK(warm.steps >= 20);
  CHECK(warm.steps <= 40);
  // Adam restarts its moments, so the first warm steps wobble; the criterion
  // must still sit far below anything reachable from a fresh initialization
  CHECK(warm.criterion < 1e-3);
}

TEST_CASE("sigma spec dispatch") {
  IvSample s = make_iv(60, 43);
  Projector p(s.phi);
  VectorXd resid = s.data.y1 * 0.3;

  SigmaSpec knn;
  knn.method = SigmaSpec::Method::Knn;
  knn.k = 5;
  CondVarEstimate a = estimate_sigma(knn, s.data, &p, resid);
  CHECK(a.method == "knn:5");
  CHECK(a.values.minCoeff() >= 1e-6);

  SigmaSpec proj;
  proj.method = SigmaSpec::Method::Projection;
  CondVarEstimate b = estimate_sigma(proj, s.data, &p, resid);
  CHECK(b.method == "projection");
  CHECK(b.values.size() == 60);

  SigmaSpec ident;
  ident.method = SigmaSpec::Method::Identity;
  CondVarEstimate c = estimate_sigma(ident, s.data, &p, resid);
  CHECK(c.values == VectorXd::Ones(60));

  SigmaSpec oracle;
  oracle.method = SigmaSpec::Method::Oracle;
  oracle.oracle = VectorXd::Constant(60, 0.25);
  CondVarEstimate e = estimate_sigma(oracle, s.data, &p, resid);
  CHECK(e.values == oracle.oracle);
  oracle.oracle = VectorXd::Ones(10);
  CHECK_THROWS(estimate_sigma(oracle, s.data, &p, resid));
}

TEST_CASE("problem validation rejects missing pieces") {
  Dataset d;
  d.y2 = MatrixXd::Ones(4, 1);
  d.x = d.y2;
  d.y1 = VectorXd::Ones(4);
  Projector p(MatrixXd::Ones(3, 1));  // wrong row count
  SmdProblem prob;
  CHECK_THROWS(fit_ismd(prob));
  prob.data = &d;
  prob.p_phi = &p;
  CHECK_THROWS(fit_ismd(prob));
  prob.p_phi = nullptr;
  prob.omega = VectorXd::Ones(3);  // wrong length
  CHECK_THROWS(fit_ismd(prob));
}

TEST_CASE("null projector reduces to plain regression") {
  IvSample s = make_iv(90, 61);
  SmdProblem prob;
  prob.data = &s.data;
  prob.p_phi = nullptr;
  prob.sieve = SieveKind::Spline;
  prob.h_spec = {BasisKind::SplineKnots2, 3, false, {}, 0};
  FittedH h = fit_ismd(prob);

  // least squares of y1 on the h-sieve design
  FittedBasis fb = FittedBasis::fit(prob.h_spec, s.data.y2);
  MatrixXd nu = fb.eval(s.data.y2, false).values;
  VectorXd ls = (nu.transpose() * nu).ldlt().solve(nu.transpose() * s.data.y1);
  CHECK((h.eval(s.data.y2) - nu * ls).lpNorm<Eigen::Infinity>() < 1e-8);

  // pointwise loss matches the mean squared residual
  VectorXd r = s.data.y1 - h.eval(s.data.y2);
  VectorXd none;
  CHECK(smd_loss(nullptr, none, none, s.data.y1, h.eval(s.data.y2)) ==
        doctest::Approx(r.squaredNorm() / 90.0).epsilon(1e-12));

  // projection-based sigma needs an instrument projector
  SigmaSpec proj;
  proj.method = SigmaSpec::Method::Projection;
  CHECK_THROWS(estimate_sigma(proj, s.data, nullptr, r));
  SigmaSpec knn;
  knn.method = SigmaSpec::Method::Knn;
  knn.k = 5;
  CHECK(estimate_sigma(knn, s.data, nullptr, r).values.size() == 90);
}

TEST_CASE("name round trips") {
  CHECK(sieve_kind_from_name(sieve_kind_name(SieveKind::Spline)) == SieveKind::Spline);
  CHECK(sieve_kind_from_name(sieve_kind_name(SieveKind::Ann)) == SieveKind::Ann);
  CHECK(structure_from_name(structure_name(Structure::NP)) == Structure::NP);
  CHECK(structure_from_name(structure_name(Structure::PartiallyLinear)) ==
        Structure::PartiallyLinear);
  CHECK(structure_from_name(structure_name(Structure::PartiallyAdditive)) ==
        Structure::PartiallyAdditive);
  CHECK_THROWS(sieve_kind_from_name("nope"));
  CHECK_THROWS(structure_from_name("nope"));
}
