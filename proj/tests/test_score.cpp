#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "npiv/rng.hpp"
#include "npiv/score.hpp"

using namespace npiv;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct IvCase {
  Dataset data;
  FittedBasis lambda;
  Projector p;
  FittedH h;

  IvCase(int n, std::uint64_t seed)
      : lambda(), p(MatrixXd::Ones(1, 1)) {
    Rng rng(seed);
    VectorXd x = rng.normal_vec(n);
    VectorXd u = rng.normal_vec(n);
    data.y2.resize(n, 1);
    data.y2.col(0) = 0.7 * x + 0.5 * u;
    data.x.resize(n, 1);
    data.x.col(0) = x;
    data.y1 = data.y2.col(0).array() * 1.3 + 0.4 * u.array() +
              0.2 * rng.normal_vec(n).array();
    lambda = FittedBasis::fit({BasisKind::SplineKnots2, 4, false, {}, 0}, data.x);
    p = Projector(lambda.eval(data.x, false).values);
    SmdProblem prob;
    prob.data = &data;
    prob.p_phi = &p;
    prob.h_spec = {BasisKind::SplineKnots2, 3, false, {}, 0};
    h = fit_ismd(prob);
  }
};

// fold pipeline shared by the crossfit tests: identity-score spline recipe
FoldNuisances fit_fold_spline(const Dataset& train) {
  FoldNuisances out;
  out.lambda = FittedBasis::fit({BasisKind::SplineKnots2, 4, false, {}, 0}, train.x);
  Projector p(out.lambda.eval(train.x, false).values);
  SmdProblem prob;
  prob.data = &train;
  prob.p_phi = &p;
  prob.h_spec = {BasisKind::SplineKnots2, 3, false, {}, 0};
  out.h = fit_ismd(prob);
  DesignMatrix nu = out.h.basis.eval(train.y2, true);
  ScoreFunction k = kappa_identity(riesz_identity(nu, p), p);
  out.xi = p.coeffs(k.kappa);
  return out;
}

}  // namespace

TEST_CASE("empty kappa reduces the score estimate to the simple plugin") {
  IvCase c(120, 51);
  ScoreFunction none;
  ScoreResult r = theta_score(c.h, none, c.data);
  CHECK(r.theta.theta == theta_simple_plugin(c.h, c.data).theta);
  CHECK(r.per_obs == c.h.eval_d1(c.data.y2));
  CHECK(r.theta.kind == "score-identity");
}

TEST_CASE("theta_score on hand-built evaluators") {
  Dataset d;
  d.y2 = MatrixXd::Zero(3, 1);
  d.x = d.y2;
  d.y1.resize(3);
  d.y1 << 1, 2, 3;
  FittedH h;
  h.eval_fn = [](const MatrixXd& m) { return VectorXd::Zero(m.rows()); };
  h.d1_fn = [](const MatrixXd& m) { return VectorXd::Constant(m.rows(), 2.0); };
  ScoreFunction s;
  s.kind = ScoreKind::EfficientScore;
  s.kappa.resize(3);
  s.kappa << 0.5, -1.0, 0.0;
  ScoreResult r = theta_score(h, s, d);
  // scores: 2 - 0.5*1, 2 + 1*2, 2 - 0
  CHECK(r.per_obs(0) == doctest::Approx(1.5));
  CHECK(r.per_obs(1) == doctest::Approx(4.0));
  CHECK(r.per_obs(2) == doctest::Approx(2.0));
  CHECK(r.theta.theta == doctest::Approx(2.5));
  CHECK(r.theta.kind == "score-efficient");

  s.kappa = VectorXd::Ones(5);
  CHECK_THROWS(theta_score(h, s, d));
}

TEST_CASE("identity score is invariant to in-sample sieve perturbations of h") {
  IvCase c(180, 52);
  DesignMatrix nu = c.h.basis.eval(c.data.y2, true);
  RieszEstimate rz = riesz_identity(nu, c.p);
  ScoreFunction score = kappa_identity(rz, c.p);
  const double base = theta_score(c.h, score, c.data).theta.theta;

  for (int j = 0; j < nu.values.cols(); ++j) {
    FittedH hp = c.h;
    hp.coef(j) += 0.37;
    const double moved = theta_score(hp, score, c.data).theta.theta;
    CHECK(moved == doctest::Approx(base).epsilon(1e-7));
  }

  // the simple plugin is NOT invariant, so the correction is doing the work
  FittedH hp = c.h;
  hp.coef(1) += 0.37;
  CHECK(std::abs(theta_simple_plugin(hp, c.data).theta -
                 theta_simple_plugin(c.h, c.data).theta) > 1e-3);
}

TEST_CASE("kappa_identity equals -v* when v* lies in the instrument span") {
  Rng rng(53);
  const int n = 40;
  DesignMatrix nu;
  nu.values = rng.normal_mat(n, 3);
  nu.d1 = rng.normal_mat(n, 3);
  Projector p(nu.values);  // lambda spans nu, so P v* = v*
  RieszEstimate rz = riesz_identity(nu, p);
  ScoreFunction k = kappa_identity(rz, p);
  CHECK((k.kappa + rz.v_star).lpNorm<Eigen::Infinity>() < 1e-9);
  CHECK(k.kind == ScoreKind::IdentityScore);
}

TEST_CASE("kappa_identity known projection on a two-point design") {
  DesignMatrix nu;
  nu.values.resize(2, 1);
  nu.values << 1, 3;
  nu.d1 = MatrixXd::Ones(2, 1);
  Projector p(MatrixXd::Ones(2, 1));  // projection = mean
  RieszEstimate rz = riesz_identity(nu, p);
  ScoreFunction k = kappa_identity(rz, p);
  const double vbar = (rz.v_star(0) + rz.v_star(1)) / 2;
  CHECK(k.kappa(0) == doctest::Approx(-vbar).epsilon(1e-12));
  CHECK(k.kappa(1) == doctest::Approx(-vbar).epsilon(1e-12));
}

TEST_CASE("kappa_efficient assembles gamma minus the scaled projection") {
  const int n = 5;
  Rng rng(54);
  RieszEstimate rz;
  rz.mode = RieszMode::OptimalWeight;
  rz.v_star = rng.normal_vec(n);
  Projector p(MatrixXd::Identity(n, n));
  GammaEstimate g;
  g.values = rng.normal_vec(n);
  CondVarEstimate sig;
  sig.values = rng.uniform_vec(n).array() + 0.5;
  ScoreFunction k = kappa_efficient(g, rz, p, sig);
  for (int i = 0; i < n; ++i)
    CHECK(k.kappa(i) ==
          doctest::Approx(g.values(i) - rz.v_star(i) / sig.values(i)).epsilon(1e-12));
  CHECK(k.kind == ScoreKind::EfficientScore);

  CondVarEstimate bad;
  bad.values = VectorXd::Ones(2);
  CHECK_THROWS(kappa_efficient(g, rz, p, bad));
}

TEST_CASE("crossfit plan is balanced, deterministic, and seed sensitive") {
  CrossfitPlan a = make_crossfit_plan(101, 7);
  CrossfitPlan b = make_crossfit_plan(101, 7);
  CHECK(a.fold == b.fold);
  int zeros = 0;
  for (int f : a.fold) zeros += (f == 0);
  CHECK(zeros == 50);  // n/2, fold 1 gets the extra row

  CrossfitPlan c = make_crossfit_plan(101, 8);
  CHECK(a.fold != c.fold);
  CHECK_THROWS(make_crossfit_plan(2, 1));
}

TEST_CASE("subset_rows picks the requested rows") {
  Dataset d;
  d.y2 = MatrixXd::Zero(4, 2);
  d.y2 << 1, 2, 3, 4, 5, 6, 7, 8;
  d.x = d.y2;
  d.y1.resize(4);
  d.y1 << 10, 20, 30, 40;
  Dataset s = subset_rows(d, {3, 0});
  CHECK(s.n() == 2);
  CHECK(s.y1(0) == 40);
  CHECK(s.y1(1) == 10);
  CHECK(s.y2(0, 1) == 8);
  CHECK(s.x(1, 0) == 1);
}

TEST_CASE("crossfit scores each row with the opposite fold") {
  IvCase c(160, 55);
  CrossfitPlan plan = make_crossfit_plan(160, 9);
  ScoreResult r = theta_score_crossfit(c.data, plan, fit_fold_spline);
  CHECK(r.theta.kind == "score-crossfit");
  CHECK(r.theta.theta == doctest::Approx(r.per_obs.mean()).epsilon(1e-14));

  // manual replication of one fold pass
  std::vector<int> rows0, rows1;
  for (int i = 0; i < 160; ++i) (plan.fold[i] == 0 ? rows0 : rows1).push_back(i);
  FoldNuisances nu0 = fit_fold_spline(subset_rows(c.data, rows0));
  Dataset hold = subset_rows(c.data, rows1);
  VectorXd d1 = nu0.h.eval_d1(hold.y2);
  VectorXd resid = hold.y1 - nu0.h.eval(hold.y2);
  VectorXd kap = nu0.lambda.eval(hold.x, false).values * nu0.xi;
  for (std::size_t j = 0; j < rows1.size(); ++j) {
    const int i = static_cast<int>(j);
    CHECK(r.per_obs(rows1[j]) ==
          doctest::Approx(d1(i) - kap(i) * resid(i)).epsilon(1e-12));
  }
}

TEST_CASE("crossfit is symmetric in fold labels and duplicated folds coincide") {
  // rows i and i+n/2 identical, fold split down the middle: both folds see
  // the same training data, so both halves must receive identical scores
  const int half = 60;
  IvCase base(half, 56);
  Dataset d;
  d.y1.resize(2 * half);
  d.y2.resize(2 * half, 1);
  d.x.resize(2 * half, 1);
  d.y1 << base.data.y1, base.data.y1;
  d.y2 << base.data.y2, base.data.y2;
  d.x << base.data.x, base.data.x;

  CrossfitPlan plan;
  plan.fold.assign(2 * half, 0);
  for (int i = half; i < 2 * half; ++i) plan.fold[i] = 1;
  ScoreResult r = theta_score_crossfit(d, plan, fit_fold_spline);
  for (int i = 0; i < half; ++i)
    CHECK(r.per_obs(i) == doctest::Approx(r.per_obs(i + half)).epsilon(1e-12));

  CrossfitPlan swapped;
  swapped.fold.assign(2 * half, 1);
  for (int i = half; i < 2 * half; ++i) swapped.fold[i] = 0;
  ScoreResult r2 = theta_score_crossfit(d, swapped, fit_fold_spline);
  CHECK(r2.theta.theta == doctest::Approx(r.theta.theta).epsilon(1e-13));
  CHECK((r.per_obs - r2.per_obs).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("crossfit rejects malformed inputs and wraps fold failures") {
  IvCase c(40, 57);
  CrossfitPlan bad;
  bad.fold.assign(10, 0);
  CHECK_THROWS(theta_score_crossfit(c.data, bad, fit_fold_spline));

  CrossfitPlan plan = make_crossfit_plan(40, 3);
  CHECK_THROWS(theta_score_crossfit(c.data, plan, nullptr));

  FoldFitter boom = [](const Dataset&) -> FoldNuisances {
    throw std::runtime_error("nope");
  };
  try {
    theta_score_crossfit(c.data, plan, boom);
    CHECK(false);
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("fold") != std::string::npos);
  }
}
