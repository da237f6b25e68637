#include "npiv/score.hpp"

#include <stdexcept>
#include <string>
#include <utility>

#include "npiv/rng.hpp"

namespace npiv {

ScoreFunction kappa_identity(const RieszEstimate& v_star, const Projector& p_lambda) {
  if (v_star.v_star.size() != p_lambda.n())
    throw std::invalid_argument("kappa_identity: v* length does not match projector");
  ScoreFunction out;
  out.kind = ScoreKind::IdentityScore;
  out.kappa = -p_lambda.apply(v_star.v_star);
  return out;
}

ScoreFunction kappa_efficient(const GammaEstimate& gamma, const RieszEstimate& v_star,
                              const Projector& p_lambda,
                              const CondVarEstimate& sigma_score) {
  const int n = p_lambda.n();
  if (v_star.v_star.size() != n)
    throw std::invalid_argument("kappa_efficient: v* length does not match projector");
  if (gamma.values.size() != n)
    throw std::invalid_argument("kappa_efficient: gamma length does not match projector");
  if (sigma_score.values.size() != n)
    throw std::invalid_argument("kappa_efficient: sigma length does not match projector");
  ScoreFunction out;
  out.kind = ScoreKind::EfficientScore;
  out.kappa =
      gamma.values - p_lambda.apply(v_star.v_star).cwiseQuotient(sigma_score.values);
  return out;
}

ScoreResult theta_score(const FittedH& h, const ScoreFunction& score,
                        const Dataset& data, const WeightFn& a_fn) {
  const int n = data.n();
  if (n == 0) throw std::invalid_argument("theta_score: empty data");
  Eigen::VectorXd d1 = h.eval_d1(data.y2);
  if (a_fn) d1 = d1.cwiseProduct(a_fn(data.y2)).eval();
  ScoreResult out;
  out.per_obs = std::move(d1);
  if (score.kappa.size() > 0) {
    if (score.kappa.size() != n)
      throw std::invalid_argument("theta_score: kappa length does not match data");
    const Eigen::VectorXd resid = data.y1 - h.eval(data.y2);
    out.per_obs -= score.kappa.cwiseProduct(resid);
  }
  out.theta.theta = out.per_obs.mean();
  out.theta.kind =
      score.kind == ScoreKind::IdentityScore ? "score-identity" : "score-efficient";
  return out;
}

CrossfitPlan make_crossfit_plan(int n, std::uint64_t seed) {
  if (n < 4) throw std::invalid_argument("crossfit plan needs at least 4 rows");
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform() * (i + 1));
    std::swap(order[i], order[j]);
  }
  CrossfitPlan plan;
  plan.fold.assign(n, 1);
  const int half = n / 2;  // fold 0 gets the smaller half when n is odd
  for (int i = 0; i < half; ++i) plan.fold[order[i]] = 0;
  return plan;
}

Dataset subset_rows(const Dataset& data, const std::vector<int>& rows) {
  Dataset out;
  const int m = static_cast<int>(rows.size());
  out.y1.resize(m);
  out.y2.resize(m, data.y2.cols());
  out.x.resize(m, data.x.cols());
  for (int i = 0; i < m; ++i) {
    out.y1(i) = data.y1(rows[i]);
    out.y2.row(i) = data.y2.row(rows[i]);
    out.x.row(i) = data.x.row(rows[i]);
  }
  return out;
}

ScoreResult theta_score_crossfit(const Dataset& data, const CrossfitPlan& plan,
                                 const FoldFitter& fit_fold) {
  const int n = data.n();
  if (static_cast<int>(plan.fold.size()) != n)
    throw std::invalid_argument("crossfit: plan length does not match data");
  if (!fit_fold) throw std::invalid_argument("crossfit: missing fold fitter");

  std::vector<int> rows[2];
  for (int i = 0; i < n; ++i) {
    const int f = plan.fold[i];
    if (f != 0 && f != 1) throw std::invalid_argument("crossfit: fold labels must be 0/1");
    rows[f].push_back(i);
  }
  if (rows[0].size() < 2 || rows[1].size() < 2)
    throw std::invalid_argument("crossfit: each fold needs at least 2 rows");

  ScoreResult out;
  out.per_obs.resize(n);
  for (int train = 0; train < 2; ++train) {
    FoldNuisances nu;
    try {
      nu = fit_fold(subset_rows(data, rows[train]));
    } catch (const std::exception& e) {
      throw std::runtime_error("crossfit fold " + std::to_string(train) +
                               " fit failed: " + e.what());
    }
    const std::vector<int>& eval_rows = rows[1 - train];
    Dataset heldout = subset_rows(data, eval_rows);
    const Eigen::VectorXd d1 = nu.h.eval_d1(heldout.y2);
    const Eigen::VectorXd resid = heldout.y1 - nu.h.eval(heldout.y2);
    const Eigen::MatrixXd lam = nu.lambda.eval(heldout.x, false).values;
    if (lam.cols() != nu.xi.size())
      throw std::runtime_error("crossfit fold " + std::to_string(train) +
                               ": xi length does not match lambda basis");
    const Eigen::VectorXd kappa = lam * nu.xi;
    for (std::size_t j = 0; j < eval_rows.size(); ++j) {
      const int i = static_cast<int>(j);
      out.per_obs(eval_rows[j]) = d1(i) - kappa(i) * resid(i);
    }
  }
  out.theta.theta = out.per_obs.mean();
  out.theta.kind = "score-crossfit";
  return out;
}

}  // namespace npiv
