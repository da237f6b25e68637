#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "npiv/dataset.hpp"
#include "npiv/nuisance.hpp"
#include "npiv/smd.hpp"

namespace npiv {

enum class ScoreKind { IdentityScore, EfficientScore };

struct ScoreFunction {
  ScoreKind kind = ScoreKind::IdentityScore;
  Eigen::VectorXd kappa;
};

// kappa = -P_lambda(v*). The sign makes the in-sample estimate invariant to
// first-order perturbations of h inside the sieve span: perturbing h by
// delta*nu_j shifts theta by delta*(d_j + mean(kappa*nu_j)), and the
// projection identity gives mean(-P(v*)*nu_j) = -d_j exactly.
ScoreFunction kappa_identity(const RieszEstimate& v_star, const Projector& p_lambda);

// kappa = Gamma - P_lambda(v*) / Sigma_score
ScoreFunction kappa_efficient(const GammaEstimate& gamma, const RieszEstimate& v_star,
                              const Projector& p_lambda,
                              const CondVarEstimate& sigma_score);

// theta = mean of d1h(y2_i) - kappa(x_i)(y1_i - h(y2_i)); per-observation
// values are retained for standard errors
struct ScoreResult {
  ThetaEstimate theta;
  Eigen::VectorXd per_obs;
};

ScoreResult theta_score(const FittedH& h, const ScoreFunction& score,
                        const Dataset& data, const WeightFn& a_fn = nullptr);

// Two folds whose sizes differ by at most one, assigned by a seeded shuffle.
struct CrossfitPlan {
  std::vector<int> fold;  // 0 or 1 per row
};

CrossfitPlan make_crossfit_plan(int n, std::uint64_t seed);

// Everything the held-out fold needs from the training fold: the fitted h,
// the instrument basis with knots frozen on the training rows, and the
// coefficient vector xi with lambda(x)'xi reproducing kappa there.
struct FoldNuisances {
  FittedH h;
  FittedBasis lambda;
  Eigen::VectorXd xi;
};

using FoldFitter = std::function<FoldNuisances(const Dataset& train)>;

// Each row is scored by the nuisances trained on the opposite fold; theta is
// the grand mean, i.e. the fold means weighted by fold size.
ScoreResult theta_score_crossfit(const Dataset& data, const CrossfitPlan& plan,
                                 const FoldFitter& fit_fold);

Dataset subset_rows(const Dataset& data, const std::vector<int>& rows);

}  // namespace npiv
