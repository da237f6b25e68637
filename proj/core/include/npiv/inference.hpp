#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "npiv/dataset.hpp"
#include "npiv/nuisance.hpp"
#include "npiv/smd.hpp"

namespace npiv {

enum class VarianceMethod { ScoreSampleVar, IsmdFormula, OsmdBound, Bootstrap };

struct VarianceEstimate {
  double variance = 0.0;
  double se = 0.0;
  VarianceMethod method = VarianceMethod::ScoreSampleVar;
};

// variance = mean squared deviation of the per-observation scores, se = sqrt(var/n)
VarianceEstimate se_from_scores(const Eigen::VectorXd& per_obs_scores);

// Identity-weight asymptotic variance built from D_i = [-1 - mean d1 w*, (P w*)_i]:
//   printed:    V = mean(|D|^2)^2 / mean(|D|^2 r^2)
//   reciprocal: the same ratio inverted
// The printed orientation follows the source display; the reciprocal one is the
// conventional sandwich reading (it grows with the residual variance). Both are
// returned; `printed_primary` marks which one downstream reports as V.
struct IsmdVariance {
  VarianceEstimate printed;
  VarianceEstimate reciprocal;
  bool printed_primary = false;
};

IsmdVariance variance_ismd(const RieszEstimate& w_star, const Projector& p_lambda,
                           const Dataset& data, const FittedH& h);

// Efficiency bound for the optimally weighted estimator. The inverse variance is
//   min_c { c'Rc + (1 + F'c)^2 / sigma0^2 },
// minimized at c* = -R^+ F / (sigma0^2 + F'R^+F), so V = sigma0^2 + F'R^+F.
struct OsmdBound {
  VarianceEstimate variance;
  double min_value = 0.0;   // minimized inverse-variance quadratic = 1/V
  Eigen::VectorXd c_star;   // minimizer, for oracle checks
  Eigen::VectorXd F;
  Eigen::MatrixXd R;
};

OsmdBound variance_osmd_bound(const DesignMatrix& nu, const Projector& p_lambda,
                              const GammaEstimate& gamma, const CondVarEstimate& sigma,
                              const OrthoResidualStats& sigma0);

enum class BootstrapWeightLaw { Exponential, DegenerateOnes };

struct BootstrapResult {
  std::vector<double> draws;  // successful draws, in draw order
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double level = 0.95;
  int requested = 0;
  int failures = 0;
  BootstrapWeightLaw weight_law = BootstrapWeightLaw::Exponential;
};

// Refits the configured pipeline with multiplier weights omega and returns the
// reweighted point estimate. draw_seed is a dedicated substream for any
// randomness inside the refit.
using BootstrapRefit =
    std::function<double(const Eigen::VectorXd& omega, std::uint64_t draw_seed)>;

// Draw b reweights the residuals with i.i.d. unit-exponential omega generated
// from substream mix_seed(seed, b), so results do not depend on scheduling.
// Throwing or non-finite refits are skipped and counted; more than 10%
// failures is an error. The CI is the percentile interval of the draws.
BootstrapResult bootstrap_smd(int n, int B, std::uint64_t seed, double level,
                              const BootstrapRefit& refit,
                              BootstrapWeightLaw law = BootstrapWeightLaw::Exponential,
                              int threads = 1);

std::string variance_method_name(VarianceMethod m);

}  // namespace npiv
