#include "npiv/inference.hpp"

#include <cmath>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

#include "npiv/rng.hpp"
#include "npiv/stats.hpp"

namespace npiv {

VarianceEstimate se_from_scores(const Eigen::VectorXd& per_obs_scores) {
  const long n = per_obs_scores.size();
  if (n < 2) throw std::invalid_argument("se_from_scores: need at least 2 scores");
  VarianceEstimate out;
  out.method = VarianceMethod::ScoreSampleVar;
  out.variance = (per_obs_scores.array() - per_obs_scores.mean()).square().mean();
  out.se = std::sqrt(out.variance / n);
  return out;
}

IsmdVariance variance_ismd(const RieszEstimate& w_star, const Projector& p_lambda,
                           const Dataset& data, const FittedH& h) {
  if (w_star.mode != RieszMode::IdentityWeight)
    throw std::invalid_argument("variance_ismd: needs an identity-weight riesz fit");
  const int n = data.n();
  if (w_star.w_star.size() != n || p_lambda.n() != n)
    throw std::invalid_argument("variance_ismd: length mismatch");

  const double a = 1.0 + w_star.d1_mean;
  const Eigen::VectorXd pw = p_lambda.apply(w_star.w_star);
  const Eigen::ArrayXd dsq = a * a + pw.array().square();
  const Eigen::ArrayXd r = (data.y1 - h.eval(data.y2)).array();
  const double num = dsq.mean() * dsq.mean();
  const double den = (dsq * r.square()).mean();
  if (den <= 0)
    throw std::runtime_error("variance_ismd: nonpositive denominator " +
                             std::to_string(den));

  IsmdVariance out;
  out.printed.method = VarianceMethod::IsmdFormula;
  out.printed.variance = num / den;
  out.printed.se = std::sqrt(out.printed.variance / n);
  out.reciprocal.method = VarianceMethod::IsmdFormula;
  out.reciprocal.variance = den / num;
  out.reciprocal.se = std::sqrt(out.reciprocal.variance / n);
  return out;
}

OsmdBound variance_osmd_bound(const DesignMatrix& nu, const Projector& p_lambda,
                              const GammaEstimate& gamma, const CondVarEstimate& sigma,
                              const OrthoResidualStats& sigma0) {
  RieszEstimate opt = riesz_optimal(nu, p_lambda, gamma, sigma);
  const double s = opt.F.dot(opt.beta_v);
  const double v = sigma0.sigma0_sq + s;
  if (v <= 0)
    throw std::runtime_error("variance_osmd_bound: nonpositive minimized value");

  OsmdBound out;
  out.F = opt.F;
  out.R = opt.R;
  out.c_star = -opt.beta_v / v;
  out.min_value = 1.0 / v;
  out.variance.method = VarianceMethod::OsmdBound;
  out.variance.variance = v;
  out.variance.se = std::sqrt(v / nu.values.rows());
  return out;
}

BootstrapResult bootstrap_smd(int n, int B, std::uint64_t seed, double level,
                              const BootstrapRefit& refit, BootstrapWeightLaw law,
                              int threads) {
  if (n < 1) throw std::invalid_argument("bootstrap: empty sample");
  if (B < 50) throw std::invalid_argument("bootstrap: need at least 50 draws");
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("bootstrap: level must be in (0, 1)");
  if (!refit) throw std::invalid_argument("bootstrap: missing refit callback");
  if (threads < 1) threads = 1;

  std::vector<double> value(B, 0.0);
  std::vector<char> ok(B, 0);
  auto run_draw = [&](int b) {
    const std::uint64_t draw_seed = mix_seed(seed, static_cast<std::uint64_t>(b));
    Eigen::VectorXd omega;
    if (law == BootstrapWeightLaw::Exponential) {
      Rng rng(draw_seed);
      omega = rng.exponential_vec(n);
    } else {
      omega = Eigen::VectorXd::Ones(n);
    }
    try {
      const double theta = refit(omega, draw_seed);
      if (std::isfinite(theta)) {
        value[b] = theta;
        ok[b] = 1;
      }
    } catch (const std::exception&) {
      // counted below
    }
  };

  if (threads == 1) {
    for (int b = 0; b < B; ++b) run_draw(b);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (int b = t; b < B; b += threads) run_draw(b);
      });
    for (auto& th : pool) th.join();
  }

  BootstrapResult out;
  out.level = level;
  out.requested = B;
  out.weight_law = law;
  for (int b = 0; b < B; ++b) {
    if (ok[b]) out.draws.push_back(value[b]);
    else ++out.failures;
  }
  if (out.failures * 10 > B)
    throw std::runtime_error("bootstrap: " + std::to_string(out.failures) + " of " +
                             std::to_string(B) + " draws failed");
  const double tail = (1.0 - level) / 2.0;
  out.ci_lo = sample_quantile(out.draws, tail);
  out.ci_hi = sample_quantile(out.draws, 1.0 - tail);
  return out;
}

std::string variance_method_name(VarianceMethod m) {
  switch (m) {
    case VarianceMethod::ScoreSampleVar: return "score-sample-var";
    case VarianceMethod::IsmdFormula: return "ismd-formula";
    case VarianceMethod::OsmdBound: return "osmd-bound";
    case VarianceMethod::Bootstrap: return "bootstrap";
  }
  throw std::logic_error("unknown variance method");
}

}  // namespace npiv
