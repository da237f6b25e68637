#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "npiv/basis.hpp"
#include "npiv/dataset.hpp"
#include "npiv/net.hpp"
#include "npiv/nuisance.hpp"
#include "npiv/projector.hpp"

namespace npiv {

enum class SieveKind { Spline, Ann };
enum class Structure { NP, PartiallyLinear, PartiallyAdditive };

struct AnnSettings {
  NetSpec spec;  // input_dim is overridden from the data at fit time
  double lr = 0.01;
  StoppingRule stop;
  std::uint64_t init_seed = 1;
};

// One minimum-distance problem: data, a prebuilt instrument projector, the
// h-sieve, and optional multiplier weights omega (empty = unweighted fit).
// A null projector means plain (weighted) regression: the conditional moment
// is evaluated pointwise instead of being projected on instruments.
// The referenced data and projector must outlive the problem.
struct SmdProblem {
  const Dataset* data = nullptr;
  const Projector* p_phi = nullptr;
  SieveKind sieve = SieveKind::Spline;
  BasisSpec h_spec;  // spline sieve; knots resolve on data->y2
  AnnSettings ann;
  Eigen::VectorXd omega;
  const NetParams* warm_start = nullptr;  // ANN restarts (bootstrap draws)
  double steps_scale = 1.0;
};

// A fitted h with evaluators usable on held-out data (other fold, bootstrap
// draws, out-of-sample grids). Structured fits install closure evaluators.
struct FittedH {
  SieveKind kind = SieveKind::Spline;
  Structure structure = Structure::NP;
  FittedBasis basis;  // spline sieve, knots frozen
  Eigen::VectorXd coef;
  NetSpec net_spec;
  NetParams net_params;
  std::function<Eigen::VectorXd(const Eigen::MatrixXd&)> eval_fn;
  std::function<Eigen::VectorXd(const Eigen::MatrixXd&)> d1_fn;
  double criterion = 0.0;
  std::vector<double> trace;
  long steps = 0;

  Eigen::VectorXd eval(const Eigen::MatrixXd& y2) const;
  Eigen::VectorXd eval_d1(const Eigen::MatrixXd& y2) const;
};

struct ThetaEstimate {
  double theta = 0.0;
  std::string kind;
};

// criterion (1/n)||P(omega*(y1-h))||^2_W for diagonal W (empty = identity),
// with the chain-rule gradient w.r.t. the h values written to dloss_dh;
// p_phi = nullptr drops the projection (regression loss)
double smd_loss(const Projector* p_phi, const Eigen::VectorXd& wdiag,
                const Eigen::VectorXd& omega, const Eigen::VectorXd& y1,
                const Eigen::VectorXd& h, Eigen::VectorXd* dloss_dh = nullptr);
inline double smd_loss(const Projector& p_phi, const Eigen::VectorXd& wdiag,
                       const Eigen::VectorXd& omega, const Eigen::VectorXd& y1,
                       const Eigen::VectorXd& h, Eigen::VectorXd* dloss_dh = nullptr) {
  return smd_loss(&p_phi, wdiag, omega, y1, h, dloss_dh);
}

// identity-weighted fit: closed form for splines, Adam training for nets
FittedH fit_ismd(const SmdProblem& prob);

// how the conditional variance entering the optimal weight is obtained
struct SigmaSpec {
  enum class Method { Projection, Knn, Oracle, Identity };
  Method method = Method::Projection;
  int k = 5;
  Eigen::VectorXd oracle;  // Method::Oracle values, length n
};

CondVarEstimate estimate_sigma(const SigmaSpec& spec, const Dataset& data,
                               const Projector* p_phi, const Eigen::VectorXd& resid);

struct OsmdFit {
  FittedH h;
  CondVarEstimate sigma;
};

// optimally weighted fit: Sigma from the preliminary fit's residuals, then
// the same minimization with W = diag(Sigma)^{-1}
OsmdFit fit_osmd(const SmdProblem& prob, const FittedH& preliminary,
                 const SigmaSpec& sigma_spec);

using WeightFn = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;  // a(y2)

ThetaEstimate theta_simple_plugin(const FittedH& h, const Dataset& data,
                                  const WeightFn& a_fn = nullptr);
ThetaEstimate theta_orthogonal_plugin(const FittedH& h, const GammaEstimate& gamma,
                                      const Dataset& data, const WeightFn& a_fn = nullptr);

// Constrained families h = theta*y21 + rest, with rest additive (PA) or
// unrestricted in the remaining coordinates (PL). Component family follows
// prob.sieve; the PA block in any extra coordinates beyond the third is
// always a net. theta is read off as the linear coefficient.
struct StructuredFit {
  FittedH h;
  ThetaEstimate theta;
};

StructuredFit fit_structured(const SmdProblem& prob, Structure structure,
                             const Eigen::VectorXd* sigma_values = nullptr);

std::string sieve_kind_name(SieveKind k);
SieveKind sieve_kind_from_name(const std::string& name);
std::string structure_name(Structure s);
Structure structure_from_name(const std::string& name);

}  // namespace npiv
