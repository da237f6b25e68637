#include "npiv/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "npiv/inference.hpp"
#include "npiv/nuisance.hpp"
#include "npiv/projector.hpp"
#include "npiv/rng.hpp"
#include "npiv/score.hpp"
#include "npiv/smd.hpp"

namespace npiv {

namespace {

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
      .count();
}

// CSV cells must stay comma- and newline-free
std::string sanitize_message(std::string s) {
  for (char& c : s) {
    if (c == ',') c = ';';
    if (c == '\n' || c == '\r') c = ' ';
    if (c == '"') c = '\'';
  }
  return s;
}

Activation activation_from_name(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation: " + s);
}

AnnSettings ann_settings(const AnnConfig& a, std::uint64_t init_seed) {
  AnnSettings s;
  s.spec.hidden.assign(static_cast<std::size_t>(a.layers), a.width);
  s.spec.act = activation_from_name(a.activation);
  s.lr = a.lr;
  s.stop.min_steps = a.min_steps;
  s.stop.max_steps = a.max_steps;
  s.stop.window = a.window;
  s.stop.rel_tol = a.rel_tol;
  s.init_seed = init_seed;
  return s;
}

DesignId design_id_from(const RunConfig& cfg) {
  DesignId id;
  id.kind = design_from_name(cfg.design);
  id.noise_ratio = cfg.noise_ratio;
  id.p = cfg.p;
  id.dim_xtilde = cfg.dim_xtilde;
  id.rho = cfg.rho;
  return id;
}

bool is_structural_family(DesignKind k) {
  return k == DesignKind::Mc2 || k == DesignKind::Mc3a || k == DesignKind::Mc3b ||
         k == DesignKind::McA1;
}

BasisSpec h_spline_spec(bool regression) {
  // regression fits use the cubic family; structural fits one order lower,
  // with the instrument basis one order higher
  return BasisSpec{BasisKind::SplineKnots2, regression ? 4 : 3, true, {}, 0};
}

BasisSpec instrument_spline_spec() {
  return BasisSpec{BasisKind::SplineKnots2, 4, true, {}, 0};
}

BasisSpec score_lambda_spec(SieveKind sieve) {
  // network runs pair the scores with a lower-order spline on the instruments
  return BasisSpec{BasisKind::SplineKnots2, sieve == SieveKind::Spline ? 4 : 3, true,
                   {}, 0};
}

BasisSpec nu_spec() { return BasisSpec{BasisKind::SplineKnots2, 3, true, {}, 0}; }

// Instrument expansion for the minimum-distance criterion. Network runs on
// the structural designs use the tailored instrument list [phi1, phi2];
// everything else takes the spline expansion.
MatrixXd smd_instrument_matrix(SieveKind sieve, bool structural_family,
                               const Dataset& d) {
  if (sieve == SieveKind::Ann && structural_family && d.x.cols() >= 3) {
    std::vector<FittedBasis> parts;
    parts.push_back(
        FittedBasis::fit(BasisSpec{BasisKind::PaperPhi1, 3, false, {0, 1, 2}, 0}, d.x));
    if (d.x.cols() > 3)
      parts.push_back(
          FittedBasis::fit(BasisSpec{BasisKind::PaperPhi2, 3, false, {}, 3}, d.x));
    return CompositeBasis(std::move(parts)).eval(d.x).values;
  }
  return FittedBasis::fit(instrument_spline_spec(), d.x).eval(d.x).values;
}

SigmaSpec sigma_spec_from(const SigmaChoice& choice, const Dataset& d,
                          const DgpOracle* oracle) {
  SigmaSpec s;
  switch (choice.kind) {
    case SigmaChoice::Kind::Projection:
      s.method = SigmaSpec::Method::Projection;
      break;
    case SigmaChoice::Kind::Identity:
      s.method = SigmaSpec::Method::Identity;
      break;
    case SigmaChoice::Kind::Knn:
      s.method = SigmaSpec::Method::Knn;
      s.k = choice.k;
      break;
    case SigmaChoice::Kind::Oracle:
      if (!oracle || !oracle->sigma)
        throw std::invalid_argument("sigma \"true\" needs a simulated design");
      s.method = SigmaSpec::Method::Oracle;
      s.oracle = oracle->sigma(d.x);
      break;
  }
  return s;
}

SigmaChoice smd_sigma_choice(const RunConfig& cfg, SieveKind sieve) {
  if (!cfg.smd_sigma.empty()) return parse_sigma_choice(cfg.smd_sigma);
  SigmaChoice c;
  if (sieve == SieveKind::Spline) {
    c.kind = SigmaChoice::Kind::Projection;
  } else {
    c.kind = SigmaChoice::Kind::Knn;
    c.k = 5;
  }
  return c;
}

SigmaChoice score_sigma_choice(const RunConfig& cfg, int n) {
  if (!cfg.score_sigma.empty()) return parse_sigma_choice(cfg.score_sigma);
  SigmaChoice c;
  c.kind = SigmaChoice::Kind::Knn;
  c.k = std::min(n, n <= 2000 ? 50 : 100);
  return c;
}

// A least-squares fit of squared residuals can dip toward zero between knots;
// resolve the projection method here and keep the values above a share of the
// residual scale so downstream weights and ratios stay bounded.
SigmaSpec guard_projection_sigma(SigmaSpec spec, const Dataset& d,
                                 const Projector& p_phi, const VectorXd& resid) {
  if (spec.method != SigmaSpec::Method::Projection) return spec;
  const CondVarEstimate sig = estimate_sigma(spec, d, &p_phi, resid);
  spec.method = SigmaSpec::Method::Oracle;
  spec.oracle = sig.values.cwiseMax(0.05 * resid.squaredNorm() / resid.size());
  return spec;
}

double finite_mean(const std::vector<double>& v) {
  double s = 0.0;
  int m = 0;
  for (double x : v)
    if (std::isfinite(x)) {
      s += x;
      ++m;
    }
  return m > 0 ? s / m : kNaN;
}

// All nuisance pieces an estimator might need on one sample, built on demand
// and shared across the estimators of the run. Accessors cache successes;
// exceptions reach the per-estimator handler of the caller.
class Pipeline {
 public:
  Pipeline(const RunConfig& cfg, const Dataset& data, const DgpOracle* oracle,
           const Dataset* heldout, std::uint64_t seed)
      : cfg_(cfg),
        data_(data),
        oracle_(oracle),
        heldout_(heldout),
        seed_(seed),
        sieve_(sieve_kind_from_name(cfg.sieve)),
        structure_(structure_from_name(cfg.structure)),
        structural_family_(!cfg.design.empty() &&
                           is_structural_family(design_from_name(cfg.design))) {}

  void fit_one(const std::string& est, EstimatorResult& r);

 private:
  const Projector& p_smd() {
    if (!p_smd_) p_smd_.emplace(smd_instrument_matrix(sieve_, structural_family_, data_));
    return *p_smd_;
  }

  const Projector& p_score() {
    if (sieve_ == SieveKind::Spline) return p_smd();
    if (!p_score_)
      p_score_.emplace(
          FittedBasis::fit(score_lambda_spec(sieve_), data_.x).eval(data_.x).values);
    return *p_score_;
  }

  const DesignMatrix& nu() {
    if (!nu_) nu_ = FittedBasis::fit(nu_spec(), data_.y2).eval(data_.y2, true);
    return *nu_;
  }

  SmdProblem base_problem() {
    SmdProblem prob;
    prob.data = &data_;
    prob.p_phi = &p_smd();
    prob.sieve = sieve_;
    prob.h_spec = h_spline_spec(false);
    prob.ann = ann_settings(cfg_.ann, mix_seed(seed_, 11));
    return prob;
  }

  const FittedH& h_ismd() {
    if (!h_ismd_) h_ismd_ = fit_ismd(base_problem());
    return *h_ismd_;
  }

  SigmaSpec smd_sigma_spec(const Dataset& d) {
    return sigma_spec_from(smd_sigma_choice(cfg_, sieve_), d, oracle_);
  }

  const OsmdFit& osmd() {
    if (!osmd_) {
      const VectorXd resid = data_.y1 - h_ismd().eval(data_.y2);
      osmd_ = fit_osmd(base_problem(), h_ismd(),
                       guard_projection_sigma(smd_sigma_spec(data_), data_, p_smd(), resid));
    }
    return *osmd_;
  }

  const VectorXd& resid_osmd() {
    if (resid_osmd_.size() == 0) resid_osmd_ = data_.y1 - osmd().h.eval(data_.y2);
    return resid_osmd_;
  }

  const VectorXd& d1_osmd() {
    if (d1_osmd_.size() == 0) d1_osmd_ = osmd().h.eval_d1(data_.y2);
    return d1_osmd_;
  }

  const GammaEstimate& gamma() {
    if (!gamma_)
      gamma_ = estimate_gamma(p_smd(), d1_osmd(), d1_osmd().mean(), resid_osmd(),
                              osmd().sigma);
    return *gamma_;
  }

  const CondVarEstimate& sigma_score() {
    if (!sigma_score_)
      sigma_score_ = estimate_sigma(
          sigma_spec_from(score_sigma_choice(cfg_, data_.n()), data_, oracle_), data_,
          &p_score(), resid_osmd());
    return *sigma_score_;
  }

  const RieszEstimate& riesz_id() {
    if (!riesz_id_) riesz_id_ = riesz_identity(nu(), p_score());
    return *riesz_id_;
  }

  const RieszEstimate& riesz_opt() {
    if (!riesz_opt_) riesz_opt_ = riesz_optimal(nu(), p_score(), gamma(), sigma_score());
    return *riesz_opt_;
  }

  const CrossfitPlan& plan() {
    if (!plan_) plan_ = make_crossfit_plan(data_.n(), mix_seed(seed_, 13));
    return *plan_;
  }

  const StructuredFit& structured_id() {
    if (!structured_id_) structured_id_ = fit_structured(base_problem(), structure_);
    return *structured_id_;
  }

  int bootstrap_threads() const {
    return cfg_.replications > 1 ? 1 : resolve_threads(cfg_.threads);
  }

  FoldNuisances fit_fold(const Dataset& train, bool efficient, std::uint64_t fold_seed);
  void fit_regression(EstimatorResult& r);
  void fit_p_ismd(EstimatorResult& r);
  void fit_op_osmd(EstimatorResult& r);
  void fit_is(EstimatorResult& r);
  void fit_es(EstimatorResult& r);
  void fit_crossfit(bool efficient, EstimatorResult& r);
  void attach_ci(EstimatorResult& r) const;
  void run_bootstrap(const BootstrapRefit& refit, EstimatorResult& r);

  const RunConfig& cfg_;
  const Dataset& data_;
  const DgpOracle* oracle_;
  const Dataset* heldout_;
  std::uint64_t seed_;
  SieveKind sieve_;
  Structure structure_;
  bool structural_family_;

  std::optional<Projector> p_smd_, p_score_;
  std::optional<DesignMatrix> nu_;
  std::optional<FittedH> h_ismd_;
  std::optional<OsmdFit> osmd_;
  VectorXd resid_osmd_, d1_osmd_;
  std::optional<GammaEstimate> gamma_;
  std::optional<CondVarEstimate> sigma_score_;
  std::optional<RieszEstimate> riesz_id_, riesz_opt_;
  std::optional<CrossfitPlan> plan_;
  std::optional<StructuredFit> structured_id_;
};

void Pipeline::attach_ci(EstimatorResult& r) const {
  if (!std::isfinite(r.se)) return;
  const double z = normal_quantile(0.5 + cfg_.bootstrap_level / 2.0);
  r.ci_lo = r.theta - z * r.se;
  r.ci_hi = r.theta + z * r.se;
}

void Pipeline::run_bootstrap(const BootstrapRefit& refit, EstimatorResult& r) {
  BootstrapResult br =
      bootstrap_smd(data_.n(), cfg_.bootstrap_b, mix_seed(seed_, 12),
                    cfg_.bootstrap_level, refit, BootstrapWeightLaw::Exponential,
                    bootstrap_threads());
  const double m = finite_mean(br.draws);
  double ss = 0.0;
  for (double d : br.draws) ss += (d - m) * (d - m);
  r.se_boot = br.draws.size() > 1 ? std::sqrt(ss / (br.draws.size() - 1)) : kNaN;
  r.ci_lo = br.ci_lo;
  r.ci_hi = br.ci_hi;
}

void Pipeline::fit_regression(EstimatorResult& r) {
  if (structure_ != Structure::NP)
    throw std::invalid_argument("cef supports the nonparametric structure only");
  if (!heldout_ || heldout_->n() == 0)
    throw std::invalid_argument("cef needs a held-out sample with noiseless outcomes");
  SmdProblem prob = base_problem();
  prob.p_phi = nullptr;  // plain regression
  prob.h_spec = h_spline_spec(true);
  const FittedH h = fit_ismd(prob);
  const VectorXd fitted = h.eval(heldout_->y2);
  const VectorXd& truth = heldout_->y1;
  const double denom = (truth.array() - truth.mean()).square().sum();
  r.r2 = 1.0 - (fitted - truth).squaredNorm() / denom;
}

void Pipeline::fit_p_ismd(EstimatorResult& r) {
  if (structure_ == Structure::NP) {
    r.theta = theta_simple_plugin(h_ismd(), data_).theta;
    const IsmdVariance v = variance_ismd(riesz_id(), p_score(), data_, h_ismd());
    r.se = v.printed_primary ? v.printed.se : v.reciprocal.se;
    attach_ci(r);
  } else {
    r.theta = structured_id().theta.theta;
  }
  if (cfg_.bootstrap_b > 0) {
    auto refit = [this](const VectorXd& omega, std::uint64_t draw_seed) {
      SmdProblem pb = base_problem();
      pb.omega = omega;
      pb.ann.init_seed = draw_seed;
      if (structure_ != Structure::NP) return fit_structured(pb, structure_).theta.theta;
      if (sieve_ == SieveKind::Ann) {
        pb.warm_start = &h_ismd().net_params;
        pb.steps_scale = 0.25;
      }
      return theta_simple_plugin(fit_ismd(pb), data_).theta;
    };
    run_bootstrap(refit, r);
  }
}

void Pipeline::fit_op_osmd(EstimatorResult& r) {
  if (structure_ == Structure::NP) {
    r.theta = theta_orthogonal_plugin(osmd().h, gamma(), data_).theta;
    const OrthoResidualStats s0 =
        sigma0_sq(d1_osmd(), r.theta, gamma().values, resid_osmd());
    r.se = variance_osmd_bound(nu(), p_score(), gamma(), sigma_score(), s0).variance.se;
    attach_ci(r);
  } else {
    const VectorXd resid = data_.y1 - structured_id().h.eval(data_.y2);
    const CondVarEstimate sig = estimate_sigma(
        guard_projection_sigma(smd_sigma_spec(data_), data_, p_smd(), resid), data_,
        &p_smd(), resid);
    r.theta = fit_structured(base_problem(), structure_, &sig.values).theta.theta;
  }
  if (cfg_.bootstrap_b > 0) {
    auto refit = [this](const VectorXd& omega, std::uint64_t draw_seed) {
      SmdProblem pb = base_problem();
      pb.omega = omega;
      pb.ann.init_seed = draw_seed;
      if (structure_ != Structure::NP) {
        const StructuredFit sid = fit_structured(pb, structure_);
        const VectorXd resid = data_.y1 - sid.h.eval(data_.y2);
        const CondVarEstimate sig = estimate_sigma(
            guard_projection_sigma(smd_sigma_spec(data_), data_, p_smd(), resid),
            data_, &p_smd(), resid);
        return fit_structured(pb, structure_, &sig.values).theta.theta;
      }
      if (sieve_ == SieveKind::Ann) {
        pb.warm_start = &h_ismd().net_params;
        pb.steps_scale = 0.25;
      }
      const FittedH hid = fit_ismd(pb);
      const VectorXd resid0 = data_.y1 - hid.eval(data_.y2);
      const OsmdFit o = fit_osmd(
          pb, hid, guard_projection_sigma(smd_sigma_spec(data_), data_, p_smd(), resid0));
      const VectorXd resid = data_.y1 - o.h.eval(data_.y2);
      const VectorXd d1 = o.h.eval_d1(data_.y2);
      const GammaEstimate g = estimate_gamma(p_smd(), d1, d1.mean(), resid, o.sigma);
      return theta_orthogonal_plugin(o.h, g, data_).theta;
    };
    run_bootstrap(refit, r);
  }
}

void Pipeline::fit_is(EstimatorResult& r) {
  if (structure_ != Structure::NP)
    throw std::invalid_argument("score estimators support the nonparametric structure only");
  const ScoreFunction k = kappa_identity(riesz_id(), p_score());
  const ScoreResult s = theta_score(h_ismd(), k, data_);
  r.theta = s.theta.theta;
  r.se = se_from_scores(s.per_obs).se;
  attach_ci(r);
}

void Pipeline::fit_es(EstimatorResult& r) {
  if (structure_ != Structure::NP)
    throw std::invalid_argument("score estimators support the nonparametric structure only");
  const ScoreFunction k = kappa_efficient(gamma(), riesz_opt(), p_score(), sigma_score());
  const ScoreResult s = theta_score(osmd().h, k, data_);
  r.theta = s.theta.theta;
  r.se = se_from_scores(s.per_obs).se;
  attach_ci(r);
}

FoldNuisances Pipeline::fit_fold(const Dataset& train, bool efficient,
                                 std::uint64_t fold_seed) {
  const Projector p_phi(smd_instrument_matrix(sieve_, structural_family_, train));
  // under a spline sieve the score basis coincides with the SMD instruments
  const FittedBasis lambda = FittedBasis::fit(score_lambda_spec(sieve_), train.x);
  std::optional<Projector> p_lam_store;
  if (sieve_ != SieveKind::Spline) p_lam_store.emplace(lambda.eval(train.x).values);
  const Projector& p_lam = p_lam_store ? *p_lam_store : p_phi;

  SmdProblem prob;
  prob.data = &train;
  prob.p_phi = &p_phi;
  prob.sieve = sieve_;
  prob.h_spec = h_spline_spec(false);
  prob.ann = ann_settings(cfg_.ann, fold_seed);

  const FittedH h_id = fit_ismd(prob);
  const DesignMatrix nu_t = FittedBasis::fit(nu_spec(), train.y2).eval(train.y2, true);

  FoldNuisances out;
  if (!efficient) {
    const RieszEstimate rz = riesz_identity(nu_t, p_lam);
    const ScoreFunction k = kappa_identity(rz, p_lam);
    out.h = h_id;
    out.xi = p_lam.coeffs(k.kappa);
  } else {
    const VectorXd resid0 = train.y1 - h_id.eval(train.y2);
    const OsmdFit o = fit_osmd(
        prob, h_id, guard_projection_sigma(smd_sigma_spec(train), train, p_phi, resid0));
    const VectorXd resid = train.y1 - o.h.eval(train.y2);
    const VectorXd d1 = o.h.eval_d1(train.y2);
    const GammaEstimate g = estimate_gamma(p_phi, d1, d1.mean(), resid, o.sigma);
    const CondVarEstimate ss = estimate_sigma(
        sigma_spec_from(score_sigma_choice(cfg_, train.n()), train, oracle_), train,
        &p_lam, resid);
    const RieszEstimate rz = riesz_optimal(nu_t, p_lam, g, ss);
    const ScoreFunction k = kappa_efficient(g, rz, p_lam, ss);
    out.h = o.h;
    out.xi = p_lam.coeffs(k.kappa);
  }
  out.lambda = lambda;
  return out;
}

void Pipeline::fit_crossfit(bool efficient, EstimatorResult& r) {
  if (structure_ != Structure::NP)
    throw std::invalid_argument("score estimators support the nonparametric structure only");
  auto counter = std::make_shared<int>(0);
  FoldFitter fitter = [this, efficient, counter](const Dataset& train) {
    const int f = (*counter)++;
    return fit_fold(train, efficient, mix_seed(seed_, 20 + f));
  };
  const ScoreResult s = theta_score_crossfit(data_, plan(), fitter);
  r.theta = s.theta.theta;
  r.se = se_from_scores(s.per_obs).se;
  attach_ci(r);
}

void Pipeline::fit_one(const std::string& est, EstimatorResult& r) {
  if (est == "cef") {
    fit_regression(r);
  } else if (est == "p-ismd") {
    fit_p_ismd(r);
  } else if (est == "op-osmd") {
    fit_op_osmd(r);
  } else if (est == "is") {
    fit_is(r);
  } else if (est == "es") {
    fit_es(r);
  } else if (est == "is-x") {
    fit_crossfit(false, r);
  } else if (est == "es-x") {
    fit_crossfit(true, r);
  } else {
    throw std::invalid_argument("unknown estimator: " + est);
  }
}

const std::vector<std::string>& result_header() {
  static const std::vector<std::string> h = {
      "design", "n",     "rep",   "seed",  "estimator",  "sieve", "structure",
      "theta",  "se",    "se_boot", "ci_lo", "ci_hi",    "theta_true", "r2",
      "ok",     "message", "runtime_ms"};
  return h;
}

std::vector<std::string> result_row(const RunConfig& cfg, int n, const RepRecord& rep,
                                    const EstimatorResult& e) {
  return {cfg.design.empty() ? "data" : cfg.design,
          std::to_string(n),
          std::to_string(rep.rep),
          std::to_string(rep.seed),
          e.estimator,
          cfg.sieve,
          cfg.structure,
          format_double(e.theta),
          format_double(e.se),
          format_double(e.se_boot),
          format_double(e.ci_lo),
          format_double(e.ci_hi),
          format_double(rep.theta_true),
          format_double(e.r2),
          e.ok ? "1" : "0",
          sanitize_message(e.message),
          format_double(e.runtime_ms)};
}

double parse_cell(const std::string& s) {
  if (s.empty()) return kNaN;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') return kNaN;
  return v;
}

void write_sample_csv(const std::string& dir, int rep, const Dataset& d) {
  CsvTable t;
  t.comments = {"npiv-sample v1"};
  t.header = {"y1"};
  for (int j = 0; j < d.y2.cols(); ++j) t.header.push_back("y2_" + std::to_string(j + 1));
  for (int j = 0; j < d.x.cols(); ++j) t.header.push_back("x_" + std::to_string(j + 1));
  t.rows.reserve(static_cast<std::size_t>(d.n()));
  for (int i = 0; i < d.n(); ++i) {
    std::vector<std::string> row;
    row.push_back(format_double(d.y1(i)));
    for (int j = 0; j < d.y2.cols(); ++j) row.push_back(format_double(d.y2(i, j)));
    for (int j = 0; j < d.x.cols(); ++j) row.push_back(format_double(d.x(i, j)));
    t.rows.push_back(std::move(row));
  }
  write_csv(dir + "/sample_" + std::to_string(rep) + ".csv", t);
}

RepRecord run_one_rep(const RunConfig& cfg, const DesignId& id, int rep) {
  RepRecord rec;
  rec.rep = rep;
  rec.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(rep));
  rec.theta_true = kNaN;
  try {
    const SimSample s = generate(id, cfg.n, rec.seed);
    rec.theta_true = s.theta_true;
    if (cfg.dump_samples) write_sample_csv(cfg.out_dir, rep, s.data);
    rec.results = run_estimators(cfg, s.data, &s.oracle,
                                 s.heldout.n() > 0 ? &s.heldout : nullptr, rec.seed);
  } catch (const std::exception& e) {
    rec.results.clear();
    for (const auto& est : cfg.estimators) {
      EstimatorResult r;
      r.estimator = est;
      r.theta = r.se = r.se_boot = r.ci_lo = r.ci_hi = r.r2 = kNaN;
      r.ok = false;
      r.message = sanitize_message(e.what());
      rec.results.push_back(std::move(r));
    }
  }
  return rec;
}

json cell_to_json(const McCell& c) {
  json j;
  j["estimator"] = c.estimator;
  j["n_reps"] = c.n_reps;
  j["failures"] = c.failures;
  j["mean"] = c.mean;
  j["sd"] = c.sd;
  j["bias"] = c.bias;
  j["rmse"] = c.rmse;
  j["mean_se"] = c.mean_se;
  j["coverage"] = c.coverage;
  j["ci_count"] = c.ci_count;
  j["mean_r2"] = c.mean_r2;
  return j;
}

std::string fmt_cell(double v, int width) {
  char buf[64];
  if (std::isfinite(v)) {
    std::snprintf(buf, sizeof(buf), "%*.4f", width, v);
  } else {
    std::snprintf(buf, sizeof(buf), "%*s", width, "-");
  }
  return buf;
}

std::string render_summary_table(const McSummary& s) {
  std::ostringstream os;
  os << "design=" << s.design << " n=" << s.n << " replications=" << s.replications
     << " target=" << (std::isfinite(s.theta_true) ? format_double(s.theta_true) : "-")
     << "\n\n";
  char head[256];
  std::snprintf(head, sizeof(head), "%-10s %5s %5s %9s %9s %9s %9s %9s %9s %9s\n",
                "estimator", "reps", "fail", "mean", "sd", "bias", "rmse", "se(avg)",
                "cover", "r2(avg)");
  os << head;
  os << std::string(92, '-') << "\n";
  for (const auto& c : s.cells) {
    char line[256];
    std::snprintf(line, sizeof(line), "%-10s %5d %5d", c.estimator.c_str(), c.n_reps,
                  c.failures);
    os << line << fmt_cell(c.mean, 10) << fmt_cell(c.sd, 10) << fmt_cell(c.bias, 10)
       << fmt_cell(c.rmse, 10) << fmt_cell(c.mean_se, 10) << fmt_cell(c.coverage, 10)
       << fmt_cell(c.mean_r2, 10) << "\n";
  }
  return os.str();
}

std::string render_estimates_table(const CsvTable& t) {
  std::ostringstream os;
  const int c_est = t.col("estimator");
  const int c_theta = t.col("theta");
  const int c_se = t.col("se");
  const int c_lo = t.col("ci_lo");
  const int c_hi = t.col("ci_hi");
  const int c_r2 = t.col("r2");
  const int c_ok = t.col("ok");
  const int c_msg = t.col("message");
  char head[256];
  std::snprintf(head, sizeof(head), "%-10s %9s %9s %9s %9s %9s  %s\n", "estimator",
                "theta", "se", "ci_lo", "ci_hi", "r2", "status");
  os << head << std::string(78, '-') << "\n";
  for (const auto& row : t.rows) {
    char line[64];
    std::snprintf(line, sizeof(line), "%-10s", row[c_est].c_str());
    os << line << fmt_cell(parse_cell(row[c_theta]), 10)
       << fmt_cell(parse_cell(row[c_se]), 10) << fmt_cell(parse_cell(row[c_lo]), 10)
       << fmt_cell(parse_cell(row[c_hi]), 10) << fmt_cell(parse_cell(row[c_r2]), 10)
       << "  " << (row[c_ok] == "1" ? "ok" : ("failed: " + row[c_msg])) << "\n";
  }
  return os.str();
}

}  // namespace

int resolve_threads(int requested) {
  if (const char* env = std::getenv("NPIV_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1 && v <= 4096) return static_cast<int>(v);
  }
  return std::max(1, requested);
}

std::vector<EstimatorResult> run_estimators(const RunConfig& cfg, const Dataset& data,
                                            const DgpOracle* oracle,
                                            const Dataset* heldout, std::uint64_t seed) {
  Pipeline pipe(cfg, data, oracle, heldout, seed);
  std::vector<EstimatorResult> out;
  out.reserve(cfg.estimators.size());
  for (const auto& est : cfg.estimators) {
    EstimatorResult r;
    r.estimator = est;
    r.theta = r.se = r.se_boot = r.ci_lo = r.ci_hi = r.r2 = kNaN;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      pipe.fit_one(est, r);
      r.ok = true;
    } catch (const std::exception& e) {
      r.ok = false;
      r.message = sanitize_message(e.what());
      r.theta = r.se = r.se_boot = r.ci_lo = r.ci_hi = r.r2 = kNaN;
    }
    r.runtime_ms = elapsed_ms(t0);
    out.push_back(std::move(r));
  }
  return out;
}

McSummary summarize(const std::string& design, int n, double theta_true,
                    const std::vector<RepRecord>& reps) {
  McSummary s;
  s.design = design;
  s.n = n;
  s.replications = static_cast<int>(reps.size());
  s.theta_true = theta_true;

  std::vector<std::string> order;
  for (const auto& rep : reps)
    for (const auto& e : rep.results)
      if (std::find(order.begin(), order.end(), e.estimator) == order.end())
        order.push_back(e.estimator);

  for (const auto& name : order) {
    McCell c;
    c.estimator = name;
    std::vector<double> thetas, ses, r2s;
    int covered = 0;
    for (const auto& rep : reps) {
      for (const auto& e : rep.results) {
        if (e.estimator != name) continue;
        if (!e.ok) {
          ++c.failures;
          continue;
        }
        if (std::isfinite(e.theta)) thetas.push_back(e.theta);
        if (std::isfinite(e.se)) ses.push_back(e.se);
        if (std::isfinite(e.r2)) r2s.push_back(e.r2);
        if (std::isfinite(e.ci_lo) && std::isfinite(e.ci_hi) &&
            std::isfinite(rep.theta_true)) {
          ++c.ci_count;
          if (rep.theta_true >= e.ci_lo && rep.theta_true <= e.ci_hi) ++covered;
        }
      }
    }
    const int m = static_cast<int>(thetas.size());
    c.n_reps = m;
    c.mean = finite_mean(thetas);
    if (m >= 2) {
      double ss = 0.0;
      for (double t : thetas) ss += (t - c.mean) * (t - c.mean);
      c.sd = std::sqrt(ss / (m - 1));
    } else {
      c.sd = kNaN;
    }
    if (m >= 1 && std::isfinite(theta_true)) {
      c.bias = c.mean - theta_true;
      double ss = 0.0;
      for (double t : thetas) ss += (t - theta_true) * (t - theta_true);
      c.rmse = std::sqrt(ss / m);
    } else {
      c.bias = c.rmse = kNaN;
    }
    c.mean_se = finite_mean(ses);
    c.coverage = c.ci_count > 0 ? static_cast<double>(covered) / c.ci_count : kNaN;
    c.mean_r2 = finite_mean(r2s);
    s.cells.push_back(std::move(c));
  }
  return s;
}

McSummary run_simulation(const RunConfig& cfg) {
  validate_config(cfg);
  if (cfg.design.empty())
    throw std::invalid_argument("simulation requires a design name");
  const DesignId id = design_id_from(cfg);
  const int R = cfg.replications;
  const int T = std::min(resolve_threads(cfg.threads), R);

  fs::create_directories(cfg.out_dir);

  std::vector<RepRecord> reps(static_cast<std::size_t>(R));
  std::atomic<int> next{0};
  auto work = [&]() {
    for (int r = next.fetch_add(1); r < R; r = next.fetch_add(1))
      reps[static_cast<std::size_t>(r)] = run_one_rep(cfg, id, r);
  };
  if (T <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  CsvTable table;
  table.comments = {"npiv-results v1"};
  table.header = result_header();
  for (const auto& rep : reps)
    for (const auto& e : rep.results) table.rows.push_back(result_row(cfg, cfg.n, rep, e));
  write_csv(cfg.out_dir + "/results.csv", table);

  double theta_true = kNaN;
  for (const auto& rep : reps)
    if (std::isfinite(rep.theta_true)) {
      theta_true = rep.theta_true;
      break;
    }
  McSummary s = summarize(cfg.design, cfg.n, theta_true, reps);

  json j;
  j["design"] = s.design;
  j["n"] = s.n;
  j["replications"] = s.replications;
  j["theta_true"] = s.theta_true;
  j["config"] = json::parse(config_to_json(cfg));
  j["cells"] = json::array();
  for (const auto& c : s.cells) j["cells"].push_back(cell_to_json(c));
  std::ofstream out(cfg.out_dir + "/summary.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + cfg.out_dir + "/summary.json");
  out << j.dump(2) << "\n";

  return s;
}

Dataset dataset_from_csv(const CsvTable& table, const ColumnRoles& roles,
                         int* dropped_rows) {
  std::vector<int> cols;
  auto need = [&](const std::string& name) {
    const int c = table.col(name);
    if (c < 0) throw std::invalid_argument("column \"" + name + "\" not found in CSV");
    cols.push_back(c);
  };
  need(roles.outcome);
  for (const auto& name : roles.structural) need(name);
  for (const auto& name : roles.instruments) need(name);

  const int d2 = static_cast<int>(roles.structural.size());
  const int dx = static_cast<int>(roles.instruments.size());
  std::vector<std::vector<double>> kept;
  int dropped = 0;
  for (const auto& row : table.rows) {
    std::vector<double> vals(cols.size());
    bool good = true;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const auto c = static_cast<std::size_t>(cols[j]);
      const double v = c < row.size() ? parse_cell(row[c]) : kNaN;
      if (!std::isfinite(v)) {
        good = false;
        break;
      }
      vals[j] = v;
    }
    if (good)
      kept.push_back(std::move(vals));
    else
      ++dropped;
  }
  if (dropped_rows) *dropped_rows = dropped;
  if (kept.empty()) throw std::invalid_argument("CSV has no usable rows");

  const int n = static_cast<int>(kept.size());
  Dataset d;
  d.y1.resize(n);
  d.y2.resize(n, d2);
  d.x.resize(n, dx);
  for (int i = 0; i < n; ++i) {
    d.y1(i) = kept[static_cast<std::size_t>(i)][0];
    for (int j = 0; j < d2; ++j) d.y2(i, j) = kept[static_cast<std::size_t>(i)][1 + j];
    for (int j = 0; j < dx; ++j)
      d.x(i, j) = kept[static_cast<std::size_t>(i)][static_cast<std::size_t>(1 + d2 + j)];
  }
  return d;
}

std::vector<EstimatorResult> run_estimate(const RunConfig& cfg,
                                          const std::string& data_csv_path,
                                          const ColumnRoles& roles) {
  validate_config(cfg);
  if (roles.outcome.empty() || roles.structural.empty() || roles.instruments.empty())
    throw std::invalid_argument("roles must name an outcome, structural and instrument columns");
  const CsvTable table = read_csv(data_csv_path);
  int dropped = 0;
  const Dataset data = dataset_from_csv(table, roles, &dropped);
  const auto results = run_estimators(cfg, data, nullptr, nullptr, cfg.seed);

  fs::create_directories(cfg.out_dir);
  CsvTable out;
  out.comments = {"npiv-estimates v1"};
  if (dropped > 0)
    out.comments.push_back("dropped_rows " + std::to_string(dropped));
  out.header = result_header();
  RepRecord rec;
  rec.rep = 0;
  rec.seed = cfg.seed;
  rec.theta_true = kNaN;
  for (const auto& e : results) out.rows.push_back(result_row(cfg, data.n(), rec, e));
  write_csv(cfg.out_dir + "/estimates.csv", out);
  return results;
}

std::vector<RepRecord> rep_records_from_csv(const CsvTable& table) {
  const int c_rep = table.col("rep");
  const int c_seed = table.col("seed");
  const int c_est = table.col("estimator");
  const int c_theta = table.col("theta");
  const int c_se = table.col("se");
  const int c_seb = table.col("se_boot");
  const int c_lo = table.col("ci_lo");
  const int c_hi = table.col("ci_hi");
  const int c_true = table.col("theta_true");
  const int c_r2 = table.col("r2");
  const int c_ok = table.col("ok");
  const int c_msg = table.col("message");
  const int c_ms = table.col("runtime_ms");
  for (int c : {c_rep, c_seed, c_est, c_theta, c_se, c_seb, c_lo, c_hi, c_true, c_r2,
                c_ok, c_msg, c_ms})
    if (c < 0) throw std::invalid_argument("results CSV is missing expected columns");

  std::vector<RepRecord> reps;
  for (const auto& row : table.rows) {
    const int rep = static_cast<int>(std::strtol(row[c_rep].c_str(), nullptr, 10));
    RepRecord* rec = nullptr;
    for (auto& existing : reps)
      if (existing.rep == rep) rec = &existing;
    if (!rec) {
      reps.emplace_back();
      rec = &reps.back();
      rec->rep = rep;
      rec->seed = std::strtoull(row[c_seed].c_str(), nullptr, 10);
      rec->theta_true = parse_cell(row[c_true]);
    }
    EstimatorResult e;
    e.estimator = row[c_est];
    e.theta = parse_cell(row[c_theta]);
    e.se = parse_cell(row[c_se]);
    e.se_boot = parse_cell(row[c_seb]);
    e.ci_lo = parse_cell(row[c_lo]);
    e.ci_hi = parse_cell(row[c_hi]);
    e.r2 = parse_cell(row[c_r2]);
    e.ok = row[c_ok] == "1";
    e.message = row[c_msg];
    e.runtime_ms = parse_cell(row[c_ms]);
    rec->results.push_back(std::move(e));
  }
  return reps;
}

std::string report(const std::string& dir) {
  const std::string results = dir + "/results.csv";
  const std::string estimates = dir + "/estimates.csv";
  if (fs::exists(results)) {
    const CsvTable t = read_csv(results);
    if (t.rows.empty()) throw std::runtime_error("no runs found in " + dir);
    const int c_design = t.col("design");
    const int c_n = t.col("n");
    const int c_true = t.col("theta_true");
    if (c_design < 0 || c_n < 0 || c_true < 0)
      throw std::runtime_error("results CSV is missing expected columns");
    const auto reps = rep_records_from_csv(t);
    double theta_true = kNaN;
    for (const auto& row : t.rows) {
      const double v = parse_cell(row[c_true]);
      if (std::isfinite(v)) {
        theta_true = v;
        break;
      }
    }
    const McSummary s =
        summarize(t.rows[0][c_design],
                  static_cast<int>(std::strtol(t.rows[0][c_n].c_str(), nullptr, 10)),
                  theta_true, reps);
    return render_summary_table(s);
  }
  if (fs::exists(estimates)) {
    const CsvTable t = read_csv(estimates);
    if (t.rows.empty()) throw std::runtime_error("no runs found in " + dir);
    return render_estimates_table(t);
  }
  throw std::runtime_error("no runs found in " + dir);
}

}  // namespace npiv
