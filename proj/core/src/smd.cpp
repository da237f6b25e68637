#include "npiv/smd.hpp"

#include <cmath>
#include <stdexcept>

#include "npiv/rng.hpp"

namespace npiv {

namespace {

void validate_problem(const SmdProblem& prob) {
  if (!prob.data) throw std::invalid_argument("smd: problem missing data");
  if (prob.p_phi && prob.data->n() != prob.p_phi->n())
    throw std::invalid_argument("smd: projector rows do not match the sample");
  if (prob.omega.size() && prob.omega.size() != prob.data->n())
    throw std::invalid_argument("smd: omega length mismatch");
  if (prob.steps_scale <= 0) throw std::invalid_argument("smd: steps_scale must be positive");
}

StoppingRule scaled_rule(const AnnSettings& ann, double scale) {
  StoppingRule rule = ann.stop;
  if (scale != 1.0) {
    rule.min_steps = std::max<long>(1, std::lround(rule.min_steps * scale));
    rule.max_steps = std::max<long>(rule.min_steps, std::lround(rule.max_steps * scale));
  }
  return rule;
}

// closed-form minimizer over explicit design columns:
//   min_g ||P(omega*(y1 - X g))||^2_W
struct LinearSolve {
  Eigen::VectorXd coef;
  double criterion = 0.0;
};

LinearSolve solve_linear(const Projector* p, const Eigen::MatrixXd& x,
                         const Eigen::VectorXd& y1, const Eigen::VectorXd& omega,
                         const Eigen::VectorXd& wdiag) {
  const double n = static_cast<double>(y1.size());
  Eigen::MatrixXd xw = x;
  Eigen::VectorXd c = y1;
  if (omega.size()) {
    xw = omega.asDiagonal() * x;
    c = omega.cwiseProduct(y1);
  }
  const Eigen::MatrixXd b = p ? p->apply(xw) : xw;
  const Eigen::VectorXd pc = p ? p->apply(c) : c;
  LinearSolve out;
  if (wdiag.size()) {
    Eigen::MatrixXd a = b.transpose() * wdiag.asDiagonal() * b;
    out.coef = psd_pinv_solve(a, b.transpose() * wdiag.cwiseProduct(pc));
  } else {
    Eigen::MatrixXd a = b.transpose() * b;
    out.coef = psd_pinv_solve(a, b.transpose() * pc);
  }
  Eigen::VectorXd m = pc - b * out.coef;
  out.criterion = (wdiag.size() ? m.dot(wdiag.cwiseProduct(m)) : m.squaredNorm()) / n;
  return out;
}

FittedH fit_spline(const SmdProblem& prob, const Eigen::VectorXd& wdiag) {
  const Dataset& data = *prob.data;
  FittedH out;
  out.kind = SieveKind::Spline;
  out.basis = FittedBasis::fit(prob.h_spec, data.y2);
  DesignMatrix nu = out.basis.eval(data.y2, false);
  LinearSolve sol = solve_linear(prob.p_phi, nu.values, data.y1, prob.omega, wdiag);
  out.coef = std::move(sol.coef);
  out.criterion = sol.criterion;
  return out;
}

FittedH fit_ann(const SmdProblem& prob, const Eigen::VectorXd& wdiag,
                const NetParams* warm) {
  const Dataset& data = *prob.data;
  NetSpec spec = prob.ann.spec;
  spec.input_dim = static_cast<int>(data.y2.cols());

  const NetParams* start = warm ? warm : prob.warm_start;
  Eigen::VectorXd init =
      start ? start->flatten() : NetParams::glorot(spec, prob.ann.init_seed).flatten();

  Objective obj = [&](const Eigen::VectorXd& flat, Eigen::VectorXd& grad) {
    NetParams p = NetParams::unflatten(spec, flat);
    ForwardCache cache;
    Eigen::VectorXd h = net_forward(spec, p, data.y2, &cache);
    Eigen::VectorXd upstream;
    const double loss = smd_loss(prob.p_phi,wdiag, prob.omega, data.y1, h, &upstream);
    grad = net_grad_params(spec, p, data.y2, upstream, cache).flatten();
    return loss;
  };

  AdamState adam;
  adam.lr = prob.ann.lr;
  TrainResult tr;
  try {
    tr = train(obj, std::move(init), adam, scaled_rule(prob.ann, prob.steps_scale));
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(std::string("smd ann fit diverged: ") + e.what());
  }

  FittedH out;
  out.kind = SieveKind::Ann;
  out.net_spec = spec;
  out.net_params = NetParams::unflatten(spec, tr.params);
  out.trace = std::move(tr.trace);
  out.steps = tr.steps;
  out.criterion = smd_loss(prob.p_phi,wdiag, prob.omega, data.y1,
                           net_forward(spec, out.net_params, data.y2), nullptr);
  return out;
}

}  // namespace

Eigen::VectorXd FittedH::eval(const Eigen::MatrixXd& y2) const {
  if (eval_fn) return eval_fn(y2);
  if (kind == SieveKind::Spline) return basis.eval(y2, false).values * coef;
  return net_forward(net_spec, net_params, y2);
}

Eigen::VectorXd FittedH::eval_d1(const Eigen::MatrixXd& y2) const {
  if (d1_fn) return d1_fn(y2);
  if (kind == SieveKind::Spline) return basis.eval(y2, true).d1 * coef;
  return net_grad_input1(net_spec, net_params, y2);
}

double smd_loss(const Projector* p_phi, const Eigen::VectorXd& wdiag,
                const Eigen::VectorXd& omega, const Eigen::VectorXd& y1,
                const Eigen::VectorXd& h, Eigen::VectorXd* dloss_dh) {
  if (!h.allFinite()) throw std::runtime_error("smd: non-finite h values");
  const double n = static_cast<double>(y1.size());
  Eigen::VectorXd r = y1 - h;
  if (omega.size()) r = omega.cwiseProduct(r).eval();
  const Eigen::VectorXd m = p_phi ? p_phi->apply(r) : r;
  const Eigen::VectorXd wm = wdiag.size() ? wdiag.cwiseProduct(m).eval() : m;
  const double loss = m.dot(wm) / n;
  if (dloss_dh) {
    Eigen::VectorXd g = (p_phi ? p_phi->apply(wm) : wm) * (2.0 / n);
    if (omega.size()) g = omega.cwiseProduct(g).eval();
    *dloss_dh = -g;
  }
  return loss;
}

FittedH fit_ismd(const SmdProblem& prob) {
  validate_problem(prob);
  if (prob.sieve == SieveKind::Spline) return fit_spline(prob, Eigen::VectorXd());
  return fit_ann(prob, Eigen::VectorXd(), nullptr);
}

CondVarEstimate estimate_sigma(const SigmaSpec& spec, const Dataset& data,
                               const Projector* p_phi, const Eigen::VectorXd& resid) {
  switch (spec.method) {
    case SigmaSpec::Method::Projection:
      if (!p_phi) throw std::invalid_argument("sigma projection: no instrument projector");
      return estimate_sigma_projection(*p_phi, resid.cwiseAbs2());
    case SigmaSpec::Method::Knn:
      return estimate_sigma_knn(data.x, resid.cwiseAbs2(), spec.k);
    case SigmaSpec::Method::Oracle: {
      if (spec.oracle.size() != data.n())
        throw std::invalid_argument("sigma oracle: length mismatch");
      CondVarEstimate out;
      out.values = spec.oracle.cwiseMax(1e-6);
      out.method = "oracle";
      return out;
    }
    case SigmaSpec::Method::Identity: {
      CondVarEstimate out;
      out.values = Eigen::VectorXd::Ones(data.n());
      out.method = "identity";
      return out;
    }
  }
  throw std::logic_error("unreachable sigma method");
}

OsmdFit fit_osmd(const SmdProblem& prob, const FittedH& preliminary,
                 const SigmaSpec& sigma_spec) {
  validate_problem(prob);
  const Dataset& data = *prob.data;
  const Eigen::VectorXd resid = data.y1 - preliminary.eval(data.y2);
  OsmdFit out;
  out.sigma = estimate_sigma(sigma_spec, data, prob.p_phi, resid);
  const Eigen::VectorXd wdiag = out.sigma.values.cwiseInverse();
  if (prob.sieve == SieveKind::Spline) {
    out.h = fit_spline(prob, wdiag);
  } else {
    const NetParams* warm =
        preliminary.kind == SieveKind::Ann ? &preliminary.net_params : nullptr;
    out.h = fit_ann(prob, wdiag, warm);
  }
  return out;
}

ThetaEstimate theta_simple_plugin(const FittedH& h, const Dataset& data,
                                  const WeightFn& a_fn) {
  Eigen::VectorXd d1 = h.eval_d1(data.y2);
  if (a_fn) d1 = d1.cwiseProduct(a_fn(data.y2)).eval();
  return {d1.mean(), "simple-plugin"};
}

ThetaEstimate theta_orthogonal_plugin(const FittedH& h, const GammaEstimate& gamma,
                                      const Dataset& data, const WeightFn& a_fn) {
  if (gamma.values.size() != data.n())
    throw std::invalid_argument("orthogonal plugin: gamma length mismatch");
  Eigen::VectorXd d1 = h.eval_d1(data.y2);
  if (a_fn) d1 = d1.cwiseProduct(a_fn(data.y2)).eval();
  const Eigen::VectorXd resid = data.y1 - h.eval(data.y2);
  return {(d1 - gamma.values.cwiseProduct(resid)).mean(), "orthogonal-plugin"};
}

namespace {

// Parameter packing for structured fits trained with Adam: a leading linear
// coefficient, optional spline coefficient blocks, and component nets.
struct CompNet {
  NetSpec spec;
  int at = 0;
  int len = 0;
  int col0 = 0;   // first y2 column this net reads
  int ncols = 0;  // how many columns
};

struct StructuredModel {
  int theta_at = 0;
  std::vector<FittedBasis> sbases;  // evaluated on full y2 via column selection
  std::vector<int> s_at;
  std::vector<int> s_len;
  std::vector<int> s_drop;  // leading columns dropped (duplicate intercepts)
  std::vector<CompNet> nets;
  int total = 1;

  Eigen::MatrixXd sdesign(std::size_t j, const Eigen::MatrixXd& y2) const {
    DesignMatrix dm = sbases[j].eval(y2, false);
    return dm.values.rightCols(dm.values.cols() - s_drop[j]);
  }

  Eigen::VectorXd h_of(const Eigen::VectorXd& flat, const Eigen::MatrixXd& y2,
                       std::vector<ForwardCache>* caches) const {
    Eigen::VectorXd h = flat[theta_at] * y2.col(0);
    for (std::size_t j = 0; j < sbases.size(); ++j)
      h += sdesign(j, y2) * flat.segment(s_at[j], s_len[j]);
    for (std::size_t j = 0; j < nets.size(); ++j) {
      const CompNet& cn = nets[j];
      NetParams p = NetParams::unflatten(cn.spec, flat.segment(cn.at, cn.len));
      ForwardCache* cache = caches ? &(*caches)[j] : nullptr;
      h += net_forward(cn.spec, p, y2.middleCols(cn.col0, cn.ncols), cache);
    }
    return h;
  }
};

StructuredModel build_structured_model(const SmdProblem& prob, Structure structure) {
  const Eigen::MatrixXd& y2 = prob.data->y2;
  const int d = static_cast<int>(y2.cols());
  StructuredModel model;
  int at = 1;

  auto add_spline = [&](std::vector<int> cols, int drop) {
    BasisSpec spec = prob.h_spec;
    spec.columns = std::move(cols);
    spec.interactions = prob.h_spec.interactions && spec.columns.size() > 1;
    FittedBasis fb = FittedBasis::fit(spec, y2);
    model.sbases.push_back(fb);
    model.s_at.push_back(at);
    model.s_len.push_back(fb.cols() - drop);
    model.s_drop.push_back(drop);
    at += fb.cols() - drop;
  };
  auto add_net = [&](int col0, int ncols, std::uint64_t comp) {
    CompNet cn;
    cn.spec = prob.ann.spec;
    cn.spec.input_dim = ncols;
    cn.col0 = col0;
    cn.ncols = ncols;
    cn.at = at;
    cn.len = NetParams::zeros(cn.spec).count();
    at += cn.len;
    model.nets.push_back(cn);
    (void)comp;
  };

  if (structure == Structure::PartiallyLinear) {
    if (d < 2) throw std::invalid_argument("partially linear: need at least 2 structural columns");
    if (prob.sieve == SieveKind::Spline) {
      std::vector<int> rest(d - 1);
      for (int c = 1; c < d; ++c) rest[c - 1] = c;
      add_spline(std::move(rest), 0);
    } else {
      add_net(1, d - 1, 0);
    }
  } else if (structure == Structure::PartiallyAdditive) {
    if (d < 3) throw std::invalid_argument("partially additive: need at least 3 structural columns");
    if (prob.sieve == SieveKind::Spline) {
      add_spline({1}, 0);
      add_spline({2}, 1);  // drop duplicate intercept
    } else {
      add_net(1, 1, 0);
      add_net(2, 1, 1);
    }
    if (d > 3) add_net(3, d - 3, 2);
  } else {
    throw std::invalid_argument("fit_structured: structure must be PL or PA");
  }
  model.total = at;
  return model;
}

}  // namespace

StructuredFit fit_structured(const SmdProblem& prob, Structure structure,
                             const Eigen::VectorXd* sigma_values) {
  validate_problem(prob);
  const Dataset& data = *prob.data;
  Eigen::VectorXd wdiag;
  if (sigma_values) {
    if (sigma_values->size() != data.n())
      throw std::invalid_argument("fit_structured: sigma length mismatch");
    wdiag = sigma_values->cwiseInverse();
  }

  StructuredModel model = build_structured_model(prob, structure);

  StructuredFit out;
  out.h.kind = prob.sieve;
  out.h.structure = structure;

  Eigen::VectorXd flat;
  if (model.nets.empty()) {
    // fully linear in parameters: closed form
    Eigen::MatrixXd x(data.n(), model.total);
    x.col(0) = data.y2.col(0);
    for (std::size_t j = 0; j < model.sbases.size(); ++j)
      x.middleCols(model.s_at[j], model.s_len[j]) = model.sdesign(j, data.y2);
    LinearSolve sol = solve_linear(prob.p_phi, x, data.y1, prob.omega, wdiag);
    flat = std::move(sol.coef);
    out.h.criterion = sol.criterion;
  } else {
    Eigen::VectorXd init = Eigen::VectorXd::Zero(model.total);
    for (std::size_t j = 0; j < model.nets.size(); ++j) {
      const CompNet& cn = model.nets[j];
      init.segment(cn.at, cn.len) =
          NetParams::glorot(cn.spec, mix_seed(prob.ann.init_seed, j)).flatten();
    }
    Objective obj = [&](const Eigen::VectorXd& p, Eigen::VectorXd& grad) {
      std::vector<ForwardCache> caches(model.nets.size());
      Eigen::VectorXd h = model.h_of(p, data.y2, &caches);
      Eigen::VectorXd upstream;
      const double loss = smd_loss(prob.p_phi,wdiag, prob.omega, data.y1, h, &upstream);
      grad.setZero(model.total);
      grad[model.theta_at] = upstream.dot(data.y2.col(0));
      for (std::size_t j = 0; j < model.sbases.size(); ++j)
        grad.segment(model.s_at[j], model.s_len[j]) =
            model.sdesign(j, data.y2).transpose() * upstream;
      for (std::size_t j = 0; j < model.nets.size(); ++j) {
        const CompNet& cn = model.nets[j];
        NetParams np = NetParams::unflatten(cn.spec, p.segment(cn.at, cn.len));
        grad.segment(cn.at, cn.len) =
            net_grad_params(cn.spec, np, data.y2.middleCols(cn.col0, cn.ncols),
                            upstream, caches[j])
                .flatten();
      }
      return loss;
    };
    AdamState adam;
    adam.lr = prob.ann.lr;
    TrainResult tr = train(obj, std::move(init), adam, scaled_rule(prob.ann, prob.steps_scale));
    flat = std::move(tr.params);
    out.h.trace = std::move(tr.trace);
    out.h.steps = tr.steps;
    out.h.criterion =
        smd_loss(prob.p_phi,wdiag, prob.omega, data.y1, model.h_of(flat, data.y2, nullptr), nullptr);
  }

  const double theta = flat[model.theta_at];
  out.theta = {theta, structure == Structure::PartiallyLinear ? "structured-pl"
                                                              : "structured-pa"};
  out.h.eval_fn = [model, flat](const Eigen::MatrixXd& y2) {
    return model.h_of(flat, y2, nullptr);
  };
  out.h.d1_fn = [theta](const Eigen::MatrixXd& y2) {
    return Eigen::VectorXd::Constant(y2.rows(), theta).eval();
  };
  return out;
}

std::string sieve_kind_name(SieveKind k) {
  return k == SieveKind::Spline ? "spline" : "ann";
}

SieveKind sieve_kind_from_name(const std::string& name) {
  if (name == "spline") return SieveKind::Spline;
  if (name == "ann") return SieveKind::Ann;
  throw std::invalid_argument("unknown sieve kind: " + name);
}

std::string structure_name(Structure s) {
  switch (s) {
    case Structure::NP: return "np";
    case Structure::PartiallyLinear: return "pl";
    case Structure::PartiallyAdditive: return "pa";
  }
  return "unknown";
}

Structure structure_from_name(const std::string& name) {
  if (name == "np") return Structure::NP;
  if (name == "pl") return Structure::PartiallyLinear;
  if (name == "pa") return Structure::PartiallyAdditive;
  throw std::invalid_argument("unknown structure: " + name);
}

}  // namespace npiv
