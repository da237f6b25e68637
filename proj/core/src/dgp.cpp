#include "npiv/dgp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>

#include "npiv/rng.hpp"

namespace npiv {

namespace {

// fixed internal seeds so the frozen DGP pieces never move between runs
constexpr std::uint64_t kXtildeSeed = 90101;
constexpr std::uint64_t kSimpleANetSeed = 90201;
constexpr std::uint64_t kSimpleACalibSeed = 90202;
constexpr std::uint64_t kSimpleBCoefSeed = 90301;

constexpr int kSimpleADim = 10;
constexpr int kSimpleAWidth = 40;
constexpr double kSimpleASignalVar = 14.0;
// pre-activation SD of the frozen net; larger values saturate tanh and make
// the regression surface harder for low-order spline fits
constexpr double kSimpleAPreact = 1.25;
constexpr double kSimpleABias = 0.5;
constexpr int kSimpleAHeldout = 1000;
constexpr int kCalibRows = 20000;

double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// sigmoid'(16 - x2), the interaction slope in the 'b' variant
double mc3b_f(double x2) {
  const double sg = sigmoid(16.0 - x2);
  return sg * (1.0 - sg);
}

// h03(xt) = 5 xt_1^3 + xt_2 * max_j max(xt_j, 0.5) + 0.5 exp(-xt_last);
// an empty block contributes nothing and a single column drops the middle
// addend, which needs a second coordinate
Eigen::VectorXd h03(const Eigen::MatrixXd& xt) {
  const int n = static_cast<int>(xt.rows());
  const int d = static_cast<int>(xt.cols());
  if (d == 0) return Eigen::VectorXd::Zero(n);
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) {
    const double x1 = xt(i, 0);
    out[i] = 5.0 * x1 * x1 * x1 + 0.5 * std::exp(-xt(i, d - 1));
    if (d < 2) continue;
    double mx = 0.5;
    for (int j = 0; j < d; ++j) mx = std::max(mx, xt(i, j));
    out[i] += xt(i, 1) * mx;
  }
  return out;
}

void check_xtilde_args(int n, int dim_xtilde, double rho) {
  if (n < 1) throw std::invalid_argument("dgp: n must be positive");
  if (dim_xtilde < 0) throw std::invalid_argument("dgp: dim_xtilde must be nonnegative");
  if (rho < -1.0 || rho > 1.0) throw std::invalid_argument("dgp: rho must lie in [-1, 1]");
}

// Xtilde = Phi(rho * s + sqrt(1 - rho^2) * T) elementwise, T rows ~ N(0, cov)
Eigen::MatrixXd draw_xtilde(Rng& rng, const Eigen::VectorXd& s, int dim, double rho) {
  const int n = static_cast<int>(s.size());
  if (dim == 0) return Eigen::MatrixXd(n, 0);
  const Eigen::MatrixXd cov = xtilde_covariance(dim);
  const Eigen::MatrixXd lt = Eigen::LLT<Eigen::MatrixXd>(cov).matrixL().transpose();
  const Eigen::MatrixXd t = rng.normal_mat(n, dim) * lt;
  const double mix = std::sqrt(1.0 - rho * rho);
  Eigen::MatrixXd out(n, dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) out(i, j) = normal_cdf(rho * s[i] + mix * t(i, j));
  return out;
}

// frozen one-layer tanh network for the regression design
struct SimpleANet {
  Eigen::MatrixXd a1;  // width x dim
  Eigen::VectorXd b1;
  Eigen::VectorXd a2;
  double b2 = 0.0;
};

Eigen::VectorXd simple_a_eval(const SimpleANet& net, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd pre = (x * net.a1.transpose()).rowwise() + net.b1.transpose();
  return ((pre.array().tanh().matrix() * net.a2).array() + net.b2).matrix();
}

Eigen::VectorXd simple_a_d1(const SimpleANet& net, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd pre = (x * net.a1.transpose()).rowwise() + net.b1.transpose();
  Eigen::MatrixXd sech2 = (1.0 - pre.array().tanh().square()).matrix();
  return sech2 * net.a2.cwiseProduct(net.a1.col(0));
}

const SimpleANet& simple_a_net() {
  static const SimpleANet frozen = [] {
    Rng rng(kSimpleANetSeed);
    SimpleANet net;
    net.a1 = rng.normal_mat(kSimpleAWidth, kSimpleADim) *
             (kSimpleAPreact / std::sqrt(static_cast<double>(kSimpleADim)));
    net.b1 = rng.normal_vec(kSimpleAWidth) * kSimpleABias;
    net.a2 = rng.normal_vec(kSimpleAWidth);
    net.b2 = rng.normal();
    // rescale the output layer so the signal variance hits the target exactly
    // on a frozen calibration sample; the intercept does not enter the variance
    Rng calib(kSimpleACalibSeed);
    Eigen::VectorXd f = simple_a_eval(net, calib.normal_mat(kCalibRows, kSimpleADim));
    const double var = (f.array() - f.mean()).square().mean();
    net.a2 *= std::sqrt(kSimpleASignalVar / var);
    return net;
  }();
  return frozen;
}

// frozen coefficients of the NPIV design with a network first stage
struct SimpleBCoefs {
  Eigen::MatrixXd a1;  // 4 x (p+2)
  Eigen::VectorXd a2;  // 4
  Eigen::VectorXd a3;  // p
};

SimpleBCoefs simple_b_coefs(int p) {
  Rng rng(mix_seed(kSimpleBCoefSeed, static_cast<std::uint64_t>(p)));
  SimpleBCoefs c;
  // scaled so the pre-activations and the W-part of the outcome stay O(1) as p grows
  c.a1 = rng.normal_mat(4, p + 2) / std::sqrt(static_cast<double>(p + 2));
  c.a2 = rng.normal_vec(4);
  c.a3 = rng.normal_vec(p) / std::sqrt(static_cast<double>(p));
  return c;
}

Eigen::VectorXd simple_b_g(const SimpleBCoefs& c, const Eigen::MatrixXd& x) {
  return (x * c.a1.transpose()).array().tanh().matrix() * c.a2;
}

// true regression function for the structural designs; 'variant' selects how
// the first coordinate enters: '2' linear, 'a' squared, 'b' squared/2 plus an
// interaction with the third coordinate, '1' exogenous (first coordinate
// enters linearly and the second through the sigmoid)
double mc_first_term(char variant, double c, double r1, double x2) {
  switch (variant) {
    case '2': return r1;
    case 'a': return r1 * r1;
    case 'b': return 0.5 * r1 * r1 + r1 * mc3b_f(x2) / (2.0 * c);
    default: return r1;
  }
}

double mc_first_d1(char variant, double c, double r1, double x2) {
  switch (variant) {
    case '2': return 1.0;
    case 'a': return 2.0 * r1;
    case 'b': return r1 + mc3b_f(x2) / (2.0 * c);
    default: return 1.0;
  }
}

Eigen::VectorXd mc_h0(char variant, double c, const Eigen::MatrixXd& y2) {
  if (y2.cols() < 3) throw std::invalid_argument("dgp oracle: y2 needs at least 3 columns");
  const int n = static_cast<int>(y2.rows());
  Eigen::VectorXd out = h03(y2.rightCols(y2.cols() - 3));
  for (int i = 0; i < n; ++i)
    out[i] += mc_first_term(variant, c, y2(i, 0), y2(i, 2)) + sigmoid(y2(i, 1)) +
              std::log1p(y2(i, 2));
  return out;
}

Eigen::VectorXd mc_d1h0(char variant, double c, const Eigen::MatrixXd& y2) {
  if (y2.cols() < 3) throw std::invalid_argument("dgp oracle: y2 needs at least 3 columns");
  const int n = static_cast<int>(y2.rows());
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) out[i] = mc_first_d1(variant, c, y2(i, 0), y2(i, 2));
  return out;
}

// endogenous family: y2 = [R1, R2, X2, Xtilde], x = [X1, X2, X3, Xtilde]
SimSample gen_mc_family(char variant, int n, int dim_xtilde, double rho,
                        std::uint64_t seed) {
  check_xtilde_args(n, dim_xtilde, rho);

  Rng rng(seed);
  const Eigen::VectorXd v2 = rng.normal_vec(n);
  const Eigen::VectorXd v3 = rng.normal_vec(n);
  const Eigen::VectorXd u1 = rng.normal_vec(n);
  const Eigen::VectorXd u2 = rng.normal_vec(n);
  const Eigen::VectorXd u3 = rng.normal_vec(n);
  const Eigen::VectorXd v = rng.normal_vec(n) * std::sqrt(0.1);
  const Eigen::VectorXd x2 = rng.uniform_vec(n);

  Eigen::VectorXd x1(n), x3(n), r2(n);
  for (int i = 0; i < n; ++i) {
    x1[i] = normal_cdf(v2[i]);
    x3[i] = normal_cdf(v3[i]);
    r2[i] = normal_cdf(v3[i] + 0.5 * u3[i]);
  }
  const Eigen::VectorXd r1 = x1 + 0.5 * u2 + v;
  const Eigen::VectorXd scale =
      ((x1.array().square() + x2.array().square() + x3.array().square()) / 3.0)
          .sqrt()
          .matrix();
  const Eigen::VectorXd u = ((u1 + u2 + u3) / 3.0).cwiseProduct(scale);
  const Eigen::VectorXd s = x1 + x2 + x3;
  const Eigen::MatrixXd xt = draw_xtilde(rng, s, dim_xtilde, rho);

  SimSample out;
  out.data.y2.resize(n, 3 + dim_xtilde);
  out.data.y2.col(0) = r1;
  out.data.y2.col(1) = r2;
  out.data.y2.col(2) = x2;
  out.data.y2.rightCols(dim_xtilde) = xt;
  out.data.x.resize(n, 3 + dim_xtilde);
  out.data.x.col(0) = x1;
  out.data.x.col(1) = x2;
  out.data.x.col(2) = x3;
  out.data.x.rightCols(dim_xtilde) = xt;

  const double cnorm = variant == 'b' ? mc3b_normalizer() : 1.0;
  out.data.y1 = mc_h0(variant, cnorm, out.data.y2) + u;
  out.theta_true = 1.0;
  out.oracle.h0 = [variant, cnorm](const Eigen::MatrixXd& y2) {
    return mc_h0(variant, cnorm, y2);
  };
  out.oracle.d1_h0 = [variant, cnorm](const Eigen::MatrixXd& y2) {
    return mc_d1h0(variant, cnorm, y2);
  };
  // U = ((U1+U2+U3)/3) * scale(X) with the U_l standard normal given X, so
  // E[U^2|X] = scale(X)^2 / 3
  out.oracle.sigma = [](const Eigen::MatrixXd& x) {
    return ((x.col(0).array().square() + x.col(1).array().square() +
             x.col(2).array().square()) /
            9.0)
        .matrix()
        .eval();
  };
  return out;
}

}  // namespace

SimSample gen_simple_a(int n, double noise_ratio, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("dgp: n must be positive");
  if (noise_ratio < 0) throw std::invalid_argument("dgp: noise_ratio must be nonnegative");
  const SimpleANet& net = simple_a_net();

  Rng rng(seed);
  SimSample out;
  out.data.y2 = rng.normal_mat(n, kSimpleADim);
  out.data.x = out.data.y2;
  const Eigen::VectorXd f = simple_a_eval(net, out.data.y2);
  const double sd = std::sqrt(noise_ratio * kSimpleASignalVar);
  out.data.y1 = f + sd * rng.normal_vec(n);
  out.theta_true = std::numeric_limits<double>::quiet_NaN();

  Rng hrng(mix_seed(seed, 1));
  out.heldout.y2 = hrng.normal_mat(kSimpleAHeldout, kSimpleADim);
  out.heldout.x = out.heldout.y2;
  out.heldout.y1 = simple_a_eval(net, out.heldout.y2);

  out.oracle.h0 = [](const Eigen::MatrixXd& y2) { return simple_a_eval(simple_a_net(), y2); };
  out.oracle.d1_h0 = [](const Eigen::MatrixXd& y2) { return simple_a_d1(simple_a_net(), y2); };
  const double s2 = noise_ratio * kSimpleASignalVar;
  out.oracle.sigma = [s2](const Eigen::MatrixXd& x) {
    return Eigen::VectorXd::Constant(x.rows(), s2).eval();
  };
  return out;
}

SimSample gen_simple_b(int n, int p, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("dgp: n must be positive");
  if (p < 1) throw std::invalid_argument("dgp: p must be at least 1");
  const SimpleBCoefs coefs = simple_b_coefs(p);

  Rng rng(seed);
  const Eigen::MatrixXd w = rng.normal_mat(n, p);
  const Eigen::MatrixXd z = rng.normal_mat(n, 2);
  const Eigen::VectorXd u1 = rng.normal_vec(n);
  const Eigen::VectorXd xi = rng.normal_vec(n);

  SimSample out;
  out.data.x.resize(n, p + 2);
  out.data.x.leftCols(p) = w;
  out.data.x.rightCols(2) = z;
  const Eigen::VectorXd r2 = simple_b_g(coefs, out.data.x) + u1;
  const Eigen::VectorXd u2 = 0.9 * u1 + std::sqrt(1.0 - 0.81) * xi;
  out.data.y2.resize(n, 1 + p);
  out.data.y2.col(0) = r2;
  out.data.y2.rightCols(p) = w;
  out.data.y1 = r2 + w * coefs.a3 + u2;
  out.theta_true = 1.0;

  const Eigen::VectorXd a3 = coefs.a3;
  out.oracle.h0 = [a3](const Eigen::MatrixXd& y2) {
    if (y2.cols() != a3.size() + 1)
      throw std::invalid_argument("dgp oracle: y2 column count mismatch");
    return (y2.col(0) + y2.rightCols(a3.size()) * a3).eval();
  };
  out.oracle.d1_h0 = [](const Eigen::MatrixXd& y2) {
    return Eigen::VectorXd::Ones(y2.rows()).eval();
  };
  // U2 = 0.9 U1 + sqrt(0.19) N(0,1) is independent of X with unit variance
  out.oracle.sigma = [](const Eigen::MatrixXd& x) {
    return Eigen::VectorXd::Ones(x.rows()).eval();
  };
  return out;
}

SimSample gen_mc2(int n, int dim_xtilde, double rho, std::uint64_t seed) {
  return gen_mc_family('2', n, dim_xtilde, rho, seed);
}

SimSample gen_mc3(char variant, int n, int dim_xtilde, double rho, std::uint64_t seed) {
  if (variant != 'a' && variant != 'b')
    throw std::invalid_argument("dgp: mc3 variant must be 'a' or 'b'");
  return gen_mc_family(variant, n, dim_xtilde, rho, seed);
}

SimSample gen_mcA1(int n, int dim_xtilde, double rho, std::uint64_t seed) {
  check_xtilde_args(n, dim_xtilde, rho);

  Rng rng(seed);
  const Eigen::VectorXd x1 = rng.uniform_vec(n);
  const Eigen::VectorXd x2 = rng.uniform_vec(n);
  const Eigen::VectorXd x3 = rng.uniform_vec(n);
  const Eigen::VectorXd sig2 =
      ((x1.array().square() + x2.array().square() + x3.array().square()) / 3.0).matrix();
  const Eigen::VectorXd u = rng.normal_vec(n).cwiseProduct(sig2.cwiseSqrt());
  const Eigen::VectorXd eps = rng.normal_vec(n) * std::sqrt(0.1);
  const Eigen::VectorXd s = x1 + x2 + x3;
  const Eigen::MatrixXd xt = draw_xtilde(rng, s, dim_xtilde, rho);
  const Eigen::VectorXd r = s + 0.9 * u + eps;

  SimSample out;
  out.data.y2.resize(n, 3 + dim_xtilde);
  out.data.y2.col(0) = x1;
  out.data.y2.col(1) = r;
  out.data.y2.col(2) = x2;
  out.data.y2.rightCols(dim_xtilde) = xt;
  out.data.x.resize(n, 3 + dim_xtilde);
  out.data.x.col(0) = x1;
  out.data.x.col(1) = x2;
  out.data.x.col(2) = x3;
  out.data.x.rightCols(dim_xtilde) = xt;
  // same regression shape as the '2' family with a linear first coordinate
  out.data.y1 = mc_h0('2', 1.0, out.data.y2) + u;
  out.theta_true = 1.0;

  out.oracle.h0 = [](const Eigen::MatrixXd& y2) { return mc_h0('2', 1.0, y2); };
  out.oracle.d1_h0 = [](const Eigen::MatrixXd& y2) { return mc_d1h0('2', 1.0, y2); };
  out.oracle.sigma = [](const Eigen::MatrixXd& x) {
    return ((x.col(0).array().square() + x.col(1).array().square() +
             x.col(2).array().square()) /
            3.0)
        .matrix()
        .eval();
  };
  return out;
}

SimSample generate(const DesignId& id, int n, std::uint64_t seed) {
  switch (id.kind) {
    case DesignKind::SimpleA: {
      const bool known = id.noise_ratio == 0.0 || id.noise_ratio == 0.1 ||
                         id.noise_ratio == 1.0 || id.noise_ratio == 10.0;
      if (!known) throw std::invalid_argument("dgp: noise_ratio must be one of 0, 0.1, 1, 10");
      return gen_simple_a(n, id.noise_ratio, seed);
    }
    case DesignKind::SimpleB: return gen_simple_b(n, id.p, seed);
    case DesignKind::Mc2: return gen_mc2(n, id.dim_xtilde, id.rho, seed);
    case DesignKind::Mc3a: return gen_mc3('a', n, id.dim_xtilde, id.rho, seed);
    case DesignKind::Mc3b: return gen_mc3('b', n, id.dim_xtilde, id.rho, seed);
    case DesignKind::McA1: return gen_mcA1(n, id.dim_xtilde, id.rho, seed);
  }
  throw std::logic_error("unreachable design kind");
}

Eigen::MatrixXd xtilde_covariance(int dim) {
  if (dim < 0) throw std::invalid_argument("dgp: dim must be nonnegative");
  if (dim == 0) return Eigen::MatrixXd(0, 0);
  Rng rng(mix_seed(kXtildeSeed, static_cast<std::uint64_t>(dim)));
  const Eigen::MatrixXd z = rng.normal_mat(dim, dim);
  const Eigen::MatrixXd s = Eigen::MatrixXd::Identity(dim, dim) + z.transpose() * z;
  const Eigen::VectorXd d = s.diagonal().cwiseSqrt().cwiseInverse();
  return d.asDiagonal() * s * d.asDiagonal();
}

double simple_a_signal_variance() {
  Rng calib(kSimpleACalibSeed);
  const Eigen::VectorXd f =
      simple_a_eval(simple_a_net(), calib.normal_mat(kCalibRows, kSimpleADim));
  return (f.array() - f.mean()).square().mean();
}

double mc3b_normalizer() {
  // composite Simpson on [0,1]; the integrand is smooth so 400 panels put the
  // quadrature error far below the 1e-10 relative target
  static const double value = [] {
    const int m = 400;
    const double h = 1.0 / m;
    double acc = mc3b_f(0.0) + mc3b_f(1.0);
    for (int k = 1; k < m; ++k) acc += mc3b_f(k * h) * (k % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
  }();
  return value;
}

std::function<Eigen::VectorXd(const Eigen::MatrixXd&)> simple_b_first_stage(int p) {
  if (p < 1) throw std::invalid_argument("dgp: p must be at least 1");
  const SimpleBCoefs coefs = simple_b_coefs(p);
  return [coefs](const Eigen::MatrixXd& x) {
    if (x.cols() != coefs.a1.cols())
      throw std::invalid_argument("simple_b_first_stage: x column count mismatch");
    return simple_b_g(coefs, x);
  };
}

std::string design_name(DesignKind k) {
  switch (k) {
    case DesignKind::SimpleA: return "simple-a";
    case DesignKind::SimpleB: return "simple-b";
    case DesignKind::Mc2: return "mc2";
    case DesignKind::Mc3a: return "mc3a";
    case DesignKind::Mc3b: return "mc3b";
    case DesignKind::McA1: return "mca1";
  }
  return "unknown";
}

DesignKind design_from_name(const std::string& name) {
  if (name == "simple-a") return DesignKind::SimpleA;
  if (name == "simple-b") return DesignKind::SimpleB;
  if (name == "mc2") return DesignKind::Mc2;
  if (name == "mc3a") return DesignKind::Mc3a;
  if (name == "mc3b") return DesignKind::Mc3b;
  if (name == "mca1") return DesignKind::McA1;
  throw std::invalid_argument("unknown design: " + name);
}

}  // namespace npiv
