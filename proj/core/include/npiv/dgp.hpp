#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include <Eigen/Core>

#include "npiv/dataset.hpp"

namespace npiv {

// Simulation designs. SimpleA is noisy nonparametric regression on a frozen
// random network; SimpleB is a linear-coefficient NPIV model with a network
// first stage; Mc2/Mc3*/McA1 are structural designs with an endogenous first
// coordinate, heteroskedastic errors, and an optional block of correlated
// covariates Xtilde appended to both y2 and x.
enum class DesignKind { SimpleA, SimpleB, Mc2, Mc3a, Mc3b, McA1 };

struct DesignId {
  DesignKind kind = DesignKind::Mc2;
  double noise_ratio = 0.0;  // SimpleA: var(error) / var(signal)
  int p = 1;                 // SimpleB: covariate dimension
  int dim_xtilde = 0;        // Mc2/Mc3a/Mc3b/McA1
  double rho = 0.0;          // Xtilde correlation level in [-1, 1]
};

// True functions of the design, on the same column layouts as the sample:
// h0 and d1_h0 take y2, sigma takes x and returns E[(Y1-h0)^2 | X].
struct DgpOracle {
  std::function<Eigen::VectorXd(const Eigen::MatrixXd&)> h0;
  std::function<Eigen::VectorXd(const Eigen::MatrixXd&)> d1_h0;
  std::function<Eigen::VectorXd(const Eigen::MatrixXd&)> sigma;
};

struct SimSample {
  Dataset data;
  double theta_true = 1.0;  // NaN for SimpleA, which targets f itself
  DgpOracle oracle;
  Dataset heldout;  // SimpleA only: 1000 fresh rows with noiseless outcomes
};

// Y = f(X) + noise, X ~ N(0, I_10), f a frozen one-layer 40-unit tanh network
// rescaled so its signal variance is 14; the error SD is
// sqrt(noise_ratio * 14). The held-out set uses substream mix_seed(seed, 1).
SimSample gen_simple_a(int n, double noise_ratio, std::uint64_t seed);

// R2 = a2'tanh(A1 [W, Z]) + U1; Y1 = R2 + a3'W + U2 with corr(U1, U2) = 0.9.
// y2 = [R2, W], x = [W, Z], theta (on R2) = 1.
SimSample gen_simple_b(int n, int p, std::uint64_t seed);

// Y1 = R1 + sigmoid(R2) + log(1 + X2) + h3(Xtilde) + U with the first
// coordinate endogenous; y2 = [R1, R2, X2, Xtilde], x = [X1, X2, X3, Xtilde].
SimSample gen_mc2(int n, int dim_xtilde, double rho, std::uint64_t seed);

// Mc2 with a nonlinear R1 term: (a) R1^2 so d1 h0 = 2 R1;
// (b) R1^2/2 + R1 * f(16 - X2) / (2C), f = sigmoid', C normalizing
SimSample gen_mc3(char variant, int n, int dim_xtilde, double rho,
                  std::uint64_t seed);

// exogenous first coordinate: Y1 = X1 + sigmoid(R) + log(1+X2) + h3(Xtilde) + U,
// R = X1 + X2 + X3 + 0.9 U + eps; y2 = [X1, R, X2, Xtilde]
SimSample gen_mcA1(int n, int dim_xtilde, double rho, std::uint64_t seed);

SimSample generate(const DesignId& id, int n, std::uint64_t seed);

// introspection hooks for the frozen pieces
Eigen::MatrixXd xtilde_covariance(int dim);  // unit-diagonal, fixed across runs
double simple_a_signal_variance();           // 14 by construction
double mc3b_normalizer();                    // C = integral_0^1 sigmoid'(16-r) dr

// SimpleB reduced form g with R2 = g(x) + U1, for checking the error law
std::function<Eigen::VectorXd(const Eigen::MatrixXd&)> simple_b_first_stage(int p);

std::string design_name(DesignKind k);
DesignKind design_from_name(const std::string& name);

}  // namespace npiv
