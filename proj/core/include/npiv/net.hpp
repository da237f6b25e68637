#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace npiv {

enum class Activation { ReLU, Sigmoid, Tanh };

struct NetSpec {
  int input_dim = 1;
  std::vector<int> hidden = {10};
  Activation act = Activation::Sigmoid;
};

// Learnable parameters. Layer j maps width w_{j-1} -> w_j via W[j] (out x in)
// and b[j]; the final layer is affine with a single output.
struct NetParams {
  std::vector<Eigen::MatrixXd> W;
  std::vector<Eigen::VectorXd> b;

  int count() const;
  Eigen::VectorXd flatten() const;
  static NetParams unflatten(const NetSpec& spec, const Eigen::VectorXd& flat);
  static NetParams zeros(const NetSpec& spec);
  // uniform on +-sqrt(6/(fan_in+fan_out)), zero biases, deterministic in seed
  static NetParams glorot(const NetSpec& spec, std::uint64_t seed);
};

// Activations of every layer kept from a forward pass; enough to run both
// backward passes without recomputation (act' is recoverable from outputs).
struct ForwardCache {
  std::vector<Eigen::MatrixXd> a;  // a[0] = inputs; a[j+1] = hidden layer j output
};

Eigen::VectorXd net_forward(const NetSpec& spec, const NetParams& params,
                            const Eigen::MatrixXd& inputs, ForwardCache* cache = nullptr);

// gradient of sum_i upstream_i * h(x_i) with respect to every parameter
NetParams net_grad_params(const NetSpec& spec, const NetParams& params,
                          const Eigen::MatrixXd& inputs, const Eigen::VectorXd& upstream,
                          const ForwardCache& cache);

// dh/d(first input coordinate), one value per row
Eigen::VectorXd net_grad_input1(const NetSpec& spec, const NetParams& params,
                                const Eigen::MatrixXd& inputs);

struct AdamState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
};

void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grad);

struct StoppingRule {
  long min_steps = 3000;
  long max_steps = 5000;
  long window = 500;
  double rel_tol = 1e-5;
};

struct TrainResult {
  Eigen::VectorXd params;
  std::vector<double> trace;
  long steps = 0;
};

// full-batch first-order minimization of a deterministic objective; stops at
// max_steps, or once past min_steps when the relative loss improvement over
// the trailing `window` steps falls below rel_tol
using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;
TrainResult train(const Objective& objective, Eigen::VectorXd init, AdamState adam,
                  const StoppingRule& rule);

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

}  // namespace npiv
