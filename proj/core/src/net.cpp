#include "npiv/net.hpp"

#include <cmath>
#include <stdexcept>

#include "npiv/rng.hpp"

namespace npiv {

namespace {

std::vector<std::pair<int, int>> layer_shapes(const NetSpec& spec) {
  if (spec.hidden.empty()) throw std::invalid_argument("net: at least one hidden layer");
  std::vector<std::pair<int, int>> shapes;
  int in = spec.input_dim;
  for (int w : spec.hidden) {
    if (w < 1) throw std::invalid_argument("net: hidden width must be >= 1");
    shapes.emplace_back(w, in);
    in = w;
  }
  shapes.emplace_back(1, in);
  return shapes;
}

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation act) {
  switch (act) {
    case Activation::ReLU: return z.cwiseMax(0.0);
    case Activation::Sigmoid:
      return z.unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); });
    case Activation::Tanh:
      return z.unaryExpr([](double t) { return std::tanh(t); });
  }
  throw std::logic_error("unreachable activation");
}

// derivative recovered from the activation value; ReLU's derivative at the
// kink is fixed to 0
Eigen::MatrixXd activate_deriv(const Eigen::MatrixXd& a, Activation act) {
  switch (act) {
    case Activation::ReLU:
      return a.unaryExpr([](double t) { return t > 0.0 ? 1.0 : 0.0; });
    case Activation::Sigmoid:
      return a.unaryExpr([](double t) { return t * (1.0 - t); });
    case Activation::Tanh:
      return a.unaryExpr([](double t) { return 1.0 - t * t; });
  }
  throw std::logic_error("unreachable activation");
}

void check_shapes(const NetSpec& spec, const NetParams& params) {
  auto shapes = layer_shapes(spec);
  if (params.W.size() != shapes.size() || params.b.size() != shapes.size())
    throw std::invalid_argument("net: parameter layer count mismatch");
  for (std::size_t j = 0; j < shapes.size(); ++j) {
    if (params.W[j].rows() != shapes[j].first || params.W[j].cols() != shapes[j].second ||
        params.b[j].size() != shapes[j].first)
      throw std::invalid_argument("net: parameter shape mismatch at layer " + std::to_string(j));
    if (!params.W[j].allFinite() || !params.b[j].allFinite())
      throw std::invalid_argument("net: non-finite parameter at layer " + std::to_string(j));
  }
}

}  // namespace

int NetParams::count() const {
  int c = 0;
  for (std::size_t j = 0; j < W.size(); ++j)
    c += static_cast<int>(W[j].size() + b[j].size());
  return c;
}

Eigen::VectorXd NetParams::flatten() const {
  Eigen::VectorXd flat(count());
  int at = 0;
  for (std::size_t j = 0; j < W.size(); ++j) {
    for (int c = 0; c < W[j].cols(); ++c)
      for (int r = 0; r < W[j].rows(); ++r) flat[at++] = W[j](r, c);
    for (int r = 0; r < b[j].size(); ++r) flat[at++] = b[j][r];
  }
  return flat;
}

NetParams NetParams::unflatten(const NetSpec& spec, const Eigen::VectorXd& flat) {
  NetParams p = zeros(spec);
  int at = 0;
  for (std::size_t j = 0; j < p.W.size(); ++j) {
    for (int c = 0; c < p.W[j].cols(); ++c)
      for (int r = 0; r < p.W[j].rows(); ++r) p.W[j](r, c) = flat[at++];
    for (int r = 0; r < p.b[j].size(); ++r) p.b[j][r] = flat[at++];
  }
  if (at != flat.size()) throw std::invalid_argument("net: flat parameter length mismatch");
  return p;
}

NetParams NetParams::zeros(const NetSpec& spec) {
  NetParams p;
  for (auto [out, in] : layer_shapes(spec)) {
    p.W.push_back(Eigen::MatrixXd::Zero(out, in));
    p.b.push_back(Eigen::VectorXd::Zero(out));
  }
  return p;
}

NetParams NetParams::glorot(const NetSpec& spec, std::uint64_t seed) {
  NetParams p = zeros(spec);
  for (std::size_t j = 0; j < p.W.size(); ++j) {
    Rng rng(mix_seed(seed, j));
    const double limit = std::sqrt(6.0 / (p.W[j].cols() + p.W[j].rows()));
    for (int r = 0; r < p.W[j].rows(); ++r)
      for (int c = 0; c < p.W[j].cols(); ++c)
        p.W[j](r, c) = limit * (2.0 * rng.uniform() - 1.0);
  }
  return p;
}

Eigen::VectorXd net_forward(const NetSpec& spec, const NetParams& params,
                            const Eigen::MatrixXd& inputs, ForwardCache* cache) {
  check_shapes(spec, params);
  if (inputs.cols() != spec.input_dim)
    throw std::invalid_argument("net: input dimension mismatch");
  const std::size_t h = spec.hidden.size();
  Eigen::MatrixXd a = inputs;
  if (cache) {
    cache->a.clear();
    cache->a.push_back(a);
  }
  for (std::size_t j = 0; j < h; ++j) {
    Eigen::MatrixXd z = a * params.W[j].transpose();
    z.rowwise() += params.b[j].transpose();
    a = activate(z, spec.act);
    if (cache) cache->a.push_back(a);
  }
  Eigen::VectorXd out = a * params.W[h].transpose().col(0);
  out.array() += params.b[h][0];
  return out;
}

NetParams net_grad_params(const NetSpec& spec, const NetParams& params,
                          const Eigen::MatrixXd& inputs, const Eigen::VectorXd& upstream,
                          const ForwardCache& cache) {
  if (!upstream.allFinite()) throw std::invalid_argument("net: non-finite upstream");
  if (upstream.size() != inputs.rows())
    throw std::invalid_argument("net: upstream length mismatch");
  const std::size_t h = spec.hidden.size();
  if (cache.a.size() != h + 1) throw std::invalid_argument("net: stale forward cache");

  NetParams g = NetParams::zeros(spec);
  // output layer
  g.W[h].row(0) = upstream.transpose() * cache.a[h];
  g.b[h][0] = upstream.sum();
  // hidden layers, walking the chain backwards
  Eigen::MatrixXd delta =
      (upstream * params.W[h].row(0)).cwiseProduct(activate_deriv(cache.a[h], spec.act));
  for (std::size_t j = h; j-- > 0;) {
    g.W[j] = delta.transpose() * cache.a[j];
    g.b[j] = delta.colwise().sum().transpose();
    if (j > 0)
      delta = (delta * params.W[j]).cwiseProduct(activate_deriv(cache.a[j], spec.act));
  }
  return g;
}

Eigen::VectorXd net_grad_input1(const NetSpec& spec, const NetParams& params,
                                const Eigen::MatrixXd& inputs) {
  ForwardCache cache;
  net_forward(spec, params, inputs, &cache);
  const std::size_t h = spec.hidden.size();
  const int n = static_cast<int>(inputs.rows());
  Eigen::MatrixXd delta = (Eigen::VectorXd::Ones(n) * params.W[h].row(0))
                              .cwiseProduct(activate_deriv(cache.a[h], spec.act));
  for (std::size_t j = h; j-- > 1;)
    delta = (delta * params.W[j]).cwiseProduct(activate_deriv(cache.a[j], spec.act));
  return delta * params.W[0].col(0);
}

void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (!grad.allFinite())
    throw std::runtime_error("adam: non-finite gradient at step " + std::to_string(state.t + 1));
  if (state.m.size() != params.size()) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
  }
  state.t += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  params.array() -= state.lr * (state.m.array() / bc1) /
                    ((state.v.array() / bc2).sqrt() + state.eps);
}

TrainResult train(const Objective& objective, Eigen::VectorXd init, AdamState adam,
                  const StoppingRule& rule) {
  if (rule.min_steps > rule.max_steps)
    throw std::invalid_argument("train: min_steps > max_steps");
  if (rule.window < 1) throw std::invalid_argument("train: window must be >= 1");
  TrainResult res;
  res.params = std::move(init);
  Eigen::VectorXd grad(res.params.size());
  for (long t = 1; t <= rule.max_steps; ++t) {
    double loss = objective(res.params, grad);
    if (std::isnan(loss))
      throw std::runtime_error("train: NaN loss at step " + std::to_string(t));
    adam_step(adam, res.params, grad);
    res.trace.push_back(loss);
    res.steps = t;
    if (t >= rule.min_steps && t > rule.window) {
      const double prev = res.trace[t - 1 - rule.window];
      const double improvement = (prev - loss) / std::max(std::abs(prev), 1e-300);
      if (improvement < rule.rel_tol) break;
    }
  }
  return res;
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
  }
  return "unknown";
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::ReLU;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation: " + name);
}

}  // namespace npiv
