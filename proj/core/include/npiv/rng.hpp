#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace npiv {

// Deterministic stream derivation. Children are obtained by hashing the
// parent seed together with a stream index, so replication r (or bootstrap
// draw b inside replication r) always sees the same stream regardless of how
// work is scheduled across threads.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b);

// Standard normal CDF and quantile. The quantile uses Acklam's rational
// approximation polished with one Halley step, accurate to ~1e-15; the CDF is
// erfc-based and exact to double precision.
double normal_cdf(double x);
double normal_quantile(double p);

// mt19937_64 gives bit-identical raw output on every conforming platform.
// Normal and exponential draws are derived from single uniforms (inverse CDF)
// rather than std:: distributions, whose algorithms are implementation
// defined and would break frozen-seed reproducibility across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // in [0,1)
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }
  double normal() {
    double u = (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
    return normal_quantile(u);
  }
  // unit mean
  double exponential() { return -std::log1p(-uniform()); }

  Eigen::VectorXd uniform_vec(int n);
  Eigen::VectorXd normal_vec(int n);
  Eigen::VectorXd exponential_vec(int n);
  Eigen::MatrixXd normal_mat(int rows, int cols);

 private:
  std::mt19937_64 eng_;
};

}  // namespace npiv
