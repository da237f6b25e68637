#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <npiv/rng.hpp>

#include <cmath>
#include <vector>

using namespace npiv;

TEST_CASE("mix_seed separates streams and is deterministic") {
    CHECK(mix_seed(42, 0) == mix_seed(42, 0));
    CHECK(mix_seed(42, 0) != mix_seed(42, 1));
    CHECK(mix_seed(42, 0) != mix_seed(43, 0));
    CHECK(mix_seed(42, 1, 2) == mix_seed(42, 1, 2));
    CHECK(mix_seed(42, 1, 2) != mix_seed(42, 2, 1));
}

TEST_CASE("uniform draws are reproducible and in [0,1)") {
    Rng a(mix_seed(7, 0));
    Rng b(mix_seed(7, 0));
    for (int i = 0; i < 1000; ++i) {
        double u = a.uniform();
        CHECK(u == b.uniform());
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("normal_cdf matches known values") {
    CHECK(normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
    // Phi(1) and Phi(-1), reference values from Abramowitz & Stegun.
    CHECK(normal_cdf(1.0) == doctest::Approx(0.841344746068543).epsilon(1e-12));
    CHECK(normal_cdf(-1.0) == doctest::Approx(0.158655253931457).epsilon(1e-12));
    CHECK(normal_cdf(1.959963984540054) == doctest::Approx(0.975).epsilon(1e-12));
}

TEST_CASE("normal_quantile inverts normal_cdf") {
    std::vector<double> ps = {1e-10, 1e-6, 0.01, 0.025, 0.3, 0.5,
                              0.7,   0.975, 0.99, 1.0 - 1e-6};
    for (double p : ps) {
        double x = normal_quantile(p);
        CHECK(normal_cdf(x) == doctest::Approx(p).epsilon(1e-9));
    }
    CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(normal_quantile(0.975) ==
          doctest::Approx(1.959963984540054).epsilon(1e-10));
}

TEST_CASE("normal moments are close to standard normal") {
    Rng rng(mix_seed(123, 5));
    const int n = 200000;
    double s = 0, s2 = 0, s3 = 0, s4 = 0;
    for (int i = 0; i < n; ++i) {
        double z = rng.normal();
        s += z;
        s2 += z * z;
        s3 += z * z * z;
        s4 += z * z * z * z;
    }
    CHECK(s / n == doctest::Approx(0.0).epsilon(0.02).scale(1.0));
    CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.02));
    CHECK(s3 / n == doctest::Approx(0.0).scale(1.0).epsilon(0.05));
    CHECK(s4 / n == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("exponential moments match Exp(1)") {
    Rng rng(mix_seed(9, 1));
    const int n = 200000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        double e = rng.exponential();
        CHECK(e >= 0.0);
        s += e;
        s2 += e * e;
    }
    CHECK(s / n == doctest::Approx(1.0).epsilon(0.02));
    CHECK(s2 / n == doctest::Approx(2.0).epsilon(0.04));
}

TEST_CASE("vector and matrix helpers reproduce scalar draws") {
    Rng a(mix_seed(1, 2));
    Rng b(mix_seed(1, 2));
    Eigen::VectorXd v = a.normal_vec(10);
    for (int i = 0; i < 10; ++i) CHECK(v[i] == b.normal());

    Rng c(mix_seed(1, 3));
    Rng d(mix_seed(1, 3));
    Eigen::MatrixXd m = c.normal_mat(4, 3);
    // Row-major fill order.
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) CHECK(m(i, j) == d.normal());
}
