#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "npiv/basis.hpp"
#include "npiv/csvio.hpp"
#include "npiv/harness.hpp"
#include "npiv/projector.hpp"
#include "npiv/rng.hpp"

using namespace npiv;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fresh_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("npiv_harness_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

EstimatorResult ok_result(const std::string& est, double theta, double se, double lo,
                          double hi) {
  EstimatorResult e;
  e.estimator = est;
  e.theta = theta;
  e.se = se;
  e.se_boot = kNaN;
  e.ci_lo = lo;
  e.ci_hi = hi;
  e.r2 = kNaN;
  e.ok = true;
  return e;
}

// rows without the trailing runtime column, for byte comparisons
std::vector<std::vector<std::string>> strip_runtime(const CsvTable& t) {
  auto rows = t.rows;
  for (auto& r : rows) r.pop_back();
  return rows;
}

RunConfig base_mc2_config(const std::string& dir) {
  RunConfig cfg;
  cfg.design = "mc2";
  cfg.dim_xtilde = 0;
  cfg.n = 250;
  cfg.replications = 1;
  cfg.seed = 41;
  cfg.estimators = {"p-ismd", "op-osmd", "is", "es"};
  cfg.sieve = "spline";
  cfg.out_dir = dir;
  return cfg;
}

}  // namespace

TEST_CASE("summarize matches hand-computed aggregates") {
  std::vector<RepRecord> reps(3);
  const double tt = 1.0;
  for (int r = 0; r < 3; ++r) {
    reps[r].rep = r;
    reps[r].seed = 100 + r;
    reps[r].theta_true = tt;
  }
  reps[0].results = {ok_result("a", 0.9, 0.10, 0.7, 1.1)};
  reps[1].results = {ok_result("a", 1.2, 0.20, 1.1, 1.3)};
  reps[2].results = {ok_result("a", 1.05, 0.12, 0.9, 1.2)};
  // one failure plus one success for a second estimator
  EstimatorResult bad;
  bad.estimator = "b";
  bad.theta = bad.se = bad.se_boot = bad.ci_lo = bad.ci_hi = bad.r2 = kNaN;
  bad.ok = false;
  bad.message = "boom";
  reps[0].results.push_back(bad);
  reps[1].results.push_back(ok_result("b", 0.8, kNaN, kNaN, kNaN));

  const McSummary s = summarize("mc2", 250, tt, reps);
  REQUIRE(s.cells.size() == 2);

  const McCell& a = s.cells[0];
  CHECK(a.estimator == "a");
  CHECK(a.n_reps == 3);
  CHECK(a.failures == 0);
  const double mean = (0.9 + 1.2 + 1.05) / 3.0;
  CHECK(a.mean == doctest::Approx(mean).epsilon(1e-12));
  const double sd = std::sqrt(((0.9 - mean) * (0.9 - mean) + (1.2 - mean) * (1.2 - mean) +
                               (1.05 - mean) * (1.05 - mean)) /
                              2.0);
  CHECK(a.sd == doctest::Approx(sd).epsilon(1e-12));
  CHECK(a.bias == doctest::Approx(mean - tt).epsilon(1e-12));
  const double rmse = std::sqrt((0.01 + 0.04 + 0.0025) / 3.0);
  CHECK(a.rmse == doctest::Approx(rmse).epsilon(1e-12));
  CHECK(a.mean_se == doctest::Approx((0.10 + 0.20 + 0.12) / 3.0).epsilon(1e-12));
  CHECK(a.ci_count == 3);
  // intervals [0.7,1.1] and [0.9,1.2] cover 1.0; [1.1,1.3] does not
  CHECK(a.coverage == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  const McCell& b = s.cells[1];
  CHECK(b.n_reps == 1);
  CHECK(b.failures == 1);
  CHECK(b.mean == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(std::isnan(b.sd));
  CHECK(std::isnan(b.coverage));
}

TEST_CASE("run_estimate recovers a closed-form exogenous fit") {
  // Exogenous noiseless data with h0 inside the spline span: the identity
  // SMD fit interpolates h0 exactly, so the plug-in equals mean(1 + w).
  const std::string dir = fresh_dir("estimate");
  const int n = 120;
  Rng rng(7);
  CsvTable t;
  t.header = {"y", "w", "junk"};
  double d1_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = 2.0 * rng.uniform() - 1.0;
    const double y = w + 0.5 * w * w;
    d1_sum += 1.0 + w;
    t.rows.push_back({format_double(y), format_double(w), "text"});
  }
  const std::string csv = dir + "/data.csv";
  write_csv(csv, t);

  RunConfig cfg;
  cfg.estimators = {"p-ismd"};
  cfg.sieve = "spline";
  cfg.out_dir = dir;
  ColumnRoles roles;
  roles.outcome = "y";
  roles.structural = {"w"};
  roles.instruments = {"w"};

  const auto res = run_estimate(cfg, csv, roles);
  REQUIRE(res.size() == 1);
  CHECK(res[0].ok);
  CHECK(res[0].theta == doctest::Approx(d1_sum / n).epsilon(1e-8));

  // the written table reproduces the returned numbers
  const CsvTable out = read_csv(dir + "/estimates.csv");
  REQUIRE(out.rows.size() == 1);
  CHECK(out.rows[0][out.col("estimator")] == "p-ismd");
  CHECK(std::stod(out.rows[0][out.col("theta")]) == doctest::Approx(res[0].theta));
  CHECK(out.rows[0][out.col("n")] == std::to_string(n));
}

TEST_CASE("partially linear run_estimate matches a hand-rolled sieve 2SLS") {
  const std::string dir = fresh_dir("tsls");
  const int n = 200;
  Rng rng(19);
  Eigen::MatrixXd y2(n, 2), x(n, 3);
  Eigen::VectorXd y1(n);
  for (int i = 0; i < n; ++i) {
    const double z1 = rng.uniform(), z2 = rng.uniform(), w = rng.uniform();
    const double u = rng.normal();
    const double r = z1 + z2 + 0.5 * u + 0.3 * rng.normal();
    y2(i, 0) = r;
    y2(i, 1) = w;
    x(i, 0) = z1;
    x(i, 1) = z2;
    x(i, 2) = w;
    y1(i) = 2.0 * r + std::sin(2.0 * w) + u;
  }

  CsvTable t;
  t.header = {"y", "r", "w", "z1", "z2"};
  for (int i = 0; i < n; ++i)
    t.rows.push_back({format_double(y1(i)), format_double(y2(i, 0)),
                      format_double(y2(i, 1)), format_double(x(i, 0)),
                      format_double(x(i, 1))});
  const std::string csv = dir + "/iv.csv";
  write_csv(csv, t);

  RunConfig cfg;
  cfg.estimators = {"p-ismd"};
  cfg.sieve = "spline";
  cfg.structure = "pl";
  cfg.out_dir = dir;
  ColumnRoles roles;
  roles.outcome = "y";
  roles.structural = {"r", "w"};
  roles.instruments = {"z1", "z2", "w"};
  const auto res = run_estimate(cfg, csv, roles);
  REQUIRE(res.size() == 1);
  REQUIRE(res[0].ok);

  // same projected least squares assembled by hand: instruments are the
  // cubic interaction spline on x, regressors [r, quadratic spline in w]
  const Eigen::MatrixXd lam =
      FittedBasis::fit(BasisSpec{BasisKind::SplineKnots2, 4, true, {}, 0}, x)
          .eval(x)
          .values;
  const Projector p(lam);
  BasisSpec rest{BasisKind::SplineKnots2, 3, false, {1}, 0};
  const Eigen::MatrixXd bw = FittedBasis::fit(rest, y2).eval(y2).values;
  Eigen::MatrixXd m(n, 1 + bw.cols());
  m.col(0) = y2.col(0);
  m.rightCols(bw.cols()) = bw;
  const Eigen::MatrixXd pm = p.apply(m);
  const Eigen::VectorXd c =
      psd_pinv_solve(m.transpose() * pm / n, m.transpose() * p.apply(y1) / n);
  CHECK(res[0].theta == doctest::Approx(c(0)).epsilon(1e-8));
}

TEST_CASE("dataset_from_csv drops incomplete rows and validates names") {
  CsvTable t;
  t.header = {"y", "a", "z"};
  t.rows = {{"1.0", "2.0", "3.0"},
            {"", "2.0", "3.0"},
            {"1.5", "oops", "3.0"},
            {"nan", "2.0", "3.0"},
            {"2.5", "4.0", "5.0"}};
  ColumnRoles roles;
  roles.outcome = "y";
  roles.structural = {"a"};
  roles.instruments = {"z"};
  int dropped = -1;
  const Dataset d = dataset_from_csv(t, roles, &dropped);
  CHECK(d.n() == 2);
  CHECK(dropped == 3);
  CHECK(d.y1(0) == 1.0);
  CHECK(d.y2(1, 0) == 4.0);
  CHECK(d.x(1, 0) == 5.0);

  ColumnRoles missing = roles;
  missing.instruments = {"nope"};
  CHECK_THROWS_AS((void)dataset_from_csv(t, missing), std::invalid_argument);

  CsvTable empty;
  empty.header = t.header;
  empty.rows = {{"", "1", "2"}};
  CHECK_THROWS_AS((void)dataset_from_csv(empty, roles), std::invalid_argument);
}

TEST_CASE("simulation outputs: schema, counts, summary consistency, report") {
  const std::string dir = fresh_dir("sim");
  RunConfig cfg = base_mc2_config(dir);
  cfg.replications = 3;

  const McSummary s = run_simulation(cfg);
  CHECK(s.replications == 3);
  REQUIRE(s.cells.size() == 4);
  for (const auto& c : s.cells) {
    CHECK(c.failures == 0);
    CHECK(c.n_reps == 3);
    CHECK(std::isfinite(c.mean));
    CHECK(std::isfinite(c.sd));
  }

  const CsvTable t = read_csv(dir + "/results.csv");
  CHECK(t.comments.size() == 1);
  CHECK(t.header.size() == 17);
  CHECK(t.header[0] == "design");
  CHECK(t.header.back() == "runtime_ms");
  CHECK(t.rows.size() == 12);  // 3 reps x 4 estimators

  // summary.json agrees with a recomputation from the CSV rows
  std::ifstream in(dir + "/summary.json");
  REQUIRE(in.good());
  const json j = json::parse(in);
  CHECK(j["design"] == "mc2");
  CHECK(j["replications"] == 3);
  const auto reps = rep_records_from_csv(t);
  const McSummary redo = summarize("mc2", cfg.n, j["theta_true"].get<double>(), reps);
  REQUIRE(j["cells"].size() == redo.cells.size());
  for (std::size_t k = 0; k < redo.cells.size(); ++k) {
    const auto& cj = j["cells"][k];
    const auto& ck = redo.cells[k];
    CHECK(cj["estimator"].get<std::string>() == ck.estimator);
    CHECK(cj["n_reps"].get<int>() == ck.n_reps);
    CHECK(cj["mean"].get<double>() == doctest::Approx(ck.mean).epsilon(1e-12));
    CHECK(cj["sd"].get<double>() == doctest::Approx(ck.sd).epsilon(1e-12));
    CHECK(cj["rmse"].get<double>() == doctest::Approx(ck.rmse).epsilon(1e-12));
    CHECK(cj["coverage"].get<double>() == doctest::Approx(ck.coverage).epsilon(1e-12));
  }

  const std::string rendered = report(dir);
  CHECK(rendered.find("design=mc2") != std::string::npos);
  CHECK(rendered.find("estimator") != std::string::npos);
  CHECK(rendered.find("p-ismd") != std::string::npos);
  CHECK(rendered.find("op-osmd") != std::string::npos);

  const std::string empty = fresh_dir("empty");
  CHECK_THROWS_WITH_AS((void)report(empty), doctest::Contains("no runs found"),
                       std::runtime_error);
}

TEST_CASE("parallel replications reproduce the serial run byte for byte") {
  const std::string d1 = fresh_dir("serial");
  const std::string d2 = fresh_dir("threaded");
  RunConfig cfg = base_mc2_config(d1);
  cfg.replications = 4;
  cfg.estimators = {"p-ismd", "op-osmd", "is-x"};
  cfg.n = 180;

  const McSummary s1 = run_simulation(cfg);
  cfg.out_dir = d2;
  cfg.threads = 3;
  const McSummary s2 = run_simulation(cfg);

  const CsvTable t1 = read_csv(d1 + "/results.csv");
  const CsvTable t2 = read_csv(d2 + "/results.csv");
  CHECK(t1.header == t2.header);
  CHECK(strip_runtime(t1) == strip_runtime(t2));

  REQUIRE(s1.cells.size() == s2.cells.size());
  for (std::size_t k = 0; k < s1.cells.size(); ++k) {
    CHECK(s1.cells[k].mean == s2.cells[k].mean);
    CHECK(s1.cells[k].sd == s2.cells[k].sd);
  }
}

TEST_CASE("dumped samples re-estimate to identical results") {
  const std::string dir = fresh_dir("roundtrip");
  RunConfig cfg = base_mc2_config(dir);
  cfg.estimators = {"p-ismd", "is", "is-x"};
  cfg.dump_samples = true;
  run_simulation(cfg);

  const CsvTable results = read_csv(dir + "/results.csv");
  REQUIRE(results.rows.size() == 3);

  RunConfig ecfg;
  ecfg.estimators = cfg.estimators;
  ecfg.sieve = cfg.sieve;
  ecfg.out_dir = fresh_dir("roundtrip_est");
  ecfg.seed = mix_seed(cfg.seed, 0);  // replication 0 substream
  ColumnRoles roles;
  roles.outcome = "y1";
  roles.structural = {"y2_1", "y2_2", "y2_3"};
  roles.instruments = {"x_1", "x_2", "x_3"};
  const auto res = run_estimate(ecfg, dir + "/sample_0.csv", roles);

  const int c_est = results.col("estimator");
  const int c_theta = results.col("theta");
  const int c_se = results.col("se");
  for (const auto& e : res) {
    bool found = false;
    for (const auto& row : results.rows) {
      if (row[c_est] != e.estimator) continue;
      found = true;
      CHECK(format_double(e.theta) == row[c_theta]);
      CHECK(format_double(e.se) == row[c_se]);
    }
    CHECK(found);
  }
}

TEST_CASE("bootstrap intervals populate for the smd estimators") {
  const std::string dir = fresh_dir("boot");
  RunConfig cfg = base_mc2_config(dir);
  cfg.n = 150;
  cfg.estimators = {"p-ismd", "is"};
  cfg.bootstrap_b = 60;

  const McSummary s = run_simulation(cfg);
  const CsvTable t = read_csv(dir + "/results.csv");
  const int c_est = t.col("estimator");
  const int c_lo = t.col("ci_lo");
  const int c_hi = t.col("ci_hi");
  const int c_seb = t.col("se_boot");
  const int c_theta = t.col("theta");
  bool saw_smd = false, saw_score = false;
  for (const auto& row : t.rows) {
    const double lo = std::stod(row[c_lo]);
    const double hi = std::stod(row[c_hi]);
    const double theta = std::stod(row[c_theta]);
    if (row[c_est] == "p-ismd") {
      saw_smd = true;
      CHECK(std::isfinite(std::stod(row[c_seb])));
      CHECK(std::stod(row[c_seb]) > 0.0);
      CHECK(lo < hi);
      CHECK(lo < theta);
      CHECK(theta < hi);
    } else {
      saw_score = true;  // analytic interval, no bootstrap draws
      CHECK(row[c_seb] == "nan");
      CHECK(lo < hi);
    }
  }
  CHECK(saw_smd);
  CHECK(saw_score);
  CHECK(s.cells[0].ci_count == 1);
}

TEST_CASE("network sieve runs the structural pipeline end to end") {
  const std::string dir = fresh_dir("ann");
  RunConfig cfg = base_mc2_config(dir);
  cfg.n = 150;
  cfg.estimators = {"p-ismd", "op-osmd"};
  cfg.sieve = "ann";
  cfg.ann.width = 6;
  cfg.ann.min_steps = 150;
  cfg.ann.max_steps = 200;
  cfg.ann.window = 50;

  const McSummary s = run_simulation(cfg);
  REQUIRE(s.cells.size() == 2);
  for (const auto& c : s.cells) {
    CHECK(c.failures == 0);
    CHECK(std::isfinite(c.mean));
  }
}

TEST_CASE("estimator failures are recorded, not fatal") {
  const std::string dir = fresh_dir("fail");
  RunConfig cfg = base_mc2_config(dir);
  cfg.estimators = {"p-ismd", "es"};
  cfg.score_sigma = "knn:100000";  // far more neighbors than observations

  const McSummary s = run_simulation(cfg);
  REQUIRE(s.cells.size() == 2);
  CHECK(s.cells[0].failures == 0);
  CHECK(s.cells[1].failures == 1);
  CHECK(s.cells[1].n_reps == 0);

  const CsvTable t = read_csv(dir + "/results.csv");
  const int c_ok = t.col("ok");
  const int c_msg = t.col("message");
  const int c_est = t.col("estimator");
  for (const auto& row : t.rows) {
    if (row[c_est] == "es") {
      CHECK(row[c_ok] == "0");
      CHECK(row[c_msg].find("sigma knn") != std::string::npos);
    } else {
      CHECK(row[c_ok] == "1");
    }
  }
}

TEST_CASE("thread resolution honors the environment override") {
  unsetenv("NPIV_THREADS");
  CHECK(resolve_threads(2) == 2);
  CHECK(resolve_threads(0) == 1);
  setenv("NPIV_THREADS", "3", 1);
  CHECK(resolve_threads(1) == 3);
  setenv("NPIV_THREADS", "junk", 1);
  CHECK(resolve_threads(2) == 2);
  unsetenv("NPIV_THREADS");
}
