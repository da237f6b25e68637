#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "npiv/config.hpp"
#include "npiv/csvio.hpp"
#include "npiv/dataset.hpp"
#include "npiv/dgp.hpp"

namespace npiv {

// One estimator applied to one sample. Absent quantities are NaN; failures
// carry ok = false and the reason in message.
struct EstimatorResult {
  std::string estimator;
  double theta = 0.0;
  double se = 0.0;       // analytic (score or formula based)
  double se_boot = 0.0;  // standard deviation of bootstrap draws
  double ci_lo = 0.0;    // bootstrap percentile when available, else normal
  double ci_hi = 0.0;
  double r2 = 0.0;  // held-out fit quality, regression runs only
  bool ok = false;
  std::string message;
  double runtime_ms = 0.0;
};

struct RepRecord {
  int rep = 0;
  std::uint64_t seed = 0;  // substream that generated the sample
  double theta_true = 0.0;
  std::vector<EstimatorResult> results;
};

// Monte Carlo aggregates for one estimator across replications.
struct McCell {
  std::string estimator;
  int n_reps = 0;  // successful fits entering the aggregates
  int failures = 0;
  double mean = 0.0;
  double sd = 0.0;
  double bias = 0.0;
  double rmse = 0.0;
  double mean_se = 0.0;    // average reported standard error
  double coverage = 0.0;   // share of intervals containing the target
  int ci_count = 0;        // replications contributing to coverage
  double mean_r2 = 0.0;
};

struct McSummary {
  std::string design;
  int n = 0;
  int replications = 0;
  double theta_true = 0.0;
  std::vector<McCell> cells;
};

// Runs every configured estimator on one sample. oracle supplies true
// conditional variances for the "true" sigma choice; heldout enables the
// held-out fit metric of the regression estimator. seed feeds estimator-side
// randomness (network initialization, sample splits, bootstrap draws).
std::vector<EstimatorResult> run_estimators(const RunConfig& cfg, const Dataset& data,
                                            const DgpOracle* oracle,
                                            const Dataset* heldout, std::uint64_t seed);

// Aggregates per-replication rows; cells appear in first-seen estimator order.
McSummary summarize(const std::string& design, int n, double theta_true,
                    const std::vector<RepRecord>& reps);

// Generates cfg.replications samples, fits all estimators on each (in
// parallel across replications), writes <out_dir>/results.csv and
// <out_dir>/summary.json, and returns the aggregates. Replication r draws
// from substream mix_seed(cfg.seed, r) regardless of thread scheduling.
McSummary run_simulation(const RunConfig& cfg);

// Builds a Dataset from named CSV columns. Rows with missing or non-numeric
// cells in a used column are dropped and counted.
Dataset dataset_from_csv(const CsvTable& table, const ColumnRoles& roles,
                         int* dropped_rows = nullptr);

// Fits the configured estimators on a user-supplied CSV and writes
// <out_dir>/estimates.csv.
std::vector<EstimatorResult> run_estimate(const RunConfig& cfg,
                                          const std::string& data_csv_path,
                                          const ColumnRoles& roles);

// Renders the contents of an output directory as aligned text tables.
// Prefers results.csv (simulation) and falls back to estimates.csv; throws
// if the directory holds neither.
std::string report(const std::string& dir);

// Parses results.csv rows back into replication records (used by report and
// by consistency checks against summary.json).
std::vector<RepRecord> rep_records_from_csv(const CsvTable& table);

// cfg threads unless the NPIV_THREADS environment variable overrides it
int resolve_threads(int requested);

}  // namespace npiv
