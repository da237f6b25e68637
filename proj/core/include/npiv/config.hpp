#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace npiv {

// network architecture and optimizer settings, one block per run
struct AnnConfig {
  int width = 10;
  int layers = 1;
  std::string activation = "sigmoid";
  double lr = 0.01;
  long min_steps = 3000;
  long max_steps = 5000;
  long window = 500;
  double rel_tol = 1e-5;
};

// A declarative run description. The same structure drives simulation
// (design + replications) and estimation on a user CSV (estimators/sieve
// settings only). Parsing rejects unknown keys; the JSON schema shipped
// under schemas/ documents the accepted shape.
struct RunConfig {
  // simulation source; empty design means the config only configures estimation
  std::string design;
  double noise_ratio = 0.0;  // simple-a
  int p = 1;                 // simple-b
  int dim_xtilde = 0;        // structural designs
  double rho = 0.0;

  int n = 1000;
  int replications = 1;
  std::uint64_t seed = 1;

  std::vector<std::string> estimators = {"p-ismd"};
  std::string sieve = "spline";
  std::string structure = "np";
  AnnConfig ann;
  // conditional variance choices: "projection", "identity", "true", "knn:<k>";
  // empty picks the documented default for the sieve and sample size
  std::string smd_sigma;
  std::string score_sigma;
  int bootstrap_b = 0;  // 0 disables bootstrap confidence intervals
  double bootstrap_level = 0.95;
  int threads = 1;
  std::string out_dir = "out";
  bool dump_samples = false;  // also write each generated sample as CSV
};

// named columns of a user-supplied CSV; structural columns are ordered and
// the first one is the derivative target. Columns may be shared between
// structural and instrument lists.
struct ColumnRoles {
  std::string outcome;
  std::vector<std::string> structural;
  std::vector<std::string> instruments;
};

// parsed conditional-variance choice
struct SigmaChoice {
  enum class Kind { Projection, Identity, Oracle, Knn };
  Kind kind = Kind::Projection;
  int k = 5;
};

SigmaChoice parse_sigma_choice(const std::string& text);
std::string sigma_choice_name(const SigmaChoice& choice);

RunConfig config_from_json(const std::string& text);
RunConfig config_from_file(const std::string& path);
std::string config_to_json(const RunConfig& cfg);

ColumnRoles roles_from_json(const std::string& text);
ColumnRoles roles_from_file(const std::string& path);

// throws std::invalid_argument describing the first violated constraint
void validate_config(const RunConfig& cfg);

const std::vector<std::string>& known_estimators();

}  // namespace npiv
