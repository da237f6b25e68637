#include "npiv/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "npiv/dgp.hpp"
#include "npiv/smd.hpp"

namespace npiv {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::vector<std::string>& allowed,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw std::invalid_argument("config: unknown key \"" + it.key() + "\" in " + where);
  }
}

template <typename T>
void pick(const json& obj, const char* key, T& into) {
  if (obj.contains(key)) into = obj.at(key).get<T>();
}

json read_json_text(const std::string& text, const std::string& what) {
  json parsed = json::parse(text, nullptr, false);
  if (parsed.is_discarded()) throw std::invalid_argument(what + ": malformed JSON");
  if (!parsed.is_object()) throw std::invalid_argument(what + ": top level must be an object");
  return parsed;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

AnnConfig ann_from_json(const json& obj) {
  reject_unknown_keys(obj,
                      {"width", "layers", "activation", "lr", "min_steps", "max_steps",
                       "window", "rel_tol"},
                      "ann");
  AnnConfig ann;
  pick(obj, "width", ann.width);
  pick(obj, "layers", ann.layers);
  pick(obj, "activation", ann.activation);
  pick(obj, "lr", ann.lr);
  pick(obj, "min_steps", ann.min_steps);
  pick(obj, "max_steps", ann.max_steps);
  pick(obj, "window", ann.window);
  pick(obj, "rel_tol", ann.rel_tol);
  return ann;
}

}  // namespace

SigmaChoice parse_sigma_choice(const std::string& text) {
  SigmaChoice out;
  if (text == "projection") {
    out.kind = SigmaChoice::Kind::Projection;
  } else if (text == "identity") {
    out.kind = SigmaChoice::Kind::Identity;
  } else if (text == "true") {
    out.kind = SigmaChoice::Kind::Oracle;
  } else if (text.rfind("knn:", 0) == 0) {
    out.kind = SigmaChoice::Kind::Knn;
    try {
      size_t used = 0;
      out.k = std::stoi(text.substr(4), &used);
      if (used != text.size() - 4) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw std::invalid_argument("sigma choice: bad neighbor count in \"" + text + "\"");
    }
    if (out.k < 1) throw std::invalid_argument("sigma choice: k must be positive");
  } else {
    throw std::invalid_argument("sigma choice: expected projection|identity|true|knn:<k>, got \"" +
                                text + "\"");
  }
  return out;
}

std::string sigma_choice_name(const SigmaChoice& choice) {
  switch (choice.kind) {
    case SigmaChoice::Kind::Projection: return "projection";
    case SigmaChoice::Kind::Identity: return "identity";
    case SigmaChoice::Kind::Oracle: return "true";
    case SigmaChoice::Kind::Knn: return "knn:" + std::to_string(choice.k);
  }
  return "unknown";
}

RunConfig config_from_json(const std::string& text) {
  const json obj = read_json_text(text, "config");
  reject_unknown_keys(obj,
                      {"design", "noise_ratio", "p", "dim_xtilde", "rho", "n",
                       "replications", "seed", "estimators", "sieve", "structure", "ann",
                       "smd_sigma", "score_sigma", "bootstrap_b", "bootstrap_level",
                       "threads", "out_dir", "dump_samples"},
                      "config");
  RunConfig cfg;
  pick(obj, "design", cfg.design);
  pick(obj, "noise_ratio", cfg.noise_ratio);
  pick(obj, "p", cfg.p);
  pick(obj, "dim_xtilde", cfg.dim_xtilde);
  pick(obj, "rho", cfg.rho);
  pick(obj, "n", cfg.n);
  pick(obj, "replications", cfg.replications);
  pick(obj, "seed", cfg.seed);
  pick(obj, "estimators", cfg.estimators);
  pick(obj, "sieve", cfg.sieve);
  pick(obj, "structure", cfg.structure);
  if (obj.contains("ann")) cfg.ann = ann_from_json(obj.at("ann"));
  pick(obj, "smd_sigma", cfg.smd_sigma);
  pick(obj, "score_sigma", cfg.score_sigma);
  pick(obj, "bootstrap_b", cfg.bootstrap_b);
  pick(obj, "bootstrap_level", cfg.bootstrap_level);
  pick(obj, "threads", cfg.threads);
  pick(obj, "out_dir", cfg.out_dir);
  pick(obj, "dump_samples", cfg.dump_samples);
  validate_config(cfg);
  return cfg;
}

RunConfig config_from_file(const std::string& path) {
  return config_from_json(slurp(path));
}

std::string config_to_json(const RunConfig& cfg) {
  json obj;
  obj["design"] = cfg.design;
  obj["noise_ratio"] = cfg.noise_ratio;
  obj["p"] = cfg.p;
  obj["dim_xtilde"] = cfg.dim_xtilde;
  obj["rho"] = cfg.rho;
  obj["n"] = cfg.n;
  obj["replications"] = cfg.replications;
  obj["seed"] = cfg.seed;
  obj["estimators"] = cfg.estimators;
  obj["sieve"] = cfg.sieve;
  obj["structure"] = cfg.structure;
  obj["ann"] = {{"width", cfg.ann.width},         {"layers", cfg.ann.layers},
                {"activation", cfg.ann.activation}, {"lr", cfg.ann.lr},
                {"min_steps", cfg.ann.min_steps},   {"max_steps", cfg.ann.max_steps},
                {"window", cfg.ann.window},         {"rel_tol", cfg.ann.rel_tol}};
  obj["smd_sigma"] = cfg.smd_sigma;
  obj["score_sigma"] = cfg.score_sigma;
  obj["bootstrap_b"] = cfg.bootstrap_b;
  obj["bootstrap_level"] = cfg.bootstrap_level;
  obj["threads"] = cfg.threads;
  obj["out_dir"] = cfg.out_dir;
  obj["dump_samples"] = cfg.dump_samples;
  return obj.dump(2) + "\n";
}

ColumnRoles roles_from_json(const std::string& text) {
  const json obj = read_json_text(text, "roles");
  reject_unknown_keys(obj, {"outcome", "structural", "instruments"}, "roles");
  ColumnRoles roles;
  pick(obj, "outcome", roles.outcome);
  pick(obj, "structural", roles.structural);
  pick(obj, "instruments", roles.instruments);
  if (roles.outcome.empty()) throw std::invalid_argument("roles: outcome column is required");
  if (roles.structural.empty())
    throw std::invalid_argument("roles: at least one structural column is required");
  if (roles.instruments.empty())
    throw std::invalid_argument("roles: at least one instrument column is required");
  return roles;
}

ColumnRoles roles_from_file(const std::string& path) {
  return roles_from_json(slurp(path));
}

const std::vector<std::string>& known_estimators() {
  static const std::vector<std::string> names = {"p-ismd", "op-osmd", "is",
                                                 "es",     "is-x",    "es-x", "cef"};
  return names;
}

void validate_config(const RunConfig& cfg) {
  if (!cfg.design.empty()) design_from_name(cfg.design);  // throws on unknown
  if (cfg.n < 1) throw std::invalid_argument("config: n must be positive");
  if (cfg.replications < 1)
    throw std::invalid_argument("config: replications must be positive");
  if (cfg.estimators.empty()) throw std::invalid_argument("config: estimators is empty");
  for (const std::string& e : cfg.estimators) {
    const auto& known = known_estimators();
    if (std::find(known.begin(), known.end(), e) == known.end())
      throw std::invalid_argument("config: unknown estimator \"" + e + "\"");
    if (e == "cef" && cfg.design != "simple-a")
      throw std::invalid_argument("config: estimator cef applies only to design simple-a");
  }
  if (cfg.design == "simple-a" &&
      !(cfg.estimators.size() == 1 && cfg.estimators[0] == "cef"))
    throw std::invalid_argument("config: design simple-a runs the single estimator cef");
  sieve_kind_from_name(cfg.sieve);
  structure_from_name(cfg.structure);
  if (cfg.ann.width < 1 || cfg.ann.layers < 1)
    throw std::invalid_argument("config: ann width and layers must be positive");
  if (cfg.ann.activation != "sigmoid" && cfg.ann.activation != "relu" &&
      cfg.ann.activation != "tanh")
    throw std::invalid_argument("config: ann activation must be sigmoid, relu, or tanh");
  if (cfg.ann.lr <= 0) throw std::invalid_argument("config: ann lr must be positive");
  if (cfg.ann.min_steps < 1 || cfg.ann.max_steps < cfg.ann.min_steps)
    throw std::invalid_argument("config: ann step bounds must satisfy 1 <= min <= max");
  if (cfg.ann.window < 1) throw std::invalid_argument("config: ann window must be positive");
  if (cfg.ann.rel_tol <= 0) throw std::invalid_argument("config: ann rel_tol must be positive");
  if (!cfg.smd_sigma.empty()) parse_sigma_choice(cfg.smd_sigma);
  if (!cfg.score_sigma.empty()) parse_sigma_choice(cfg.score_sigma);
  if (cfg.bootstrap_b != 0 && cfg.bootstrap_b < 50)
    throw std::invalid_argument("config: bootstrap_b must be 0 or at least 50");
  if (cfg.bootstrap_level <= 0.0 || cfg.bootstrap_level >= 1.0)
    throw std::invalid_argument("config: bootstrap_level must lie in (0, 1)");
  if (cfg.threads < 1) throw std::invalid_argument("config: threads must be positive");
  if (cfg.out_dir.empty()) throw std::invalid_argument("config: out_dir is required");
}

}  // namespace npiv
