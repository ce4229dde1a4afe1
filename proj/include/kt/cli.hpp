#pragma once

// Command-line layer: JSON experiment configs, subcommand runners that
// return a report plus artifact files, and the output bundle writer.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kt/models.hpp"

namespace kt {

using Json = nlohmann::ordered_json;

// One model entry of a config. `name` selects the builtin constructor:
// word_tree, word_tree_invariant, delta, sink_chain or finite_state.
struct ModelConfig {
  std::string name = "word_tree";
  WordTreeParams word_tree;  // word_tree, word_tree_invariant; m also for delta
  double deficit = 0.5;      // sink_chain
  std::vector<std::vector<int>> maps;        // finite_state
  std::vector<std::vector<double>> kernel;   // finite_state (inline or from kernel_csv)
  std::string kernel_csv;                    // finite_state, resolved relative to the config file
  // Certificate overrides for finite_state: r table per state.
  std::vector<double> certificate_r;
  double certificate_C = 0.0;
  double certificate_beta = 0.5;
  std::string certificate_form = "defect";
  bool use_certificate = true;
  std::vector<std::string> base;  // point labels; empty means the model default
  std::size_t base_depth = 0;     // base := orbit_closure(base, base_depth)
};

struct ExperimentConfig {
  std::vector<ModelConfig> models{ModelConfig{}};
  std::size_t horizon = 8;
  double tol = 1e-9;
  double ceiling = 1e12;
  std::optional<std::uint64_t> seed;
  std::size_t nsamples = 20000;
  bool write_samples = false;
  int threads = 1;
  std::string out = "kt-out";
  std::string format = "both";  // csv, json or both
  // diagonal
  std::optional<double> witness_epsilon;  // enables the blow-up witness search
  double witness_rho = 0.0;               // 0 means m
  // boundary
  std::size_t cylinder_levels = 8;
  std::size_t boundary_levels = 8;  // N of the boundary feature Gram, capped at horizon
  std::vector<std::vector<double>> nu;  // Bernoulli weight vectors; default uniform and skewed
  // verify
  bool inject_fault = false;
};

// Throws InputError with a path-qualified message ("models[0].m: ...").
// Relative kernel_csv paths resolve against base_dir.
ExperimentConfig parse_config(const Json& j, const std::string& base_dir = ".");
ExperimentConfig load_config(const std::string& path);
// Resolved form; parse_config(config_to_json(c)) reproduces c.
Json config_to_json(const ExperimentConfig& c);

// Builds the model and its base set, validating every base label.
struct ResolvedModel {
  Model model;
  std::vector<Point> base;
};
ResolvedModel resolve_model(const ModelConfig& mc, double tol);

struct Check {
  std::string module;
  std::string identity;
  std::string subject;  // model and point context
  double residual = 0.0;
  double tolerance = 0.0;
  bool pass = true;
};

struct RunReport {
  std::string command;
  Json summary;
  std::vector<Check> checks;
  std::map<std::string, std::string> csv;  // file name -> contents
  bool pass() const;
  // first failing check, if any
  const Check* first_failure() const;
};

RunReport cmd_tower(const ExperimentConfig& config);
RunReport cmd_diagonal(const ExperimentConfig& config);
RunReport cmd_gaussian(const ExperimentConfig& config);
RunReport cmd_boundary(const ExperimentConfig& config);
RunReport cmd_verify(const ExperimentConfig& config);

// Writes summary.json (format json/both), the CSVs (csv/both) and
// config.json into dir, creating it.
void write_bundle(const RunReport& report, const ExperimentConfig& config, const std::string& dir);

inline constexpr int kExitCheckFailed = 1;

// Full command line: kt <tower|diagonal|gaussian|boundary|verify> [flags].
int run_cli(int argc, char** argv);

}  // namespace kt
