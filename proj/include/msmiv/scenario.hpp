#ifndef MSMIV_SCENARIO_HPP
#define MSMIV_SCENARIO_HPP

#include <cstdint>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "msmiv/dgp.hpp"
#include "msmiv/estimators.hpp"
#include "msmiv/msm.hpp"
#include "msmiv/nuisance.hpp"
#include "msmiv/panel.hpp"

namespace msmiv {

/// One experiment, read from JSON. Relative paths resolve against the
/// directory of the config file.
struct ScenarioConfig {
  nlohmann::json raw;
  std::string base_dir = ".";
  std::optional<DgpSpec> dgp;
  std::string panel_path;
  PanelSchema schema;
  int n = 1000;
  int replications = 1;
  std::uint64_t seed = 0;
  std::vector<EstimatorId> estimators;
  std::vector<MisspecPattern> misspec;
  std::optional<MsmSpec> msm;
  ReferenceDensity fstar = ReferenceDensity::uniform();
  NuisanceOptions nuisance;
  SolverOptions solver;
  int bootstrap = 0;
  double level = 0.95;
  int n_random = 20;
  std::uint64_t efficiency_seed = 7;
  std::string out_dir;
  std::string hash;  ///< FNV-1a of the canonical config JSON

  static ScenarioConfig from_json(const nlohmann::json& j, const std::string& base_dir = ".");
  static ScenarioConfig load(const std::string& path);

  const DgpSpec& require_dgp() const;
  /// The configured MSM, or the default for nv baseline columns.
  MsmSpec msm_for(int nv) const;
};

MsmSpec msm_from_json(const nlohmann::json& j);
nlohmann::json msm_to_json(const MsmSpec& msm);

/// Seed of replication r under master seed s.
std::uint64_t replication_seed(std::uint64_t master, std::uint64_t r);

std::string spec_hash(const DgpSpec& spec);

struct CommandResult {
  int exit_code = 0;
  nlohmann::json report;
};

/// Each command writes its files into out_dir and returns the JSON report it wrote.
CommandResult cmd_simulate(const ScenarioConfig& cfg, const std::string& out_dir);
CommandResult cmd_oracle(const ScenarioConfig& cfg, const std::string& out_dir);
CommandResult cmd_fit(const ScenarioConfig& cfg, const std::string& out_dir);
CommandResult cmd_robustness(const ScenarioConfig& cfg, const std::string& out_dir);
CommandResult cmd_efficiency(const ScenarioConfig& cfg, const std::string& out_dir);

}  // namespace msmiv

#endif  // MSMIV_SCENARIO_HPP
