#ifndef MSMIV_ESTIMATORS_HPP
#define MSMIV_ESTIMATORS_HPP

#include <Eigen/Dense>
#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include "msmiv/msm.hpp"
#include "msmiv/nuisance.hpp"
#include "msmiv/solver.hpp"
#include "msmiv/weights.hpp"

namespace msmiv {

enum class EstimatorId { sra_ipw, sra_dr, iv_ipw, iv_mr, iv_eff };

std::string to_string(EstimatorId id);
/// Throws InputError on unknown names.
EstimatorId parse_estimator(const std::string& name);
const std::vector<EstimatorId>& all_estimators();

/// One weighted dataset with its fitted nuisances and weights.
struct Problem {
  const FitContext* ctx = nullptr;
  MsmSpec msm;
  std::shared_ptr<const MsmTerms> terms;
  Eigen::VectorXd w;
  NuisanceValues nv;
  WeightTrack wt;
  SolverOptions solver;

  const Panel& panel() const { return ctx->panel(); }
  int n() const { return ctx->panel().n(); }
  int p() const { return msm.dim_beta(); }
};

Problem make_problem(const FitContext& ctx, const MsmSpec& msm, std::shared_ptr<const MsmTerms> terms,
                     const Eigen::VectorXd& w, const SolverOptions& solver = {});
/// Uses the panel's own weights.
Problem make_problem(const FitContext& ctx, const MsmSpec& msm, const SolverOptions& solver = {});

/// Augmentation map taking a terminal quantity X (n x m, linear in D_sm) to the
/// augmented influence values D-dagger (n x m). Refits the Psi regressions.
Eigen::MatrixXd dagger_transform(const Problem& pr, const Eigen::MatrixXd& X);
/// SRA doubly robust analogue: X / W-bar plus the C_j augmentation.
Eigen::MatrixXd dr_transform(const Problem& pr, const Eigen::MatrixXd& X);

struct BootstrapSummary {
  int B = 0;
  int failures = 0;
  Eigen::VectorXd lo, hi, se;
};

struct Estimate {
  EstimatorId id = EstimatorId::iv_ipw;
  Eigen::VectorXd beta;
  Eigen::MatrixXd covariance;
  double eq_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string nuisance_fingerprint;
  std::vector<std::string> trace;
  NuisanceDiagnostics nuisance_diag;
  nlohmann::json extra = nlohmann::json::object();
  BootstrapSummary bootstrap;

  nlohmann::json to_json() const;
};

struct EffComponents {
  int C = 0;
  Eigen::MatrixXd xi_y;       ///< n x C: T(Y e_c)
  Eigen::MatrixXd xi_x;       ///< n x C*p: column c*p + k holds T(x_k e_c)
  std::vector<int> stratum;   ///< per subject
  std::vector<std::vector<double>> strata_v;
  std::vector<Eigen::MatrixXd> heff;  ///< p x C per stratum
  std::vector<std::vector<std::string>> unobserved;  ///< regimes with no subjects, per stratum

  /// n x C values of Xi-tilde at beta.
  Eigen::MatrixXd xi_tilde(const Eigen::VectorXd& beta, int p) const;
  /// C x p gradient of Xi-tilde for subject i.
  Eigen::MatrixXd grad(int i, int p) const;
};

/// Builds Xi-tilde and, when beta_prelim is given, H_eff per V stratum.
EffComponents eff_components(const Problem& pr);
void set_heff(const Problem& pr, EffComponents& ec, const Eigen::VectorXd& beta_prelim, double ridge = 1e-8);

/// Per-subject estimating function values (n x p) at beta; iv_eff needs `ec`.
Eigen::MatrixXd influence(const Problem& pr, EstimatorId id, const Eigen::VectorXd& beta,
                          const EffComponents* ec = nullptr);
/// Weighted mean of influence().
Eigen::VectorXd mean_residual(const Problem& pr, EstimatorId id, const Eigen::VectorXd& beta,
                              const EffComponents* ec = nullptr);

/// J^-1 M J^-T / sum(w), M the weighted second moment of the influence rows.
Eigen::MatrixXd sandwich(const Eigen::MatrixXd& infl, const Eigen::VectorXd& w, const Eigen::MatrixXd& bread);

/// Weighted least squares start with weights |1/W| (IV or SRA).
Eigen::VectorXd beta_init(const Problem& pr, bool iv);

Estimate fit_ipw_sra(const Problem& pr);
Estimate fit_dr_sra(const Problem& pr);
Estimate fit_ipw_iv(const Problem& pr);
Estimate fit_mr_iv(const Problem& pr);
Estimate fit_efficient_iv(const Problem& pr);
Estimate estimate(EstimatorId id, const Problem& pr, bool with_covariance = true);

/// Percentile bootstrap with multinomial count weights; replicate b uses RNG stream b.
BootstrapSummary bootstrap(const FitContext& ctx, const MsmSpec& msm, std::shared_ptr<const MsmTerms> terms,
                           EstimatorId id, int B, std::uint64_t seed, const SolverOptions& solver = {},
                           double level = 0.95);

std::string nuisance_fingerprint(const NuisanceValues& nv);

}  // namespace msmiv

#endif  // MSMIV_ESTIMATORS_HPP
