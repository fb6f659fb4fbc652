#ifndef MSMIV_ORACLE_HPP
#define MSMIV_ORACLE_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <json.hpp>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "msmiv/dgp.hpp"
#include "msmiv/estimators.hpp"
#include "msmiv/msm.hpp"
#include "msmiv/nuisance.hpp"
#include "msmiv/regime.hpp"

namespace msmiv {

struct IdentityReport {
  std::string name;
  std::vector<std::string> labels;
  std::vector<double> lhs, rhs;
  double max_abs_diff = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string note;

  static IdentityReport make(std::string name, std::vector<std::string> labels, std::vector<double> lhs,
                             std::vector<double> rhs, double tol);
  nlohmann::json to_json(bool with_rows = true) const;
};

/// Observed law over codes with three bits per time (L at 3j, Z at 3j+1, A at 3j+2).
struct ObservedLaw {
  int J = 0;
  std::vector<double> p;
  std::vector<double> ey;   ///< E[Y(m) | code] at (m-1) * size + code
  std::vector<double> ey2;  ///< E[Y(J)^2 | code]
  std::size_t size() const { return p.size(); }
  double mean_y(int m, std::uint32_t o) const { return ey[static_cast<std::size_t>(m - 1) * size() + o]; }
};

ObservedLaw observed_law(const DgpSpec& spec, const JointLaw& law);
ObservedLaw observed_law(const DgpSpec& spec);

namespace obit {
constexpr int l(int j) { return 3 * j; }
constexpr int z(int j) { return 3 * j + 1; }
constexpr int a(int j) { return 3 * j + 2; }
inline int get(std::uint32_t o, int pos) { return static_cast<int>((o >> pos) & 1u); }
/// L(k) for k <= j, Z(k) and A(k) for k < j.
std::uint32_t history(int j);
}  // namespace obit

/// E[Y_a(m) | V = v] by the latent g-formula (m defaults to J). Without a V
/// column (or with v empty) the marginal mean is returned.
double counterfactual_mean(const DgpSpec& spec, const Regime& regime, std::optional<double> v = std::nullopt,
                           int m = -1);

/// Resolves fitted reference densities against the population law.
ReferenceDensity resolve_reference(const DgpSpec& spec, const ReferenceDensity& fstar, const std::string& omit = "");

/// Solves sum_v P(v) sum_a prod f*(a) h(a,v) (E[Y_a|v] - g(a,v;beta)) = 0.
Eigen::VectorXd true_beta(const DgpSpec& spec, const MsmSpec& msm, const ReferenceDensity& fstar);

IdentityReport check_lemma1(const DgpSpec& spec, double tol = 1e-10);

/// g(A-bar, L-bar) = c0(a, l) + c1(a, l) * Y with a, l bit codes (bit k = time k).
struct TestFunction {
  std::string name;
  std::function<std::pair<double, double>(std::uint32_t a, std::uint32_t l)> coef;
};
std::vector<TestFunction> lemma2_battery(int J);

/// Compares E(g / W-dagger | V) with sum_a E{g(a, L_a) | V} prod f* per V stratum.
IdentityReport check_lemma2(const DgpSpec& spec, const TestFunction& g, const ReferenceDensity& fstar,
                            double tol = 1e-10);

/// E[1 / W-dagger(J-1)] and P(W-dagger(J-1) > 0) under the exact observed law.
struct InverseWeightMoments {
  double mean_inverse = 0.0;
  double positive_fraction = 0.0;
};
InverseWeightMoments inverse_weight_moments(const DgpSpec& spec, const ReferenceDensity& fstar);

/// E[D-dagger(h, beta)] with every nuisance at its exact value; beta defaults to beta0.
IdentityReport check_influence_zero(const DgpSpec& spec, const MsmSpec& msm, const ReferenceDensity& fstar,
                                    std::optional<Eigen::VectorXd> beta = std::nullopt, double tol = 1e-10);

/// Exact observed law as a weighted panel: two rows per observed history,
/// Y = E[Y|history] +/- sd(Y|history), each with half the history's probability.
Panel population_panel(const DgpSpec& spec);

/// A population panel with nuisances fitted by weighted cell means, so fits
/// are exact conditional expectations (omitted covariates marginalized out).
struct PopulationFit {
  std::unique_ptr<Panel> panel;
  std::unique_ptr<FitContext> ctx;
  Problem problem;
};
std::unique_ptr<PopulationFit> population_fit(const DgpSpec& spec, const MsmSpec& msm, const MisspecPattern& misspec,
                                              const ReferenceDensity& fstar, const SolverOptions& solver = {});

struct PlimResult {
  Eigen::VectorXd beta;
  double eq_norm = 0.0;
  bool converged = false;
  std::vector<std::string> trace;
  nlohmann::json to_json() const;
};

SolverOptions plim_solver_options();

PlimResult plim_solve(const DgpSpec& spec, const MsmSpec& msm, EstimatorId id, const MisspecPattern& misspec,
                      const ReferenceDensity& fstar, const SolverOptions& solver = plim_solver_options());

/// Exact asymptotic variances at beta0 under correct nuisances.
struct EfficiencyReport {
  Eigen::VectorXd beta0;
  Eigen::MatrixXd v_eff, v_mr, v_ipw;
  std::vector<Eigen::MatrixXd> v_random;
  /// min over random H and coordinates of V_H(k,k) - V_eff(k,k).
  double worst_margin = 0.0;
  bool pass = false;
};

/// B^-1 E[IF IF'] B^-T for D-dagger(H) = H(V) Xi-tilde at beta.
Eigen::MatrixXd population_variance(const Problem& pr, const EffComponents& ec, const std::vector<Eigen::MatrixXd>& H,
                                    const Eigen::VectorXd& beta);

EfficiencyReport efficiency_population(const DgpSpec& spec, const MsmSpec& msm, const ReferenceDensity& fstar,
                                       int n_random = 20, std::uint64_t seed = 7, double slack = 1e-10);

}  // namespace msmiv

#endif  // MSMIV_ORACLE_HPP
