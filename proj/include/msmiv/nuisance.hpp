#ifndef MSMIV_NUISANCE_HPP
#define MSMIV_NUISANCE_HPP

#include <Eigen/Dense>
#include <json.hpp>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "msmiv/condmodel.hpp"
#include "msmiv/panel.hpp"

namespace msmiv {

/// Which nuisance fits drop a covariate. Each field is empty (correct) or
/// the name of the L column removed from that fit's design at every time.
struct MisspecPattern {
  std::string label = "all_correct";
  std::string instrument_density, delta, treatment_mean, psi1, psi0, reference_density;
  std::string sra_treatment, sra_outcome;

  /// all_correct, i_only, ii_only, iii_only, all_wrong, sra_weights_wrong, sra_outcome_wrong.
  static MisspecPattern preset(const std::string& name, const std::string& column = "L");
  static const std::vector<std::string>& preset_names();
  /// Either a preset name, or an object mapping nuisance -> "correct" | "omit_covariate"
  /// with an optional "column" (default "L").
  static MisspecPattern from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Reference treatment law f*(A(k)=1 | V, A-bar(k-1)).
class ReferenceDensity {
 public:
  enum class Mode { uniform, fitted, user_table };

  static ReferenceDensity uniform();
  /// Logistic regression of A(k) on (1, V, A-bar(k-1)) per k, optionally
  /// without the V column named `omit`.
  static ReferenceDensity fitted(const Panel& panel, const Eigen::VectorXd& w, const std::string& omit = "");
  /// Keys look like "j=1,v0=0,a0=1"; values are P(A(j)=1 | ...).
  static ReferenceDensity user_table(std::map<std::string, double> table);
  /// {"mode": "uniform" | "fitted" | "user_table", "table": {...}}. Fitted mode
  /// is resolved later against a panel.
  static ReferenceDensity from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  Mode mode() const { return mode_; }
  bool resolved() const { return mode_ != Mode::fitted || !coef_.empty(); }
  /// P*(A(k)=1 | v, a(0..k-1)).
  double p1(int k, std::span<const double> v, std::span<const std::uint8_t> a_prev) const;
  static std::string key(int k, std::span<const double> v, std::span<const std::uint8_t> a_prev);

 private:
  Mode mode_ = Mode::uniform;
  std::vector<Eigen::VectorXd> coef_;
  std::vector<int> keep_v_;
  std::map<std::string, double> table_;
};

struct NuisanceOptions {
  FitKind kind = FitKind::automatic;
  double clamp = 1e-8;
  double delta_floor = 0.01;
  ReferenceDensity fstar = ReferenceDensity::uniform();
};

/// Design indices for every nuisance regression on one panel under one
/// misspecification pattern. Built once; fits with different weights reuse it.
class FitContext {
 public:
  FitContext(const Panel& panel, MisspecPattern misspec, NuisanceOptions options,
             ExecPolicy policy = ExecPolicy::parallel);
  FitContext(const FitContext&) = delete;
  FitContext& operator=(const FitContext&) = delete;

  const Panel& panel() const { return panel_; }
  const MisspecPattern& misspec() const { return misspec_; }
  const NuisanceOptions& options() const { return options_; }
  ExecPolicy policy() const { return policy_; }
  int J() const { return panel_.J(); }

  const CellIndex& fz(int j) const { return *fz_[static_cast<std::size_t>(j)]; }
  const CellIndex& trt_delta(int j) const { return *delta_[static_cast<std::size_t>(j)]; }
  const CellIndex& trt_mean(int j) const { return *mean_[static_cast<std::size_t>(j)]; }
  const CellIndex& psi1(int j) const { return *psi1_[static_cast<std::size_t>(j)]; }
  const CellIndex& psi0(int j) const { return *psi0_[static_cast<std::size_t>(j)]; }
  const CellIndex& sra_a(int j) const { return *sra_a_[static_cast<std::size_t>(j)]; }
  const CellIndex& sra_c(int j) const { return *sra_c_[static_cast<std::size_t>(j)]; }

  /// f*(A(j)=1 | V, A-bar(j-1)) per subject, n x J row-major.
  const std::vector<double>& fstar1() const { return fstar1_; }

 private:
  const CellIndex* index(const DesignSpec& spec);
  std::vector<int> omit_l(const std::string& column) const;

  const Panel& panel_;
  MisspecPattern misspec_;
  NuisanceOptions options_;
  ExecPolicy policy_;
  std::map<std::string, std::unique_ptr<CellIndex>> cache_;
  std::vector<const CellIndex*> fz_, delta_, mean_, psi1_, psi0_, sra_a_, sra_c_;
  std::vector<double> fstar1_;
};

struct NuisanceDiagnostics {
  int clamp_events = 0;
  int delta_floor_events = 0;
  int psi_delta_floor_events = 0;
  int fallback_cells = 0;
  bool separation = false;
  nlohmann::json to_json() const;
};

/// Fitted nuisance values per subject and time, n x J row-major.
struct NuisanceValues {
  int n = 0, J = 0;
  std::vector<double> pz1;        ///< f(Z(j)=1 | history), clamped
  std::vector<double> fz;         ///< f(Z(j) | history) at the observed Z(j)
  std::vector<double> delta;      ///< delta-hat(j), floored in magnitude
  std::vector<double> m0;         ///< E(A(j) | history, Z(j)=0)
  std::vector<double> psi_delta;  ///< Delta-hat(j) under the psi1 design, floored
  std::vector<double> fstar;      ///< f*(A(j) | V, A-bar(j-1)) at the observed A(j)
  std::vector<double> fa;         ///< SRA f(A(j) | L-bar(j), A-bar(j-1)) at the observed A(j), clamped
  bool has_iv = false, has_sra = false;
  NuisanceDiagnostics diag;

  std::size_t at(int i, int j) const { return static_cast<std::size_t>(i) * J + j; }
};

void fit_instrument_density(const FitContext& ctx, const Eigen::VectorXd& w, NuisanceValues& out);
/// delta-hat = arm difference of the treatment fit under the delta design;
/// m0 = Z(j)=0 arm of the fit under the treatment_mean design. Throws
/// NumericError when every |delta-hat| is below the floor (IV relevance).
void fit_treatment_model(const FitContext& ctx, const Eigen::VectorXd& w, NuisanceValues& out);
void set_reference_density(const FitContext& ctx, NuisanceValues& out);
void fit_sra_treatment(const FitContext& ctx, const Eigen::VectorXd& w, NuisanceValues& out);

NuisanceValues fit_nuisances(const FitContext& ctx, const Eigen::VectorXd& w, bool iv = true, bool sra = true);

/// Backward Psi regressions for a terminal quantity X (n x m, e.g. D_sm):
/// gamma1[j] = Psi-tilde_j, gamma0[j] = Psi_j(Z(j)=0), per subject.
struct PsiRecursion {
  std::vector<Eigen::MatrixXd> gamma1, gamma0;
  int fallback_cells = 0;
};
PsiRecursion fit_psi_recursion(const FitContext& ctx, const NuisanceValues& nv, const Eigen::VectorXd& w,
                               const Eigen::MatrixXd& terminal);

/// Backward C regressions of the SRA doubly robust estimator:
/// c_obs[j] = C-hat_{j+1} at the observed A(j), c_ref[j] = sum_a f*(a) C-hat_{j+1}(a).
struct CjRecursion {
  std::vector<Eigen::MatrixXd> c_obs, c_ref;
  int fallback_cells = 0;
};
CjRecursion fit_cj_recursion(const FitContext& ctx, const NuisanceValues& nv, const Eigen::VectorXd& w,
                             const Eigen::MatrixXd& terminal);

}  // namespace msmiv

#endif  // MSMIV_NUISANCE_HPP
