#ifndef MSMIV_CONDMODEL_HPP
#define MSMIV_CONDMODEL_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "msmiv/kernels.hpp"
#include "msmiv/panel.hpp"

namespace msmiv {

enum class FitKind { automatic, saturated, parametric };
enum class ArmVar { none, z, a };
enum class ResponseKind { mean, probability };

/// Conditioning set for a regression at time j. History means L(k) for
/// k <= j, A(k) and Z(k) for k < j; the arm variable (Z(j) or A(j)) is kept
/// separate so fitted values can be evaluated at both of its levels.
struct DesignSpec {
  int j = 0;
  /// When false only the V columns of L(0) enter.
  bool l_history = true;
  bool a_history = true;
  bool z_history = true;
  /// L column indices left out (V indices when l_history is false).
  std::vector<int> omit;
  ArmVar arm = ArmVar::none;

  std::string key() const;
};

/// Per-subject cell ids for one design on one panel. Built once and reused
/// across refits with different weights or responses.
class CellIndex {
 public:
  CellIndex(const Panel& panel, const DesignSpec& spec, FitKind kind);

  const DesignSpec& spec() const { return spec_; }
  bool saturated() const { return saturated_; }
  int n() const { return static_cast<int>(arm_.size()); }
  int cells() const { return cells_; }
  int arms() const { return spec_.arm == ArmVar::none ? 1 : 2; }
  const std::vector<std::int32_t>& cell() const { return cell_; }
  const std::vector<std::uint8_t>& arm() const { return arm_; }
  /// Intercept plus main effects of the design variables.
  const Eigen::MatrixXd& X() const { return X_; }
  const std::vector<std::string>& names() const { return names_; }

 private:
  DesignSpec spec_;
  bool saturated_ = true;
  int cells_ = 0;
  std::vector<std::int32_t> cell_;
  std::vector<std::uint8_t> arm_;
  Eigen::MatrixXd X_;
  std::vector<std::string> names_;
};

/// Weighted regression of R (n x m) within each arm: cell means when the
/// index is saturated, main-effects fits otherwise. Empty (cell, arm) slots
/// fall back to the arm's main-effects fit and are counted.
class ArmFit {
 public:
  static ArmFit fit(const CellIndex& index, const Eigen::MatrixXd& R, const Eigen::VectorXd& w,
                    ResponseKind kind, ExecPolicy policy);

  /// Fitted values for every subject with the arm variable set to `arm`.
  Eigen::MatrixXd predict(int arm) const;
  /// Fitted values at each subject's observed arm.
  Eigen::MatrixXd predict_observed() const;

  int fallback_cells() const { return fallback_cells_; }
  bool separation() const { return separation_; }
  /// Cell means (saturated) or coefficients (parametric) for audit output.
  std::string describe() const;

 private:
  void fit_arm_model(int arm, const Eigen::MatrixXd& R, const Eigen::VectorXd& w);
  Eigen::RowVectorXd parametric_row(int arm, int i) const;

  const CellIndex* index_ = nullptr;
  ResponseKind kind_ = ResponseKind::mean;
  int m_ = 0;
  CellSums sums_;
  /// Per arm: main-effects coefficients (d x m), or empty with arm_mean_ used instead.
  std::vector<Eigen::MatrixXd> coef_;
  std::vector<Eigen::RowVectorXd> arm_mean_;
  std::vector<bool> has_model_;
  int fallback_cells_ = 0;
  bool separation_ = false;
};

}  // namespace msmiv

#endif  // MSMIV_CONDMODEL_HPP
