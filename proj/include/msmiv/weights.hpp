#ifndef MSMIV_WEIGHTS_HPP
#define MSMIV_WEIGHTS_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "msmiv/nuisance.hpp"
#include "msmiv/panel.hpp"

namespace msmiv {

/// Cumulative weights per subject and time (n x J, row-major). Products run
/// over k = 0..j and are accumulated as log|w| plus a sign.
struct WeightTrack {
  int n = 0, J = 0;
  std::vector<double> sra, inv_sra, log_sra;
  std::vector<double> iv, inv_iv, log_abs_iv;
  std::vector<std::int8_t> sign_iv;
  std::vector<double> iv1, iv2;  ///< single-time factors W1(j), W2(j)
  int clamp_events = 0;
  int floor_events = 0;
  bool has_iv = false, has_sra = false;

  std::size_t at(int i, int j) const { return static_cast<std::size_t>(i) * J + j; }
  /// 1 / W-dagger(j) with the convention 1 / W-dagger(-1) = 1.
  double inv_iv_prev(int i, int j) const { return j <= 0 ? 1.0 : inv_iv[at(i, j - 1)]; }
  double inv_sra_prev(int i, int j) const { return j <= 0 ? 1.0 : inv_sra[at(i, j - 1)]; }
  double inv_iv_final(int i) const { return inv_iv[at(i, J - 1)]; }
  double inv_sra_final(int i) const { return inv_sra[at(i, J - 1)]; }
};

/// W-bar(j) = prod_k f(A(k) | history) / f*(A(k) | V, A-bar(k-1)).
void sra_weights(const Panel& panel, const NuisanceValues& nv, WeightTrack& out);
/// W-dagger(j) = prod_k W1(k) W2(k), W1(k) = f(Z(k)|.) delta(k) / (-1)^(1-Z(k)),
/// W2(k) = 1 / ((-1)^(1-A(k)) f*(A(k)|.)).
void iv_weights(const Panel& panel, const NuisanceValues& nv, WeightTrack& out);
WeightTrack compute_weights(const Panel& panel, const NuisanceValues& nv);

struct WeightDiagnostics {
  double mean_abs_inv = 0.0;
  double mean_inv = 0.0;
  std::vector<double> quantiles;  ///< of |1/W|, at 0.05, 0.25, 0.5, 0.75, 0.95
  double positive_fraction = 1.0;
  double ess = 0.0;
  int clamp_events = 0, floor_events = 0;
  nlohmann::json to_json() const;
};

/// Diagnostics of the final-time inverse weights (IV when available, SRA otherwise).
WeightDiagnostics weight_diagnostics(const WeightTrack& track, const Eigen::VectorXd& w, bool iv = true);

void write_weights_csv(const WeightTrack& track, const Panel& panel, const std::string& path);

}  // namespace msmiv

#endif  // MSMIV_WEIGHTS_HPP
