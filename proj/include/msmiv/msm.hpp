#ifndef MSMIV_MSM_HPP
#define MSMIV_MSM_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msmiv/panel.hpp"

namespace msmiv {

enum class MsmFamily { model_1_1, model_1_4 };

/// One feature of (a-bar, V[, m]) written as a '*'-separated product of atoms:
/// "1", "sum_a", "a<k>", "v<i>", "m". Under Model 1.4 the regime is truncated
/// to a(0..m-1) when evaluating outcome m.
class Feature {
 public:
  explicit Feature(const std::string& text);
  double eval(std::span<const std::uint8_t> a, std::span<const double> v, int m) const;
  const std::string& text() const { return text_; }
  /// Largest a-index or v-index referenced (-1 if none).
  int max_a() const { return max_a_; }
  int max_v() const { return max_v_; }

 private:
  enum class Kind { one, sum_a, a, v, m };
  struct Atom {
    Kind kind;
    int index;
  };
  std::string text_;
  std::vector<Atom> atoms_;
  int max_a_ = -1, max_v_ = -1;
};

/// Linear MSM g(a, V; beta) = x(a, V)' beta with index function h.
struct MsmSpec {
  MsmFamily family = MsmFamily::model_1_1;
  std::vector<Feature> g;
  /// Empty means h = grad_beta g.
  std::vector<Feature> h;

  static MsmSpec make(MsmFamily family, const std::vector<std::string>& g,
                      const std::vector<std::string>& h = {});
  /// Default features: intercept, sum of a(j), each V column.
  static MsmSpec default_for(int nv, MsmFamily family = MsmFamily::model_1_1);

  int dim_beta() const { return static_cast<int>(g.size()); }
  /// Throws InputError if features reference times or V columns that do not exist.
  void validate(int J, int nv) const;

  Eigen::VectorXd x(std::span<const std::uint8_t> a, std::span<const double> v, int m) const;
  Eigen::VectorXd hvec(std::span<const std::uint8_t> a, std::span<const double> v, int m) const;
  /// Number of outcome components entering D_sm (1 or J).
  int outcomes(int J) const { return family == MsmFamily::model_1_1 ? 1 : J; }
};

/// D_sm(h, beta) = b - M beta for every subject (the MSM here is linear in beta).
struct MsmTerms {
  int p = 0;
  Eigen::MatrixXd b;  ///< n x p: sum_m h_m Y(m)
  Eigen::MatrixXd M;  ///< n x p*p, row-major p x p per subject: sum_m h_m x_m'

  Eigen::VectorXd d_sm(int i, const Eigen::VectorXd& beta) const;
  /// n x p matrix of D_sm at beta.
  Eigen::MatrixXd d_sm_all(const Eigen::VectorXd& beta) const;
};

MsmTerms msm_terms(const Panel& panel, const MsmSpec& msm);

/// D_sm for one subject computed directly from the definition.
Eigen::VectorXd d_sm(const MsmSpec& msm, const Panel& panel, int i, const Eigen::VectorXd& beta);

std::vector<double> v_values(const Panel& panel, int i);

}  // namespace msmiv

#endif  // MSMIV_MSM_HPP
