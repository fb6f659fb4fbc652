#ifndef MSMIV_LOGISTIC_HPP
#define MSMIV_LOGISTIC_HPP

#include <Eigen/Dense>

namespace msmiv {

struct LogisticFit {
  Eigen::VectorXd coef;
  int iterations = 0;
  bool converged = false;
  /// Coefficient norm exceeded 30: the data are (quasi-)separated.
  bool separation = false;
  double grad_norm = 0.0;
};

/// Weighted logistic regression by IRLS. Stops when the weight-normalized
/// gradient infinity-norm drops below tol or after max_iter iterations.
/// Throws NumericError when there are no more positive-weight rows than columns.
LogisticFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& w = Eigen::VectorXd(),
                         int max_iter = 100, double tol = 1e-10, double ridge = 1e-8);

/// Weighted least squares for every column of Y; returns a p x m coefficient matrix.
Eigen::MatrixXd fit_linear(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                           const Eigen::VectorXd& w = Eigen::VectorXd(), double ridge = 1e-8);

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace msmiv

#endif  // MSMIV_LOGISTIC_HPP
