#ifndef MSMIV_SOLVER_HPP
#define MSMIV_SOLVER_HPP

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace msmiv {

struct SolverOptions {
  double tol = 1e-8;        ///< on the infinity-norm of the residual
  int max_iter = 200;
  double fd_step = 1e-6;
  int max_halvings = 30;
  double region = 50.0;     ///< infinity-norm bound on beta
};

struct SolveResult {
  Eigen::VectorXd beta;
  double eq_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  Eigen::MatrixXd jacobian;  ///< forward-difference Jacobian at the last iterate
  std::vector<std::string> trace;
};

using Residual = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Forward-difference Jacobian with step fd_step * max(1, |beta_k|).
Eigen::MatrixXd fd_jacobian(const Residual& f, const Eigen::VectorXd& beta, const Eigen::VectorXd& f0, double step);

/// Damped Newton: full step first, halved until the residual norm decreases
/// and the iterate stays in the region. Never throws on non-convergence.
SolveResult solve_ee(const Residual& residual, const Eigen::VectorXd& beta_init, const SolverOptions& opts = {});

}  // namespace msmiv

#endif  // MSMIV_SOLVER_HPP
