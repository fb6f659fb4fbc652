#include "msmiv/solver.hpp"

#include <cmath>
#include <cstdio>

namespace msmiv {

Eigen::MatrixXd fd_jacobian(const Residual& f, const Eigen::VectorXd& beta, const Eigen::VectorXd& f0, double step) {
  const Eigen::Index p = beta.size();
  Eigen::MatrixXd Jm(f0.size(), p);
  for (Eigen::Index k = 0; k < p; ++k) {
    Eigen::VectorXd b = beta;
    const double h = step * std::max(1.0, std::abs(beta[k]));
    b[k] += h;
    Jm.col(k) = (f(b) - f0) / h;
  }
  return Jm;
}

namespace {

std::string line(int it, double norm, double t) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "iter %d |U|inf=%.3e step=%.3g", it, norm, t);
  return buf;
}

}  // namespace

SolveResult solve_ee(const Residual& residual, const Eigen::VectorXd& beta_init, const SolverOptions& opts) {
  SolveResult r;
  r.beta = beta_init;
  if (r.beta.lpNorm<Eigen::Infinity>() > opts.region) r.beta = r.beta.cwiseMax(-opts.region).cwiseMin(opts.region);
  Eigen::VectorXd f = residual(r.beta);
  r.eq_norm = f.allFinite() ? f.lpNorm<Eigen::Infinity>() : INFINITY;
  r.trace.push_back(line(0, r.eq_norm, 0.0));
  for (int it = 1; it <= opts.max_iter; ++it) {
    if (r.eq_norm < opts.tol) {
      r.converged = true;
      if (r.jacobian.size() == 0) r.jacobian = fd_jacobian(residual, r.beta, f, opts.fd_step);
      return r;
    }
    r.iterations = it;
    r.jacobian = fd_jacobian(residual, r.beta, f, opts.fd_step);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(r.jacobian);
    if (qr.rank() < r.jacobian.cols()) {
      r.trace.push_back("singular Jacobian at iteration " + std::to_string(it));
      return r;
    }
    const Eigen::VectorXd step = -qr.solve(f);
    double t = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opts.max_halvings; ++h, t *= 0.5) {
      Eigen::VectorXd cand = r.beta + t * step;
      if (cand.lpNorm<Eigen::Infinity>() > opts.region) continue;
      Eigen::VectorXd fc = residual(cand);
      if (!fc.allFinite()) continue;
      const double nc = fc.lpNorm<Eigen::Infinity>();
      if (nc < r.eq_norm) {
        r.beta = cand;
        f = fc;
        r.eq_norm = nc;
        accepted = true;
        break;
      }
    }
    r.trace.push_back(line(it, r.eq_norm, accepted ? t : 0.0));
    if (!accepted) {
      r.trace.push_back("no decrease after " + std::to_string(opts.max_halvings) + " halvings");
      r.converged = r.eq_norm < opts.tol;
      return r;
    }
  }
  r.converged = r.eq_norm < opts.tol;
  return r;
}

}  // namespace msmiv
