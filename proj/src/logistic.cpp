#include "msmiv/logistic.hpp"

#include <algorithm>
#include <cmath>

#include "msmiv/error.hpp"

namespace msmiv {

namespace {

Eigen::VectorXd weights_or_ones(const Eigen::VectorXd& w, Eigen::Index n) {
  if (w.size() == 0) return Eigen::VectorXd::Ones(n);
  if (w.size() != n) throw InputError("weight vector length does not match design");
  return w;
}

void check_rank_room(const Eigen::VectorXd& w, Eigen::Index p) {
  Eigen::Index pos = (w.array() > 0).count();
  if (pos <= p) throw NumericError("regression needs more positive-weight rows than columns");
}

}  // namespace

LogisticFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w_in,
                         int max_iter, double tol, double ridge) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (y.size() != n) throw InputError("fit_logistic: response length does not match design");
  const Eigen::VectorXd w = weights_or_ones(w_in, n);
  check_rank_room(w, p);
  const double wsum = w.sum();

  LogisticFit fit;
  fit.coef = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd eta(n), mu(n);
  for (int it = 0; it <= max_iter; ++it) {
    eta.noalias() = X * fit.coef;
    for (Eigen::Index i = 0; i < n; ++i) mu[i] = expit(eta[i]);
    Eigen::VectorXd grad = X.transpose() * (w.array() * (y - mu).array()).matrix();
    fit.grad_norm = grad.lpNorm<Eigen::Infinity>() / wsum;
    fit.iterations = it;
    if (fit.grad_norm < tol) {
      fit.converged = true;
      break;
    }
    if (fit.coef.norm() > 30.0) {
      fit.separation = true;
      break;
    }
    if (it == max_iter) break;
    Eigen::VectorXd v = (w.array() * mu.array() * (1.0 - mu.array())).matrix();
    Eigen::MatrixXd H = X.transpose() * v.asDiagonal() * X;
    H.diagonal().array() += ridge * wsum;
    fit.coef += H.ldlt().solve(grad);
    if (!fit.coef.allFinite()) throw NumericError("fit_logistic: non-finite coefficients");
  }
  if (fit.coef.norm() > 30.0) fit.separation = true;
  // Fitted probabilities pinned at 0 or 1 also mean (quasi-)separation.
  for (Eigen::Index i = 0; i < n && !fit.separation; ++i)
    if (w[i] > 0 && std::min(mu[i], 1.0 - mu[i]) < 1e-8) fit.separation = true;
  return fit;
}

Eigen::MatrixXd fit_linear(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const Eigen::VectorXd& w_in, double ridge) {
  const Eigen::Index n = X.rows();
  if (Y.rows() != n) throw InputError("fit_linear: response rows do not match design");
  const Eigen::VectorXd w = weights_or_ones(w_in, n);
  check_rank_room(w, X.cols());
  Eigen::MatrixXd G = X.transpose() * w.asDiagonal() * X;
  G.diagonal().array() += ridge * w.sum();
  Eigen::MatrixXd coef = G.ldlt().solve(X.transpose() * w.asDiagonal() * Y);
  if (!coef.allFinite()) throw NumericError("fit_linear: non-finite coefficients");
  return coef;
}

}  // namespace msmiv
