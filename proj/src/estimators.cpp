#include "msmiv/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "msmiv/error.hpp"
#include "msmiv/hash.hpp"
#include "msmiv/kernels.hpp"
#include "msmiv/regime.hpp"
#include "msmiv/rng.hpp"

namespace msmiv {

using nlohmann::json;

std::string to_string(EstimatorId id) {
  switch (id) {
    case EstimatorId::sra_ipw: return "sra_ipw";
    case EstimatorId::sra_dr: return "sra_dr";
    case EstimatorId::iv_ipw: return "iv_ipw";
    case EstimatorId::iv_mr: return "iv_mr";
    case EstimatorId::iv_eff: return "iv_eff";
  }
  return "?";
}

EstimatorId parse_estimator(const std::string& name) {
  for (auto id : all_estimators())
    if (to_string(id) == name) return id;
  throw InputError("unknown estimator '" + name + "'");
}

const std::vector<EstimatorId>& all_estimators() {
  static const std::vector<EstimatorId> ids = {EstimatorId::sra_ipw, EstimatorId::sra_dr, EstimatorId::iv_ipw,
                                               EstimatorId::iv_mr, EstimatorId::iv_eff};
  return ids;
}

static bool uses_iv(EstimatorId id) { return id != EstimatorId::sra_ipw && id != EstimatorId::sra_dr; }

Problem make_problem(const FitContext& ctx, const MsmSpec& msm, std::shared_ptr<const MsmTerms> terms,
                     const Eigen::VectorXd& w, const SolverOptions& solver) {
  Problem pr;
  pr.ctx = &ctx;
  pr.msm = msm;
  pr.terms = std::move(terms);
  pr.w = w;
  pr.solver = solver;
  pr.nv = fit_nuisances(ctx, w, true, true);
  pr.wt = compute_weights(ctx.panel(), pr.nv);
  return pr;
}

Problem make_problem(const FitContext& ctx, const MsmSpec& msm, const SolverOptions& solver) {
  auto terms = std::make_shared<const MsmTerms>(msm_terms(ctx.panel(), msm));
  Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(ctx.panel().weights().data(), ctx.panel().n());
  return make_problem(ctx, msm, std::move(terms), w, solver);
}

Eigen::MatrixXd dagger_transform(const Problem& pr, const Eigen::MatrixXd& X) {
  const auto& p = pr.panel();
  const auto& nv = pr.nv;
  const auto& wt = pr.wt;
  const int J = p.J();
  const PsiRecursion psi = fit_psi_recursion(*pr.ctx, nv, pr.w, X);
  Eigen::MatrixXd out(X.rows(), X.cols());
  for_each_subject(pr.ctx->policy(), p.n(), [&](int i) {
    Eigen::RowVectorXd row = X.row(i) * wt.inv_iv_final(i);
    for (int j = 0; j < J; ++j) {
      const auto k = nv.at(i, j);
      const double prev = wt.inv_iv_prev(i, j);
      const int z = p.Z(i, j);
      const double sz = z ? 1.0 : -1.0, fz = nv.fz[k], d = nv.delta[k];
      const auto g1 = psi.gamma1[static_cast<std::size_t>(j)].row(i);
      const auto g0 = psi.gamma0[static_cast<std::size_t>(j)].row(i);
      const double eps = p.A(i, j) - (nv.m0[k] + z * d);
      row -= prev * (sz * (g0 + z * g1) / fz - g1);
      row -= prev * (eps * sz / (fz * d)) * g1;
    }
    out.row(i) = row;
  });
  return out;
}

Eigen::MatrixXd dr_transform(const Problem& pr, const Eigen::MatrixXd& X) {
  const auto& p = pr.panel();
  const auto& wt = pr.wt;
  const int J = p.J();
  const CjRecursion cj = fit_cj_recursion(*pr.ctx, pr.nv, pr.w, X);
  Eigen::MatrixXd out(X.rows(), X.cols());
  for_each_subject(pr.ctx->policy(), p.n(), [&](int i) {
    Eigen::RowVectorXd row = X.row(i) * wt.inv_sra_final(i);
    for (int j = 0; j < J; ++j)
      row -= cj.c_obs[static_cast<std::size_t>(j)].row(i) * wt.inv_sra[wt.at(i, j)] -
             cj.c_ref[static_cast<std::size_t>(j)].row(i) * wt.inv_sra_prev(i, j);
    out.row(i) = row;
  });
  return out;
}

Eigen::MatrixXd EffComponents::xi_tilde(const Eigen::VectorXd& beta, int p) const {
  Eigen::MatrixXd out = xi_y;
  for (int c = 0; c < C; ++c) out.col(c) -= xi_x.middleCols(c * p, p) * beta;
  return out;
}

Eigen::MatrixXd EffComponents::grad(int i, int p) const {
  Eigen::MatrixXd g(C, p);
  for (int c = 0; c < C; ++c)
    for (int k = 0; k < p; ++k) g(c, k) = -xi_x(i, c * p + k);
  return g;
}

EffComponents eff_components(const Problem& pr) {
  const auto& panel = pr.panel();
  const int J = panel.J(), n = panel.n(), p = pr.p();
  if (pr.msm.family != MsmFamily::model_1_1) throw InputError("iv_eff supports Model 1.1 only");
  if (J > 6) throw InputError("iv_eff requires 2^J <= 64");
  EffComponents ec;
  ec.C = 1 << J;
  const int C = ec.C;
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, C + C * p);
  std::map<std::vector<double>, int> strata;
  ec.stratum.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto v = v_values(panel, i);
    std::span<const std::uint8_t> a(panel.A_row(i), static_cast<std::size_t>(J));
    const int c = static_cast<int>(regime_index(a));
    X(i, c) = panel.Y(i);
    Eigen::VectorXd x = pr.msm.x(a, v, J);
    for (int k = 0; k < p; ++k) X(i, C + c * p + k) = x[k];
    auto [it, inserted] = strata.emplace(v, static_cast<int>(strata.size()));
    if (inserted) ec.strata_v.push_back(v);
    ec.stratum[static_cast<std::size_t>(i)] = it->second;
  }
  Eigen::MatrixXd T = dagger_transform(pr, X);
  ec.xi_y = T.leftCols(C);
  ec.xi_x = T.rightCols(C * p);
  return ec;
}

void set_heff(const Problem& pr, EffComponents& ec, const Eigen::VectorXd& beta_prelim, double ridge) {
  const int p = pr.p(), C = ec.C, n = pr.n(), S = static_cast<int>(ec.strata_v.size());
  const Eigen::MatrixXd xt = ec.xi_tilde(beta_prelim, p);
  std::vector<Eigen::MatrixXd> G(static_cast<std::size_t>(S), Eigen::MatrixXd::Zero(C, p));
  std::vector<Eigen::MatrixXd> Gram(static_cast<std::size_t>(S), Eigen::MatrixXd::Zero(C, C));
  std::vector<double> wsum(static_cast<std::size_t>(S), 0.0);
  std::vector<std::vector<double>> seen(static_cast<std::size_t>(S), std::vector<double>(static_cast<std::size_t>(C), 0.0));
  const auto& panel = pr.panel();
  for (int i = 0; i < n; ++i) {
    const double wi = pr.w[i];
    if (wi == 0.0) continue;
    const auto s = static_cast<std::size_t>(ec.stratum[static_cast<std::size_t>(i)]);
    wsum[s] += wi;
    G[s] += wi * ec.grad(i, p);
    Gram[s].noalias() += wi * xt.row(i).transpose() * xt.row(i);
    seen[s][regime_index(std::span<const std::uint8_t>(panel.A_row(i), static_cast<std::size_t>(panel.J())))] += wi;
  }
  ec.heff.assign(static_cast<std::size_t>(S), Eigen::MatrixXd::Zero(p, C));
  ec.unobserved.assign(static_cast<std::size_t>(S), {});
  for (int s = 0; s < S; ++s) {
    const auto su = static_cast<std::size_t>(s);
    for (int c = 0; c < C; ++c)
      if (seen[su][static_cast<std::size_t>(c)] == 0.0) ec.unobserved[su].push_back(regime_from_index(static_cast<std::uint32_t>(c), panel.J()).str());
    if (wsum[su] == 0.0) continue;
    Eigen::MatrixXd Sg = Gram[su] / wsum[su];
    Sg.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(Sg);
    const double rc = ldlt.rcond();
    if (ldlt.info() != Eigen::Success || !(rc > 1e-14)) {
      std::string msg = "iv_eff: singular Gram matrix in V stratum " + std::to_string(s) + "; unobserved regimes:";
      for (const auto& r : ec.unobserved[su]) msg += " " + r;
      throw NumericError(msg);
    }
    ec.heff[su] = -ldlt.solve(G[su] / wsum[su]).transpose();
  }
}

Eigen::MatrixXd influence(const Problem& pr, EstimatorId id, const Eigen::VectorXd& beta, const EffComponents* ec) {
  const int n = pr.n();
  switch (id) {
    case EstimatorId::sra_ipw: {
      Eigen::MatrixXd d = pr.terms->d_sm_all(beta);
      for (int i = 0; i < n; ++i) d.row(i) *= pr.wt.inv_sra_final(i);
      return d;
    }
    case EstimatorId::iv_ipw: {
      Eigen::MatrixXd d = pr.terms->d_sm_all(beta);
      for (int i = 0; i < n; ++i) d.row(i) *= pr.wt.inv_iv_final(i);
      return d;
    }
    case EstimatorId::sra_dr:
      return dr_transform(pr, pr.terms->d_sm_all(beta));
    case EstimatorId::iv_mr:
      return dagger_transform(pr, pr.terms->d_sm_all(beta));
    case EstimatorId::iv_eff: {
      if (!ec || ec->heff.empty()) throw InputError("iv_eff influence needs H_eff");
      const Eigen::MatrixXd xt = ec->xi_tilde(beta, pr.p());
      Eigen::MatrixXd out(n, pr.p());
      for (int i = 0; i < n; ++i)
        out.row(i) = (ec->heff[static_cast<std::size_t>(ec->stratum[static_cast<std::size_t>(i)])] * xt.row(i).transpose()).transpose();
      return out;
    }
  }
  return {};
}

Eigen::VectorXd mean_residual(const Problem& pr, EstimatorId id, const Eigen::VectorXd& beta, const EffComponents* ec) {
  const Eigen::MatrixXd infl = influence(pr, id, beta, ec);
  return (weighted_col_sum(pr.ctx->policy(), infl, pr.w) / pr.w.sum()).transpose();
}

Eigen::MatrixXd sandwich(const Eigen::MatrixXd& infl, const Eigen::VectorXd& w, const Eigen::MatrixXd& bread) {
  const double wsum = w.sum();
  Eigen::MatrixXd M = infl.transpose() * w.asDiagonal() * infl / wsum;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(bread);
  if (!lu.isInvertible() || lu.rcond() < 1e-13) throw NumericError("sandwich: bread matrix is singular or ill-conditioned");
  const Eigen::MatrixXd Binv = lu.inverse();
  Eigen::MatrixXd V = Binv * M * Binv.transpose() / wsum;
  return 0.5 * (V + V.transpose());
}

Eigen::VectorXd beta_init(const Problem& pr, bool iv) {
  const int n = pr.n(), p = pr.p();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(p);
  for (int i = 0; i < n; ++i) {
    const double wi = pr.w[i] * std::abs(iv ? pr.wt.inv_iv_final(i) : pr.wt.inv_sra_final(i));
    if (wi == 0.0) continue;
    c += wi * pr.terms->b.row(i).transpose();
    for (int r = 0; r < p; ++r)
      for (int k = 0; k < p; ++k) A(r, k) += wi * pr.terms->M(i, r * p + k);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < p) return Eigen::VectorXd::Zero(p);
  return qr.solve(c);
}

std::string nuisance_fingerprint(const NuisanceValues& nv) {
  Fnv1a h;
  for (const auto* v : {&nv.fz, &nv.delta, &nv.m0, &nv.psi_delta, &nv.fstar, &nv.fa}) h.add(*v);
  return h.hex();
}

json Estimate::to_json() const {
  json j;
  j["estimator"] = to_string(id);
  j["beta"] = std::vector<double>(beta.data(), beta.data() + beta.size());
  if (covariance.size()) {
    std::vector<double> se;
    json cov = json::array();
    for (Eigen::Index r = 0; r < covariance.rows(); ++r) {
      se.push_back(std::sqrt(std::max(0.0, covariance(r, r))));
      cov.push_back(std::vector<double>(covariance.cols()));
      for (Eigen::Index c = 0; c < covariance.cols(); ++c) cov.back()[static_cast<std::size_t>(c)] = covariance(r, c);
    }
    j["se"] = se;
    j["covariance"] = cov;
  }
  j["eq_norm"] = eq_norm;
  j["iterations"] = iterations;
  j["converged"] = converged;
  j["nuisance_fingerprint"] = nuisance_fingerprint;
  j["trace"] = trace;
  j["nuisance_diagnostics"] = nuisance_diag.to_json();
  if (bootstrap.B > 0) {
    j["bootstrap"] = {{"B", bootstrap.B},
                      {"failures", bootstrap.failures},
                      {"lo", std::vector<double>(bootstrap.lo.data(), bootstrap.lo.data() + bootstrap.lo.size())},
                      {"hi", std::vector<double>(bootstrap.hi.data(), bootstrap.hi.data() + bootstrap.hi.size())},
                      {"se", std::vector<double>(bootstrap.se.data(), bootstrap.se.data() + bootstrap.se.size())}};
  }
  for (const auto& [k, v] : extra.items()) j[k] = v;
  return j;
}

Estimate estimate(EstimatorId id, const Problem& pr, bool with_covariance) {
  if (id == EstimatorId::iv_eff && pr.msm.family != MsmFamily::model_1_1) throw InputError("iv_eff supports Model 1.1 only");
  Estimate est;
  est.id = id;
  est.nuisance_fingerprint = nuisance_fingerprint(pr.nv);
  est.nuisance_diag = pr.nv.diag;
  EffComponents ec;
  Eigen::VectorXd start;
  if (id == EstimatorId::iv_eff) {
    Estimate prelim = estimate(EstimatorId::iv_mr, pr, false);
    if (!prelim.converged) throw NumericError("iv_eff: preliminary iv_mr fit did not converge");
    ec = eff_components(pr);
    set_heff(pr, ec, prelim.beta);
    start = prelim.beta;
    json un = json::array();
    for (const auto& u : ec.unobserved) un.push_back(u);
    est.extra["unobserved_regimes_per_stratum"] = un;
  } else {
    start = beta_init(pr, uses_iv(id));
  }
  const EffComponents* ecp = id == EstimatorId::iv_eff ? &ec : nullptr;
  Residual f = [&](const Eigen::VectorXd& b) { return mean_residual(pr, id, b, ecp); };
  SolveResult r = solve_ee(f, start, pr.solver);
  est.beta = r.beta;
  est.eq_norm = r.eq_norm;
  est.iterations = r.iterations;
  est.converged = r.converged;
  est.trace = std::move(r.trace);
  if (with_covariance && est.converged) {
    const Eigen::MatrixXd bread = fd_jacobian(f, est.beta, f(est.beta), pr.solver.fd_step);
    est.covariance = sandwich(influence(pr, id, est.beta, ecp), pr.w, bread);
    est.extra["weights"] = weight_diagnostics(pr.wt, pr.w, uses_iv(id)).to_json();
  }
  return est;
}

Estimate fit_ipw_sra(const Problem& pr) { return estimate(EstimatorId::sra_ipw, pr); }
Estimate fit_dr_sra(const Problem& pr) { return estimate(EstimatorId::sra_dr, pr); }
Estimate fit_ipw_iv(const Problem& pr) { return estimate(EstimatorId::iv_ipw, pr); }
Estimate fit_mr_iv(const Problem& pr) { return estimate(EstimatorId::iv_mr, pr); }
Estimate fit_efficient_iv(const Problem& pr) { return estimate(EstimatorId::iv_eff, pr); }

namespace {

double quantile7(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

BootstrapSummary bootstrap(const FitContext& ctx, const MsmSpec& msm, std::shared_ptr<const MsmTerms> terms, EstimatorId id,
                           int B, std::uint64_t seed, const SolverOptions& solver, double level) {
  if (B < 2) throw InputError("bootstrap: B must be at least 2");
  const int n = ctx.panel().n(), p = msm.dim_beta();
  const Eigen::VectorXd base = Eigen::Map<const Eigen::VectorXd>(ctx.panel().weights().data(), n);
  Eigen::MatrixXd draws(B, p);
  std::vector<char> ok(static_cast<std::size_t>(B), 0);
#pragma omp parallel for schedule(dynamic)
  for (int b = 0; b < B; ++b) {
    CounterRng rng(seed, static_cast<std::uint64_t>(b));
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < n; ++k) w[static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n))] += 1.0;
    w.array() *= base.array();
    try {
      Problem pb = make_problem(ctx, msm, terms, w, solver);
      Estimate e = estimate(id, pb, false);
      if (e.converged) {
        draws.row(b) = e.beta.transpose();
        ok[static_cast<std::size_t>(b)] = 1;
      }
    } catch (const NumericError&) {
    }
  }
  BootstrapSummary s;
  s.B = B;
  s.lo.resize(p);
  s.hi.resize(p);
  s.se.resize(p);
  for (int k = 0; k < p; ++k) {
    std::vector<double> col;
    for (int b = 0; b < B; ++b)
      if (ok[static_cast<std::size_t>(b)]) col.push_back(draws(b, k));
    s.failures = B - static_cast<int>(col.size());
    if (col.size() < 2) throw NumericError("bootstrap: fewer than two successful replicates");
    const double alpha = (1.0 - level) / 2.0;
    s.lo[k] = quantile7(col, alpha);
    s.hi[k] = quantile7(col, 1.0 - alpha);
    double mean = 0.0;
    for (double x : col) mean += x;
    mean /= static_cast<double>(col.size());
    double ss = 0.0;
    for (double x : col) ss += (x - mean) * (x - mean);
    s.se[k] = std::sqrt(ss / static_cast<double>(col.size() - 1));
  }
  return s;
}

}  // namespace msmiv
