#include <doctest.h>

#include <array>
#include <map>
#include <random>

#include "common.hpp"
#include "msmiv/error.hpp"
#include "msmiv/logistic.hpp"
#include "msmiv/nuisance.hpp"
#include "msmiv/oracle.hpp"
#include "msmiv/rng.hpp"

using namespace msmiv;
using nlohmann::json;

namespace {

Eigen::VectorXd ones(int n) { return Eigen::VectorXd::Ones(n); }

NuisanceValues fit_all(const Panel& p, const std::string& pattern = "all_correct", NuisanceOptions o = {}) {
  FitContext ctx(p, MisspecPattern::preset(pattern), o, ExecPolicy::serial);
  return fit_nuisances(ctx, ones(p.n()));
}

}  // namespace

TEST_CASE("logistic: intercept-only fit of a balanced response is zero") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(10, 1);
  Eigen::VectorXd y(10);
  y << 1, 0, 1, 0, 1, 0, 1, 0, 1, 0;
  const auto f = fit_logistic(X, y);
  CHECK(f.converged);
  CHECK(std::abs(f.coef[0]) < 1e-10);
}

TEST_CASE("logistic: slope 1 recovered from 1e5 draws of the logistic law") {
  const int n = 100000;
  CounterRng rng(5, 0);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    const double x = normal(rng);
    X(i, 0) = 1.0;
    X(i, 1) = x;
    y[i] = rng.bernoulli(expit(-0.3 + x)) ? 1.0 : 0.0;
  }
  const auto f = fit_logistic(X, y);
  CHECK(f.converged);
  CHECK(std::abs(f.coef[1] - 1.0) < 0.03);
  CHECK_FALSE(f.separation);
}

TEST_CASE("logistic: constant response is flagged as separation") {
  Eigen::MatrixXd X(6, 2);
  X << 1, 0, 1, 1, 1, 2, 1, 3, 1, 4, 1, 5;
  const auto f = fit_logistic(X, Eigen::VectorXd::Ones(6));
  CHECK(f.separation);
  CHECK_THROWS_AS(fit_logistic(Eigen::MatrixXd::Ones(1, 2), Eigen::VectorXd::Ones(1)), NumericError);
}

TEST_CASE("instrument density: constant 0.5 recovered within 3 SE") {
  DgpSpec s = testutil::spec("desk_dgp.json");
  s.pZ = {Table(0.5), Table(0.5)};
  const int n = 20000;
  const Panel p = simulate(s, n, 8);
  const NuisanceValues nv = fit_all(p, "iii_only");  // instrument design without L
  CHECK(std::abs(nv.pz1[nv.at(0, 0)] - 0.5) < 3 * std::sqrt(0.25 / n));
  for (int i = 1; i < n; ++i) REQUIRE(nv.pz1[nv.at(i, 0)] == nv.pz1[nv.at(0, 0)]);
}

TEST_CASE("instrument density with the covariate omitted equals the marginalized population law") {
  const DgpSpec s = testutil::spec("desk_dgp.json");
  auto pf = population_fit(s, MsmSpec::default_for(1), MisspecPattern::preset("iii_only"), ReferenceDensity::uniform());
  // P(Z(0)=1) = 0.35 + 0.3 P(L(0)=1) with P(L(0)=1) = 0.5.
  const auto& nv = pf->problem.nv;
  for (int i = 0; i < nv.n; ++i) CHECK(std::abs(nv.pz1[nv.at(i, 0)] - 0.5) < 1e-14);
}

TEST_CASE("J = 1: instrument density is a single propensity fit") {
  const Panel p = simulate(testutil::spec("desk_j1.json"), 5000, 2);
  const NuisanceValues nv = fit_all(p);
  std::map<int, std::pair<double, double>> cell;
  for (int i = 0; i < p.n(); ++i) {
    auto& c = cell[int(p.L(i, 0, 0))];
    c.first += 1;
    c.second += p.Z(i, 0);
  }
  for (int i = 0; i < p.n(); ++i) {
    const auto& c = cell[int(p.L(i, 0, 0))];
    REQUIRE(std::abs(nv.pz1[nv.at(i, 0)] - c.second / c.first) < 1e-12);
  }
}

TEST_CASE("perfect compliance: delta-hat is 1 and the Z = 0 arm mean is 0") {
  const Panel p = simulate(testutil::spec("perfect_compliance.json"), 5000, 4);
  const NuisanceValues nv = fit_all(p);
  for (std::size_t k = 0; k < nv.delta.size(); ++k) {
    REQUIRE(nv.delta[k] == 1.0);
    REQUIRE(nv.m0[k] == 0.0);
  }
}

TEST_CASE("saturated delta-hat is the empirical arm contrast of each history cell") {
  const Panel p = simulate(testutil::spec("desk_dgp.json"), 100000, 2024);
  const NuisanceValues nv = fit_all(p);
  const int j = 1;
  std::map<int, std::array<double, 4>> acc;
  auto key = [&](int i) { return int(p.L(i, 0, 0)) | int(p.L(i, 1, 0)) << 1 | p.A(i, 0) << 2 | p.Z(i, 0) << 3; };
  for (int i = 0; i < p.n(); ++i) {
    auto& a = acc[key(i)];
    a[2 * p.Z(i, j)] += 1;
    a[2 * p.Z(i, j) + 1] += p.A(i, j);
  }
  for (int i = 0; i < p.n(); ++i) {
    const auto& a = acc[key(i)];
    const double contrast = a[3] / a[2] - a[1] / a[0];
    REQUIRE(std::abs(nv.delta[nv.at(i, j)] - contrast) < 1e-12);
    // additive decomposition: m0 + Z delta is the arm mean
    const double arm_mean = p.Z(i, j) ? a[3] / a[2] : a[1] / a[0];
    REQUIRE(std::abs(nv.m0[nv.at(i, j)] + p.Z(i, j) * nv.delta[nv.at(i, j)] - arm_mean) < 1e-12);
  }
}

TEST_CASE("empty instrument arm in a cell takes the parametric fallback and is counted") {
  Panel p = simulate(testutil::spec("desk_dgp.json"), 4000, 6);
  // Force Z(1) = 0 for every subject with L(1) = 1 and A(0) = 1.
  for (int i = 0; i < p.n(); ++i)
    if (p.L(i, 1, 0) == 1 && p.A(i, 0) == 1) p.Z(i, 1) = 0;
  const NuisanceValues nv = fit_all(p);
  CHECK(nv.diag.fallback_cells > 0);
  for (double d : nv.delta) REQUIRE(std::isfinite(d));
}

TEST_CASE("IV relevance failure is an explicit error") {
  Panel p = simulate(testutil::spec("desk_dgp.json"), 2000, 6);
  for (int i = 0; i < p.n(); ++i)
    for (int j = 0; j < p.J(); ++j) p.A(i, j) = 0;
  CHECK_THROWS_AS(fit_all(p), NumericError);
}

TEST_CASE("reference density: uniform, fitted, user table") {
  const auto u = ReferenceDensity::uniform();
  for (const auto& r : enumerate_regimes(2)) {
    double prod = 1.0;
    for (int j = 0; j < 2; ++j) {
      const double f1 = u.p1(j, std::vector<double>{0.0}, std::span<const std::uint8_t>(r.a.data(), std::size_t(j)));
      prod *= r.a[std::size_t(j)] ? f1 : 1 - f1;
    }
    CHECK(prod == 0.25);
  }
  // Treatments independent of (V, A-bar): perfect compliance with pZ constant.
  DgpSpec s = testutil::spec("perfect_compliance.json");
  s.pZ = {Table(0.3), Table(0.6)};
  const Panel p = simulate(s, 50000, 1);
  const auto f = ReferenceDensity::fitted(p, ones(p.n()));
  for (int v = 0; v < 2; ++v)
    for (std::uint8_t a0 = 0; a0 < 2; ++a0) {
      const std::vector<double> vv{double(v)};
      CHECK(std::abs(f.p1(0, vv, {}) - 0.3) < 0.02);
      CHECK(std::abs(f.p1(1, vv, std::span<const std::uint8_t>(&a0, 1)) - 0.6) < 0.02);
    }
  const auto t = ReferenceDensity::user_table({{"j=0,v0=0", 0.3}, {"j=0,v0=1", 0.6}});
  const auto back = ReferenceDensity::from_json(t.to_json());
  CHECK(back.to_json() == t.to_json());
  CHECK(back.p1(0, std::vector<double>{1.0}, {}) == 0.6);
}

TEST_CASE("reference table with zero mass on an observed treatment is a positivity error") {
  const Panel p = simulate(testutil::spec("desk_j1.json"), 500, 1);
  NuisanceOptions o;
  o.fstar = ReferenceDensity::user_table({{"j=0,v0=0", 0.0}, {"j=0,v0=1", 0.5}});
  CHECK_THROWS_AS(fit_all(p, "all_correct", o), InputError);
}

TEST_CASE("psi and C recursions propagate a zero terminal quantity as zero") {
  const Panel p = simulate(testutil::spec("desk_dgp.json"), 3000, 3);
  FitContext ctx(p, MisspecPattern::preset("all_correct"), {}, ExecPolicy::serial);
  const NuisanceValues nv = fit_nuisances(ctx, ones(p.n()));
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(p.n(), 3);
  const auto psi = fit_psi_recursion(ctx, nv, ones(p.n()), zero);
  const auto cj = fit_cj_recursion(ctx, nv, ones(p.n()), zero);
  for (int j = 0; j < 2; ++j) {
    CHECK(psi.gamma1[j].cwiseAbs().maxCoeff() == 0.0);
    CHECK(psi.gamma0[j].cwiseAbs().maxCoeff() == 0.0);
    CHECK(cj.c_obs[j].cwiseAbs().maxCoeff() == 0.0);
    CHECK(cj.c_ref[j].cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("psi recursion is affine in beta for Model 1.1") {
  const Panel p = simulate(testutil::spec("desk_dgp.json"), 3000, 3);
  FitContext ctx(p, MisspecPattern::preset("all_correct"), {}, ExecPolicy::serial);
  const NuisanceValues nv = fit_nuisances(ctx, ones(p.n()));
  const MsmTerms terms = msm_terms(p, MsmSpec::default_for(1));
  const Eigen::Vector3d beta(0.7, -0.4, 1.3);
  auto g1 = [&](const Eigen::VectorXd& b) { return fit_psi_recursion(ctx, nv, ones(p.n()), terms.d_sm_all(b)); };
  const auto r0 = g1(Eigen::Vector3d::Zero()), r1 = g1(beta), r2 = g1(2 * beta);
  for (int j = 0; j < 2; ++j) {
    CHECK((r2.gamma1[j] - 2 * r1.gamma1[j] + r0.gamma1[j]).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((r2.gamma0[j] - 2 * r1.gamma0[j] + r0.gamma0[j]).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("unconfounded DGP: population C recursion gives a mean-zero SRA influence function at beta0") {
  const DgpSpec s = testutil::spec("unconfounded.json");
  const MsmSpec msm = MsmSpec::default_for(1);
  auto pf = population_fit(s, msm, MisspecPattern::preset("sra_weights_wrong"), ReferenceDensity::uniform());
  const Eigen::VectorXd b0 = true_beta(s, msm, ReferenceDensity::uniform());
  CHECK(mean_residual(pf->problem, EstimatorId::sra_dr, b0).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("misspecification patterns parse from presets and per-field maps") {
  const auto p = MisspecPattern::from_json(json::parse(R"({"instrument_density":"omit_covariate","psi0":"correct"})"));
  CHECK(p.instrument_density == "L");
  CHECK(p.psi0.empty());
  CHECK_THROWS_AS(MisspecPattern::from_json(json::parse(R"({"bogus":"correct"})")), InputError);
  CHECK_THROWS_AS(MisspecPattern::preset("nope"), InputError);
  for (const auto& name : MisspecPattern::preset_names()) CHECK(MisspecPattern::preset(name).label == name);
}
