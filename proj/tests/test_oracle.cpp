#include <doctest.h>

#include <chrono>
#include <optional>

#include "common.hpp"
#include "msmiv/error.hpp"
#include "msmiv/oracle.hpp"

using namespace msmiv;
using nlohmann::json;

namespace {

// Independent latent g-formula: loops over every (U, L) assignment at once
// instead of recursing, conditioning on L(0) = v afterwards.
double brute_cf(const DgpSpec& s, const std::vector<std::uint8_t>& a, std::optional<int> v) {
  const int J = s.J;
  double num = 0.0, den = 0.0;
  for (std::uint32_t combo = 0; combo < (1u << (2 * J)); ++combo) {
    std::uint64_t h = 0;
    double pr = 1.0;
    for (int j = 0; j < J; ++j) {
      const int u = (combo >> (2 * j)) & 1, l = (combo >> (2 * j + 1)) & 1;
      const double pu = s.pU[j].eval(h);
      pr *= u ? pu : 1 - pu;
      h |= static_cast<std::uint64_t>(u) << hbit::u(j);
      const double pl = s.pL[j].eval(h);
      pr *= l ? pl : 1 - pl;
      h |= static_cast<std::uint64_t>(l) << hbit::l(j);
      h |= static_cast<std::uint64_t>(a[j]) << hbit::a(j);
    }
    if (v && hbit::get(h, hbit::l(0)) != *v) continue;
    num += pr * s.mean_y(J, h);
    den += pr;
  }
  return num / den;
}

// Weighted least-squares criterion whose gradient is the true_beta moment condition (h = x).
double criterion(const DgpSpec& s, const MsmSpec& msm, const Eigen::VectorXd& beta) {
  double q = 0.0;
  for (int v = 0; v < 2; ++v) {
    const double pv = 0.5 * (v ? 0.7 : 0.3) + 0.5 * (v ? 0.3 : 0.7);  // P(L0=v) for the desk DGP
    for (const auto& r : enumerate_regimes(s.J)) {
      const std::vector<double> vv{double(v)};
      const double e = brute_cf(s, r.a, v) - msm.x(r.a, vv, s.J).dot(beta);
      q += pv * 0.25 * e * e;  // uniform f*: prod = 1/4 at J = 2
    }
  }
  return q;
}

Eigen::VectorXd grid_minimize(const DgpSpec& s, const MsmSpec& msm) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(msm.dim_beta());
  double best = criterion(s, msm, b);
  for (double step = 1.0; step > 1e-12; step /= 2) {
    bool moved = true;
    while (moved) {
      moved = false;
      for (int k = 0; k < b.size(); ++k)
        for (double dir : {-1.0, 1.0}) {
          Eigen::VectorXd t = b;
          t[k] += dir * step;
          const double q = criterion(s, msm, t);
          if (q < best) {
            best = q;
            b = t;
            moved = true;
          }
        }
    }
  }
  return b;
}

const ReferenceDensity kUniform = ReferenceDensity::uniform();

}  // namespace

TEST_CASE("counterfactual_mean agrees with an independent enumeration") {
  const DgpSpec s = testutil::spec("desk_dgp.json");
  for (const auto& r : enumerate_regimes(2))
    for (int v = 0; v < 2; ++v) CHECK(std::abs(counterfactual_mean(s, r, double(v)) - brute_cf(s, r.a, v)) < 1e-12);
  const Regime r11{{1, 1}};
  CHECK(std::abs(counterfactual_mean(s, r11, 0.0) - brute_cf(s, r11.a, 0)) < 1e-12);
  CHECK(std::abs(counterfactual_mean(s, r11) - brute_cf(s, r11.a, std::nullopt)) < 1e-12);
  CHECK_THROWS_AS(counterfactual_mean(s, Regime{{1}}), InputError);
}

TEST_CASE("counterfactual_mean: null effect and additive truth") {
  DgpSpec s = testutil::spec("desk_dgp.json");
  s.muY = Table::from_json(json::parse(R"({"linear":{"1":1.0,"u0":2.0,"l0":-1.0,"u1":0.5}})"));
  const double base = counterfactual_mean(s, Regime{{0, 0}});
  for (const auto& r : enumerate_regimes(2)) CHECK(counterfactual_mean(s, r) == doctest::Approx(base).epsilon(1e-14));
  s.muY = Table::from_json(json::parse(R"({"linear":{"a0":1.0,"a1":1.0}})"));
  for (const auto& r : enumerate_regimes(2)) CHECK(std::abs(counterfactual_mean(s, r) - r.sum()) < 1e-14);
}

TEST_CASE("true_beta equals the grid-refined minimizer of the weighted criterion") {
  const DgpSpec s = testutil::spec("desk_dgp.json");
  const MsmSpec msm = MsmSpec::default_for(1);
  const Eigen::VectorXd b0 = true_beta(s, msm, kUniform);
  const Eigen::VectorXd bg = grid_minimize(s, msm);
  CHECK((b0 - bg).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("true_beta: saturated g reproduces counterfactual means; null DGP has zero slope") {
  const DgpSpec s = testutil::spec("desk_dgp.json");
  const MsmSpec sat = MsmSpec::make(MsmFamily::model_1_1, {"1", "a0", "a1", "a0*a1", "v0", "v0*a0", "v0*a1", "v0*a0*a1"});
  const Eigen::VectorXd b = true_beta(s, sat, kUniform);
  for (const auto& r : enumerate_regimes(2))
    for (int v = 0; v < 2; ++v) {
      const std::vector<double> vv{double(v)};
      CHECK(std::abs(sat.x(r.a, vv, 2).dot(b) - counterfactual_mean(s, r, double(v))) < 1e-12);
    }
  DgpSpec null = s;
  null.muY = Table::from_json(json::parse(R"({"linear":{"1":1.0,"u0":1.0,"l0":0.5}})"));
  const Eigen::VectorXd bn = true_beta(null, MsmSpec::make(MsmFamily::model_1_1, {"1", "sum_a"}), kUniform);
  CHECK(std::abs(bn[1]) < 1e-12);
  CHECK_THROWS_AS(true_beta(s, MsmSpec::make(MsmFamily::model_1_1, {"1", "v0", "v0"}), kUniform), NumericError);
}

TEST_CASE("instrument contrast identity: constant delta, desk DGP, and the U-dependent delta negative control") {
  DgpSpec c = testutil::spec("desk_dgp.json");
  c.delta = {Table(0.5), Table(0.5)};
  const auto rc = check_lemma1(c);
  CHECK(rc.pass);
  for (double x : rc.lhs) CHECK(std::abs(x - 0.5) < 1e-12);
  const auto t0 = std::chrono::steady_clock::now();
  const auto rd = check_lemma1(testutil::spec("desk_dgp.json"));
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 1.0);
  CHECK(rd.max_abs_diff < 1e-12);
  CHECK(rd.lhs.size() >= 18);
  const auto rv = check_lemma1(testutil::spec("delta_depends_on_u.json"));
  CHECK_FALSE(rv.pass);
  CHECK(rv.max_abs_diff > 0.05);
}

TEST_CASE("weighted moment identity: normalization, collapse, and the Y-weighted regime indicator") {
  const DgpSpec desk = testutil::spec("desk_dgp.json");
  const auto battery = lemma2_battery(2);
  CHECK(battery.size() >= 20);
  const auto one = check_lemma2(desk, battery[0], kUniform);
  for (std::size_t k = 0; k < one.lhs.size(); ++k) {
    CHECK(std::abs(one.lhs[k] - 1.0) < 1e-12);
    CHECK(std::abs(one.rhs[k] - 1.0) < 1e-12);
  }
  // Y * 1(A-bar = (1,1)): a code 0b11.
  const TestFunction y11{"Y*1(A=(1,1))", [](std::uint32_t a, std::uint32_t) { return std::pair(0.0, a == 3u ? 1.0 : 0.0); }};
  CHECK(check_lemma2(desk, y11, kUniform).max_abs_diff < 1e-12);
  const DgpSpec pc = testutil::spec("perfect_compliance.json");
  for (const auto& g : lemma2_battery(2)) CHECK(check_lemma2(pc, g, kUniform).pass);
}

TEST_CASE("weighted moment identity holds for every battery function under fitted and user-table references") {
  const DgpSpec desk = testutil::spec("desk_dgp.json");
  const auto user = ReferenceDensity::user_table({{"j=0,v0=0", 0.3}, {"j=0,v0=1", 0.6}, {"j=1,v0=0,a0=0", 0.2},
                                                  {"j=1,v0=0,a0=1", 0.7}, {"j=1,v0=1,a0=0", 0.4}, {"j=1,v0=1,a0=1", 0.8}});
  json fitted_json{{"mode", "fitted"}};
  for (const auto& f : {user, ReferenceDensity::from_json(fitted_json)})
    for (const auto& g : lemma2_battery(2)) CHECK_MESSAGE(check_lemma2(desk, g, f).pass, g.name);
}

TEST_CASE("weighted moment identity fails when the weight product starts at k = 1") {
  // g = 1(A(0) = 1): the right side is f*(A(0)=1) = 0.5 under the uniform reference.
  const DgpSpec s = testutil::spec("desk_dgp.json");
  const ObservedLaw law = observed_law(s);
  double from0 = 0.0, from1 = 0.0;
  for (std::uint32_t o = 0; o < law.size(); ++o) {
    if (law.p[o] == 0.0) continue;
    std::uint64_t h = 0;
    for (int t = 0; t < 2; ++t) {
      h |= static_cast<std::uint64_t>(obit::get(o, obit::l(t))) << hbit::l(t);
      h |= static_cast<std::uint64_t>(obit::get(o, obit::z(t))) << hbit::z(t);
      h |= static_cast<std::uint64_t>(obit::get(o, obit::a(t))) << hbit::a(t);
    }
    double inv0 = 1.0, inv1 = 1.0;
    for (int k = 0; k < 2; ++k) {
      const int z = obit::get(o, obit::z(k)), a = obit::get(o, obit::a(k));
      const double pz = s.pZ[k].eval(h);
      const double term = (z ? 1 : -1) * (a ? 1 : -1) * 0.5 / ((z ? pz : 1 - pz) * s.delta[k].eval(h));
      inv0 *= term;
      if (k >= 1) inv1 *= term;
    }
    const double g = obit::get(o, obit::a(0));
    from0 += law.p[o] * g * inv0;
    from1 += law.p[o] * g * inv1;
  }
  CHECK(std::abs(from0 - 0.5) < 1e-12);
  CHECK(std::abs(from1 - 0.5) > 1e-2);
}

TEST_CASE("influence function mean zero at beta0 and nonzero elsewhere") {
  const MsmSpec msm = MsmSpec::default_for(1);
  for (const char* name : {"desk_dgp.json", "desk_j1.json", "perfect_compliance.json", "unconfounded.json"}) {
    const DgpSpec s = testutil::spec(name);
    const auto r = check_influence_zero(s, msm, kUniform);
    CHECK_MESSAGE(r.max_abs_diff < 1e-12, name);
    const Eigen::VectorXd b = true_beta(s, msm, kUniform).array() + 0.1;
    CHECK(check_influence_zero(s, msm, kUniform, b).max_abs_diff > 1e-3);
  }
}

TEST_CASE("population panel reproduces the observed law") {
  const DgpSpec s = testutil::spec("desk_dgp.json");
  const Panel p = population_panel(s);
  const ObservedLaw law = observed_law(s);
  double mass = 0.0, ey = 0.0, ey_law = 0.0;
  for (int i = 0; i < p.n(); ++i) {
    mass += p.weight(i);
    ey += p.weight(i) * p.Y(i);
  }
  for (std::uint32_t o = 0; o < law.size(); ++o) ey_law += law.p[o] * law.mean_y(2, o);
  CHECK(std::abs(mass - 1.0) < 1e-12);
  CHECK(std::abs(ey - ey_law) < 1e-12);
}

TEST_CASE("plim: iv_mr under all-correct and condition (ii); sra_ipw confounding bias pinned") {
  const DgpSpec s = testutil::spec("desk_dgp.json");
  const MsmSpec msm = MsmSpec::default_for(1);
  const Eigen::VectorXd b0 = true_beta(s, msm, kUniform);
  for (const char* pat : {"all_correct", "i_only", "ii_only", "iii_only"}) {
    const auto r = plim_solve(s, msm, EstimatorId::iv_mr, MisspecPattern::preset(pat), kUniform);
    CHECK(r.converged);
    CHECK_MESSAGE((r.beta - b0).lpNorm<Eigen::Infinity>() < 1e-8, pat);
  }
  const auto ipw = plim_solve(s, msm, EstimatorId::iv_ipw, MisspecPattern::preset("all_correct"), kUniform);
  CHECK((ipw.beta - b0).lpNorm<Eigen::Infinity>() < 1e-8);
  const auto wrong = plim_solve(s, msm, EstimatorId::iv_mr, MisspecPattern::preset("all_wrong"), kUniform);
  CHECK((wrong.beta - b0).lpNorm<Eigen::Infinity>() > 1e-2);
  const auto sra = plim_solve(s, msm, EstimatorId::sra_ipw, MisspecPattern::preset("all_correct"), kUniform);
  const Eigen::Vector3d pinned(-0.16833625823485665, 0.2366758313745858, -0.11875065909385363);
  CHECK((sra.beta - b0 - pinned).lpNorm<Eigen::Infinity>() < 1e-9);
  CHECK((sra.beta - b0).lpNorm<Eigen::Infinity>() > 0.05);
}

TEST_CASE("plim: SRA doubly robust estimator on the unconfounded DGP") {
  const DgpSpec s = testutil::spec("unconfounded.json");
  const MsmSpec msm = MsmSpec::default_for(1);
  const Eigen::VectorXd b0 = true_beta(s, msm, kUniform);
  for (const char* pat : {"all_correct", "sra_weights_wrong", "sra_outcome_wrong"}) {
    const auto r = plim_solve(s, msm, EstimatorId::sra_dr, MisspecPattern::preset(pat), kUniform);
    CHECK_MESSAGE((r.beta - b0).lpNorm<Eigen::Infinity>() < 1e-8, pat);
  }
  const auto both = plim_solve(s, msm, EstimatorId::sra_dr, MisspecPattern::preset("all_wrong"), kUniform);
  CHECK((both.beta - b0).lpNorm<Eigen::Infinity>() > 1e-2);
}

TEST_CASE("efficiency ordering holds exactly for H_eff against random H") {
  for (const char* name : {"desk_dgp.json", "desk_j1.json", "perfect_compliance.json"}) {
    const DgpSpec s = testutil::spec(name);
    const auto er = efficiency_population(s, MsmSpec::default_for(1), kUniform);
    CHECK_MESSAGE(er.pass, name);
    CHECK(er.v_random.size() == 20);
    for (int k = 0; k < er.v_eff.rows(); ++k) {
      CHECK(er.v_mr(k, k) >= er.v_eff(k, k) - 1e-10);
      CHECK(er.v_ipw(k, k) >= er.v_eff(k, k) - 1e-10);
    }
  }
}

TEST_CASE("J = 1 with a saturated MSM: every H gives the same variance and beta is the regime means") {
  DgpSpec s = testutil::spec("desk_j1.json");
  s.v_l0 = false;
  const MsmSpec sat = MsmSpec::make(MsmFamily::model_1_1, {"1", "a0"});
  const auto er = efficiency_population(s, sat, kUniform);
  CHECK(std::abs(er.beta0[0] - counterfactual_mean(s, Regime{{0}})) < 1e-12);
  CHECK(std::abs(er.beta0[0] + er.beta0[1] - counterfactual_mean(s, Regime{{1}})) < 1e-12);
  for (const auto& V : er.v_random)
    CHECK((V - er.v_eff).cwiseAbs().maxCoeff() < 1e-8 * er.v_eff.cwiseAbs().maxCoeff());
  CHECK((er.v_mr - er.v_eff).cwiseAbs().maxCoeff() < 1e-8 * er.v_eff.cwiseAbs().maxCoeff());
}

TEST_CASE("J = 1 with V: H_eff is a local minimum of the variance") {
  const DgpSpec s = testutil::spec("desk_j1.json");
  const MsmSpec msm = MsmSpec::default_for(1);
  auto pf = population_fit(s, msm, MisspecPattern::preset("all_correct"), kUniform);
  const Eigen::VectorXd b0 = true_beta(s, msm, kUniform);
  EffComponents ec = eff_components(pf->problem);
  set_heff(pf->problem, ec, b0);
  const Eigen::MatrixXd V0 = population_variance(pf->problem, ec, ec.heff, b0);
  for (double eps : {1e-3, -1e-3}) {
    for (std::size_t s_ = 0; s_ < ec.heff.size(); ++s_) {
      auto H = ec.heff;
      H[s_](0, 1) += eps;
      const Eigen::MatrixXd V = population_variance(pf->problem, ec, H, b0);
      for (int k = 0; k < V.rows(); ++k) CHECK(V(k, k) >= V0(k, k) - 1e-12);
    }
  }
}
