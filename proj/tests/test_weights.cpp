#include <doctest.h>

#include "common.hpp"
#include "msmiv/nuisance.hpp"
#include "msmiv/oracle.hpp"
#include "msmiv/weights.hpp"

using namespace msmiv;

namespace {

Panel one_subject(int z, int a) {
  Panel p(1, 1, {"L"}, {0});
  p.Z(0, 0) = static_cast<std::uint8_t>(z);
  p.A(0, 0) = static_cast<std::uint8_t>(a);
  return p;
}

NuisanceValues hand(double fz, double delta, double fstar, double fa) {
  NuisanceValues nv;
  nv.n = 1;
  nv.J = 1;
  nv.fz = {fz};
  nv.pz1 = {fz};
  nv.delta = {delta};
  nv.fstar = {fstar};
  nv.fa = {fa};
  nv.has_iv = nv.has_sra = true;
  return nv;
}

struct Fitted {
  Panel panel;
  NuisanceValues nv;
  WeightTrack wt;
};

Fitted fitted(const std::string& name, int n, std::uint64_t seed) {
  Fitted f{simulate(testutil::spec(name), n, seed), {}, {}};
  FitContext ctx(f.panel, MisspecPattern::preset("all_correct"), {}, ExecPolicy::serial);
  f.nv = fit_nuisances(ctx, Eigen::VectorXd::Ones(n));
  f.wt = compute_weights(f.panel, f.nv);
  return f;
}

}  // namespace

TEST_CASE("J = 1 IV weight arithmetic") {
  const WeightTrack t = compute_weights(one_subject(1, 1), hand(0.5, 0.5, 0.5, 0.8));
  CHECK(t.iv1[0] == 0.25);
  CHECK(t.iv2[0] == 2.0);
  CHECK(std::abs(t.iv[0] - 0.5) < 1e-15);
  CHECK(std::abs(t.inv_iv[0] - 2.0) < 1e-15);
  const WeightTrack n = compute_weights(one_subject(0, 1), hand(0.5, 0.5, 0.5, 0.8));
  CHECK(n.iv[0] < 0);
  CHECK(n.iv1[0] == -0.25);
}

TEST_CASE("J = 1 SRA weight arithmetic and the identity measure change") {
  const WeightTrack t = compute_weights(one_subject(1, 1), hand(0.5, 0.5, 0.5, 0.8));
  CHECK(std::abs(t.sra[0] - 1.6) < 1e-15);
  const WeightTrack same = compute_weights(one_subject(0, 0), hand(0.5, 0.5, 0.3, 0.3));
  CHECK(same.sra[0] == 1.0);
}

TEST_CASE("weight track invariants on a fitted desk sample") {
  const Fitted f = fitted("desk_dgp.json", 5000, 12);
  const auto& t = f.wt;
  for (int i = 0; i < f.panel.n(); ++i) {
    double prev = 1.0;
    int sign = 1;
    for (int j = 0; j < t.J; ++j) {
      const auto k = t.at(i, j);
      REQUIRE(t.sra[k] > 0);
      REQUIRE(t.iv[k] != 0);
      REQUIRE(std::abs(t.inv_iv[k] * t.iv[k] - 1.0) < 1e-14);
      REQUIRE(std::abs(t.iv[k] - prev * t.iv1[k] * t.iv2[k]) < 1e-12 * std::abs(t.iv[k]));
      sign *= (f.panel.Z(i, j) ? 1 : -1) * (f.panel.A(i, j) ? 1 : -1) * (f.nv.delta[k] < 0 ? -1 : 1);
      REQUIRE(t.sign_iv[k] == sign);
      REQUIRE((t.iv[k] > 0) == (sign > 0));
      prev = t.iv[k];
    }
  }
}

TEST_CASE("perfect compliance: IV weights equal SRA weights bitwise") {
  const Fitted f = fitted("perfect_compliance.json", 5000, 3);
  CHECK(f.wt.iv == f.wt.sra);
  CHECK(f.wt.inv_iv == f.wt.inv_sra);
  const auto d = weight_diagnostics(f.wt, Eigen::VectorXd::Ones(f.panel.n()));
  CHECK(d.positive_fraction == 1.0);
}

TEST_CASE("mean-one: sample means of inverse weights within 3 SE at n = 1e5") {
  const Fitted f = fitted("desk_dgp.json", 100000, 77);
  const int n = f.panel.n();
  for (bool iv : {true, false}) {
    double m = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = iv ? f.wt.inv_iv_final(i) : f.wt.inv_sra_final(i);
      m += x;
      m2 += x * x;
    }
    m /= n;
    const double se = std::sqrt((m2 / n - m * m) / n);
    CHECK_MESSAGE(std::abs(m - 1.0) < 3 * se, (iv ? "iv" : "sra"));
  }
}

TEST_CASE("diagnostics: unit weights give ESS = n; sign split matches enumeration") {
  WeightTrack t;
  t.n = 50;
  t.J = 1;
  t.inv_iv.assign(50, 1.0);
  t.iv.assign(50, 1.0);
  t.has_iv = true;
  CHECK(std::abs(weight_diagnostics(t, Eigen::VectorXd::Ones(50)).ess - 50.0) < 1e-12);

  const Fitted f = fitted("desk_dgp.json", 100000, 78);
  const auto d = weight_diagnostics(f.wt, Eigen::VectorXd::Ones(f.panel.n()));
  const double truth = inverse_weight_moments(testutil::spec("desk_dgp.json"), ReferenceDensity::uniform()).positive_fraction;
  const double se = std::sqrt(truth * (1 - truth) / f.panel.n());
  CHECK(std::abs(d.positive_fraction - truth) < 3 * se);
}
