#include "msmiv/oracle.hpp"

#include <cmath>
#include <random>

#include "msmiv/error.hpp"
#include "msmiv/rng.hpp"

namespace msmiv {

using nlohmann::json;

IdentityReport IdentityReport::make(std::string name, std::vector<std::string> labels, std::vector<double> lhs,
                                    std::vector<double> rhs, double tol) {
  IdentityReport r;
  r.name = std::move(name);
  r.labels = std::move(labels);
  r.lhs = std::move(lhs);
  r.rhs = std::move(rhs);
  r.tolerance = tol;
  for (std::size_t k = 0; k < r.lhs.size(); ++k) {
    const double d = std::abs(r.lhs[k] - r.rhs[k]);
    r.max_abs_diff = std::isnan(d) ? INFINITY : std::max(r.max_abs_diff, d);
  }
  r.pass = r.max_abs_diff <= tol;
  return r;
}

json IdentityReport::to_json(bool with_rows) const {
  json j{{"name", name}, {"max_abs_diff", max_abs_diff}, {"tolerance", tolerance}, {"pass", pass}};
  if (!note.empty()) j["note"] = note;
  if (with_rows) {
    json rows = json::array();
    for (std::size_t k = 0; k < lhs.size(); ++k)
      rows.push_back({{"label", k < labels.size() ? labels[k] : ""}, {"lhs", lhs[k]}, {"rhs", rhs[k]}});
    j["rows"] = rows;
  }
  return j;
}

std::uint32_t obit::history(int j) {
  std::uint32_t m = 0;
  for (int k = 0; k <= j; ++k) m |= 1u << obit::l(k);
  for (int k = 0; k < j; ++k) m |= (1u << obit::z(k)) | (1u << obit::a(k));
  return m;
}

ObservedLaw observed_law(const DgpSpec& spec, const JointLaw& law) {
  const int J = spec.J;
  ObservedLaw o;
  o.J = J;
  const std::size_t size = std::size_t{1} << (3 * J);
  o.p.assign(size, 0.0);
  o.ey.assign(size * static_cast<std::size_t>(J), 0.0);
  o.ey2.assign(size, 0.0);
  for (std::uint64_t h = 0; h < law.size(); ++h) {
    const double pr = law.prob[h];
    if (pr == 0.0) continue;
    const auto c = observed_code(h, J);
    o.p[c] += pr;
    for (int m = 1; m <= J; ++m) o.ey[static_cast<std::size_t>(m - 1) * size + c] += pr * law.mean_y(m, h);
    const double mu = law.mean_y(J, h);
    o.ey2[c] += pr * (mu * mu + spec.sigmaY * spec.sigmaY);
  }
  for (std::size_t c = 0; c < size; ++c) {
    if (o.p[c] == 0.0) continue;
    for (int m = 1; m <= J; ++m) o.ey[static_cast<std::size_t>(m - 1) * size + c] /= o.p[c];
    o.ey2[c] /= o.p[c];
  }
  return o;
}

ObservedLaw observed_law(const DgpSpec& spec) { return observed_law(spec, conditional_tables(spec)); }

namespace {

/// Weighted means of the rows of x within groups sharing the bits in mask.
class CondMean {
 public:
  CondMean(const ObservedLaw& law, const Eigen::MatrixXd& x, std::uint32_t mask)
      : mask_(mask), num_(Eigen::MatrixXd::Zero(x.rows(), x.cols())), den_(law.size(), 0.0) {
    for (std::uint32_t o = 0; o < law.size(); ++o) {
      if (law.p[o] == 0.0) continue;
      num_.row(o & mask) += law.p[o] * x.row(o);
      den_[o & mask] += law.p[o];
    }
  }
  Eigen::RowVectorXd at(std::uint32_t o) const {
    const auto k = o & mask_;
    if (den_[k] == 0.0) return Eigen::RowVectorXd::Zero(num_.cols());
    return num_.row(k) / den_[k];
  }
  double scalar(std::uint32_t o) const { return at(o)[0]; }

 private:
  std::uint32_t mask_;
  Eigen::MatrixXd num_;
  std::vector<double> den_;
};

Eigen::MatrixXd indicator(const ObservedLaw& law, int bit) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(law.size()), 1);
  for (std::uint32_t o = 0; o < law.size(); ++o) x(o, 0) = obit::get(o, bit);
  return x;
}

std::uint64_t latent_from_observed(std::uint32_t o, int J) {
  std::uint64_t h = 0;
  for (int j = 0; j < J; ++j) {
    if (obit::get(o, obit::l(j))) h |= std::uint64_t{1} << hbit::l(j);
    if (obit::get(o, obit::z(j))) h |= std::uint64_t{1} << hbit::z(j);
    if (obit::get(o, obit::a(j))) h |= std::uint64_t{1} << hbit::a(j);
  }
  return h;
}

std::vector<double> v_of(const DgpSpec& spec, std::uint32_t o) {
  return spec.v_l0 ? std::vector<double>{static_cast<double>(obit::get(o, obit::l(0)))} : std::vector<double>{};
}

std::vector<std::uint8_t> a_of(std::uint32_t o, int upto) {
  std::vector<std::uint8_t> a(static_cast<std::size_t>(upto));
  for (int k = 0; k < upto; ++k) a[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(obit::get(o, obit::a(k)));
  return a;
}

/// Exact nuisances of the observed law: f(Z(j)=1 | history), delta(j),
/// E(A(j) | history, Z(j)) and f*(A(j)=1 | V, A-bar(j-1)) for every code.
struct TrueNuisances {
  std::vector<std::vector<double>> pz1, delta, ea, fstar1;
};

TrueNuisances true_nuisances(const DgpSpec& spec, const ObservedLaw& law, const ReferenceDensity& fstar) {
  const int J = spec.J;
  TrueNuisances t;
  for (int j = 0; j < J; ++j) {
    CondMean z(law, indicator(law, obit::z(j)), obit::history(j));
    CondMean a(law, indicator(law, obit::a(j)), obit::history(j) | (1u << obit::z(j)));
    std::vector<double> pz(law.size()), d(law.size()), ea(law.size()), f1(law.size());
    for (std::uint32_t o = 0; o < law.size(); ++o) {
      pz[o] = z.scalar(o);
      ea[o] = a.scalar(o);
      if (spec.unchecked) {
        const std::uint32_t zb = 1u << obit::z(j);
        d[o] = a.scalar(o | zb) - a.scalar(o & ~zb);
      } else {
        d[o] = spec.delta[j].eval(latent_from_observed(o, J));
      }
      f1[o] = fstar.p1(j, v_of(spec, o), a_of(o, j));
    }
    t.pz1.push_back(std::move(pz));
    t.delta.push_back(std::move(d));
    t.ea.push_back(std::move(ea));
    t.fstar1.push_back(std::move(f1));
  }
  return t;
}

/// Calls leaf(prob, h) for every latent (U, L) path under the fixed regime.
template <class F>
void regime_paths(const DgpSpec& spec, const Regime& r, int j, std::uint64_t h, double prob, F& leaf) {
  if (prob == 0.0) return;
  if (j == spec.J) {
    leaf(prob, h);
    return;
  }
  const double pu = spec.pU[j].eval(h);
  for (int u = 0; u < 2; ++u) {
    const double qu = u ? pu : 1.0 - pu;
    if (qu == 0.0) continue;
    const std::uint64_t hu = h | (static_cast<std::uint64_t>(u) << hbit::u(j));
    const double pl = spec.pL[j].eval(hu);
    for (int l = 0; l < 2; ++l) {
      const double ql = l ? pl : 1.0 - pl;
      if (ql == 0.0) continue;
      std::uint64_t hl = hu | (static_cast<std::uint64_t>(l) << hbit::l(j));
      hl |= static_cast<std::uint64_t>(r.a[static_cast<std::size_t>(j)]) << hbit::a(j);
      regime_paths(spec, r, j + 1, hl, prob * qu * ql, leaf);
    }
  }
}

double prob_v(const ObservedLaw& law, int v) {
  double s = 0.0;
  for (std::uint32_t o = 0; o < law.size(); ++o)
    if (obit::get(o, obit::l(0)) == v) s += law.p[o];
  return s;
}

}  // namespace

double counterfactual_mean(const DgpSpec& spec, const Regime& regime, std::optional<double> v, int m) {
  if (regime.J() != spec.J) throw InputError("counterfactual_mean: regime length must equal J");
  if (m < 0) m = spec.J;
  const bool cond = v.has_value() && spec.v_l0;
  double num = 0.0, den = 0.0;
  auto leaf = [&](double prob, std::uint64_t h) {
    if (cond && hbit::get(h, hbit::l(0)) != static_cast<int>(*v)) return;
    num += prob * spec.mean_y(m, h);
    den += prob;
  };
  regime_paths(spec, regime, 0, 0, 1.0, leaf);
  if (den == 0.0) throw InputError("counterfactual_mean: V value has zero probability");
  return num / den;
}

ReferenceDensity resolve_reference(const DgpSpec& spec, const ReferenceDensity& fstar, const std::string& omit) {
  if (fstar.resolved()) return fstar;
  Panel pop = population_panel(spec);
  return ReferenceDensity::fitted(pop, Eigen::Map<const Eigen::VectorXd>(pop.weights().data(), pop.n()), omit);
}

Eigen::VectorXd true_beta(const DgpSpec& spec, const MsmSpec& msm_in, const ReferenceDensity& fstar_in) {
  const int J = spec.J;
  const int nv = spec.v_l0 ? 1 : 0;
  msm_in.validate(J, nv);
  const ReferenceDensity fstar = resolve_reference(spec, fstar_in);
  const ObservedLaw law = observed_law(spec);
  const int p = msm_in.dim_beta();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(p);
  std::vector<std::pair<std::vector<double>, double>> strata;
  if (spec.v_l0) {
    for (int v = 0; v < 2; ++v) strata.push_back({{static_cast<double>(v)}, prob_v(law, v)});
  } else {
    strata.push_back({{}, 1.0});
  }
  for (const auto& [v, pv] : strata) {
    if (pv == 0.0) continue;
    std::optional<double> vv = v.empty() ? std::nullopt : std::optional<double>(v[0]);
    for (const auto& r : enumerate_regimes(J)) {
      double wgt = pv;
      for (int j = 0; j < J; ++j) {
        const double f1 = fstar.p1(j, v, std::span<const std::uint8_t>(r.a.data(), static_cast<std::size_t>(j)));
        wgt *= r.a[static_cast<std::size_t>(j)] ? f1 : 1.0 - f1;
      }
      if (wgt == 0.0) continue;
      std::span<const std::uint8_t> a(r.a);
      const int m0 = msm_in.family == MsmFamily::model_1_1 ? J : 1;
      for (int m = m0; m <= J; ++m) {
        auto am = msm_in.family == MsmFamily::model_1_1 ? a : a.first(static_cast<std::size_t>(m));
        const Eigen::VectorXd h = msm_in.hvec(am, v, m), x = msm_in.x(am, v, m);
        A += wgt * h * x.transpose();
        c += wgt * h * counterfactual_mean(spec, r, vv, m);
      }
    }
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (!lu.isInvertible() || lu.rcond() < 1e-12) throw NumericError("true_beta: MSM features are collinear under f*");
  return lu.solve(c);
}

IdentityReport check_lemma1(const DgpSpec& spec, double tol) {
  const int J = spec.J;
  const JointLaw joint = conditional_tables(spec);
  const ObservedLaw law = observed_law(spec, joint);
  std::vector<std::string> labels;
  std::vector<double> lhs, rhs;
  for (int j = 0; j < J; ++j) {
    const std::uint32_t hist = obit::history(j), zb = 1u << obit::z(j);
    CondMean a(law, indicator(law, obit::a(j)), hist | zb);
    std::vector<double> cell_mass(law.size(), 0.0), arm1(law.size(), 0.0), arm0(law.size(), 0.0);
    for (std::uint32_t o = 0; o < law.size(); ++o) {
      cell_mass[o & hist] += law.p[o];
      (obit::get(o, obit::z(j)) ? arm1 : arm0)[o & hist] += law.p[o];
    }
    for (std::uint32_t cell = 0; cell < law.size(); ++cell) {
      if ((cell & ~hist) != 0 || arm1[cell] == 0.0 || arm0[cell] == 0.0) continue;
      const double contrast = a.scalar(cell | zb) - a.scalar(cell);
      std::uint64_t h = latent_from_observed(cell, J);
      for (std::uint32_t ucfg = 0; ucfg < (1u << (j + 1)); ++ucfg) {
        std::uint64_t hu = h;
        std::string label = "j=" + std::to_string(j);
        for (int k = 0; k <= j; ++k) {
          if ((ucfg >> k) & 1u) hu |= std::uint64_t{1} << hbit::u(k);
          label += ",u" + std::to_string(k) + "=" + std::to_string((ucfg >> k) & 1u);
        }
        for (int k = 0; k <= j; ++k) label += ",l" + std::to_string(k) + "=" + std::to_string(obit::get(cell, obit::l(k)));
        for (int k = 0; k < j; ++k)
          label += ",z" + std::to_string(k) + "=" + std::to_string(obit::get(cell, obit::z(k))) + ",a" + std::to_string(k) +
                   "=" + std::to_string(obit::get(cell, obit::a(k)));
        labels.push_back(label);
        lhs.push_back(contrast);
        rhs.push_back(spec.delta[j].eval(hu));
      }
    }
  }
  auto r = IdentityReport::make("lemma1", labels, lhs, rhs, tol);
  r.note = "observed instrument-arm contrast vs structural delta for every latent U configuration";
  return r;
}

std::vector<TestFunction> lemma2_battery(int J) {
  std::vector<TestFunction> out;
  const std::uint32_t C = 1u << J;
  out.push_back({"one", [](std::uint32_t, std::uint32_t) { return std::pair(1.0, 0.0); }});
  out.push_back({"Y", [](std::uint32_t, std::uint32_t) { return std::pair(0.0, 1.0); }});
  for (std::uint32_t a = 0; a < C; ++a)
    for (std::uint32_t l = 0; l < C; ++l)
      out.push_back({"1(A=" + std::to_string(a) + ",L=" + std::to_string(l) + ")", [a, l](std::uint32_t aa, std::uint32_t ll) {
                       return std::pair(aa == a && ll == l ? 1.0 : 0.0, 0.0);
                     }});
  for (std::uint32_t a = 0; a < C; ++a)
    out.push_back({"Y*1(A=" + std::to_string(a) + ")", [a](std::uint32_t aa, std::uint32_t) {
                     return std::pair(0.0, aa == a ? 1.0 : 0.0);
                   }});
  for (std::uint32_t l = 0; l < C; ++l)
    out.push_back({"Y*1(L=" + std::to_string(l) + ")", [l](std::uint32_t, std::uint32_t ll) {
                     return std::pair(0.0, ll == l ? 1.0 : 0.0);
                   }});
  return out;
}

IdentityReport check_lemma2(const DgpSpec& spec, const TestFunction& g, const ReferenceDensity& fstar_in, double tol) {
  const int J = spec.J;
  const ReferenceDensity fstar = resolve_reference(spec, fstar_in);
  const ObservedLaw law = observed_law(spec);
  const TrueNuisances tn = true_nuisances(spec, law, fstar);
  std::vector<std::string> labels;
  std::vector<double> lhs, rhs;
  const int strata = spec.v_l0 ? 2 : 1;
  for (int v = 0; v < strata; ++v) {
    double num = 0.0, pv = 0.0;
    for (std::uint32_t o = 0; o < law.size(); ++o) {
      if (law.p[o] == 0.0 || (spec.v_l0 && obit::get(o, obit::l(0)) != v)) continue;
      double inv = 1.0;
      std::uint32_t acode = 0, lcode = 0;
      for (int k = 0; k < J; ++k) {
        const int z = obit::get(o, obit::z(k)), a = obit::get(o, obit::a(k));
        const double fz = z ? tn.pz1[k][o] : 1.0 - tn.pz1[k][o];
        const double fs = a ? tn.fstar1[k][o] : 1.0 - tn.fstar1[k][o];
        const double d = tn.delta[k][o];
        if (d == 0.0) throw NumericError("check_lemma2: delta is zero in a reachable cell (IV relevance fails)");
        inv *= (z ? 1.0 : -1.0) * (a ? 1.0 : -1.0) * fs / (fz * d);
        acode |= static_cast<std::uint32_t>(a) << k;
        lcode |= static_cast<std::uint32_t>(obit::get(o, obit::l(k))) << k;
      }
      const auto [c0, c1] = g.coef(acode, lcode);
      num += law.p[o] * (c0 + c1 * law.mean_y(J, o)) * inv;
      pv += law.p[o];
    }
    if (pv == 0.0) continue;
    const std::vector<double> vv = spec.v_l0 ? std::vector<double>{static_cast<double>(v)} : std::vector<double>{};
    double total = 0.0;
    for (const auto& r : enumerate_regimes(J)) {
      double wgt = 1.0;
      std::uint32_t acode = 0;
      for (int j = 0; j < J; ++j) {
        const double f1 = fstar.p1(j, vv, std::span<const std::uint8_t>(r.a.data(), static_cast<std::size_t>(j)));
        wgt *= r.a[static_cast<std::size_t>(j)] ? f1 : 1.0 - f1;
        acode |= static_cast<std::uint32_t>(r.a[static_cast<std::size_t>(j)]) << j;
      }
      double e = 0.0, den = 0.0;
      auto leaf = [&](double prob, std::uint64_t h) {
        if (spec.v_l0 && hbit::get(h, hbit::l(0)) != v) return;
        std::uint32_t lcode = 0;
        for (int k = 0; k < J; ++k) lcode |= static_cast<std::uint32_t>(hbit::get(h, hbit::l(k))) << k;
        const auto [c0, c1] = g.coef(acode, lcode);
        e += prob * (c0 + c1 * spec.mean_y(J, h));
        den += prob;
      };
      regime_paths(spec, r, 0, 0, 1.0, leaf);
      if (den > 0.0) total += wgt * e / den;
    }
    labels.push_back(g.name + " | v=" + std::to_string(v));
    lhs.push_back(num / pv);
    rhs.push_back(total);
  }
  return IdentityReport::make("lemma2:" + g.name, labels, lhs, rhs, tol);
}

InverseWeightMoments inverse_weight_moments(const DgpSpec& spec, const ReferenceDensity& fstar_in) {
  const ReferenceDensity fstar = resolve_reference(spec, fstar_in);
  const ObservedLaw law = observed_law(spec);
  const TrueNuisances tn = true_nuisances(spec, law, fstar);
  InverseWeightMoments m;
  for (std::uint32_t o = 0; o < law.size(); ++o) {
    if (law.p[o] == 0.0) continue;
    double inv = 1.0;
    for (int k = 0; k < spec.J; ++k) {
      const int z = obit::get(o, obit::z(k)), a = obit::get(o, obit::a(k));
      const double fz = z ? tn.pz1[k][o] : 1.0 - tn.pz1[k][o];
      const double fs = a ? tn.fstar1[k][o] : 1.0 - tn.fstar1[k][o];
      inv *= (z ? 1.0 : -1.0) * (a ? 1.0 : -1.0) * fs / (fz * tn.delta[k][o]);
    }
    m.mean_inverse += law.p[o] * inv;
    if (inv > 0.0) m.positive_fraction += law.p[o];
  }
  return m;
}

IdentityReport check_influence_zero(const DgpSpec& spec, const MsmSpec& msm, const ReferenceDensity& fstar_in,
                                    std::optional<Eigen::VectorXd> beta_opt, double tol) {
  const int J = spec.J, p = msm.dim_beta();
  const ReferenceDensity fstar = resolve_reference(spec, fstar_in);
  const Eigen::VectorXd beta = beta_opt ? *beta_opt : true_beta(spec, msm, fstar);
  const ObservedLaw law = observed_law(spec);
  const TrueNuisances tn = true_nuisances(spec, law, fstar);
  const auto size = static_cast<Eigen::Index>(law.size());

  Eigen::MatrixXd dsm = Eigen::MatrixXd::Zero(size, p);
  for (std::uint32_t o = 0; o < law.size(); ++o) {
    if (law.p[o] == 0.0) continue;
    const auto v = v_of(spec, o);
    const auto a = a_of(o, J);
    std::span<const std::uint8_t> as(a);
    if (msm.family == MsmFamily::model_1_1) {
      dsm.row(o) = (msm.hvec(as, v, J) * (law.mean_y(J, o) - msm.x(as, v, J).dot(beta))).transpose();
    } else {
      for (int m = 1; m <= J; ++m) {
        auto am = as.first(static_cast<std::size_t>(m));
        dsm.row(o) += (msm.hvec(am, v, m) * (law.mean_y(m, o) - msm.x(am, v, m).dot(beta))).transpose();
      }
    }
  }
  // inv[j][o] = 1 / W-dagger(j), cumulative from k = 0.
  std::vector<std::vector<double>> inv(static_cast<std::size_t>(J), std::vector<double>(law.size(), 0.0));
  for (std::uint32_t o = 0; o < law.size(); ++o) {
    double acc = 1.0;
    for (int k = 0; k < J; ++k) {
      const int z = obit::get(o, obit::z(k)), a = obit::get(o, obit::a(k));
      const double fz = z ? tn.pz1[k][o] : 1.0 - tn.pz1[k][o];
      const double fs = a ? tn.fstar1[k][o] : 1.0 - tn.fstar1[k][o];
      acc *= (z ? 1.0 : -1.0) * (a ? 1.0 : -1.0) * fs / (fz * tn.delta[k][o]);
      inv[static_cast<std::size_t>(k)][o] = acc;
    }
  }
  Eigen::MatrixXd dag(size, p);
  for (std::uint32_t o = 0; o < law.size(); ++o) dag.row(o) = dsm.row(o) * inv[static_cast<std::size_t>(J - 1)][o];
  Eigen::MatrixXd X = dsm;
  for (int j = J - 1; j >= 0; --j) {
    const std::uint32_t zb = 1u << obit::z(j);
    Eigen::MatrixXd P(size, p);
    for (std::uint32_t o = 0; o < law.size(); ++o) {
      const int a = obit::get(o, obit::a(j));
      const double fs = a ? tn.fstar1[j][o] : 1.0 - tn.fstar1[j][o];
      P.row(o) = (a ? 1.0 : -1.0) * fs * X.row(o) / tn.delta[j][o];
    }
    CondMean psi(law, P, obit::history(j) | zb);
    Eigen::MatrixXd gamma1(size, p);
    for (std::uint32_t o = 0; o < law.size(); ++o) {
      const Eigen::RowVectorXd g0 = psi.at(o & ~zb), g1 = psi.at(o | zb) - g0;
      gamma1.row(o) = g1;
      const int z = obit::get(o, obit::z(j));
      const double sz = z ? 1.0 : -1.0;
      const double fz = z ? tn.pz1[j][o] : 1.0 - tn.pz1[j][o];
      const double prev = j == 0 ? 1.0 : inv[static_cast<std::size_t>(j - 1)][o];
      const double eps = obit::get(o, obit::a(j)) - tn.ea[j][o];
      dag.row(o) -= prev * (sz * (g0 + z * g1) / fz - g1);
      dag.row(o) -= prev * eps * sz / (fz * tn.delta[j][o]) * g1;
    }
    X = gamma1;
  }
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(p);
  for (std::uint32_t o = 0; o < law.size(); ++o)
    if (law.p[o] > 0.0) mean += law.p[o] * dag.row(o);
  std::vector<std::string> labels;
  std::vector<double> lhs, rhs;
  for (int k = 0; k < p; ++k) {
    labels.push_back("E[D](" + msm.g[static_cast<std::size_t>(k)].text() + ")");
    lhs.push_back(mean[k]);
    rhs.push_back(0.0);
  }
  return IdentityReport::make("influence_zero", labels, lhs, rhs, tol);
}

Panel population_panel(const DgpSpec& spec) {
  const int J = spec.J;
  const ObservedLaw law = observed_law(spec);
  std::vector<std::uint32_t> codes;
  for (std::uint32_t o = 0; o < law.size(); ++o)
    if (law.p[o] > 0.0) codes.push_back(o);
  Panel p(static_cast<int>(2 * codes.size()), J, {"L"}, spec.v_l0 ? std::vector<int>{0} : std::vector<int>{});
  int i = 0;
  for (auto o : codes) {
    const double mu = law.mean_y(J, o);
    const double sd = std::sqrt(std::max(0.0, law.ey2[o] - mu * mu));
    for (int s = 0; s < 2; ++s, ++i) {
      for (int j = 0; j < J; ++j) {
        p.L(i, j, 0) = obit::get(o, obit::l(j));
        p.Z(i, j) = static_cast<std::uint8_t>(obit::get(o, obit::z(j)));
        p.A(i, j) = static_cast<std::uint8_t>(obit::get(o, obit::a(j)));
        p.Yser(i, j) = law.mean_y(j + 1, o);
      }
      p.Yser(i, J - 1) = mu + (s ? sd : -sd);
      p.weights()[static_cast<std::size_t>(i)] = 0.5 * law.p[o];
    }
  }
  return p;
}

std::unique_ptr<PopulationFit> population_fit(const DgpSpec& spec, const MsmSpec& msm, const MisspecPattern& misspec,
                                              const ReferenceDensity& fstar, const SolverOptions& solver) {
  auto pf = std::make_unique<PopulationFit>();
  pf->panel = std::make_unique<Panel>(population_panel(spec));
  NuisanceOptions opts;
  opts.kind = FitKind::saturated;
  opts.fstar = resolve_reference(spec, fstar, misspec.reference_density);
  pf->ctx = std::make_unique<FitContext>(*pf->panel, misspec, opts, ExecPolicy::serial);
  pf->problem = make_problem(*pf->ctx, msm, solver);
  return pf;
}

SolverOptions plim_solver_options() {
  SolverOptions s;
  s.tol = 1e-11;
  return s;
}

json PlimResult::to_json() const {
  return json{{"beta", std::vector<double>(beta.data(), beta.data() + beta.size())},
              {"eq_norm", eq_norm},
              {"converged", converged},
              {"trace", trace}};
}

PlimResult plim_solve(const DgpSpec& spec, const MsmSpec& msm, EstimatorId id, const MisspecPattern& misspec,
                      const ReferenceDensity& fstar, const SolverOptions& solver) {
  auto pf = population_fit(spec, msm, misspec, fstar, solver);
  const Estimate est = estimate(id, pf->problem, false);
  PlimResult r;
  r.beta = est.beta;
  r.eq_norm = est.eq_norm;
  r.converged = est.converged;
  r.trace = est.trace;
  if (!r.converged && id != EstimatorId::iv_eff) {
    const Eigen::VectorXd b0 = beta_init(pf->problem, id != EstimatorId::sra_ipw && id != EstimatorId::sra_dr);
    for (int k = 0; k <= 10; ++k) {
      const double t = k / 10.0;
      const Eigen::VectorXd b = b0 + t * (r.beta - b0);
      const double norm = mean_residual(pf->problem, id, b).lpNorm<Eigen::Infinity>();
      r.trace.push_back("residual curve t=" + std::to_string(t) + " |U|inf=" + std::to_string(norm));
    }
  }
  return r;
}

Eigen::MatrixXd population_variance(const Problem& pr, const EffComponents& ec, const std::vector<Eigen::MatrixXd>& H,
                                    const Eigen::VectorXd& beta) {
  const int p = pr.p(), n = pr.n();
  const Eigen::MatrixXd xt = ec.xi_tilde(beta, p);
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(p, p), M = Eigen::MatrixXd::Zero(p, p);
  double wsum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double wi = pr.w[i];
    if (wi == 0.0) continue;
    const auto& Hs = H[static_cast<std::size_t>(ec.stratum[static_cast<std::size_t>(i)])];
    const Eigen::VectorXd inf = Hs * xt.row(i).transpose();
    B += wi * Hs * ec.grad(i, p);
    M += wi * inf * inf.transpose();
    wsum += wi;
  }
  B /= wsum;
  M /= wsum;
  const Eigen::MatrixXd Binv = B.inverse();
  Eigen::MatrixXd V = Binv * M * Binv.transpose();
  return 0.5 * (V + V.transpose());
}

EfficiencyReport efficiency_population(const DgpSpec& spec, const MsmSpec& msm, const ReferenceDensity& fstar_in,
                                       int n_random, std::uint64_t seed, double slack) {
  if (msm.family != MsmFamily::model_1_1) throw InputError("efficiency: Model 1.1 only");
  const ReferenceDensity fstar = resolve_reference(spec, fstar_in);
  auto pf = population_fit(spec, msm, MisspecPattern::preset("all_correct"), fstar);
  const Problem& pr = pf->problem;
  EfficiencyReport rep;
  rep.beta0 = true_beta(spec, msm, fstar);
  EffComponents ec = eff_components(pr);
  set_heff(pr, ec, rep.beta0);
  rep.v_eff = population_variance(pr, ec, ec.heff, rep.beta0);

  const int p = pr.p(), C = ec.C, J = spec.J;
  std::vector<Eigen::MatrixXd> Hmr;
  for (const auto& v : ec.strata_v) {
    Eigen::MatrixXd H(p, C);
    for (int c = 0; c < C; ++c) {
      const Regime r = regime_from_index(static_cast<std::uint32_t>(c), J);
      H.col(c) = msm.hvec(r.a, v, J);
    }
    Hmr.push_back(H);
  }
  rep.v_mr = population_variance(pr, ec, Hmr, rep.beta0);

  {
    const Eigen::MatrixXd infl = influence(pr, EstimatorId::iv_ipw, rep.beta0);
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(p, p), M = Eigen::MatrixXd::Zero(p, p);
    const double wsum = pr.w.sum();
    for (int i = 0; i < pr.n(); ++i) {
      const double wi = pr.w[i] * pr.wt.inv_iv_final(i);
      for (int r = 0; r < p; ++r)
        for (int k = 0; k < p; ++k) B(r, k) -= wi * pr.terms->M(i, r * p + k);
      M += pr.w[i] * infl.row(i).transpose() * infl.row(i);
    }
    B /= wsum;
    M /= wsum;
    const Eigen::MatrixXd Binv = B.inverse();
    rep.v_ipw = Binv * M * Binv.transpose();
  }

  CounterRng rng(seed, 0);
  std::normal_distribution<double> normal;
  rep.worst_margin = INFINITY;
  auto margin = [&](const Eigen::MatrixXd& V) {
    for (int k = 0; k < p; ++k) rep.worst_margin = std::min(rep.worst_margin, V(k, k) - rep.v_eff(k, k));
  };
  margin(rep.v_mr);
  for (int r = 0; r < n_random; ++r) {
    std::vector<Eigen::MatrixXd> H;
    for (std::size_t s = 0; s < ec.strata_v.size(); ++s) {
      Eigen::MatrixXd Hs(p, C);
      for (int a = 0; a < p; ++a)
        for (int c = 0; c < C; ++c) Hs(a, c) = normal(rng);
      H.push_back(Hs);
    }
    rep.v_random.push_back(population_variance(pr, ec, H, rep.beta0));
    margin(rep.v_random.back());
  }
  rep.pass = rep.worst_margin >= -slack;
  return rep;
}

}  // namespace msmiv
