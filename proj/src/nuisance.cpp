#include "msmiv/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "msmiv/error.hpp"
#include "msmiv/logistic.hpp"

namespace msmiv {

using nlohmann::json;

namespace {

const char* const kFields[] = {"instrument_density", "delta", "treatment_mean", "psi1",
                               "psi0", "reference_density", "sra_treatment", "sra_outcome"};

std::string* field(MisspecPattern& p, const std::string& name) {
  if (name == "instrument_density") return &p.instrument_density;
  if (name == "delta") return &p.delta;
  if (name == "treatment_mean") return &p.treatment_mean;
  if (name == "psi1") return &p.psi1;
  if (name == "psi0") return &p.psi0;
  if (name == "reference_density") return &p.reference_density;
  if (name == "sra_treatment") return &p.sra_treatment;
  if (name == "sra_outcome") return &p.sra_outcome;
  return nullptr;
}

}  // namespace

const std::vector<std::string>& MisspecPattern::preset_names() {
  static const std::vector<std::string> names = {"all_correct", "i_only", "ii_only", "iii_only", "all_wrong",
                                                 "sra_weights_wrong", "sra_outcome_wrong"};
  return names;
}

MisspecPattern MisspecPattern::preset(const std::string& name, const std::string& c) {
  MisspecPattern p;
  p.label = name;
  if (name == "all_correct") return p;
  if (name == "i_only") {
    p.treatment_mean = p.psi1 = p.psi0 = p.sra_outcome = c;
  } else if (name == "ii_only") {
    p.delta = p.treatment_mean = p.psi0 = p.sra_treatment = c;
  } else if (name == "iii_only") {
    p.instrument_density = p.sra_treatment = c;
  } else if (name == "all_wrong") {
    p.instrument_density = p.delta = p.treatment_mean = p.psi1 = p.psi0 = p.sra_treatment = p.sra_outcome = c;
  } else if (name == "sra_weights_wrong") {
    p.sra_treatment = c;
  } else if (name == "sra_outcome_wrong") {
    p.sra_outcome = c;
  } else {
    throw InputError("unknown misspecification pattern '" + name + "'");
  }
  return p;
}

MisspecPattern MisspecPattern::from_json(const json& j) {
  if (j.is_string()) return preset(j.get<std::string>());
  if (!j.is_object()) throw InputError("misspec pattern must be a preset name or an object");
  if (j.contains("preset")) return preset(j.at("preset").get<std::string>(), j.value("column", "L"));
  MisspecPattern p;
  p.label = j.value("label", "custom");
  const std::string column = j.value("column", "L");
  for (const auto& [key, val] : j.items()) {
    if (key == "label" || key == "column") continue;
    std::string* f = field(p, key);
    if (!f) throw InputError("misspec: unknown nuisance '" + key + "'");
    const auto v = val.get<std::string>();
    if (v == "correct") {
      f->clear();
    } else if (v == "omit_covariate") {
      *f = column;
    } else {
      throw InputError("misspec: value for '" + key + "' must be correct or omit_covariate");
    }
  }
  return p;
}

json MisspecPattern::to_json() const {
  json j{{"label", label}};
  MisspecPattern copy = *this;
  for (const char* name : kFields) {
    const std::string& v = *field(copy, name);
    j[name] = v.empty() ? "correct" : "omit:" + v;
  }
  return j;
}

ReferenceDensity ReferenceDensity::uniform() { return {}; }

ReferenceDensity ReferenceDensity::user_table(std::map<std::string, double> table) {
  ReferenceDensity r;
  r.mode_ = Mode::user_table;
  for (const auto& [k, v] : table)
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("reference density table entry '" + k + "' is not a probability");
  r.table_ = std::move(table);
  return r;
}

ReferenceDensity ReferenceDensity::fitted(const Panel& panel, const Eigen::VectorXd& w, const std::string& omit) {
  ReferenceDensity r;
  r.mode_ = Mode::fitted;
  for (int v = 0; v < panel.nv(); ++v)
    if (omit.empty() || panel.l_names()[static_cast<std::size_t>(panel.v_idx()[static_cast<std::size_t>(v)])] != omit)
      r.keep_v_.push_back(v);
  for (int k = 0; k < panel.J(); ++k) {
    DesignSpec spec{k, false, true, false, {}, ArmVar::none};
    for (int v = 0; v < panel.nv(); ++v)
      if (std::find(r.keep_v_.begin(), r.keep_v_.end(), v) == r.keep_v_.end()) spec.omit.push_back(v);
    CellIndex idx(panel, spec, FitKind::parametric);
    Eigen::VectorXd y(panel.n());
    for (int i = 0; i < panel.n(); ++i) y[i] = panel.A(i, k);
    r.coef_.push_back(fit_logistic(idx.X(), y, w).coef);
  }
  return r;
}

ReferenceDensity ReferenceDensity::from_json(const json& j) {
  if (j.is_string()) {
    const auto m = j.get<std::string>();
    if (m == "uniform") return uniform();
    if (m == "fitted") {
      ReferenceDensity r;
      r.mode_ = Mode::fitted;
      return r;
    }
    throw InputError("fstar: unknown mode '" + m + "'");
  }
  const auto mode = j.value("mode", "uniform");
  if (mode == "user_table") return user_table(j.at("table").get<std::map<std::string, double>>());
  return from_json(json(mode));
}

json ReferenceDensity::to_json() const {
  switch (mode_) {
    case Mode::uniform:
      return json{{"mode", "uniform"}};
    case Mode::user_table:
      return json{{"mode", "user_table"}, {"table", table_}};
    case Mode::fitted: {
      json c = json::array();
      for (const auto& v : coef_) c.push_back(std::vector<double>(v.data(), v.data() + v.size()));
      return json{{"mode", "fitted"}, {"coefficients", c}, {"v_columns", keep_v_}};
    }
  }
  return nullptr;
}

std::string ReferenceDensity::key(int k, std::span<const double> v, std::span<const std::uint8_t> a_prev) {
  std::string s = "j=" + std::to_string(k);
  char buf[40];
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == std::floor(v[i]) && std::abs(v[i]) < 1e15)
      std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v[i]));
    else
      std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    s += ",v" + std::to_string(i) + "=" + buf;
  }
  for (std::size_t t = 0; t < a_prev.size(); ++t) s += ",a" + std::to_string(t) + "=" + std::to_string(a_prev[t]);
  return s;
}

double ReferenceDensity::p1(int k, std::span<const double> v, std::span<const std::uint8_t> a_prev) const {
  switch (mode_) {
    case Mode::uniform:
      return 0.5;
    case Mode::user_table: {
      auto it = table_.find(key(k, v, a_prev));
      if (it == table_.end()) throw InputError("reference density: no entry for '" + key(k, v, a_prev) + "'");
      return it->second;
    }
    case Mode::fitted: {
      if (coef_.empty()) throw InputError("reference density: fitted mode used before fitting");
      const auto& c = coef_.at(static_cast<std::size_t>(k));
      double eta = c[0];
      Eigen::Index pos = 1;
      for (int vi : keep_v_) eta += c[pos++] * v[static_cast<std::size_t>(vi)];
      for (auto a : a_prev) eta += c[pos++] * a;
      return expit(eta);
    }
  }
  return 0.5;
}

FitContext::FitContext(const Panel& panel, MisspecPattern misspec, NuisanceOptions options, ExecPolicy policy)
    : panel_(panel), misspec_(std::move(misspec)), options_(std::move(options)), policy_(policy) {
  const int J = panel.J(), n = panel.n();
  if (!options_.fstar.resolved())
    options_.fstar = ReferenceDensity::fitted(panel, Eigen::Map<const Eigen::VectorXd>(panel.weights().data(), n),
                                              misspec_.reference_density);
  const auto om = [&](const std::string& c) { return omit_l(c); };
  for (int j = 0; j < J; ++j) {
    fz_.push_back(index({j, true, true, true, om(misspec_.instrument_density), ArmVar::none}));
    delta_.push_back(index({j, true, true, true, om(misspec_.delta), ArmVar::z}));
    mean_.push_back(index({j, true, true, true, om(misspec_.treatment_mean), ArmVar::z}));
    psi1_.push_back(index({j, true, true, true, om(misspec_.psi1), ArmVar::z}));
    psi0_.push_back(index({j, true, true, true, om(misspec_.psi0), ArmVar::z}));
    sra_a_.push_back(index({j, true, true, false, om(misspec_.sra_treatment), ArmVar::none}));
    sra_c_.push_back(index({j, true, true, false, om(misspec_.sra_outcome), ArmVar::a}));
  }
  fstar1_.resize(static_cast<std::size_t>(n) * J);
  for (int i = 0; i < n; ++i) {
    std::vector<double> v(static_cast<std::size_t>(panel.nv()));
    for (int k = 0; k < panel.nv(); ++k) v[static_cast<std::size_t>(k)] = panel.V(i, k);
    for (int j = 0; j < J; ++j) {
      double p = options_.fstar.p1(j, v, std::span<const std::uint8_t>(panel.A_row(i), static_cast<std::size_t>(j)));
      if (options_.fstar.mode() == ReferenceDensity::Mode::fitted) p = std::clamp(p, options_.clamp, 1.0 - options_.clamp);
      fstar1_[static_cast<std::size_t>(i) * J + j] = p;
    }
  }
}

std::vector<int> FitContext::omit_l(const std::string& column) const {
  if (column.empty()) return {};
  const auto& names = panel_.l_names();
  auto it = std::find(names.begin(), names.end(), column);
  if (it == names.end()) throw InputError("misspec: omit_covariate names unknown L column '" + column + "'");
  return {static_cast<int>(it - names.begin())};
}

const CellIndex* FitContext::index(const DesignSpec& spec) {
  auto& slot = cache_[spec.key()];
  if (!slot) slot = std::make_unique<CellIndex>(panel_, spec, options_.kind);
  return slot.get();
}

json NuisanceDiagnostics::to_json() const {
  return json{{"clamp_events", clamp_events},
              {"delta_floor_events", delta_floor_events},
              {"psi_delta_floor_events", psi_delta_floor_events},
              {"fallback_cells", fallback_cells},
              {"separation", separation}};
}

namespace {

Eigen::MatrixXd response(const Panel& p, int j, bool z) {
  Eigen::MatrixXd r(p.n(), 1);
  for (int i = 0; i < p.n(); ++i) r(i, 0) = z ? p.Z(i, j) : p.A(i, j);
  return r;
}

void init(const FitContext& ctx, NuisanceValues& out) {
  if (out.n == 0 && out.J == 0) {
    out.n = ctx.panel().n();
    out.J = ctx.J();
  }
}

double floor_delta(double d, double floor, int& events) {
  if (std::abs(d) >= floor) return d;
  ++events;
  return d < 0 ? -floor : floor;
}

}  // namespace

void fit_instrument_density(const FitContext& ctx, const Eigen::VectorXd& w, NuisanceValues& out) {
  init(ctx, out);
  const auto& p = ctx.panel();
  const double c = ctx.options().clamp;
  out.pz1.assign(static_cast<std::size_t>(out.n) * out.J, 0.0);
  out.fz.assign(out.pz1.size(), 0.0);
  for (int j = 0; j < out.J; ++j) {
    auto fit = ArmFit::fit(ctx.fz(j), response(p, j, true), w, ResponseKind::probability, ctx.policy());
    out.diag.fallback_cells += fit.fallback_cells();
    out.diag.separation = out.diag.separation || fit.separation();
    Eigen::MatrixXd pr = fit.predict(0);
    for (int i = 0; i < out.n; ++i) {
      double q = pr(i, 0);
      if (q < c || q > 1.0 - c) {
        ++out.diag.clamp_events;
        q = std::clamp(q, c, 1.0 - c);
      }
      out.pz1[out.at(i, j)] = q;
      out.fz[out.at(i, j)] = p.Z(i, j) ? q : 1.0 - q;
    }
  }
}

void fit_treatment_model(const FitContext& ctx, const Eigen::VectorXd& w, NuisanceValues& out) {
  init(ctx, out);
  const auto& p = ctx.panel();
  const double floor = ctx.options().delta_floor;
  const std::size_t size = static_cast<std::size_t>(out.n) * out.J;
  out.delta.assign(size, 0.0);
  out.m0.assign(size, 0.0);
  out.psi_delta.assign(size, 0.0);
  bool relevant = false;
  for (int j = 0; j < out.J; ++j) {
    const Eigen::MatrixXd a = response(p, j, false);
    auto arm_fit = [&](const CellIndex& idx) {
      auto f = ArmFit::fit(idx, a, w, ResponseKind::probability, ctx.policy());
      out.diag.fallback_cells += f.fallback_cells();
      out.diag.separation = out.diag.separation || f.separation();
      return std::pair<Eigen::MatrixXd, Eigen::MatrixXd>(f.predict(0), f.predict(1));
    };
    auto [d0, d1] = arm_fit(ctx.trt_delta(j));
    auto m = &ctx.trt_mean(j) == &ctx.trt_delta(j) ? std::pair(d0, d1) : arm_fit(ctx.trt_mean(j));
    auto s = &ctx.psi1(j) == &ctx.trt_delta(j) ? std::pair(d0, d1) : arm_fit(ctx.psi1(j));
    for (int i = 0; i < out.n; ++i) {
      const double d = d1(i, 0) - d0(i, 0);
      if (std::abs(d) >= floor && w[i] > 0) relevant = true;
      out.delta[out.at(i, j)] = floor_delta(d, floor, out.diag.delta_floor_events);
      out.m0[out.at(i, j)] = m.first(i, 0);
      out.psi_delta[out.at(i, j)] = floor_delta(s.second(i, 0) - s.first(i, 0), floor, out.diag.psi_delta_floor_events);
    }
  }
  if (!relevant && out.n > 0)
    throw NumericError("IV relevance failure: every fitted instrument contrast is below the floor " + std::to_string(floor));
}

void set_reference_density(const FitContext& ctx, NuisanceValues& out) {
  init(ctx, out);
  const auto& p = ctx.panel();
  out.fstar.assign(static_cast<std::size_t>(out.n) * out.J, 0.0);
  for (int i = 0; i < out.n; ++i)
    for (int j = 0; j < out.J; ++j) {
      const double f1 = ctx.fstar1()[out.at(i, j)];
      const double f = p.A(i, j) ? f1 : 1.0 - f1;
      if (!(f > 0.0)) throw InputError("reference density has zero mass at an observed treatment (subject " + std::to_string(p.id(i)) + ", time " + std::to_string(j) + ")");
      out.fstar[out.at(i, j)] = f;
    }
}

void fit_sra_treatment(const FitContext& ctx, const Eigen::VectorXd& w, NuisanceValues& out) {
  init(ctx, out);
  const auto& p = ctx.panel();
  const double c = ctx.options().clamp;
  out.fa.assign(static_cast<std::size_t>(out.n) * out.J, 0.0);
  for (int j = 0; j < out.J; ++j) {
    auto fit = ArmFit::fit(ctx.sra_a(j), response(p, j, false), w, ResponseKind::probability, ctx.policy());
    out.diag.fallback_cells += fit.fallback_cells();
    out.diag.separation = out.diag.separation || fit.separation();
    Eigen::MatrixXd pr = fit.predict(0);
    for (int i = 0; i < out.n; ++i) {
      double q = pr(i, 0);
      if (q < c || q > 1.0 - c) {
        ++out.diag.clamp_events;
        q = std::clamp(q, c, 1.0 - c);
      }
      out.fa[out.at(i, j)] = p.A(i, j) ? q : 1.0 - q;
    }
  }
}

NuisanceValues fit_nuisances(const FitContext& ctx, const Eigen::VectorXd& w, bool iv, bool sra) {
  if (w.size() != ctx.panel().n()) throw InputError("fit_nuisances: weight length does not match panel");
  NuisanceValues out;
  out.n = ctx.panel().n();
  out.J = ctx.J();
  set_reference_density(ctx, out);
  if (iv) {
    fit_instrument_density(ctx, w, out);
    fit_treatment_model(ctx, w, out);
    out.has_iv = true;
  }
  if (sra) {
    fit_sra_treatment(ctx, w, out);
    out.has_sra = true;
  }
  return out;
}

PsiRecursion fit_psi_recursion(const FitContext& ctx, const NuisanceValues& nv, const Eigen::VectorXd& w,
                               const Eigen::MatrixXd& terminal) {
  const auto& p = ctx.panel();
  const int J = ctx.J(), n = p.n();
  PsiRecursion out;
  out.gamma1.resize(static_cast<std::size_t>(J));
  out.gamma0.resize(static_cast<std::size_t>(J));
  Eigen::MatrixXd X = terminal;
  for (int j = J - 1; j >= 0; --j) {
    Eigen::MatrixXd P = X;
    for (int i = 0; i < n; ++i) {
      const double sa = p.A(i, j) ? 1.0 : -1.0;
      P.row(i) *= sa * nv.fstar[nv.at(i, j)] / nv.psi_delta[nv.at(i, j)];
    }
    auto f1 = ArmFit::fit(ctx.psi1(j), P, w, ResponseKind::mean, ctx.policy());
    out.fallback_cells += f1.fallback_cells();
    Eigen::MatrixXd p0 = f1.predict(0);
    out.gamma1[static_cast<std::size_t>(j)] = f1.predict(1) - p0;
    if (&ctx.psi0(j) == &ctx.psi1(j)) {
      out.gamma0[static_cast<std::size_t>(j)] = std::move(p0);
    } else {
      auto f0 = ArmFit::fit(ctx.psi0(j), P, w, ResponseKind::mean, ctx.policy());
      out.fallback_cells += f0.fallback_cells();
      out.gamma0[static_cast<std::size_t>(j)] = f0.predict(0);
    }
    X = out.gamma1[static_cast<std::size_t>(j)];
  }
  return out;
}

CjRecursion fit_cj_recursion(const FitContext& ctx, const NuisanceValues& nv, const Eigen::VectorXd& w,
                             const Eigen::MatrixXd& terminal) {
  const auto& p = ctx.panel();
  const int J = ctx.J(), n = p.n();
  CjRecursion out;
  out.c_obs.resize(static_cast<std::size_t>(J));
  out.c_ref.resize(static_cast<std::size_t>(J));
  Eigen::MatrixXd R = terminal;
  for (int j = J - 1; j >= 0; --j) {
    auto f = ArmFit::fit(ctx.sra_c(j), R, w, ResponseKind::mean, ctx.policy());
    out.fallback_cells += f.fallback_cells();
    Eigen::MatrixXd c0 = f.predict(0), c1 = f.predict(1);
    Eigen::MatrixXd obs(n, R.cols()), ref(n, R.cols());
    for (int i = 0; i < n; ++i) {
      const double f1 = ctx.fstar1()[nv.at(i, j)];
      obs.row(i) = p.A(i, j) ? c1.row(i) : c0.row(i);
      ref.row(i) = (1.0 - f1) * c0.row(i) + f1 * c1.row(i);
    }
    out.c_obs[static_cast<std::size_t>(j)] = std::move(obs);
    out.c_ref[static_cast<std::size_t>(j)] = ref;
    R = std::move(ref);
  }
  return out;
}

}  // namespace msmiv
