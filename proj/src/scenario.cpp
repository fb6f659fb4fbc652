#include "msmiv/scenario.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "msmiv/error.hpp"
#include "msmiv/hash.hpp"
#include "msmiv/kernels.hpp"
#include "msmiv/oracle.hpp"
#include "msmiv/rng.hpp"
#include "msmiv/weights.hpp"

namespace msmiv {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::set<std::string> kKeys = {"description", "dgp",   "panel",   "schema",    "n",          "replications",
                                     "seed",        "estimators", "misspec", "msm",   "fstar",      "nuisance",
                                     "solver",      "bootstrap",  "level",   "efficiency", "out"};

std::string resolve(const std::string& base, const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base) / path).lexically_normal().string();
}

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
  return rows;
}

void write_text(const std::string& dir, const std::string& name, const std::string& text) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  const std::string path = (fs::path(dir) / name).string();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << text;
}

void write_json(const std::string& dir, const std::string& name, const json& j) {
  write_text(dir, name, j.dump(2) + "\n");
}

json provenance(const ScenarioConfig& cfg, const std::string& command) {
  json p{{"command", command}, {"config_hash", cfg.hash}, {"seed", cfg.seed}};
  if (cfg.dgp) p["spec_hash"] = spec_hash(*cfg.dgp);
  return p;
}

FitKind parse_kind(const std::string& s) {
  if (s == "automatic") return FitKind::automatic;
  if (s == "saturated") return FitKind::saturated;
  if (s == "parametric") return FitKind::parametric;
  throw InputError("nuisance.kind must be automatic, saturated or parametric");
}

std::vector<std::string> feature_names(const MsmSpec& msm) {
  std::vector<std::string> out;
  for (const auto& f : msm.g) out.push_back(f.text());
  return out;
}

NuisanceOptions nuisance_options(const ScenarioConfig& cfg) {
  NuisanceOptions o = cfg.nuisance;
  o.fstar = cfg.fstar;
  return o;
}

std::vector<MisspecPattern> patterns_or(const ScenarioConfig& cfg, const std::vector<std::string>& names) {
  if (!cfg.misspec.empty()) return cfg.misspec;
  std::vector<MisspecPattern> out;
  for (const auto& n : names) out.push_back(MisspecPattern::preset(n));
  return out;
}

/// Robustness conditions satisfied by a pattern (the reference density must be correct for any of them).
struct Conditions {
  bool i = false, ii = false, iii = false;
  bool any() const { return i || ii || iii; }
};

Conditions conditions(const MisspecPattern& p) {
  Conditions c;
  if (!p.reference_density.empty()) return c;
  const bool fz = p.instrument_density.empty(), d = p.delta.empty(), m = p.treatment_mean.empty();
  const bool g1 = p.psi1.empty(), g0 = p.psi0.empty();
  c.i = fz && d;
  c.ii = fz && g1;
  c.iii = g1 && g0 && m && d;
  return c;
}

/// Whether the population root must equal beta0 (true), must not be assumed (null).
json expected_zero(EstimatorId id, const MisspecPattern& p) {
  const Conditions c = conditions(p);
  if (id == EstimatorId::iv_mr) return c.any();
  if (id == EstimatorId::iv_ipw) return c.i;
  return nullptr;
}

struct McSummary {
  Eigen::VectorXd mean, var;
  int reps = 0;
  int failures = 0;
};

McSummary summarize(const std::vector<std::optional<Eigen::VectorXd>>& draws, int p) {
  McSummary s;
  s.mean = Eigen::VectorXd::Zero(p);
  s.var = Eigen::VectorXd::Constant(p, NAN);
  for (const auto& d : draws) {
    if (!d) {
      ++s.failures;
      continue;
    }
    s.mean += *d;
    ++s.reps;
  }
  if (s.reps == 0) {
    s.mean.setConstant(NAN);
    return s;
  }
  s.mean /= s.reps;
  if (s.reps > 1) {
    s.var.setZero();
    for (const auto& d : draws)
      if (d) s.var += (*d - s.mean).cwiseAbs2();
    s.var /= s.reps - 1;
  }
  return s;
}

}  // namespace

std::uint64_t replication_seed(std::uint64_t master, std::uint64_t r) { return mix64(master ^ mix64(r + 1)); }

std::string spec_hash(const DgpSpec& spec) { return Fnv1a().add(spec.to_json().dump()).hex(); }

MsmSpec msm_from_json(const json& j) {
  MsmFamily fam = MsmFamily::model_1_1;
  const std::string f = j.value("family", "model_1_1");
  if (f == "model_1_4") {
    fam = MsmFamily::model_1_4;
  } else if (f != "model_1_1") {
    throw InputError("msm.family must be model_1_1 or model_1_4");
  }
  if (!j.contains("g")) throw InputError("msm.g is required when msm is given");
  return MsmSpec::make(fam, j.at("g").get<std::vector<std::string>>(),
                       j.value("h", std::vector<std::string>{}));
}

json msm_to_json(const MsmSpec& msm) {
  json h = json::array();
  for (const auto& f : msm.h) h.push_back(f.text());
  return {{"family", msm.family == MsmFamily::model_1_1 ? "model_1_1" : "model_1_4"},
          {"g", feature_names(msm)},
          {"h", h}};
}

ScenarioConfig ScenarioConfig::from_json(const json& j, const std::string& base_dir) {
  if (!j.is_object()) throw InputError("config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!kKeys.count(k)) throw InputError("config: unknown key '" + k + "'");
  ScenarioConfig c;
  c.raw = j;
  c.base_dir = base_dir;
  c.hash = Fnv1a().add(j.dump()).hex();
  if (!j.contains("seed")) throw InputError("config: seed is required");
  c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("dgp")) {
    const auto& d = j.at("dgp");
    c.dgp = d.is_string() ? DgpSpec::load(resolve(base_dir, d.get<std::string>())) : DgpSpec::from_json(d);
    c.dgp->require_valid();
  }
  if (j.contains("panel")) c.panel_path = resolve(base_dir, j.at("panel").get<std::string>());
  if (j.contains("schema")) {
    const auto& s = j.at("schema");
    c.schema.id = s.value("id", c.schema.id);
    c.schema.time = s.value("time", c.schema.time);
    c.schema.l_cols = s.value("l_cols", c.schema.l_cols);
    c.schema.v_cols = s.value("v_cols", c.schema.v_cols);
    c.schema.z = s.value("z", c.schema.z);
    c.schema.a = s.value("a", c.schema.a);
    c.schema.y = s.value("y", c.schema.y);
    if (s.contains("outcome_path")) c.schema.outcome_path = resolve(base_dir, s.at("outcome_path").get<std::string>());
  }
  c.n = j.value("n", c.n);
  if (c.n < 0) throw InputError("config: n must be >= 0");
  c.replications = j.value("replications", c.replications);
  if (c.replications < 1) throw InputError("config: replications must be >= 1");
  if (j.contains("estimators")) {
    for (const auto& e : j.at("estimators")) c.estimators.push_back(parse_estimator(e.get<std::string>()));
  } else {
    c.estimators = all_estimators();
  }
  if (j.contains("misspec"))
    for (const auto& m : j.at("misspec")) c.misspec.push_back(MisspecPattern::from_json(m));
  if (j.contains("msm")) c.msm = msm_from_json(j.at("msm"));
  if (j.contains("fstar")) c.fstar = ReferenceDensity::from_json(j.at("fstar"));
  if (j.contains("nuisance")) {
    const auto& s = j.at("nuisance");
    c.nuisance.kind = parse_kind(s.value("kind", "automatic"));
    c.nuisance.clamp = s.value("clamp", c.nuisance.clamp);
    c.nuisance.delta_floor = s.value("delta_floor", c.nuisance.delta_floor);
    if (!(c.nuisance.clamp > 0.0 && c.nuisance.clamp < 0.5)) throw InputError("nuisance.clamp must lie in (0, 0.5)");
    if (!(c.nuisance.delta_floor > 0.0 && c.nuisance.delta_floor <= 1.0))
      throw InputError("nuisance.delta_floor must lie in (0, 1]");
  }
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    c.solver.tol = s.value("tol", c.solver.tol);
    c.solver.max_iter = s.value("max_iter", c.solver.max_iter);
    c.solver.fd_step = s.value("fd_step", c.solver.fd_step);
    c.solver.max_halvings = s.value("max_halvings", c.solver.max_halvings);
    c.solver.region = s.value("region", c.solver.region);
  }
  c.bootstrap = j.value("bootstrap", 0);
  if (c.bootstrap < 0) throw InputError("config: bootstrap must be >= 0");
  c.level = j.value("level", c.level);
  if (!(c.level > 0.0 && c.level < 1.0)) throw InputError("config: level must lie in (0, 1)");
  if (j.contains("efficiency")) {
    const auto& e = j.at("efficiency");
    c.n_random = e.value("n_random", c.n_random);
    c.efficiency_seed = e.value("seed", c.efficiency_seed);
  }
  c.out_dir = j.contains("out") ? resolve(base_dir, j.at("out").get<std::string>()) : "";
  if (c.dgp) c.msm_for(c.dgp->v_l0 ? 1 : 0).validate(c.dgp->J, c.dgp->v_l0 ? 1 : 0);
  return c;
}

ScenarioConfig ScenarioConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("config " + path + ": " + e.what());
  }
  return from_json(j, fs::path(path).parent_path().string());
}

const DgpSpec& ScenarioConfig::require_dgp() const {
  if (!dgp) throw InputError("config: this command needs a dgp");
  return *dgp;
}

MsmSpec ScenarioConfig::msm_for(int nv) const { return msm ? *msm : MsmSpec::default_for(nv); }

CommandResult cmd_simulate(const ScenarioConfig& cfg, const std::string& out) {
  const DgpSpec& spec = cfg.require_dgp();
  const Panel panel = simulate(spec, cfg.n, cfg.seed);
  write_text(out, "panel.csv", panel_to_csv(panel));
  json rep = provenance(cfg, "simulate");
  rep["n"] = cfg.n;
  rep["J"] = spec.J;
  rep["rows"] = static_cast<long long>(cfg.n) * spec.J;
  write_json(out, "provenance.json", rep);
  return {exit_code::ok, rep};
}

CommandResult cmd_oracle(const ScenarioConfig& cfg, const std::string& out) {
  const DgpSpec& spec = cfg.require_dgp();
  const int nv = spec.v_l0 ? 1 : 0;
  const MsmSpec msm = cfg.msm_for(nv);
  const ReferenceDensity fstar = resolve_reference(spec, cfg.fstar);
  json rep = provenance(cfg, "oracle");
  bool pass = true;
  std::vector<std::string> failed;
  auto record = [&](const std::string& name, bool ok) {
    if (!ok) failed.push_back(name);
    pass = pass && ok;
  };

  const IdentityReport l1 = check_lemma1(spec);
  json j1 = l1.to_json(false);
  json bad = json::array();
  for (std::size_t k = 0; k < l1.lhs.size(); ++k)
    if (std::abs(l1.lhs[k] - l1.rhs[k]) > l1.tolerance)
      bad.push_back({{"cell", l1.labels[k]}, {"contrast", l1.lhs[k]}, {"delta", l1.rhs[k]}});
  j1["failing_cells"] = bad;
  rep["lemma1"] = j1;
  record("lemma1", l1.pass);

  json l2 = json::array();
  double worst = 0.0;
  bool l2pass = true;
  for (const auto& g : lemma2_battery(spec.J)) {
    const IdentityReport r = check_lemma2(spec, g, fstar);
    worst = std::max(worst, r.max_abs_diff);
    l2pass = l2pass && r.pass;
    l2.push_back({{"function", g.name}, {"max_abs_diff", r.max_abs_diff}, {"pass", r.pass}});
  }
  rep["lemma2"] = {{"functions", l2.size()}, {"max_abs_diff", worst}, {"pass", l2pass}, {"battery", l2}};
  record("lemma2", l2pass);

  const InverseWeightMoments iw = inverse_weight_moments(spec, fstar);
  const bool mean_one = std::abs(iw.mean_inverse - 1.0) <= 1e-12;
  rep["weights_mean_one"] = {{"mean_inverse_weight", iw.mean_inverse},
                             {"positive_fraction", iw.positive_fraction},
                             {"tolerance", 1e-12},
                             {"pass", mean_one}};
  record("weights_mean_one", mean_one);

  const Eigen::VectorXd beta0 = true_beta(spec, msm, fstar);
  rep["beta0"] = vec_json(beta0);
  rep["features"] = feature_names(msm);
  const IdentityReport iz = check_influence_zero(spec, msm, fstar, beta0);
  rep["influence_zero"] = iz.to_json();
  record("influence_zero", iz.pass);
  const IdentityReport power = check_influence_zero(spec, msm, fstar, Eigen::VectorXd(beta0.array() + 0.1));
  rep["influence_power"] = {{"beta_shift", 0.1}, {"max_abs_mean", power.max_abs_diff}, {"nonzero", !power.pass}};

  json plim = json::array();
  const auto patterns = patterns_or(cfg, {"all_correct", "i_only", "ii_only", "iii_only", "all_wrong"});
  std::map<std::string, Eigen::VectorXd> correct_beta;
  for (const auto& pat : patterns) {
    for (auto id : all_estimators()) {
      if (id == EstimatorId::iv_eff && msm.family != MsmFamily::model_1_1) continue;
      json row{{"pattern", pat.label}, {"estimator", to_string(id)}};
      const json expect = expected_zero(id, pat);
      row["expected_zero"] = expect;
      try {
        const PlimResult r = plim_solve(spec, msm, id, pat, fstar);
        const double bias = (r.beta - beta0).lpNorm<Eigen::Infinity>();
        row["beta"] = vec_json(r.beta);
        row["bias"] = vec_json(r.beta - beta0);
        row["max_abs_bias"] = bias;
        row["converged"] = r.converged;
        if (!r.converged) row["trace"] = r.trace;
        if (pat.label == "all_correct") correct_beta[to_string(id)] = r.beta;
        if (expect.is_boolean() && expect.get<bool>()) {
          const bool ok = r.converged && bias <= 1e-8;
          row["pass"] = ok;
          record("plim:" + to_string(id) + ":" + pat.label, ok);
        }
      } catch (const NumericError& e) {
        row["error"] = e.what();
        if (expect.is_boolean() && expect.get<bool>()) record("plim:" + to_string(id) + ":" + pat.label, false);
      }
      plim.push_back(row);
    }
  }
  rep["plim"] = plim;

  // Perfect compliance: every reachable history has A(j) = Z(j).
  const Panel pop = population_panel(spec);
  bool collapse = pop.n() > 0;
  for (int i = 0; i < pop.n() && collapse; ++i)
    for (int j = 0; j < pop.J(); ++j)
      if (pop.Z(i, j) != pop.A(i, j)) collapse = false;
  json cj{{"perfect_compliance", collapse}};
  if (collapse) {
    auto pf = population_fit(spec, msm, MisspecPattern::preset("all_correct"), fstar);
    const auto& wt = pf->problem.wt;
    const bool same_weights = wt.inv_iv == wt.inv_sra && wt.iv == wt.sra;
    const bool same_fit = correct_beta.count("iv_ipw") && correct_beta.count("sra_ipw") &&
                          correct_beta["iv_ipw"] == correct_beta["sra_ipw"];
    cj["iv_weights_equal_sra_weights"] = same_weights;
    cj["iv_ipw_equals_sra_ipw"] = same_fit;
    record("collapse", same_weights && same_fit);
  }
  rep["collapse"] = cj;
  rep["failed"] = failed;
  rep["pass"] = pass;
  write_json(out, "oracle.json", rep);
  return {pass ? exit_code::ok : exit_code::identity_failure, rep};
}

CommandResult cmd_fit(const ScenarioConfig& cfg, const std::string& out) {
  Panel panel;
  json rep = provenance(cfg, "fit");
  if (!cfg.panel_path.empty()) {
    panel = load_panel(cfg.panel_path, cfg.schema);
    rep["panel"] = cfg.panel_path;
  } else {
    panel = simulate(cfg.require_dgp(), cfg.n, cfg.seed);
    rep["panel"] = "simulated";
  }
  const MsmSpec msm = cfg.msm_for(panel.nv());
  msm.validate(panel.J(), panel.nv());
  const MisspecPattern pattern = cfg.misspec.empty() ? MisspecPattern::preset("all_correct") : cfg.misspec.front();
  FitContext ctx(panel, pattern, nuisance_options(cfg), ExecPolicy::parallel);
  rep["n"] = panel.n();
  rep["J"] = panel.J();
  rep["msm"] = msm_to_json(msm);
  rep["misspec"] = pattern.to_json();

  std::ostringstream csv;
  csv << "estimator,converged,eq_norm,iterations,nuisance_fingerprint";
  const auto names = feature_names(msm);
  for (const auto& f : names) csv << ",beta[" << f << "]";
  for (const auto& f : names) csv << ",se[" << f << "]";
  if (cfg.bootstrap > 0)
    for (const auto& f : names) csv << ",boot_lo[" << f << "],boot_hi[" << f << "]";
  csv << "\n";

  json ests = json::array();
  bool failed = false;
  std::unique_ptr<Problem> pr;
  try {
    pr = std::make_unique<Problem>(make_problem(ctx, msm, cfg.solver));
  } catch (const NumericError& e) {
    rep["error"] = e.what();
    write_json(out, "estimates.json", rep);
    return {exit_code::numeric_failure, rep};
  }
  for (auto id : cfg.estimators) {
    try {
      Estimate e = estimate(id, *pr);
      if (cfg.bootstrap > 0) e.bootstrap = bootstrap(ctx, msm, pr->terms, id, cfg.bootstrap, cfg.seed, cfg.solver, cfg.level);
      failed = failed || !e.converged;
      ests.push_back(e.to_json());
      csv << to_string(id) << ',' << (e.converged ? 1 : 0) << ',' << num(e.eq_norm) << ',' << e.iterations << ','
          << e.nuisance_fingerprint;
      for (int k = 0; k < e.beta.size(); ++k) csv << ',' << num(e.beta[k]);
      for (int k = 0; k < e.beta.size(); ++k) csv << ',' << num(std::sqrt(e.covariance(k, k)));
      if (cfg.bootstrap > 0)
        for (int k = 0; k < e.beta.size(); ++k) csv << ',' << num(e.bootstrap.lo[k]) << ',' << num(e.bootstrap.hi[k]);
      csv << "\n";
    } catch (const NumericError& e) {
      failed = true;
      ests.push_back({{"estimator", to_string(id)}, {"error", e.what()}});
      csv << to_string(id) << ",0,nan,0,\n";
    }
  }
  rep["estimates"] = ests;
  rep["pass"] = !failed;
  write_json(out, "estimates.json", rep);
  write_text(out, "estimates.csv", csv.str());
  return {failed ? exit_code::numeric_failure : exit_code::ok, rep};
}

CommandResult cmd_robustness(const ScenarioConfig& cfg, const std::string& out) {
  const DgpSpec& spec = cfg.require_dgp();
  const int nv = spec.v_l0 ? 1 : 0;
  const MsmSpec msm = cfg.msm_for(nv);
  const ReferenceDensity fstar = resolve_reference(spec, cfg.fstar);
  const Eigen::VectorXd beta0 = true_beta(spec, msm, fstar);
  const int p = msm.dim_beta();
  const auto patterns = patterns_or(cfg, {"all_correct", "i_only", "ii_only", "iii_only", "all_wrong"});
  const auto& ids = cfg.estimators;
  const std::size_t P = patterns.size(), E = ids.size();

  std::vector<std::optional<PlimResult>> plims(P * E);
  std::vector<std::string> plim_err(P * E);
  for (std::size_t a = 0; a < P; ++a)
    for (std::size_t e = 0; e < E; ++e) {
      try {
        plims[a * E + e] = plim_solve(spec, msm, ids[e], patterns[a], fstar);
      } catch (const NumericError& ex) {
        plim_err[a * E + e] = ex.what();
      }
    }

  // draws[(a * E + e) * R + r]
  const int R = cfg.replications;
  std::vector<std::optional<Eigen::VectorXd>> draws(P * E * static_cast<std::size_t>(R));
#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < R; ++r) {
    const Panel panel = simulate(spec, cfg.n, replication_seed(cfg.seed, static_cast<std::uint64_t>(r)));
    for (std::size_t a = 0; a < P; ++a) {
      try {
        FitContext ctx(panel, patterns[a], nuisance_options(cfg), ExecPolicy::serial);
        const Problem pr = make_problem(ctx, msm, cfg.solver);
        for (std::size_t e = 0; e < E; ++e) {
          try {
            const Estimate est = estimate(ids[e], pr, false);
            if (est.converged) draws[(a * E + e) * R + r] = est.beta;
          } catch (const std::exception&) {
          }
        }
      } catch (const std::exception&) {
      }
    }
  }

  json rep = provenance(cfg, "robustness");
  rep["beta0"] = vec_json(beta0);
  rep["features"] = feature_names(msm);
  rep["n"] = cfg.n;
  rep["replications"] = R;
  std::ostringstream csv;
  csv << "pattern,estimator,coordinate,feature,plim_bias,mc_mean_bias,mc_se,mc_reps,expected_zero\n";
  json rows = json::array();
  bool pass = true;
  std::vector<std::string> failed;
  const auto names = feature_names(msm);
  for (std::size_t a = 0; a < P; ++a)
    for (std::size_t e = 0; e < E; ++e) {
      const auto& pl = plims[a * E + e];
      std::vector<std::optional<Eigen::VectorXd>> d(draws.begin() + static_cast<std::ptrdiff_t>((a * E + e) * R),
                                                    draws.begin() + static_cast<std::ptrdiff_t>((a * E + e + 1) * R));
      const McSummary mc = summarize(d, p);
      const json expect = expected_zero(ids[e], patterns[a]);
      json row{{"pattern", patterns[a].label}, {"estimator", to_string(ids[e])}, {"expected_zero", expect},
               {"mc_reps", mc.reps}, {"mc_failures", mc.failures}};
      Eigen::VectorXd bias = Eigen::VectorXd::Constant(p, NAN);
      if (pl) {
        bias = pl->beta - beta0;
        row["plim_bias"] = vec_json(bias);
        row["plim_converged"] = pl->converged;
      } else {
        row["plim_error"] = plim_err[a * E + e];
      }
      const Eigen::VectorXd mc_bias = mc.mean - beta0;
      const Eigen::VectorXd mc_se = (mc.var / std::max(mc.reps, 1)).cwiseSqrt();
      row["mc_mean_bias"] = vec_json(mc_bias);
      row["mc_se"] = vec_json(mc_se);
      const double max_bias = pl ? bias.lpNorm<Eigen::Infinity>() : INFINITY;
      const std::string tag = to_string(ids[e]) + ":" + patterns[a].label;
      if (expect.is_boolean() && expect.get<bool>()) {
        const bool ok = pl && pl->converged && max_bias < 1e-6;
        row["pass"] = ok;
        if (!ok) failed.push_back(tag);
        pass = pass && ok;
      }
      if (ids[e] == EstimatorId::iv_mr && !conditions(patterns[a]).any()) {
        const bool ok = max_bias > 1e-2;
        row["negative_control"] = ok;
        if (!ok) failed.push_back(tag + ":negative_control");
        pass = pass && ok;
      }
      rows.push_back(row);
      for (int k = 0; k < p; ++k)
        csv << patterns[a].label << ',' << to_string(ids[e]) << ',' << k << ',' << names[static_cast<std::size_t>(k)]
            << ',' << num(bias[k]) << ',' << num(mc_bias[k]) << ',' << num(mc_se[k]) << ',' << mc.reps << ','
            << (expect.is_boolean() ? (expect.get<bool>() ? "1" : "0") : "") << "\n";
    }
  rep["rows"] = rows;
  rep["failed"] = failed;
  rep["pass"] = pass;
  write_json(out, "robustness.json", rep);
  write_text(out, "robustness.csv", csv.str());
  return {pass ? exit_code::ok : exit_code::identity_failure, rep};
}

CommandResult cmd_efficiency(const ScenarioConfig& cfg, const std::string& out) {
  const DgpSpec& spec = cfg.require_dgp();
  const int nv = spec.v_l0 ? 1 : 0;
  const MsmSpec msm = cfg.msm_for(nv);
  if (msm.family != MsmFamily::model_1_1) throw InputError("efficiency: Model 1.1 only");
  const ReferenceDensity fstar = resolve_reference(spec, cfg.fstar);
  const EfficiencyReport er = efficiency_population(spec, msm, fstar, cfg.n_random, cfg.efficiency_seed);
  const int p = msm.dim_beta();

  const std::vector<EstimatorId> mc_ids = {EstimatorId::iv_eff, EstimatorId::iv_mr, EstimatorId::iv_ipw};
  const int R = cfg.replications;
  std::vector<std::optional<Eigen::VectorXd>> draws(mc_ids.size() * static_cast<std::size_t>(R));
#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < R; ++r) {
    try {
      const Panel panel = simulate(spec, cfg.n, replication_seed(cfg.seed, static_cast<std::uint64_t>(r)));
      FitContext ctx(panel, MisspecPattern::preset("all_correct"), nuisance_options(cfg), ExecPolicy::serial);
      const Problem pr = make_problem(ctx, msm, cfg.solver);
      for (std::size_t e = 0; e < mc_ids.size(); ++e) {
        try {
          const Estimate est = estimate(mc_ids[e], pr, false);
          if (est.converged) draws[e * R + r] = est.beta;
        } catch (const std::exception&) {
        }
      }
    } catch (const std::exception&) {
    }
  }
  std::vector<McSummary> mc;
  for (std::size_t e = 0; e < mc_ids.size(); ++e)
    mc.push_back(summarize({draws.begin() + static_cast<std::ptrdiff_t>(e * R),
                            draws.begin() + static_cast<std::ptrdiff_t>((e + 1) * R)},
                           p));

  const auto names = feature_names(msm);
  std::ostringstream csv;
  csv << "method,coordinate,feature,enumerated_variance,enumerated_ratio_to_eff,mc_variance,mc_ratio_to_eff\n";
  auto emit = [&](const std::string& m, const Eigen::MatrixXd& V, const McSummary* s) {
    for (int k = 0; k < p; ++k) {
      csv << m << ',' << k << ',' << names[static_cast<std::size_t>(k)] << ',' << num(V(k, k)) << ','
          << num(V(k, k) / er.v_eff(k, k));
      if (s)
        csv << ',' << num(cfg.n * s->var[k]) << ',' << num(s->var[k] / mc[0].var[k]);
      else
        csv << ",,";
      csv << "\n";
    }
  };
  emit("iv_eff", er.v_eff, &mc[0]);
  emit("iv_mr", er.v_mr, &mc[1]);
  emit("iv_ipw_known_weights", er.v_ipw, &mc[2]);
  for (std::size_t r = 0; r < er.v_random.size(); ++r) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "random_h_%02zu", r);
    emit(buf, er.v_random[r], nullptr);
  }

  json rep = provenance(cfg, "efficiency");
  rep["beta0"] = vec_json(er.beta0);
  rep["features"] = names;
  rep["v_eff"] = mat_json(er.v_eff);
  rep["v_mr"] = mat_json(er.v_mr);
  rep["v_ipw_known_weights"] = mat_json(er.v_ipw);
  rep["random_h"] = er.v_random.size();
  rep["worst_margin"] = er.worst_margin;
  rep["ordering_pass"] = er.pass;
  bool pass = er.pass;
  if (R >= 2) {
    json ratios = json::array();
    bool ok = true;
    for (int k = 0; k < p; ++k) {
      const double enum_ratio = er.v_mr(k, k) / er.v_eff(k, k);
      const double mc_ratio = mc[1].var[k] / mc[0].var[k];
      const double rel = std::abs(mc_ratio / enum_ratio - 1.0);
      ok = ok && rel <= 0.15;
      ratios.push_back({{"feature", names[static_cast<std::size_t>(k)]},
                        {"enumerated", enum_ratio},
                        {"monte_carlo", mc_ratio},
                        {"relative_error", rel}});
    }
    rep["mc_ratio_iv_mr_over_iv_eff"] = ratios;
    rep["mc_ratio_pass"] = ok;
    rep["mc_reps"] = {mc[0].reps, mc[1].reps, mc[2].reps};
    pass = pass && ok;
  }
  rep["n"] = cfg.n;
  rep["replications"] = R;
  rep["pass"] = pass;
  write_json(out, "efficiency.json", rep);
  write_text(out, "efficiency.csv", csv.str());
  return {pass ? exit_code::ok : exit_code::identity_failure, rep};
}

}  // namespace msmiv
