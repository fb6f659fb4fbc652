#include "msmiv/weights.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "msmiv/error.hpp"

namespace msmiv {

namespace {

void shape(const Panel& panel, WeightTrack& out) {
  if (out.n == 0 && out.J == 0) {
    out.n = panel.n();
    out.J = panel.J();
  }
}

}  // namespace

void sra_weights(const Panel& panel, const NuisanceValues& nv, WeightTrack& out) {
  if (!nv.has_sra) throw InputError("sra_weights: SRA treatment model not fitted");
  shape(panel, out);
  const std::size_t size = static_cast<std::size_t>(out.n) * out.J;
  out.sra.assign(size, 0.0);
  out.inv_sra.assign(size, 0.0);
  out.log_sra.assign(size, 0.0);
  for (int i = 0; i < out.n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < out.J; ++j) {
      const auto k = out.at(i, j);
      acc += std::log(nv.fa[k]) - std::log(nv.fstar[k]);
      out.log_sra[k] = acc;
      out.sra[k] = std::exp(acc);
      out.inv_sra[k] = std::exp(-acc);
    }
  }
  out.clamp_events = nv.diag.clamp_events;
  out.has_sra = true;
}

void iv_weights(const Panel& panel, const NuisanceValues& nv, WeightTrack& out) {
  if (!nv.has_iv) throw InputError("iv_weights: instrument and treatment models not fitted");
  shape(panel, out);
  const std::size_t size = static_cast<std::size_t>(out.n) * out.J;
  out.iv.assign(size, 0.0);
  out.inv_iv.assign(size, 0.0);
  out.log_abs_iv.assign(size, 0.0);
  out.sign_iv.assign(size, 1);
  out.iv1.assign(size, 0.0);
  out.iv2.assign(size, 0.0);
  for (int i = 0; i < out.n; ++i) {
    double acc = 0.0;
    int sign = 1;
    for (int j = 0; j < out.J; ++j) {
      const auto k = out.at(i, j);
      const int sz = panel.Z(i, j) ? 1 : -1, sa = panel.A(i, j) ? 1 : -1;
      const double d = nv.delta[k];
      out.iv1[k] = nv.fz[k] * d * sz;
      out.iv2[k] = 1.0 / (sa * nv.fstar[k]);
      sign *= sz * sa * (d < 0 ? -1 : 1);
      acc += (std::log(nv.fz[k]) + std::log(std::abs(d))) - std::log(nv.fstar[k]);
      out.log_abs_iv[k] = acc;
      out.sign_iv[k] = static_cast<std::int8_t>(sign);
      out.iv[k] = sign * std::exp(acc);
      out.inv_iv[k] = sign * std::exp(-acc);
    }
  }
  out.clamp_events = nv.diag.clamp_events;
  out.floor_events = nv.diag.delta_floor_events;
  out.has_iv = true;
}

WeightTrack compute_weights(const Panel& panel, const NuisanceValues& nv) {
  WeightTrack t;
  t.n = panel.n();
  t.J = panel.J();
  if (nv.has_sra) sra_weights(panel, nv, t);
  if (nv.has_iv) iv_weights(panel, nv, t);
  return t;
}

nlohmann::json WeightDiagnostics::to_json() const {
  return nlohmann::json{{"mean_abs_inverse_weight", mean_abs_inv},
                        {"mean_inverse_weight", mean_inv},
                        {"abs_inverse_weight_quantiles", quantiles},
                        {"positive_fraction", positive_fraction},
                        {"effective_sample_size", ess},
                        {"clamp_events", clamp_events},
                        {"floor_events", floor_events}};
}

WeightDiagnostics weight_diagnostics(const WeightTrack& t, const Eigen::VectorXd& w, bool iv) {
  WeightDiagnostics d;
  d.clamp_events = t.clamp_events;
  d.floor_events = t.floor_events;
  if (t.n == 0) return d;
  const bool use_iv = iv && t.has_iv;
  std::vector<std::pair<double, double>> vals;  // |1/W|, subject weight
  double wsum = 0.0, s_abs = 0.0, s = 0.0, s_sq = 0.0, pos = 0.0;
  for (int i = 0; i < t.n; ++i) {
    const double x = use_iv ? t.inv_iv_final(i) : t.inv_sra_final(i);
    const double wi = w[i];
    wsum += wi;
    s_abs += wi * std::abs(x);
    s += wi * x;
    s_sq += wi * x * x;
    if (x > 0) pos += wi;
    vals.emplace_back(std::abs(x), wi);
  }
  d.mean_abs_inv = s_abs / wsum;
  d.mean_inv = s / wsum;
  d.positive_fraction = pos / wsum;
  d.ess = s_abs * s_abs / s_sq;
  std::sort(vals.begin(), vals.end());
  for (double q : {0.05, 0.25, 0.5, 0.75, 0.95}) {
    double cum = 0.0, target = q * wsum, val = vals.back().first;
    for (const auto& [x, wi] : vals) {
      cum += wi;
      if (cum >= target) {
        val = x;
        break;
      }
    }
    d.quantiles.push_back(val);
  }
  return d;
}

void write_weights_csv(const WeightTrack& t, const Panel& panel, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  out << "subject_id,time,sra,inv_sra,iv,inv_iv,iv1,iv2\n";
  char buf[256];
  for (int i = 0; i < t.n; ++i)
    for (int j = 0; j < t.J; ++j) {
      const auto k = t.at(i, j);
      auto get = [&](const std::vector<double>& v) { return v.empty() ? std::nan("") : v[k]; };
      std::snprintf(buf, sizeof buf, "%lld,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(panel.id(i)), j,
                    get(t.sra), get(t.inv_sra), get(t.iv), get(t.inv_iv), get(t.iv1), get(t.iv2));
      out << buf;
    }
}

}  // namespace msmiv
