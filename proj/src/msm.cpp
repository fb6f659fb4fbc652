#include "msmiv/msm.hpp"

#include <charconv>

#include "msmiv/error.hpp"

namespace msmiv {

namespace {

int parse_index(std::string_view s, const std::string& text) {
  int v = -1;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size() || v < 0)
    throw InputError("msm: bad feature '" + text + "'");
  return v;
}

}  // namespace

Feature::Feature(const std::string& text) : text_(text) {
  std::string_view rest = text;
  while (true) {
    auto star = rest.find('*');
    std::string_view tok = rest.substr(0, star);
    if (tok == "1") {
      atoms_.push_back({Kind::one, 0});
    } else if (tok == "sum_a") {
      atoms_.push_back({Kind::sum_a, 0});
    } else if (tok == "m") {
      atoms_.push_back({Kind::m, 0});
    } else if (tok.size() > 1 && tok[0] == 'a') {
      int k = parse_index(tok.substr(1), text);
      atoms_.push_back({Kind::a, k});
      max_a_ = std::max(max_a_, k);
    } else if (tok.size() > 1 && tok[0] == 'v') {
      int k = parse_index(tok.substr(1), text);
      atoms_.push_back({Kind::v, k});
      max_v_ = std::max(max_v_, k);
    } else {
      throw InputError("msm: unknown feature atom '" + std::string(tok) + "' in '" + text + "'");
    }
    if (star == std::string_view::npos) break;
    rest = rest.substr(star + 1);
  }
}

double Feature::eval(std::span<const std::uint8_t> a, std::span<const double> v, int m) const {
  double out = 1.0;
  for (const auto& at : atoms_) {
    switch (at.kind) {
      case Kind::one:
        break;
      case Kind::sum_a: {
        int s = 0;
        for (auto x : a) s += x;
        out *= s;
        break;
      }
      case Kind::a:
        out *= at.index < static_cast<int>(a.size()) ? a[static_cast<std::size_t>(at.index)] : 0.0;
        break;
      case Kind::v:
        out *= v[static_cast<std::size_t>(at.index)];
        break;
      case Kind::m:
        out *= m;
        break;
    }
  }
  return out;
}

MsmSpec MsmSpec::make(MsmFamily family, const std::vector<std::string>& g, const std::vector<std::string>& h) {
  MsmSpec s;
  s.family = family;
  for (const auto& f : g) s.g.emplace_back(f);
  for (const auto& f : h) s.h.emplace_back(f);
  if (s.g.empty()) throw InputError("msm: at least one g feature required");
  if (!s.h.empty() && s.h.size() != s.g.size()) throw InputError("msm: h must have dim_beta features");
  return s;
}

MsmSpec MsmSpec::default_for(int nv, MsmFamily family) {
  std::vector<std::string> g = {"1", "sum_a"};
  for (int k = 0; k < nv; ++k) g.push_back("v" + std::to_string(k));
  return make(family, g);
}

void MsmSpec::validate(int J, int nv) const {
  auto check = [&](const Feature& f) {
    if (f.max_a() >= J) throw InputError("msm: feature '" + f.text() + "' references a time beyond J-1");
    if (f.max_v() >= nv) throw InputError("msm: feature '" + f.text() + "' references a missing V column");
  };
  for (const auto& f : g) check(f);
  for (const auto& f : h) check(f);
}

Eigen::VectorXd MsmSpec::x(std::span<const std::uint8_t> a, std::span<const double> v, int m) const {
  Eigen::VectorXd out(dim_beta());
  for (int k = 0; k < dim_beta(); ++k) out[k] = g[static_cast<std::size_t>(k)].eval(a, v, m);
  return out;
}

Eigen::VectorXd MsmSpec::hvec(std::span<const std::uint8_t> a, std::span<const double> v, int m) const {
  if (h.empty()) return x(a, v, m);
  Eigen::VectorXd out(dim_beta());
  for (int k = 0; k < dim_beta(); ++k) out[k] = h[static_cast<std::size_t>(k)].eval(a, v, m);
  return out;
}

std::vector<double> v_values(const Panel& panel, int i) {
  std::vector<double> v(static_cast<std::size_t>(panel.nv()));
  for (int k = 0; k < panel.nv(); ++k) v[static_cast<std::size_t>(k)] = panel.V(i, k);
  return v;
}

Eigen::VectorXd d_sm(const MsmSpec& msm, const Panel& panel, int i, const Eigen::VectorXd& beta) {
  const int J = panel.J();
  auto v = v_values(panel, i);
  std::span<const std::uint8_t> a(panel.A_row(i), static_cast<std::size_t>(J));
  if (msm.family == MsmFamily::model_1_1) {
    return msm.hvec(a, v, J) * (panel.Y(i) - msm.x(a, v, J).dot(beta));
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(msm.dim_beta());
  for (int m = 1; m <= J; ++m) {
    auto am = a.first(static_cast<std::size_t>(m));
    out += msm.hvec(am, v, m) * (panel.Yser(i, m - 1) - msm.x(am, v, m).dot(beta));
  }
  return out;
}

MsmTerms msm_terms(const Panel& panel, const MsmSpec& msm) {
  msm.validate(panel.J(), panel.nv());
  const int n = panel.n(), p = msm.dim_beta(), J = panel.J();
  MsmTerms t;
  t.p = p;
  t.b = Eigen::MatrixXd::Zero(n, p);
  t.M = Eigen::MatrixXd::Zero(n, p * p);
  for (int i = 0; i < n; ++i) {
    auto v = v_values(panel, i);
    std::span<const std::uint8_t> a(panel.A_row(i), static_cast<std::size_t>(J));
    const int m0 = msm.family == MsmFamily::model_1_1 ? J : 1;
    for (int m = m0; m <= J; ++m) {
      auto am = msm.family == MsmFamily::model_1_1 ? a : a.first(static_cast<std::size_t>(m));
      Eigen::VectorXd hv = msm.hvec(am, v, m), xv = msm.x(am, v, m);
      t.b.row(i) += hv.transpose() * panel.Yser(i, m - 1);
      for (int r = 0; r < p; ++r)
        for (int c = 0; c < p; ++c) t.M(i, r * p + c) += hv[r] * xv[c];
    }
  }
  return t;
}

Eigen::VectorXd MsmTerms::d_sm(int i, const Eigen::VectorXd& beta) const {
  Eigen::VectorXd out = b.row(i).transpose();
  for (int r = 0; r < p; ++r)
    for (int c = 0; c < p; ++c) out[r] -= M(i, r * p + c) * beta[c];
  return out;
}

Eigen::MatrixXd MsmTerms::d_sm_all(const Eigen::VectorXd& beta) const {
  Eigen::MatrixXd out = b;
  for (int r = 0; r < p; ++r) out.col(r) -= M.middleCols(r * p, p) * beta;
  return out;
}

}  // namespace msmiv
