#include "msmiv/condmodel.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>

#include "msmiv/error.hpp"
#include "msmiv/logistic.hpp"

namespace msmiv {

std::string DesignSpec::key() const {
  std::ostringstream os;
  os << 'j' << j << (l_history ? 'L' : 'V') << (a_history ? 'A' : '-') << (z_history ? 'Z' : '-') << "/arm"
     << static_cast<int>(arm) << "/omit";
  for (int c : omit) os << ',' << c;
  return os.str();
}

CellIndex::CellIndex(const Panel& panel, const DesignSpec& spec, FitKind kind) : spec_(spec) {
  const int n = panel.n(), j = spec.j;
  if (j < 0 || j >= panel.J()) throw InputError("design: time index out of range");
  struct Var {
    char kind;
    int time, col;
  };
  std::vector<Var> vars;
  auto omitted = [&](int c) { return std::find(spec.omit.begin(), spec.omit.end(), c) != spec.omit.end(); };
  bool all_binary = true;
  if (spec.l_history) {
    for (int c = 0; c < panel.q(); ++c) {
      if (omitted(c)) continue;
      if (!panel.l_binary(c)) all_binary = false;
      for (int k = 0; k <= j; ++k) {
        vars.push_back({'L', k, c});
        names_.push_back(panel.l_names()[static_cast<std::size_t>(c)] + std::to_string(k));
      }
    }
  } else {
    for (int v = 0; v < panel.nv(); ++v) {
      if (omitted(v)) continue;
      const int c = panel.v_idx()[static_cast<std::size_t>(v)];
      if (!panel.l_binary(c)) all_binary = false;
      vars.push_back({'L', 0, c});
      names_.push_back("v" + std::to_string(v));
    }
  }
  for (int k = 0; k < j; ++k) {
    if (spec.a_history) {
      vars.push_back({'A', k, 0});
      names_.push_back("A" + std::to_string(k));
    }
    if (spec.z_history) {
      vars.push_back({'Z', k, 0});
      names_.push_back("Z" + std::to_string(k));
    }
  }
  saturated_ = kind == FitKind::saturated || (kind == FitKind::automatic && all_binary);
  if (saturated_ && (!all_binary || vars.size() > 62))
    throw InputError("design: saturated fit requires at most 62 binary conditioning variables");

  X_.resize(n, static_cast<Eigen::Index>(vars.size()) + 1);
  cell_.assign(static_cast<std::size_t>(n), 0);
  arm_.assign(static_cast<std::size_t>(n), 0);
  std::unordered_map<std::uint64_t, std::int32_t> ids;
  for (int i = 0; i < n; ++i) {
    X_(i, 0) = 1.0;
    std::uint64_t key = 0;
    for (std::size_t k = 0; k < vars.size(); ++k) {
      const auto& v = vars[k];
      double x = v.kind == 'L' ? panel.L(i, v.time, v.col) : v.kind == 'A' ? panel.A(i, v.time) : panel.Z(i, v.time);
      X_(i, static_cast<Eigen::Index>(k) + 1) = x;
      if (x != 0.0) key |= std::uint64_t{1} << k;
    }
    if (saturated_) {
      auto [it, inserted] = ids.emplace(key, static_cast<std::int32_t>(ids.size()));
      cell_[static_cast<std::size_t>(i)] = it->second;
    }
    if (spec.arm == ArmVar::z) arm_[static_cast<std::size_t>(i)] = panel.Z(i, j);
    if (spec.arm == ArmVar::a) arm_[static_cast<std::size_t>(i)] = panel.A(i, j);
  }
  cells_ = saturated_ ? static_cast<int>(ids.size()) : 1;
}

ArmFit ArmFit::fit(const CellIndex& index, const Eigen::MatrixXd& R, const Eigen::VectorXd& w, ResponseKind kind,
                   ExecPolicy policy) {
  if (R.rows() != index.n() || w.size() != index.n()) throw InputError("ArmFit: response or weights do not match design");
  ArmFit f;
  f.index_ = &index;
  f.kind_ = kind;
  f.m_ = static_cast<int>(R.cols());
  const int arms = index.arms();
  f.coef_.resize(static_cast<std::size_t>(arms));
  f.arm_mean_.resize(static_cast<std::size_t>(arms));
  f.has_model_.assign(static_cast<std::size_t>(arms), false);
  if (index.saturated()) {
    f.sums_ = accumulate_cells(policy, index.cell(), index.arm(), index.cells(), arms, w, R);
    std::vector<bool> need(static_cast<std::size_t>(arms), false);
    for (int c = 0; c < index.cells(); ++c)
      for (int a = 0; a < arms; ++a)
        if (f.sums_.w[static_cast<std::size_t>(c) * arms + a] <= 0.0) {
          need[static_cast<std::size_t>(a)] = true;
          ++f.fallback_cells_;
        }
    for (int a = 0; a < arms; ++a)
      if (need[static_cast<std::size_t>(a)]) f.fit_arm_model(a, R, w);
  } else {
    for (int a = 0; a < arms; ++a) f.fit_arm_model(a, R, w);
  }
  return f;
}

void ArmFit::fit_arm_model(int arm, const Eigen::MatrixXd& R, const Eigen::VectorXd& w) {
  const auto& X = index_->X();
  const int n = index_->n();
  Eigen::VectorXd wa = w;
  if (index_->arms() > 1)
    for (int i = 0; i < n; ++i)
      if (index_->arm()[static_cast<std::size_t>(i)] != arm) wa[i] = 0.0;
  const double wsum = wa.sum();
  if (!(wsum > 0.0)) throw NumericError("regression arm " + std::to_string(arm) + " has no observations (design " + index_->spec().key() + ")");
  arm_mean_[static_cast<std::size_t>(arm)] = (wa.transpose() * R) / wsum;
  const Eigen::Index positive = (wa.array() > 0).count();
  if (positive <= X.cols()) return;
  try {
    if (kind_ == ResponseKind::probability && m_ == 1) {
      auto lf = fit_logistic(X, R.col(0), wa);
      separation_ = separation_ || lf.separation;
      coef_[static_cast<std::size_t>(arm)] = lf.coef;
    } else {
      coef_[static_cast<std::size_t>(arm)] = fit_linear(X, R, wa);
    }
    has_model_[static_cast<std::size_t>(arm)] = true;
  } catch (const NumericError&) {
    has_model_[static_cast<std::size_t>(arm)] = false;
  }
}

Eigen::RowVectorXd ArmFit::parametric_row(int arm, int i) const {
  if (!has_model_[static_cast<std::size_t>(arm)]) return arm_mean_[static_cast<std::size_t>(arm)];
  Eigen::RowVectorXd r = index_->X().row(i) * coef_[static_cast<std::size_t>(arm)];
  if (kind_ == ResponseKind::probability && m_ == 1) r[0] = expit(r[0]);
  return r;
}

Eigen::MatrixXd ArmFit::predict(int arm) const {
  const int n = index_->n(), arms = index_->arms();
  if (arm < 0 || arm >= arms) throw InputError("ArmFit: arm out of range");
  Eigen::MatrixXd out(n, m_);
  if (!index_->saturated()) {
    for (int i = 0; i < n; ++i) out.row(i) = parametric_row(arm, i);
    return out;
  }
  const auto& cell = index_->cell();
  for (int i = 0; i < n; ++i) {
    const std::size_t slot = static_cast<std::size_t>(cell[static_cast<std::size_t>(i)]) * arms + arm;
    const double ws = sums_.w[slot];
    if (ws > 0.0) {
      const double* s = &sums_.s[slot * static_cast<std::size_t>(m_)];
      for (int c = 0; c < m_; ++c) out(i, c) = s[c] / ws;
    } else {
      out.row(i) = parametric_row(arm, i);
    }
  }
  return out;
}

Eigen::MatrixXd ArmFit::predict_observed() const {
  if (index_->arms() == 1) return predict(0);
  Eigen::MatrixXd p0 = predict(0), p1 = predict(1);
  for (int i = 0; i < index_->n(); ++i)
    if (index_->arm()[static_cast<std::size_t>(i)]) p0.row(i) = p1.row(i);
  return p0;
}

std::string ArmFit::describe() const {
  std::ostringstream os;
  os << (index_->saturated() ? "saturated" : "parametric") << " design " << index_->spec().key() << " cells "
     << index_->cells() << " fallback " << fallback_cells_;
  return os.str();
}

}  // namespace msmiv
