#include "msmiv/dgp.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "msmiv/error.hpp"
#include "msmiv/rng.hpp"

namespace msmiv {

using nlohmann::json;

int var_position(const std::string& name) {
  if (name.size() < 2) throw InputError("dgp: bad variable name '" + name + "'");
  int k = -1;
  auto [p, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), k);
  if (ec != std::errc() || p != name.data() + name.size() || k < 0 || k >= 16)
    throw InputError("dgp: bad variable name '" + name + "'");
  switch (name[0]) {
    case 'u': return hbit::u(k);
    case 'l': return hbit::l(k);
    case 'z': return hbit::z(k);
    case 'a': return hbit::a(k);
    default: throw InputError("dgp: bad variable name '" + name + "'");
  }
}

std::string var_name(int position) {
  static const char kind[4] = {'u', 'l', 'z', 'a'};
  return std::string(1, kind[position % 4]) + std::to_string(position / 4);
}

Table::Table(double c) : kind_(Kind::constant), c_(c) {}

Table Table::from_json(const json& j) {
  Table t;
  if (j.is_number()) return Table(j.get<double>());
  if (!j.is_object()) throw InputError("dgp: table must be a number or an object");
  if (j.contains("linear")) {
    t.kind_ = Kind::linear;
    for (const auto& [key, coef] : j.at("linear").items()) {
      Term term{{}, key, coef.get<double>()};
      if (key != "1") {
        std::size_t start = 0;
        while (true) {
          auto star = key.find('*', start);
          term.bits.push_back(var_position(key.substr(start, star == std::string::npos ? std::string::npos : star - start)));
          if (star == std::string::npos) break;
          start = star + 1;
        }
      }
      t.terms_.push_back(std::move(term));
    }
    return t;
  }
  if (j.contains("args")) {
    t.kind_ = Kind::explicit_table;
    t.args_ = j.at("args").get<std::vector<std::string>>();
    if (t.args_.size() > 20) throw InputError("dgp: explicit table with more than 20 arguments");
    for (const auto& a : t.args_) t.arg_bits_.push_back(var_position(a));
    const std::size_t k = t.args_.size();
    t.values_.assign(std::size_t{1} << k, std::nan(""));
    for (const auto& [key, val] : j.at("values").items()) {
      std::size_t idx = 0;
      std::vector<bool> seen(k, false);
      std::size_t start = 0;
      while (start < key.size()) {
        auto comma = key.find(',', start);
        std::string tok = key.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        auto eq = tok.find('=');
        if (eq == std::string::npos) throw InputError("dgp: bad table key '" + key + "'");
        std::string var = tok.substr(0, eq), bit = tok.substr(eq + 1);
        auto it = std::find(t.args_.begin(), t.args_.end(), var);
        if (it == t.args_.end() || (bit != "0" && bit != "1")) throw InputError("dgp: bad table key '" + key + "'");
        auto pos = static_cast<std::size_t>(it - t.args_.begin());
        seen[pos] = true;
        if (bit == "1") idx |= std::size_t{1} << (k - 1 - pos);
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      if (std::find(seen.begin(), seen.end(), false) != seen.end())
        throw InputError("dgp: table key '" + key + "' does not set every argument");
      t.values_[idx] = val.get<double>();
    }
    for (double v : t.values_)
      if (std::isnan(v)) throw InputError("dgp: explicit table is missing entries");
    return t;
  }
  throw InputError("dgp: table object needs 'linear' or 'args'");
}

json Table::to_json() const {
  switch (kind_) {
    case Kind::constant:
      return c_;
    case Kind::linear: {
      json lin = json::object();
      for (const auto& t : terms_) lin[t.name] = t.coef;
      return json{{"linear", lin}};
    }
    case Kind::explicit_table: {
      json vals = json::object();
      const std::size_t k = args_.size();
      for (std::size_t idx = 0; idx < values_.size(); ++idx) {
        std::string key;
        for (std::size_t a = 0; a < k; ++a) {
          if (a) key += ',';
          key += args_[a] + "=" + std::to_string((idx >> (k - 1 - a)) & 1u);
        }
        vals[key] = values_[idx];
      }
      return json{{"args", args_}, {"values", vals}};
    }
  }
  return nullptr;
}

double Table::eval(std::uint64_t h) const {
  switch (kind_) {
    case Kind::constant:
      return c_;
    case Kind::linear: {
      double s = 0.0;
      for (const auto& t : terms_) {
        bool on = true;
        for (int b : t.bits) on = on && hbit::get(h, b);
        if (on) s += t.coef;
      }
      return s;
    }
    case Kind::explicit_table: {
      std::size_t idx = 0;
      for (int b : arg_bits_) idx = (idx << 1) | static_cast<std::size_t>(hbit::get(h, b));
      return values_[idx];
    }
  }
  return 0.0;
}

std::vector<int> Table::positions() const {
  std::set<int> s;
  for (const auto& t : terms_) s.insert(t.bits.begin(), t.bits.end());
  s.insert(arg_bits_.begin(), arg_bits_.end());
  return {s.begin(), s.end()};
}

std::vector<std::string> Table::vars() const {
  std::vector<std::string> out;
  for (int p : positions()) out.push_back(var_name(p));
  return out;
}

namespace {

std::vector<Table> table_list(const json& j, const char* key, int J) {
  if (!j.contains(key)) throw InputError(std::string("dgp: missing '") + key + "'");
  const auto& v = j.at(key);
  std::vector<Table> out;
  if (v.is_array()) {
    for (const auto& e : v) out.push_back(Table::from_json(e));
  } else {
    for (int k = 0; k < J; ++k) out.push_back(Table::from_json(v));
  }
  if (static_cast<int>(out.size()) != J)
    throw InputError(std::string("dgp: '") + key + "' must have J entries");
  return out;
}

/// Enumerates every assignment of the given bit positions.
template <class F>
void for_each_assignment(const std::vector<int>& bits, F&& f) {
  if (bits.size() > 22) throw InputError("dgp: too many table arguments to validate");
  const std::uint64_t count = std::uint64_t{1} << bits.size();
  for (std::uint64_t c = 0; c < count; ++c) {
    std::uint64_t h = 0;
    for (std::size_t k = 0; k < bits.size(); ++k)
      if ((c >> k) & 1u) h |= std::uint64_t{1} << bits[k];
    f(h);
  }
}

std::vector<int> merge(std::vector<int> a, const std::vector<int>& b) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  return a;
}

}  // namespace

DgpSpec DgpSpec::from_json(const json& j) {
  DgpSpec s;
  s.name = j.value("name", "");
  s.J = j.at("J").get<int>();
  if (s.J < 1 || s.J > 16) throw InputError("dgp: J must lie in [1, 16]");
  s.pU = table_list(j, "pU", s.J);
  s.pL = table_list(j, "pL", s.J);
  s.pZ = table_list(j, "pZ", s.J);
  s.b = table_list(j, "b", s.J);
  s.delta = table_list(j, "delta", s.J);
  s.muY = Table::from_json(j.at("muY"));
  if (j.contains("muY_series")) s.muY_series = table_list(j, "muY_series", s.J);
  s.sigmaY = j.value("sigmaY", 1.0);
  if (j.contains("V")) {
    auto v = j.at("V").get<std::vector<std::string>>();
    if (v.size() > 1 || (v.size() == 1 && v[0] != "l0")) throw InputError("dgp: V may only be [] or [\"l0\"]");
    s.v_l0 = v.size() == 1;
  }
  s.unchecked = j.value("unchecked", false);
  return s;
}

DgpSpec DgpSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("dgp: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError("dgp: " + path + ": " + e.what());
  }
  try {
    return from_json(j);
  } catch (const json::exception& e) {
    throw InputError("dgp: " + path + ": " + e.what());
  }
}

json DgpSpec::to_json() const {
  auto list = [](const std::vector<Table>& v) {
    json a = json::array();
    for (const auto& t : v) a.push_back(t.to_json());
    return a;
  };
  json j{{"name", name}, {"J", J}, {"pU", list(pU)}, {"pL", list(pL)}, {"pZ", list(pZ)},
         {"b", list(b)}, {"delta", list(delta)}, {"muY", muY.to_json()}, {"sigmaY", sigmaY},
         {"V", v_l0 ? json::array({"l0"}) : json::array()}};
  if (!muY_series.empty()) j["muY_series"] = list(muY_series);
  if (unchecked) j["unchecked"] = true;
  return j;
}

std::vector<std::string> DgpSpec::validate() const {
  std::vector<std::string> issues;
  auto allowed = [&](const Table& t, const std::string& what, auto pred) {
    for (int p : t.positions())
      if (!pred(p % 4, p / 4)) issues.push_back(what + " may not depend on " + var_name(p));
  };
  enum { U = 0, L = 1, Z = 2, A = 3 };
  auto range = [&](const Table& t, const std::string& what, double lo, double hi, bool strict) {
    for_each_assignment(t.positions(), [&](std::uint64_t h) {
      double v = t.eval(h);
      bool ok = strict ? (v > lo && v < hi) : (v >= lo && v <= hi);
      if (!ok && issues.size() < 200) issues.push_back(what + " = " + std::to_string(v) + " out of range");
    });
  };
  if (sigmaY < 0) issues.push_back("sigmaY must be non-negative");
  for (int j = 0; j < J; ++j) {
    const std::string sj = "[" + std::to_string(j) + "]";
    allowed(pU[j], "pU" + sj, [&](int kind, int t) { return kind != Z && t < j; });
    allowed(pL[j], "pL" + sj, [&](int kind, int t) { return (kind == U && t <= j) || ((kind == L || kind == A) && t < j); });
    allowed(pZ[j], "pZ" + sj, [&](int kind, int t) { return (kind == L && t <= j) || ((kind == A || kind == Z) && t < j); });
    allowed(b[j], "b" + sj, [&](int kind, int t) { return ((kind == U || kind == L) && t <= j) || ((kind == A || kind == Z) && t < j); });
    if (!unchecked)
      allowed(delta[j], "delta" + sj, [&](int kind, int t) { return (kind == L && t <= j) || ((kind == A || kind == Z) && t < j); });
    range(pU[j], "pU" + sj, 0.0, 1.0, false);
    range(pL[j], "pL" + sj, 0.0, 1.0, false);
    range(pZ[j], "pZ" + sj, 0.0, 1.0, true);
    auto args = merge(b[j].positions(), delta[j].positions());
    bool relevant = false;
    for_each_assignment(args, [&](std::uint64_t h) {
      double base = b[j].eval(h), d = delta[j].eval(h);
      if (d != 0.0) relevant = true;
      if (base < 0.0 || base > 1.0 || base + d < 0.0 || base + d > 1.0)
        if (issues.size() < 200)
          issues.push_back("b" + sj + ", b+delta" + sj + " = " + std::to_string(base) + ", " + std::to_string(base + d) + " not valid probabilities");
    });
    if (!relevant) issues.push_back("delta" + sj + " is identically zero (IV relevance fails)");
  }
  auto outcome_ok = [&](int kind, int t) { return kind != Z && t < J; };
  allowed(muY, "muY", outcome_ok);
  for (std::size_t m = 0; m < muY_series.size(); ++m)
    allowed(muY_series[m], "muY_series[" + std::to_string(m) + "]",
            [&](int kind, int t) { return kind != Z && t <= static_cast<int>(m); });
  return issues;
}

void DgpSpec::require_valid() const {
  auto issues = validate();
  if (issues.empty()) return;
  std::string msg = "invalid DGP spec '" + name + "':";
  for (const auto& s : issues) msg += "\n  - " + s;
  throw InputError(msg);
}

double DgpSpec::mean_y(int m, std::uint64_t h) const {
  if (muY_series.empty()) return m == J ? muY.eval(h) : 0.0;
  return muY_series[static_cast<std::size_t>(m - 1)].eval(h);
}

double DgpSpec::p_a1(int j, std::uint64_t h) const {
  return b[j].eval(h) + (hbit::get(h, hbit::z(j)) ? delta[j].eval(h) : 0.0);
}

Panel simulate(const DgpSpec& spec, int n, std::uint64_t seed) {
  spec.require_valid();
  if (n < 0) throw InputError("simulate: n must be non-negative");
  const int J = spec.J;
  Panel p(n, J, {"L"}, spec.v_l0 ? std::vector<int>{0} : std::vector<int>{});
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uint64_t h = 0;
    auto draw = [&](int pos, double prob) {
      if (rng.bernoulli(prob)) h |= std::uint64_t{1} << pos;
    };
    for (int j = 0; j < J; ++j) {
      draw(hbit::u(j), spec.pU[j].eval(h));
      draw(hbit::l(j), spec.pL[j].eval(h));
      draw(hbit::z(j), spec.pZ[j].eval(h));
      draw(hbit::a(j), spec.p_a1(j, h));
      p.L(i, j, 0) = hbit::get(h, hbit::l(j));
      p.Z(i, j) = static_cast<std::uint8_t>(hbit::get(h, hbit::z(j)));
      p.A(i, j) = static_cast<std::uint8_t>(hbit::get(h, hbit::a(j)));
    }
    for (int m = 1; m <= J; ++m) {
      double eps = noise(rng);
      if (m == J || !spec.muY_series.empty()) p.Yser(i, m - 1) = spec.mean_y(m, h) + spec.sigmaY * eps;
    }
  }
  return p;
}

JointLaw conditional_tables(const DgpSpec& spec, int cap) {
  if (spec.J > cap) throw InputError("conditional_tables: J = " + std::to_string(spec.J) + " exceeds enumeration cap " + std::to_string(cap));
  const int J = spec.J;
  JointLaw law;
  law.J = J;
  const std::size_t size = std::size_t{1} << (4 * J);
  law.prob.assign(size, 0.0);
  law.mu.assign(size * static_cast<std::size_t>(J), 0.0);
  auto bern = [](double p, int x) { return x ? p : 1.0 - p; };
  for (std::uint64_t h = 0; h < size; ++h) {
    double pr = 1.0;
    for (int j = 0; j < J && pr > 0.0; ++j) {
      pr *= bern(spec.pU[j].eval(h), hbit::get(h, hbit::u(j)));
      pr *= bern(spec.pL[j].eval(h), hbit::get(h, hbit::l(j)));
      pr *= bern(spec.pZ[j].eval(h), hbit::get(h, hbit::z(j)));
      pr *= bern(spec.p_a1(j, h), hbit::get(h, hbit::a(j)));
    }
    law.prob[h] = pr;
    for (int m = 1; m <= J; ++m) law.mu[static_cast<std::size_t>(m - 1) * size + h] = spec.mean_y(m, h);
  }
  return law;
}

std::uint32_t observed_code(std::uint64_t h, int J) {
  std::uint32_t c = 0;
  for (int j = 0; j < J; ++j) {
    c |= static_cast<std::uint32_t>(hbit::get(h, hbit::l(j))) << (3 * j);
    c |= static_cast<std::uint32_t>(hbit::get(h, hbit::z(j))) << (3 * j + 1);
    c |= static_cast<std::uint32_t>(hbit::get(h, hbit::a(j))) << (3 * j + 2);
  }
  return c;
}

}  // namespace msmiv
