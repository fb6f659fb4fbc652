#include "msmiv/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "msmiv/error.hpp"

namespace msmiv {

Panel::Panel(int n, int J, std::vector<std::string> l_names, std::vector<int> v_idx)
    : n_(n), J_(J), l_names_(std::move(l_names)), v_idx_(std::move(v_idx)) {
  if (n < 0) throw PanelError("panel: negative subject count");
  if (J < 1) throw PanelError("panel: J must be at least 1");
  const auto cells = static_cast<std::size_t>(n) * static_cast<std::size_t>(J);
  L_.assign(cells * l_names_.size(), 0.0);
  Z_.assign(cells, 0);
  A_.assign(cells, 0);
  Y_.assign(cells, 0.0);
  ids_.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ids_[static_cast<std::size_t>(i)] = i;
  w_.assign(static_cast<std::size_t>(n), 1.0);
  for (int v : v_idx_)
    if (v < 0 || v >= q()) throw PanelError("panel: V index out of range");
}

bool Panel::l_binary(int c) const {
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j < J_; ++j) {
      double x = L(i, j, c);
      if (x != 0.0 && x != 1.0) return false;
    }
  return true;
}

void Panel::validate() const {
  for (int i = 0; i < n_; ++i) {
    if (i > 0 && ids_[static_cast<std::size_t>(i)] <= ids_[static_cast<std::size_t>(i) - 1])
      throw PanelError("panel: subject ids not strictly increasing at subject " + std::to_string(id(i)));
    for (int j = 0; j < J_; ++j) {
      if (Z(i, j) > 1) throw PanelError("panel: subject " + std::to_string(id(i)) + " has non-binary Z");
      if (A(i, j) > 1) throw PanelError("panel: subject " + std::to_string(id(i)) + " has non-binary A");
      if (!std::isfinite(Yser(i, j))) throw PanelError("panel: subject " + std::to_string(id(i)) + " has non-finite Y");
      for (int c = 0; c < q(); ++c)
        if (!std::isfinite(L(i, j, c)))
          throw PanelError("panel: subject " + std::to_string(id(i)) + " has non-finite " + l_names_[static_cast<std::size_t>(c)]);
    }
    if (!(w_[static_cast<std::size_t>(i)] >= 0.0)) throw PanelError("panel: negative weight");
  }
}

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.remove_suffix(1);
    while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
  }
  return out;
}

double parse_double(std::string_view s, const std::string& what) {
  if (s.empty()) return 0.0;
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw PanelError("panel: cannot parse '" + std::string(s) + "' in " + what);
  return v;
}

std::int64_t parse_int(std::string_view s, const std::string& what) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size())
    throw PanelError("panel: cannot parse integer '" + std::string(s) + "' in " + what);
  return v;
}

struct Row {
  std::vector<double> l;
  double z, a, y;
};

}  // namespace

Panel load_panel(const std::string& path, const PanelSchema& schema) {
  std::ifstream in(path);
  if (!in) throw PanelError("panel: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw PanelError("panel: empty file " + path);
  auto header = split(line);
  auto col = [&](const std::string& name, bool required) -> int {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return static_cast<int>(k);
    if (required) throw PanelError("panel: missing column '" + name + "' in " + path);
    return -1;
  };
  const int c_id = col(schema.id, true), c_t = col(schema.time, true);
  const int c_z = col(schema.z, true), c_a = col(schema.a, true);
  const int c_y = col(schema.y, schema.outcome_path.empty());
  std::vector<int> c_l;
  for (const auto& name : schema.l_cols) c_l.push_back(col(name, true));
  std::vector<int> v_idx;
  for (const auto& v : schema.v_cols) {
    auto it = std::find(schema.l_cols.begin(), schema.l_cols.end(), v);
    if (it == schema.l_cols.end()) throw PanelError("panel: V column '" + v + "' is not an L column");
    v_idx.push_back(static_cast<int>(it - schema.l_cols.begin()));
  }

  std::map<std::int64_t, std::map<std::int64_t, Row>> subjects;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = split(line);
    if (f.size() != header.size()) throw PanelError("panel: line " + std::to_string(lineno) + " has wrong field count");
    const std::string where = "line " + std::to_string(lineno);
    auto sid = parse_int(f[static_cast<std::size_t>(c_id)], where);
    auto t = parse_int(f[static_cast<std::size_t>(c_t)], where);
    Row r;
    for (int c : c_l) r.l.push_back(parse_double(f[static_cast<std::size_t>(c)], where));
    r.z = parse_double(f[static_cast<std::size_t>(c_z)], where);
    r.a = parse_double(f[static_cast<std::size_t>(c_a)], where);
    r.y = c_y >= 0 ? parse_double(f[static_cast<std::size_t>(c_y)], where) : 0.0;
    if (r.z != 0.0 && r.z != 1.0)
      throw PanelError("panel: subject " + std::to_string(sid) + " time " + std::to_string(t) + ": column " + schema.z + " is not binary");
    if (r.a != 0.0 && r.a != 1.0)
      throw PanelError("panel: subject " + std::to_string(sid) + " time " + std::to_string(t) + ": column " + schema.a + " is not binary");
    if (!subjects[sid].emplace(t, std::move(r)).second)
      throw PanelError("panel: subject " + std::to_string(sid) + " has duplicate time " + std::to_string(t));
  }

  std::int64_t J = 0;
  for (const auto& [sid, rows] : subjects) J = std::max(J, rows.rbegin()->first + 1);
  if (subjects.empty()) J = 1;
  for (const auto& [sid, rows] : subjects) {
    std::int64_t expect = 0;
    for (const auto& [t, r] : rows) {
      if (t != expect)
        throw PanelError("panel: ragged panel, subject " + std::to_string(sid) + " is missing time " + std::to_string(expect));
      ++expect;
    }
    if (expect != J)
      throw PanelError("panel: ragged panel, subject " + std::to_string(sid) + " is missing time " + std::to_string(expect));
  }

  Panel p(static_cast<int>(subjects.size()), static_cast<int>(J), schema.l_cols, v_idx);
  int i = 0;
  for (const auto& [sid, rows] : subjects) {
    p.id(i) = sid;
    for (const auto& [t, r] : rows) {
      const int j = static_cast<int>(t);
      for (int c = 0; c < p.q(); ++c) p.L(i, j, c) = r.l[static_cast<std::size_t>(c)];
      p.Z(i, j) = static_cast<std::uint8_t>(r.z);
      p.A(i, j) = static_cast<std::uint8_t>(r.a);
      p.Yser(i, j) = r.y;
    }
    ++i;
  }

  if (!schema.outcome_path.empty()) {
    std::ifstream yin(schema.outcome_path);
    if (!yin) throw PanelError("panel: cannot open " + schema.outcome_path);
    if (!std::getline(yin, line)) throw PanelError("panel: empty outcome file");
    auto h = split(line);
    int oid = -1, oy = -1;
    for (std::size_t k = 0; k < h.size(); ++k) {
      if (h[k] == schema.id) oid = static_cast<int>(k);
      if (h[k] == schema.y) oy = static_cast<int>(k);
    }
    if (oid < 0 || oy < 0) throw PanelError("panel: outcome file needs columns " + schema.id + "," + schema.y);
    std::unordered_map<std::int64_t, int> pos;
    for (int s = 0; s < p.n(); ++s) pos[p.id(s)] = s;
    std::vector<bool> seen(static_cast<std::size_t>(p.n()), false);
    while (std::getline(yin, line)) {
      if (line.empty() || line == "\r") continue;
      auto f = split(line);
      auto sid = parse_int(f.at(static_cast<std::size_t>(oid)), "outcome file");
      auto it = pos.find(sid);
      if (it == pos.end()) throw PanelError("panel: outcome for unknown subject " + std::to_string(sid));
      p.Yser(it->second, p.J() - 1) = parse_double(f.at(static_cast<std::size_t>(oy)), "outcome file");
      seen[static_cast<std::size_t>(it->second)] = true;
    }
    for (int s = 0; s < p.n(); ++s)
      if (!seen[static_cast<std::size_t>(s)]) throw PanelError("panel: no outcome for subject " + std::to_string(p.id(s)));
  }
  p.validate();
  return p;
}

std::string panel_to_csv(const Panel& panel) {
  std::ostringstream os;
  os << "subject_id,time";
  for (const auto& c : panel.l_names()) os << ',' << c;
  os << ",Z,A,Y\n";
  char buf[64];
  for (int i = 0; i < panel.n(); ++i)
    for (int j = 0; j < panel.J(); ++j) {
      os << panel.id(i) << ',' << j;
      for (int c = 0; c < panel.q(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", panel.L(i, j, c));
        os << ',' << buf;
      }
      std::snprintf(buf, sizeof buf, "%.17g", panel.Yser(i, j));
      os << ',' << int(panel.Z(i, j)) << ',' << int(panel.A(i, j)) << ',' << buf << '\n';
    }
  return os.str();
}

void write_panel_csv(const Panel& panel, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << panel_to_csv(panel);
}

}  // namespace msmiv
