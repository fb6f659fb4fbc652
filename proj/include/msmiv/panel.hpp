#ifndef MSMIV_PANEL_HPP
#define MSMIV_PANEL_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace msmiv {

/// Column mapping for long-format CSV input.
struct PanelSchema {
  std::string id = "subject_id";
  std::string time = "time";
  std::vector<std::string> l_cols = {"L"};
  /// Baseline covariates: names drawn from l_cols, read at time 0.
  std::vector<std::string> v_cols = {"L"};
  std::string z = "Z";
  std::string a = "A";
  /// Outcome column; the row at time j holds Y(j+1). Model 1.1 reads only
  /// the last row. Blank cells are read as 0.
  std::string y = "Y";
  /// Optional separate outcome file with columns (id, y) giving the terminal Y.
  std::string outcome_path;
};

/// Rectangular longitudinal panel. Storage is subject-major and flat.
/// Immutable after construction by convention; safe to share across readers.
class Panel {
 public:
  Panel() = default;
  Panel(int n, int J, std::vector<std::string> l_names, std::vector<int> v_idx);

  int n() const { return n_; }
  int J() const { return J_; }
  int q() const { return static_cast<int>(l_names_.size()); }
  int nv() const { return static_cast<int>(v_idx_.size()); }

  const std::vector<std::string>& l_names() const { return l_names_; }
  /// Indices into l_names of the V columns.
  const std::vector<int>& v_idx() const { return v_idx_; }

  double L(int i, int j, int c) const { return L_[(static_cast<std::size_t>(i) * J_ + j) * q() + c]; }
  double& L(int i, int j, int c) { return L_[(static_cast<std::size_t>(i) * J_ + j) * q() + c]; }
  std::uint8_t Z(int i, int j) const { return Z_[static_cast<std::size_t>(i) * J_ + j]; }
  std::uint8_t& Z(int i, int j) { return Z_[static_cast<std::size_t>(i) * J_ + j]; }
  std::uint8_t A(int i, int j) const { return A_[static_cast<std::size_t>(i) * J_ + j]; }
  std::uint8_t& A(int i, int j) { return A_[static_cast<std::size_t>(i) * J_ + j]; }
  /// Y(j+1), j = 0..J-1.
  double Yser(int i, int j) const { return Y_[static_cast<std::size_t>(i) * J_ + j]; }
  double& Yser(int i, int j) { return Y_[static_cast<std::size_t>(i) * J_ + j]; }
  double Y(int i) const { return Yser(i, J_ - 1); }
  double V(int i, int k) const { return L(i, 0, v_idx_[static_cast<std::size_t>(k)]); }

  const std::uint8_t* A_row(int i) const { return &A_[static_cast<std::size_t>(i) * J_]; }

  std::int64_t id(int i) const { return ids_[static_cast<std::size_t>(i)]; }
  std::int64_t& id(int i) { return ids_[static_cast<std::size_t>(i)]; }

  /// Sampling weights (1 for ordinary data; probabilities for population panels).
  const std::vector<double>& weights() const { return w_; }
  std::vector<double>& weights() { return w_; }
  double weight(int i) const { return w_[static_cast<std::size_t>(i)]; }

  /// True when column c of L takes only values in {0, 1}.
  bool l_binary(int c) const;

  /// Throws PanelError on invariant violations.
  void validate() const;

  friend bool operator==(const Panel&, const Panel&) = default;

 private:
  int n_ = 0;
  int J_ = 0;
  std::vector<std::string> l_names_;
  std::vector<int> v_idx_;
  std::vector<double> L_;
  std::vector<std::uint8_t> Z_, A_;
  std::vector<double> Y_;
  std::vector<std::int64_t> ids_;
  std::vector<double> w_;
};

Panel load_panel(const std::string& path, const PanelSchema& schema = {});

/// Writes long format: id,time,<L cols>,Z,A,Y with %.17g numbers.
void write_panel_csv(const Panel& panel, const std::string& path);
std::string panel_to_csv(const Panel& panel);

}  // namespace msmiv

#endif  // MSMIV_PANEL_HPP
