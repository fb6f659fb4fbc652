#ifndef MSMIV_DGP_HPP
#define MSMIV_DGP_HPP

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "msmiv/panel.hpp"

namespace msmiv {

/// Latent history layout: four bits per time, in temporal order U, L, Z, A.
namespace hbit {
constexpr int u(int j) { return 4 * j; }
constexpr int l(int j) { return 4 * j + 1; }
constexpr int z(int j) { return 4 * j + 2; }
constexpr int a(int j) { return 4 * j + 3; }
inline int get(std::uint64_t h, int pos) { return static_cast<int>((h >> pos) & 1u); }
}  // namespace hbit

/// A probability or mean as a function of binary history variables named
/// u<k>, l<k>, z<k>, a<k>. JSON forms:
///   0.3
///   {"linear": {"1": 0.2, "u0": 0.3, "l0*a0": 0.1}}
///   {"args": ["u0", "l0"], "values": {"u0=0,l0=0": 0.1, ...}}
class Table {
 public:
  Table() = default;
  explicit Table(double c);
  static Table from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  double eval(std::uint64_t history) const;
  /// Names of all variables the table reads.
  std::vector<std::string> vars() const;
  /// Bit positions of all variables the table reads.
  std::vector<int> positions() const;

 private:
  enum class Kind { constant, linear, explicit_table };
  struct Term {
    std::vector<int> bits;
    std::string name;
    double coef;
  };
  Kind kind_ = Kind::constant;
  double c_ = 0.0;
  std::vector<Term> terms_;
  std::vector<std::string> args_;
  std::vector<int> arg_bits_;
  std::vector<double> values_;  ///< dense; first arg is the most significant bit
};

/// Variable name ("u0", "l1", ...) to latent bit position; throws InputError.
int var_position(const std::string& name);
std::string var_name(int position);

/// Structural discrete DGP with latent confounder U and instrument Z.
struct DgpSpec {
  std::string name;
  int J = 1;
  std::vector<Table> pU, pL, pZ, b, delta;
  Table muY;
  /// Optional Y(1..J) means for Model 1.4; when empty Y(m) = 0 for m < J.
  std::vector<Table> muY_series;
  double sigmaY = 1.0;
  /// V = L(0) when true, empty otherwise.
  bool v_l0 = true;
  /// Skips the structural argument checks (negative-control specs only).
  bool unchecked = false;

  static DgpSpec from_json(const nlohmann::json& j);
  static DgpSpec load(const std::string& path);
  nlohmann::json to_json() const;

  /// Violations found; empty when the spec satisfies the identifying assumptions.
  std::vector<std::string> validate() const;
  /// Throws InputError listing every violation.
  void require_valid() const;

  double mean_y(int m, std::uint64_t h) const;  ///< E[Y(m) | latent history], m = 1..J
  double p_a1(int j, std::uint64_t h) const;    ///< P(A(j)=1 | history through Z(j))
};

/// Draws n subjects; subject i uses RNG stream i so the result does not
/// depend on the thread count.
Panel simulate(const DgpSpec& spec, int n, std::uint64_t seed);

/// Exact law of the complete latent history (4J bits), J <= cap.
struct JointLaw {
  int J = 0;
  std::vector<double> prob;  ///< indexed by latent history bits
  /// E[Y(m) | h] stored as mu[(m-1) * size + h].
  std::vector<double> mu;
  std::size_t size() const { return prob.size(); }
  double mean_y(int m, std::uint64_t h) const { return mu[static_cast<std::size_t>(m - 1) * size() + h]; }
};

inline constexpr int kEnumerationCap = 4;

JointLaw conditional_tables(const DgpSpec& spec, int cap = kEnumerationCap);

/// Observed-history code: three bits per time, L at 3j, Z at 3j+1, A at 3j+2.
std::uint32_t observed_code(std::uint64_t h, int J);

}  // namespace msmiv

#endif  // MSMIV_DGP_HPP
