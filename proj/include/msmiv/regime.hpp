#ifndef MSMIV_REGIME_HPP
#define MSMIV_REGIME_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace msmiv {

/// A fixed treatment history (a(0), ..., a(J-1)).
struct Regime {
  std::vector<std::uint8_t> a;

  int J() const { return static_cast<int>(a.size()); }
  /// Canonical index: a(0) is the most significant bit.
  std::uint32_t index() const;
  int sum() const;
  std::string str() const;

  friend bool operator==(const Regime&, const Regime&) = default;
};

/// Canonical index of a treatment bit sequence (a(0) most significant).
std::uint32_t regime_index(std::span<const std::uint8_t> a);

Regime regime_from_index(std::uint32_t index, int J);

/// All 2^J regimes in lexicographic order; 1 <= J <= 16.
std::vector<Regime> enumerate_regimes(int J);

}  // namespace msmiv

#endif  // MSMIV_REGIME_HPP
