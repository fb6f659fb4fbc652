#include "msmiv/regime.hpp"

#include <numeric>

#include "msmiv/error.hpp"

namespace msmiv {

std::uint32_t regime_index(std::span<const std::uint8_t> a) {
  std::uint32_t idx = 0;
  for (auto bit : a) idx = (idx << 1) | (bit ? 1u : 0u);
  return idx;
}

std::uint32_t Regime::index() const { return regime_index(a); }

int Regime::sum() const { return std::accumulate(a.begin(), a.end(), 0); }

std::string Regime::str() const {
  std::string s = "(";
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (k) s += ',';
    s += a[k] ? '1' : '0';
  }
  return s + ")";
}

Regime regime_from_index(std::uint32_t index, int J) {
  Regime r;
  r.a.resize(static_cast<std::size_t>(J));
  for (int k = 0; k < J; ++k) r.a[static_cast<std::size_t>(k)] = (index >> (J - 1 - k)) & 1u;
  return r;
}

std::vector<Regime> enumerate_regimes(int J) {
  if (J < 1 || J > 16) throw InputError("enumerate_regimes: J must lie in [1, 16], got " + std::to_string(J));
  const std::uint32_t count = 1u << J;
  std::vector<Regime> out;
  out.reserve(count);
  for (std::uint32_t c = 0; c < count; ++c) out.push_back(regime_from_index(c, J));
  return out;
}

}  // namespace msmiv
