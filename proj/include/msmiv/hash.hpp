#ifndef MSMIV_HASH_HPP
#define MSMIV_HASH_HPP

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

namespace msmiv {

/// 64-bit FNV-1a, used for config and nuisance fingerprints.
class Fnv1a {
 public:
  Fnv1a& add(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& add(std::string_view s) { return add(s.data(), s.size()); }
  Fnv1a& add(const std::vector<double>& v) { return add(v.data(), v.size() * sizeof(double)); }
  std::uint64_t value() const { return h_; }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
    return buf;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

}  // namespace msmiv

#endif  // MSMIV_HASH_HPP
