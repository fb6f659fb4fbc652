#ifndef MSMIV_TESTS_COMMON_HPP
#define MSMIV_TESTS_COMMON_HPP

#include <cmath>
#include <filesystem>
#include <string>

#include "msmiv/dgp.hpp"

namespace testutil {

inline std::string data(const std::string& name) { return std::string(MSMIV_DATA_DIR) + "/" + name; }

inline msmiv::DgpSpec spec(const std::string& name) { return msmiv::DgpSpec::load(data(name)); }

inline std::string scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "msmiv_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace testutil

#endif
