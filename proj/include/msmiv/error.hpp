#ifndef MSMIV_ERROR_HPP
#define MSMIV_ERROR_HPP

#include <stdexcept>
#include <string>

namespace msmiv {

/// Bad input: configuration, panel file or DGP specification. CLI exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Panel ingestion/validation failure.
class PanelError : public InputError {
 public:
  using InputError::InputError;
};

/// Solver, conditioning or positivity failure. CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config_error = 2;
inline constexpr int numeric_failure = 3;
inline constexpr int identity_failure = 4;
}  // namespace exit_code

}  // namespace msmiv

#endif  // MSMIV_ERROR_HPP
