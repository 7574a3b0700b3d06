#pragma once

#include <stdexcept>
#include <string>

namespace so3cast {

/// Base for all typed errors raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- geometry ---
struct NonSkewInput final : Error { using Error::Error; };
struct NearPiSingularity final : Error { using Error::Error; };
struct DegenerateColumns final : Error { using Error::Error; };

// --- integration ---
struct StepSizeUnderflow final : Error { using Error::Error; };

// --- rigid-body simulation ---
struct UnresolvedScenario final : Error { using Error::Error; };

// --- Savitzky-Golay regression ---
struct SingularNormalEquations final : Error { using Error::Error; };
struct WindowTooLarge final : Error { using Error::Error; };
struct PolynomialOutOfInjectiveRange final : Error { using Error::Error; };

// --- neural CDE ---
struct NonFiniteState final : Error { using Error::Error; };
struct NonFiniteGradient final : Error { using Error::Error; };

// --- persistence / harness ---
struct IoError final : Error { using Error::Error; };
struct ConfigError final : Error { using Error::Error; };

}  // namespace so3cast
