#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace bonenet {

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckResult {
  std::string name;
  std::size_t cases = 0;
  /// Largest |analytic - fd| / max(1, |fd|) over every input element.
  double max_rel_err = 0.0;
  bool passed = false;
};

/// Central finite-difference check of every primitive, layer and a
/// conv -> BN -> ReLU -> pool -> FC -> L1 composite, each over ten seeded
/// shapes.
std::vector<GradCheckResult> run_gradcheck_suite(
    std::uint64_t seed = 1234, const std::function<void(const GradCheckResult&)>& on_result = {});

}  // namespace bonenet
