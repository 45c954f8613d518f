#pragma once

#include <string>
#include <vector>

namespace trinet {

struct GradcheckEntry {
  std::string name;
  bool composite = false;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::string error;  // set when the check itself threw

  bool passed() const { return error.empty() && max_rel_error <= tolerance; }
};

inline constexpr double kPrimitiveTolerance = 1e-6;
inline constexpr double kCompositeTolerance = 1e-4;

// Central-difference checks of every primitive op and every composite block
// (attention variants, RADMIL modes, hazard head with and without the time
// embedding, encoder). Deterministic.
std::vector<GradcheckEntry> run_gradcheck_suite();

}  // namespace trinet
