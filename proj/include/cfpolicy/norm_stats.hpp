#pragma once

#include <array>
#include <vector>

namespace cfpolicy {

// z-normalization parameters for one column. Log-flagged columns are
// normalized as ln(1 + x); binary columns pass through untouched.
struct FeatureStats {
  double mean = 0.0;
  double stddev = 1.0;
  bool log_flag = false;
  bool passthrough = false;

  double transform(double x) const;
  double inverse(double z) const;
  // Raw-scale value whose normalized image is exactly 0 (the "average" cell).
  double fill_value() const;

  bool operator==(const FeatureStats&) const = default;
};

struct NormStats {
  std::vector<FeatureStats> features;
  std::array<FeatureStats, 2> actions;  // fluid, vasopressor

  bool operator==(const NormStats&) const = default;
};

}  // namespace cfpolicy
