#pragma once

#include <vector>

#include "cfpolicy/reward.hpp"

namespace reward_cases {

struct Case {
  double map;
  double sbp;
  bool died_now;
  bool terminal;
  bool alive_at_end;
  double expected;  // under the default RewardFn
};

// Boundary table: 60 and 80 fall in the normal band, 180 does not trigger the
// crisis penalty, anything strictly above does.
inline std::vector<Case> boundary_table() {
  return {
      {70, 120, false, false, true, 0.05},
      {55, 190, false, false, true, -0.10},
      {70, 120, false, true, true, 0.05 + 1.0},
      {70, 120, false, true, false, 0.05 - 1.0},
      {70, 120, true, false, false, 0.05 - 1.0},
      {60, 120, false, false, true, 0.05},
      {80, 120, false, false, true, 0.05},
      {59.999, 120, false, false, true, -0.05},
      {80.001, 120, false, false, true, 0.0},
      {70, 180, false, false, true, 0.05},
      {70, 180.001, false, false, true, 0.0},
      {60, 180, false, false, true, 0.05},
      {80, 181, false, false, true, 0.0},
      {59, 181, false, true, false, -0.05 - 0.05 - 1.0},
      {90, 100, false, false, true, 0.0},
  };
}

inline bool matches(const Case& c) {
  return cfpolicy::step_reward(cfpolicy::RewardFn{}, c.map, c.sbp, c.died_now, c.terminal, c.alive_at_end) == c.expected;
}

}  // namespace reward_cases
