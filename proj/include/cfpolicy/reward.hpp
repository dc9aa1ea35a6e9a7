#pragma once

#include <span>
#include <vector>

#include "cfpolicy/cohort.hpp"
#include "cfpolicy/json.hpp"
#include "cfpolicy/norm_stats.hpp"

namespace cfpolicy {

struct RewardFn {
  double terminal_survival = 1.0;
  double terminal_death = -1.0;
  double intermediate_death = -1.0;
  double hypo_penalty = -0.05;
  double hyper_penalty = -0.05;
  double normal_map_bonus = 0.05;
  double map_low = 60.0;
  double map_high = 80.0;
  double sbp_crisis = 180.0;

  void validate() const;
  bool operator==(const RewardFn&) const = default;
};

// map and sbp in mmHg. MAP < map_low is hypotensive, map_low <= MAP <= map_high
// earns the bonus, SBP > sbp_crisis is hypertensive; terms add up.
double step_reward(const RewardFn& fn, double map, double sbp, bool died_now, bool is_terminal, bool alive_at_end);

// Hemodynamic part only (no mortality term).
double hemodynamic_reward(const RewardFn& fn, double map, double sbp);

// Reads MAP / SBP in mmHg out of a normalized state row.
class HemodynamicView {
 public:
  HemodynamicView(const FeatureSchema& schema, const NormStats& stats);

  template <typename Row>
  double map(const Row& state) const {
    return map_stats_.inverse(state(map_index_));
  }
  template <typename Row>
  double sbp(const Row& state) const {
    return sbp_stats_.inverse(state(sbp_index_));
  }

  int map_index() const { return map_index_; }
  int sbp_index() const { return sbp_index_; }

 private:
  int map_index_;
  int sbp_index_;
  FeatureStats map_stats_;
  FeatureStats sbp_stats_;
};

// Per-step rewards of a normalized, imputed trajectory. A death before the
// last step is penalized once at that step; the last step then carries no
// terminal term.
std::vector<double> trajectory_rewards(const RewardFn& fn, const PatientTrajectory& traj, const HemodynamicView& view);

double discounted_sum(std::span<const double> rewards, double gamma);

double trajectory_return(const RewardFn& fn, const PatientTrajectory& traj, const HemodynamicView& view, double gamma);

void to_json(Json& j, const RewardFn& fn);
void from_json(const Json& j, RewardFn& fn);

}  // namespace cfpolicy
