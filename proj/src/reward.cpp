#include "cfpolicy/reward.hpp"

#include <cmath>

#include "cfpolicy/errors.hpp"

namespace cfpolicy {

void RewardFn::validate() const {
  if (hypo_penalty > 0.0 || hyper_penalty > 0.0 || intermediate_death > 0.0 || terminal_death > 0.0)
    throw ConfigError("reward penalties must be <= 0");
  if (normal_map_bonus < 0.0 || terminal_survival < 0.0) throw ConfigError("reward bonuses must be >= 0");
  if (!(map_low < map_high)) throw ConfigError("map_low must be below map_high");
}

double hemodynamic_reward(const RewardFn& fn, double map, double sbp) {
  if (!std::isfinite(map) || !std::isfinite(sbp)) throw DomainError("MAP and SBP must be finite");
  double r = 0.0;
  if (map < fn.map_low) r += fn.hypo_penalty;
  if (map >= fn.map_low && map <= fn.map_high) r += fn.normal_map_bonus;
  if (sbp > fn.sbp_crisis) r += fn.hyper_penalty;
  return r;
}

double step_reward(const RewardFn& fn, double map, double sbp, bool died_now, bool is_terminal, bool alive_at_end) {
  double r = hemodynamic_reward(fn, map, sbp);
  if (is_terminal)
    r += alive_at_end ? fn.terminal_survival : fn.terminal_death;
  else if (died_now)
    r += fn.intermediate_death;
  return r;
}

HemodynamicView::HemodynamicView(const FeatureSchema& schema, const NormStats& stats) {
  const int m = schema.index_of("mbp");
  const int s = schema.index_of("sbp");
  if (m < 0 || s < 0) throw MissingFeatureError("reward needs 'mbp' and 'sbp' features");
  if (static_cast<std::size_t>(std::max(m, s)) >= stats.features.size())
    throw SchemaError("normalization statistics do not cover the blood-pressure features");
  map_index_ = m;
  sbp_index_ = s;
  map_stats_ = stats.features[m];
  sbp_stats_ = stats.features[s];
}

std::vector<double> trajectory_rewards(const RewardFn& fn, const PatientTrajectory& traj, const HemodynamicView& view) {
  const int T = traj.length();
  const int death = traj.mortality_step.value_or(-1);
  const bool early_death = death >= 0 && death < T - 1;
  std::vector<double> rewards(T);
  for (int t = 0; t < T; ++t) {
    const auto row = traj.states.row(t);
    const bool last = t == T - 1;
    rewards[t] = step_reward(fn, view.map(row), view.sbp(row), t == death, last && !early_death, traj.outcome_alive);
  }
  return rewards;
}

double discounted_sum(std::span<const double> rewards, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw PreconditionError("discount must lie in (0, 1]");
  double total = 0.0;
  double w = 1.0;
  for (double r : rewards) {
    total += w * r;
    w *= gamma;
  }
  return total;
}

double trajectory_return(const RewardFn& fn, const PatientTrajectory& traj, const HemodynamicView& view, double gamma) {
  const auto r = trajectory_rewards(fn, traj, view);
  return discounted_sum(r, gamma);
}

void to_json(Json& j, const RewardFn& fn) {
  j = {{"terminal_survival", fn.terminal_survival}, {"terminal_death", fn.terminal_death},
       {"intermediate_death", fn.intermediate_death}, {"hypo_penalty", fn.hypo_penalty},
       {"hyper_penalty", fn.hyper_penalty},         {"normal_map_bonus", fn.normal_map_bonus},
       {"map_low", fn.map_low},                     {"map_high", fn.map_high},
       {"sbp_crisis", fn.sbp_crisis}};
}

void from_json(const Json& j, RewardFn& fn) {
  fn.terminal_survival = j.value("terminal_survival", fn.terminal_survival);
  fn.terminal_death = j.value("terminal_death", fn.terminal_death);
  fn.intermediate_death = j.value("intermediate_death", fn.intermediate_death);
  fn.hypo_penalty = j.value("hypo_penalty", fn.hypo_penalty);
  fn.hyper_penalty = j.value("hyper_penalty", fn.hyper_penalty);
  fn.normal_map_bonus = j.value("normal_map_bonus", fn.normal_map_bonus);
  fn.map_low = j.value("map_low", fn.map_low);
  fn.map_high = j.value("map_high", fn.map_high);
  fn.sbp_crisis = j.value("sbp_crisis", fn.sbp_crisis);
  fn.validate();
}

}  // namespace cfpolicy
