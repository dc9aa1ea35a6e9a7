#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "cfpolicy/bc.hpp"
#include "cfpolicy/json.hpp"
#include "cfpolicy/numcore.hpp"
#include "cfpolicy/preprocess.hpp"
#include "cfpolicy/reward.hpp"
#include "cfpolicy/rng.hpp"

namespace cfpolicy {

// Oldest first. Slots before the start of the encounter hold s_0 with zero actions.
struct HistoryWindow {
  nn::Matrix states;   // 3 x M
  nn::Matrix actions;  // 3 x 2
};

HistoryWindow make_window(const PatientTrajectory& traj, int t);

struct DynHyperparams {
  int epochs = 300;
  int batch = 64;
  double lr = 1e-3;
  int hidden = 64;
  int patience = 30;
  std::uint64_t seed = 0;

  void validate() const;
};

class TransitionModel {
 public:
  TransitionModel() = default;
  TransitionModel(nn::RecurrentRegressor net, int feature_count);

  // Model whose predicted delta is identically zero.
  static TransitionModel zero(int feature_count, int hidden = 4);

  // One row of deltas per window.
  nn::Matrix predict_delta(const std::vector<HistoryWindow>& windows);
  // Newest state plus the predicted delta.
  nn::Matrix predict_next(const std::vector<HistoryWindow>& windows);

  int feature_count() const { return feature_count_; }
  nn::RecurrentRegressor& net() { return net_; }
  const nn::RecurrentRegressor& net() const { return net_; }

  Preprocessing artifacts;  // statistics of the cohort the model was fitted on
  Subgroup source;

 private:
  nn::RecurrentRegressor net_;
  int feature_count_ = 0;
};

// Step inputs [s_k, a_k] for k = 0..2 over a batch of windows.
std::vector<nn::Matrix> window_steps(const std::vector<HistoryWindow>& windows);

struct DynTrainResult {
  TransitionModel model;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

// Minimizes the element-mean squared error of the predicted s_{t+1} - s_t
// over all train-split windows with t < T - 1.
DynTrainResult train_dynamics(const PreparedCohort& data, const DynHyperparams& hp);

double dynamics_mse(TransitionModel& model, const PreparedCohort& data, Split split);
double zero_delta_mse(const PreparedCohort& data, Split split);

inline constexpr double kStateClip = 8.0;

struct PolicyStep {
  nn::Matrix actions;       // batch x 2, normalized doses
  std::vector<int> labels;  // discrete choices, empty for continuous policies
};

// Receives the batch of state windows (batch x 3M, oldest first) and chooses actions.
using RolloutPolicy = std::function<PolicyStep(const nn::Matrix& state_windows, Rng& rng)>;

struct RolloutBatch {
  std::vector<RowMatrix> states;             // per episode, (horizon + 1) x M
  std::vector<ActionMatrix> actions;         // per episode, horizon x 2
  std::vector<std::vector<int>> labels;      // per episode, horizon (discrete policies)
  std::vector<std::vector<double>> rewards;  // per episode, horizon; r_{t+1} from s_{t+1}

  std::size_t episodes() const { return states.size(); }
};

struct RewardContext {
  RewardFn fn;
  HemodynamicView view;
};

// Alternates policy action and model step s_{t+1} = clip(s_t + delta) for
// every episode in lockstep. The newest action slot of each start window is
// replaced by the policy's choice. Rewards are hemodynamic only since
// rollouts carry no mortality model; without a context they are zero.
RolloutBatch rollout(TransitionModel& model, const RolloutPolicy& policy, const std::vector<HistoryWindow>& starts,
                     int horizon, const std::optional<RewardContext>& reward, Rng& rng);

// Flattened state windows of a batch of histories (batch x 3M).
nn::Matrix state_windows(const std::vector<HistoryWindow>& windows);

// Rollout trace in raw units as a cohort, with the per-step reward as an extra column.
void write_rollout(const std::filesystem::path& path, const RolloutBatch& batch, const CohortSchema& schema,
                   const NormStats& stats);

Json dynamics_to_json(const TransitionModel& model);
TransitionModel dynamics_from_json(const Json& j);

}  // namespace cfpolicy
