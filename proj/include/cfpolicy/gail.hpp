#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfpolicy/dynamics.hpp"
#include "cfpolicy/json.hpp"
#include "cfpolicy/numcore.hpp"
#include "cfpolicy/preprocess.hpp"
#include "cfpolicy/reward.hpp"

namespace cfpolicy {

// generated_positive: the discriminator ascends E_gen[log D] + E_exp[log(1 - D)],
// so D estimates the probability that a pair was generated and the policy cost
// is log D. expert_positive swaps the labels (D estimates "expert").
enum class GailConvention { generated_positive, expert_positive };

std::string to_string(GailConvention c);
GailConvention parse_convention(const std::string& text);

inline constexpr double kDiscClamp = 1e-6;

struct GailConfig {
  double lr = 3e-4;
  double disc_lr = 1e-3;
  int batch = 64;               // discriminator minibatch
  double entropy_coef = 0.1;    // lambda
  double kl_beta = 1.0;         // initial KL penalty
  double kl_target = 0.01;      // beta adapts around this
  double kl_max = 0.05;         // hard per-update bound
  double gamma = 0.99;
  int iterations = 200;
  int horizon = 16;
  int episodes = 32;            // rollouts per iteration
  int policy_steps = 10;        // gradient steps per policy update
  int disc_epochs = 1;          // passes over the pair batch per iteration
  int start_step = 2;           // rollouts start from expert windows at this timestep
  double baseline_ridge = 1e-3;
  std::vector<int> policy_hidden{200, 200};
  std::vector<int> disc_hidden{64, 64};
  bool discrete = true;
  bool freeze_policy = false;  // discriminator-only runs against the initial policy
  GailConvention convention = GailConvention::generated_positive;
  std::uint64_t seed = 0;

  void validate() const;
};

// Categorical over `n_actions` classes, or a diagonal Gaussian over the two
// normalized doses with a state-independent learned log-stddev.
class StochasticPolicy {
 public:
  StochasticPolicy() = default;
  StochasticPolicy(int input_width, bool discrete, const std::vector<int>& hidden, std::uint64_t seed,
                   int n_actions = kActionClasses);

  bool discrete() const { return discrete_; }
  int input_width() const { return net.input_width(); }
  int action_count() const { return net.output_width(); }

  // Logits (discrete) or means (continuous), rows = windows.
  nn::Matrix head(const nn::Matrix& windows);
  nn::Matrix probabilities(const nn::Matrix& windows);
  Eigen::RowVectorXd stddev() const;
  // Mean per-row entropy.
  double entropy(const nn::Matrix& windows);

  nn::ParamRefs params();

  nn::Mlp net;
  nn::ParamTensor log_std{"log_std", 1, kActionDims};

 private:
  bool discrete_ = true;
};

struct Discriminator {
  Discriminator() = default;
  Discriminator(int state_width, int action_width, const std::vector<int>& hidden, GailConvention convention,
                double lr, std::uint64_t seed);

  // D(s, a) clamped to [1e-6, 1 - 1e-6]; inputs are [state, action encoding].
  nn::Vector scores(const nn::Matrix& pairs);
  // Probability that each pair was generated under the configured convention.
  nn::Vector prob_generated(const nn::Matrix& pairs);

  nn::Mlp net;
  GailConvention convention = GailConvention::generated_positive;
  int state_width = 0;
  int action_width = 0;
  nn::Optimizer opt;
};

// [state, one-hot(label)] rows.
nn::Matrix encode_discrete_pairs(const nn::Matrix& states, const std::vector<int>& labels, int n_actions);
// [state, normalized doses] rows.
nn::Matrix encode_continuous_pairs(const nn::Matrix& states, const nn::Matrix& actions);

struct DiscStep {
  double loss = 0.0;      // post-step cross-entropy (sum of both batch means)
  double accuracy = 0.0;  // balanced over the two batches, threshold 0.5
};

// One gradient step of the cross-entropy objective under disc.convention.
DiscStep disc_update(Discriminator& disc, const nn::Matrix& expert, const nn::Matrix& generated);
DiscStep disc_evaluate(Discriminator& disc, const nn::Matrix& expert, const nn::Matrix& generated);

// -log(prob_generated), in [0, -ln 1e-6].
nn::Vector policy_reward(Discriminator& disc, const nn::Matrix& pairs);

struct PolicyBatch {
  nn::Matrix windows;        // N x input width
  std::vector<int> labels;   // discrete actions
  nn::Matrix actions;        // N x 2 continuous actions
  nn::Vector advantages;     // N
};

struct PolicyUpdateStats {
  double kl = 0.0;           // mean KL(old || new) after the update
  double beta = 0.0;         // penalty after adaptation
  double entropy = 0.0;      // mean entropy after the update
  int backtracks = 0;
};

// KL-penalized policy gradient: `config.policy_steps` Adam steps on
// mean[log pi * A] + lambda * H - beta * KL(old || theta); if the batch KL
// then exceeds kl_max the step is halved toward the old parameters until it
// does not. `beta` is adapted in place.
PolicyUpdateStats policy_update(StochasticPolicy& policy, const PolicyBatch& batch, const GailConfig& config,
                                double& beta);

// Discounted return-to-go within each episode (rows = episodes).
nn::Matrix returns_to_go(const nn::Matrix& rewards, double gamma);
// Returns minus a ridge-regression baseline on [state, 1, remaining discount mass].
nn::Matrix advantages(const nn::Matrix& rewards, const std::vector<nn::Matrix>& states, double gamma, double ridge);

// Pool of expert data for one subgroup.
struct ExpertPool {
  std::vector<HistoryWindow> starts;  // rollout start windows
  nn::Matrix states;                  // expert pairs: current state
  std::vector<int> labels;
  nn::Matrix actions;                 // normalized doses
};

// Start windows from the test split (train split when test is empty); expert
// pairs from train-split timesteps in [start_step, start_step + horizon).
ExpertPool build_expert_pool(const PreparedCohort& data, const GailConfig& config);

struct GailLogEntry {
  int iteration = 0;
  double disc_accuracy = 0.0;
  double disc_loss = 0.0;
  double mean_reward = 0.0;  // discriminator reward
  std::optional<double> mean_clinical_reward;
  double entropy = 0.0;
  double kl = 0.0;
  double beta = 0.0;
  double mean_margin = 0.0;  // mean |D - 0.5| on generated pairs
};

struct GailResult {
  StochasticPolicy policy;
  StochasticPolicy initial_policy;
  Discriminator disc;
  std::vector<GailLogEntry> log;
  // Mean |D - 0.5| under the final discriminator for rollouts of the initial
  // and final policies from the same start windows.
  double initial_margin = 0.0;
  double final_margin = 0.0;
};

// Rollout-ready policy callback: samples actions (labels are converted to
// doses through the binning representatives and normalized).
RolloutPolicy as_rollout_policy(StochasticPolicy& policy, const Preprocessing& artifacts, bool greedy = false);

GailResult train_gail(const PreparedCohort& data, TransitionModel& model, const GailConfig& config,
                      const std::optional<RewardContext>& clinical = std::nullopt);

Json gail_log_line(const GailLogEntry& e);
Json to_json_config(const GailConfig& config);
GailConfig gail_config_from_json(const Json& j, GailConfig base = {});
Json policy_to_json(const StochasticPolicy& policy);
StochasticPolicy policy_from_json(const Json& j);
Json disc_to_json(const Discriminator& disc);
Discriminator disc_from_json(const Json& j);

}  // namespace cfpolicy
