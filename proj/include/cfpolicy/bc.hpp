#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cfpolicy/json.hpp"
#include "cfpolicy/numcore.hpp"
#include "cfpolicy/preprocess.hpp"

namespace cfpolicy {

enum class BcMode { regression, classification };

std::string to_string(BcMode mode);
BcMode parse_bc_mode(const std::string& text);

inline constexpr int kContextSteps = 3;

struct BcHyperparams {
  int epochs = 300;
  int batch = 64;
  double lr = 3e-4;
  int patience = 30;  // epochs without validation improvement; 0 disables
  std::vector<int> hidden{128, 128};
  bool batch_norm = true;
  // Flatten the whole encounter into one input and predict every timestep.
  bool full_encounter = false;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BcPolicy {
  BcMode mode = BcMode::classification;
  nn::Mlp net;
  bool full_encounter = false;
  int feature_count = 0;
  int horizon = 0;  // encounter length for full-encounter inputs, else 0
  Subgroup source;
  Preprocessing artifacts;
  std::vector<std::string> feature_names;

  int head_width() const { return mode == BcMode::classification ? kActionClasses : kActionDims; }
  int input_width() const { return net.input_width(); }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct BcTrainResult {
  BcPolicy policy;
  std::vector<EpochRecord> history;  // one entry per epoch actually run
  int best_epoch = 0;
};

// Trains on the train split of an already prepared (imputed, normalized) cohort.
BcTrainResult train_bc(const PreparedCohort& data, BcMode mode, const BcHyperparams& hp);
// Filters to the subgroup, fits preprocessing on its train split, then trains.
BcTrainResult train_bc(const CohortDataset& cohort, const Subgroup& subgroup, BcMode mode, const BcHyperparams& hp);

// Row t is the current state and the two before it, oldest first, with s_0
// repeated before the start of the encounter.
nn::Matrix context_windows(const PatientTrajectory& traj);

// Policy inputs for one trajectory: T rows of context windows, or one row of
// the flattened encounter.
nn::Matrix policy_inputs(const BcPolicy& policy, const PatientTrajectory& traj);

struct BcPrediction {
  nn::Matrix values;        // rows x 2 normalized doses, or rows x 25 probabilities
  std::vector<int> labels;  // argmax per row (classification only)
};

// `inputs` are rows of policy_inputs. Full-encounter policies return T rows per input row.
BcPrediction predict(BcPolicy& policy, const nn::Matrix& inputs);
BcPrediction predict_trajectory(BcPolicy& policy, const PatientTrajectory& traj);

struct DrugRmse {
  double fluid = 0.0;
  double vaso = 0.0;
};

// Per-timestep RMSE per drug in normalized units.
DrugRmse eval_rmse(BcPolicy& policy, const PreparedCohort& data, Split split);
// Same metric for the constant zero prediction.
DrugRmse zero_baseline_rmse(const PreparedCohort& data, Split split);

struct AurocResult {
  double macro = 0.0;
  std::vector<int> classes;           // classes that entered the average
  std::vector<double> per_class;      // parallel to classes
  std::vector<int> skipped;           // absent from the split
};

// Rank-based (Mann-Whitney) AUROC with average ranks for ties.
double auroc(std::span<const double> scores, std::span<const int> positive);
// One-vs-rest average over the classes present in `labels`.
AurocResult macro_auroc(const nn::Matrix& probabilities, std::span<const int> labels);
AurocResult eval_auroc(BcPolicy& policy, const PreparedCohort& data, Split split);

Json bc_to_json(const BcPolicy& policy);
BcPolicy bc_from_json(const Json& j);
Json history_to_json(const std::vector<EpochRecord>& history);

}  // namespace cfpolicy
