#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cfpolicy/bc.hpp"
#include "cfpolicy/divergence.hpp"
#include "cfpolicy/dynamics.hpp"
#include "cfpolicy/json.hpp"

namespace cfpolicy {

// Published results on a credentialed ICU cohort. They cannot be reproduced
// on synthetic data and are carried in every evaluation report for comparison.
struct ReferenceValue {
  std::string metric;
  double value = 0.0;
  double sd = 0.0;
};

const std::vector<ReferenceValue>& reference_values();

struct EvalReport {
  std::string model;  // checkpoint format
  std::string mode;   // bc mode, or "dynamics"
  std::string source;
  std::string subgroup;
  std::string split;
  std::size_t trajectories = 0;
  std::optional<AurocResult> auroc;
  std::optional<DrugRmse> rmse;
  std::optional<DrugRmse> zero_rmse;
  std::optional<double> mse;
  std::optional<double> zero_mse;
};

EvalReport evaluate_bc(BcPolicy& policy, const PreparedCohort& data, Split split);
EvalReport evaluate_dynamics(TransitionModel& model, const PreparedCohort& data, Split split);

Json to_json(const EvalReport& report);

// Fixed-width table of the aggregate and control metrics.
std::string metric_table(const DiscrepancyReport& report);

// Markdown section for an eval report, discrepancy report or training metrics file.
std::string summarize(const Json& artifact, const std::string& name);

}  // namespace cfpolicy
