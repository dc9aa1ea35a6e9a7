#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cfpolicy/cohort.hpp"

namespace cfpolicy {

struct SeverityDynamics {
  double decay = 0.9;
  double treatment_effect = 0.03;
  double noise_sd = 0.01;
};

struct SynthConfig {
  int n_patients = 1000;
  int T = 72;
  int n_features = 40;
  std::uint64_t seed = 0;
  // Subtracted from the vasopressor logit of `disparity_group`.
  double disparity_delta = 0.0;
  SubgroupKey disparity_group{"gender", "F"};
  SeverityDynamics severity;
  double mortality_slope = 1.5;
  double mortality_intercept = -3.0;
  bool intermediate_mortality = false;
  int onset = 24;
  double female_fraction = 0.5;
  std::vector<std::pair<std::string, double>> ethnicity{{"white", 0.6}, {"black", 0.2}, {"hispanic", 0.1}, {"asian", 0.1}};
  double policy_noise = 0.4;  // sd of the expert's logit noise
  double dose_noise = 0.1;    // sd of the multiplicative log-normal dose noise

  void validate() const;
};

// dose = max_dose * sigmoid(l) * exp(dose_noise * z) when l > 0, else 0,
// with l = slope * (severity - center) + offset + policy_noise * z'.
struct DrugPolicy {
  double slope = 0.0;
  double center = 0.0;
  double offset = 0.0;
  double max_dose = 1.0;

  bool operator==(const DrugPolicy&) const = default;
};

struct SubgroupPolicy {
  DrugPolicy fluid;
  DrugPolicy vaso;

  bool operator==(const SubgroupPolicy&) const = default;
};

// Kept apart from the emitted cohort; learners never see it.
struct GroundTruth {
  std::vector<std::vector<double>> severity;       // per trajectory, T values
  std::map<std::string, SubgroupPolicy> policies;  // keyed by "attribute=value"
  double policy_noise = 0.0;
  double dose_noise = 0.0;
  SubgroupKey disparity_group;
  double disparity_delta = 0.0;

  const SubgroupPolicy& policy_for(const PatientTrajectory& traj) const;
  bool operator==(const GroundTruth&) const = default;
};

struct SynthOutput {
  CohortDataset cohort;
  GroundTruth truth;
};

SynthOutput generate(const SynthConfig& config);

// Feature schema of the generator for a given feature count (Table-1 style
// names; counts beyond the named list get auxiliary distractors).
CohortSchema synth_schema(int n_features);

// Exact mean dose of a drug policy at a given severity, integrating the
// logit and dose noise numerically.
double expected_dose(const DrugPolicy& policy, double severity, double policy_noise, double dose_noise);

// Masks each non-demographic cell with probability `rate`, keeping at least
// one observation per (trajectory, feature) that had one.
CohortDataset inject_missingness(const CohortDataset& cohort, double rate, std::uint64_t seed);

}  // namespace cfpolicy
