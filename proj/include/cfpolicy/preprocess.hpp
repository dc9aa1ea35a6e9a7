#pragma once

#include <array>
#include <vector>

#include "cfpolicy/cohort.hpp"
#include "cfpolicy/norm_stats.hpp"

namespace cfpolicy {

inline constexpr int kBinsPerDrug = 5;
inline constexpr int kActionClasses = kBinsPerDrug * kBinsPerDrug;

// Quartile cutoffs of the nonzero train-split doses for one drug.
// cutoffs = {q0, q25, q50, q75}; q0 (the smallest nonzero dose) is kept for
// reporting only, bin membership uses q25..q75. representatives holds the
// 12.5/37.5/62.5/87.5% quantiles, used when a bin index must become a dose.
struct DrugBinning {
  std::array<double, 4> cutoffs{};
  std::array<double, 4> representatives{};

  int bin(double dose) const;
  double representative(int bin) const { return bin == 0 ? 0.0 : representatives[bin - 1]; }

  bool operator==(const DrugBinning&) const = default;
};

struct ActionBinning {
  DrugBinning fluid;
  DrugBinning vaso;

  bool operator==(const ActionBinning&) const = default;
};

// Artifacts bundled with every trained model so that counterfactual
// evaluation reuses the source cohort's statistics.
struct Preprocessing {
  NormStats norm;
  ActionBinning binning;

  bool operator==(const Preprocessing&) const = default;
};

// Linear interpolation between order statistics, h = (n - 1) p.
double quantile_linear(const std::vector<double>& sorted, double p);

NormStats fit_norm_stats(const CohortDataset& cohort);
PatientTrajectory apply_norm(const PatientTrajectory& traj, const NormStats& stats);
// Algebraic inverse of apply_norm on states and actions.
PatientTrajectory invert_norm(const PatientTrajectory& traj, const NormStats& stats);
PatientTrajectory impute(const PatientTrajectory& traj, const NormStats& stats);

enum class Vasopressor { norepinephrine, phenylephrine, dopamine, vasopressin, dobutamine, milrinone };

struct NorepiDose {
  double value = 0.0;
  bool unconverted = false;  // agent has no equivalence factor; dose passed through
};

NorepiDose norepi_equivalent(Vasopressor drug, double dose);

ActionBinning fit_binning(const CohortDataset& cohort);
int bin_action(double fluid, double vaso, const ActionBinning& binning);

Preprocessing fit_preprocessing(const CohortDataset& cohort);

// Imputed and normalized cohort plus the raw-dose action labels.
struct PreparedCohort {
  CohortDataset data;
  Preprocessing artifacts;
  Subgroup source;                          // whose train split fitted `artifacts`
  std::vector<ActionMatrix> raw_actions;    // per trajectory, raw dose units
  std::vector<std::vector<int>> labels;     // per trajectory, joint action class

  std::size_t size() const { return data.size(); }
};

PreparedCohort prepare(const CohortDataset& cohort, const Preprocessing& artifacts, const Subgroup& source);

// Fits artifacts on the subgroup's train split and prepares that subgroup.
PreparedCohort prepare_subgroup(const CohortDataset& cohort, const Subgroup& subgroup);

PreparedCohort select_split(const PreparedCohort& prepared, Split split);

}  // namespace cfpolicy
