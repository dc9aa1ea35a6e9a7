#include "cfpolicy/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "cfpolicy/errors.hpp"

namespace cfpolicy {

double FeatureStats::transform(double x) const {
  if (passthrough || is_missing(x)) return x;
  const double y = log_flag ? std::log1p(x) : x;
  if (stddev == 0.0) return 0.0;
  return (y - mean) / stddev;
}

double FeatureStats::inverse(double z) const {
  if (passthrough || is_missing(z)) return z;
  const double y = stddev == 0.0 ? mean : z * stddev + mean;
  return log_flag ? std::expm1(y) : y;
}

double FeatureStats::fill_value() const { return log_flag ? std::expm1(mean) : mean; }

double quantile_linear(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw PreconditionError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

namespace {

FeatureStats population_stats(const std::vector<double>& values, bool log_flag) {
  FeatureStats s;
  s.log_flag = log_flag;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(values.size()));
  return s;
}

}  // namespace

NormStats fit_norm_stats(const CohortDataset& cohort) {
  const auto train = cohort.indices(Split::train);
  if (train.empty()) throw PreconditionError("cannot fit normalization: train split is empty");
  const auto& schema = cohort.schema.features;
  const int m = schema.size();

  NormStats stats;
  stats.features.resize(m);
  std::vector<double> column;
  for (int j = 0; j < m; ++j) {
    const bool log_flag = schema.log_normalized[j];
    column.clear();
    for (const auto i : train) {
      const auto& states = cohort.trajectories[i].states;
      for (Eigen::Index t = 0; t < states.rows(); ++t) {
        const double v = states(t, j);
        if (!is_missing(v)) column.push_back(log_flag ? std::log1p(v) : v);
      }
    }
    if (column.empty()) throw MissingFeatureError("feature '" + schema.names[j] + "' has no observed train cells");
    stats.features[j] = population_stats(column, log_flag);
    stats.features[j].passthrough = schema.kinds[j] == FeatureKind::binary;
  }
  for (int d = 0; d < kActionDims; ++d) {
    column.clear();
    for (const auto i : train) {
      const auto& actions = cohort.trajectories[i].actions;
      for (Eigen::Index t = 0; t < actions.rows(); ++t) column.push_back(actions(t, d));
    }
    stats.actions[d] = population_stats(column, false);
  }
  return stats;
}

PatientTrajectory apply_norm(const PatientTrajectory& traj, const NormStats& stats) {
  PatientTrajectory out = traj;
  for (Eigen::Index j = 0; j < out.states.cols(); ++j) {
    const auto& s = stats.features.at(j);
    for (Eigen::Index t = 0; t < out.states.rows(); ++t) out.states(t, j) = s.transform(traj.states(t, j));
  }
  for (int d = 0; d < kActionDims; ++d)
    for (Eigen::Index t = 0; t < out.actions.rows(); ++t) out.actions(t, d) = stats.actions[d].transform(traj.actions(t, d));
  return out;
}

PatientTrajectory invert_norm(const PatientTrajectory& traj, const NormStats& stats) {
  PatientTrajectory out = traj;
  for (Eigen::Index j = 0; j < out.states.cols(); ++j) {
    const auto& s = stats.features.at(j);
    for (Eigen::Index t = 0; t < out.states.rows(); ++t) out.states(t, j) = s.inverse(traj.states(t, j));
  }
  for (int d = 0; d < kActionDims; ++d)
    for (Eigen::Index t = 0; t < out.actions.rows(); ++t) out.actions(t, d) = stats.actions[d].inverse(traj.actions(t, d));
  return out;
}

PatientTrajectory impute(const PatientTrajectory& traj, const NormStats& stats) {
  PatientTrajectory out = traj;
  const Eigen::Index T = out.states.rows();
  for (Eigen::Index j = 0; j < out.states.cols(); ++j) {
    const double fill = stats.features.at(j).fill_value();
    Eigen::Index prev = -1;
    for (Eigen::Index t = 0; t < T; ++t) {
      if (is_missing(out.states(t, j))) continue;
      if (prev < 0) {
        for (Eigen::Index k = 0; k < t; ++k) out.states(k, j) = fill;
      } else {
        const double a = out.states(prev, j);
        const double b = out.states(t, j);
        const double span = static_cast<double>(t - prev);
        for (Eigen::Index k = prev + 1; k < t; ++k)
          out.states(k, j) = a + (b - a) * static_cast<double>(k - prev) / span;
      }
      prev = t;
    }
    if (prev < 0) {
      for (Eigen::Index k = 0; k < T; ++k) out.states(k, j) = fill;
    } else {
      for (Eigen::Index k = prev + 1; k < T; ++k) out.states(k, j) = out.states(prev, j);
    }
  }
  return out;
}

NorepiDose norepi_equivalent(Vasopressor drug, double dose) {
  if (!(dose >= 0.0)) throw DomainError("vasopressor dose must be nonnegative");
  switch (drug) {
    case Vasopressor::norepinephrine: return {dose, false};
    case Vasopressor::phenylephrine: return {dose / 10.0, false};
    case Vasopressor::dopamine: return {dose / 100.0, false};
    case Vasopressor::vasopressin: return {dose * 2.5, false};
    case Vasopressor::dobutamine:
    case Vasopressor::milrinone: return {dose, true};
  }
  return {dose, true};
}

int DrugBinning::bin(double dose) const {
  if (!(dose >= 0.0)) throw DomainError("dose must be nonnegative");
  if (dose == 0.0) return 0;
  int b = 1;
  for (int k = 1; k < 4; ++k)
    if (cutoffs[k] < dose) ++b;
  return b;
}

namespace {

DrugBinning fit_drug(std::vector<double> nonzero, const char* drug) {
  if (nonzero.empty()) throw DegenerateBinningError(std::string("no nonzero train doses for ") + drug);
  std::sort(nonzero.begin(), nonzero.end());
  DrugBinning b;
  for (int k = 0; k < 4; ++k) {
    b.cutoffs[k] = quantile_linear(nonzero, 0.25 * k);
    b.representatives[k] = quantile_linear(nonzero, 0.125 + 0.25 * k);
  }
  return b;
}

}  // namespace

ActionBinning fit_binning(const CohortDataset& cohort) {
  const auto train = cohort.indices(Split::train);
  if (train.empty()) throw PreconditionError("cannot fit binning: train split is empty");
  std::vector<double> fluid, vaso;
  for (const auto i : train) {
    const auto& a = cohort.trajectories[i].actions;
    for (Eigen::Index t = 0; t < a.rows(); ++t) {
      if (a(t, 0) > 0.0) fluid.push_back(a(t, 0));
      if (a(t, 1) > 0.0) vaso.push_back(a(t, 1));
    }
  }
  return {fit_drug(std::move(fluid), "fluid"), fit_drug(std::move(vaso), "vasopressor")};
}

int bin_action(double fluid, double vaso, const ActionBinning& binning) {
  return binning.fluid.bin(fluid) * kBinsPerDrug + binning.vaso.bin(vaso);
}

Preprocessing fit_preprocessing(const CohortDataset& cohort) { return {fit_norm_stats(cohort), fit_binning(cohort)}; }

PreparedCohort prepare(const CohortDataset& cohort, const Preprocessing& artifacts, const Subgroup& source) {
  if (artifacts.norm.features.size() != static_cast<std::size_t>(cohort.schema.features.size()))
    throw SchemaError("normalization statistics do not match the cohort's feature count");
  PreparedCohort out;
  out.artifacts = artifacts;
  out.source = source;
  out.data.schema = cohort.schema;
  out.data.splits = cohort.splits;
  out.data.norm_stats = artifacts.norm;
  out.data.trajectories.reserve(cohort.size());
  for (const auto& traj : cohort.trajectories) {
    std::vector<int> labels(traj.length());
    for (int t = 0; t < traj.length(); ++t) labels[t] = bin_action(traj.actions(t, 0), traj.actions(t, 1), artifacts.binning);
    out.raw_actions.push_back(traj.actions);
    out.labels.push_back(std::move(labels));
    out.data.trajectories.push_back(apply_norm(impute(traj, artifacts.norm), artifacts.norm));
  }
  return out;
}

PreparedCohort prepare_subgroup(const CohortDataset& cohort, const Subgroup& subgroup) {
  const auto sub = filter_subgroup(cohort, subgroup);
  return prepare(sub, fit_preprocessing(sub), subgroup);
}

PreparedCohort select_split(const PreparedCohort& prepared, Split split) {
  PreparedCohort out;
  out.artifacts = prepared.artifacts;
  out.source = prepared.source;
  out.data.schema = prepared.data.schema;
  out.data.norm_stats = prepared.data.norm_stats;
  for (const auto i : prepared.data.indices(split)) {
    out.data.trajectories.push_back(prepared.data.trajectories[i]);
    out.data.splits.push_back(split);
    out.raw_actions.push_back(prepared.raw_actions[i]);
    out.labels.push_back(prepared.labels[i]);
  }
  return out;
}

}  // namespace cfpolicy
