#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfpolicy/bc.hpp"
#include "cfpolicy/json.hpp"
#include "cfpolicy/numcore.hpp"
#include "cfpolicy/preprocess.hpp"
#include "cfpolicy/rng.hpp"

namespace cfpolicy {

inline constexpr double kDefaultSmoothing = 1e-6;

// KL(p' || q') in nats with p' = (p + eps) / (1 + K eps), likewise q'.
// Inputs must be probability vectors of equal length.
double kl_divergence(std::span<const double> p, std::span<const double> q, double eps = kDefaultSmoothing);
// 0.5 KL(p || m) + 0.5 KL(q || m), m = (p + q) / 2, unsmoothed. In [0, ln 2].
double js_divergence(std::span<const double> p, std::span<const double> q);

struct MmdResult {
  double value = 0.0;      // sqrt of the biased MMD^2 estimate
  double bandwidth = 0.0;  // RBF sigma actually used
  bool fallback = false;   // median pairwise distance was 0, sigma set to 1
};

// Rows are samples. Kernel exp(-|x - y|^2 / (2 sigma^2)); sigma defaults to
// the median pairwise distance of the pooled samples. Needs >= 2 rows each.
MmdResult mmd_rbf(const nn::Matrix& x, const nn::Matrix& y, std::optional<double> bandwidth = std::nullopt);
MmdResult mmd_rbf(std::span<const double> x, std::span<const double> y,
                  std::optional<double> bandwidth = std::nullopt);

// Integral of |F^-1(u) - G^-1(u)| over u in (0, 1). For equal sizes this is
// the mean absolute difference of the order statistics.
double wasserstein1(std::span<const double> x, std::span<const double> y);

struct ActionDistribution {
  std::vector<double> probs = std::vector<double>(kActionClasses, 0.0);
  double count = 0.0;         // samples pooled into probs
  std::vector<double> fluid;  // dose samples, raw units
  std::vector<double> vaso;

  void validate() const;
};

ActionDistribution label_distribution(std::span<const int> labels);

// Every (patient, timestep) cell of a prepared cohort with the recorded and
// the policy's actions. Classification policies pair class representatives
// on both sides; regression policies pair raw doses and bin them for labels.
struct ActionTable {
  bool classification = true;
  std::vector<int> patient;
  std::vector<int> timestep;
  std::vector<int> realized;      // action class of the recorded doses
  nn::Matrix realized_doses;      // N x 2 raw
  nn::Matrix probabilities;       // N x 25; one-hot of the binned prediction for regression
  std::vector<int> predicted;     // argmax or binned prediction
  nn::Matrix predicted_doses;     // N x 2 raw
  nn::Matrix recorded_doses;      // N x 2 raw recorded doses, never representatives
  nn::Matrix expected_doses;      // N x 2 raw, probability-weighted representatives
  int horizon = 0;                // longest trajectory
  std::size_t patients = 0;

  std::size_t size() const { return realized.size(); }
};

ActionTable action_table(BcPolicy& policy, const PreparedCohort& data);

struct EmpiricalActions {
  ActionDistribution realized;
  ActionDistribution counterfactual;         // mean predicted probability vectors
  ActionDistribution counterfactual_argmax;  // histogram of predicted classes
};

// One pooled entry, or one entry per timestep.
std::vector<EmpiricalActions> empirical_action_dist(const ActionTable& table, bool per_timestep);
std::vector<EmpiricalActions> empirical_action_dist(BcPolicy& policy, const PreparedCohort& data, bool per_timestep);

struct MetricSet {
  double kl = 0.0;          // KL(realized || counterfactual)
  double kl_reverse = 0.0;  // KL(counterfactual || realized)
  double js = 0.0;
  double kl_argmax = 0.0;
  double js_argmax = 0.0;
  double mmd = 0.0;         // joint doses in normalized units
  double w1_fluid = 0.0;    // raw units
  double w1_vaso = 0.0;
  double mmd_bandwidth = 0.0;
  std::size_t samples = 0;

  bool operator==(const MetricSet&) const = default;
};

struct MetricOptions {
  double epsilon = kDefaultSmoothing;
  std::size_t mmd_cap = 2000;  // per side; larger samples are subsampled
};

// `norm` maps raw doses to the units MMD is computed in. `fallbacks` counts
// bandwidth fallbacks when given.
MetricSet compare(const EmpiricalActions& actions, const NormStats& norm, const MetricOptions& options, Rng& rng,
                  int* fallbacks = nullptr);

struct MeanActionSeries {
  std::string subgroup;
  std::string role;  // "target" or "control"
  std::vector<double> realized_fluid;
  std::vector<double> realized_vaso;
  std::vector<double> counterfactual_fluid;
  std::vector<double> counterfactual_vaso;

  bool operator==(const MeanActionSeries&) const = default;
};

MeanActionSeries mean_action_series(const ActionTable& table, const std::string& subgroup, const std::string& role);

struct ReportOptions {
  double epsilon = kDefaultSmoothing;
  std::uint64_t seed = 0;
  int bootstrap = 200;
  std::size_t mmd_cap = 2000;
  Split split = Split::test;
  bool per_timestep = true;
};

struct DiscrepancyReport {
  Subgroup source;
  Subgroup target;
  std::string policy_mode;
  double epsilon = kDefaultSmoothing;
  std::uint64_t seed = 0;
  int bootstrap = 0;
  std::string split;
  std::size_t target_patients = 0;
  std::size_t control_patients = 0;

  MetricSet aggregate;
  MetricSet control;
  double kl_bootstrap_sd = 0.0;
  double control_kl_bootstrap_sd = 0.0;
  // Mean over cells of KL(smoothed one-hot realized || predicted distribution).
  double per_state_kl = 0.0;
  double control_per_state_kl = 0.0;

  std::vector<MetricSet> per_timestep;
  std::vector<MetricSet> control_per_timestep;
  std::vector<MeanActionSeries> mean_actions;
  int bandwidth_fallbacks = 0;
  std::vector<std::string> warnings;

  bool operator==(const DiscrepancyReport&) const = default;
};

// Applies a policy trained on its source subgroup to the target subgroup's
// split, with the source's statistics, and to the source's own split as control.
DiscrepancyReport counterfactual_report(BcPolicy& policy, const CohortDataset& cohort, const Subgroup& target,
                                        const ReportOptions& options = {});

void to_json(Json& j, const MetricSet& m);
void from_json(const Json& j, MetricSet& m);
void to_json(Json& j, const DiscrepancyReport& r);
void from_json(const Json& j, DiscrepancyReport& r);

// One row per metric set: scope,timestep,<metrics>; aggregate rows have an empty timestep.
void write_metrics_csv(std::ostream& out, const DiscrepancyReport& report);

// report.json, metrics.csv, mean_actions.svg and metric_timestep.svg.
void write_report_files(const std::filesystem::path& dir, const DiscrepancyReport& report);

}  // namespace cfpolicy
