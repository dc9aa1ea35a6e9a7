#include "cfpolicy/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cfpolicy/errors.hpp"
#include "cfpolicy/rng.hpp"

namespace cfpolicy {

namespace {

// Observed value = base + scale * (loading * severity + patient offset + noise
// + circadian); log features apply the same on ln(base) and exponentiate.
struct FeatureModel {
  const char* name;
  FeatureKind kind;
  double base;
  double scale;
  double loading;
  bool log;
  double circadian;
};

constexpr FeatureModel kFeatureTable[] = {
    {"age", FeatureKind::demographic, 65, 15, 0, false, 0},
    {"height", FeatureKind::demographic, 170, 10, 0, false, 0},
    {"weight", FeatureKind::demographic, 80, 18, 0, false, 0},
    {"heart_rate", FeatureKind::vital, 85, 12, 1.0, false, 0.3},
    {"sbp", FeatureKind::vital, 125, 14, -1.0, false, 0.25},
    {"dbp", FeatureKind::vital, 65, 9, -0.8, false, 0.25},
    {"mbp", FeatureKind::vital, 85, 10, -1.0, false, 0.25},
    {"resp_rate", FeatureKind::vital, 18, 4, 0.8, false, 0.3},
    {"temperature", FeatureKind::vital, 37, 0.6, 0.3, false, 0.5},
    {"ph", FeatureKind::lab, 7.38, 0.05, -0.7, false, 0.25},
    {"base_excess", FeatureKind::lab, 0, 4, -0.8, false, 0.25},
    {"hematocrit", FeatureKind::lab, 32, 5, 0, false, 0.25},
    {"hemoglobin", FeatureKind::lab, 10.5, 1.8, 0, false, 0.25},
    {"platelet", FeatureKind::lab, 200, 0.4, -0.5, true, 0.25},
    {"wbc", FeatureKind::lab, 12, 0.4, 0.6, true, 0.25},
    {"chloride", FeatureKind::lab, 104, 5, 0, false, 0.25},
    {"calcium", FeatureKind::lab, 8.3, 0.7, 0, false, 0.25},
    {"potassium", FeatureKind::lab, 4.1, 0.6, 0, false, 0.25},
    {"sodium", FeatureKind::lab, 139, 4, 0, false, 0.25},
    {"lactate", FeatureKind::lab, 2.0, 0.45, 1.0, true, 0.25},
    {"pt", FeatureKind::lab, 15, 0.2, 0.5, true, 0.25},
    {"aptt", FeatureKind::lab, 35, 0.25, 0.4, true, 0.25},
    {"inr", FeatureKind::lab, 1.3, 0.2, 0.5, true, 0.25},
    {"sao2", FeatureKind::vital, 96, 2.0, -0.5, false, 0.25},
    {"spo2", FeatureKind::vital, 96, 2.0, -0.6, false, 0.25},
    {"pao2", FeatureKind::lab, 100, 25, -0.4, false, 0.25},
    {"paco2", FeatureKind::lab, 40, 7, 0, false, 0.25},
    {"fio2", FeatureKind::lab, 0.45, 0.1, 0.6, false, 0.25},
    {"pf_ratio", FeatureKind::lab, 250, 70, -0.7, false, 0.25},
    {"bun", FeatureKind::lab, 25, 0.5, 0.5, true, 0.25},
    {"creatinine", FeatureKind::lab, 1.4, 0.5, 0.6, true, 0.25},
    {"albumin", FeatureKind::lab, 3.0, 0.5, -0.4, false, 0.25},
    {"aniongap", FeatureKind::lab, 14, 4, 0.6, false, 0.25},
    {"bicarbonate", FeatureKind::lab, 22, 4, -0.7, false, 0.25},
    {"bilirubin", FeatureKind::lab, 1.0, 0.6, 0.4, true, 0.25},
    {"alt", FeatureKind::lab, 40, 0.6, 0, true, 0.25},
    {"ast", FeatureKind::lab, 50, 0.6, 0.3, true, 0.25},
    {"urine_output", FeatureKind::vital, 80, 0.5, -0.7, true, 0.25},
    {"gcs", FeatureKind::vital, 13, 2, -0.7, false, 0.25},
    {"mechvent", FeatureKind::binary, 0, 1, 0.8, false, 0},
};
constexpr int kNamedFeatures = static_cast<int>(std::size(kFeatureTable));

constexpr double kOffsetSd = 0.3;
constexpr double kObservationSd = 0.015;
constexpr double kMechventThreshold = 1.5;
constexpr FeatureModel kAuxiliary{"aux", FeatureKind::vital, 0, 1, 0, false, 0.4};

FeatureModel feature_model(int j) { return j < kNamedFeatures ? kFeatureTable[j] : kAuxiliary; }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

SubgroupPolicy base_policy() {
  SubgroupPolicy p;
  p.fluid = {2.5, 0.9, 0.0, 500.0};
  p.vaso = {3.0, 1.3, 0.0, 0.6};
  return p;
}

double draw_dose(const DrugPolicy& policy, double severity, double policy_noise, double dose_noise, Rng& rng) {
  const double logit = policy.slope * (severity - policy.center) + policy.offset + policy_noise * rng.normal();
  const double noise = rng.normal();
  if (logit <= 0.0) return 0.0;
  return policy.max_dose * sigmoid(logit) * std::exp(dose_noise * noise);
}

std::string pick(const std::vector<std::pair<std::string, double>>& weights, double u) {
  double total = 0.0;
  for (const auto& w : weights) total += w.second;
  double acc = 0.0;
  for (const auto& w : weights) {
    acc += w.second / total;
    if (u < acc) return w.first;
  }
  return weights.back().first;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_patients <= 0) throw ConfigError("n_patients must be positive");
  if (T < 4) throw ConfigError("T must be at least 4");
  if (n_features < 8) throw ConfigError("n_features must be at least 8");
  if (severity.noise_sd < 0) throw ConfigError("noise_sd must be nonnegative");
  if (policy_noise < 0 || dose_noise < 0) throw ConfigError("policy and dose noise must be nonnegative");
  if (female_fraction < 0 || female_fraction > 1) throw ConfigError("female_fraction must lie in [0, 1]");
  if (ethnicity.empty()) throw ConfigError("ethnicity proportions are empty");
  if (disparity_group.attribute != "gender" && disparity_group.attribute != "ethnicity")
    throw ConfigError("disparity group must be a gender or ethnicity subgroup");
}

const SubgroupPolicy& GroundTruth::policy_for(const PatientTrajectory& traj) const {
  const auto it = traj.attributes.find(disparity_group.attribute);
  const bool designated = it != traj.attributes.end() && it->second == disparity_group.value;
  return policies.at(designated ? disparity_group.to_string() : "reference");
}

CohortSchema synth_schema(int n_features) {
  CohortSchema schema;
  for (int j = 0; j < n_features; ++j) {
    const auto f = feature_model(j);
    schema.features.names.push_back(j < kNamedFeatures ? std::string(f.name) : "aux_" + std::to_string(j - kNamedFeatures + 1));
    schema.features.kinds.push_back(f.kind);
    schema.features.log_normalized.push_back(f.log);
  }
  schema.attributes.push_back({"gender", {"F", "M"}});
  AttributeDecl eth{"ethnicity", {}};
  for (const auto& w : SynthConfig{}.ethnicity) eth.values.push_back(w.first);
  schema.attributes.push_back(std::move(eth));
  return schema;
}

double expected_dose(const DrugPolicy& policy, double severity, double policy_noise, double dose_noise) {
  const double mu = policy.slope * (severity - policy.center) + policy.offset;
  const double scale = policy.max_dose * std::exp(0.5 * dose_noise * dose_noise);
  if (policy_noise == 0.0) return mu > 0.0 ? scale * sigmoid(mu) : 0.0;
  // Composite Simpson over the positive part of the logit density.
  const double lo = std::max(0.0, mu - 12.0 * policy_noise);
  const double hi = std::max(lo, mu + 12.0 * policy_noise);
  if (hi <= lo) return 0.0;
  const int n = 4000;
  const double h = (hi - lo) / n;
  const double norm = 1.0 / (policy_noise * std::sqrt(2.0 * std::numbers::pi));
  auto f = [&](double l) {
    const double z = (l - mu) / policy_noise;
    return sigmoid(l) * norm * std::exp(-0.5 * z * z);
  };
  double acc = f(lo) + f(hi);
  for (int k = 1; k < n; ++k) acc += (k % 2 ? 4.0 : 2.0) * f(lo + k * h);
  return scale * acc * h / 3.0;
}

SynthOutput generate(const SynthConfig& config) {
  config.validate();
  const int T = config.T;
  const int m = config.n_features;

  SynthOutput out;
  out.cohort.schema = synth_schema(m);
  // Ethnicity vocabulary follows the configured proportions.
  out.cohort.schema.attributes[1].values.clear();
  for (const auto& w : config.ethnicity) out.cohort.schema.attributes[1].values.push_back(w.first);

  auto& truth = out.truth;
  truth.policy_noise = config.policy_noise;
  truth.dose_noise = config.dose_noise;
  truth.disparity_group = config.disparity_group;
  truth.disparity_delta = config.disparity_delta;
  const SubgroupPolicy reference = base_policy();
  SubgroupPolicy designated = reference;
  designated.vaso.offset -= config.disparity_delta;
  truth.policies["reference"] = reference;
  truth.policies[config.disparity_group.to_string()] = designated;

  const Rng root(config.seed);
  out.cohort.trajectories.resize(config.n_patients);
  truth.severity.resize(config.n_patients);
  for (int i = 0; i < config.n_patients; ++i) {
    const Rng patient = root.derive(static_cast<std::uint64_t>(i));
    Rng attr_rng = patient.derive(3);
    Rng course_rng = patient.derive(0);
    Rng obs_rng = patient.derive(2);
    Rng mort_rng = patient.derive(1);

    PatientTrajectory traj;
    traj.id = std::to_string(i + 1);
    traj.attributes["gender"] = attr_rng.uniform() < config.female_fraction ? "F" : "M";
    traj.attributes["ethnicity"] = pick(config.ethnicity, attr_rng.uniform());
    const SubgroupPolicy& policy = truth.policy_for(traj);

    // latent severity course and expert doses
    const double drive = std::max(0.1, course_rng.normal(1.2, 0.4));
    std::vector<double> severity(T);
    traj.actions.resize(T, 2);
    double sev = std::max(0.0, course_rng.normal(0.4 * drive, 0.1));
    for (int t = 0; t < T; ++t) {
      severity[t] = sev;
      const double fluid = draw_dose(policy.fluid, sev, config.policy_noise, config.dose_noise, course_rng);
      const double vaso = draw_dose(policy.vaso, sev, config.policy_noise, config.dose_noise, course_rng);
      traj.actions(t, 0) = fluid;
      traj.actions(t, 1) = vaso;
      const double target = drive * (t < config.onset ? 1.5 : 0.8);
      const double treated = fluid / policy.fluid.max_dose + vaso / policy.vaso.max_dose;
      sev = config.severity.decay * sev + (1.0 - config.severity.decay) * target -
            config.severity.treatment_effect * treated + config.severity.noise_sd * course_rng.normal();
      sev = std::max(0.0, sev);
    }

    // observed features
    traj.states.resize(T, m);
    const double phase = obs_rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (int j = 0; j < m; ++j) {
      const auto f = feature_model(j);
      const double offset = kOffsetSd * obs_rng.normal();
      const bool demographic = f.kind == FeatureKind::demographic;
      for (int t = 0; t < T; ++t) {
        if (demographic) {
          traj.states(t, j) = f.base + f.scale * offset / kOffsetSd;
          continue;
        }
        const double noise = kObservationSd * obs_rng.normal();
        const double circ = f.circadian * std::sin(2.0 * std::numbers::pi * t / 24.0 + phase + 0.5 * j);
        const double latent = f.loading * severity[t] + offset + noise + circ;
        if (f.kind == FeatureKind::binary) {
          traj.states(t, j) = latent > kMechventThreshold ? 1.0 : 0.0;
        } else if (f.log) {
          traj.states(t, j) = std::exp(std::log(f.base) + f.scale * latent);
        } else {
          traj.states(t, j) = f.base + f.scale * latent;
        }
      }
    }

    // mortality
    const auto death_prob = [&](double s) { return sigmoid(config.mortality_intercept + config.mortality_slope * s); };
    if (config.intermediate_mortality) {
      for (int t = 0; t < T - 1 && !traj.mortality_step; ++t)
        if (mort_rng.uniform() < death_prob(severity[t]) / T) traj.mortality_step = t;
    }
    const double terminal_u = mort_rng.derive(99).uniform();
    if (!traj.mortality_step && terminal_u < death_prob(severity[T - 1])) traj.mortality_step = T - 1;
    traj.outcome_alive = !traj.mortality_step;

    truth.severity[i] = std::move(severity);
    out.cohort.trajectories[i] = std::move(traj);
  }
  out.cohort.splits.assign(out.cohort.size(), Split::unassigned);
  return out;
}

CohortDataset inject_missingness(const CohortDataset& cohort, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw PreconditionError("missingness rate must lie in [0, 1)");
  CohortDataset out = cohort;
  if (rate == 0.0) return out;
  const auto& schema = cohort.schema.features;
  const Rng root(seed);
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng = root.derive(i);
    auto& states = out.trajectories[i].states;
    const Eigen::Index T = states.rows();
    for (Eigen::Index j = 0; j < states.cols(); ++j) {
      if (schema.kinds[j] == FeatureKind::demographic) continue;
      std::vector<Eigen::Index> observed;
      for (Eigen::Index t = 0; t < T; ++t)
        if (!is_missing(states(t, j))) observed.push_back(t);
      if (observed.empty()) continue;
      std::vector<Eigen::Index> kept;
      for (const auto t : observed) {
        if (rng.uniform() < rate)
          states(t, j) = kMissing;
        else
          kept.push_back(t);
      }
      if (kept.empty()) {
        const auto t = observed[rng.below(observed.size())];
        states(t, j) = cohort.trajectories[i].states(t, j);
      }
    }
  }
  return out;
}

}  // namespace cfpolicy
