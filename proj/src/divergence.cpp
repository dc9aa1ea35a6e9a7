#include "cfpolicy/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "cfpolicy/errors.hpp"
#include "cfpolicy/parallel.hpp"
#include "cfpolicy/svg.hpp"

namespace cfpolicy {

using nn::Matrix;

namespace {

void check_simplex(std::span<const double> p, const char* name) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw PreconditionError(std::string(name) + " has a negative or non-finite entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw PreconditionError(std::string(name) + " does not sum to 1");
}

}  // namespace

double kl_divergence(std::span<const double> p, std::span<const double> q, double eps) {
  if (p.size() != q.size() || p.empty()) throw PreconditionError("KL needs two distributions over the same support");
  if (!(eps >= 0.0)) throw PreconditionError("smoothing must be >= 0");
  check_simplex(p, "p");
  check_simplex(q, "q");
  const double norm = 1.0 + static_cast<double>(p.size()) * eps;
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = (p[i] + eps) / norm;
    const double b = (q[i] + eps) / norm;
    if (a == 0.0) continue;
    total += a * std::log(a / b);
  }
  return std::max(total, 0.0);
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw PreconditionError("JS needs two distributions over the same support");
  check_simplex(p, "p");
  check_simplex(q, "q");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) total += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) total += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::clamp(total, 0.0, std::numbers::ln2);
}

namespace {

double sq_dist(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

double mean_kernel(const Matrix& a, const Matrix& b, double gamma) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) total += std::exp(-gamma * sq_dist(a, i, b, j));
  return total / static_cast<double>(a.rows() * b.rows());
}

double median_pairwise_distance(const Matrix& x, const Matrix& y) {
  Matrix pooled(x.rows() + y.rows(), x.cols());
  pooled << x, y;
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < pooled.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pooled.rows(); ++j) d.push_back(std::sqrt(sq_dist(pooled, i, pooled, j)));
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  const double upper = d[mid];
  if (d.size() % 2 == 1) return upper;
  const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace

MmdResult mmd_rbf(const Matrix& x, const Matrix& y, std::optional<double> bandwidth) {
  if (x.rows() < 2 || y.rows() < 2) throw PreconditionError("MMD needs at least two samples on each side");
  if (x.cols() != y.cols()) throw ShapeError("MMD samples differ in dimension");
  if (!x.allFinite() || !y.allFinite()) throw DomainError("MMD samples must be finite");
  MmdResult r;
  if (bandwidth) {
    if (!(*bandwidth > 0.0)) throw PreconditionError("MMD bandwidth must be positive");
    r.bandwidth = *bandwidth;
  } else {
    r.bandwidth = median_pairwise_distance(x, y);
    if (!(r.bandwidth > 0.0)) {
      r.bandwidth = 1.0;
      r.fallback = true;
    }
  }
  const double gamma = 1.0 / (2.0 * r.bandwidth * r.bandwidth);
  const double mmd2 = mean_kernel(x, x, gamma) + mean_kernel(y, y, gamma) - 2.0 * mean_kernel(x, y, gamma);
  r.value = std::sqrt(std::max(mmd2, 0.0));
  return r;
}

MmdResult mmd_rbf(std::span<const double> x, std::span<const double> y, std::optional<double> bandwidth) {
  const Matrix a = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  const Matrix b = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  return mmd_rbf(a, b, bandwidth);
}

double wasserstein1(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw PreconditionError("Wasserstein distance needs non-empty samples");
  std::vector<double> a(x.begin(), x.end());
  std::vector<double> b(y.begin(), y.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  // Quantile functions are step functions with jumps at i/n and j/m; walk
  // their union in integer units of 1/(n m).
  const auto n = a.size();
  const auto m = b.size();
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t pos = 0;
  double total = 0.0;
  while (i < n && j < m) {
    const std::size_t next_a = (i + 1) * m;
    const std::size_t next_b = (j + 1) * n;
    const std::size_t next = std::min(next_a, next_b);
    total += static_cast<double>(next - pos) * std::abs(a[i] - b[j]);
    pos = next;
    if (next_a == next) ++i;
    if (next_b == next) ++j;
  }
  return total / static_cast<double>(n * m);
}

// ---------------------------------------------------------------------------

void ActionDistribution::validate() const {
  if (probs.size() != static_cast<std::size_t>(kActionClasses)) throw ShapeError("action distribution needs 25 classes");
  if (count < 0.0) throw PreconditionError("negative sample count");
  if (count > 0.0) check_simplex(probs, "action distribution");
}

ActionDistribution label_distribution(std::span<const int> labels) {
  ActionDistribution d;
  for (int l : labels) {
    if (l < 0 || l >= kActionClasses) throw ShapeError("action class out of range");
    d.probs[l] += 1.0;
  }
  d.count = static_cast<double>(labels.size());
  if (d.count > 0.0)
    for (auto& p : d.probs) p /= d.count;
  return d;
}

namespace {

Eigen::RowVector2d representative(const ActionBinning& binning, int label) {
  return {binning.fluid.representative(label / kBinsPerDrug), binning.vaso.representative(label % kBinsPerDrug)};
}

}  // namespace

ActionTable action_table(BcPolicy& policy, const PreparedCohort& data) {
  if (data.size() == 0) throw EmptySubgroupError("no trajectories to evaluate");
  ActionTable table;
  table.classification = policy.mode == BcMode::classification;
  table.patients = data.size();
  const auto& binning = policy.artifacts.binning;
  const auto& norm = policy.artifacts.norm;

  std::size_t rows = 0;
  for (const auto& traj : data.data.trajectories) {
    rows += static_cast<std::size_t>(traj.length());
    table.horizon = std::max(table.horizon, traj.length());
  }
  const auto N = static_cast<Eigen::Index>(rows);
  table.realized_doses.resize(N, kActionDims);
  table.probabilities = Matrix::Zero(N, kActionClasses);
  table.predicted_doses.resize(N, kActionDims);
  table.recorded_doses.resize(N, kActionDims);
  table.expected_doses.resize(N, kActionDims);

  Matrix reps(kActionClasses, kActionDims);
  for (int k = 0; k < kActionClasses; ++k) reps.row(k) = representative(binning, k);

  Eigen::Index r = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& traj = data.data.trajectories[i];
    const auto pred = predict_trajectory(policy, traj);
    for (int t = 0; t < traj.length(); ++t, ++r) {
      const int realized = data.labels[i][t];
      table.patient.push_back(static_cast<int>(i));
      table.timestep.push_back(t);
      table.realized.push_back(realized);
      table.recorded_doses.row(r) = data.raw_actions[i].row(t);
      if (table.classification) {
        const int label = pred.labels[t];
        table.predicted.push_back(label);
        table.probabilities.row(r) = pred.values.row(t);
        table.realized_doses.row(r) = reps.row(realized);
        table.predicted_doses.row(r) = reps.row(label);
        table.expected_doses.row(r) = pred.values.row(t) * reps;
      } else {
        const double fluid = std::max(0.0, norm.actions[0].inverse(pred.values(t, 0)));
        const double vaso = std::max(0.0, norm.actions[1].inverse(pred.values(t, 1)));
        const int label = bin_action(fluid, vaso, binning);
        table.predicted.push_back(label);
        table.probabilities(r, label) = 1.0;
        table.realized_doses.row(r) = data.raw_actions[i].row(t);
        table.predicted_doses.row(r) << fluid, vaso;
        table.expected_doses.row(r) << fluid, vaso;
      }
    }
  }
  return table;
}

namespace {

EmpiricalActions pool(const ActionTable& table, const std::vector<Eigen::Index>& rows) {
  EmpiricalActions e;
  std::vector<int> realized;
  std::vector<int> predicted;
  for (auto r : rows) {
    realized.push_back(table.realized[r]);
    predicted.push_back(table.predicted[r]);
  }
  e.realized = label_distribution(realized);
  e.counterfactual_argmax = label_distribution(predicted);
  e.counterfactual.count = static_cast<double>(rows.size());
  for (auto r : rows) {
    for (int k = 0; k < kActionClasses; ++k) e.counterfactual.probs[k] += table.probabilities(r, k);
    e.realized.fluid.push_back(table.realized_doses(r, 0));
    e.realized.vaso.push_back(table.realized_doses(r, 1));
    e.counterfactual_argmax.fluid.push_back(table.predicted_doses(r, 0));
    e.counterfactual_argmax.vaso.push_back(table.predicted_doses(r, 1));
    e.counterfactual.fluid.push_back(table.expected_doses(r, 0));
    e.counterfactual.vaso.push_back(table.expected_doses(r, 1));
  }
  if (!rows.empty()) {
    // Renormalize the summed probabilities so rounding cannot break the simplex check.
    const double sum = std::accumulate(e.counterfactual.probs.begin(), e.counterfactual.probs.end(), 0.0);
    for (auto& p : e.counterfactual.probs) p /= sum;
  }
  return e;
}

}  // namespace

std::vector<EmpiricalActions> empirical_action_dist(const ActionTable& table, bool per_timestep) {
  if (table.size() == 0) throw EmptySubgroupError("no actions to pool");
  std::vector<EmpiricalActions> out;
  if (!per_timestep) {
    std::vector<Eigen::Index> rows(table.size());
    std::iota(rows.begin(), rows.end(), Eigen::Index{0});
    out.push_back(pool(table, rows));
    return out;
  }
  std::vector<std::vector<Eigen::Index>> by_t(static_cast<std::size_t>(table.horizon));
  for (std::size_t r = 0; r < table.size(); ++r) by_t[table.timestep[r]].push_back(static_cast<Eigen::Index>(r));
  for (const auto& rows : by_t) out.push_back(pool(table, rows));
  return out;
}

std::vector<EmpiricalActions> empirical_action_dist(BcPolicy& policy, const PreparedCohort& data, bool per_timestep) {
  return empirical_action_dist(action_table(policy, data), per_timestep);
}

namespace {

// Up to `cap` rows of doses in normalized units, subsampled without replacement.
Matrix dose_sample(const ActionDistribution& d, const NormStats& norm, std::size_t cap, Rng& rng) {
  std::vector<std::size_t> idx(d.fluid.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (idx.size() > cap) {
    rng.shuffle(idx);
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
  }
  Matrix out(static_cast<Eigen::Index>(idx.size()), kActionDims);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out(static_cast<Eigen::Index>(k), 0) = norm.actions[0].transform(d.fluid[idx[k]]);
    out(static_cast<Eigen::Index>(k), 1) = norm.actions[1].transform(d.vaso[idx[k]]);
  }
  return out;
}

}  // namespace

MetricSet compare(const EmpiricalActions& a, const NormStats& norm, const MetricOptions& options, Rng& rng,
                  int* fallbacks) {
  MetricSet m;
  m.samples = static_cast<std::size_t>(a.realized.count);
  if (m.samples == 0) return m;
  m.kl = kl_divergence(a.realized.probs, a.counterfactual.probs, options.epsilon);
  m.kl_reverse = kl_divergence(a.counterfactual.probs, a.realized.probs, options.epsilon);
  m.js = js_divergence(a.realized.probs, a.counterfactual.probs);
  m.kl_argmax = kl_divergence(a.realized.probs, a.counterfactual_argmax.probs, options.epsilon);
  m.js_argmax = js_divergence(a.realized.probs, a.counterfactual_argmax.probs);
  m.w1_fluid = wasserstein1(a.realized.fluid, a.counterfactual_argmax.fluid);
  m.w1_vaso = wasserstein1(a.realized.vaso, a.counterfactual_argmax.vaso);
  if (m.samples >= 2) {
    Rng sub = rng.derive(1);
    const Matrix x = dose_sample(a.realized, norm, options.mmd_cap, sub);
    const Matrix y = dose_sample(a.counterfactual_argmax, norm, options.mmd_cap, sub);
    const auto r = mmd_rbf(x, y);
    m.mmd = r.value;
    m.mmd_bandwidth = r.bandwidth;
    if (r.fallback && fallbacks) ++*fallbacks;
  }
  return m;
}

MeanActionSeries mean_action_series(const ActionTable& table, const std::string& subgroup, const std::string& role) {
  MeanActionSeries s;
  s.subgroup = subgroup;
  s.role = role;
  const auto H = static_cast<std::size_t>(table.horizon);
  std::vector<double> n(H, 0.0);
  s.realized_fluid.assign(H, 0.0);
  s.realized_vaso.assign(H, 0.0);
  s.counterfactual_fluid.assign(H, 0.0);
  s.counterfactual_vaso.assign(H, 0.0);
  for (std::size_t r = 0; r < table.size(); ++r) {
    const auto t = static_cast<std::size_t>(table.timestep[r]);
    const auto row = static_cast<Eigen::Index>(r);
    n[t] += 1.0;
    s.realized_fluid[t] += table.recorded_doses(row, 0);
    s.realized_vaso[t] += table.recorded_doses(row, 1);
    s.counterfactual_fluid[t] += table.expected_doses(row, 0);
    s.counterfactual_vaso[t] += table.expected_doses(row, 1);
  }
  for (std::size_t t = 0; t < H; ++t) {
    s.realized_fluid[t] /= n[t];
    s.realized_vaso[t] /= n[t];
    s.counterfactual_fluid[t] /= n[t];
    s.counterfactual_vaso[t] /= n[t];
  }
  return s;
}

namespace {

// Sample sd of the pooled KL over patient-level bootstrap resamples.
double bootstrap_kl_sd(const ActionTable& table, int draws, double eps, Rng rng) {
  if (draws < 2) return 0.0;
  const std::size_t P = table.patients;
  Matrix counts = Matrix::Zero(static_cast<Eigen::Index>(P), kActionClasses);
  Matrix probs = Matrix::Zero(static_cast<Eigen::Index>(P), kActionClasses);
  for (std::size_t r = 0; r < table.size(); ++r) {
    counts(table.patient[r], table.realized[r]) += 1.0;
    probs.row(table.patient[r]) += table.probabilities.row(static_cast<Eigen::Index>(r));
  }
  std::vector<double> values;
  for (int b = 0; b < draws; ++b) {
    Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(kActionClasses);
    Eigen::RowVectorXd q = Eigen::RowVectorXd::Zero(kActionClasses);
    for (std::size_t k = 0; k < P; ++k) {
      const auto i = static_cast<Eigen::Index>(rng.below(P));
      c += counts.row(i);
      q += probs.row(i);
    }
    c /= c.sum();
    q /= q.sum();
    const std::vector<double> pv(c.data(), c.data() + c.size());
    const std::vector<double> qv(q.data(), q.data() + q.size());
    values.push_back(kl_divergence(pv, qv, eps));
  }
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

double per_state_kl(const ActionTable& table, double eps) {
  if (table.size() == 0) return 0.0;
  std::vector<double> onehot(kActionClasses, 0.0);
  std::vector<double> q(kActionClasses);
  double total = 0.0;
  for (std::size_t r = 0; r < table.size(); ++r) {
    onehot[table.realized[r]] = 1.0;
    const auto row = static_cast<Eigen::Index>(r);
    double sum = 0.0;
    for (int k = 0; k < kActionClasses; ++k) sum += q[k] = table.probabilities(row, k);
    for (auto& v : q) v /= sum;
    total += kl_divergence(onehot, q, eps);
    onehot[table.realized[r]] = 0.0;
  }
  return total / static_cast<double>(table.size());
}

std::vector<MetricSet> per_timestep_metrics(const ActionTable& table, const NormStats& norm, const MetricOptions& opt,
                                            const Rng& rng, int& fallbacks) {
  const auto dists = empirical_action_dist(table, true);
  std::vector<MetricSet> out(dists.size());
  std::vector<int> fb(dists.size(), 0);
  parallel_for(dists.size(), [&](std::size_t t) {
    Rng cell = rng.derive(t);
    out[t] = compare(dists[t], norm, opt, cell, &fb[t]);
  });
  fallbacks += std::accumulate(fb.begin(), fb.end(), 0);
  return out;
}

PreparedCohort split_for(const CohortDataset& cohort, const Subgroup& group, const BcPolicy& policy, Split split) {
  const auto sub = filter_subgroup(cohort, group);
  auto prepared = select_split(prepare(sub, policy.artifacts, policy.source), split);
  if (prepared.size() == 0)
    throw EmptySubgroupError("subgroup " + subgroup_label(group) + " has no " + to_string(split) + "-split trajectories");
  return prepared;
}

}  // namespace

DiscrepancyReport counterfactual_report(BcPolicy& policy, const CohortDataset& cohort, const Subgroup& target,
                                        const ReportOptions& options) {
  if (target == policy.source)
    throw PreconditionError("target subgroup equals the policy's source; the self-comparison is the control");
  if (!(options.epsilon >= 0.0)) throw PreconditionError("smoothing must be >= 0");
  if (options.bootstrap < 0) throw PreconditionError("bootstrap count must be >= 0");

  const ActionTable tgt = action_table(policy, split_for(cohort, target, policy, options.split));
  const ActionTable ctl = action_table(policy, split_for(cohort, policy.source, policy, options.split));
  const NormStats& norm = policy.artifacts.norm;
  const MetricOptions mo{options.epsilon, options.mmd_cap};
  const Rng rng(options.seed);

  DiscrepancyReport r;
  r.source = policy.source;
  r.target = target;
  r.policy_mode = to_string(policy.mode);
  r.epsilon = options.epsilon;
  r.seed = options.seed;
  r.bootstrap = options.bootstrap;
  r.split = to_string(options.split);
  r.target_patients = tgt.patients;
  r.control_patients = ctl.patients;

  Rng a = rng.derive(1), b = rng.derive(2);
  r.aggregate = compare(empirical_action_dist(tgt, false).front(), norm, mo, a, &r.bandwidth_fallbacks);
  r.control = compare(empirical_action_dist(ctl, false).front(), norm, mo, b, &r.bandwidth_fallbacks);
  r.kl_bootstrap_sd = bootstrap_kl_sd(tgt, options.bootstrap, options.epsilon, rng.derive(3));
  r.control_kl_bootstrap_sd = bootstrap_kl_sd(ctl, options.bootstrap, options.epsilon, rng.derive(4));
  r.per_state_kl = per_state_kl(tgt, options.epsilon);
  r.control_per_state_kl = per_state_kl(ctl, options.epsilon);
  if (options.per_timestep) {
    r.per_timestep = per_timestep_metrics(tgt, norm, mo, rng.derive(5), r.bandwidth_fallbacks);
    r.control_per_timestep = per_timestep_metrics(ctl, norm, mo, rng.derive(6), r.bandwidth_fallbacks);
  }
  r.mean_actions.push_back(mean_action_series(tgt, subgroup_label(target), "target"));
  r.mean_actions.push_back(mean_action_series(ctl, subgroup_label(policy.source), "control"));
  if (r.bandwidth_fallbacks > 0)
    r.warnings.push_back("MMD bandwidth fell back to 1.0 in " + std::to_string(r.bandwidth_fallbacks) +
                         " cells (zero median pairwise distance)");
  return r;
}

// ---------------------------------------------------------------------------

void to_json(Json& j, const MetricSet& m) {
  j = {{"kl", m.kl},
       {"kl_reverse", m.kl_reverse},
       {"js", m.js},
       {"kl_argmax", m.kl_argmax},
       {"js_argmax", m.js_argmax},
       {"mmd", m.mmd},
       {"w1_fluid", m.w1_fluid},
       {"w1_vaso", m.w1_vaso},
       {"mmd_bandwidth", m.mmd_bandwidth},
       {"samples", m.samples}};
}

void from_json(const Json& j, MetricSet& m) {
  m.kl = j.at("kl").get<double>();
  m.kl_reverse = j.at("kl_reverse").get<double>();
  m.js = j.at("js").get<double>();
  m.kl_argmax = j.at("kl_argmax").get<double>();
  m.js_argmax = j.at("js_argmax").get<double>();
  m.mmd = j.at("mmd").get<double>();
  m.w1_fluid = j.at("w1_fluid").get<double>();
  m.w1_vaso = j.at("w1_vaso").get<double>();
  m.mmd_bandwidth = j.at("mmd_bandwidth").get<double>();
  m.samples = j.at("samples").get<std::size_t>();
}

namespace {

Json series_to_json(const MeanActionSeries& s) {
  return {{"subgroup", s.subgroup},
          {"role", s.role},
          {"realized_fluid", s.realized_fluid},
          {"realized_vaso", s.realized_vaso},
          {"counterfactual_fluid", s.counterfactual_fluid},
          {"counterfactual_vaso", s.counterfactual_vaso}};
}

MeanActionSeries series_from_json(const Json& j) {
  MeanActionSeries s;
  s.subgroup = j.at("subgroup").get<std::string>();
  s.role = j.at("role").get<std::string>();
  s.realized_fluid = j.at("realized_fluid").get<std::vector<double>>();
  s.realized_vaso = j.at("realized_vaso").get<std::vector<double>>();
  s.counterfactual_fluid = j.at("counterfactual_fluid").get<std::vector<double>>();
  s.counterfactual_vaso = j.at("counterfactual_vaso").get<std::vector<double>>();
  return s;
}

}  // namespace

void to_json(Json& j, const DiscrepancyReport& r) {
  Json series = Json::array();
  for (const auto& s : r.mean_actions) series.push_back(series_to_json(s));
  j = {{"format", "discrepancy-report"},
       {"version", 1},
       {"source_subgroup", subgroup_to_json(r.source)},
       {"target_subgroup", subgroup_to_json(r.target)},
       {"policy_mode", r.policy_mode},
       {"kl_direction", "realized||counterfactual"},
       {"epsilon", r.epsilon},
       {"seed", r.seed},
       {"bootstrap", r.bootstrap},
       {"split", r.split},
       {"target_patients", r.target_patients},
       {"control_patients", r.control_patients},
       {"aggregate", r.aggregate},
       {"control", r.control},
       {"kl_bootstrap_sd", r.kl_bootstrap_sd},
       {"control_kl_bootstrap_sd", r.control_kl_bootstrap_sd},
       {"per_state_kl", r.per_state_kl},
       {"control_per_state_kl", r.control_per_state_kl},
       {"per_timestep", r.per_timestep},
       {"control_per_timestep", r.control_per_timestep},
       {"mean_actions", series},
       {"bandwidth_fallbacks", r.bandwidth_fallbacks},
       {"warnings", r.warnings}};
}

void from_json(const Json& j, DiscrepancyReport& r) {
  if (j.value("format", std::string()) != "discrepancy-report") throw SchemaError("not a discrepancy report");
  r.source = subgroup_from_json(j.at("source_subgroup"));
  r.target = subgroup_from_json(j.at("target_subgroup"));
  r.policy_mode = j.at("policy_mode").get<std::string>();
  r.epsilon = j.at("epsilon").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.bootstrap = j.at("bootstrap").get<int>();
  r.split = j.at("split").get<std::string>();
  r.target_patients = j.at("target_patients").get<std::size_t>();
  r.control_patients = j.at("control_patients").get<std::size_t>();
  r.aggregate = j.at("aggregate").get<MetricSet>();
  r.control = j.at("control").get<MetricSet>();
  r.kl_bootstrap_sd = j.at("kl_bootstrap_sd").get<double>();
  r.control_kl_bootstrap_sd = j.at("control_kl_bootstrap_sd").get<double>();
  r.per_state_kl = j.at("per_state_kl").get<double>();
  r.control_per_state_kl = j.at("control_per_state_kl").get<double>();
  r.per_timestep = j.at("per_timestep").get<std::vector<MetricSet>>();
  r.control_per_timestep = j.at("control_per_timestep").get<std::vector<MetricSet>>();
  r.mean_actions.clear();
  for (const auto& s : j.at("mean_actions")) r.mean_actions.push_back(series_from_json(s));
  r.bandwidth_fallbacks = j.at("bandwidth_fallbacks").get<int>();
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
}

namespace {

void metric_row(std::ostream& out, const std::string& scope, const std::string& t, const MetricSet& m) {
  out << scope << ',' << t;
  for (double v : {m.kl, m.kl_reverse, m.js, m.kl_argmax, m.js_argmax, m.mmd, m.w1_fluid, m.w1_vaso})
    out << ',' << format_double(v);
  out << ',' << m.samples << '\n';
}

}  // namespace

void write_metrics_csv(std::ostream& out, const DiscrepancyReport& report) {
  out << "scope,timestep,kl,kl_reverse,js,kl_argmax,js_argmax,mmd,w1_fluid,w1_vaso,samples\n";
  metric_row(out, "aggregate", "", report.aggregate);
  metric_row(out, "control", "", report.control);
  for (std::size_t t = 0; t < report.per_timestep.size(); ++t)
    metric_row(out, "timestep", std::to_string(t), report.per_timestep[t]);
  for (std::size_t t = 0; t < report.control_per_timestep.size(); ++t)
    metric_row(out, "control_timestep", std::to_string(t), report.control_per_timestep[t]);
}

void write_report_files(const std::filesystem::path& dir, const DiscrepancyReport& report) {
  std::filesystem::create_directories(dir);
  write_json(dir / "report.json", Json(report));
  {
    std::ofstream csv(dir / "metrics.csv");
    if (!csv) throw Error("cannot write " + (dir / "metrics.csv").string());
    write_metrics_csv(csv, report);
  }

  std::vector<LineChart> actions;
  for (const char* drug : {"fluid", "vaso"}) {
    LineChart c;
    c.title = std::string("Mean ") + (drug[0] == 'f' ? "fluid" : "vasopressor") + " dose per timestep";
    c.x_label = "timestep";
    c.y_label = "dose (raw units)";
    for (const auto& s : report.mean_actions) {
      const bool fluid = drug[0] == 'f';
      c.series.push_back({s.subgroup + " realized", fluid ? s.realized_fluid : s.realized_vaso, false});
      c.series.push_back({s.subgroup + " policy", fluid ? s.counterfactual_fluid : s.counterfactual_vaso, true});
    }
    actions.push_back(std::move(c));
  }
  std::ofstream(dir / "mean_actions.svg") << render_svg(actions);
  if (report.per_timestep.empty()) return;

  LineChart kl;
  kl.title = "KL(realized || counterfactual) per timestep";
  kl.x_label = "timestep";
  kl.y_label = "nats";
  ChartSeries target{"target " + subgroup_label(report.target), {}, false};
  ChartSeries control{"control " + subgroup_label(report.source), {}, true};
  for (const auto& m : report.per_timestep) target.y.push_back(m.kl);
  for (const auto& m : report.control_per_timestep) control.y.push_back(m.kl);
  kl.series = {target, control};
  std::ofstream(dir / "metric_timestep.svg") << render_svg(kl);
}

}  // namespace cfpolicy
