#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "cfpolicy/divergence.hpp"
#include "cfpolicy/errors.hpp"
#include "cfpolicy/parallel.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cfpolicy;
using nn::Matrix;

namespace {

BcPolicy small_policy(const CohortDataset& cohort, const Subgroup& source, BcMode mode = BcMode::classification) {
  BcHyperparams hp;
  hp.epochs = 3;
  hp.batch = 128;
  hp.lr = 1e-3;
  hp.hidden = {32, 32};
  hp.patience = 0;
  hp.seed = 1;
  return train_bc(cohort, source, mode, hp).policy;
}

std::vector<double> point_mass(int k) {
  std::vector<double> p(kActionClasses, 0.0);
  p[k] = 1.0;
  return p;
}

}  // namespace

TEST_CASE("KL closed forms") {
  const std::vector<double> p{0.5, 0.5, 0.0, 0.0}, q{0.25, 0.75, 0.0, 0.0};
  CHECK(kl_divergence(p, q, 0.0) == doctest::Approx(0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0)).epsilon(1e-12));
  CHECK(kl_divergence(p, q, 0.0) == doctest::Approx(0.1438).epsilon(1e-3));
  CHECK(kl_divergence(p, p) == 0.0);
  const std::vector<double> empty_bin{1.0, 0.0, 0.0, 0.0};
  CHECK(std::isfinite(kl_divergence(p, empty_bin)));
  CHECK_THROWS_AS(kl_divergence(p, std::vector<double>{0.5, 0.6, 0.0, 0.0}), PreconditionError);
}

TEST_CASE("JS closed forms and symmetry") {
  CHECK(js_divergence(point_mass(3), point_mass(7)) == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
  const std::vector<double> p{0.5, 0.5}, q{0.25, 0.75}, m{0.375, 0.625};
  const double direct = 0.5 * kl_divergence(p, m, 0.0) + 0.5 * kl_divergence(q, m, 0.0);
  CHECK(js_divergence(p, q) == doctest::Approx(direct).epsilon(1e-12));
  CHECK(js_divergence(p, p) == 0.0);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto a = oracles::random_simplex(25, rng), b = oracles::random_simplex(25, rng);
    CHECK(std::abs(js_divergence(a, b) - js_divergence(b, a)) <= 1e-12);
    CHECK(js_divergence(a, b) >= 0.0);
    CHECK(js_divergence(a, b) <= std::numbers::ln2);
  }
}

TEST_CASE("metrics match brute-force references") {
  const auto r = oracles::compare_all(200, 77);
  CHECK(r.instances == 200);
  CHECK(r.max_error <= 1e-9);
}

TEST_CASE("smoothed self-divergence is bounded by the smoothing mass") {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto p = oracles::random_simplex(25, rng, 0.6);
    CHECK(kl_divergence(p, p) <= 25 * kDefaultSmoothing);
  }
}

TEST_CASE("MMD hand case and identities") {
  Matrix x(3, 1), y(3, 1);
  x << 0.0, 1.0, 2.0;
  y << 0.5, 1.5, 4.0;
  const double sigma = 1.3;
  double xx = 0, yy = 0, xy = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      xx += std::exp(-std::pow(x(i) - x(j), 2) / (2 * sigma * sigma));
      yy += std::exp(-std::pow(y(i) - y(j), 2) / (2 * sigma * sigma));
      xy += std::exp(-std::pow(x(i) - y(j), 2) / (2 * sigma * sigma));
    }
  CHECK(mmd_rbf(x, y, sigma).value == doctest::Approx(std::sqrt(xx / 9 + yy / 9 - 2 * xy / 9)).epsilon(1e-12));
  CHECK(mmd_rbf(x, x).value == 0.0);

  Matrix same = Matrix::Constant(4, 2, 3.0);
  const auto fb = mmd_rbf(same, same);
  CHECK(fb.fallback);
  CHECK(fb.bandwidth == 1.0);
  CHECK_THROWS_AS(mmd_rbf(Matrix::Zero(1, 1), Matrix::Zero(3, 1)), PreconditionError);
}

TEST_CASE("MMD separates shifted Gaussians") {
  Rng rng(4);
  Matrix x(500, 1), x2(500, 1), y(500, 1);
  for (int i = 0; i < 500; ++i) {
    x(i) = rng.normal();
    x2(i) = rng.normal();
    y(i) = rng.normal(5.0, 1.0);
  }
  CHECK(mmd_rbf(x, y).value >= 10.0 * mmd_rbf(x, x2).value);
}

TEST_CASE("MMD is invariant under permuting samples") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto xs = oracles::random_samples(7, 2, rng), ys = oracles::random_samples(5, 2, rng);
    auto px = xs, py = ys;
    rng.shuffle(px);
    rng.shuffle(py);
    const auto a = mmd_rbf(oracles::to_matrix(xs), oracles::to_matrix(ys));
    const auto b = mmd_rbf(oracles::to_matrix(px), oracles::to_matrix(py));
    CHECK(std::abs(a.value - b.value) <= 1e-12);
    CHECK(a.bandwidth == b.bandwidth);
  }
}

TEST_CASE("Wasserstein closed forms") {
  const std::vector<double> zero{0.0}, one{1.0}, a{0.0, 1.0}, b{0.0, 3.0};
  CHECK(wasserstein1(zero, one) == 1.0);
  CHECK(wasserstein1(a, b) == 1.0);
  CHECK(wasserstein1(a, a) == 0.0);
  const std::vector<double> c{0.0, 1.0, 2.0};
  CHECK(wasserstein1(c, zero) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(wasserstein1(std::vector<double>{}, a), PreconditionError);
}

TEST_CASE("Wasserstein triangle inequality") {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(1 + rng.below(8)), y(1 + rng.below(8)), z(1 + rng.below(8));
    for (auto* v : {&x, &y, &z})
      for (auto& e : *v) e = rng.normal(rng.uniform(-2.0, 2.0), 1.0);
    CHECK(wasserstein1(x, z) <= wasserstein1(x, y) + wasserstein1(y, z) + 1e-9);
    CHECK(std::abs(wasserstein1(x, y) - wasserstein1(y, x)) <= 1e-12);
  }
}

TEST_CASE("label distributions") {
  const std::vector<int> sevens(40, 7);
  const auto d = label_distribution(sevens);
  CHECK(d.probs == point_mass(7));
  CHECK(d.count == 40.0);
  CHECK_THROWS_AS(label_distribution(std::vector<int>{25}), ShapeError);
}

TEST_CASE("action tables use the source statistics") {
  const auto synth = fixtures::small_synth(120, 0.5, 3);
  const SubgroupKey m{"gender", "M"}, f{"gender", "F"};
  auto policy = small_policy(synth.cohort, m);
  const auto target = prepare(filter_subgroup(synth.cohort, f), policy.artifacts, m);
  const auto table = action_table(policy, target);
  std::size_t cells = 0;
  for (const auto& t : target.data.trajectories) cells += static_cast<std::size_t>(t.length());
  REQUIRE(table.size() == cells);
  CHECK(table.patients == target.size());
  for (std::size_t k = 0; k < table.size(); ++k) {
    const auto i = static_cast<std::size_t>(table.patient[k]);
    const auto t = static_cast<std::size_t>(table.timestep[k]);
    CHECK(table.realized[k] == target.labels[i][t]);
    const auto r = static_cast<Eigen::Index>(k);
    CHECK(std::abs(table.probabilities.row(r).sum() - 1.0) < 1e-9);
    CHECK(table.predicted_doses(r, 0) == policy.artifacts.binning.fluid.representative(table.predicted[k] / 5));
  }
}

TEST_CASE("per-timestep pooling yields one distribution per step") {
  const auto synth = fixtures::small_synth(40, 0.0, 3, 72, 10);
  auto policy = small_policy(synth.cohort, std::nullopt);
  const auto prepared = prepare(synth.cohort, policy.artifacts, std::nullopt);
  const auto per_t = empirical_action_dist(policy, prepared, true);
  CHECK(per_t.size() == 72);
  const auto pooled = empirical_action_dist(policy, prepared, false);
  REQUIRE(pooled.size() == 1);
  CHECK(pooled[0].realized.count == 40.0 * 72.0);
  for (const auto& e : per_t) {
    CHECK_NOTHROW(e.realized.validate());
    CHECK_NOTHROW(e.counterfactual.validate());
  }
}

TEST_CASE("identical inputs give zero metrics") {
  const auto synth = fixtures::small_synth(40, 0.0, 3);
  auto policy = small_policy(synth.cohort, std::nullopt);
  const auto prepared = prepare(synth.cohort, policy.artifacts, std::nullopt);
  auto pooled = empirical_action_dist(policy, prepared, false)[0];
  pooled.counterfactual = pooled.realized;
  pooled.counterfactual_argmax = pooled.realized;
  Rng rng(1);
  const auto m = compare(pooled, policy.artifacts.norm, MetricOptions{}, rng);
  CHECK(m.kl == 0.0);
  CHECK(m.js == 0.0);
  CHECK(m.mmd == 0.0);
  CHECK(m.w1_fluid == 0.0);
  CHECK(m.w1_vaso == 0.0);
}

TEST_CASE("counterfactual report: invariants, JSON and CSV") {
  const auto synth = fixtures::small_synth(150, 0.0, 5, 12, 12);
  const SubgroupKey m{"gender", "M"}, f{"gender", "F"};
  auto policy = small_policy(synth.cohort, m);
  ReportOptions opt;
  opt.bootstrap = 20;
  const auto r = counterfactual_report(policy, synth.cohort, f, opt);
  for (const auto* set : {&r.aggregate, &r.control}) {
    CHECK(set->kl >= 0.0);
    CHECK(set->kl_reverse >= 0.0);
    CHECK(set->js >= 0.0);
    CHECK(set->mmd >= 0.0);
    CHECK(set->w1_fluid >= 0.0);
    CHECK(set->w1_vaso >= 0.0);
  }
  CHECK(r.per_timestep.size() == 12);
  CHECK(r.control_per_timestep.size() == 12);
  CHECK(r.kl_bootstrap_sd > 0.0);
  // no planted disparity: the target sits within three bootstrap sd of the control
  CHECK(r.aggregate.kl <= r.control.kl + 3.0 * std::max(r.kl_bootstrap_sd, r.control_kl_bootstrap_sd));

  const Json j = r;
  CHECK(Json::parse(j.dump()).get<DiscrepancyReport>() == r);

  std::ostringstream csv;
  write_metrics_csv(csv, r);
  std::istringstream lines(csv.str());
  std::string line;
  int rows = 0, timestep_rows = 0;
  std::getline(lines, line);
  CHECK(line.rfind("scope,timestep,kl,", 0) == 0);
  while (std::getline(lines, line)) {
    ++rows;
    if (line.rfind("timestep,", 0) == 0) ++timestep_rows;
  }
  CHECK(rows == 2 + 12 + 12);
  CHECK(timestep_rows == 12);

  CHECK_THROWS_AS(counterfactual_report(policy, synth.cohort, m, opt), PreconditionError);
  CHECK_THROWS_AS(counterfactual_report(policy, synth.cohort, SubgroupKey{"gender", "X"}, opt), EmptySubgroupError);
}

TEST_CASE("reports do not depend on the thread count") {
  const auto synth = fixtures::small_synth(80, 0.5, 5, 12, 12);
  auto policy = small_policy(synth.cohort, SubgroupKey{"gender", "M"}, BcMode::regression);
  ReportOptions opt;
  opt.bootstrap = 10;
  set_thread_count(1);
  const auto a = counterfactual_report(policy, synth.cohort, SubgroupKey{"gender", "F"}, opt);
  set_thread_count(3);
  const auto b = counterfactual_report(policy, synth.cohort, SubgroupKey{"gender", "F"}, opt);
  set_thread_count(1);
  CHECK(Json(a).dump() == Json(b).dump());
  CHECK(a.policy_mode == "regression");
}

TEST_CASE("report files") {
  const auto synth = fixtures::small_synth(80, 0.5, 5, 12, 12);
  auto policy = small_policy(synth.cohort, SubgroupKey{"gender", "M"});
  ReportOptions opt;
  opt.bootstrap = 5;
  const auto r = counterfactual_report(policy, synth.cohort, SubgroupKey{"gender", "F"}, opt);
  const auto dir = fixtures::scratch_dir("report_files");
  write_report_files(dir, r);
  for (const char* f : {"report.json", "metrics.csv", "mean_actions.svg", "metric_timestep.svg"})
    CHECK(std::filesystem::file_size(dir / f) > 0);
  CHECK(fixtures::slurp(dir / "mean_actions.svg").rfind("<svg", 0) == 0);
}
