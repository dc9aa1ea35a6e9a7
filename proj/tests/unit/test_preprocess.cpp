#include <doctest.h>

#include <cmath>

#include "cfpolicy/errors.hpp"
#include "cfpolicy/preprocess.hpp"
#include "cfpolicy/rng.hpp"
#include "fixtures.hpp"

using namespace cfpolicy;

namespace {

CohortSchema single_feature(bool log_flag = false) {
  CohortSchema s;
  s.features.names = {"x"};
  s.features.kinds = {FeatureKind::lab};
  s.features.log_normalized = {log_flag};
  return s;
}

// One trajectory per value block, every trajectory in train.
CohortDataset column_cohort(const std::vector<double>& xs, bool log_flag = false) {
  CohortDataset c;
  c.schema = single_feature(log_flag);
  PatientTrajectory p;
  p.id = "1";
  p.states.resize(static_cast<Eigen::Index>(xs.size()), 1);
  p.actions = ActionMatrix::Zero(static_cast<Eigen::Index>(xs.size()), 2);
  for (std::size_t i = 0; i < xs.size(); ++i) p.states(static_cast<Eigen::Index>(i), 0) = xs[i];
  c.trajectories.push_back(p);
  c.splits = {Split::train};
  return c;
}

CohortDataset dose_cohort(const std::vector<double>& fluid, const std::vector<double>& vaso) {
  CohortDataset c;
  c.schema = single_feature();
  PatientTrajectory p;
  p.id = "1";
  const auto n = static_cast<Eigen::Index>(std::max(fluid.size(), vaso.size()));
  p.states = RowMatrix::Zero(n, 1);
  p.actions = ActionMatrix::Zero(n, 2);
  for (std::size_t i = 0; i < fluid.size(); ++i) p.actions(static_cast<Eigen::Index>(i), 0) = fluid[i];
  for (std::size_t i = 0; i < vaso.size(); ++i) p.actions(static_cast<Eigen::Index>(i), 1) = vaso[i];
  c.trajectories.push_back(p);
  c.splits = {Split::train};
  return c;
}

PatientTrajectory series(std::vector<double> xs) {
  PatientTrajectory p;
  p.id = "s";
  p.states.resize(static_cast<Eigen::Index>(xs.size()), 1);
  p.actions = ActionMatrix::Zero(static_cast<Eigen::Index>(xs.size()), 2);
  for (std::size_t i = 0; i < xs.size(); ++i) p.states(static_cast<Eigen::Index>(i), 0) = xs[i];
  return p;
}

NormStats stats_with_mean(double mean) {
  NormStats s;
  s.features = {FeatureStats{mean, 1.0, false, false}};
  return s;
}

}  // namespace

TEST_CASE("population statistics") {
  const auto s = fit_norm_stats(column_cohort({1, 2, 3}));
  CHECK(s.features[0].mean == doctest::Approx(2.0));
  CHECK(s.features[0].stddev == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-12));
}

TEST_CASE("constant feature normalizes to zero") {
  const auto s = fit_norm_stats(column_cohort({5, 5, 5}));
  CHECK(s.features[0].stddev == 0.0);
  CHECK(s.features[0].transform(5.0) == 0.0);
  CHECK(s.features[0].transform(7.0) == 0.0);
}

TEST_CASE("log-flagged feature uses ln(1 + x)") {
  const auto s = fit_norm_stats(column_cohort({0.0, std::exp(1.0) - 1.0}, true));
  CHECK(s.features[0].mean == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.features[0].stddev == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("feature without observations") {
  CHECK_THROWS_AS(fit_norm_stats(column_cohort({kMissing, kMissing})), MissingFeatureError);
}

TEST_CASE("centering and scaling") {
  const FeatureStats s{3.0, 2.0, false, false};
  CHECK(s.transform(3.0) == 0.0);
  CHECK(s.transform(5.0) == 1.0);
  const FeatureStats bin{0.5, 0.5, false, true};
  CHECK(bin.transform(1.0) == 1.0);
}

TEST_CASE("normalized train split is centered") {
  const auto synth = fixtures::small_synth(60, 0.0, 5);
  const auto prepared = prepare(synth.cohort, fit_preprocessing(synth.cohort), std::nullopt);
  const int m = prepared.data.schema.features.size();
  for (int j = 0; j < m; ++j) {
    if (prepared.data.schema.features.kinds[j] == FeatureKind::binary) continue;
    // the mean is taken over observed cells only, so recompute on the raw observed cells
    double sum = 0.0;
    double n = 0.0;
    for (auto i : synth.cohort.indices(Split::train)) {
      const auto& raw = synth.cohort.trajectories[i].states;
      for (Eigen::Index t = 0; t < raw.rows(); ++t)
        if (!is_missing(raw(t, j))) {
          sum += prepared.artifacts.norm.features[j].transform(raw(t, j));
          n += 1.0;
        }
    }
    CHECK(std::abs(sum / n) < 1e-9);
  }
}

TEST_CASE("apply_norm then invert_norm recovers observed values") {
  auto synth = fixtures::small_synth(40, 0.0, 9);
  synth.cohort = inject_missingness(synth.cohort, 0.2, 4);
  const auto stats = fit_norm_stats(synth.cohort);
  for (const auto& traj : synth.cohort.trajectories) {
    const auto back = invert_norm(apply_norm(traj, stats), stats);
    for (Eigen::Index t = 0; t < traj.states.rows(); ++t)
      for (Eigen::Index j = 0; j < traj.states.cols(); ++j) {
        const double v = traj.states(t, j);
        if (is_missing(v)) {
          CHECK(is_missing(back.states(t, j)));
        } else if (stats.features[j].stddev > 0.0) {
          CHECK(std::abs(back.states(t, j) - v) <= 1e-9 * std::max(1.0, std::abs(v)));
        }
      }
    CHECK(((back.actions - traj.actions).array().abs() <= 1e-9 * (1.0 + traj.actions.array().abs())).all());
  }
}

TEST_CASE("impute: interior gaps interpolate linearly") {
  const auto out = impute(series({kMissing, kMissing, 1.0, kMissing, kMissing, 4.0}), stats_with_mean(9.0));
  CHECK(out.states(3, 0) == doctest::Approx(2.0));
  CHECK(out.states(4, 0) == doctest::Approx(3.0));
}

TEST_CASE("impute: leading gap takes the mean, trailing gap carries forward") {
  std::vector<double> xs(72, kMissing);
  xs[10] = 2.0;
  xs[69] = 7.0;
  const auto out = impute(series(xs), stats_with_mean(9.0));
  CHECK(out.states(0, 0) == 9.0);
  CHECK(out.states(9, 0) == 9.0);
  CHECK(out.states(70, 0) == 7.0);
  CHECK(out.states(71, 0) == 7.0);
}

TEST_CASE("impute: unobserved feature is the mean everywhere") {
  const auto out = impute(series({kMissing, kMissing, kMissing}), stats_with_mean(3.3));
  for (int t = 0; t < 3; ++t) CHECK(out.states(t, 0) == 3.3);
}

TEST_CASE("impute is idempotent and leaves no missing cells") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> xs(20);
    for (auto& x : xs) x = rng.bernoulli(0.5) ? kMissing : rng.normal();
    const auto once = impute(series(xs), stats_with_mean(rng.normal()));
    const auto twice = impute(once, stats_with_mean(123.0));
    CHECK_FALSE(once.states.array().isNaN().any());
    CHECK(once.states == twice.states);
  }
}

TEST_CASE("norepinephrine equivalents") {
  CHECK(norepi_equivalent(Vasopressor::phenylephrine, 50).value == 5.0);
  CHECK(norepi_equivalent(Vasopressor::norepinephrine, 3).value == 3.0);
  CHECK(norepi_equivalent(Vasopressor::vasopressin, 2).value == 5.0);
  CHECK(norepi_equivalent(Vasopressor::dopamine, 300).value == 3.0);
  const auto d = norepi_equivalent(Vasopressor::dobutamine, 4);
  CHECK(d.value == 4.0);
  CHECK(d.unconverted);
  CHECK_FALSE(norepi_equivalent(Vasopressor::vasopressin, 2).unconverted);
  CHECK_THROWS_AS(norepi_equivalent(Vasopressor::norepinephrine, -1.0), DomainError);
}

TEST_CASE("norepinephrine equivalence is linear") {
  Rng rng(2);
  for (auto drug : {Vasopressor::norepinephrine, Vasopressor::phenylephrine, Vasopressor::dopamine,
                    Vasopressor::vasopressin, Vasopressor::milrinone}) {
    for (int k = 0; k < 20; ++k) {
      const double dose = rng.uniform(0.0, 50.0);
      const double a = rng.uniform(0.0, 4.0);
      CHECK(norepi_equivalent(drug, a * dose).value ==
            doctest::Approx(a * norepi_equivalent(drug, dose).value).epsilon(1e-12));
    }
  }
}

TEST_CASE("quantile_linear matches the (n - 1) p interpolation") {
  const std::vector<double> xs{1, 2, 3, 4, 5, 6, 7, 8};
  CHECK(quantile_linear(xs, 0.25) == 2.75);
  CHECK(quantile_linear(xs, 0.5) == 4.5);
  CHECK(quantile_linear(xs, 0.75) == 6.25);
  CHECK(quantile_linear(xs, 0.0) == 1.0);
  CHECK(quantile_linear(xs, 1.0) == 8.0);
}

TEST_CASE("binning cutoffs and membership") {
  const auto b = fit_binning(dose_cohort({0, 1, 2, 3, 4, 5, 6, 7, 8}, {0, 1}));
  CHECK(b.fluid.cutoffs[1] == 2.75);
  CHECK(b.fluid.cutoffs[2] == 4.5);
  CHECK(b.fluid.cutoffs[3] == 6.25);
  CHECK(b.fluid.bin(5.0) == 3);
  CHECK(b.fluid.bin(0.0) == 0);
  CHECK(b.fluid.bin(2.75) == 1);
  CHECK(b.fluid.bin(2.76) == 2);
  CHECK(b.fluid.bin(100.0) == 4);
  CHECK_THROWS_AS(b.fluid.bin(-1.0), DomainError);
}

TEST_CASE("degenerate binnings") {
  const auto equal = fit_binning(dose_cohort({3, 3, 3}, {5}));
  for (int k = 1; k < 4; ++k) CHECK(equal.fluid.cutoffs[k] == 3.0);
  CHECK(equal.fluid.bin(3.0) == 1);
  CHECK(equal.fluid.bin(1.0) == 1);
  for (int k = 1; k < 4; ++k) CHECK(equal.vaso.cutoffs[k] == 5.0);
  CHECK_THROWS_AS(fit_binning(dose_cohort({1, 2}, {0, 0})), DegenerateBinningError);
}

TEST_CASE("joint action index") {
  ActionBinning b;
  b.fluid.cutoffs = {1, 2, 3, 4};
  b.vaso.cutoffs = {1, 2, 3, 4};
  CHECK(bin_action(0.0, 0.0, b) == 0);
  CHECK(bin_action(2.5, 10.0, b) == 14);
}

TEST_CASE("bin_action is monotone in each dose") {
  Rng rng(8);
  std::vector<double> fluid, vaso;
  for (int i = 0; i < 200; ++i) {
    fluid.push_back(rng.uniform(0.0, 10.0));
    vaso.push_back(rng.uniform(0.0, 1.0));
  }
  const auto b = fit_binning(dose_cohort(fluid, vaso));
  for (int i = 0; i < 500; ++i) {
    const double f = rng.uniform(0.0, 12.0);
    const double v = rng.uniform(0.0, 1.2);
    const double df = rng.uniform(0.0, 2.0);
    const double dv = rng.uniform(0.0, 0.2);
    CHECK(b.fluid.bin(f + df) >= b.fluid.bin(f));
    CHECK(b.vaso.bin(v + dv) >= b.vaso.bin(v));
    CHECK(bin_action(f + df, v, b) >= bin_action(f, v, b));
    CHECK(bin_action(f, v + dv, b) >= bin_action(f, v, b));
  }
}

TEST_CASE("nonzero bins hold a quarter of the mass each") {
  Rng rng(11);
  std::vector<double> fluid, vaso;
  for (int i = 0; i < 10000; ++i) {
    fluid.push_back(std::exp(rng.normal(5.0, 1.0)));
    vaso.push_back(rng.uniform(0.01, 2.0));
  }
  const auto b = fit_binning(dose_cohort(fluid, vaso));
  std::array<int, 5> nf{}, nv{};
  for (int i = 0; i < 10000; ++i) {
    ++nf[b.fluid.bin(fluid[i])];
    ++nv[b.vaso.bin(vaso[i])];
  }
  for (int k = 1; k <= 4; ++k) {
    CHECK(std::abs(nf[k] / 10000.0 - 0.25) <= 0.05);
    CHECK(std::abs(nv[k] / 10000.0 - 0.25) <= 0.05);
  }
}

TEST_CASE("representatives sit inside their bins") {
  Rng rng(4);
  std::vector<double> fluid;
  for (int i = 0; i < 400; ++i) fluid.push_back(rng.uniform(1.0, 9.0));
  const auto b = fit_binning(dose_cohort(fluid, {1.0}));
  CHECK(b.fluid.representative(0) == 0.0);
  for (int k = 1; k <= 4; ++k) CHECK(b.fluid.bin(b.fluid.representative(k)) == k);
}

TEST_CASE("prepare reuses the given artifacts") {
  const auto synth = fixtures::small_synth(80, 0.5, 3);
  const SubgroupKey m{"gender", "M"};
  const auto source = prepare_subgroup(synth.cohort, m);
  const auto f = filter_subgroup(synth.cohort, SubgroupKey{"gender", "F"});
  const auto target = prepare(f, source.artifacts, m);
  CHECK(target.artifacts == source.artifacts);
  CHECK(target.source == Subgroup(m));
  CHECK(target.artifacts != fit_preprocessing(f));
  const auto& raw = f.trajectories[0];
  const auto expected = apply_norm(impute(raw, source.artifacts.norm), source.artifacts.norm);
  CHECK(target.data.trajectories[0].states == expected.states);
  CHECK(target.labels[0][0] == bin_action(raw.actions(0, 0), raw.actions(0, 1), source.artifacts.binning));
  CHECK_FALSE(target.data.trajectories[0].states.array().isNaN().any());
}
