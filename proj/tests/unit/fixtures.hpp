#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "cfpolicy/cohort.hpp"
#include "cfpolicy/synth.hpp"

namespace fixtures {

using namespace cfpolicy;

// mbp, sbp, lactate (log-normalized lab), age, vent (binary); attribute gender.
inline CohortSchema tiny_schema() {
  CohortSchema s;
  s.features.names = {"mbp", "sbp", "lactate", "age", "vent"};
  s.features.kinds = {FeatureKind::vital, FeatureKind::vital, FeatureKind::lab, FeatureKind::demographic,
                      FeatureKind::binary};
  s.features.log_normalized = {false, false, true, false, false};
  s.attributes = {{"gender", {"F", "M"}}};
  return s;
}

inline PatientTrajectory make_traj(const std::string& id, const std::string& gender, int T, double base) {
  PatientTrajectory p;
  p.id = id;
  p.attributes["gender"] = gender;
  p.states.resize(T, 5);
  p.actions.resize(T, 2);
  for (int t = 0; t < T; ++t) {
    p.states.row(t) << 70.0 + base + t, 120.0 + 2.0 * t, 1.0 + 0.1 * t, 60.0 + base, t % 2;
    p.actions.row(t) << (t % 3 == 0 ? 0.0 : 100.0 * (t + 1)), (t % 2 == 0 ? 0.0 : 0.05 * (t + base));
  }
  return p;
}

inline CohortDataset tiny_cohort(int n = 10, int T = 4) {
  CohortDataset c;
  c.schema = tiny_schema();
  for (int i = 0; i < n; ++i)
    c.trajectories.push_back(make_traj(std::to_string(i + 1), i % 2 ? "M" : "F", T, static_cast<double>(i)));
  return assign_splits(c, 3);
}

inline SynthOutput small_synth(int n, double delta, std::uint64_t seed, int T = 12, int features = 12) {
  SynthConfig cfg;
  cfg.n_patients = n;
  cfg.T = T;
  cfg.n_features = features;
  cfg.onset = T / 3;
  cfg.seed = seed;
  cfg.disparity_delta = delta;
  auto out = generate(cfg);
  out.cohort = assign_splits(out.cohort, seed);
  return out;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("cfpolicy_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
