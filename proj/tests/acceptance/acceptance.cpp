// Runs the ten acceptance criteria and prints one PASS/FAIL line for each.
// Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

#include "cfpolicy/bc.hpp"
#include "cfpolicy/divergence.hpp"
#include "cfpolicy/dynamics.hpp"
#include "cfpolicy/errors.hpp"
#include "cfpolicy/gail.hpp"
#include "cfpolicy/parallel.hpp"
#include "cfpolicy/preprocess.hpp"
#include "cfpolicy/report.hpp"
#include "cfpolicy/synth.hpp"
#include "cli.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "reward_cases.hpp"

using namespace cfpolicy;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// The shared n=2000, delta=0.5, seed 7 cohort of criteria 5, 6 and 8.
struct Shared {
  CohortDataset cohort;
  PreparedCohort prepared;
  std::optional<TransitionModel> dynamics;
};

Shared& shared() {
  static Shared s = [] {
    Shared out;
    SynthConfig cfg;
    cfg.n_patients = 2000;
    cfg.disparity_delta = 0.5;
    cfg.seed = 7;
    out.cohort = assign_splits(generate(cfg).cohort, 7);
    out.prepared = prepare_subgroup(out.cohort, std::nullopt);
    return out;
  }();
  return s;
}

BcHyperparams bc_hp() {
  BcHyperparams hp;
  hp.epochs = 5;
  hp.batch = 256;
  hp.lr = 1e-3;
  hp.seed = 1;
  return hp;
}

// ---------------------------------------------------------------------------

Verdict reference_constants() {
  const auto synth = fixtures::small_synth(120, 0.5, 3);
  const auto data = prepare_subgroup(synth.cohort, std::nullopt);
  auto hp = bc_hp();
  hp.epochs = 1;
  auto policy = train_bc(data, BcMode::classification, hp).policy;
  const Json j = to_json(evaluate_bc(policy, data, Split::test));
  if (!j.contains("reference")) return {false, "eval report has no reference block"};
  const std::map<std::string, std::pair<double, double>> expected{
      {"auroc_classification", {0.83, 0.01}}, {"rmse_fluid", {0.68, 0.05}}, {"rmse_vaso", {0.41, 0.06}}};
  std::size_t found = 0;
  for (const auto& v : j["reference"]["values"]) {
    const auto it = expected.find(v["metric"].get<std::string>());
    if (it == expected.end()) continue;
    if (v["value"].get<double>() != it->second.first || v["sd"].get<double>() != it->second.second)
      return {false, "wrong constant for " + it->first};
    ++found;
  }
  return {found == expected.size(), "AUROC 0.83+/-0.01, RMSE fluid 0.68+/-0.05, vaso 0.41+/-0.06 stored as reference"};
}

Verdict gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string where;
  std::size_t layers = 0;
  for (const auto& c : gradcheck::all_cases()) {
    ++layers;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto r = c.run(seed);
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        where = c.name + " (" + r.worst + ")";
      }
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < 1e-4 && secs < 30.0,
          fmt("%.0f cases x 10 seeds, max rel error %.2e, %.1f s", static_cast<double>(layers), worst, secs) +
              (where.empty() ? "" : ", worst " + where)};
}

Verdict divergence_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = oracles::compare_all(100, 2024);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {r.instances >= 50 && r.max_error <= 1e-9 && secs < 5.0,
          fmt("%.0f instances, max abs error %.2e, %.2f s", r.instances, r.max_error, secs)};
}

Verdict preprocessing() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> failures;

  // Quartile mass on 10^4 doses.
  Rng rng(41);
  CohortDataset c;
  c.schema = fixtures::tiny_schema();
  PatientTrajectory p = fixtures::make_traj("1", "F", 10000, 0.0);
  for (Eigen::Index t = 0; t < 10000; ++t) {
    p.actions(t, 0) = std::exp(rng.normal(5.0, 1.0));
    p.actions(t, 1) = rng.uniform(0.01, 2.0);
  }
  c.trajectories = {p};
  c.splits = {Split::train};
  const auto b = fit_binning(c);
  std::array<int, 5> nf{}, nv{};
  for (Eigen::Index t = 0; t < 10000; ++t) {
    ++nf[b.fluid.bin(p.actions(t, 0))];
    ++nv[b.vaso.bin(p.actions(t, 1))];
  }
  double worst_mass = 0.0;
  for (int k = 1; k <= 4; ++k)
    worst_mass = std::max({worst_mass, std::abs(nf[k] / 1e4 - 0.25), std::abs(nv[k] / 1e4 - 0.25)});
  if (worst_mass > 0.05) failures.push_back("bin mass");

  // Imputation idempotence and normalization round trip on a cohort with gaps.
  auto synth = fixtures::small_synth(200, 0.0, 5);
  synth.cohort = inject_missingness(synth.cohort, 0.3, 6);
  const auto stats = fit_norm_stats(synth.cohort);
  double worst_round = 0.0;
  for (const auto& traj : synth.cohort.trajectories) {
    const auto once = impute(traj, stats);
    if (once.states.array().isNaN().any() || impute(once, stats).states != once.states) {
      failures.push_back("imputation idempotence");
      break;
    }
    const auto back = invert_norm(apply_norm(once, stats), stats);
    for (Eigen::Index j = 0; j < once.states.cols(); ++j) {
      if (stats.features[j].stddev == 0.0) continue;
      for (Eigen::Index t = 0; t < once.states.rows(); ++t)
        worst_round = std::max(worst_round, std::abs(back.states(t, j) - once.states(t, j)) /
                                                std::max(1.0, std::abs(once.states(t, j))));
    }
  }
  if (worst_round >= 1e-9) failures.push_back("normalization round trip");

  // Conversion factors, exact.
  for (double dose : {0.0, 0.3, 1.0, 7.25, 50.0, 123.456}) {
    if (norepi_equivalent(Vasopressor::phenylephrine, dose).value != dose / 10.0 ||
        norepi_equivalent(Vasopressor::dopamine, dose).value != dose / 100.0 ||
        norepi_equivalent(Vasopressor::vasopressin, dose).value != dose * 2.5 ||
        norepi_equivalent(Vasopressor::norepinephrine, dose).value != dose) {
      failures.push_back("norepinephrine factors");
      break;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs >= 5.0) failures.push_back("runtime");
  std::string detail = fmt("max bin mass deviation %.4f, round-trip error %.1e, %.2f s", worst_mass, worst_round, secs);
  for (const auto& f : failures) detail += "; failed: " + f;
  return {failures.empty(), detail};
}

Verdict bc_learnability() {
  const auto t0 = std::chrono::steady_clock::now();
  auto& s = shared();
  auto cls = train_bc(s.prepared, BcMode::classification, bc_hp());
  const double auroc = eval_auroc(cls.policy, s.prepared, Split::test).macro;
  auto reg = train_bc(s.prepared, BcMode::regression, bc_hp());
  const auto rmse = eval_rmse(reg.policy, s.prepared, Split::test);
  const auto zero = zero_baseline_rmse(s.prepared, Split::test);
  const double rf = rmse.fluid / zero.fluid, rv = rmse.vaso / zero.vaso;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {auroc >= 0.75 && rf <= 0.7 && rv <= 0.7 && secs < 300.0,
          fmt("test AUROC %.3f, RMSE/baseline fluid %.3f vaso %.3f, %.0f s", auroc, rf, rv, secs)};
}

Verdict dynamics() {
  const auto t0 = std::chrono::steady_clock::now();
  auto& s = shared();
  DynHyperparams hp;
  hp.epochs = 8;
  hp.batch = 256;
  hp.lr = 2e-3;
  hp.seed = 1;
  s.dynamics = train_dynamics(s.prepared, hp).model;
  const double ratio = dynamics_mse(*s.dynamics, s.prepared, Split::test) / zero_delta_mse(s.prepared, Split::test);

  std::vector<HistoryWindow> starts;
  for (auto i : s.prepared.data.indices(Split::test)) starts.push_back(make_window(s.prepared.data.trajectories[i], 0));
  StochasticPolicy random(kContextSteps * static_cast<int>(s.prepared.data.schema.features.size()), true, {64}, 9);
  Rng rng(3);
  bool bounded = true;
  std::size_t episodes = 0;
  try {
    const auto batch = rollout(*s.dynamics, as_rollout_policy(random, s.prepared.artifacts), starts, 72, std::nullopt, rng);
    episodes = batch.episodes();
    for (const auto& st : batch.states)
      bounded = bounded && st.rows() == 73 && st.allFinite() && st.cwiseAbs().maxCoeff() <= kStateClip;
  } catch (const RolloutBlowupError&) {
    bounded = false;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {ratio <= 0.5 && bounded && secs < 300.0,
          fmt("test MSE / zero-delta %.3f, %.0f 72-step rollouts ", ratio, static_cast<double>(episodes)) +
              (bounded ? "finite within clip" : "NOT bounded") + fmt(", %.0f s", secs)};
}

Verdict rewards() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto table = reward_cases::boundary_table();
  std::size_t ok = 0;
  for (const auto& c : table) ok += reward_cases::matches(c) ? 1 : 0;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {ok == table.size() && secs < 1.0,
          fmt("%.0f/%.0f boundary cases exact, %.3f s", static_cast<double>(ok), static_cast<double>(table.size()), secs)};
}

Verdict gail() {
  const auto t0 = std::chrono::steady_clock::now();
  auto& s = shared();
  if (!s.dynamics) return {false, "no transition model (criterion 6 did not run)"};
  GailConfig cfg;
  cfg.seed = 3;
  cfg.iterations = 50;
  cfg.freeze_policy = true;
  const auto frozen = train_gail(s.prepared, *s.dynamics, cfg);
  double best_acc = 0.0;
  int first = 0;
  for (const auto& e : frozen.log) {
    best_acc = std::max(best_acc, e.disc_accuracy);
    if (first == 0 && e.disc_accuracy >= 0.9) first = e.iteration;
  }

  cfg.iterations = 200;
  cfg.freeze_policy = false;
  const auto trained = train_gail(s.prepared, *s.dynamics, cfg);
  double max_kl = 0.0;
  for (const auto& e : trained.log) max_kl = std::max(max_kl, e.kl);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = first > 0 && trained.final_margin < trained.initial_margin && max_kl <= 0.05 && secs < 600.0;
  return {pass, fmt("accuracy >= 0.9 at iteration %.0f (best %.3f in 50); ", first, best_acc) +
                    fmt("margin %.4f -> %.4f; max KL %.4f; %.0f s", trained.initial_margin, trained.final_margin,
                        max_kl, secs)};
}

Verdict counterfactual_detection() {
  const auto t0 = std::chrono::steady_clock::now();
  auto ratio_for = [](double delta) {
    SynthConfig cfg;
    cfg.n_patients = 2000;
    cfg.disparity_delta = delta;
    cfg.seed = 7;
    const auto cohort = assign_splits(generate(cfg).cohort, 7);
    auto policy = train_bc(cohort, SubgroupKey{"gender", "M"}, BcMode::classification, bc_hp()).policy;
    ReportOptions ro;
    ro.seed = 1;
    const auto r = counterfactual_report(policy, cohort, SubgroupKey{"gender", "F"}, ro);
    return r.aggregate.kl / r.control.kl;
  };
  const double planted = ratio_for(0.5);
  const double null = ratio_for(0.0);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {planted >= 3.0 && null >= 1.0 / 3.0 && null <= 3.0 && secs < 600.0,
          fmt("KL target/control: delta 0.5 -> %.2f, delta 0 -> %.2f, %.0f s", planted, null, secs)};
}

Verdict determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  auto pipeline = [](const fs::path& root) {
    std::ostringstream out, err;
    auto run = [&](std::vector<std::string> args) {
      args.insert(args.begin(), {"cfpolicy", "--threads", "1"});
      return cli::run(args, out, err);
    };
    const std::string cohort = (root / "cohort").string();
    int rc = run({"synth", "--n", "150", "--delta", "0.5", "--seed", "5", "--horizon", "24", "--features", "12",
                  "--missing", "0.1", "--out", cohort});
    rc |= run({"preprocess", "--cohort", cohort, "--seed", "2", "--out", (root / "pre").string()});
    rc |= run({"train-bc", "--cohort", cohort, "--subgroup", "gender=M", "--epochs", "2", "--seed", "2", "--out",
               (root / "bc").string()});
    rc |= run({"train-dyn", "--cohort", cohort, "--epochs", "1", "--hidden", "16", "--seed", "2", "--out",
               (root / "dyn").string()});
    rc |= run({"train-gail", "--cohort", cohort, "--dynamics", (root / "dyn" / "dynamics.ckpt").string(),
               "--iterations", "3", "--episodes", "8", "--horizon", "8", "--seed", "2", "--out",
               (root / "gail").string()});
    rc |= run({"eval", "--model", (root / "bc" / "model.ckpt").string(), "--cohort", cohort, "--out",
               (root / "eval").string()});
    rc |= run({"counterfactual", "--model", (root / "bc" / "model.ckpt").string(), "--cohort", cohort, "--target",
               "gender=F", "--bootstrap", "20", "--seed", "2", "--out", (root / "cf").string()});
    rc |= run({"report", "--inputs", (root / "eval").string(), (root / "cf").string(), "--out",
               (root / "report").string()});
    return rc;
  };
  const auto a = fixtures::scratch_dir("accept_det_a"), b = fixtures::scratch_dir("accept_det_b");
  if (pipeline(a) != 0 || pipeline(b) != 0) return {false, "a pipeline command failed"};
  std::size_t files = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    ++files;
    std::string lhs = fixtures::slurp(e.path()), rhs = fixtures::slurp(b / rel);
    // Resolved configs and summaries embed the output directory.
    const auto strip = [](std::string s, const std::string& dir) {
      for (auto p = s.find(dir); p != std::string::npos; p = s.find(dir, p)) s.replace(p, dir.size(), "<dir>");
      return s;
    };
    if (strip(lhs, a.string()) != strip(rhs, b.string())) {
      ++differing;
      std::cerr << "  differs: " << rel.string() << "\n";
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {files > 20 && differing == 0,
          fmt("%.0f output files from 8 commands, %.0f differ, %.0f s", static_cast<double>(files),
              static_cast<double>(differing), secs)};
}

}  // namespace

int main() {
  set_thread_count(1);
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"reference constants", reference_constants},
      {"gradient correctness", gradients},
      {"divergence oracles", divergence_oracles},
      {"preprocessing properties", preprocessing},
      {"BC learnability", bc_learnability},
      {"dynamics model", dynamics},
      {"reward table", rewards},
      {"GAIL sanity", gail},
      {"counterfactual detection", counterfactual_detection},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += v.pass ? 0 : 1;
    std::cout << "criterion " << k + 1 << " [" << criteria[k].first << "]: " << (v.pass ? "PASS" : "FAIL") << " - "
              << v.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed;
}
