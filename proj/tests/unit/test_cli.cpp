#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "cfpolicy/json.hpp"
#include "cli.hpp"
#include "fixtures.hpp"

namespace fs = std::filesystem;
using cfpolicy::Json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "cfpolicy");
  std::ostringstream out, err;
  const int code = cfpolicy::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

Json read(const fs::path& p) { return Json::parse(fixtures::slurp(p)); }

// Small cohort shared by the command tests.
const fs::path& cohort_dir() {
  static const fs::path dir = [] {
    const auto d = fixtures::scratch_dir("cli_cohort");
    const auto r = run({"synth", "--n", "160", "--delta", "0.5", "--seed", "3", "--features", "10", "--horizon", "72",
                        "--out", d.string()});
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(run({"synth", "--n", "10"}).code == cfpolicy::cli::kExitUsage);
  CHECK(run({}).code == cfpolicy::cli::kExitUsage);
  CHECK(run({"frobnicate"}).code == cfpolicy::cli::kExitUsage);
  const auto dir = fixtures::scratch_dir("cli_usage");
  const auto r = run({"train-gail", "--cohort", cohort_dir().string(), "--out", dir.string()});
  CHECK(r.code == cfpolicy::cli::kExitUsage);
  CHECK(r.err.find("--dynamics") != std::string::npos);
  CHECK(run({"train-bc", "--cohort", (dir / "missing").string(), "--out", dir.string()}).code ==
        cfpolicy::cli::kExitUsage);
  CHECK(run({"synth", "--n", "0", "--out", dir.string()}).code == cfpolicy::cli::kExitUsage);
}

TEST_CASE("synth reruns and config replays are byte-identical") {
  const auto a = fixtures::scratch_dir("cli_synth_a"), b = fixtures::scratch_dir("cli_synth_b"),
             c = fixtures::scratch_dir("cli_synth_c");
  const std::vector<std::string> args{"synth", "--n", "30", "--delta", "0.5", "--seed", "11", "--horizon", "8",
                                      "--features", "8", "--missing", "0.1"};
  auto with_out = [&](const fs::path& d) {
    auto v = args;
    v.push_back("--out");
    v.push_back(d.string());
    return v;
  };
  REQUIRE(run(with_out(a)).code == 0);
  REQUIRE(run(with_out(b)).code == 0);
  for (const char* f : {"cohort.csv", "schema.json", "ground_truth.json", "synth_config.json"})
    CHECK(fixtures::slurp(a / f) == fixtures::slurp(b / f));

  Json cfg_a = read(a / "config.json"), cfg_b = read(b / "config.json");
  CHECK(cfg_a["seed"] == 11);
  cfg_a.erase("out");
  cfg_b.erase("out");
  CHECK(cfg_a == cfg_b);
  REQUIRE(run({"--config", (a / "config.json").string(), "synth", "--out", c.string()}).code == 0);
  CHECK(fixtures::slurp(a / "cohort.csv") == fixtures::slurp(c / "cohort.csv"));
  CHECK(fixtures::slurp(a / "ground_truth.json") == fixtures::slurp(c / "ground_truth.json"));
}

TEST_CASE("preprocess writes its artifacts") {
  const auto out = fixtures::scratch_dir("cli_pre");
  REQUIRE(run({"preprocess", "--cohort", cohort_dir().string(), "--seed", "1", "--out", out.string()}).code == 0);
  for (const char* f : {"preprocessing.json", "splits.csv", "prepared.csv", "config.json"}) CHECK(fs::exists(out / f));
}

TEST_CASE("train-bc records the source subgroup and every epoch") {
  const auto out = fixtures::scratch_dir("cli_bc");
  const auto before = fixtures::slurp(cohort_dir() / "cohort.csv");
  const auto r = run({"train-bc", "--cohort", cohort_dir().string(), "--subgroup", "gender=M", "--epochs", "3",
                      "--patience", "0", "--batch", "128", "--hidden", "16,16", "--seed", "1", "--out", out.string()});
  REQUIRE(r.code == 0);
  const Json ckpt = read(out / "model.ckpt");
  CHECK(ckpt["format"] == "bc-policy");
  CHECK(ckpt["source_subgroup"].dump().find("gender") != std::string::npos);
  const Json metrics = read(out / "metrics.json");
  CHECK(metrics["history"].size() == 3);
  CHECK(metrics["epochs_run"] == 3);
  CHECK(metrics["test"].contains("reference"));
  CHECK(fixtures::slurp(cohort_dir() / "cohort.csv") == before);

  const auto eval = fixtures::scratch_dir("cli_eval");
  const auto e = run({"eval", "--model", (out / "model.ckpt").string(), "--cohort", cohort_dir().string(), "--out",
                      eval.string()});
  REQUIRE(e.code == 0);
  CHECK(read(eval / "eval.json")["subgroup"] == "gender=M");
  CHECK(e.out.find("macro one-vs-rest AUROC") != std::string::npos);
}

TEST_CASE("counterfactual with per-timestep output") {
  const auto bc = fixtures::scratch_dir("cli_cf_bc"), out = fixtures::scratch_dir("cli_cf");
  REQUIRE(run({"train-bc", "--cohort", cohort_dir().string(), "--subgroup", "gender=M", "--epochs", "2", "--batch",
               "256", "--hidden", "16", "--seed", "1", "--out", bc.string()})
              .code == 0);
  const auto r = run({"counterfactual", "--model", (bc / "model.ckpt").string(), "--cohort", cohort_dir().string(),
                      "--target", "gender=F", "--bootstrap", "5", "--per-timestep", "--seed", "2", "--out",
                      out.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("gender=M -> target gender=F") != std::string::npos);
  std::istringstream csv(fixtures::slurp(out / "metrics.csv"));
  std::string line;
  int timestep_rows = 0;
  while (std::getline(csv, line))
    if (line.rfind("timestep,", 0) == 0) ++timestep_rows;
  CHECK(timestep_rows == 72);
  CHECK(read(out / "report.json")["per_timestep"].size() == 72);
  CHECK(fs::exists(out / "mean_actions.svg"));

  const auto same = run({"counterfactual", "--model", (bc / "model.ckpt").string(), "--cohort",
                         cohort_dir().string(), "--target", "gender=M", "--out", out.string()});
  CHECK(same.code == cfpolicy::cli::kExitUsage);
  CHECK(run({"counterfactual", "--model", (bc / "model.ckpt").string(), "--cohort", cohort_dir().string(),
             "--target", "race=X", "--out", out.string()})
            .code == cfpolicy::cli::kExitUsage);
}

TEST_CASE("end-to-end pipeline") {
  const auto root = fixtures::scratch_dir("cli_e2e");
  const auto before = fixtures::slurp(cohort_dir() / "cohort.csv");
  const std::string cohort = cohort_dir().string();
  REQUIRE(run({"train-dyn", "--cohort", cohort, "--epochs", "1", "--batch", "256", "--hidden", "8", "--seed", "1",
               "--out", (root / "dyn").string()})
              .code == 0);
  REQUIRE(run({"train-gail", "--cohort", cohort, "--subgroup", "gender=M", "--dynamics",
               (root / "dyn" / "dynamics.ckpt").string(), "--iterations", "3", "--episodes", "8", "--horizon", "6",
               "--clinical-reward", "--seed", "1", "--out", (root / "gail").string()})
              .code == 0);
  std::istringstream log(fixtures::slurp(root / "gail" / "train_log.jsonl"));
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    ++lines;
    CHECK(Json::parse(line).contains("mean_clinical_reward"));
  }
  CHECK(lines == 3);
  CHECK(read(root / "gail" / "metrics.json")["max_kl"].get<double>() <= 0.05);

  REQUIRE(run({"train-bc", "--cohort", cohort, "--subgroup", "gender=M", "--epochs", "1", "--hidden", "16", "--seed",
               "1", "--out", (root / "bc").string()})
              .code == 0);
  REQUIRE(run({"counterfactual", "--model", (root / "bc" / "model.ckpt").string(), "--cohort", cohort, "--target",
               "gender=F", "--bootstrap", "5", "--no-svg", "--out", (root / "cf").string()})
              .code == 0);
  CHECK_FALSE(fs::exists(root / "cf" / "mean_actions.svg"));
  const auto rep = run({"report", "--inputs", (root / "bc").string(), (root / "cf").string(),
                        (root / "gail").string(), (root / "dyn").string(), "--out", (root / "summary").string()});
  REQUIRE(rep.code == 0);
  const auto md = fixtures::slurp(root / "summary" / "summary.md");
  CHECK(md.size() > 200);
  CHECK(md.find("mean |D - 0.5|") != std::string::npos);
  CHECK(md.find("kl_reverse") != std::string::npos);
  CHECK(fs::exists(root / "summary" / "cf" / "mean_actions.svg"));
  CHECK(fixtures::slurp(cohort_dir() / "cohort.csv") == before);
}

TEST_CASE("commands are deterministic at one thread") {
  const auto a = fixtures::scratch_dir("cli_det_a"), b = fixtures::scratch_dir("cli_det_b");
  for (const auto& d : {a, b})
    REQUIRE(run({"--threads", "1", "train-bc", "--cohort", cohort_dir().string(), "--epochs", "2", "--hidden", "16",
                 "--seed", "4", "--out", d.string()})
                .code == 0);
  CHECK(fixtures::slurp(a / "model.ckpt") == fixtures::slurp(b / "model.ckpt"));
  CHECK(fixtures::slurp(a / "metrics.json") == fixtures::slurp(b / "metrics.json"));
}
