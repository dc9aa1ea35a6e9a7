#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "cfpolicy/bc.hpp"
#include "cfpolicy/cohort.hpp"
#include "cfpolicy/divergence.hpp"
#include "cfpolicy/dynamics.hpp"
#include "cfpolicy/errors.hpp"
#include "cfpolicy/gail.hpp"
#include "cfpolicy/json.hpp"
#include "cfpolicy/parallel.hpp"
#include "cfpolicy/preprocess.hpp"
#include "cfpolicy/report.hpp"
#include "cfpolicy/reward.hpp"
#include "cfpolicy/synth.hpp"

namespace cfpolicy::cli {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// JSON config files: a flat object keyed by long option names.

Json scalar_value(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  const char* end = s.data() + s.size();
  std::int64_t i = 0;
  if (auto [p, ec] = std::from_chars(s.data(), end, i); ec == std::errc() && p == end && !s.empty()) return i;
  std::uint64_t u = 0;
  if (auto [p, ec] = std::from_chars(s.data(), end, u); ec == std::errc() && p == end && !s.empty()) return u;
  double d = 0.0;
  if (auto [p, ec] = std::from_chars(s.data(), end, d); ec == std::errc() && p == end && !s.empty() && std::isfinite(d))
    return d;
  return s;
}

std::vector<std::string> split_list(const std::vector<std::string>& values) {
  std::vector<std::string> out;
  for (auto v : values) {
    v.erase(std::remove_if(v.begin(), v.end(), [](char c) { return c == '[' || c == ']' || c == ' '; }), v.end());
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string input_string(const Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

// Items are routed to `section`, the subcommand being run.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(std::string section = {}) : section_(std::move(section)) {}

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    Json j = Json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames().front();
      if (name == "help" || name == "config") continue;
      if (opt->get_expected_min() == 0) {
        if (opt->count() > 0)
          j[name] = opt->as<bool>();
        else if (default_also)
          j[name] = false;
        continue;
      }
      std::vector<std::string> values;
      if (opt->count() > 0)
        values = opt->results();
      else if (default_also && !opt->get_default_str().empty())
        values = {opt->get_default_str()};
      else
        continue;
      if (opt->get_expected_max() > 1) {
        Json arr = Json::array();
        for (const auto& v : split_list(values)) arr.push_back(scalar_value(v));
        j[name] = arr;
      } else {
        j[name] = scalar_value(values.back());
      }
    }
    return j.dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    const Json j = Json::parse(input);
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      if (value.is_null()) continue;
      CLI::ConfigItem item;
      if (!section_.empty()) item.parents = {section_};
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(input_string(v));
      } else {
        item.inputs.push_back(input_string(value));
      }
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  std::string section_;
};

CLI::App* subcommand(CLI::App& app, const std::string& name, const std::string& description) {
  CLI::App* sub = app.add_subcommand(name, description);
  sub->config_formatter(std::make_shared<JsonConfig>());
  sub->option_defaults()->always_capture_default();
  return sub;
}

// ---------------------------------------------------------------------------
// Files

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_resolved(const CLI::App* sub, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "config.json", sub->config_to_str(true, false));
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw DependencyError(what + " not found: " + path.string());
}

void write_splits(const fs::path& path, const CohortDataset& cohort) {
  std::ostringstream out;
  out << "id,split\n";
  for (std::size_t i = 0; i < cohort.size(); ++i) out << cohort.trajectories[i].id << ',' << to_string(cohort.splits[i]) << '\n';
  write_text(path, out.str());
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw ConfigError("unknown split '" + text + "' (expected train, val or test)");
}

void read_splits(const fs::path& path, CohortDataset& cohort) {
  std::ifstream in(path);
  if (!in) throw DependencyError("cannot read " + path.string());
  std::map<std::string, Split> by_id;
  std::string line;
  std::getline(in, line);
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError("expected id,split", n);
    by_id[line.substr(0, comma)] = parse_split(line.substr(comma + 1));
  }
  cohort.splits.assign(cohort.size(), Split::unassigned);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto it = by_id.find(cohort.trajectories[i].id);
    if (it == by_id.end()) throw IntegrityError("trajectory " + cohort.trajectories[i].id + " has no split");
    cohort.splits[i] = it->second;
  }
}

// A cohort directory holds cohort.csv and schema.json, optionally splits.csv.
CohortDataset load_cohort_dir(const fs::path& dir, const std::string& splits, std::uint64_t split_seed) {
  require_file(dir / "schema.json", "cohort schema");
  require_file(dir / "cohort.csv", "cohort file");
  CohortDataset cohort = load_cohort(dir / "cohort.csv", load_schema(dir / "schema.json"));
  fs::path split_file = splits.empty() ? dir / "splits.csv" : fs::path(splits);
  if (fs::is_regular_file(split_file)) {
    read_splits(split_file, cohort);
    return cohort;
  }
  if (!splits.empty()) throw DependencyError("split file not found: " + splits);
  return assign_splits(cohort, split_seed);
}

Json load_checkpoint(const fs::path& path) {
  require_file(path, "checkpoint");
  return read_json(path);
}

// ---------------------------------------------------------------------------
// Commands

struct CommonOptions {
  std::string cohort;
  std::string splits;
  std::string subgroup = "all";
  std::string out;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> split_seed;

  std::uint64_t resolved_split_seed() const { return split_seed.value_or(seed); }
};

void add_seed(CLI::App* sub, std::uint64_t& seed) {
  sub->add_option("--seed", seed, "Random seed")->envname("CFPOLICY_SEED");
}

void add_cohort_options(CLI::App* sub, CommonOptions& c, bool with_subgroup = true) {
  sub->add_option("--cohort", c.cohort, "Cohort directory (cohort.csv, schema.json)")->required();
  sub->add_option("--splits", c.splits, "id,split CSV; defaults to <cohort>/splits.csv or a seeded assignment");
  sub->add_option("--split-seed", c.split_seed, "Seed of the split assignment (defaults to --seed)");
  if (with_subgroup) sub->add_option("--subgroup", c.subgroup, "Training subgroup, attribute=value or all");
  add_seed(sub, c.seed);
}

struct SynthOptions {
  int n = 1000;
  double delta = 0.0;
  std::uint64_t seed = 0;
  int features = 40;
  int horizon = 72;
  double missing = 0.0;
  double policy_noise = 0.4;
  bool intermediate_mortality = false;
  std::string out;
};

int cmd_synth(const SynthOptions& o, const CLI::App* sub, std::ostream& out) {
  SynthConfig cfg;
  cfg.n_patients = o.n;
  cfg.disparity_delta = o.delta;
  cfg.seed = o.seed;
  cfg.n_features = o.features;
  cfg.T = o.horizon;
  cfg.policy_noise = o.policy_noise;
  cfg.intermediate_mortality = o.intermediate_mortality;
  cfg.validate();
  if (!(o.missing >= 0.0 && o.missing < 1.0)) throw ConfigError("--missing must lie in [0, 1)");
  auto gen = generate(cfg);
  CohortDataset cohort = o.missing > 0.0 ? inject_missingness(gen.cohort, o.missing, Rng(o.seed).derive(99).next())
                                         : gen.cohort;
  const fs::path dir(o.out);
  write_resolved(sub, dir);
  write_cohort(dir / "cohort.csv", cohort);
  save_schema(dir / "schema.json", cohort.schema);
  write_json(dir / "ground_truth.json", Json(gen.truth));
  write_json(dir / "synth_config.json", Json(cfg));
  out << "wrote " << cohort.size() << " trajectories to " << dir.string() << "\n";
  return kExitOk;
}

struct PreprocessOptions {
  CommonOptions c;
};

int cmd_preprocess(const PreprocessOptions& o, const CLI::App* sub, std::ostream& out) {
  const CohortDataset cohort = load_cohort_dir(o.c.cohort, o.c.splits, o.c.resolved_split_seed());
  const Subgroup group = parse_subgroup(o.c.subgroup);
  const PreparedCohort prepared = prepare_subgroup(cohort, group);
  const fs::path dir(o.c.out);
  write_resolved(sub, dir);
  write_json(dir / "preprocessing.json", Json(prepared.artifacts));
  write_splits(dir / "splits.csv", cohort);
  write_cohort(dir / "prepared.csv", prepared.data);
  out << "prepared " << prepared.size() << " trajectories of " << subgroup_label(group) << " ("
      << prepared.data.count(Split::train) << " train, " << prepared.data.count(Split::val) << " val, "
      << prepared.data.count(Split::test) << " test)\n";
  return kExitOk;
}

struct TrainBcOptions {
  CommonOptions c;
  std::string mode = "classification";
  BcHyperparams hp;
  bool no_batch_norm = false;
  std::string optimizer = "adam";
};

int cmd_train_bc(TrainBcOptions o, const CLI::App* sub, std::ostream& out) {
  o.hp.seed = o.c.seed;
  o.hp.batch_norm = !o.no_batch_norm;
  if (o.optimizer == "adam")
    o.hp.optimizer = nn::OptimizerKind::adam;
  else if (o.optimizer == "sgd")
    o.hp.optimizer = nn::OptimizerKind::sgd;
  else
    throw ConfigError("unknown optimizer '" + o.optimizer + "'");
  o.hp.validate();
  const BcMode mode = parse_bc_mode(o.mode);
  const CohortDataset cohort = load_cohort_dir(o.c.cohort, o.c.splits, o.c.resolved_split_seed());
  const Subgroup group = parse_subgroup(o.c.subgroup);
  const PreparedCohort data = prepare_subgroup(cohort, group);
  const fs::path dir(o.c.out);
  write_resolved(sub, dir);

  auto result = train_bc(data, mode, o.hp);
  Json ckpt = bc_to_json(result.policy);
  ckpt["split_seed"] = o.c.resolved_split_seed();
  write_json(dir / "model.ckpt", ckpt);

  Json metrics = {{"history", history_to_json(result.history)},
                  {"epochs_run", result.history.size()},
                  {"best_epoch", result.best_epoch}};
  if (data.data.count(Split::test) > 0) metrics["test"] = to_json(evaluate_bc(result.policy, data, Split::test));
  write_json(dir / "metrics.json", metrics);
  out << "trained " << to_string(mode) << " policy on " << subgroup_label(group) << ": " << result.history.size()
      << " epochs, best " << result.best_epoch << "\n";
  if (metrics.contains("test")) out << summarize(metrics["test"], "test split");
  return kExitOk;
}

struct TrainDynOptions {
  CommonOptions c;
  DynHyperparams hp;
};

int cmd_train_dyn(TrainDynOptions o, const CLI::App* sub, std::ostream& out) {
  o.hp.seed = o.c.seed;
  o.hp.validate();
  const CohortDataset cohort = load_cohort_dir(o.c.cohort, o.c.splits, o.c.resolved_split_seed());
  const Subgroup group = parse_subgroup(o.c.subgroup);
  const PreparedCohort data = prepare_subgroup(cohort, group);
  const fs::path dir(o.c.out);
  write_resolved(sub, dir);

  auto result = train_dynamics(data, o.hp);
  Json ckpt = dynamics_to_json(result.model);
  ckpt["split_seed"] = o.c.resolved_split_seed();
  write_json(dir / "dynamics.ckpt", ckpt);
  Json metrics = {{"history", history_to_json(result.history)},
                  {"epochs_run", result.history.size()},
                  {"best_epoch", result.best_epoch}};
  if (data.data.count(Split::test) > 0)
    metrics["test"] = to_json(evaluate_dynamics(result.model, data, Split::test));
  write_json(dir / "metrics.json", metrics);
  out << "trained transition model on " << subgroup_label(group) << ": " << result.history.size() << " epochs, best "
      << result.best_epoch << "\n";
  if (metrics.contains("test")) out << summarize(metrics["test"], "test split");
  return kExitOk;
}

struct TrainGailOptions {
  CommonOptions c;
  GailConfig g;
  std::string dynamics;
  std::string convention = "generated-positive";
  bool continuous = false;
  bool clinical_reward = false;
};

int cmd_train_gail(TrainGailOptions o, const CLI::App* sub, std::ostream& out) {
  if (o.dynamics.empty()) throw DependencyError("train-gail needs a trained transition model (--dynamics)");
  require_file(o.dynamics, "transition model");
  o.g.seed = o.c.seed;
  o.g.convention = parse_convention(o.convention);
  o.g.discrete = !o.continuous;
  o.g.validate();
  TransitionModel model = dynamics_from_json(read_json(o.dynamics));
  const CohortDataset cohort = load_cohort_dir(o.c.cohort, o.c.splits, o.c.resolved_split_seed());
  const Subgroup group = parse_subgroup(o.c.subgroup);
  // States must live in the transition model's normalized space.
  const PreparedCohort data = prepare(filter_subgroup(cohort, group), model.artifacts, group);
  std::optional<RewardContext> clinical;
  if (o.clinical_reward) clinical = RewardContext{RewardFn{}, HemodynamicView(cohort.schema.features, model.artifacts.norm)};
  const fs::path dir(o.c.out);
  write_resolved(sub, dir);

  auto result = train_gail(data, model, o.g, clinical);
  std::ostringstream log;
  double max_kl = 0.0;
  for (const auto& e : result.log) {
    log << gail_log_line(e).dump() << "\n";
    max_kl = std::max(max_kl, e.kl);
  }
  write_text(dir / "train_log.jsonl", log.str());
  Json bundle = {{"format", "gail-bundle"},
                 {"version", 1},
                 {"convention", to_string(o.g.convention)},
                 {"source_subgroup", subgroup_to_json(group)},
                 {"config", to_json_config(o.g)},
                 {"preprocessing", model.artifacts},
                 {"policy", policy_to_json(result.policy)},
                 {"discriminator", disc_to_json(result.disc)}};
  if (clinical) bundle["reward"] = clinical->fn;
  write_json(dir / "gail.ckpt", bundle);
  Json metrics = {{"iterations", result.log.size()},
                  {"initial_margin", result.initial_margin},
                  {"final_margin", result.final_margin},
                  {"max_kl", max_kl},
                  {"convention", to_string(o.g.convention)}};
  if (!result.log.empty()) metrics["final_disc_accuracy"] = result.log.back().disc_accuracy;
  write_json(dir / "metrics.json", metrics);
  out << "trained GAIL policy on " << subgroup_label(group) << ": " << result.log.size()
      << " iterations, mean |D - 0.5| " << result.initial_margin << " -> " << result.final_margin << "\n";
  return kExitOk;
}

struct EvalOptions {
  std::string model;
  CommonOptions c;
  std::string split = "test";
};

int cmd_eval(const EvalOptions& o, const CLI::App* sub, std::ostream& out) {
  const Json ckpt = load_checkpoint(o.model);
  const std::uint64_t split_seed = o.c.split_seed.value_or(ckpt.value("split_seed", o.c.seed));
  const CohortDataset cohort = load_cohort_dir(o.c.cohort, o.c.splits, split_seed);
  const Split split = parse_split(o.split);
  const std::string format = ckpt.value("format", std::string());
  EvalReport report;
  if (format == "bc-policy") {
    BcPolicy policy = bc_from_json(ckpt);
    const Subgroup group = sub->count("--subgroup") ? parse_subgroup(o.c.subgroup) : policy.source;
    report = evaluate_bc(policy, prepare(filter_subgroup(cohort, group), policy.artifacts, group), split);
  } else if (format == "transition-model") {
    TransitionModel model = dynamics_from_json(ckpt);
    const Subgroup group = sub->count("--subgroup") ? parse_subgroup(o.c.subgroup) : model.source;
    report = evaluate_dynamics(model, prepare(filter_subgroup(cohort, group), model.artifacts, group), split);
  } else {
    throw SchemaError("cannot evaluate a checkpoint of format '" + format + "'");
  }
  const Json j = to_json(report);
  if (!o.c.out.empty()) {
    write_resolved(sub, o.c.out);
    write_json(fs::path(o.c.out) / "eval.json", j);
  }
  out << summarize(j, "evaluation");
  return kExitOk;
}

struct CounterfactualOptions {
  std::string model;
  CommonOptions c;
  std::string target;
  ReportOptions r;
  std::string split = "test";
  bool per_timestep = false;
  bool no_svg = false;
};

int cmd_counterfactual(CounterfactualOptions o, const CLI::App* sub, std::ostream& out) {
  const Json ckpt = load_checkpoint(o.model);
  if (ckpt.value("format", std::string()) != "bc-policy")
    throw SchemaError("counterfactual evaluation needs a behavioral-cloning checkpoint");
  BcPolicy policy = bc_from_json(ckpt);
  const std::uint64_t split_seed = o.c.split_seed.value_or(ckpt.value("split_seed", o.c.seed));
  const CohortDataset cohort = load_cohort_dir(o.c.cohort, o.c.splits, split_seed);
  const Subgroup target = parse_subgroup(o.target);
  if (target && !cohort.schema.find_attribute(target->attribute))
    throw SchemaError("attribute '" + target->attribute + "' is not declared in this cohort");
  o.r.seed = o.c.seed;
  o.r.split = parse_split(o.split);
  o.r.per_timestep = o.per_timestep;
  const DiscrepancyReport report = counterfactual_report(policy, cohort, target, o.r);
  const fs::path dir(o.c.out);
  write_resolved(sub, dir);
  if (o.no_svg) {
    write_json(dir / "report.json", Json(report));
    std::ofstream csv(dir / "metrics.csv");
    write_metrics_csv(csv, report);
  } else {
    write_report_files(dir, report);
  }
  out << metric_table(report);
  return kExitOk;
}

struct ReportCmdOptions {
  std::vector<std::string> inputs;
  std::string out;
};

int cmd_report(const ReportCmdOptions& o, const CLI::App* sub, std::ostream& out) {
  std::vector<fs::path> files;
  for (const auto& in : o.inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.path().extension() == ".json" && e.path().filename() != "config.json") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      require_file(p, "report input");
      files.push_back(p);
    }
  }
  std::string text = "# cfpolicy report\n\n";
  for (const auto& f : files) {
    const Json j = read_json(f);
    const std::string format = j.value("format", std::string());
    const bool known = format == "eval-report" || format == "discrepancy-report" || j.contains("history") ||
                       j.contains("initial_margin");
    if (!known) continue;
    text += summarize(j, f.string());
    if (format == "discrepancy-report" && !o.out.empty())
      write_report_files(fs::path(o.out) / f.parent_path().filename(), j.get<DiscrepancyReport>());
  }
  if (!o.out.empty()) {
    write_resolved(sub, o.out);
    write_text(fs::path(o.out) / "summary.md", text);
  }
  out << text;
  return kExitOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const TrainingDivergenceError*>(&e) || dynamic_cast<const RolloutBlowupError*>(&e) ||
      dynamic_cast<const DomainError*>(&e))
    return kExitNumeric;
  if (dynamic_cast<const Error*>(&e) || dynamic_cast<const Json::exception*>(&e) ||
      dynamic_cast<const fs::filesystem_error*>(&e))
    return kExitUsage;
  return kExitFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Counterfactual treatment-policy imitation and discrepancy analysis"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 1;
  app.add_option("--threads", threads, "Worker cap for parallel loops")->check(CLI::PositiveNumber);
  app.set_config("--config", "", "JSON file of option values for the subcommand; command-line flags take precedence");

  SynthOptions synth;
  auto* s = subcommand(app, "synth", "Generate a synthetic cohort with a planted subgroup disparity");
  s->add_option("--n", synth.n, "Number of patients");
  s->add_option("--delta", synth.delta, "Vasopressor disparity for gender=F");
  add_seed(s, synth.seed);
  s->add_option("--features", synth.features, "Number of state features");
  s->add_option("--horizon", synth.horizon, "Timesteps per encounter");
  s->add_option("--missing", synth.missing, "Probability of masking a cell");
  s->add_option("--policy-noise", synth.policy_noise, "Expert logit noise");
  s->add_flag("--intermediate-mortality", synth.intermediate_mortality, "Allow deaths before the last step");
  s->add_option("--out", synth.out, "Output directory")->required();

  PreprocessOptions pre;
  auto* p = subcommand(app, "preprocess", "Impute, normalize and bin a cohort");
  add_cohort_options(p, pre.c);
  p->add_option("--out", pre.c.out, "Output directory")->required();

  TrainBcOptions bc;
  auto* b = subcommand(app, "train-bc", "Train a behavioral-cloning policy");
  add_cohort_options(b, bc.c);
  b->add_option("--mode", bc.mode, "classification or regression");
  b->add_option("--epochs", bc.hp.epochs, "Training epochs");
  b->add_option("--batch", bc.hp.batch, "Minibatch size");
  b->add_option("--lr", bc.hp.lr, "Learning rate");
  b->add_option("--patience", bc.hp.patience, "Early-stopping patience in epochs, 0 disables");
  b->add_option("--hidden", bc.hp.hidden, "Hidden layer widths")->delimiter(',');
  b->add_flag("--no-batch-norm", bc.no_batch_norm, "Disable batch normalization");
  b->add_flag("--full-encounter", bc.hp.full_encounter, "Flatten the whole encounter into one input");
  b->add_option("--optimizer", bc.optimizer, "adam or sgd");
  b->add_option("--out", bc.c.out, "Output directory")->required();

  TrainDynOptions dyn;
  auto* d = subcommand(app, "train-dyn", "Train the recurrent transition model");
  add_cohort_options(d, dyn.c);
  d->add_option("--epochs", dyn.hp.epochs, "Training epochs");
  d->add_option("--batch", dyn.hp.batch, "Minibatch size");
  d->add_option("--lr", dyn.hp.lr, "Learning rate");
  d->add_option("--hidden", dyn.hp.hidden, "Recurrent state width");
  d->add_option("--patience", dyn.hp.patience, "Early-stopping patience in epochs, 0 disables");
  d->add_option("--out", dyn.c.out, "Output directory")->required();

  TrainGailOptions gail;
  auto* g = subcommand(app, "train-gail", "Train a GAIL policy against a transition model");
  add_cohort_options(g, gail.c);
  g->add_option("--dynamics", gail.dynamics, "Transition-model checkpoint");
  g->add_option("--iterations", gail.g.iterations, "Adversarial iterations");
  g->add_option("--episodes", gail.g.episodes, "Rollouts per iteration");
  g->add_option("--horizon", gail.g.horizon, "Rollout length");
  g->add_option("--lr", gail.g.lr, "Policy learning rate");
  g->add_option("--disc-lr", gail.g.disc_lr, "Discriminator learning rate");
  g->add_option("--batch", gail.g.batch, "Discriminator minibatch size");
  g->add_option("--entropy", gail.g.entropy_coef, "Entropy coefficient");
  g->add_option("--kl-beta", gail.g.kl_beta, "Initial KL penalty");
  g->add_option("--kl-target", gail.g.kl_target, "KL level the penalty adapts toward");
  g->add_option("--kl-max", gail.g.kl_max, "Hard per-update KL bound");
  g->add_option("--gamma", gail.g.gamma, "Discount");
  g->add_option("--policy-steps", gail.g.policy_steps, "Gradient steps per policy update");
  g->add_option("--disc-epochs", gail.g.disc_epochs, "Discriminator passes per iteration");
  g->add_option("--convention", gail.convention, "generated-positive or expert-positive");
  g->add_flag("--continuous", gail.continuous, "Gaussian policy over doses instead of 25 classes");
  g->add_flag("--clinical-reward", gail.clinical_reward, "Log the hemodynamic reward of rollouts");
  g->add_option("--out", gail.c.out, "Output directory")->required();

  EvalOptions ev;
  auto* e = subcommand(app, "eval", "Evaluate a BC policy or transition model");
  e->add_option("--model", ev.model, "Checkpoint file")->required();
  add_cohort_options(e, ev.c);
  e->add_option("--split", ev.split, "train, val or test");
  e->add_option("--out", ev.c.out, "Output directory");

  CounterfactualOptions cf;
  auto* c = subcommand(app, "counterfactual", "Apply a policy to another subgroup and measure the deviation");
  c->add_option("--model", cf.model, "BC checkpoint file")->required();
  add_cohort_options(c, cf.c, false);
  c->add_option("--target", cf.target, "Target subgroup, attribute=value")->required();
  c->add_option("--epsilon", cf.r.epsilon, "KL smoothing");
  c->add_option("--bootstrap", cf.r.bootstrap, "Patient-level bootstrap resamples");
  c->add_option("--mmd-cap", cf.r.mmd_cap, "Maximum samples per side for MMD");
  c->add_option("--split", cf.split, "train, val or test");
  c->add_flag("--per-timestep", cf.per_timestep, "Also compute every metric per timestep");
  c->add_flag("--no-svg", cf.no_svg, "Skip the SVG charts");
  c->add_option("--out", cf.c.out, "Output directory")->required();

  ReportCmdOptions rep;
  auto* r = subcommand(app, "report", "Summarize evaluation and discrepancy artifacts");
  r->add_option("--inputs", rep.inputs, "Artifact files or directories")->required();
  r->add_option("--out", rep.out, "Output directory");

  std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
  for (const auto& a : rest)
    if (app.get_subcommand_no_throw(a)) {
      app.config_formatter(std::make_shared<JsonConfig>(a));
      break;
    }
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  }

  try {
    set_thread_count(threads);
    if (s->parsed()) return cmd_synth(synth, s, out);
    if (p->parsed()) return cmd_preprocess(pre, p, out);
    if (b->parsed()) return cmd_train_bc(bc, b, out);
    if (d->parsed()) return cmd_train_dyn(dyn, d, out);
    if (g->parsed()) return cmd_train_gail(gail, g, out);
    if (e->parsed()) return cmd_eval(ev, e, out);
    if (c->parsed()) return cmd_counterfactual(cf, c, out);
    if (r->parsed()) return cmd_report(rep, r, out);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return exit_code_for(ex);
  }
  return kExitUsage;
}

}  // namespace cfpolicy::cli
