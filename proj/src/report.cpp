#include "cfpolicy/report.hpp"

#include <cstdio>
#include <sstream>

#include "cfpolicy/errors.hpp"

namespace cfpolicy {

const std::vector<ReferenceValue>& reference_values() {
  static const std::vector<ReferenceValue> values{
      {"auroc_classification", 0.83, 0.01},
      {"rmse_fluid", 0.68, 0.05},
      {"rmse_vaso", 0.41, 0.06},
  };
  return values;
}

EvalReport evaluate_bc(BcPolicy& policy, const PreparedCohort& data, Split split) {
  EvalReport r;
  r.model = "bc-policy";
  r.mode = to_string(policy.mode);
  r.source = subgroup_label(policy.source);
  r.subgroup = subgroup_label(data.source);
  r.split = to_string(split);
  r.trajectories = data.data.count(split);
  if (r.trajectories == 0) throw EmptySubgroupError("no " + r.split + "-split trajectories to evaluate");
  if (policy.mode == BcMode::classification) {
    r.auroc = eval_auroc(policy, data, split);
  } else {
    r.rmse = eval_rmse(policy, data, split);
    r.zero_rmse = zero_baseline_rmse(data, split);
  }
  return r;
}

EvalReport evaluate_dynamics(TransitionModel& model, const PreparedCohort& data, Split split) {
  EvalReport r;
  r.model = "transition-model";
  r.mode = "dynamics";
  r.source = subgroup_label(model.source);
  r.subgroup = subgroup_label(data.source);
  r.split = to_string(split);
  r.trajectories = data.data.count(split);
  if (r.trajectories == 0) throw EmptySubgroupError("no " + r.split + "-split trajectories to evaluate");
  r.mse = dynamics_mse(model, data, split);
  r.zero_mse = zero_delta_mse(data, split);
  return r;
}

Json to_json(const EvalReport& r) {
  Json j = {{"format", "eval-report"},
            {"version", 1},
            {"model", r.model},
            {"mode", r.mode},
            {"source_subgroup", r.source},
            {"subgroup", r.subgroup},
            {"split", r.split},
            {"trajectories", r.trajectories},
            {"quantile_convention", "linear"}};
  if (r.auroc) {
    j["auroc"] = {{"macro", r.auroc->macro},
                  {"classes", r.auroc->classes},
                  {"per_class", r.auroc->per_class},
                  {"skipped", r.auroc->skipped}};
  }
  if (r.rmse) {
    j["rmse"] = {{"fluid", r.rmse->fluid}, {"vaso", r.rmse->vaso}};
    j["zero_baseline_rmse"] = {{"fluid", r.zero_rmse->fluid}, {"vaso", r.zero_rmse->vaso}};
    j["rmse_ratio"] = {{"fluid", r.rmse->fluid / r.zero_rmse->fluid}, {"vaso", r.rmse->vaso / r.zero_rmse->vaso}};
  }
  if (r.mse) {
    j["mse"] = *r.mse;
    j["zero_delta_mse"] = *r.zero_mse;
    j["mse_ratio"] = *r.mse / *r.zero_mse;
  }
  if (r.model == "bc-policy") {
    Json ref = Json::array();
    for (const auto& v : reference_values()) ref.push_back({{"metric", v.metric}, {"value", v.value}, {"sd", v.sd}});
    j["reference"] = {{"values", ref}, {"note", "published results on a credentialed ICU cohort; not reproducible here"}};
  }
  return j;
}

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

}  // namespace

std::string metric_table(const DiscrepancyReport& r) {
  std::ostringstream out;
  out << "source " << subgroup_label(r.source) << " -> target " << subgroup_label(r.target) << " (" << r.split
      << " split, " << r.policy_mode << ")\n";
  out << pad("metric", 12) << pad("target", 14) << pad("control", 14) << "ratio\n";
  const std::pair<const char*, std::pair<double, double>> rows[] = {
      {"kl", {r.aggregate.kl, r.control.kl}},
      {"kl_reverse", {r.aggregate.kl_reverse, r.control.kl_reverse}},
      {"js", {r.aggregate.js, r.control.js}},
      {"kl_argmax", {r.aggregate.kl_argmax, r.control.kl_argmax}},
      {"js_argmax", {r.aggregate.js_argmax, r.control.js_argmax}},
      {"mmd", {r.aggregate.mmd, r.control.mmd}},
      {"w1_fluid", {r.aggregate.w1_fluid, r.control.w1_fluid}},
      {"w1_vaso", {r.aggregate.w1_vaso, r.control.w1_vaso}},
  };
  for (const auto& [name, v] : rows) {
    out << pad(name, 12) << pad(fixed(v.first, 6), 14) << pad(fixed(v.second, 6), 14)
        << (v.second > 0.0 ? fixed(v.first / v.second, 3) : std::string("-")) << "\n";
  }
  out << "kl bootstrap sd: target " << fixed(r.kl_bootstrap_sd, 6) << ", control " << fixed(r.control_kl_bootstrap_sd, 6)
      << " (" << r.bootstrap << " resamples)\n";
  for (const auto& w : r.warnings) out << "warning: " << w << "\n";
  return out.str();
}

std::string summarize(const Json& a, const std::string& name) {
  std::ostringstream out;
  const std::string format = a.value("format", std::string());
  out << "## " << name << "\n\n";
  if (format == "eval-report") {
    out << "- model: " << a.at("model").get<std::string>() << " (" << a.at("mode").get<std::string>() << ")\n";
    out << "- source subgroup: " << a.at("source_subgroup").get<std::string>()
        << ", evaluated on: " << a.at("subgroup").get<std::string>() << ", " << a.at("split").get<std::string>()
        << " split, " << a.at("trajectories").get<std::size_t>() << " trajectories\n";
    if (a.contains("auroc")) out << "- macro one-vs-rest AUROC: " << fixed(a["auroc"]["macro"].get<double>()) << "\n";
    if (a.contains("rmse")) {
      out << "- RMSE fluid " << fixed(a["rmse"]["fluid"].get<double>()) << " (zero baseline "
          << fixed(a["zero_baseline_rmse"]["fluid"].get<double>()) << "), vaso " << fixed(a["rmse"]["vaso"].get<double>())
          << " (zero baseline " << fixed(a["zero_baseline_rmse"]["vaso"].get<double>()) << ")\n";
    }
    if (a.contains("mse")) {
      out << "- one-step MSE " << fixed(a["mse"].get<double>()) << ", zero-delta baseline "
          << fixed(a["zero_delta_mse"].get<double>()) << ", ratio " << fixed(a["mse_ratio"].get<double>()) << "\n";
    }
    if (a.contains("reference")) {
      out << "- reference (not reproducible here):";
      for (const auto& v : a["reference"]["values"])
        out << " " << v["metric"].get<std::string>() << " " << fixed(v["value"].get<double>(), 2) << " +/- "
            << fixed(v["sd"].get<double>(), 2) << ";";
      out << "\n";
    }
  } else if (format == "discrepancy-report") {
    out << "```\n" << metric_table(a.get<DiscrepancyReport>()) << "```\n";
  } else if (a.contains("history")) {
    const auto& h = a["history"];
    out << "- epochs run: " << h.size() << ", best epoch: " << a.value("best_epoch", 0) << "\n";
    if (!h.empty())
      out << "- final train loss " << fixed(h.back()["train_loss"].get<double>()) << ", val loss "
          << fixed(h.back()["val_loss"].get<double>()) << "\n";
  } else if (a.contains("initial_margin")) {
    out << "- mean |D - 0.5|: initial policy " << fixed(a["initial_margin"].get<double>()) << ", trained policy "
        << fixed(a["final_margin"].get<double>()) << "\n";
  } else {
    throw SchemaError("cannot summarize artifact '" + name + "'");
  }
  out << "\n";
  return out.str();
}

}  // namespace cfpolicy
