#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "cfpolicy/errors.hpp"
#include "cfpolicy/report.hpp"
#include "cfpolicy/svg.hpp"
#include "fixtures.hpp"

using namespace cfpolicy;

namespace {

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

BcPolicy quick_policy(const CohortDataset& c, BcMode mode) {
  BcHyperparams hp;
  hp.epochs = 2;
  hp.batch = 128;
  hp.hidden = {16};
  hp.patience = 0;
  hp.seed = 1;
  return train_bc(c, SubgroupKey{"gender", "M"}, mode, hp).policy;
}

}  // namespace

TEST_CASE("reference constants") {
  const auto& refs = reference_values();
  REQUIRE(refs.size() == 3);
  auto find = [&](const std::string& name) {
    return *std::find_if(refs.begin(), refs.end(), [&](const ReferenceValue& v) { return v.metric == name; });
  };
  CHECK(find("auroc_classification").value == 0.83);
  CHECK(find("auroc_classification").sd == 0.01);
  CHECK(find("rmse_fluid").value == 0.68);
  CHECK(find("rmse_fluid").sd == 0.05);
  CHECK(find("rmse_vaso").value == 0.41);
  CHECK(find("rmse_vaso").sd == 0.06);
}

TEST_CASE("bc evaluation reports carry the reference block") {
  const auto synth = fixtures::small_synth(120, 0.5, 3);
  auto cls = quick_policy(synth.cohort, BcMode::classification);
  const auto data = prepare(filter_subgroup(synth.cohort, SubgroupKey{"gender", "F"}), cls.artifacts,
                            SubgroupKey{"gender", "F"});
  const Json jc = to_json(evaluate_bc(cls, data, Split::test));
  CHECK(jc["format"] == "eval-report");
  CHECK(jc["source_subgroup"] == "gender=M");
  CHECK(jc["subgroup"] == "gender=F");
  CHECK(jc.contains("auroc"));
  CHECK_FALSE(jc.contains("rmse"));
  REQUIRE(jc.contains("reference"));
  CHECK(jc["reference"]["values"].size() == 3);

  auto reg = quick_policy(synth.cohort, BcMode::regression);
  const Json jr = to_json(evaluate_bc(reg, data, Split::test));
  CHECK(jr["rmse_ratio"]["fluid"].get<double>() ==
        doctest::Approx(jr["rmse"]["fluid"].get<double>() / jr["zero_baseline_rmse"]["fluid"].get<double>()));
  CHECK(jr.contains("reference"));

  const std::string md = summarize(jc, "bc_eval.json");
  CHECK(md.rfind("## bc_eval.json", 0) == 0);
  CHECK(md.find("macro one-vs-rest AUROC") != std::string::npos);
  CHECK(md.find("0.83 +/- 0.01") != std::string::npos);
}

TEST_CASE("dynamics evaluation has no reference block") {
  const auto synth = fixtures::small_synth(60, 0.0, 3);
  const auto data = prepare_subgroup(synth.cohort, std::nullopt);
  auto model = TransitionModel::zero(static_cast<int>(data.data.schema.features.size()));
  const Json j = to_json(evaluate_dynamics(model, data, Split::test));
  CHECK(j["model"] == "transition-model");
  CHECK(j["mse"].get<double>() == doctest::Approx(j["zero_delta_mse"].get<double>()).epsilon(1e-12));
  CHECK(j["mse_ratio"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_FALSE(j.contains("reference"));
  CHECK(summarize(j, "dyn").find("ratio 1.0000") != std::string::npos);

  auto empty = data;
  for (auto& s : empty.data.splits) s = Split::train;
  CHECK_THROWS_AS(evaluate_dynamics(model, empty, Split::test), EmptySubgroupError);
}

TEST_CASE("metric table and discrepancy summary") {
  DiscrepancyReport r;
  r.source = SubgroupKey{"gender", "M"};
  r.target = SubgroupKey{"gender", "F"};
  r.split = "test";
  r.policy_mode = "classification";
  r.aggregate.kl = 0.3;
  r.control.kl = 0.1;
  r.control.js = 0.0;
  r.bootstrap = 50;
  r.warnings = {"something odd"};
  const std::string t = metric_table(r);
  CHECK(t.find("gender=M -> target gender=F") != std::string::npos);
  CHECK(t.find("3.000") != std::string::npos);
  CHECK(count(t, "\n") == 2 + 8 + 1 + 1);
  CHECK(t.find("warning: something odd") != std::string::npos);
  const Json j = r;
  CHECK(summarize(j, "report").find("```\n") != std::string::npos);
}

TEST_CASE("summaries of training artifacts") {
  const Json metrics = {{"history", Json::array({{{"train_loss", 1.5}, {"val_loss", 1.7}}})}, {"best_epoch", 1}};
  CHECK(summarize(metrics, "m").find("epochs run: 1, best epoch: 1") != std::string::npos);
  const Json gail = {{"initial_margin", 0.48}, {"final_margin", 0.44}};
  CHECK(summarize(gail, "g").find("trained policy 0.4400") != std::string::npos);
  CHECK_THROWS_AS(summarize(Json{{"x", 1}}, "x"), SchemaError);
}

TEST_CASE("svg rendering") {
  LineChart c;
  c.title = "a < b & c";
  c.series.push_back({"one", {0.0, 1.0, 2.0, 3.0}, false});
  c.series.push_back({"two", {1.0, std::numeric_limits<double>::quiet_NaN(), 2.0, 1.0}, true});
  const std::string svg = render_svg(c);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("a &lt; b &amp; c") != std::string::npos);
  CHECK(count(svg, "<path") == 2);
  CHECK(count(svg, "stroke-dasharray") == 2);  // path and legend swatch
  // one move per segment: 1 for the clean series, 2 for the broken one
  CHECK(count(svg, " M") == 3);
  CHECK(svg.find("nan") == std::string::npos);

  const std::string stacked = render_svg(std::vector<LineChart>{c, c});
  CHECK(stacked.find("height=\"800\"") != std::string::npos);
  CHECK(count(stacked, "<svg") == 1);
}
