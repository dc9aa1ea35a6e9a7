#include <fstream>

#include "cfpolicy/errors.hpp"
#include "cfpolicy/json.hpp"

namespace cfpolicy {

void to_json(Json& j, const SubgroupKey& key) { j = key.to_string(); }

void from_json(const Json& j, SubgroupKey& key) { key = SubgroupKey::parse(j.get<std::string>()); }

Json subgroup_to_json(const Subgroup& subgroup) { return subgroup_label(subgroup); }

Subgroup subgroup_from_json(const Json& j) { return parse_subgroup(j.get<std::string>()); }

void to_json(Json& j, const FeatureStats& s) {
  j = {{"mean", s.mean}, {"stddev", s.stddev}, {"log", s.log_flag}, {"passthrough", s.passthrough}};
}

void from_json(const Json& j, FeatureStats& s) {
  s.mean = j.at("mean").get<double>();
  s.stddev = j.at("stddev").get<double>();
  s.log_flag = j.value("log", false);
  s.passthrough = j.value("passthrough", false);
}

void to_json(Json& j, const NormStats& s) {
  j = {{"features", s.features}, {"actions", s.actions}};
}

void from_json(const Json& j, NormStats& s) {
  s.features = j.at("features").get<std::vector<FeatureStats>>();
  s.actions = j.at("actions").get<std::array<FeatureStats, 2>>();
}

void to_json(Json& j, const DrugBinning& b) { j = {{"cutoffs", b.cutoffs}, {"representatives", b.representatives}}; }

void from_json(const Json& j, DrugBinning& b) {
  b.cutoffs = j.at("cutoffs").get<std::array<double, 4>>();
  b.representatives = j.at("representatives").get<std::array<double, 4>>();
}

void to_json(Json& j, const ActionBinning& b) {
  j = {{"fluid", b.fluid}, {"vaso", b.vaso}, {"quantile_convention", "linear"}};
}

void from_json(const Json& j, ActionBinning& b) {
  b.fluid = j.at("fluid").get<DrugBinning>();
  b.vaso = j.at("vaso").get<DrugBinning>();
}

void to_json(Json& j, const Preprocessing& p) { j = {{"norm", p.norm}, {"binning", p.binning}}; }

void from_json(const Json& j, Preprocessing& p) {
  p.norm = j.at("norm").get<NormStats>();
  p.binning = j.at("binning").get<ActionBinning>();
}

void to_json(Json& j, const DrugPolicy& p) {
  j = {{"slope", p.slope}, {"center", p.center}, {"offset", p.offset}, {"max_dose", p.max_dose}};
}

void from_json(const Json& j, DrugPolicy& p) {
  p.slope = j.at("slope").get<double>();
  p.center = j.at("center").get<double>();
  p.offset = j.at("offset").get<double>();
  p.max_dose = j.at("max_dose").get<double>();
}

void to_json(Json& j, const SubgroupPolicy& p) { j = {{"fluid", p.fluid}, {"vaso", p.vaso}}; }

void from_json(const Json& j, SubgroupPolicy& p) {
  p.fluid = j.at("fluid").get<DrugPolicy>();
  p.vaso = j.at("vaso").get<DrugPolicy>();
}

void to_json(Json& j, const GroundTruth& t) {
  j = {{"severity", t.severity},
       {"policies", t.policies},
       {"policy_noise", t.policy_noise},
       {"dose_noise", t.dose_noise},
       {"disparity_group", t.disparity_group},
       {"disparity_delta", t.disparity_delta}};
}

void from_json(const Json& j, GroundTruth& t) {
  t.severity = j.at("severity").get<std::vector<std::vector<double>>>();
  t.policies = j.at("policies").get<std::map<std::string, SubgroupPolicy>>();
  t.policy_noise = j.at("policy_noise").get<double>();
  t.dose_noise = j.at("dose_noise").get<double>();
  t.disparity_group = j.at("disparity_group").get<SubgroupKey>();
  t.disparity_delta = j.at("disparity_delta").get<double>();
}

void to_json(Json& j, const SynthConfig& c) {
  Json eth = Json::array();
  for (const auto& [name, p] : c.ethnicity) eth.push_back({{"value", name}, {"fraction", p}});
  j = {{"n_patients", c.n_patients},
       {"T", c.T},
       {"n_features", c.n_features},
       {"seed", c.seed},
       {"disparity_delta", c.disparity_delta},
       {"disparity_group", c.disparity_group},
       {"severity", {{"decay", c.severity.decay}, {"treatment_effect", c.severity.treatment_effect}, {"noise_sd", c.severity.noise_sd}}},
       {"mortality_slope", c.mortality_slope},
       {"mortality_intercept", c.mortality_intercept},
       {"intermediate_mortality", c.intermediate_mortality},
       {"onset", c.onset},
       {"female_fraction", c.female_fraction},
       {"ethnicity", eth},
       {"policy_noise", c.policy_noise},
       {"dose_noise", c.dose_noise}};
}

// Missing keys keep their defaults so partial config files are accepted.
void from_json(const Json& j, SynthConfig& c) {
  c.n_patients = j.value("n_patients", c.n_patients);
  c.T = j.value("T", c.T);
  c.n_features = j.value("n_features", c.n_features);
  c.seed = j.value("seed", c.seed);
  c.disparity_delta = j.value("disparity_delta", c.disparity_delta);
  if (j.contains("disparity_group")) c.disparity_group = j.at("disparity_group").get<SubgroupKey>();
  if (j.contains("severity")) {
    const auto& s = j.at("severity");
    c.severity.decay = s.value("decay", c.severity.decay);
    c.severity.treatment_effect = s.value("treatment_effect", c.severity.treatment_effect);
    c.severity.noise_sd = s.value("noise_sd", c.severity.noise_sd);
  }
  c.mortality_slope = j.value("mortality_slope", c.mortality_slope);
  c.mortality_intercept = j.value("mortality_intercept", c.mortality_intercept);
  c.intermediate_mortality = j.value("intermediate_mortality", c.intermediate_mortality);
  c.onset = j.value("onset", c.onset);
  c.female_fraction = j.value("female_fraction", c.female_fraction);
  if (j.contains("ethnicity")) {
    c.ethnicity.clear();
    for (const auto& e : j.at("ethnicity"))
      c.ethnicity.emplace_back(e.at("value").get<std::string>(), e.at("fraction").get<double>());
  }
  c.policy_noise = j.value("policy_noise", c.policy_noise);
  c.dose_noise = j.value("dose_noise", c.dose_noise);
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw SchemaError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& doc) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace cfpolicy

namespace cfpolicy::nn {

namespace {

constexpr int kCheckpointVersion = 1;

void check_header(const Json& j, const char* kind) {
  if (j.value("format", std::string()) != kind)
    throw SchemaError(std::string("checkpoint is not a '") + kind + "' network");
  if (j.value("version", 0) != kCheckpointVersion) throw SchemaError("unsupported checkpoint version");
}

void load_param(const Json& j, ParamTensor& p) {
  Matrix m = matrix_from_json(j.at(p.name));
  if (m.rows() != p.value.rows() || m.cols() != p.value.cols())
    throw SchemaError("checkpoint parameter '" + p.name + "' has the wrong shape");
  p.value = std::move(m);
  p.zero_grad();
}

Json params_json(const ParamRefs& params) {
  Json j = Json::object();
  for (const auto* p : params) j[p->name] = matrix_to_json(p->value);
  return j;
}

}  // namespace

Json matrix_to_json(const Matrix& m) {
  Json data = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const Json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols))
    throw SchemaError("matrix payload does not match its shape");
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  return m;
}

void to_json(Json& j, const MlpSpec& s) {
  j = {{"input", s.input},         {"hidden", s.hidden},         {"output", s.output},
       {"activation", "relu"},     {"batch_norm", s.batch_norm}, {"head", to_string(s.head)}};
}

void from_json(const Json& j, MlpSpec& s) {
  s.input = j.at("input").get<int>();
  s.hidden = j.at("hidden").get<std::vector<int>>();
  s.output = j.at("output").get<int>();
  if (j.value("activation", std::string("relu")) != "relu") throw SchemaError("unsupported activation");
  s.activation = Activation::relu;
  s.batch_norm = j.at("batch_norm").get<bool>();
  s.head = parse_head(j.at("head").get<std::string>());
  s.validate();
}

void to_json(Json& j, const OptimizerConfig& c) {
  j = {{"kind", to_string(c.kind)}, {"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}};
}

void from_json(const Json& j, OptimizerConfig& c) {
  c.kind = parse_optimizer(j.value("kind", to_string(c.kind)));
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
}

Json mlp_to_json(const Mlp& net) {
  Json layers = Json::array();
  auto& dense = const_cast<Mlp&>(net).dense_layers();
  auto& norms = const_cast<Mlp&>(net).norm_layers();
  for (std::size_t l = 0; l < dense.size(); ++l) {
    Json layer = {{"dense", params_json(dense[l].params())}};
    if (l < norms.size()) {
      Json bn = params_json(norms[l].params());
      bn["running_mean"] = matrix_to_json(norms[l].running_mean);
      bn["running_var"] = matrix_to_json(norms[l].running_var);
      layer["batch_norm"] = std::move(bn);
    }
    layers.push_back(std::move(layer));
  }
  return {{"format", "mlp"}, {"version", kCheckpointVersion}, {"spec", net.spec()}, {"layers", std::move(layers)}};
}

Mlp mlp_from_json(const Json& j) {
  check_header(j, "mlp");
  Mlp net(j.at("spec").get<MlpSpec>(), 0);
  const auto& layers = j.at("layers");
  if (layers.size() != net.dense_layers().size()) throw SchemaError("checkpoint layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (auto* p : net.dense_layers()[l].params()) load_param(layers[l].at("dense"), *p);
    if (l < net.norm_layers().size()) {
      auto& bn = net.norm_layers()[l];
      const auto& jb = layers[l].at("batch_norm");
      for (auto* p : bn.params()) load_param(jb, *p);
      bn.running_mean = matrix_from_json(jb.at("running_mean")).row(0);
      bn.running_var = matrix_from_json(jb.at("running_var")).row(0);
    }
  }
  return net;
}

Json recurrent_to_json(const RecurrentRegressor& net) {
  auto& n = const_cast<RecurrentRegressor&>(net);
  return {{"format", "lstm"},
          {"version", kCheckpointVersion},
          {"input", n.cell.input()},
          {"hidden", n.cell.hidden()},
          {"output", n.head.out()},
          {"cell", params_json(n.cell.params())},
          {"head", params_json(n.head.params())}};
}

RecurrentRegressor recurrent_from_json(const Json& j) {
  check_header(j, "lstm");
  RecurrentRegressor net(j.at("input").get<int>(), j.at("hidden").get<int>(), j.at("output").get<int>());
  for (auto* p : net.cell.params()) load_param(j.at("cell"), *p);
  for (auto* p : net.head.params()) load_param(j.at("head"), *p);
  return net;
}

}  // namespace cfpolicy::nn
