#include "cfpolicy/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "cfpolicy/errors.hpp"
#include "cfpolicy/json.hpp"
#include "cfpolicy/rng.hpp"

namespace cfpolicy {

std::string to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::vital: return "vital";
    case FeatureKind::lab: return "lab";
    case FeatureKind::demographic: return "demographic";
    case FeatureKind::binary: return "binary";
  }
  return "vital";
}

FeatureKind parse_feature_kind(std::string_view text) {
  if (text == "vital") return FeatureKind::vital;
  if (text == "lab") return FeatureKind::lab;
  if (text == "demographic") return FeatureKind::demographic;
  if (text == "binary") return FeatureKind::binary;
  throw SchemaError("unknown feature kind '" + std::string(text) + "'");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: break;
  }
  return "unassigned";
}

int FeatureSchema::index_of(std::string_view name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

void FeatureSchema::validate() const {
  if (names.empty()) throw SchemaError("schema declares no features");
  if (kinds.size() != names.size() || log_normalized.size() != names.size())
    throw SchemaError("feature schema columns have inconsistent lengths");
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) throw SchemaError("empty feature name");
    if (!seen.insert(n).second) throw SchemaError("duplicate feature name '" + n + "'");
  }
}

const AttributeDecl* CohortSchema::find_attribute(std::string_view name) const {
  for (const auto& a : attributes)
    if (a.name == name) return &a;
  return nullptr;
}

void CohortSchema::validate() const {
  features.validate();
  std::set<std::string> seen;
  for (const auto& a : attributes) {
    if (!seen.insert(a.name).second) throw SchemaError("duplicate attribute '" + a.name + "'");
    if (a.values.empty()) throw SchemaError("attribute '" + a.name + "' declares no values");
    if (features.index_of(a.name) >= 0)
      throw SchemaError("attribute '" + a.name + "' collides with a feature name");
  }
}

SubgroupKey SubgroupKey::parse(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos || eq == 0 || eq + 1 == text.size())
    throw ConfigError("subgroup must look like attribute=value, got '" + std::string(text) + "'");
  return {std::string(text.substr(0, eq)), std::string(text.substr(eq + 1))};
}

Subgroup parse_subgroup(std::string_view text) {
  if (text.empty() || text == "all") return std::nullopt;
  return SubgroupKey::parse(text);
}

std::string subgroup_label(const Subgroup& subgroup) {
  return subgroup ? subgroup->to_string() : std::string("all");
}

void PatientTrajectory::validate(int feature_count) const {
  if (states.rows() < 1) throw IntegrityError("trajectory " + id + " has no timesteps");
  if (states.cols() != feature_count)
    throw IntegrityError("trajectory " + id + " has wrong feature count");
  if (actions.rows() != states.rows())
    throw IntegrityError("trajectory " + id + " has mismatched action rows");
  for (Eigen::Index t = 0; t < actions.rows(); ++t)
    for (int d = 0; d < kActionDims; ++d)
      if (!(actions(t, d) >= 0.0) || !std::isfinite(actions(t, d)))
        throw IntegrityError("trajectory " + id + " has a negative or non-finite dose");
  if (mortality_step) {
    if (*mortality_step < 0 || *mortality_step >= length())
      throw IntegrityError("trajectory " + id + " has mortality_step outside [0, T)");
    if (outcome_alive) throw IntegrityError("trajectory " + id + " has mortality_step but outcome_alive");
  }
}

std::vector<std::size_t> CohortDataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == split) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// schema file

void to_json(nlohmann::json& j, const CohortSchema& schema) {
  j = nlohmann::json::object();
  auto features = nlohmann::json::array();
  for (int i = 0; i < schema.features.size(); ++i) {
    features.push_back({{"name", schema.features.names[i]},
                        {"kind", to_string(schema.features.kinds[i])},
                        {"log", static_cast<bool>(schema.features.log_normalized[i])}});
  }
  j["features"] = std::move(features);
  auto attributes = nlohmann::json::array();
  for (const auto& a : schema.attributes) attributes.push_back({{"name", a.name}, {"values", a.values}});
  j["attributes"] = std::move(attributes);
}

void from_json(const nlohmann::json& j, CohortSchema& schema) {
  schema = {};
  for (const auto& f : j.at("features")) {
    schema.features.names.push_back(f.at("name").get<std::string>());
    schema.features.kinds.push_back(parse_feature_kind(f.value("kind", std::string("vital"))));
    schema.features.log_normalized.push_back(f.value("log", false));
  }
  if (j.contains("attributes")) {
    for (const auto& a : j.at("attributes"))
      schema.attributes.push_back({a.at("name").get<std::string>(), a.at("values").get<std::vector<std::string>>()});
  }
}

CohortSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open schema file " + path.string(), 0);
  CohortSchema schema;
  try {
    schema = nlohmann::json::parse(in).get<CohortSchema>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("invalid schema file " + path.string() + ": " + e.what(), 0);
  }
  schema.validate();
  return schema;
}

void save_schema(const std::filesystem::path& path, const CohortSchema& schema) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << nlohmann::json(schema).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_real(std::string_view field, std::size_t line, std::string_view column) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v))
    throw ParseError("column " + std::string(column) + ": not a number '" + std::string(field) + "'", line);
  return v;
}

long parse_int(std::string_view field, std::size_t line, std::string_view column) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw ParseError("column " + std::string(column) + ": not an integer '" + std::string(field) + "'", line);
  return v;
}

bool parse_flag(std::string_view field, std::size_t line) {
  if (field == "1" || field == "true") return true;
  if (field == "0" || field == "false") return false;
  throw ParseError("column outcome_alive: expected 0/1, got '" + std::string(field) + "'", line);
}

std::vector<std::string> expected_header(const CohortSchema& schema) {
  std::vector<std::string> h{"id", "timestep"};
  for (const auto& a : schema.attributes) h.push_back(a.name);
  for (const auto& n : schema.features.names) h.push_back(n);
  for (const char* c : {"action_fluid", "action_vaso", "mortality_step", "outcome_alive"}) h.emplace_back(c);
  return h;
}

struct RowRecord {
  long timestep;
  std::vector<double> features;
  double fluid, vaso;
  std::optional<int> mortality_step;
  bool alive;
  std::map<std::string, std::string> attributes;
  std::size_t line;
};

}  // namespace

CohortDataset read_cohort(std::istream& in, const CohortSchema& schema) {
  schema.validate();
  const auto header = expected_header(schema);
  const int m = schema.features.size();
  const std::size_t n_attr = schema.attributes.size();

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("empty cohort file", 1);
  ++line_no;
  {
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) throw ParseError("header has wrong number of columns", line_no);
    for (std::size_t i = 0; i < header.size(); ++i)
      if (fields[i] != header[i])
        throw ParseError("header column " + std::to_string(i + 1) + " is '" + std::string(fields[i]) +
                             "', expected '" + header[i] + "'",
                         line_no);
  }

  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<RowRecord>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()),
                       line_no);
    if (fields[0].empty()) throw ParseError("empty id", line_no);
    RowRecord rec;
    rec.line = line_no;
    rec.timestep = parse_int(fields[1], line_no, "timestep");
    if (rec.timestep < 0) throw ParseError("negative timestep", line_no);
    for (std::size_t a = 0; a < n_attr; ++a) {
      const auto& decl = schema.attributes[a];
      const std::string value(fields[2 + a]);
      if (std::find(decl.values.begin(), decl.values.end(), value) == decl.values.end())
        throw IntegrityError("line " + std::to_string(line_no) + ": unknown value '" + value + "' for attribute " +
                             decl.name);
      rec.attributes[decl.name] = value;
    }
    rec.features.resize(m);
    for (int j = 0; j < m; ++j) {
      const auto f = fields[2 + n_attr + j];
      rec.features[j] = f.empty() ? kMissing : parse_real(f, line_no, schema.features.names[j]);
    }
    const std::size_t base = 2 + n_attr + m;
    if (fields[base].empty() || fields[base + 1].empty()) throw ParseError("action fields may not be empty", line_no);
    rec.fluid = parse_real(fields[base], line_no, "action_fluid");
    rec.vaso = parse_real(fields[base + 1], line_no, "action_vaso");
    if (rec.fluid < 0 || rec.vaso < 0)
      throw IntegrityError("line " + std::to_string(line_no) + ": negative dose for id " + std::string(fields[0]));
    if (!fields[base + 2].empty()) rec.mortality_step = static_cast<int>(parse_int(fields[base + 2], line_no, "mortality_step"));
    rec.alive = parse_flag(fields[base + 3], line_no);

    std::string id(fields[0]);
    auto [it, inserted] = rows.try_emplace(id);
    if (inserted) order.push_back(id);
    it->second.push_back(std::move(rec));
  }

  CohortDataset cohort;
  cohort.schema = schema;
  cohort.trajectories.reserve(order.size());
  for (const auto& id : order) {
    auto& recs = rows[id];
    std::stable_sort(recs.begin(), recs.end(), [](const RowRecord& a, const RowRecord& b) { return a.timestep < b.timestep; });
    for (std::size_t k = 0; k < recs.size(); ++k) {
      if (k > 0 && recs[k].timestep == recs[k - 1].timestep)
        throw IntegrityError("duplicate (id, timestep) = (" + id + ", " + std::to_string(recs[k].timestep) +
                             ") at line " + std::to_string(recs[k].line));
      if (recs[k].timestep != static_cast<long>(k))
        throw IntegrityError("trajectory " + id + " has non-contiguous timesteps (missing t=" + std::to_string(k) + ")");
    }
    PatientTrajectory traj;
    traj.id = id;
    traj.attributes = recs.front().attributes;
    traj.mortality_step = recs.front().mortality_step;
    traj.outcome_alive = recs.front().alive;
    const auto T = static_cast<Eigen::Index>(recs.size());
    traj.states.resize(T, m);
    traj.actions.resize(T, 2);
    for (Eigen::Index t = 0; t < T; ++t) {
      const auto& r = recs[t];
      if (r.attributes != traj.attributes || r.mortality_step != traj.mortality_step || r.alive != traj.outcome_alive)
        throw IntegrityError("trajectory " + id + " has inconsistent per-encounter fields at line " +
                             std::to_string(r.line));
      for (int j = 0; j < m; ++j) traj.states(t, j) = r.features[j];
      traj.actions(t, 0) = r.fluid;
      traj.actions(t, 1) = r.vaso;
    }
    traj.validate(m);
    cohort.trajectories.push_back(std::move(traj));
  }
  cohort.splits.assign(cohort.trajectories.size(), Split::unassigned);
  return cohort;
}

CohortDataset load_cohort(const std::filesystem::path& path, const CohortSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open cohort file " + path.string(), 0);
  return read_cohort(in, schema);
}

std::string format_double(double v) {
  if (is_missing(v)) return {};
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_cohort(std::ostream& out, const CohortDataset& cohort, const ExtraColumn* extra) {
  const auto header = expected_header(cohort.schema);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  if (extra) out << ',' << extra->name;
  out << '\n';
  for (std::size_t k = 0; k < cohort.trajectories.size(); ++k) {
    const auto& traj = cohort.trajectories[k];
    for (int t = 0; t < traj.length(); ++t) {
      out << traj.id << ',' << t;
      for (const auto& a : cohort.schema.attributes) {
        const auto it = traj.attributes.find(a.name);
        out << ',' << (it == traj.attributes.end() ? std::string() : it->second);
      }
      for (Eigen::Index j = 0; j < traj.states.cols(); ++j) out << ',' << format_double(traj.states(t, j));
      out << ',' << format_double(traj.actions(t, 0)) << ',' << format_double(traj.actions(t, 1)) << ',';
      if (traj.mortality_step) out << *traj.mortality_step;
      out << ',' << (traj.outcome_alive ? 1 : 0);
      if (extra) out << ',' << format_double(extra->values.at(k).at(t));
      out << '\n';
    }
  }
}

void write_cohort(const std::filesystem::path& path, const CohortDataset& cohort) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_cohort(out, cohort);
}

// ---------------------------------------------------------------------------

CohortDataset assign_splits(const CohortDataset& cohort, std::uint64_t seed) {
  if (cohort.trajectories.empty()) throw PreconditionError("cannot split an empty cohort");
  const std::size_t n = cohort.size();
  const auto n_train = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n))));
  Rng rng(seed);
  const auto order = rng.permutation(n);
  CohortDataset out = cohort;
  out.splits.assign(n, Split::test);
  for (std::size_t r = 0; r < n; ++r) {
    const auto i = order[r];
    out.splits[i] = r < n_train ? Split::train : (r < n_train + n_val ? Split::val : Split::test);
  }
  return out;
}

CohortDataset filter_subgroup(const CohortDataset& cohort, const SubgroupKey& key) {
  if (!cohort.schema.find_attribute(key.attribute))
    throw SchemaError("attribute '" + key.attribute + "' is not declared in this cohort");
  CohortDataset out;
  out.schema = cohort.schema;
  out.norm_stats = cohort.norm_stats;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& attrs = cohort.trajectories[i].attributes;
    const auto it = attrs.find(key.attribute);
    if (it != attrs.end() && it->second == key.value) {
      out.trajectories.push_back(cohort.trajectories[i]);
      out.splits.push_back(i < cohort.splits.size() ? cohort.splits[i] : Split::unassigned);
    }
  }
  if (out.trajectories.empty()) throw EmptySubgroupError("subgroup " + key.to_string() + " is empty");
  return out;
}

CohortDataset filter_subgroup(const CohortDataset& cohort, const Subgroup& subgroup) {
  return subgroup ? filter_subgroup(cohort, *subgroup) : cohort;
}

CohortDataset select_split(const CohortDataset& cohort, Split split) {
  CohortDataset out;
  out.schema = cohort.schema;
  out.norm_stats = cohort.norm_stats;
  for (const auto i : cohort.indices(split)) {
    out.trajectories.push_back(cohort.trajectories[i]);
    out.splits.push_back(split);
  }
  return out;
}

}  // namespace cfpolicy
