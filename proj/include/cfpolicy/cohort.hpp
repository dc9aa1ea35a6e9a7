#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cfpolicy/norm_stats.hpp"

namespace cfpolicy {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ActionMatrix = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

// In memory a missing cell is a quiet NaN; on disk it is an empty field.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return v != v; }

inline constexpr int kActionDims = 2;
inline constexpr int kFluid = 0;
inline constexpr int kVaso = 1;

enum class FeatureKind { vital, lab, demographic, binary };

std::string to_string(FeatureKind kind);
FeatureKind parse_feature_kind(std::string_view text);

struct FeatureSchema {
  std::vector<std::string> names;
  std::vector<FeatureKind> kinds;
  std::vector<bool> log_normalized;

  int size() const { return static_cast<int>(names.size()); }
  // -1 when absent
  int index_of(std::string_view name) const;
  void validate() const;

  bool operator==(const FeatureSchema&) const = default;
};

struct AttributeDecl {
  std::string name;
  std::vector<std::string> values;

  bool operator==(const AttributeDecl&) const = default;
};

// Contents of the sidecar schema file: features plus declared attributes.
struct CohortSchema {
  FeatureSchema features;
  std::vector<AttributeDecl> attributes;

  const AttributeDecl* find_attribute(std::string_view name) const;
  void validate() const;

  bool operator==(const CohortSchema&) const = default;
};

struct SubgroupKey {
  std::string attribute;
  std::string value;

  // "gender=F"
  static SubgroupKey parse(std::string_view text);
  std::string to_string() const { return attribute + "=" + value; }

  bool operator==(const SubgroupKey&) const = default;
};

// std::nullopt stands for the whole cohort ("all").
using Subgroup = std::optional<SubgroupKey>;
Subgroup parse_subgroup(std::string_view text);
std::string subgroup_label(const Subgroup& subgroup);

struct PatientTrajectory {
  std::string id;
  std::map<std::string, std::string> attributes;
  RowMatrix states;      // T x M, possibly with missing cells
  ActionMatrix actions;  // T x 2, fluid volume and norepinephrine-equivalent rate
  std::optional<int> mortality_step;
  bool outcome_alive = true;

  int length() const { return static_cast<int>(states.rows()); }
  void validate(int feature_count) const;
};

enum class Split : std::uint8_t { unassigned, train, val, test };

std::string to_string(Split split);

struct CohortDataset {
  CohortSchema schema;
  std::vector<PatientTrajectory> trajectories;
  std::vector<Split> splits;  // parallel to trajectories
  std::optional<NormStats> norm_stats;

  std::size_t size() const { return trajectories.size(); }
  std::vector<std::size_t> indices(Split split) const;
  std::size_t count(Split split) const { return indices(split).size(); }
};

CohortSchema load_schema(const std::filesystem::path& path);
void save_schema(const std::filesystem::path& path, const CohortSchema& schema);

CohortDataset load_cohort(const std::filesystem::path& path, const CohortSchema& schema);
CohortDataset read_cohort(std::istream& in, const CohortSchema& schema);

// One extra numeric column appended after outcome_alive, indexed [trajectory][timestep].
struct ExtraColumn {
  std::string name;
  std::vector<std::vector<double>> values;
};

void write_cohort(std::ostream& out, const CohortDataset& cohort, const ExtraColumn* extra = nullptr);
void write_cohort(const std::filesystem::path& path, const CohortDataset& cohort);

// Shortest representation that parses back to the identical double.
std::string format_double(double v);

// Seeded 60/20/20 trajectory-level split.
CohortDataset assign_splits(const CohortDataset& cohort, std::uint64_t seed);

// Trajectories whose attribute matches; splits and norm_stats are inherited.
CohortDataset filter_subgroup(const CohortDataset& cohort, const SubgroupKey& key);
CohortDataset filter_subgroup(const CohortDataset& cohort, const Subgroup& subgroup);

CohortDataset select_split(const CohortDataset& cohort, Split split);

}  // namespace cfpolicy
