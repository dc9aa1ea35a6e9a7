#pragma once

#include <json.hpp>

#include <filesystem>

#include "cfpolicy/cohort.hpp"
#include "cfpolicy/numcore.hpp"
#include "cfpolicy/preprocess.hpp"
#include "cfpolicy/synth.hpp"

namespace cfpolicy {

using Json = nlohmann::json;

void to_json(Json& j, const CohortSchema& schema);
void from_json(const Json& j, CohortSchema& schema);
void to_json(Json& j, const SubgroupKey& key);
void from_json(const Json& j, SubgroupKey& key);
void to_json(Json& j, const FeatureStats& stats);
void from_json(const Json& j, FeatureStats& stats);
void to_json(Json& j, const NormStats& stats);
void from_json(const Json& j, NormStats& stats);
void to_json(Json& j, const DrugBinning& binning);
void from_json(const Json& j, DrugBinning& binning);
void to_json(Json& j, const ActionBinning& binning);
void from_json(const Json& j, ActionBinning& binning);
void to_json(Json& j, const Preprocessing& artifacts);
void from_json(const Json& j, Preprocessing& artifacts);
void to_json(Json& j, const DrugPolicy& policy);
void from_json(const Json& j, DrugPolicy& policy);
void to_json(Json& j, const SubgroupPolicy& policy);
void from_json(const Json& j, SubgroupPolicy& policy);
void to_json(Json& j, const GroundTruth& truth);
void from_json(const Json& j, GroundTruth& truth);
void to_json(Json& j, const SynthConfig& config);
void from_json(const Json& j, SynthConfig& config);

Json subgroup_to_json(const Subgroup& subgroup);
Subgroup subgroup_from_json(const Json& j);

// Reads a JSON document; wraps parse failures in SchemaError naming the file.
Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& doc);

}  // namespace cfpolicy

namespace cfpolicy::nn {

// {"rows", "cols", "data"} with data in row-major order.
Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);
void to_json(Json& j, const MlpSpec& spec);
void from_json(const Json& j, MlpSpec& spec);
void to_json(Json& j, const OptimizerConfig& config);
void from_json(const Json& j, OptimizerConfig& config);

Json mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const Json& j);
Json recurrent_to_json(const RecurrentRegressor& net);
RecurrentRegressor recurrent_from_json(const Json& j);

}  // namespace cfpolicy::nn
