#pragma once

// nlohmann::json conversions for core types. Internal to the core library;
// public entry points take and return JSON text.

#include <json.hpp>

#include "scs/model.hpp"

namespace scs::detail {

using nlohmann::json;

json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const json& j);

json to_json(const PlantedConcept& planted);
// `direction` may be an explicit array, {"axis": k} for a basis vector, or
// {"random_seed": s} for a seeded random unit vector.
PlantedConcept planted_from_json(const json& j, std::size_t hidden_dim);

// Throws Error(kParse) naming `field` when missing or of the wrong type.
const json& require(const json& object, const char* field);

}  // namespace scs::detail
