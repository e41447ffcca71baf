#include <cmath>
#include <json.hpp>

#include "binary_io.hpp"
#include "json_convert.hpp"
#include "scs/error.hpp"
#include "scs/steering.hpp"

namespace scs {

using detail::json;

std::string_view to_string(SteeringScope scope) noexcept {
  return scope == SteeringScope::kGeneratedOnly ? "generated-only" : "all-positions";
}

SteeringScope steering_scope_from_string(std::string_view name) {
  if (name == "all-positions") return SteeringScope::kAllPositions;
  if (name == "generated-only") return SteeringScope::kGeneratedOnly;
  throw Error(ErrorKind::kConfig, "unknown steering scope '" + std::string(name) +
                                      "' (expected all-positions or generated-only)");
}

std::string steering_to_json(const SteeringSpec& spec) {
  json j{{"layer", spec.layer},
         {"alpha", spec.alpha},
         {"scope", std::string(to_string(spec.scope))},
         {"vector", spec.vector}};
  return j.dump(2) + "\n";
}

SteeringSpec steering_from_json(std::string_view text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("steering file: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::kParse, "steering file: expected a JSON object");
  SteeringSpec spec;
  try {
    spec.alpha = detail::require(j, "alpha").get<double>();
    spec.scope = steering_scope_from_string(j.value("scope", "all-positions"));
    const bool has_vector = j.contains("vector");
    const bool has_concept = j.contains("concept");
    if (has_vector == has_concept) {
      throw Error(ErrorKind::kParse, "steering file: exactly one of 'vector' or 'concept' is required");
    }
    std::optional<std::size_t> concept_layer;
    if (has_vector) {
      const auto& values = j.at("vector");
      if (!values.is_array()) throw Error(ErrorKind::kParse, "steering file: 'vector' must be an array");
      for (const auto& v : values) {
        if (!v.is_number()) throw Error(ErrorKind::kParse, "steering file: non-numeric vector entry");
        spec.vector.push_back(static_cast<float>(v.get<double>()));
      }
    } else {
      std::filesystem::path ref = j.at("concept").get<std::string>();
      if (ref.is_relative() && !base_dir.empty()) ref = base_dir / ref;
      auto cv = load_concept(ref);
      concept_layer = cv.layer;
      spec.vector = std::move(cv.values);
    }
    if (j.contains("layer")) {
      spec.layer = j.at("layer").get<std::size_t>();
    } else if (concept_layer) {
      spec.layer = *concept_layer;
    } else {
      throw Error(ErrorKind::kParse, "steering file: missing field 'layer'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("steering file: ") + e.what());
  }
  for (float v : spec.vector) {
    if (!std::isfinite(v)) throw Error(ErrorKind::kValidation, "steering file: non-finite vector entry");
  }
  return spec;
}

void save_steering(const SteeringSpec& spec, const std::filesystem::path& path) {
  detail::write_file_atomic(path, steering_to_json(spec));
}

SteeringSpec load_steering(const std::filesystem::path& path) {
  try {
    return steering_from_json(detail::read_file(path), path.parent_path());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw;
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace scs
