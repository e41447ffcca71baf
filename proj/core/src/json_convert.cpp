#include "json_convert.hpp"

#include <cmath>
#include <string>

#include "scs/error.hpp"
#include "scs/rng.hpp"

namespace scs::detail {

const json& require(const json& object, const char* field) {
  if (!object.is_object() || !object.contains(field)) {
    throw Error(ErrorKind::kParse, std::string("missing field '") + field + "'");
  }
  return object.at(field);
}

json to_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"hidden_dim", c.hidden_dim},
              {"num_layers", c.num_layers}, {"num_heads", c.num_heads},
              {"mlp_dim", c.mlp_dim}, {"max_context", c.max_context},
              {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::kParse, "model config must be a JSON object");
  ModelConfig c;
  try {
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.num_layers = j.value("num_layers", c.num_layers);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.mlp_dim = j.value("mlp_dim", c.mlp_dim);
    c.max_context = j.value("max_context", c.max_context);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("model config: ") + e.what());
  }
  return c;
}

json to_json(const PlantedConcept& p) {
  json j{{"layer", p.layer},
         {"direction", p.direction},
         {"trigger_token", p.trigger_token},
         {"gain", p.gain},
         {"overwrite", p.overwrite}};
  if (p.readout) {
    const auto& r = *p.readout;
    j["readout"] = json{{"kind", r.kind == ReadoutKind::kTokenPair ? "token-pair" : "choice-binding"},
                        {"gain", r.gain},
                        {"bias", r.bias},
                        {"positive_token", r.positive_token},
                        {"negative_token", r.negative_token}};
  }
  return j;
}

std::vector<double> direction_from_json(const json& j, std::size_t hidden_dim) {
  if (j.is_array()) return j.get<std::vector<double>>();
  if (!j.is_object()) throw Error(ErrorKind::kParse, "direction must be an array or an object");
  std::vector<double> v(hidden_dim, 0.0);
  if (j.contains("axis")) {
    const auto axis = j.at("axis").get<std::size_t>();
    if (axis >= hidden_dim) throw Error(ErrorKind::kConfig, "direction axis outside hidden_dim");
    v[axis] = 1.0;
    return v;
  }
  if (j.contains("random_seed")) {
    Rng rng(j.at("random_seed").get<std::uint64_t>());
    double sq = 0.0;
    for (double& x : v) {
      x = rng.normal();
      sq += x * x;
    }
    const double n = std::sqrt(sq);
    for (double& x : v) x /= n;
    return v;
  }
  throw Error(ErrorKind::kParse, "direction object needs 'axis' or 'random_seed'");
}

PlantedConcept planted_from_json(const json& j, std::size_t hidden_dim) {
  PlantedConcept p;
  try {
    p.layer = require(j, "layer").get<std::size_t>();
    p.direction = direction_from_json(require(j, "direction"), hidden_dim);
    p.trigger_token = require(j, "trigger_token").get<Token>();
    p.gain = require(j, "gain").get<double>();
    p.overwrite = j.value("overwrite", false);
    if (j.contains("readout")) {
      const auto& r = j.at("readout");
      PlantedReadout out;
      const std::string kind = r.value("kind", "token-pair");
      if (kind == "token-pair") {
        out.kind = ReadoutKind::kTokenPair;
      } else if (kind == "choice-binding") {
        out.kind = ReadoutKind::kChoiceBinding;
      } else {
        throw Error(ErrorKind::kParse, "unknown readout kind '" + kind + "'");
      }
      out.gain = r.value("gain", 0.0);
      out.bias = r.value("bias", 0.0);
      out.positive_token = r.value("positive_token", Token{0});
      out.negative_token = r.value("negative_token", Token{0});
      p.readout = out;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("planted concept: ") + e.what());
  }
  return p;
}

}  // namespace scs::detail
