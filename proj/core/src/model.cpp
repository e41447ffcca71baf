#include "scs/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "binary_io.hpp"
#include "json_convert.hpp"
#include "scs/error.hpp"
#include "scs/rng.hpp"

namespace scs {

namespace {

constexpr char kModelMagic[4] = {'S', 'C', 'S', 'M'};

// Initialization scales. Output projections are damped so that no single
// block dominates the residual stream.
constexpr double kEmbeddingScale = 1.0;
constexpr double kPositionScale = 0.5;
constexpr double kOutputScale = 0.25;

struct TensorPlan {
  std::string name;
  std::vector<std::size_t> shape;
  double stddev;
};

std::vector<TensorPlan> tensor_plan(const ModelConfig& c) {
  const std::size_t d = c.hidden_dim;
  const std::size_t m = c.resolved_mlp_dim();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
  std::vector<TensorPlan> plan;
  plan.push_back({"token_embedding", {c.vocab_size, d}, kEmbeddingScale * inv_sqrt_d});
  plan.push_back({"position_embedding", {c.max_context, d}, kPositionScale * inv_sqrt_d});
  for (std::size_t l = 1; l <= c.num_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    plan.push_back({p + "attn_q", {d, d}, inv_sqrt_d});
    plan.push_back({p + "attn_k", {d, d}, inv_sqrt_d});
    plan.push_back({p + "attn_v", {d, d}, inv_sqrt_d});
    plan.push_back({p + "attn_o", {d, d}, kOutputScale * inv_sqrt_d});
    plan.push_back({p + "mlp_in", {d, m}, inv_sqrt_d});
    plan.push_back({p + "mlp_in_bias", {m}, 0.0});
    plan.push_back({p + "mlp_out", {m, d}, kOutputScale * inv_sqrt_m});
    plan.push_back({p + "mlp_out_bias", {d}, 0.0});
  }
  plan.push_back({"unembedding", {d, c.vocab_size}, inv_sqrt_d});
  return plan;
}

std::size_t total_size(const std::vector<TensorPlan>& plan) {
  std::size_t n = 0;
  for (const auto& t : plan) {
    std::size_t s = 1;
    for (auto dim : t.shape) s *= dim;
    n += s;
  }
  return n;
}

// Tensors per block in declared order.
constexpr std::size_t kBlockTensors = 8;
constexpr std::size_t kLeadingTensors = 2;

}  // namespace

std::string_view to_string(Choice c) noexcept { return c == Choice::kA ? "A" : "B"; }

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kConfig, what); };
  if (vocab_size < 4) fail("vocab_size must be >= 4 (two ids are reserved for choice tokens)");
  if (hidden_dim == 0) fail("hidden_dim must be positive");
  if (num_heads == 0) fail("num_heads must be positive");
  if (hidden_dim % num_heads != 0) {
    fail("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by num_heads " +
         std::to_string(num_heads));
  }
  if (num_layers < 1) fail("num_layers must be >= 1");
  if (max_context == 0) fail("max_context must be positive");
}

std::size_t TensorInfo::size() const noexcept {
  std::size_t n = 1;
  for (auto dim : shape) n *= dim;
  return n;
}

Model::Model(const ModelConfig& config, std::vector<float> params,
             std::vector<PlantedConcept> planted)
    : config_(config), params_(std::move(params)), planted_(std::move(planted)) {
  index_tensors();
}

void Model::index_tensors() {
  tensors_.clear();
  std::size_t offset = 0;
  for (auto& t : tensor_plan(config_)) {
    TensorInfo info{std::move(t.name), std::move(t.shape), offset};
    offset += info.size();
    tensors_.push_back(std::move(info));
  }
}

std::span<const float> Model::token_embedding() const {
  const auto& t = tensors_[0];
  return std::span<const float>(params_).subspan(t.offset, t.size());
}

std::span<const float> Model::position_embedding() const {
  const auto& t = tensors_[1];
  return std::span<const float>(params_).subspan(t.offset, t.size());
}

std::span<const float> Model::unembedding() const {
  const auto& t = tensors_.back();
  return std::span<const float>(params_).subspan(t.offset, t.size());
}

Model::BlockView Model::block(std::size_t layer) const {
  if (layer < 1 || layer > config_.num_layers) {
    throw Error(ErrorKind::kInput, "block index " + std::to_string(layer) + " outside [1, " +
                                       std::to_string(config_.num_layers) + "]");
  }
  const std::size_t base = kLeadingTensors + (layer - 1) * kBlockTensors;
  auto view = [&](std::size_t i) {
    const auto& t = tensors_[base + i];
    return std::span<const float>(params_).subspan(t.offset, t.size());
  };
  return BlockView{view(0), view(1), view(2), view(3), view(4), view(5), view(6), view(7)};
}

std::string Model::id() const {
  std::string id = "toy-v" + std::to_string(config_.vocab_size) + "-d" +
                   std::to_string(config_.hidden_dim) + "-l" + std::to_string(config_.num_layers) +
                   "-h" + std::to_string(config_.num_heads) + "-s" + std::to_string(config_.seed);
  if (!planted_.empty()) {
    detail::json arr = detail::json::array();
    for (const auto& p : planted_) arr.push_back(detail::to_json(p));
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(hash_string(arr.dump())));
    id += "-p";
    id += buf;
  }
  return id;
}

Model Model::from_parts(const ModelConfig& config, std::vector<float> params,
                        std::vector<PlantedConcept> planted) {
  config.validate();
  const std::size_t expected = total_size(tensor_plan(config));
  if (params.size() != expected) {
    throw Error(ErrorKind::kFormat, "parameter count " + std::to_string(params.size()) +
                                        " does not match config (expected " +
                                        std::to_string(expected) + ")");
  }
  for (float v : params) {
    if (!std::isfinite(v)) throw Error(ErrorKind::kNumeric, "non-finite model parameter");
  }
  for (const auto& p : planted) validate_planted(config, p);
  return Model(config, std::move(params), std::move(planted));
}

Model build_model(const ModelConfig& config) {
  config.validate();
  const auto plan = tensor_plan(config);
  std::vector<float> params(total_size(plan));
  Rng rng(config.seed);
  std::size_t offset = 0;
  for (const auto& t : plan) {
    std::size_t n = 1;
    for (auto dim : t.shape) n *= dim;
    std::span<float> dst(params.data() + offset, n);
    if (t.stddev > 0.0) rng.fill_normal(dst, t.stddev);
    offset += n;
  }
  return Model(config, std::move(params), {});
}

void validate_planted(const ModelConfig& config, const PlantedConcept& planted) {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kConfig, what); };
  if (planted.layer < 1 || planted.layer > config.num_layers) {
    fail("planted layer " + std::to_string(planted.layer) + " outside [1, " +
         std::to_string(config.num_layers) + "]");
  }
  if (planted.direction.size() != config.hidden_dim) {
    fail("planted direction has length " + std::to_string(planted.direction.size()) +
         ", expected " + std::to_string(config.hidden_dim));
  }
  double sq = 0.0;
  for (double v : planted.direction) {
    if (!std::isfinite(v)) fail("planted direction is not finite");
    sq += v * v;
  }
  if (std::abs(std::sqrt(sq) - 1.0) > 1e-9) fail("planted direction must have unit norm");
  if (planted.trigger_token >= config.vocab_size) fail("planted trigger token outside vocabulary");
  if (!std::isfinite(planted.gain)) fail("planted gain must be finite");
  if (planted.readout) {
    const auto& r = *planted.readout;
    if (!std::isfinite(r.gain) || !std::isfinite(r.bias)) fail("readout gain/bias must be finite");
    if (r.kind == ReadoutKind::kTokenPair &&
        (r.positive_token >= config.vocab_size || r.negative_token >= config.vocab_size ||
         r.positive_token == r.negative_token)) {
      fail("readout tokens must be distinct ids inside the vocabulary");
    }
  }
}

Model plant_concept(Model model, PlantedConcept planted) {
  validate_planted(model.config_, planted);
  model.planted_.push_back(std::move(planted));
  return model;
}

Model build_model_from_json(std::string_view json_text) {
  detail::json j;
  try {
    j = detail::json::parse(json_text);
  } catch (const detail::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("model spec: ") + e.what());
  }
  Model model = build_model(detail::model_config_from_json(j));
  if (j.contains("planted")) {
    const std::size_t d = model.config().hidden_dim;
    for (const auto& p : j.at("planted")) {
      model = plant_concept(std::move(model), detail::planted_from_json(p, d));
    }
  }
  return model;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  detail::json header;
  header["config"] = detail::to_json(model.config());
  header["tensors"] = detail::json::array();
  for (const auto& t : model.tensors()) header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
  header["planted"] = detail::json::array();
  for (const auto& p : model.planted()) header["planted"].push_back(detail::to_json(p));
  const std::string text = header.dump();

  std::string bytes(kModelMagic, 4);
  detail::put_u16(bytes, kModelFileVersion);
  detail::put_u32(bytes, static_cast<std::uint32_t>(text.size()));
  bytes += text;
  detail::put_f32(bytes, model.parameters());
  detail::write_file_atomic(path, bytes);
}

Model load_model(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 10 || !std::equal(kModelMagic, kModelMagic + 4, bytes.data())) {
    throw Error(ErrorKind::kFormat, path.string() + ": not a model file (bad magic)");
  }
  const std::uint16_t version = detail::get_u16(p + 4);
  if (version > kModelFileVersion) {
    throw Error(ErrorKind::kUnsupportedVersion,
                path.string() + ": model file version " + std::to_string(version) +
                    " is newer than supported version " + std::to_string(kModelFileVersion));
  }
  const std::uint32_t header_len = detail::get_u32(p + 6);
  if (bytes.size() < 10 + std::size_t{header_len}) {
    throw Error(ErrorKind::kFormat, path.string() + ": truncated header");
  }
  detail::json header;
  try {
    header = detail::json::parse(bytes.begin() + 10, bytes.begin() + 10 + header_len);
  } catch (const detail::json::exception& e) {
    throw Error(ErrorKind::kFormat, path.string() + ": header is not JSON: " + e.what());
  }
  const ModelConfig config = detail::model_config_from_json(detail::require(header, "config"));
  config.validate();
  const auto plan = tensor_plan(config);
  const auto& table = detail::require(header, "tensors");
  if (!table.is_array() || table.size() != plan.size()) {
    throw Error(ErrorKind::kFormat, path.string() + ": tensor table does not match config");
  }
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (table[i].value("name", "") != plan[i].name ||
        table[i].value("shape", std::vector<std::size_t>{}) != plan[i].shape) {
      throw Error(ErrorKind::kFormat, path.string() + ": unexpected tensor " + table[i].dump());
    }
  }
  const std::size_t count = total_size(plan);
  const std::size_t payload = bytes.size() - 10 - header_len;
  if (payload != 4 * count) {
    throw Error(ErrorKind::kFormat, path.string() + ": payload has " + std::to_string(payload) +
                                        " bytes, expected " + std::to_string(4 * count));
  }
  std::vector<float> params(count);
  detail::get_f32(p + 10 + header_len, params);
  std::vector<PlantedConcept> planted;
  if (header.contains("planted")) {
    for (const auto& j : header.at("planted")) {
      planted.push_back(detail::planted_from_json(j, config.hidden_dim));
    }
  }
  return Model::from_parts(config, std::move(params), std::move(planted));
}

}  // namespace scs
