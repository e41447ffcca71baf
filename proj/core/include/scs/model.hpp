#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scs {

using Token = std::uint32_t;

enum class Choice { kA, kB };

inline Choice other(Choice c) noexcept { return c == Choice::kA ? Choice::kB : Choice::kA; }
std::string_view to_string(Choice c) noexcept;

struct ModelConfig {
  std::size_t vocab_size = 256;  // byte-level; the top two ids are the choice tokens
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 6;
  std::size_t num_heads = 4;
  std::size_t mlp_dim = 0;  // 0 selects 4 * hidden_dim
  std::size_t max_context = 512;
  std::uint64_t seed = 0;

  // Throws Error(kConfig) naming the violated constraint.
  void validate() const;

  std::size_t resolved_mlp_dim() const noexcept { return mlp_dim == 0 ? 4 * hidden_dim : mlp_dim; }
  std::size_t head_dim() const noexcept { return hidden_dim / num_heads; }

  // Reserved ids for the answer constants "(A)" / "(B)". With the default
  // 256-entry vocabulary these are 0xFE and 0xFF, bytes that never occur in
  // UTF-8 text.
  Token choice_token(Choice c) const noexcept {
    return static_cast<Token>(vocab_size - (c == Choice::kA ? 2 : 1));
  }
  bool is_choice_token(Token t) const noexcept { return t + 2 >= vocab_size && t < vocab_size; }

  bool operator==(const ModelConfig&) const = default;
};

enum class ReadoutKind {
  // logits[positive] += bias + gain * s, logits[negative] += bias - gain * s
  kTokenPair,
  // Same, with positive/negative resolved per position to the choice token
  // whose bound snippet does / does not contain the trigger.
  kChoiceBinding,
};

// Maps the planted feature s = <a_layer(t), direction> onto output logits.
struct PlantedReadout {
  ReadoutKind kind = ReadoutKind::kTokenPair;
  double gain = 0.0;
  double bias = 0.0;
  Token positive_token = 0;  // kTokenPair only
  Token negative_token = 0;  // kTokenPair only

  bool operator==(const PlantedReadout&) const = default;
};

// Ground-truth concept wired into a block. At every position t the block at
// `layer` adds gain * direction when the trigger is in scope of t:
//  - if token t is a choice token seen earlier in the context, its scope is
//    the snippet that follows that earlier occurrence (up to the next choice
//    token), so an appended answer "points at" its snippet;
//  - otherwise the scope is the causal prefix tokens[0..t].
// With `overwrite`, the block first removes the residual's component along
// `direction`, so the feature at this layer is exactly the planted value
// (plus any steering applied at this layer).
struct PlantedConcept {
  std::size_t layer = 1;
  std::vector<double> direction;  // unit norm
  Token trigger_token = 0;
  double gain = 0.0;
  bool overwrite = false;
  std::optional<PlantedReadout> readout;

  bool operator==(const PlantedConcept&) const = default;
};

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;  // in floats, into Model::parameters()
  std::size_t size() const noexcept;
};

// Decoder-only, pre-norm transformer. Immutable after construction; share
// freely across threads for read-only forward passes.
class Model {
 public:
  struct BlockView {
    std::span<const float> attn_q, attn_k, attn_v, attn_o;  // [d x d], input-major
    std::span<const float> mlp_in, mlp_in_bias;             // [d x m], [m]
    std::span<const float> mlp_out, mlp_out_bias;           // [m x d], [d]
  };

  const ModelConfig& config() const noexcept { return config_; }
  std::span<const PlantedConcept> planted() const noexcept { return planted_; }

  // All parameters, flat, in declared tensor order.
  std::span<const float> parameters() const noexcept { return params_; }
  const std::vector<TensorInfo>& tensors() const noexcept { return tensors_; }

  std::span<const float> token_embedding() const;     // [V x d]
  std::span<const float> position_embedding() const;  // [max_context x d]
  std::span<const float> unembedding() const;         // [d x V]
  BlockView block(std::size_t layer) const;           // layer in [1, L]

  // Stable identifier used for provenance in concept and dump files.
  std::string id() const;

  // Reassembles a model from serialized parts; validates shapes and finiteness.
  static Model from_parts(const ModelConfig& config, std::vector<float> params,
                          std::vector<PlantedConcept> planted);

 private:
  friend Model build_model(const ModelConfig& config);
  friend Model plant_concept(Model model, PlantedConcept planted);

  Model(const ModelConfig& config, std::vector<float> params, std::vector<PlantedConcept> planted);
  void index_tensors();

  ModelConfig config_;
  std::vector<float> params_;
  std::vector<TensorInfo> tensors_;
  std::vector<PlantedConcept> planted_;
};

// Deterministic parameters drawn from config.seed.
Model build_model(const ModelConfig& config);

// Builds from a JSON object holding ModelConfig fields plus an optional
// "planted" array (the toy-model section of experiment configs).
Model build_model_from_json(std::string_view json_text);

// Returns a copy of `model` with the concept wired in.
Model plant_concept(Model model, PlantedConcept planted);

void validate_planted(const ModelConfig& config, const PlantedConcept& planted);

// Weights file: "SCSM", u16 LE version, u32 LE header length, UTF-8 JSON
// header (config, tensor table, planted concepts), then LE f32 tensors in
// declared order.
inline constexpr std::uint16_t kModelFileVersion = 1;
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace scs
