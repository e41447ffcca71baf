#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scs/concept.hpp"
#include "scs/dataset.hpp"
#include "scs/forward.hpp"
#include "scs/metrics.hpp"

namespace scs {

std::string_view to_string(SteeringScope scope) noexcept;  // "all-positions" / "generated-only"
SteeringScope steering_scope_from_string(std::string_view name);

// Steering file shared with external adapters:
//   {"layer": l, "alpha": a, "scope": "all-positions", "vector": [...]}
// or "concept": "<ConceptVector JSON path>" in place of "vector", resolved
// against `base_dir` when relative. A concept reference supplies the layer
// when "layer" is absent.
std::string steering_to_json(const SteeringSpec& spec);
SteeringSpec steering_from_json(std::string_view text, const std::filesystem::path& base_dir = {});
void save_steering(const SteeringSpec& spec, const std::filesystem::path& path);
SteeringSpec load_steering(const std::filesystem::path& path);

enum class FlipNormalization {
  kAllPrompts,  // divide by the number of prompts
  kFlippable,   // divide by the prompts that could flip in that direction
};

struct FlipCounts {
  std::size_t to_secure = 0;
  std::size_t to_insecure = 0;
  std::size_t unchanged = 0;
};

struct FlipRow {
  std::size_t layer = 0;
  std::size_t n_prompts = 0;
  std::size_t baseline_secure = 0;
  FlipCounts positive;  // under +alpha
  FlipCounts negative;  // under -alpha
  // Prompts flipped to secure by +alpha that choose insecure under -alpha.
  std::size_t flipped_back = 0;
  double frac_to_secure = 0.0;    // +alpha, insecure -> secure
  double frac_to_insecure = 0.0;  // -alpha, secure -> insecure
};

struct FlipOptions {
  double alpha = 1.0;
  std::vector<std::size_t> layers;  // empty: every layer 1..L
  SteeringScope scope = SteeringScope::kAllPositions;
  FlipNormalization normalization = FlipNormalization::kAllPrompts;
  unsigned jobs = 1;
};

struct FlipReport {
  double alpha = 0.0;
  FlipNormalization normalization = FlipNormalization::kAllPrompts;
  std::vector<Choice> baseline;  // unsteered choice per prompt
  std::vector<FlipRow> rows;
};

// `concepts` must hold a vector for every requested layer.
FlipReport decision_flip_experiment(const Model& model, std::span<const ContrastiveInput> prompts,
                                    std::span<const ConceptVector> concepts,
                                    const FlipOptions& options = {});

struct Task {
  std::string id;
  std::string category;
  std::vector<Token> prompt;
};

// Judges one generated sample. Implementations throw to signal failure.
class VerdictProvider {
 public:
  virtual ~VerdictProvider() = default;
  virtual SampleVerdict judge(const Task& task, std::span<const Token> generated) const = 0;
};

// Toy provider: the first occurrence of either marker token decides
// security; a sample with no marker neither compiles nor passes.
class MarkerVerdictProvider : public VerdictProvider {
 public:
  MarkerVerdictProvider(const ModelConfig& config, Token secure_marker, Token insecure_marker);
  SampleVerdict judge(const Task& task, std::span<const Token> generated) const override;

 private:
  ModelConfig config_;
  Token secure_;
  Token insecure_;
};

struct GenerationConfig {
  SamplingConfig sampling;       // sampling.seed is the base seed
  std::size_t samples_per_task = 1;
  std::size_t runs = 1;
  SteeringScope scope = SteeringScope::kAllPositions;
  unsigned jobs = 1;
};

// Seed of one sample; depends only on (base seed, task, run, sample).
std::uint64_t sample_seed(std::uint64_t base, const Task& task, std::size_t run,
                          std::size_t sample);

struct GenerationResult {
  std::vector<GenerationBatch> batches;  // (task, run) order
  std::vector<std::string> failures;     // verdict provider errors, in item order
};

// Generates and judges every (task, run, sample). Samples whose verdict
// failed are left out of the batches and reported in `failures`.
GenerationResult run_generations(const Model& model, std::span<const Task> tasks,
                                 const std::optional<SteeringSpec>& steering,
                                 const VerdictProvider& provider, const GenerationConfig& config);

struct MetricEstimate {
  std::optional<double> mean;  // nullopt when not applicable in every run
  double ci_halfwidth = 0.0;
};

struct SweepRow {
  double alpha = 0.0;
  std::size_t layer = 0;
  std::size_t runs = 0;
  std::uint64_t seed = 0;
  bool complete = true;
  std::string error;  // verdict provider failure, if any
  MetricEstimate pass_at_1;
  MetricEstimate secure_at_1_pass;
  MetricEstimate secure_pass_at_1;
  MetricEstimate sven_sr;
  std::vector<GenerationBatch> batches;
};

std::vector<SweepRow> magnitude_sweep(const Model& model, std::span<const Task> tasks,
                                      std::span<const float> concept_vector, std::size_t layer,
                                      std::span<const double> alphas,
                                      const VerdictProvider& provider,
                                      const GenerationConfig& config);

// k spherically uniform directions scaled to `norm`.
std::vector<std::vector<float>> random_directions(std::size_t dim, std::size_t k, double norm,
                                                  std::uint64_t seed);

struct AblationRow {
  std::string label;  // "vanilla", "concept", "random_1", ...
  SweepRow metrics;
  std::optional<double> delta_secure_pass_at_1;  // relative to vanilla
  std::optional<double> delta_pass_at_1;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::vector<std::vector<float>> random_vectors;
};

AblationReport random_vector_ablation(const Model& model, std::span<const Task> tasks,
                                      std::span<const float> concept_vector, std::size_t layer,
                                      double alpha, std::size_t k_vectors, std::uint64_t seed,
                                      const VerdictProvider& provider,
                                      const GenerationConfig& config);

}  // namespace scs
