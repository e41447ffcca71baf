#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "scs/model.hpp"
#include "scs/rng.hpp"

namespace scs {

enum class SteeringScope { kAllPositions, kGeneratedOnly };

// Adds alpha * vector to a_layer before block layer+1 consumes it.
struct SteeringSpec {
  std::size_t layer = 1;
  double alpha = 0.0;
  std::vector<float> vector;
  SteeringScope scope = SteeringScope::kAllPositions;
};

void validate_steering(const ModelConfig& config, const SteeringSpec& spec);

struct ForwardTrace {
  std::vector<Token> tokens;
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  std::size_t vocab_size = 0;
  std::vector<float> residuals;  // [(L+1) x T x d]; index 0 is a_0
  std::vector<float> logits;     // [T x V]

  std::size_t size() const noexcept { return tokens.size(); }
  std::span<const float> residual(std::size_t layer, std::size_t position) const;
  std::span<const float> logits_at(std::size_t position) const;
};

// Incremental forward pass over one sequence with per-layer key/value caches.
// forward_trace() and generate() both drive this class, so a generated
// sequence and a teacher-forced pass over the same tokens agree bitwise.
// Copy a state to branch a shared prefix.
class DecodeState {
 public:
  static constexpr std::size_t kNoPrompt = std::numeric_limits<std::size_t>::max();

  // Positions at or beyond `prompt_length` count as generated for
  // SteeringScope::kGeneratedOnly.
  DecodeState(const Model& model, std::span<const SteeringSpec> steering,
              std::size_t prompt_length = kNoPrompt, bool record_trace = true);

  // Runs one position through all blocks. Throws Error(kInput) for an
  // out-of-vocabulary token, Error(kTruncation) past max_context, and
  // Error(kNumeric) naming the layer/position of a non-finite value.
  void push(Token token);
  void push(std::span<const Token> tokens);

  std::size_t position() const noexcept { return tokens_.size(); }
  std::span<const float> last_logits() const noexcept { return logits_; }
  // Residual a_layer at the most recent position.
  std::span<const float> last_residual(std::size_t layer) const;

  // Everything pushed so far. Requires record_trace.
  ForwardTrace trace() const;

 private:
  void run_block(std::size_t layer, std::span<const float> in, std::span<float> out);
  void apply_planted(std::size_t layer, std::span<float> residual) const;
  void apply_readouts();
  bool trigger_in_scope(Token trigger) const;
  bool snippet_contains(Token choice, Token trigger) const;

  const Model* model_;
  std::size_t prompt_length_;
  bool record_;
  std::vector<double> delta_all_;        // [(L+1) x d]
  std::vector<double> delta_generated_;  // [(L+1) x d]
  std::vector<bool> layer_has_all_;
  std::vector<bool> layer_has_generated_;

  std::vector<Token> tokens_;
  std::vector<std::int64_t> first_seen_;  // per vocab id, -1 if unseen
  std::vector<float> key_cache_;          // per layer [H x hd x max_ctx]
  std::vector<float> value_cache_;        // per layer [H x max_ctx x hd]
  std::vector<float> current_;            // [(L+1) x d] residuals at this position
  std::vector<float> logits_;
  std::vector<float> recorded_residuals_;  // [T x (L+1) x d]
  std::vector<float> recorded_logits_;     // [T x V]

  // Scratch buffers reused across positions.
  std::vector<float> norm_, q_, k_, v_, attn_, hidden_, scores_;
};

ForwardTrace forward_trace(const Model& model, std::span<const Token> tokens,
                           std::span<const SteeringSpec> steering = {});
ForwardTrace forward_trace(const Model& model, std::span<const Token> tokens,
                           const std::optional<SteeringSpec>& steering);

struct SamplingConfig {
  double temperature = 0.4;  // 0 selects greedy decoding
  double top_p = 0.95;
  std::size_t max_new_tokens = 400;
  std::uint64_t seed = 0;

  void validate() const;
};

// Probabilities after temperature scaling and nucleus truncation, indexed
// by token id. For temperature 0 this is a one-hot on the argmax.
std::vector<double> next_token_distribution(std::span<const float> logits,
                                            const SamplingConfig& sampling);
Token sample_next(std::span<const float> logits, const SamplingConfig& sampling, Rng& rng);

struct Generation {
  std::vector<Token> generated;
  ForwardTrace trace;  // prompt + generated tokens
};

// Throws Error(kTruncation) when prompt + max_new_tokens exceeds max_context.
Generation generate(const Model& model, std::span<const Token> prompt,
                    const SamplingConfig& sampling, std::span<const SteeringSpec> steering = {});
Generation generate(const Model& model, std::span<const Token> prompt,
                    const SamplingConfig& sampling, const std::optional<SteeringSpec>& steering);

struct ChoiceLogits {
  double logit_a = 0.0;
  double logit_b = 0.0;
  Choice chosen() const noexcept { return logit_b > logit_a ? Choice::kB : Choice::kA; }
};

// Final-position logits of the two choice tokens for an A/B context.
ChoiceLogits answer_choice_logit(const Model& model, std::span<const Token> ab_context,
                                 std::span<const SteeringSpec> steering = {});

}  // namespace scs
