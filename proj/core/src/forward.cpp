#include "scs/forward.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "scs/error.hpp"

namespace scs {

namespace {

constexpr double kNormEps = 1e-5;

void rms_norm(std::span<const float> x, std::span<float> out) {
  double sq = 0.0;
  for (float v : x) sq += static_cast<double>(v) * v;
  const double inv = 1.0 / std::sqrt(sq / static_cast<double>(x.size()) + kNormEps);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(x[i] * inv);
}

// out = in * W for W stored input-major [in x out].
void matvec(std::span<const float> in, std::span<const float> w, std::span<float> out) {
  const std::size_t n = out.size();
  std::fill(out.begin(), out.end(), 0.0f);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const float x = in[i];
    const float* row = w.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += x * row[j];
  }
}

float gelu(float x) {
  const double v = x;
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  return static_cast<float>(0.5 * v * (1.0 + std::tanh(kC * (v + 0.044715 * v * v * v))));
}

void check_finite(std::span<const float> values, const char* what, std::size_t layer,
                  std::size_t position) {
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::kNumeric, std::string("non-finite ") + what + " at layer " +
                                           std::to_string(layer) + ", position " +
                                           std::to_string(position));
    }
  }
}

}  // namespace

void validate_steering(const ModelConfig& config, const SteeringSpec& spec) {
  if (spec.layer < 1 || spec.layer > config.num_layers) {
    throw Error(ErrorKind::kConfig, "steering layer " + std::to_string(spec.layer) +
                                        " outside [1, " + std::to_string(config.num_layers) + "]");
  }
  if (spec.vector.size() != config.hidden_dim) {
    throw Error(ErrorKind::kConfig, "steering vector has length " +
                                        std::to_string(spec.vector.size()) + ", expected " +
                                        std::to_string(config.hidden_dim));
  }
  if (!std::isfinite(spec.alpha)) throw Error(ErrorKind::kConfig, "steering alpha is not finite");
  for (float v : spec.vector) {
    if (!std::isfinite(v)) throw Error(ErrorKind::kConfig, "steering vector is not finite");
  }
}

std::span<const float> ForwardTrace::residual(std::size_t layer, std::size_t position) const {
  if (layer > num_layers || position >= size()) {
    throw Error(ErrorKind::kInput, "trace index (" + std::to_string(layer) + ", " +
                                       std::to_string(position) + ") out of range");
  }
  return std::span<const float>(residuals).subspan((layer * size() + position) * hidden_dim,
                                                   hidden_dim);
}

std::span<const float> ForwardTrace::logits_at(std::size_t position) const {
  if (position >= size()) {
    throw Error(ErrorKind::kInput, "trace position " + std::to_string(position) + " out of range");
  }
  return std::span<const float>(logits).subspan(position * vocab_size, vocab_size);
}

DecodeState::DecodeState(const Model& model, std::span<const SteeringSpec> steering,
                         std::size_t prompt_length, bool record_trace)
    : model_(&model), prompt_length_(prompt_length), record_(record_trace) {
  const auto& c = model.config();
  const std::size_t d = c.hidden_dim;
  const std::size_t layers = c.num_layers + 1;
  delta_all_.assign(layers * d, 0.0);
  delta_generated_.assign(layers * d, 0.0);
  layer_has_all_.assign(layers, false);
  layer_has_generated_.assign(layers, false);
  for (const auto& s : steering) {
    validate_steering(c, s);
    auto& delta = s.scope == SteeringScope::kAllPositions ? delta_all_ : delta_generated_;
    for (std::size_t i = 0; i < d; ++i) delta[s.layer * d + i] += s.alpha * s.vector[i];
  }
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t i = 0; i < d; ++i) {
      if (delta_all_[l * d + i] != 0.0) layer_has_all_[l] = true;
      if (delta_generated_[l * d + i] != 0.0) layer_has_generated_[l] = true;
    }
  }

  first_seen_.assign(c.vocab_size, -1);
  key_cache_.assign(c.num_layers * d * c.max_context, 0.0f);
  value_cache_.assign(c.num_layers * d * c.max_context, 0.0f);
  current_.assign(layers * d, 0.0f);
  logits_.assign(c.vocab_size, 0.0f);
  norm_.resize(d);
  q_.resize(d);
  k_.resize(d);
  v_.resize(d);
  attn_.resize(d);
  hidden_.resize(c.resolved_mlp_dim());
  scores_.resize(c.max_context);
}

void DecodeState::push(std::span<const Token> tokens) {
  for (Token t : tokens) push(t);
}

void DecodeState::push(Token token) {
  const auto& c = model_->config();
  const std::size_t d = c.hidden_dim;
  const std::size_t t = tokens_.size();
  if (token >= c.vocab_size) {
    throw Error(ErrorKind::kInput, "token " + std::to_string(token) + " at position " +
                                       std::to_string(t) + " outside vocabulary of size " +
                                       std::to_string(c.vocab_size));
  }
  if (t >= c.max_context) {
    throw Error(ErrorKind::kTruncation,
                "sequence exceeds max_context " + std::to_string(c.max_context));
  }
  tokens_.push_back(token);
  if (first_seen_[token] < 0) first_seen_[token] = static_cast<std::int64_t>(t);

  const auto emb = model_->token_embedding().subspan(token * d, d);
  const auto pos = model_->position_embedding().subspan(t * d, d);
  for (std::size_t i = 0; i < d; ++i) current_[i] = emb[i] + pos[i];
  check_finite(std::span<const float>(current_).first(d), "residual", 0, t);

  const bool generated = prompt_length_ != kNoPrompt && t >= prompt_length_;
  for (std::size_t l = 1; l <= c.num_layers; ++l) {
    std::span<float> out(current_.data() + l * d, d);
    run_block(l, std::span<const float>(current_.data() + (l - 1) * d, d), out);
    apply_planted(l, out);
    if (layer_has_all_[l]) {
      for (std::size_t i = 0; i < d; ++i) {
        const double delta = delta_all_[l * d + i];
        if (delta != 0.0) out[i] = static_cast<float>(out[i] + delta);
      }
    }
    if (generated && layer_has_generated_[l]) {
      for (std::size_t i = 0; i < d; ++i) {
        const double delta = delta_generated_[l * d + i];
        if (delta != 0.0) out[i] = static_cast<float>(out[i] + delta);
      }
    }
    check_finite(out, "residual", l, t);
  }

  rms_norm(std::span<const float>(current_.data() + c.num_layers * d, d), norm_);
  matvec(norm_, model_->unembedding(), logits_);
  apply_readouts();
  check_finite(logits_, "logit", c.num_layers, t);

  if (record_) {
    recorded_residuals_.insert(recorded_residuals_.end(), current_.begin(), current_.end());
    recorded_logits_.insert(recorded_logits_.end(), logits_.begin(), logits_.end());
  }
}

void DecodeState::run_block(std::size_t layer, std::span<const float> in, std::span<float> out) {
  const auto& c = model_->config();
  const std::size_t d = c.hidden_dim;
  const std::size_t heads = c.num_heads;
  const std::size_t hd = c.head_dim();
  const std::size_t ctx = c.max_context;
  const std::size_t t = tokens_.size() - 1;
  const auto w = model_->block(layer);

  rms_norm(in, norm_);
  matvec(norm_, w.attn_q, q_);
  matvec(norm_, w.attn_k, k_);
  matvec(norm_, w.attn_v, v_);

  float* keys = key_cache_.data() + (layer - 1) * d * ctx;      // [H][hd][ctx]
  float* values = value_cache_.data() + (layer - 1) * d * ctx;  // [H][ctx][hd]
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t e = 0; e < hd; ++e) {
      keys[(h * hd + e) * ctx + t] = k_[h * hd + e];
      values[(h * ctx + t) * hd + e] = v_[h * hd + e];
    }
  }

  const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(hd)));
  std::span<float> scores(scores_.data(), t + 1);
  for (std::size_t h = 0; h < heads; ++h) {
    std::fill(scores.begin(), scores.end(), 0.0f);
    for (std::size_t e = 0; e < hd; ++e) {
      const float qe = q_[h * hd + e];
      const float* krow = keys + (h * hd + e) * ctx;
      for (std::size_t j = 0; j <= t; ++j) scores[j] += qe * krow[j];
    }
    double max_score = -INFINITY;
    for (float& s : scores) {
      s *= scale;
      max_score = std::max(max_score, static_cast<double>(s));
    }
    double sum = 0.0;
    for (float s : scores) sum += std::exp(s - max_score);
    for (float& s : scores) s = static_cast<float>(std::exp(s - max_score) / sum);

    float* o = attn_.data() + h * hd;
    std::fill(o, o + hd, 0.0f);
    for (std::size_t j = 0; j <= t; ++j) {
      const float wj = scores[j];
      const float* vrow = values + (h * ctx + j) * hd;
      for (std::size_t e = 0; e < hd; ++e) o[e] += wj * vrow[e];
    }
  }
  matvec(attn_, w.attn_o, v_);
  for (std::size_t i = 0; i < d; ++i) out[i] = in[i] + v_[i];

  rms_norm(out, norm_);
  matvec(norm_, w.mlp_in, hidden_);
  for (std::size_t j = 0; j < hidden_.size(); ++j) hidden_[j] = gelu(hidden_[j] + w.mlp_in_bias[j]);
  matvec(hidden_, w.mlp_out, v_);
  for (std::size_t i = 0; i < d; ++i) out[i] += v_[i] + w.mlp_out_bias[i];
}

void DecodeState::apply_planted(std::size_t layer, std::span<float> residual) const {
  for (const auto& p : model_->planted()) {
    if (p.layer != layer) continue;
    if (p.overwrite) {
      double s = 0.0;
      for (std::size_t i = 0; i < residual.size(); ++i) s += residual[i] * p.direction[i];
      for (std::size_t i = 0; i < residual.size(); ++i) {
        residual[i] = static_cast<float>(residual[i] - s * p.direction[i]);
      }
    }
    if (p.gain != 0.0 && trigger_in_scope(p.trigger_token)) {
      for (std::size_t i = 0; i < residual.size(); ++i) {
        residual[i] = static_cast<float>(residual[i] + p.gain * p.direction[i]);
      }
    }
  }
}

void DecodeState::apply_readouts() {
  const auto& c = model_->config();
  const std::size_t d = c.hidden_dim;
  for (const auto& p : model_->planted()) {
    if (!p.readout) continue;
    const auto& r = *p.readout;
    Token positive = r.positive_token;
    Token negative = r.negative_token;
    if (r.kind == ReadoutKind::kChoiceBinding) {
      const Token a = c.choice_token(Choice::kA);
      const Token b = c.choice_token(Choice::kB);
      if (first_seen_[a] < 0 || first_seen_[b] < 0) continue;
      const bool in_a = snippet_contains(a, p.trigger_token);
      const bool in_b = snippet_contains(b, p.trigger_token);
      if (in_a == in_b) continue;
      positive = in_a ? a : b;
      negative = in_a ? b : a;
    }
    double s = 0.0;
    const float* a_layer = current_.data() + p.layer * d;
    for (std::size_t i = 0; i < d; ++i) s += a_layer[i] * p.direction[i];
    logits_[positive] = static_cast<float>(logits_[positive] + r.bias + r.gain * s);
    logits_[negative] = static_cast<float>(logits_[negative] + r.bias - r.gain * s);
  }
}

bool DecodeState::trigger_in_scope(Token trigger) const {
  const std::size_t t = tokens_.size() - 1;
  const Token current = tokens_[t];
  if (model_->config().is_choice_token(current) &&
      static_cast<std::size_t>(first_seen_[current]) < t) {
    return snippet_contains(current, trigger);
  }
  return first_seen_[trigger] >= 0;
}

bool DecodeState::snippet_contains(Token choice, Token trigger) const {
  const auto& c = model_->config();
  // The snippet bound to a choice token runs from just after its first
  // occurrence up to the next choice token. The current position is
  // excluded so an appended answer never binds to itself.
  const std::size_t end = tokens_.size() - 1;
  for (std::size_t i = static_cast<std::size_t>(first_seen_[choice]) + 1; i < end; ++i) {
    if (c.is_choice_token(tokens_[i])) break;
    if (tokens_[i] == trigger) return true;
  }
  return false;
}

std::span<const float> DecodeState::last_residual(std::size_t layer) const {
  const auto& c = model_->config();
  if (tokens_.empty()) throw Error(ErrorKind::kInput, "no tokens pushed");
  if (layer > c.num_layers) {
    throw Error(ErrorKind::kInput, "layer " + std::to_string(layer) + " out of range");
  }
  return std::span<const float>(current_).subspan(layer * c.hidden_dim, c.hidden_dim);
}

ForwardTrace DecodeState::trace() const {
  if (!record_) throw Error(ErrorKind::kInput, "decode state was created without recording");
  const auto& c = model_->config();
  const std::size_t d = c.hidden_dim;
  const std::size_t layers = c.num_layers + 1;
  const std::size_t n = tokens_.size();
  ForwardTrace trace;
  trace.tokens = tokens_;
  trace.num_layers = c.num_layers;
  trace.hidden_dim = d;
  trace.vocab_size = c.vocab_size;
  trace.residuals.resize(layers * n * d);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t l = 0; l < layers; ++l) {
      const float* src = recorded_residuals_.data() + (t * layers + l) * d;
      std::copy(src, src + d, trace.residuals.data() + (l * n + t) * d);
    }
  }
  trace.logits = recorded_logits_;
  return trace;
}

ForwardTrace forward_trace(const Model& model, std::span<const Token> tokens,
                           std::span<const SteeringSpec> steering) {
  DecodeState state(model, steering);
  state.push(tokens);
  return state.trace();
}

ForwardTrace forward_trace(const Model& model, std::span<const Token> tokens,
                           const std::optional<SteeringSpec>& steering) {
  if (!steering) return forward_trace(model, tokens, std::span<const SteeringSpec>{});
  return forward_trace(model, tokens, std::span<const SteeringSpec>(&*steering, 1));
}

void SamplingConfig::validate() const {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorKind::kConfig, "temperature must be a finite value >= 0");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorKind::kConfig, "top_p must lie in (0, 1]");
}

std::vector<double> next_token_distribution(std::span<const float> logits,
                                            const SamplingConfig& sampling) {
  sampling.validate();
  const std::size_t n = logits.size();
  std::vector<double> p(n, 0.0);
  if (n == 0) return p;
  if (sampling.temperature == 0.0) {
    p[static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin())] =
        1.0;
    return p;
  }
  double max_logit = -INFINITY;
  for (float v : logits) max_logit = std::max(max_logit, static_cast<double>(v));
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = std::exp((logits[i] - max_logit) / sampling.temperature);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  if (sampling.top_p >= 1.0) return p;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  double kept = 0.0;
  std::size_t count = 0;
  while (count < n && kept < sampling.top_p) kept += p[order[count++]];
  for (std::size_t i = count; i < n; ++i) p[order[i]] = 0.0;
  for (double& v : p) v /= kept;
  return p;
}

Token sample_next(std::span<const float> logits, const SamplingConfig& sampling, Rng& rng) {
  const auto p = next_token_distribution(logits, sampling);
  if (sampling.temperature == 0.0) {
    return static_cast<Token>(std::max_element(p.begin(), p.end()) - p.begin());
  }
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    cum += p[i];
    last = i;
    if (u < cum) return static_cast<Token>(i);
  }
  return static_cast<Token>(last);
}

Generation generate(const Model& model, std::span<const Token> prompt,
                    const SamplingConfig& sampling, std::span<const SteeringSpec> steering) {
  sampling.validate();
  const auto& c = model.config();
  if (prompt.empty()) throw Error(ErrorKind::kInput, "prompt is empty");
  if (prompt.size() + sampling.max_new_tokens > c.max_context) {
    throw Error(ErrorKind::kTruncation,
                "prompt length " + std::to_string(prompt.size()) + " + max_new_tokens " +
                    std::to_string(sampling.max_new_tokens) + " exceeds max_context " +
                    std::to_string(c.max_context));
  }
  DecodeState state(model, steering, prompt.size());
  state.push(prompt);
  Rng rng(sampling.seed);
  Generation out;
  out.generated.reserve(sampling.max_new_tokens);
  for (std::size_t i = 0; i < sampling.max_new_tokens; ++i) {
    const Token next = sample_next(state.last_logits(), sampling, rng);
    out.generated.push_back(next);
    state.push(next);
  }
  out.trace = state.trace();
  return out;
}

Generation generate(const Model& model, std::span<const Token> prompt,
                    const SamplingConfig& sampling, const std::optional<SteeringSpec>& steering) {
  if (!steering) return generate(model, prompt, sampling, std::span<const SteeringSpec>{});
  return generate(model, prompt, sampling, std::span<const SteeringSpec>(&*steering, 1));
}

ChoiceLogits answer_choice_logit(const Model& model, std::span<const Token> ab_context,
                                 std::span<const SteeringSpec> steering) {
  if (ab_context.empty()) throw Error(ErrorKind::kInput, "A/B context is empty");
  DecodeState state(model, steering, DecodeState::kNoPrompt, false);
  state.push(ab_context);
  const auto& c = model.config();
  const auto logits = state.last_logits();
  return {logits[c.choice_token(Choice::kA)], logits[c.choice_token(Choice::kB)]};
}

}  // namespace scs
