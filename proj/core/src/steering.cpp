#include "scs/steering.hpp"

#include <cmath>

#include "scs/error.hpp"
#include "scs/parallel.hpp"
#include "scs/rng.hpp"
#include "scs/tokenizer.hpp"

namespace scs {

namespace {

bool chooses_secure(const Model& model, const ContrastiveInput& prompt,
                    std::span<const SteeringSpec> steering, SteeringScope scope) {
  // Restricted scope steers only the answer position, the last context token.
  const std::size_t steer_from = scope == SteeringScope::kGeneratedOnly
                                     ? prompt.context.size() - 1
                                     : DecodeState::kNoPrompt;
  DecodeState state(model, steering, steer_from, false);
  state.push(prompt.context);
  const auto logits = state.last_logits();
  const double a = logits[model.config().choice_token(Choice::kA)];
  const double b = logits[model.config().choice_token(Choice::kB)];
  const Token chosen = ChoiceLogits{a, b}.chosen() == Choice::kA
                           ? model.config().choice_token(Choice::kA)
                           : model.config().choice_token(Choice::kB);
  return chosen == prompt.positive;
}

double fraction(std::size_t count, std::size_t denominator) {
  return denominator == 0 ? 0.0 : static_cast<double>(count) / static_cast<double>(denominator);
}

}  // namespace

FlipReport decision_flip_experiment(const Model& model, std::span<const ContrastiveInput> prompts,
                                    std::span<const ConceptVector> concepts,
                                    const FlipOptions& options) {
  const auto& c = model.config();
  if (options.alpha == 0.0 || !std::isfinite(options.alpha)) {
    throw Error(ErrorKind::kConfig, "flip experiment needs a finite, non-zero alpha");
  }
  std::vector<std::size_t> layers = options.layers;
  if (layers.empty()) {
    for (std::size_t l = 1; l <= c.num_layers; ++l) layers.push_back(l);
  }
  std::vector<const ConceptVector*> vectors;
  for (std::size_t l : layers) {
    const ConceptVector* found = nullptr;
    for (const auto& v : concepts) {
      if (v.layer == l) found = &v;
    }
    if (!found) throw Error(ErrorKind::kInput, "no concept vector for layer " + std::to_string(l));
    vectors.push_back(found);
  }
  for (const auto& p : prompts) {
    if (p.context.empty()) throw Error(ErrorKind::kInput, "prompt '" + p.id + "' has no context");
  }

  // outcome[i][0] is the baseline; then (+alpha, -alpha) per layer.
  const std::size_t width = 1 + 2 * layers.size();
  std::vector<char> outcome(prompts.size() * width);
  parallel_for(prompts.size(), options.jobs, [&](std::size_t i) {
    char* row = outcome.data() + i * width;
    row[0] = chooses_secure(model, prompts[i], {}, options.scope);
    for (std::size_t j = 0; j < layers.size(); ++j) {
      for (int sign = 0; sign < 2; ++sign) {
        SteeringSpec spec{layers[j], sign == 0 ? options.alpha : -options.alpha,
                          vectors[j]->values, options.scope};
        row[1 + 2 * j + sign] =
            chooses_secure(model, prompts[i], std::span<const SteeringSpec>(&spec, 1), options.scope);
      }
    }
  });

  FlipReport report;
  report.alpha = options.alpha;
  report.normalization = options.normalization;
  std::size_t baseline_secure = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const bool secure = outcome[i * width];
    baseline_secure += secure ? 1 : 0;
    const Choice secure_choice =
        prompts[i].positive == c.choice_token(Choice::kA) ? Choice::kA : Choice::kB;
    report.baseline.push_back(secure ? secure_choice : other(secure_choice));
  }
  for (std::size_t j = 0; j < layers.size(); ++j) {
    FlipRow row;
    row.layer = layers[j];
    row.n_prompts = prompts.size();
    row.baseline_secure = baseline_secure;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const bool base = outcome[i * width];
      const bool plus = outcome[i * width + 1 + 2 * j];
      const bool minus = outcome[i * width + 2 + 2 * j];
      auto tally = [base](FlipCounts& counts, bool steered) {
        if (base == steered) {
          ++counts.unchanged;
        } else if (steered) {
          ++counts.to_secure;
        } else {
          ++counts.to_insecure;
        }
      };
      tally(row.positive, plus);
      tally(row.negative, minus);
      if (!base && plus && !minus) ++row.flipped_back;
    }
    const bool all = options.normalization == FlipNormalization::kAllPrompts;
    row.frac_to_secure =
        fraction(row.positive.to_secure, all ? row.n_prompts : row.n_prompts - baseline_secure);
    row.frac_to_insecure =
        fraction(row.negative.to_insecure, all ? row.n_prompts : baseline_secure);
    report.rows.push_back(row);
  }
  return report;
}

MarkerVerdictProvider::MarkerVerdictProvider(const ModelConfig& config, Token secure_marker,
                                             Token insecure_marker)
    : config_(config), secure_(secure_marker), insecure_(insecure_marker) {
  if (secure_marker == insecure_marker) {
    throw Error(ErrorKind::kConfig, "secure and insecure markers must differ");
  }
}

SampleVerdict MarkerVerdictProvider::judge(const Task& task,
                                           std::span<const Token> generated) const {
  SampleVerdict v;
  v.task_id = task.id;
  v.code = decode_tokens(generated, config_);
  for (Token t : generated) {
    if (t == secure_ || t == insecure_) {
      v.compiled = true;
      v.functional_pass = true;
      v.security_pass = t == secure_;
      break;
    }
  }
  return v;
}

std::uint64_t sample_seed(std::uint64_t base, const Task& task, std::size_t run,
                          std::size_t sample) {
  return derive_seed(base, task.id, run, sample);
}

GenerationResult run_generations(const Model& model, std::span<const Task> tasks,
                                 const std::optional<SteeringSpec>& steering,
                                 const VerdictProvider& provider, const GenerationConfig& config) {
  config.sampling.validate();
  if (config.runs < 1) throw Error(ErrorKind::kConfig, "runs must be >= 1");
  if (config.samples_per_task < 1) throw Error(ErrorKind::kConfig, "samples_per_task must be >= 1");
  std::optional<SteeringSpec> spec = steering;
  if (spec) {
    spec->scope = config.scope;
    validate_steering(model.config(), *spec);
  }

  const std::size_t per_task = config.runs * config.samples_per_task;
  const std::size_t total = tasks.size() * per_task;
  std::vector<std::optional<SampleVerdict>> verdicts(total);
  std::vector<std::string> errors(total);
  parallel_for(total, config.jobs, [&](std::size_t item) {
    const std::size_t task = item / per_task;
    const std::size_t run = (item % per_task) / config.samples_per_task;
    const std::size_t sample = item % config.samples_per_task;
    SamplingConfig sampling = config.sampling;
    sampling.seed = sample_seed(config.sampling.seed, tasks[task], run, sample);
    const auto gen = generate(model, tasks[task].prompt, sampling, spec);
    try {
      SampleVerdict v = provider.judge(tasks[task], gen.generated);
      v.task_id = tasks[task].id;
      v.run_index = run;
      v.sample_index = sample;
      verdicts[item] = std::move(v);
    } catch (const std::exception& e) {
      errors[item] = "task '" + tasks[task].id + "' run " + std::to_string(run) + " sample " +
                     std::to_string(sample) + ": " + e.what();
    }
  });

  GenerationResult result;
  for (std::size_t task = 0; task < tasks.size(); ++task) {
    for (std::size_t run = 0; run < config.runs; ++run) {
      GenerationBatch batch;
      batch.task_id = tasks[task].id;
      batch.run_index = run;
      for (std::size_t sample = 0; sample < config.samples_per_task; ++sample) {
        const std::size_t item = task * per_task + run * config.samples_per_task + sample;
        if (verdicts[item]) {
          batch.samples.push_back(std::move(*verdicts[item]));
        } else {
          result.failures.push_back(std::move(errors[item]));
        }
      }
      mark_duplicates(batch.samples);
      result.batches.push_back(std::move(batch));
    }
  }
  return result;
}

namespace {

MetricEstimate estimate(std::span<const GenerationBatch> batches, Metric metric) {
  try {
    const auto r = aggregate(batches, AggregateOptions{metric, 1, false});
    return {r.mean, r.ci_halfwidth};
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kDegenerate) throw;
    return {};
  }
}

SweepRow sweep_row(const Model& model, std::span<const Task> tasks, std::span<const float> vector,
                   std::size_t layer, double alpha, const VerdictProvider& provider,
                   const GenerationConfig& config) {
  SweepRow row;
  row.alpha = alpha;
  row.layer = layer;
  row.runs = config.runs;
  row.seed = config.sampling.seed;
  SteeringSpec spec{layer, alpha, std::vector<float>(vector.begin(), vector.end()), config.scope};
  auto result = run_generations(model, tasks, spec, provider, config);
  if (!result.failures.empty()) {
    row.complete = false;
    row.error = result.failures.front();
    if (result.failures.size() > 1) {
      row.error += " (+" + std::to_string(result.failures.size() - 1) + " more)";
    }
    row.batches = std::move(result.batches);
    return row;
  }
  row.batches = std::move(result.batches);
  row.pass_at_1 = estimate(row.batches, Metric::kPassAtK);
  row.secure_at_1_pass = estimate(row.batches, Metric::kSecureAtKPass);
  row.secure_pass_at_1 = estimate(row.batches, Metric::kSecurePassAtK);
  row.sven_sr = estimate(row.batches, Metric::kSvenSr);
  return row;
}

}  // namespace

std::vector<SweepRow> magnitude_sweep(const Model& model, std::span<const Task> tasks,
                                      std::span<const float> concept_vector, std::size_t layer,
                                      std::span<const double> alphas,
                                      const VerdictProvider& provider,
                                      const GenerationConfig& config) {
  if (alphas.empty()) throw Error(ErrorKind::kConfig, "alpha grid is empty");
  if (tasks.empty()) throw Error(ErrorKind::kInput, "task set is empty");
  std::vector<SweepRow> rows;
  for (double alpha : alphas) {
    rows.push_back(sweep_row(model, tasks, concept_vector, layer, alpha, provider, config));
  }
  return rows;
}

std::vector<std::vector<float>> random_directions(std::size_t dim, std::size_t k, double norm,
                                                  std::uint64_t seed) {
  if (dim == 0) throw Error(ErrorKind::kInput, "dimension must be positive");
  std::vector<std::vector<float>> out;
  for (std::size_t i = 0; i < k; ++i) {
    Rng rng(derive_seed(seed, "random-direction", i));
    std::vector<double> v(dim);
    double sq = 0.0;
    for (double& x : v) {
      x = rng.normal();
      sq += x * x;
    }
    const double scale = norm / std::sqrt(sq);
    std::vector<float> f(dim);
    for (std::size_t j = 0; j < dim; ++j) f[j] = static_cast<float>(v[j] * scale);
    out.push_back(std::move(f));
  }
  return out;
}

AblationReport random_vector_ablation(const Model& model, std::span<const Task> tasks,
                                      std::span<const float> concept_vector, std::size_t layer,
                                      double alpha, std::size_t k_vectors, std::uint64_t seed,
                                      const VerdictProvider& provider,
                                      const GenerationConfig& config) {
  if (k_vectors < 1) throw Error(ErrorKind::kConfig, "k_vectors must be >= 1");
  if (tasks.empty()) throw Error(ErrorKind::kInput, "task set is empty");
  AblationReport report;
  report.random_vectors = random_directions(concept_vector.size(), k_vectors, norm(concept_vector), seed);

  report.rows.push_back({"vanilla", sweep_row(model, tasks, concept_vector, layer, 0.0, provider, config),
                         std::nullopt, std::nullopt});
  report.rows.push_back(
      {"concept", sweep_row(model, tasks, concept_vector, layer, alpha, provider, config), {}, {}});
  for (std::size_t i = 0; i < k_vectors; ++i) {
    report.rows.push_back({"random_" + std::to_string(i + 1),
                           sweep_row(model, tasks, report.random_vectors[i], layer, alpha,
                                     provider, config),
                           {},
                           {}});
  }
  const auto& vanilla = report.rows.front().metrics;
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    auto& row = report.rows[i];
    if (row.metrics.secure_pass_at_1.mean && vanilla.secure_pass_at_1.mean) {
      row.delta_secure_pass_at_1 = *row.metrics.secure_pass_at_1.mean - *vanilla.secure_pass_at_1.mean;
    }
    if (row.metrics.pass_at_1.mean && vanilla.pass_at_1.mean) {
      row.delta_pass_at_1 = *row.metrics.pass_at_1.mean - *vanilla.pass_at_1.mean;
    }
  }
  return report;
}

}  // namespace scs
