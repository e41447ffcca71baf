#include "scs/concept.hpp"

#include <cmath>
#include <json.hpp>
#include <numeric>
#include <optional>

#include "binary_io.hpp"
#include "json_convert.hpp"
#include "scs/error.hpp"
#include "scs/forward.hpp"
#include "scs/parallel.hpp"

namespace scs {

namespace {

using detail::json;

constexpr double kDegenerateNorm = 1e-12;

}  // namespace

std::string concept_to_json(const ConceptVector& c) {
  json j{{"model_id", c.model_id},       {"layer", c.layer},
         {"dataset_id", c.dataset_id},   {"num_samples", c.num_samples},
         {"num_skipped", c.num_skipped}, {"degenerate", c.degenerate},
         {"values", c.values}};
  return j.dump(2) + "\n";
}

ConceptVector concept_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("concept vector: ") + e.what());
  }
  ConceptVector c;
  try {
    c.model_id = detail::require(j, "model_id").get<std::string>();
    c.layer = detail::require(j, "layer").get<std::size_t>();
    c.dataset_id = j.value("dataset_id", "");
    c.num_samples = detail::require(j, "num_samples").get<std::size_t>();
    c.num_skipped = j.value("num_skipped", std::size_t{0});
    c.degenerate = j.value("degenerate", false);
    const auto& values = detail::require(j, "values");
    if (!values.is_array()) throw Error(ErrorKind::kParse, "concept vector: 'values' must be an array");
    c.values.reserve(values.size());
    for (const auto& v : values) {
      if (!v.is_number()) throw Error(ErrorKind::kParse, "concept vector: non-numeric value");
      c.values.push_back(static_cast<float>(v.get<double>()));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("concept vector: ") + e.what());
  }
  for (float v : c.values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::kValidation, "concept vector: non-finite value");
  }
  return c;
}

void save_concept(const ConceptVector& cv, const std::filesystem::path& path) {
  detail::write_file_atomic(path, concept_to_json(cv));
}

ConceptVector load_concept(const std::filesystem::path& path) {
  try {
    return concept_from_json(detail::read_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw;
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::span<const float> ChoiceActivations::positive_at(std::size_t prompt, std::size_t layer) const {
  return std::span<const float>(positive).subspan(
      (prompt * (num_layers + 1) + layer) * hidden_dim, hidden_dim);
}

std::span<const float> ChoiceActivations::negative_at(std::size_t prompt, std::size_t layer) const {
  return std::span<const float>(negative).subspan(
      (prompt * (num_layers + 1) + layer) * hidden_dim, hidden_dim);
}

ChoiceActivations capture_choice_activations(const Model& model,
                                             std::span<const ContrastiveInput> prompts,
                                             const ExtractionOptions& options) {
  const auto& c = model.config();
  const std::size_t layers = c.num_layers + 1;
  const std::size_t stride = layers * c.hidden_dim;

  // Overflow is decided before any work so the policy does not depend on
  // scheduling.
  std::vector<bool> fits(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto& p = prompts[i];
    fits[i] = p.context.size() + 1 <= c.max_context;
    if (!fits[i] && !options.skip_overflow) {
      throw Error(ErrorKind::kTruncation,
                  "prompt '" + p.id + "' needs " + std::to_string(p.context.size() + 1) +
                      " tokens, max_context is " + std::to_string(c.max_context));
    }
    if (p.context.empty()) throw Error(ErrorKind::kInput, "prompt '" + p.id + "' has no context");
  }

  std::vector<float> pos(prompts.size() * stride);
  std::vector<float> neg(prompts.size() * stride);
  parallel_for(prompts.size(), options.jobs, [&](std::size_t i) {
    if (!fits[i]) return;
    DecodeState context(model, {}, DecodeState::kNoPrompt, false);
    context.push(prompts[i].context);
    DecodeState branch = context;
    branch.push(prompts[i].positive);
    context.push(prompts[i].negative);
    for (std::size_t l = 0; l < layers; ++l) {
      const auto p = branch.last_residual(l);
      const auto n = context.last_residual(l);
      std::copy(p.begin(), p.end(), pos.begin() + i * stride + l * c.hidden_dim);
      std::copy(n.begin(), n.end(), neg.begin() + i * stride + l * c.hidden_dim);
    }
  });

  ChoiceActivations acts;
  acts.num_layers = c.num_layers;
  acts.hidden_dim = c.hidden_dim;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (!fits[i]) {
      acts.skipped_ids.push_back(prompts[i].id);
      continue;
    }
    acts.ids.push_back(prompts[i].id);
    acts.positive.insert(acts.positive.end(), pos.begin() + i * stride, pos.begin() + (i + 1) * stride);
    acts.negative.insert(acts.negative.end(), neg.begin() + i * stride, neg.begin() + (i + 1) * stride);
  }
  return acts;
}

std::vector<std::vector<double>> prompt_differences(const ChoiceActivations& acts,
                                                    std::size_t layer) {
  if (layer > acts.num_layers) {
    throw Error(ErrorKind::kInput, "layer " + std::to_string(layer) + " out of range");
  }
  std::vector<std::vector<double>> out(acts.size(), std::vector<double>(acts.hidden_dim));
  for (std::size_t i = 0; i < acts.size(); ++i) {
    const auto p = acts.positive_at(i, layer);
    const auto n = acts.negative_at(i, layer);
    for (std::size_t j = 0; j < acts.hidden_dim; ++j) {
      out[i][j] = static_cast<double>(p[j]) - static_cast<double>(n[j]);
    }
  }
  return out;
}

std::vector<ConceptVector> concepts_from_activations(const ChoiceActivations& acts,
                                                     std::string_view model_id,
                                                     std::string_view dataset_id) {
  if (acts.size() == 0) throw Error(ErrorKind::kInput, "no prompts to extract from");
  const std::size_t d = acts.hidden_dim;
  std::vector<ConceptVector> out;
  for (std::size_t l = 0; l <= acts.num_layers; ++l) {
    std::vector<double> sum(d, 0.0);
    for (std::size_t i = 0; i < acts.size(); ++i) {
      const auto p = acts.positive_at(i, l);
      const auto n = acts.negative_at(i, l);
      for (std::size_t j = 0; j < d; ++j) sum[j] += static_cast<double>(p[j]) - static_cast<double>(n[j]);
    }
    ConceptVector c;
    c.model_id = model_id;
    c.layer = l;
    c.dataset_id = dataset_id;
    c.num_samples = acts.size();
    c.num_skipped = acts.skipped_ids.size();
    c.values.resize(d);
    const double count = static_cast<double>(acts.size());
    for (std::size_t j = 0; j < d; ++j) c.values[j] = static_cast<float>(sum[j] / count);
    c.degenerate = c.norm() < kDegenerateNorm;
    out.push_back(std::move(c));
  }
  return out;
}

ConceptVector extract_concept(const Model& model, std::span<const ContrastiveInput> prompts,
                              std::size_t layer, std::string_view dataset_id,
                              const ExtractionOptions& options) {
  if (layer > model.config().num_layers) {
    throw Error(ErrorKind::kInput, "layer " + std::to_string(layer) + " outside [0, " +
                                       std::to_string(model.config().num_layers) + "]");
  }
  auto all = extract_all_layers(model, prompts, dataset_id, options);
  return std::move(all[layer]);
}

std::vector<ConceptVector> extract_all_layers(const Model& model,
                                              std::span<const ContrastiveInput> prompts,
                                              std::string_view dataset_id,
                                              const ExtractionOptions& options) {
  return concepts_from_activations(capture_choice_activations(model, prompts, options), model.id(),
                                   dataset_id);
}

std::vector<double> difference_of_means(std::span<const std::vector<double>> positive,
                                        std::span<const std::vector<double>> negative) {
  if (positive.empty() || negative.empty()) {
    throw Error(ErrorKind::kInput, "difference of means needs both sets non-empty");
  }
  const std::size_t d = positive.front().size();
  auto mean = [d](std::span<const std::vector<double>> set) {
    std::vector<double> m(d, 0.0);
    for (const auto& v : set) {
      if (v.size() != d) throw Error(ErrorKind::kInput, "activation dimensions differ");
      for (std::size_t j = 0; j < d; ++j) m[j] += v[j];
    }
    for (double& x : m) x /= static_cast<double>(set.size());
    return m;
  };
  const auto mp = mean(positive);
  const auto mn = mean(negative);
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) out[j] = mp[j] - mn[j];
  return out;
}

std::vector<ConvergenceRow> convergence_curve(std::span<const std::vector<double>> differences,
                                              std::span<const std::size_t> order) {
  const std::size_t n = differences.size();
  if (n < 2) throw Error(ErrorKind::kInput, "convergence needs at least 2 difference vectors");
  std::vector<std::size_t> idx(order.begin(), order.end());
  if (idx.empty()) {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), 0);
  }
  if (idx.size() != n) throw Error(ErrorKind::kInput, "order length does not match sample count");
  std::vector<bool> seen(n, false);
  for (auto i : idx) {
    if (i >= n || seen[i]) throw Error(ErrorKind::kInput, "order is not a permutation");
    seen[i] = true;
  }
  const std::size_t d = differences.front().size();
  for (const auto& v : differences) {
    if (v.size() != d) throw Error(ErrorKind::kInput, "difference vectors have different lengths");
  }

  std::vector<std::vector<double>> means(n, std::vector<double>(d));
  std::vector<double> sum(d, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& v = differences[idx[k]];
    for (std::size_t j = 0; j < d; ++j) {
      sum[j] += v[j];
      means[k][j] = sum[j] / static_cast<double>(k + 1);
    }
  }
  const auto& final_mean = means.back();
  const double final_norm = norm(final_mean);

  std::vector<ConvergenceRow> rows;
  rows.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    ConvergenceRow row;
    row.k = k + 1;
    if (k + 1 == n) {
      row.cosine_to_final = 1.0;
      row.magnitude_ratio = 1.0;
    } else {
      row.cosine_to_final = cosine<double>(means[k], final_mean).value;
      row.magnitude_ratio = final_norm == 0.0 ? 0.0 : norm(means[k]) / final_norm;
    }
    double sq = 0.0;
    for (std::size_t i = 0; i <= k; ++i) {
      const auto& v = differences[idx[i]];
      for (std::size_t j = 0; j < d; ++j) {
        const double e = v[j] - means[k][j];
        sq += e * e;
      }
    }
    row.running_std = std::sqrt(sq / static_cast<double>(k + 1));
    rows.push_back(row);
  }
  return rows;
}

Cosine concept_similarity(const ConceptVector& a, const ConceptVector& b) {
  if (a.values.size() != b.values.size()) {
    throw Error(ErrorKind::kInput, "concept dimensions differ: " + std::to_string(a.values.size()) +
                                       " vs " + std::to_string(b.values.size()));
  }
  return cosine<float>(a.values, b.values);
}

}  // namespace scs
