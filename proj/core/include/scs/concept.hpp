#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scs/dataset.hpp"
#include "scs/model.hpp"
#include "scs/vec.hpp"

namespace scs {

struct ConceptVector {
  std::string model_id;
  std::size_t layer = 0;
  std::vector<float> values;
  std::size_t num_samples = 0;
  std::string dataset_id;
  std::size_t num_skipped = 0;  // prompts dropped by the overflow policy
  bool degenerate = false;      // norm below 1e-12

  double norm() const { return scs::norm(values); }
};

std::string concept_to_json(const ConceptVector& cv);
ConceptVector concept_from_json(std::string_view text);
void save_concept(const ConceptVector& cv, const std::filesystem::path& path);
ConceptVector load_concept(const std::filesystem::path& path);

// Final-position residuals of x||p and x||n for every prompt and layer.
// This is the common input of in-process and dump-based extraction.
struct ChoiceActivations {
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  std::vector<std::string> ids;
  std::vector<float> positive;  // [N x (L+1) x d]
  std::vector<float> negative;  // [N x (L+1) x d]
  std::vector<std::string> skipped_ids;

  std::size_t size() const noexcept { return ids.size(); }
  std::span<const float> positive_at(std::size_t prompt, std::size_t layer) const;
  std::span<const float> negative_at(std::size_t prompt, std::size_t layer) const;
};

struct ExtractionOptions {
  bool skip_overflow = false;  // default aborts on the first prompt that does not fit
  unsigned jobs = 1;
};

ChoiceActivations capture_choice_activations(const Model& model,
                                             std::span<const ContrastiveInput> prompts,
                                             const ExtractionOptions& options = {});

// Per-prompt differences a(x||p) - a(x||n) at one layer, in double.
std::vector<std::vector<double>> prompt_differences(const ChoiceActivations& acts,
                                                    std::size_t layer);

// Mean difference per layer 0..L. Summation runs in prompt order in double.
std::vector<ConceptVector> concepts_from_activations(const ChoiceActivations& acts,
                                                     std::string_view model_id,
                                                     std::string_view dataset_id);

ConceptVector extract_concept(const Model& model, std::span<const ContrastiveInput> prompts,
                              std::size_t layer, std::string_view dataset_id = "",
                              const ExtractionOptions& options = {});
std::vector<ConceptVector> extract_all_layers(const Model& model,
                                              std::span<const ContrastiveInput> prompts,
                                              std::string_view dataset_id = "",
                                              const ExtractionOptions& options = {});

// mean(positive) - mean(negative) over two unpaired activation sets.
std::vector<double> difference_of_means(std::span<const std::vector<double>> positive,
                                        std::span<const std::vector<double>> negative);

struct ConvergenceRow {
  std::size_t k = 0;
  double cosine_to_final = 0.0;
  double magnitude_ratio = 0.0;
  double running_std = 0.0;  // RMS distance of the first k samples to their mean
};

// `order` permutes the samples; empty means index order.
std::vector<ConvergenceRow> convergence_curve(std::span<const std::vector<double>> differences,
                                              std::span<const std::size_t> order = {});

// Cosine with a zero-norm flag. Throws Error(kInput) on dimension mismatch.
Cosine concept_similarity(const ConceptVector& a, const ConceptVector& b);

}  // namespace scs
