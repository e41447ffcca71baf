#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scs/concept.hpp"
#include "scs/forward.hpp"

namespace scs {

struct PcaBasis {
  std::vector<double> mean;
  std::vector<std::vector<double>> components;  // unit norm, mutually orthogonal
  std::vector<double> explained_variance;       // non-increasing
  double total_variance = 0.0;                  // trace of the sample covariance

  std::size_t dim() const noexcept { return mean.size(); }
};

struct PcaOptions {
  // Return trailing zero-variance components instead of failing when the
  // data spans fewer than n_components directions.
  bool allow_rank_deficient = false;
};

// Sample covariance (1/(N-1)) followed by a symmetric eigendecomposition.
// Each component is signed so its largest-magnitude entry is positive.
PcaBasis pca_fit(std::span<const std::vector<double>> data, std::size_t n_components,
                 const PcaOptions& options = {});

std::vector<double> project(std::span<const std::vector<double>> data, const PcaBasis& basis,
                            std::size_t component);

enum class PlaneMode {
  kRaw,        // (PC1, PC2)
  kPc1Removed  // (PC2, PC3)
};

std::vector<std::array<double, 2>> project_plane(std::span<const std::vector<double>> data,
                                                 const PcaBasis& basis, PlaneMode mode);

struct TokenAlignmentRow {
  std::size_t index = 0;
  Token token = 0;
  std::string text;
  double cosine = 0.0;
  bool zero_norm = false;
};

struct TokenAlignmentReport {
  std::size_t layer = 0;
  std::vector<TokenAlignmentRow> rows;
  std::vector<std::size_t> top3;     // largest cosines, ties to the lower index
  std::vector<std::size_t> bottom3;  // smallest cosines, ties to the lower index
};

TokenAlignmentReport token_alignment(const ForwardTrace& trace, const ConceptVector& cv,
                                     std::size_t layer);

struct ProbeOptions {
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  std::size_t steps = 2000;
  double learning_rate = 0.1;
};

struct ProbeResult {
  std::vector<int> classes;  // sorted label values; row/column order of `confusion`
  std::vector<double> fold_f1;
  double mean_f1 = 0.0;
  double std_f1 = 0.0;  // sample standard deviation across folds
  std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted], summed over folds
  std::vector<std::size_t> fold_of;                  // validation fold of each point
  std::vector<int> predictions;                      // out-of-fold prediction per point
};

// Stratified k-fold assignment with seeded shuffling within each class.
std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds,
                                          std::uint64_t seed);

// Macro-averaged F1 over the classes present in truth or predictions.
double macro_f1(std::span<const int> truth, std::span<const int> predicted);

// Multinomial logistic regression trained by full-batch gradient descent on
// features standardized with training-fold statistics.
ProbeResult linear_probe(std::span<const std::vector<double>> points, std::span<const int> labels,
                         const ProbeOptions& options = {});

struct TrajectoryInput {
  std::string name;
  std::size_t layer = 0;
  std::vector<double> values;
};

struct TrajectoryPoint {
  std::string name;
  std::size_t layer = 0;
  double x = 0.0;
  double y = 0.0;
};

struct Trajectory {
  PcaBasis basis;
  std::vector<TrajectoryPoint> points;
};

// Pooled 2-component PCA over all vectors.
Trajectory concept_trajectory(std::span<const TrajectoryInput> vectors);

}  // namespace scs
