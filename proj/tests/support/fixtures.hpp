#pragma once

// Shared builders for unit and acceptance tests: synthetic contrastive
// data and toy models with planted mechanisms.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scs/concept.hpp"
#include "scs/dataset.hpp"
#include "scs/forward.hpp"
#include "scs/model.hpp"
#include "scs/steering.hpp"

namespace scs::testing {

inline constexpr Token kTrigger = '$';

// Short code-like snippets; only the secure side contains the trigger byte.
std::vector<ContrastivePair> synthetic_pairs(std::size_t n, std::uint64_t seed,
                                             Token trigger = kTrigger);

std::vector<double> random_unit(std::size_t dim, std::uint64_t seed);

// Mean residual norm at `layer` over random printable sequences.
double residual_scale(const Model& model, std::size_t layer, std::uint64_t seed,
                      std::size_t sequences = 8, std::size_t length = 32);

// Adds gain * direction at `layer` whenever the trigger is in scope.
Model concept_model(const ModelConfig& config, std::size_t layer, std::vector<double> direction,
                    double gain);

// Feature along `direction` is erased at `layer` and read out onto the choice
// token whose snippet holds the trigger: only steering at `layer` itself can
// move the A/B decision through the readout.
Model flip_model(const ModelConfig& config, std::size_t layer, std::vector<double> direction,
                 double readout_gain);

// Feature along `direction` at `layer` is read out onto two marker tokens,
// with `bias` making the markers dominate generation.
Model marker_model(const ModelConfig& config, std::size_t layer, std::vector<double> direction,
                   Token secure_marker, Token insecure_marker, double readout_gain, double bias);

std::vector<Task> random_tasks(std::size_t n, std::size_t length, std::uint64_t seed);

ConceptVector concept_from(const std::vector<double>& values, std::size_t layer,
                           double scale = 1.0);

std::vector<ContrastiveInput> synthetic_inputs(const ModelConfig& config, std::size_t n,
                                               std::uint64_t seed);

// Fresh scratch directory, removed when the object goes out of scope.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace scs::testing
