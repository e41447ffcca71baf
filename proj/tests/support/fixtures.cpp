#include "fixtures.hpp"

#include <array>
#include <atomic>
#include <cmath>
#include <unistd.h>

#include "scs/rng.hpp"
#include "scs/vec.hpp"

namespace scs::testing {

namespace {

constexpr std::array<const char*, 8> kLines = {
    "buf = read(n)", "x = buf[i]",   "if x > 0:",      "  total += x",
    "out.write(x)",  "i = i + 1",    "n = len(items)", "return total",
};

std::string snippet_body(Rng& rng) {
  std::string code;
  const std::size_t lines = 2 + rng.below(2);
  for (std::size_t i = 0; i < lines; ++i) {
    code += kLines[rng.below(kLines.size())];
    code += '\n';
  }
  return code;
}

}  // namespace

std::vector<ContrastivePair> synthetic_pairs(std::size_t n, std::uint64_t seed, Token trigger) {
  std::vector<ContrastivePair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, "pair", i));
    const std::string body = snippet_body(rng);
    ContrastivePair p;
    p.id = "pair-" + std::to_string(i);
    p.language = "Python";
    p.category = "cwe-" + std::to_string(rng.below(4));
    p.secure_code = body + "check" + std::string(1, static_cast<char>(trigger)) + "(x)";
    p.insecure_code = body + "eval(x)";
    p.description = "synthetic";
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<double> random_unit(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(dim);
  for (double& x : v) x = rng.normal();
  const double n = norm(v);
  for (double& x : v) x /= n;
  return v;
}

double residual_scale(const Model& model, std::size_t layer, std::uint64_t seed,
                      std::size_t sequences, std::size_t length) {
  Rng rng(seed);
  double total = 0.0;
  for (std::size_t s = 0; s < sequences; ++s) {
    std::vector<Token> tokens(length);
    for (Token& t : tokens) t = static_cast<Token>(32 + rng.below(95));
    const auto trace = forward_trace(model, tokens);
    for (std::size_t t = 0; t < length; ++t) total += norm(trace.residual(layer, t));
  }
  return total / static_cast<double>(sequences * length);
}

Model concept_model(const ModelConfig& config, std::size_t layer, std::vector<double> direction,
                    double gain) {
  PlantedConcept p;
  p.layer = layer;
  p.direction = std::move(direction);
  p.trigger_token = kTrigger;
  p.gain = gain;
  return plant_concept(build_model(config), std::move(p));
}

Model flip_model(const ModelConfig& config, std::size_t layer, std::vector<double> direction,
                 double readout_gain) {
  PlantedConcept p;
  p.layer = layer;
  p.direction = std::move(direction);
  p.trigger_token = kTrigger;
  p.gain = 0.0;
  p.overwrite = true;
  p.readout = PlantedReadout{ReadoutKind::kChoiceBinding, readout_gain, 0.0, 0, 0};
  return plant_concept(build_model(config), std::move(p));
}

Model marker_model(const ModelConfig& config, std::size_t layer, std::vector<double> direction,
                   Token secure_marker, Token insecure_marker, double readout_gain, double bias) {
  PlantedConcept p;
  p.layer = layer;
  p.direction = std::move(direction);
  p.trigger_token = kTrigger;
  p.gain = 0.0;
  p.overwrite = true;
  p.readout =
      PlantedReadout{ReadoutKind::kTokenPair, readout_gain, bias, secure_marker, insecure_marker};
  return plant_concept(build_model(config), std::move(p));
}

std::vector<Task> random_tasks(std::size_t n, std::size_t length, std::uint64_t seed) {
  std::vector<Task> tasks;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, "task", i));
    Task t;
    t.id = "task-" + std::to_string(i);
    t.category = "cwe-" + std::to_string(i % 3);
    for (std::size_t j = 0; j < length; ++j) t.prompt.push_back(static_cast<Token>(97 + rng.below(26)));
    tasks.push_back(std::move(t));
  }
  return tasks;
}

ConceptVector concept_from(const std::vector<double>& values, std::size_t layer, double scale) {
  ConceptVector c;
  c.model_id = "test";
  c.layer = layer;
  c.num_samples = 1;
  for (double v : values) c.values.push_back(static_cast<float>(v * scale));
  return c;
}

std::vector<ContrastiveInput> synthetic_inputs(const ModelConfig& config, std::size_t n,
                                               std::uint64_t seed) {
  const auto pairs = synthetic_pairs(n, seed);
  return encode_ab_prompts(build_ab_prompts(pairs, seed), config);
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("scs-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace scs::testing
