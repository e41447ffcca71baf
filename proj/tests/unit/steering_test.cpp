#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "scs/error.hpp"
#include "scs/report.hpp"
#include "scs/rng.hpp"
#include "scs/steering.hpp"

namespace scs {
namespace {

constexpr Token kSecure = 'S';
constexpr Token kInsecure = 'X';

ModelConfig small(std::uint64_t seed) {
  ModelConfig c;
  c.hidden_dim = 32;
  c.num_layers = 4;
  c.num_heads = 4;
  c.seed = seed;
  return c;
}

std::vector<ConceptVector> per_layer(const std::vector<double>& dir, std::size_t layers, double scale = 1.0) {
  std::vector<ConceptVector> out;
  for (std::size_t l = 1; l <= layers; ++l) out.push_back(testing::concept_from(dir, l, scale));
  return out;
}

// Verdict is a fair coin keyed on the task and the generated tokens.
class CoinProvider : public VerdictProvider {
 public:
  SampleVerdict judge(const Task& task, std::span<const Token> generated) const override {
    std::uint64_t h = hash_string(task.id);
    for (Token t : generated) h = mix_seed(h, t);
    SampleVerdict v;
    v.code = std::to_string(h);
    v.compiled = true;
    v.functional_pass = true;
    v.security_pass = Rng(h).uniform() < 0.5;
    return v;
  }
};

class FailingProvider : public VerdictProvider {
 public:
  SampleVerdict judge(const Task& task, std::span<const Token>) const override {
    if (task.id == "task-1") throw std::runtime_error("analyzer crashed");
    SampleVerdict v;
    v.compiled = true;
    return v;
  }
};

GenerationConfig marker_config(std::size_t samples, std::size_t runs, std::uint64_t seed) {
  GenerationConfig g;
  g.sampling = SamplingConfig{1.0, 1.0, 2, seed};
  g.samples_per_task = samples;
  g.runs = runs;
  return g;
}

TEST(Flip, ZeroVectorNeverFlips) {
  const ModelConfig c = small(1);
  const Model m = testing::flip_model(c, 2, testing::random_unit(32, 2), 50.0);
  const auto inputs = testing::synthetic_inputs(c, 6, 3);
  const auto report = decision_flip_experiment(m, inputs, per_layer(std::vector<double>(32, 0.0), 4),
                                               FlipOptions{5.0, {}, SteeringScope::kAllPositions,
                                                           FlipNormalization::kAllPrompts, 1});
  ASSERT_EQ(report.rows.size(), 4u);
  for (const auto& row : report.rows) {
    EXPECT_EQ(row.positive.unchanged, 6u);
    EXPECT_EQ(row.negative.unchanged, 6u);
    EXPECT_EQ(row.frac_to_secure, 0.0);
    EXPECT_EQ(row.frac_to_insecure, 0.0);
  }
}

TEST(Flip, PlantedLayerFlipsBothWays) {
  const ModelConfig c = small(4);
  const auto dir = testing::random_unit(32, 5);
  const Model m = testing::flip_model(c, 2, dir, 400.0);
  const auto inputs = testing::synthetic_inputs(c, 12, 6);
  FlipOptions opts{0.25, {}, SteeringScope::kAllPositions, FlipNormalization::kFlippable, 2};
  const auto report = decision_flip_experiment(m, inputs, per_layer(dir, 4), opts);
  const auto& planted = report.rows[1];
  ASSERT_EQ(planted.layer, 2u);
  EXPECT_GE(planted.frac_to_secure, 0.8);
  EXPECT_GE(planted.frac_to_insecure, 0.8);
  // Prompts pushed to secure by +alpha come back under -alpha.
  EXPECT_EQ(planted.flipped_back, planted.positive.to_secure);

  for (const auto& row : report.rows) {
    EXPECT_EQ(row.positive.to_secure + row.positive.to_insecure + row.positive.unchanged, row.n_prompts);
    EXPECT_EQ(row.negative.to_secure + row.negative.to_insecure + row.negative.unchanged, row.n_prompts);
    EXPECT_GE(row.frac_to_secure, 0.0);
    EXPECT_LE(row.frac_to_secure, 1.0);
    EXPECT_GE(row.frac_to_insecure, 0.0);
    EXPECT_LE(row.frac_to_insecure, 1.0);
  }
}

TEST(Flip, NormalizationDenominators) {
  const ModelConfig c = small(4);
  const auto dir = testing::random_unit(32, 5);
  const Model m = testing::flip_model(c, 2, dir, 400.0);
  const auto inputs = testing::synthetic_inputs(c, 8, 7);
  FlipOptions opts{0.25, {2}, SteeringScope::kAllPositions, FlipNormalization::kAllPrompts, 1};
  const auto all = decision_flip_experiment(m, inputs, per_layer(dir, 4), opts);
  const auto& row = all.rows.at(0);
  EXPECT_DOUBLE_EQ(row.frac_to_secure, static_cast<double>(row.positive.to_secure) / 8.0);
  EXPECT_DOUBLE_EQ(row.frac_to_insecure, static_cast<double>(row.negative.to_insecure) / 8.0);
  opts.normalization = FlipNormalization::kFlippable;
  const auto flippable = decision_flip_experiment(m, inputs, per_layer(dir, 4), opts);
  const auto& f = flippable.rows.at(0);
  if (f.baseline_secure < 8) {
    EXPECT_DOUBLE_EQ(f.frac_to_secure, static_cast<double>(f.positive.to_secure) / (8.0 - f.baseline_secure));
  }
  if (f.baseline_secure > 0) {
    EXPECT_DOUBLE_EQ(f.frac_to_insecure, static_cast<double>(f.negative.to_insecure) / f.baseline_secure);
  }
  std::size_t secure = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    secure += answer_choice_logit(m, inputs[i].context).chosen() == all.baseline[i] &&
              c.choice_token(all.baseline[i]) == inputs[i].positive;
  }
  EXPECT_EQ(secure, row.baseline_secure);
}

TEST(Flip, Errors) {
  const ModelConfig c = small(8);
  const Model m = build_model(c);
  const auto inputs = testing::synthetic_inputs(c, 2, 9);
  const auto dir = testing::random_unit(32, 10);
  const std::vector<ConceptVector> only_two = {testing::concept_from(dir, 2)};
  EXPECT_THROW(decision_flip_experiment(m, inputs, only_two), Error);
  EXPECT_NO_THROW(decision_flip_experiment(m, inputs, only_two, FlipOptions{1.0, {2}, {}, {}, 1}));
  EXPECT_THROW(decision_flip_experiment(m, inputs, only_two, FlipOptions{0.0, {2}, {}, {}, 1}), Error);
}

TEST(Generations, SeedsDependOnlyOnCoordinates) {
  const Task a{"a", "", {}};
  EXPECT_EQ(sample_seed(1, a, 2, 3), sample_seed(1, a, 2, 3));
  EXPECT_NE(sample_seed(1, a, 2, 3), sample_seed(1, a, 3, 2));
  const ModelConfig c = small(11);
  const Model m = build_model(c);
  const auto tasks = testing::random_tasks(4, 6, 12);
  const CoinProvider coin;
  auto g = marker_config(2, 2, 13);
  g.sampling.max_new_tokens = 4;
  const auto serial = run_generations(m, tasks, std::nullopt, coin, g);
  g.jobs = 3;
  const auto parallel = run_generations(m, tasks, std::nullopt, coin, g);
  ASSERT_EQ(serial.batches.size(), 8u);
  for (std::size_t i = 0; i < serial.batches.size(); ++i) {
    ASSERT_EQ(serial.batches[i].n(), 2u);
    for (std::size_t s = 0; s < 2; ++s) {
      EXPECT_EQ(serial.batches[i].samples[s].code, parallel.batches[i].samples[s].code);
    }
  }
  EXPECT_EQ(serial.batches[3].task_id, "task-1");
  EXPECT_EQ(serial.batches[3].run_index, 1u);
}

TEST(Sweep, ZeroAlphaIsDeterministicAndVectorIndependent) {
  const ModelConfig c = small(14);
  const Model m = testing::marker_model(c, 2, testing::random_unit(32, 15), kSecure, kInsecure, 3.0, 8.0);
  const auto tasks = testing::random_tasks(5, 8, 16);
  const MarkerVerdictProvider provider(c, kSecure, kInsecure);
  const auto g = marker_config(3, 2, 17);
  const std::vector<double> zero = {0.0};
  std::vector<float> v1(32, 1.0F);
  std::vector<float> v2(32, -7.0F);
  const auto a = magnitude_sweep(m, tasks, v1, 2, zero, provider, g);
  const auto b = magnitude_sweep(m, tasks, v1, 2, zero, provider, g);
  const auto other = magnitude_sweep(m, tasks, v2, 3, zero, provider, g);
  const auto vanilla = run_generations(m, tasks, std::nullopt, provider, g);
  ASSERT_EQ(a.size(), 1u);
  for (const auto* row : {&b[0], &other[0]}) {
    EXPECT_EQ(row->secure_pass_at_1.mean, a[0].secure_pass_at_1.mean);
    EXPECT_EQ(row->pass_at_1.mean, a[0].pass_at_1.mean);
    EXPECT_EQ(row->sven_sr.mean, a[0].sven_sr.mean);
    EXPECT_EQ(row->secure_pass_at_1.ci_halfwidth, a[0].secure_pass_at_1.ci_halfwidth);
  }
  ASSERT_EQ(vanilla.batches.size(), a[0].batches.size());
  for (std::size_t i = 0; i < vanilla.batches.size(); ++i) {
    for (std::size_t s = 0; s < 3; ++s) {
      EXPECT_EQ(vanilla.batches[i].samples[s].code, a[0].batches[i].samples[s].code);
      EXPECT_EQ(other[0].batches[i].samples[s].code, a[0].batches[i].samples[s].code);
    }
  }
}

TEST(Sweep, SteeringTowardSecureIncreasesSecurePass) {
  const ModelConfig c = small(18);
  const auto dir = testing::random_unit(32, 19);
  const Model m = testing::marker_model(c, 2, dir, kSecure, kInsecure, 4.0, 8.0);
  const auto tasks = testing::random_tasks(10, 8, 20);
  const MarkerVerdictProvider provider(c, kSecure, kInsecure);
  const std::vector<double> alphas = {-1.0, 0.0, 1.0};
  const std::vector<float> v(dir.begin(), dir.end());
  const auto rows = magnitude_sweep(m, tasks, v, 2, alphas, provider, marker_config(4, 3, 21));
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    ASSERT_TRUE(r.complete) << r.error;
    ASSERT_TRUE(r.secure_pass_at_1.mean.has_value());
  }
  EXPECT_LT(*rows[0].secure_pass_at_1.mean, *rows[1].secure_pass_at_1.mean);
  EXPECT_LT(*rows[1].secure_pass_at_1.mean, *rows[2].secure_pass_at_1.mean);
  EXPECT_EQ(rows[2].alpha, 1.0);
  EXPECT_EQ(rows[2].layer, 2u);
  EXPECT_EQ(rows[2].runs, 3u);
  EXPECT_EQ(rows[2].seed, 21u);
}

TEST(Sweep, CoinProviderIntervalMatchesClosedForm) {
  const ModelConfig c = small(22);
  const Model m = build_model(c);
  const auto tasks = testing::random_tasks(1, 6, 23);
  const CoinProvider coin;
  auto g = marker_config(1, 10, 24);
  g.sampling.max_new_tokens = 6;
  const std::vector<double> zero = {0.0};
  const auto rows = magnitude_sweep(m, tasks, std::vector<float>(32, 0.0F), 1, zero, coin, g);
  std::vector<double> per_run;
  for (const auto& b : rows[0].batches) per_run.push_back(b.samples[0].security_pass ? 1.0 : 0.0);
  double mean = 0.0;
  for (double x : per_run) mean += x / 10.0;
  double sq = 0.0;
  for (double x : per_run) sq += (x - mean) * (x - mean);
  const double expected = 1.96 * std::sqrt(sq / 9.0) / std::sqrt(10.0);
  EXPECT_NEAR(rows[0].secure_pass_at_1.ci_halfwidth, expected, 0.1 * expected);
  EXPECT_GT(expected, 0.0);
}

TEST(Sweep, ProviderFailureMarksRowIncomplete) {
  const ModelConfig c = small(25);
  const Model m = build_model(c);
  const auto tasks = testing::random_tasks(3, 5, 26);
  const FailingProvider failing;
  const std::vector<double> alphas = {-1.0, 1.0};
  const auto rows = magnitude_sweep(m, tasks, std::vector<float>(32, 0.1F), 1, alphas, failing,
                                    marker_config(1, 1, 27));
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_FALSE(r.complete);
    EXPECT_NE(r.error.find("analyzer crashed"), std::string::npos) << r.error;
    EXPECT_NE(r.error.find("task-1"), std::string::npos) << r.error;
  }
}

TEST(Sweep, Errors) {
  const ModelConfig c = small(28);
  const Model m = build_model(c);
  const auto tasks = testing::random_tasks(1, 5, 29);
  const MarkerVerdictProvider provider(c, kSecure, kInsecure);
  EXPECT_THROW(magnitude_sweep(m, tasks, std::vector<float>(32, 0.0F), 1, {}, provider, marker_config(1, 1, 0)),
               Error);
  const std::vector<double> one = {1.0};
  EXPECT_THROW(magnitude_sweep(m, tasks, std::vector<float>(31, 0.0F), 1, one, provider, marker_config(1, 1, 0)),
               Error);
  EXPECT_THROW(MarkerVerdictProvider(c, kSecure, kSecure), Error);
}

TEST(Ablation, RandomVectorsShareNormAndSeed) {
  const auto a = random_directions(48, 5, 3.5, 30);
  const auto b = random_directions(48, 5, 3.5, 30);
  const auto other = random_directions(48, 5, 3.5, 31);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, other);
  for (const auto& v : a) EXPECT_NEAR(norm(v), 3.5, 1e-5);
  // Spherical symmetry: the mean direction of many draws is near zero.
  const auto many = random_directions(8, 4000, 1.0, 32);
  std::vector<double> mean(8, 0.0);
  for (const auto& v : many) for (std::size_t j = 0; j < 8; ++j) mean[j] += v[j] / 4000.0;
  for (double x : mean) EXPECT_LT(std::abs(x), 5.0 * std::sqrt(1.0 / 8.0 / 4000.0));
}

TEST(Ablation, ConceptBeatsRandomDirections) {
  const ModelConfig c = small(33);
  const auto dir = testing::random_unit(32, 34);
  const Model m = testing::marker_model(c, 2, dir, kSecure, kInsecure, 2.0, 8.0);
  const auto tasks = testing::random_tasks(8, 8, 35);
  const MarkerVerdictProvider provider(c, kSecure, kInsecure);
  const std::vector<float> v(dir.begin(), dir.end());
  const auto report = random_vector_ablation(m, tasks, v, 2, 1.0, 5, 36, provider, marker_config(4, 2, 37));
  ASSERT_EQ(report.rows.size(), 7u);
  EXPECT_EQ(report.rows[0].label, "vanilla");
  EXPECT_EQ(report.rows[1].label, "concept");
  EXPECT_EQ(report.rows[6].label, "random_5");
  EXPECT_FALSE(report.rows[0].delta_secure_pass_at_1.has_value());
  const double concept_delta = *report.rows[1].delta_secure_pass_at_1;
  for (std::size_t i = 2; i < 7; ++i) EXPECT_GT(concept_delta, *report.rows[i].delta_secure_pass_at_1);

  // The vanilla row equals an unsteered run under the same seeds.
  const auto vanilla = run_generations(m, tasks, std::nullopt, provider, marker_config(4, 2, 37));
  for (std::size_t i = 0; i < vanilla.batches.size(); ++i) {
    for (std::size_t s = 0; s < 4; ++s) {
      EXPECT_EQ(vanilla.batches[i].samples[s].code, report.rows[0].metrics.batches[i].samples[s].code);
    }
  }
}

TEST(MarkerProvider, FirstMarkerDecides) {
  const ModelConfig c = small(38);
  const MarkerVerdictProvider p(c, kSecure, kInsecure);
  const Task t{"t", "", {}};
  const std::vector<Token> secure_first = {'a', kSecure, kInsecure};
  const std::vector<Token> insecure_first = {kInsecure, kSecure};
  const std::vector<Token> none = {'a', 'b'};
  EXPECT_TRUE(p.judge(t, secure_first).security_pass);
  EXPECT_FALSE(p.judge(t, insecure_first).security_pass);
  EXPECT_TRUE(p.judge(t, insecure_first).functional_pass);
  const auto v = p.judge(t, none);
  EXPECT_FALSE(v.compiled);
  EXPECT_FALSE(v.functional_pass);
  EXPECT_EQ(v.code, "ab");
}

TEST(SteeringFile, RoundTrip) {
  SteeringSpec spec;
  spec.layer = 3;
  spec.alpha = -0.75;
  spec.vector = {1.5f, -2.0f, 0.125f};
  spec.scope = SteeringScope::kGeneratedOnly;
  const SteeringSpec back = steering_from_json(steering_to_json(spec));
  EXPECT_EQ(back.layer, 3u);
  EXPECT_EQ(back.alpha, -0.75);
  EXPECT_EQ(back.vector, spec.vector);
  EXPECT_EQ(back.scope, SteeringScope::kGeneratedOnly);
}

TEST(SteeringFile, ConceptReferenceRelativeToFile) {
  testing::TempDir dir;
  std::filesystem::create_directories(dir / "concepts");
  save_concept(testing::concept_from({0.0, 1.0, 0.0, 2.0}, 2), dir / "concepts/c.json");
  write_text_file(dir / "steer.json", R"({"alpha": 4, "concept": "concepts/c.json"})");
  const SteeringSpec spec = load_steering(dir / "steer.json");
  EXPECT_EQ(spec.layer, 2u);  // taken from the concept
  EXPECT_EQ(spec.alpha, 4.0);
  EXPECT_EQ(spec.vector, (std::vector<float>{0.0f, 1.0f, 0.0f, 2.0f}));
  EXPECT_EQ(spec.scope, SteeringScope::kAllPositions);

  write_text_file(dir / "steer2.json", R"({"alpha": 1, "layer": 5, "concept": "concepts/c.json"})");
  EXPECT_EQ(load_steering(dir / "steer2.json").layer, 5u);
}

TEST(SteeringFile, Errors) {
  auto kind = [](std::string_view text) {
    try {
      steering_from_json(text);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kUsage;
  };
  EXPECT_EQ(kind("{"), ErrorKind::kParse);
  EXPECT_EQ(kind(R"({"layer": 1, "vector": [1]})"), ErrorKind::kParse);  // no alpha
  EXPECT_EQ(kind(R"({"alpha": 1, "vector": [1]})"), ErrorKind::kParse);  // no layer
  EXPECT_EQ(kind(R"({"alpha": 1, "layer": 1})"), ErrorKind::kParse);     // no vector
  EXPECT_EQ(kind(R"({"alpha": 1, "layer": 1, "vector": [1], "concept": "c.json"})"),
            ErrorKind::kParse);
  EXPECT_EQ(kind(R"({"alpha": 1, "layer": 1, "vector": ["a"]})"), ErrorKind::kParse);
  EXPECT_EQ(kind(R"({"alpha": 1, "layer": 1, "vector": [1], "scope": "sometimes"})"),
            ErrorKind::kConfig);
  EXPECT_EQ(kind(R"({"alpha": 1, "layer": 1, "concept": "/nonexistent/c.json"})"), ErrorKind::kIo);
}

TEST(SteeringFile, LoadedSpecSteersLikeTheOriginal) {
  const auto config = small(5);
  const Model model = build_model(config);
  SteeringSpec spec;
  spec.layer = 2;
  spec.alpha = 3.0;
  spec.vector = testing::concept_from(testing::random_unit(32, 9), 2).values;
  testing::TempDir dir;
  save_steering(spec, dir / "s.json");
  const std::vector<Token> tokens = {'a', 'b', 'c'};
  const auto a = forward_trace(model, tokens, std::optional<SteeringSpec>(spec));
  const auto b = forward_trace(model, tokens, std::optional<SteeringSpec>(load_steering(dir / "s.json")));
  EXPECT_EQ(a.residuals, b.residuals);
}

}  // namespace
}  // namespace scs
