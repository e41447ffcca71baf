// Runs each end-to-end acceptance check and prints one PASS/FAIL line per
// check. Exit status is non-zero if any check fails.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "scs/analysis.hpp"
#include "scs/concept.hpp"
#include "scs/dump.hpp"
#include "scs/metrics.hpp"
#include "scs/rng.hpp"
#include "scs/steering.hpp"

namespace {

using namespace scs;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c);
  return buf;
}

ModelConfig toy_config(std::uint64_t seed) {
  ModelConfig c;
  c.hidden_dim = 64;
  c.num_layers = 6;
  c.num_heads = 4;
  c.seed = seed;
  return c;
}

double subset_oracle(std::size_t n, std::size_t good, std::size_t k) {
  std::size_t total = 0;
  std::size_t hit = 0;
  const unsigned good_mask = (1u << good) - 1u;
  for (unsigned s = 0; s < (1u << n); ++s) {
    if (static_cast<std::size_t>(std::popcount(s)) != k) continue;
    ++total;
    hit += (s & good_mask) != 0;
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

Outcome metric_oracle() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t n = 1; n <= 8; ++n) {
    for (std::size_t good = 0; good <= n; ++good) {
      for (std::size_t k = 1; k <= n; ++k) {
        const double oracle = subset_oracle(n, good, k);
        worst = std::max(worst, std::abs(pass_at_k(n, good, k) - oracle));
        worst = std::max(worst, std::abs(secure_pass_at_k(n, good, k) - oracle));
        worst = std::max(worst, std::abs(*secure_at_k_pass(n, good, k) - oracle));
        ++cases;
      }
    }
  }
  const double elapsed = seconds_since(start);
  return {worst <= 1e-12 && elapsed < 5.0,
          fmt("%.0f cases, max |error| %.3g, %.3f s", static_cast<double>(cases), worst, elapsed)};
}

Outcome at_one_exact() {
  Rng rng(20240601);
  std::size_t mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.below(500);
    const std::size_t c = rng.below(n + 1);
    const std::size_t sp = rng.below(c + 1);
    if (pass_at_k(n, c, 1) != static_cast<double>(c) / static_cast<double>(n)) ++mismatches;
    if (c > 0 && *secure_at_k_pass(c, sp, 1) != static_cast<double>(sp) / static_cast<double>(c)) {
      ++mismatches;
    }
  }
  return {mismatches == 0, fmt("1000 tuples, %.0f mismatches", static_cast<double>(mismatches))};
}

SampleVerdict verdict(std::string code, bool compiled, bool secure) {
  SampleVerdict v;
  v.task_id = "hand";
  v.code = std::move(code);
  v.compiled = compiled;
  v.functional_pass = compiled;
  v.security_pass = secure;
  return v;
}

Outcome sven_hand_count() {
  GenerationBatch b{"hand", 0, {}};
  b.samples = {verdict("a", true, true),      verdict("b", true, true),  verdict("c", true, true),
               verdict("d", true, false),     verdict("e", true, false), verdict("f", true, false),
               verdict("g", false, true),     verdict("h", false, false),
               verdict("a  ", true, true),   verdict("d", true, false)};
  const auto v = sven_sr(b);
  return {v && *v == 0.5, v ? fmt("SVEN-SR = %.17g", *v) : "not applicable"};
}

Outcome planted_recovery() {
  const ModelConfig c = toy_config(11);
  const auto dir = testing::random_unit(64, 12);
  const double noise = testing::residual_scale(build_model(c), 3, 13);
  const Model m = testing::concept_model(c, 3, dir, 20.0 * noise);
  const auto inputs = testing::synthetic_inputs(c, 50, 14);
  const auto start = Clock::now();
  const auto cv = extract_concept(m, inputs, 3, "synthetic", ExtractionOptions{false, 1});
  const double elapsed = seconds_since(start);
  const std::vector<float> truth(dir.begin(), dir.end());
  const double cos = cosine<float>(cv.values, truth).value;
  return {cos >= 0.99 && elapsed < 30.0,
          fmt("cosine %.5f, gain %.2f, %.1f s single-threaded", cos, 20.0 * noise, elapsed)};
}

Outcome convergence() {
  // Per-pair differences: unit signal plus Gaussian noise with total power
  // one tenth of the signal power.
  constexpr std::size_t kDim = 64;
  constexpr std::size_t kPairs = 400;
  constexpr double kSnr = 10.0;
  const double sigma = std::sqrt(1.0 / (kSnr * kDim));
  std::size_t converged = 0;
  double worst = 1.0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const auto dir = testing::random_unit(kDim, 1000 + trial);
    Rng rng(derive_seed(77, "convergence", trial));
    std::vector<std::vector<double>> diffs(kPairs, dir);
    for (auto& v : diffs) {
      for (double& x : v) x += sigma * rng.normal();
    }
    const auto rows = convergence_curve(diffs);
    bool ok = true;
    for (std::size_t k = 50; k <= kPairs; ++k) {
      worst = std::min(worst, rows[k - 1].cosine_to_final);
      ok = ok && rows[k - 1].cosine_to_final >= 0.99;
    }
    converged += ok;
  }
  return {converged >= 95, fmt("%.0f/100 trials at cosine >= 0.99 for every k >= 50 (min %.5f)",
                               static_cast<double>(converged), worst)};
}

Outcome decision_flip() {
  const ModelConfig c = toy_config(11);
  const auto dir = testing::random_unit(64, 21);
  const Model m = testing::flip_model(c, 3, dir, 400.0);
  const auto inputs = testing::synthetic_inputs(c, 24, 22);
  std::vector<ConceptVector> concepts;
  for (std::size_t l = 1; l <= 6; ++l) concepts.push_back(testing::concept_from(dir, l));
  const auto start = Clock::now();
  const auto report = decision_flip_experiment(
      m, inputs, concepts,
      FlipOptions{0.25, {}, SteeringScope::kAllPositions, FlipNormalization::kFlippable, 1});
  const double elapsed = seconds_since(start);
  bool ok = elapsed < 60.0;
  std::string profile;
  for (const auto& row : report.rows) {
    const long distance = std::labs(static_cast<long>(row.layer) - 3);
    if (distance == 0) ok = ok && row.frac_to_secure >= 0.8 && row.frac_to_insecure >= 0.8;
    if (distance >= 3) ok = ok && row.frac_to_secure <= 0.1 && row.frac_to_insecure <= 0.1;
    profile += fmt(" L%.0f:+%.2f/-%.2f", static_cast<double>(row.layer), row.frac_to_secure,
                   row.frac_to_insecure);
  }
  return {ok, "alpha 0.25," + profile + fmt(", %.1f s", elapsed)};
}

bool same_floats(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

Outcome steering_identity() {
  std::size_t generation_mismatches = 0;
  {
    const ModelConfig c = toy_config(31);
    const Model m = build_model(c);
    const auto tasks = testing::random_tasks(1, 12, 32);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const SamplingConfig s{0.4, 0.95, 24, seed};
      Rng rng(seed);
      std::vector<float> v(64);
      rng.fill_normal(v, 1.0);
      const auto plain = generate(m, tasks[0].prompt, s);
      const auto steered =
          generate(m, tasks[0].prompt, s, SteeringSpec{1 + rng.below(6), 0.0, v, SteeringScope::kAllPositions});
      if (plain.generated != steered.generated || !same_floats(plain.trace.residuals, steered.trace.residuals)) {
        ++generation_mismatches;
      }
    }
  }
  std::size_t causality_mismatches = 0;
  Rng rng(41);
  for (int cfg = 0; cfg < 20; ++cfg) {
    ModelConfig c;
    c.num_heads = 1 + rng.below(4);
    c.hidden_dim = c.num_heads * (4 + rng.below(8));
    c.num_layers = 1 + rng.below(6);
    c.max_context = 64;
    c.seed = rng.next_u64();
    const Model m = build_model(c);
    std::vector<Token> tokens(5 + rng.below(40));
    for (Token& t : tokens) t = static_cast<Token>(rng.below(256));
    std::vector<float> v(c.hidden_dim);
    rng.fill_normal(v, 2.0);
    const std::size_t layer = 1 + rng.below(c.num_layers);
    const auto plain = forward_trace(m, tokens);
    const auto steered =
        forward_trace(m, tokens, SteeringSpec{layer, 1.0 + rng.uniform() * 4.0, v, SteeringScope::kAllPositions});
    for (std::size_t l = 0; l < layer; ++l) {
      for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (!same_floats(plain.residual(l, t), steered.residual(l, t))) ++causality_mismatches;
      }
    }
  }
  return {generation_mismatches == 0 && causality_mismatches == 0,
          fmt("alpha=0: %.0f/100 generations differ; causality: %.0f residuals differ over 20 configs",
              static_cast<double>(generation_mismatches), static_cast<double>(causality_mismatches))};
}

Outcome pca_separability() {
  constexpr std::size_t kDim = 64;
  constexpr std::size_t kPerClass = 200;
  constexpr double kSigma = 1.0;
  const auto axis = testing::random_unit(kDim, 51);
  Rng rng(52);
  std::vector<std::vector<double>> points;
  std::vector<int> labels;
  for (int cls = 0; cls < 2; ++cls) {
    for (std::size_t i = 0; i < kPerClass; ++i) {
      std::vector<double> p(kDim);
      const double shift = (cls == 0 ? -2.0 : 2.0) * kSigma;  // 4 sigma apart
      for (std::size_t j = 0; j < kDim; ++j) p[j] = shift * axis[j] + kSigma * rng.normal();
      points.push_back(std::move(p));
      labels.push_back(cls);
    }
  }
  const auto basis = pca_fit(points, 3);
  std::size_t relevant = 0;
  double best = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double c = std::abs(cosine<double>(basis.components[k], axis).value);
    if (c > best) {
      best = c;
      relevant = k;
    }
  }
  const auto along = project(points, basis, relevant);
  const auto next = project(points, basis, relevant == 0 ? 1 : 0);
  std::vector<std::vector<double>> plane;
  for (std::size_t i = 0; i < points.size(); ++i) plane.push_back({along[i], next[i]});
  const auto separable = linear_probe(plane, labels, ProbeOptions{5, 53, 2000, 0.1});

  std::vector<int> shuffled;
  for (std::size_t i = 0; i < points.size(); ++i) shuffled.push_back(static_cast<int>(i % 4));
  for (std::size_t i = shuffled.size() - 1; i > 0; --i) std::swap(shuffled[i], shuffled[rng.below(i + 1)]);
  const auto chance = linear_probe(plane, shuffled, ProbeOptions{5, 54, 2000, 0.1});

  return {separable.mean_f1 >= 0.95 && chance.mean_f1 >= 0.15 && chance.mean_f1 <= 0.35,
          fmt("axis on PC%.0f; f1 %.3f separable, %.3f shuffled (4 classes)",
              static_cast<double>(relevant + 1), separable.mean_f1, chance.mean_f1)};
}

Outcome ablation_ordering() {
  constexpr Token kSecure = 'S';
  constexpr Token kInsecure = 'X';
  std::size_t wins = 0;
  std::string deltas;
  for (std::uint64_t rep = 0; rep < 10; ++rep) {
    const ModelConfig c = toy_config(60 + rep);
    const auto dir = testing::random_unit(64, 70 + rep);
    const double scale = testing::residual_scale(build_model(c), 3, 80 + rep);
    // Steering with the concept at alpha 1 moves the marker logits by +-2.
    const Model m = testing::marker_model(c, 3, dir, kSecure, kInsecure, 2.0 / scale, 8.0);
    std::vector<float> cv(64);
    for (std::size_t j = 0; j < 64; ++j) cv[j] = static_cast<float>(dir[j] * scale);
    const auto tasks = testing::random_tasks(10, 8, 90 + rep);
    const MarkerVerdictProvider provider(c, kSecure, kInsecure);
    GenerationConfig g;
    g.sampling = SamplingConfig{1.0, 1.0, 2, 100 + rep};
    g.samples_per_task = 4;
    g.runs = 2;
    const auto report = random_vector_ablation(m, tasks, cv, 3, 1.0, 5, 110 + rep, provider, g);
    const double concept_delta = report.rows[1].delta_secure_pass_at_1.value_or(-1.0);
    double best_random = -1.0;
    for (std::size_t i = 2; i < report.rows.size(); ++i) {
      best_random = std::max(best_random, report.rows[i].delta_secure_pass_at_1.value_or(-1.0));
    }
    wins += concept_delta > best_random;
    deltas += fmt(" %.2f>%.2f", concept_delta, best_random);
  }
  return {wins >= 9, fmt("%.0f/10 repetitions;", static_cast<double>(wins)) + deltas};
}

Outcome dump_round_trip() {
  testing::TempDir dir;
  Rng rng(121);
  std::size_t bad = 0;
  std::size_t empty = 0;
  for (int i = 0; i < 100; ++i) {
    ActivationDump d;
    d.model_id = "random-" + std::to_string(i);
    d.num_layers = 1 + rng.below(8);
    d.hidden_dim = 1 + rng.below(96);
    const std::size_t tokens = i % 10 == 0 ? 0 : rng.below(48);
    empty += tokens == 0;
    for (std::size_t t = 0; t < tokens; ++t) d.token_ids.push_back(static_cast<Token>(rng.below(1u << 17)));
    d.residuals.resize((d.num_layers + 1) * tokens * d.hidden_dim);
    rng.fill_normal(d.residuals, 5.0);
    d.metadata["index"] = std::to_string(i);
    const auto path = dir / "d.scsa";
    write_dump(d, path);
    const auto back = read_dump(path);
    if (!same_floats(back.residuals, d.residuals) || back.token_ids != d.token_ids ||
        back.num_layers != d.num_layers || back.hidden_dim != d.hidden_dim ||
        back.model_id != d.model_id || back.metadata != d.metadata) {
      ++bad;
    }
  }

  const ModelConfig c = toy_config(131);
  const Model m = testing::concept_model(c, 3, testing::random_unit(64, 132), 10.0);
  const auto inputs = testing::synthetic_inputs(c, 8, 133);
  std::vector<ActivationDump> dumps;
  std::size_t n = 0;
  for (const auto& d : dump_choice_traces(m, inputs)) {
    const auto path = dir / ("pair" + std::to_string(n++) + ".scsa");
    write_dump(d, path);
    dumps.push_back(read_dump(path));
  }
  const auto from_dumps = concepts_from_activations(choice_activations_from_dumps(dumps), m.id(), "x");
  const auto in_process = extract_all_layers(m, inputs, "x");
  std::size_t layer_mismatch = 0;
  for (std::size_t l = 0; l <= c.num_layers; ++l) {
    if (!same_floats(from_dumps[l].values, in_process[l].values)) ++layer_mismatch;
  }
  return {bad == 0 && layer_mismatch == 0,
          fmt("%.0f/100 dumps differ (%.0f with T=0); ", static_cast<double>(bad), static_cast<double>(empty)) +
              fmt("%.0f layers differ between dump and in-process extraction",
                  static_cast<double>(layer_mismatch))};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> checks = {
      {"metric-oracle-equivalence", metric_oracle},
      {"at-one-exact-ratios", at_one_exact},
      {"sven-sr-hand-count", sven_hand_count},
      {"planted-concept-recovery", planted_recovery},
      {"convergence-snr10", convergence},
      {"decision-flip-profile", decision_flip},
      {"steering-identity-causality", steering_identity},
      {"pca-probe-separability", pca_separability},
      {"random-vector-ablation", ablation_ordering},
      {"scsa-round-trip", dump_round_trip},
  };
  int failures = 0;
  for (const auto& [name, run] : checks) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
