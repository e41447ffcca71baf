#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scs {

// Unbiased estimators 1 - C(n - good, k) / C(n, k), evaluated as the
// product of (n - good - i) / (n - i). Throw Error(kInput) unless
// 0 <= good <= n and 1 <= k <= n.
double pass_at_k(std::size_t n, std::size_t c, std::size_t k);
double secure_pass_at_k(std::size_t n, std::size_t sp, std::size_t k);
// Not applicable (nullopt) when no sample is functional.
std::optional<double> secure_at_k_pass(std::size_t n_p, std::size_t sp, std::size_t k);

struct SampleVerdict {
  std::string task_id;
  std::size_t run_index = 0;
  std::optional<std::size_t> sample_index;
  std::string code;
  bool compiled = false;
  bool functional_pass = false;
  bool security_pass = false;
  std::optional<std::size_t> duplicate_of;  // index of the first identical sample in its batch
  std::map<std::string, bool> analyzers;    // per-analyzer "secure" verdicts, if ingested
};

struct GenerationBatch {
  std::string task_id;
  std::size_t run_index = 0;
  std::vector<SampleVerdict> samples;

  std::size_t n() const noexcept { return samples.size(); }
  std::size_t functional() const noexcept;         // c = n_p
  std::size_t secure_functional() const noexcept;  // sp
};

// Strips trailing spaces, tabs and carriage returns from every line.
std::string normalize_code(std::string_view code);

// Sets duplicate_of on every sample whose normalized code matches an
// earlier sample. Idempotent.
void mark_duplicates(std::span<SampleVerdict> samples);

// s_u / m_u over unique compiled samples; nullopt when none compiled.
std::optional<double> sven_sr(const GenerationBatch& batch);

// JSON-lines manifest. Security is the AND of "security_pass" and every
// "analyzer_<name>_secure" column present. Batches come out grouped by
// task (first appearance) and run index.
std::vector<GenerationBatch> parse_verdicts(std::string_view text);
std::vector<GenerationBatch> ingest_verdicts(const std::filesystem::path& path);
// One line per sample in batch order; parse_verdicts() reads it back.
std::string verdicts_to_jsonl(std::span<const GenerationBatch> batches);

enum class Metric { kPassAtK, kSecurePassAtK, kSecureAtKPass, kSvenSr };

std::string_view to_string(Metric m) noexcept;
Metric metric_from_string(std::string_view name);  // "pass@k", "secure-pass@k", ...

struct AggregateOptions {
  Metric metric = Metric::kPassAtK;
  std::size_t k = 1;
  bool sven_across_runs = false;  // deduplicate SVEN-SR samples across runs of a task
};

struct RunValue {
  std::size_t run_index = 0;
  std::optional<double> value;  // mean over applicable tasks
  std::size_t tasks_used = 0;
  std::size_t tasks_not_applicable = 0;
};

struct AggregateResult {
  double mean = 0.0;
  double ci_halfwidth = 0.0;  // 1.96 * sample std / sqrt(runs)
  std::size_t runs_used = 0;
  std::vector<RunValue> runs;
  std::vector<std::string> warnings;
};

// Per run: the metric averaged over tasks. Across runs: mean and
// normal-approximation 95% half-width. Throws Error(kDegenerate) when no run
// has an applicable task.
AggregateResult aggregate(std::span<const GenerationBatch> batches, const AggregateOptions& options);

// Mean and 1.96 * std / sqrt(n) over run-level values (0 half-width for one value).
std::pair<double, double> mean_ci95(std::span<const double> values);

}  // namespace scs
