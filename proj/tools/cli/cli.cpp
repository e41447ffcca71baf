#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <chrono>
#include <ctime>
#include <map>
#include <optional>

#include "commands.hpp"
#include "config.hpp"
#include "scs/error.hpp"
#include "scs/report.hpp"

namespace scs::cli {

namespace {

namespace fs = std::filesystem;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Flags {
  std::optional<std::string> config;
  std::optional<unsigned> jobs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> layer;
  std::optional<double> alpha;
  std::optional<std::string> alphas;
  std::optional<std::size_t> runs;
  std::optional<std::size_t> component;
  std::optional<std::string> dataset;
  std::optional<std::string> tasks;
  std::vector<std::string> concept_files;
  std::optional<std::string> steering;
  std::optional<std::string> verdicts;
  std::optional<std::string> text;
  std::optional<std::string> model;
};

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    const std::string item = text.substr(start, end - start);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size() || !std::isfinite(v)) {
      throw Error(ErrorKind::kUsage, "--alphas: '" + item + "' is not a number");
    }
    out.push_back(v);
    start = end + 1;
  }
  return out;
}

std::string absolute(const std::string& path) { return fs::absolute(path).lexically_normal().string(); }

// Flags win over config values; flag paths are relative to the working
// directory.
void overlay(json& config, const Flags& f, const std::string& command) {
  if (f.jobs) config["jobs"] = *f.jobs;
  if (f.seed) config["seed"] = *f.seed;
  if (f.out) config["out"] = absolute(*f.out);
  if (f.layer) {
    config["layer"] = *f.layer;
    config.erase("layers");
  }
  if (f.alpha) config["alpha"] = *f.alpha;
  if (f.alphas) config["alphas"] = parse_list(*f.alphas);
  if (f.runs) config["runs"] = *f.runs;
  if (f.component) config["component"] = *f.component;
  if (f.dataset) config["dataset"] = absolute(*f.dataset);
  if (f.tasks) config["tasks"] = absolute(*f.tasks);
  if (!f.concept_files.empty()) {
    if (command == "compare") {
      json list = json::array();
      for (const auto& p : f.concept_files) list.push_back(absolute(p));
      config["concepts"] = list;
    } else {
      config["concept"] = absolute(f.concept_files.back());
    }
  }
  if (f.steering) config["steering"] = absolute(*f.steering);
  if (f.verdicts) config["verdicts"] = absolute(*f.verdicts);
  if (f.text) config["text"] = *f.text;
  if (f.model) config["model"] = json{{"weights", absolute(*f.model)}};
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void report_error(std::ostream& err, std::string_view kind, const std::string& message, int code) {
  json j{{"error", {{"kind", std::string(kind)}, {"message", message}, {"exit_code", code}}}};
  err << j.dump(-1, ' ', false, json::error_handler_t::replace) << "\n";
}

int exit_code(ErrorKind kind) {
  return kind == ErrorKind::kConfig || kind == ErrorKind::kUsage ? kExitUsage : kExitRuntime;
}

void add_flag(CLI::App& sub, const std::string& name, Flags& f) {
  if (name == "layer") sub.add_option("--layer", f.layer, "Target layer");
  if (name == "alpha") sub.add_option("--alpha", f.alpha, "Steering coefficient");
  if (name == "alphas") sub.add_option("--alphas", f.alphas, "Comma-separated alpha grid, e.g. -1,0,1");
  if (name == "runs") sub.add_option("--runs", f.runs, "Independent generation runs");
  if (name == "component") sub.add_option("--component", f.component, "Principal component (1-based)");
  if (name == "dataset") sub.add_option("--dataset", f.dataset, "Contrastive dataset (JSON lines)");
  if (name == "tasks") sub.add_option("--tasks", f.tasks, "Generation tasks (JSON lines)");
  if (name == "concept") sub.add_option("--concept", f.concept_files, "Concept vector JSON file");
  if (name == "steering") sub.add_option("--steering", f.steering, "Steering file");
  if (name == "verdicts") sub.add_option("--verdicts", f.verdicts, "Verdict manifest (JSON lines)");
  if (name == "text") sub.add_option("--text", f.text, "Prompt text");
  if (name == "model") sub.add_option("--model", f.model, "Model weights file");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Security concept extraction and steering toolkit", "scs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  Flags flags;
  std::map<CLI::App*, const Command*> by_app;
  for (const auto& cmd : commands()) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", flags.config, "Experiment config (JSON)");
    sub->add_option("--jobs", flags.jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed", flags.seed, "Base seed");
    sub->add_option("--out", flags.out, "Output directory");
    for (const auto& f : cmd.flags) add_flag(*sub, f, flags);
    by_app[sub] = &cmd;
  }

  if (!args.empty() && !args.front().starts_with("-") &&
      std::none_of(commands().begin(), commands().end(),
                   [&](const Command& c) { return args.front() == c.name; })) {
    report_error(err, "usage", "unknown subcommand '" + args.front() + "'", kExitUsage);
    return kExitUsage;
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.back()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage", e.what(), kExitUsage);
    return kExitUsage;
  }

  const Command* command = nullptr;
  for (auto* sub : app.get_subcommands()) command = by_app.at(sub);

  try {
    json data = json::object();
    fs::path base = fs::current_path();
    if (flags.config) {
      data = load_config_file(*flags.config);
      base = fs::absolute(*flags.config).parent_path();
    }
    overlay(data, flags, command->name);
    check_keys(data);
    Config config(std::move(data), base);

    const fs::path out_dir = config.output("out", "out");
    const std::size_t jobs = config.count("jobs", 1);
    if (jobs < 1) throw Error(ErrorKind::kConfig, "config 'jobs': must be >= 1");
    Run r{config, out_dir, static_cast<unsigned>(jobs), config.seed("seed", 0), out, {}, {}};
    r.seeds["seed"] = r.seed;

    command->body(r);

    json manifest{{"toolkit", "scs"},
                  {"version", std::string(kVersion)},
                  {"subcommand", command->name},
                  {"config", config.resolved()},
                  {"seeds", r.seeds},
                  {"outputs", r.outputs},
                  {"created_utc", utc_timestamp()}};
    fs::create_directories(out_dir);
    write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    return 0;
  } catch (const Error& e) {
    const int code = exit_code(e.kind());
    report_error(err, to_string(e.kind()), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    report_error(err, "internal", e.what(), kExitRuntime);
    return kExitRuntime;
  }
}

}  // namespace scs::cli
