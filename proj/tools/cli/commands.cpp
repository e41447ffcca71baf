#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>

#include "scs/analysis.hpp"
#include "scs/concept.hpp"
#include "scs/dataset.hpp"
#include "scs/dump.hpp"
#include "scs/error.hpp"
#include "scs/forward.hpp"
#include "scs/metrics.hpp"
#include "scs/model.hpp"
#include "scs/report.hpp"
#include "scs/rng.hpp"
#include "scs/steering.hpp"
#include "scs/tokenizer.hpp"

namespace scs::cli {

namespace fs = std::filesystem;

void Run::write(const std::string& relative, std::string_view bytes) {
  const fs::path path = out_dir / relative;
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw Error(ErrorKind::kIo, path.parent_path().string() + ": " + ec.message());
  write_text_file(path, bytes);
  outputs.push_back(relative);
}

namespace {

std::string json_text(const json& j) { return j.dump(2) + "\n"; }

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string padded(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

// --- inputs ---------------------------------------------------------------

bool uses_dumps(Run& run) { return run.config.has("model.dumps"); }

Model load_model_source(Run& run) {
  auto& cfg = run.config;
  const int sources = cfg.has("model.toy") + cfg.has("model.weights") + cfg.has("model.dumps");
  if (sources > 1) {
    throw Error(ErrorKind::kConfig, "config 'model': give exactly one of toy, weights, dumps");
  }
  if (cfg.has("model.toy")) {
    const json& toy = cfg.object("model.toy");
    try {
      return build_model_from_json(toy.dump());
    } catch (const Error& e) {
      throw Error(ErrorKind::kConfig, std::string("config 'model.toy': ") + e.what());
    }
  }
  if (cfg.has("model.weights")) return load_model(cfg.input("model.weights"));
  if (cfg.has("model.dumps")) {
    throw Error(ErrorKind::kConfig, "config 'model': this subcommand needs a toy or weights model");
  }
  throw Error(ErrorKind::kConfig, "config 'model': required (toy, weights or dumps)");
}

std::vector<ActivationDump> load_dump_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".scsa") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorKind::kInput, dir.string() + ": no .scsa files");
  std::vector<ActivationDump> dumps;
  for (const auto& f : files) dumps.push_back(read_dump(f));
  return dumps;
}

std::vector<ContrastivePair> load_pairs(Run& run) {
  return load_contrastive_dataset(run.config.input("dataset"));
}

std::string dataset_id(Run& run) {
  std::string fallback;
  if (run.config.has("dataset")) fallback = fs::path(run.config.input("dataset")).stem().string();
  return run.config.text("dataset_id", fallback);
}

std::vector<ContrastiveInput> load_inputs(Run& run, const ModelConfig& config,
                                          std::span<const ContrastivePair> pairs) {
  const std::uint64_t prompt_seed = run.config.seed("prompt_seed", run.seed);
  run.seeds["prompt_seed"] = prompt_seed;
  TemplateOptions options;
  options.include_question = run.config.flag("template.include_question", true);
  return encode_ab_prompts(build_ab_prompts(pairs, prompt_seed, options), config);
}

struct Activations {
  ChoiceActivations acts;
  std::string model_id;
  std::map<std::string, std::string> category;  // by pair id, when a dataset is known
};

Activations load_activations(Run& run) {
  Activations out;
  if (uses_dumps(run)) {
    const auto dumps = load_dump_dir(run.config.input("model.dumps"));
    out.acts = choice_activations_from_dumps(dumps);
    out.model_id = dumps.front().model_id;
    if (run.config.has("dataset")) {
      for (const auto& p : load_pairs(run)) out.category[p.id] = p.category;
    }
    return out;
  }
  const Model model = load_model_source(run);
  const auto pairs = load_pairs(run);
  for (const auto& p : pairs) out.category[p.id] = p.category;
  const auto inputs = load_inputs(run, model.config(), pairs);
  ExtractionOptions options;
  options.skip_overflow = run.config.flag("skip_overflow", false);
  options.jobs = run.jobs;
  out.acts = capture_choice_activations(model, inputs, options);
  out.model_id = model.id();
  return out;
}

std::size_t checked_layer(std::size_t layer, std::size_t num_layers, std::size_t first = 0) {
  if (layer < first || layer > num_layers) {
    throw Error(ErrorKind::kConfig, "config 'layer': " + std::to_string(layer) + " outside [" +
                                        std::to_string(first) + ", " +
                                        std::to_string(num_layers) + "]");
  }
  return layer;
}

// "layers" list, or a single "layer", or every layer from `first`.
std::vector<std::size_t> layer_list(Run& run, std::size_t num_layers, std::size_t first) {
  std::vector<std::size_t> layers;
  if (run.config.has("layers")) {
    layers = run.config.counts("layers", {});
  } else if (run.config.has("layer")) {
    layers = {run.config.count("layer")};
  } else {
    for (std::size_t l = first; l <= num_layers; ++l) layers.push_back(l);
    run.config.counts("layers", layers);
  }
  if (layers.empty()) throw Error(ErrorKind::kConfig, "config 'layers': empty");
  for (auto l : layers) checked_layer(l, num_layers, first);
  return layers;
}

std::vector<Task> load_tasks(const fs::path& path, const ModelConfig& config) {
  const std::string text = read_text_file(path);
  std::vector<Task> tasks;
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = path.string() + ": line " + std::to_string(line_no) + ": ";
    Task t;
    std::string prompt;
    try {
      const json obj = json::parse(line);
      if (!obj.is_object()) throw Error(ErrorKind::kParse, where + "expected an object");
      for (const char* field : {"id", "prompt"}) {
        if (!obj.contains(field)) {
          throw Error(ErrorKind::kParse, where + "missing field '" + field + "'");
        }
      }
      t.id = obj.at("id").get<std::string>();
      t.category = obj.value("category", "");
      prompt = obj.at("prompt").get<std::string>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse, where + e.what());
    }
    if (t.id.empty()) throw Error(ErrorKind::kValidation, where + "empty id");
    if (seen.contains(t.id)) {
      throw Error(ErrorKind::kValidation, where + "duplicate id '" + t.id + "' (first on line " +
                                              std::to_string(seen[t.id]) + ")");
    }
    seen[t.id] = line_no;
    if (prompt.empty()) throw Error(ErrorKind::kValidation, where + "empty prompt");
    t.prompt = encode_text(prompt, config);
    tasks.push_back(std::move(t));
  }
  if (tasks.empty()) throw Error(ErrorKind::kInput, path.string() + ": no tasks");
  return tasks;
}

Token marker(Run& run, const char* key, const char* fallback) {
  const std::string m = run.config.text(key, fallback);
  if (m.size() != 1) {
    throw Error(ErrorKind::kConfig, std::string("config '") + key + "': expected one character");
  }
  return static_cast<unsigned char>(m[0]);
}

GenerationConfig generation_config(Run& run) {
  auto& cfg = run.config;
  GenerationConfig g;
  g.sampling.temperature = cfg.number("sampling.temperature", 0.4);
  g.sampling.top_p = cfg.number("sampling.top_p", 0.95);
  g.sampling.max_new_tokens = cfg.count("sampling.max_new_tokens", 400);
  g.sampling.seed = cfg.seed("sampling.seed", run.seed);
  run.seeds["sampling_seed"] = g.sampling.seed;
  try {
    g.sampling.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfig, std::string("config 'sampling': ") + e.what());
  }
  g.samples_per_task = cfg.count("samples_per_task", 1);
  g.runs = cfg.count("runs", 1);
  if (g.samples_per_task < 1) throw Error(ErrorKind::kConfig, "config 'samples_per_task': must be >= 1");
  if (g.runs < 1) throw Error(ErrorKind::kConfig, "config 'runs': must be >= 1");
  g.scope = steering_scope_from_string(cfg.text("scope", "all-positions"));
  g.jobs = run.jobs;
  return g;
}

ConceptVector load_concept_checked(const fs::path& path, const ModelConfig& config) {
  ConceptVector cv = load_concept(path);
  if (cv.values.size() != config.hidden_dim) {
    throw Error(ErrorKind::kConfig, path.string() + ": concept has " +
                                        std::to_string(cv.values.size()) +
                                        " values, model hidden_dim is " +
                                        std::to_string(config.hidden_dim));
  }
  return cv;
}

// --- generation reports -----------------------------------------------------

const std::vector<std::string> kMetricColumns = {
    "pass@1",         "pass@1_ci95",         "secure@1_pass", "secure@1_pass_ci95",
    "secure-pass@1",  "secure-pass@1_ci95",  "sven_sr",       "sven_sr_ci95"};

std::vector<std::string> metric_cells(const SweepRow& r) {
  std::vector<std::string> cells;
  for (const MetricEstimate* m : {&r.pass_at_1, &r.secure_at_1_pass, &r.secure_pass_at_1, &r.sven_sr}) {
    cells.push_back(format_number(m->mean));
    cells.push_back(m->mean ? format_number(m->ci_halfwidth) : "");
  }
  return cells;
}

json metric_json(const SweepRow& r) {
  json j = json::object();
  const std::pair<const char*, const MetricEstimate*> items[] = {
      {"pass@1", &r.pass_at_1},
      {"secure@1_pass", &r.secure_at_1_pass},
      {"secure-pass@1", &r.secure_pass_at_1},
      {"sven_sr", &r.sven_sr}};
  for (const auto& [name, m] : items) {
    j[name] = {{"mean", optional_number(m->mean)},
               {"ci_halfwidth", m->mean ? json(m->ci_halfwidth) : json(nullptr)}};
  }
  return j;
}

// --- subcommands ------------------------------------------------------------

void cmd_extract(Run& run) {
  const Activations a = load_activations(run);
  const std::string id = dataset_id(run);
  const auto layers = layer_list(run, a.acts.num_layers, 0);
  const auto all = concepts_from_activations(a.acts, a.model_id, id);
  CsvTable table({"layer", "norm", "num_samples", "num_skipped", "degenerate", "file"});
  for (auto l : layers) {
    const std::string file = "concepts/layer_" + std::to_string(l) + ".json";
    run.write(file, concept_to_json(all[l]));
    table.add_row({std::to_string(l), format_number(all[l].norm()),
                   std::to_string(all[l].num_samples), std::to_string(all[l].num_skipped),
                   all[l].degenerate ? "true" : "false", file});
  }
  run.write("extract.csv", table.str());
  if (!a.acts.skipped_ids.empty()) {
    run.write("skipped.json", json_text(json{{"skipped_ids", a.acts.skipped_ids}}));
  }
  run.log << "extracted " << layers.size() << " concept vector(s) from " << a.acts.size()
          << " prompt(s)\n";
}

void cmd_converge(Run& run) {
  const Activations a = load_activations(run);
  const std::size_t layer = checked_layer(run.config.count("layer"), a.acts.num_layers);
  const std::string order_mode = run.config.text("order", "index");
  const auto diffs = prompt_differences(a.acts, layer);
  std::vector<std::size_t> order(diffs.size());
  std::iota(order.begin(), order.end(), 0);
  if (order_mode == "shuffle") {
    Rng rng(derive_seed(run.seed, "converge-order", 0));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  } else if (order_mode != "index") {
    throw Error(ErrorKind::kConfig, "config 'order': expected index or shuffle");
  }
  const auto rows = convergence_curve(diffs, order);
  CsvTable table({"k", "cosine_to_final", "magnitude_ratio", "running_std"});
  for (const auto& r : rows) {
    table.add_row({std::to_string(r.k), format_number(r.cosine_to_final),
                   format_number(r.magnitude_ratio), format_number(r.running_std)});
  }
  run.write("convergence.csv", table.str());
  std::vector<std::string> ids;
  for (auto i : order) ids.push_back(a.acts.ids[i]);
  run.write("convergence.json",
            json_text(json{{"layer", layer}, {"samples", rows.size()}, {"order", ids}}));
  run.log << "convergence over " << rows.size() << " samples at layer " << layer << "\n";
}

void cmd_compare(Run& run) {
  const auto paths = run.config.inputs("concepts");
  if (paths.size() < 2) throw Error(ErrorKind::kConfig, "config 'concepts': need at least 2 files");
  std::vector<ConceptVector> cvs;
  std::vector<std::string> names;
  for (const auto& p : paths) {
    cvs.push_back(load_concept(p));
    names.push_back(p.filename().string());
  }
  CsvTable table({"a", "b", "layer_a", "layer_b", "cosine", "zero_norm"});
  for (std::size_t i = 0; i < cvs.size(); ++i) {
    for (std::size_t j = i + 1; j < cvs.size(); ++j) {
      const Cosine c = concept_similarity(cvs[i], cvs[j]);
      table.add_row({names[i], names[j], std::to_string(cvs[i].layer), std::to_string(cvs[j].layer),
                     format_number(c.value), c.degenerate ? "true" : "false"});
    }
  }
  run.write("similarity.csv", table.str());
  if (cvs.size() >= 3) {
    std::vector<TrajectoryInput> inputs;
    for (const auto& cv : cvs) {
      inputs.push_back({cv.dataset_id.empty() ? cv.model_id : cv.dataset_id, cv.layer,
                        std::vector<double>(cv.values.begin(), cv.values.end())});
    }
    const Trajectory t = concept_trajectory(inputs);
    CsvTable points({"file", "name", "layer", "x", "y"});
    for (std::size_t i = 0; i < t.points.size(); ++i) {
      points.add_row({names[i], t.points[i].name, std::to_string(t.points[i].layer),
                      format_number(t.points[i].x), format_number(t.points[i].y)});
    }
    run.write("trajectory.csv", points.str());
  }
  run.log << "compared " << cvs.size() << " concept vectors\n";
}

PlaneMode plane_mode(Run& run) {
  const std::string mode = run.config.text("plane", "raw");
  if (mode == "raw") return PlaneMode::kRaw;
  if (mode == "pc1-removed") return PlaneMode::kPc1Removed;
  throw Error(ErrorKind::kConfig, "config 'plane': expected raw or pc1-removed");
}

struct PointSet {
  std::vector<std::vector<double>> points;
  std::vector<std::string> ids;
  std::vector<std::string> labels;
  std::vector<std::string> categories;
};

// Final-position residuals of both answers, labelled by the chosen snippet.
PointSet answer_points(const Activations& a, std::size_t layer) {
  PointSet s;
  for (std::size_t i = 0; i < a.acts.size(); ++i) {
    const auto it = a.category.find(a.acts.ids[i]);
    const std::string category = it == a.category.end() ? "" : it->second;
    for (const bool secure : {true, false}) {
      const auto v = secure ? a.acts.positive_at(i, layer) : a.acts.negative_at(i, layer);
      s.points.emplace_back(v.begin(), v.end());
      s.ids.push_back(a.acts.ids[i]);
      s.labels.push_back(secure ? "secure" : "insecure");
      s.categories.push_back(category);
    }
  }
  return s;
}

void cmd_pca(Run& run) {
  const Activations a = load_activations(run);
  const std::size_t layer = checked_layer(run.config.count("layer"), a.acts.num_layers);
  const std::size_t component = run.config.count("component", 2);
  if (component < 1) throw Error(ErrorKind::kConfig, "config 'component': counts from 1");
  const PointSet s = answer_points(a, layer);
  const std::size_t n_components = std::max<std::size_t>(3, component);
  const PcaBasis basis = pca_fit(s.points, std::min(n_components, a.acts.hidden_dim), {true});
  if (component > basis.components.size()) {
    throw Error(ErrorKind::kConfig, "config 'component': model has only " +
                                        std::to_string(basis.components.size()) + " dimensions");
  }
  std::vector<std::vector<double>> proj;
  for (std::size_t c = 0; c < basis.components.size(); ++c) proj.push_back(project(s.points, basis, c));
  std::vector<std::string> header = {"id", "category", "label"};
  for (std::size_t c = 0; c < basis.components.size(); ++c) header.push_back("pc" + std::to_string(c + 1));
  CsvTable table(header);
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    std::vector<std::string> row = {s.ids[i], s.categories[i], s.labels[i]};
    for (const auto& p : proj) row.push_back(format_number(p[i]));
    table.add_row(std::move(row));
  }
  run.write("pca_points.csv", table.str());

  // Separation of the two answer groups along the selected component.
  const auto& values = proj[component - 1];
  double sum[2] = {0, 0}, sq[2] = {0, 0};
  std::size_t n[2] = {0, 0};
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int g = s.labels[i] == "secure" ? 0 : 1;
    sum[g] += values[i];
    ++n[g];
  }
  const double mean[2] = {sum[0] / n[0], sum[1] / n[1]};
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int g = s.labels[i] == "secure" ? 0 : 1;
    sq[g] += (values[i] - mean[g]) * (values[i] - mean[g]);
  }
  const double dof = static_cast<double>(n[0] + n[1]) - 2.0;
  const double pooled = dof > 0 ? std::sqrt((sq[0] + sq[1]) / dof) : 0.0;
  json report{{"layer", layer},
              {"component", component},
              {"points", s.points.size()},
              {"explained_variance", basis.explained_variance},
              {"total_variance", basis.total_variance},
              {"secure_mean", mean[0]},
              {"insecure_mean", mean[1]},
              {"pooled_std", pooled},
              {"separation", pooled > 0 ? json(std::abs(mean[0] - mean[1]) / pooled) : json(nullptr)}};
  run.write("pca.json", json_text(report));
  run.log << "pca over " << s.points.size() << " points at layer " << layer << "\n";
}

void cmd_probe(Run& run) {
  const Activations a = load_activations(run);
  const std::size_t layer = checked_layer(run.config.count("layer"), a.acts.num_layers);
  const std::string label_by = run.config.text("label_by", "choice");
  const PlaneMode mode = plane_mode(run);
  ProbeOptions options;
  options.folds = run.config.count("folds", 5);
  options.steps = run.config.count("probe_steps", 2000);
  options.learning_rate = run.config.number("probe_learning_rate", 0.1);
  options.seed = run.seed;
  run.seeds["probe_seed"] = run.seed;

  PointSet s;
  std::vector<std::string> names;
  if (label_by == "choice") {
    s = answer_points(a, layer);
    names = s.labels;
  } else if (label_by == "category") {
    const auto diffs = prompt_differences(a.acts, layer);
    for (std::size_t i = 0; i < diffs.size(); ++i) {
      const auto it = a.category.find(a.acts.ids[i]);
      if (it == a.category.end()) {
        throw Error(ErrorKind::kConfig, "config 'dataset': needed for category labels of '" +
                                            a.acts.ids[i] + "'");
      }
      s.points.push_back(diffs[i]);
      s.ids.push_back(a.acts.ids[i]);
      s.categories.push_back(it->second);
      names.push_back(it->second);
    }
  } else {
    throw Error(ErrorKind::kConfig, "config 'label_by': expected choice or category");
  }

  std::vector<std::string> classes = names;
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  std::vector<int> labels;
  for (const auto& n : names) {
    labels.push_back(static_cast<int>(std::lower_bound(classes.begin(), classes.end(), n) - classes.begin()));
  }

  const PcaBasis basis = pca_fit(s.points, std::min<std::size_t>(3, a.acts.hidden_dim), {true});
  const auto plane = project_plane(s.points, basis, mode);
  std::vector<std::vector<double>> points;
  for (const auto& p : plane) points.push_back({p[0], p[1]});
  const ProbeResult result = linear_probe(points, labels, options);

  CsvTable table({"id", "label", "x", "y", "fold", "predicted"});
  for (std::size_t i = 0; i < points.size(); ++i) {
    table.add_row({s.ids[i], names[i], format_number(points[i][0]), format_number(points[i][1]),
                   std::to_string(result.fold_of[i]), classes[result.predictions[i]]});
  }
  run.write("probe_points.csv", table.str());
  json report{{"layer", layer},
              {"label_by", label_by},
              {"classes", classes},
              {"fold_f1", result.fold_f1},
              {"mean_f1", result.mean_f1},
              {"std_f1", result.std_f1},
              {"confusion", result.confusion}};
  run.write("probe.json", json_text(report));
  run.log << "probe mean f1 " << format_number(result.mean_f1) << " over " << result.fold_f1.size()
          << " folds\n";
}

void cmd_align(Run& run) {
  ForwardTrace trace;
  ModelConfig config;
  if (uses_dumps(run) || run.config.has("dump")) {
    const ActivationDump dump = read_dump(run.config.input("dump"));
    trace = dump_to_trace(dump);
    config.num_layers = dump.num_layers;
    config.hidden_dim = dump.hidden_dim;
  } else {
    const Model model = load_model_source(run);
    config = model.config();
    trace = forward_trace(model, encode_text(run.config.text("text"), config));
  }
  const ConceptVector cv = load_concept(run.config.input("concept"));
  const std::size_t layer = checked_layer(run.config.count("layer", cv.layer), trace.num_layers);
  const TokenAlignmentReport report = token_alignment(trace, cv, layer);
  CsvTable table({"index", "token", "text", "cosine", "zero_norm", "rank"});
  for (const auto& r : report.rows) {
    std::string rank;
    if (std::find(report.top3.begin(), report.top3.end(), r.index) != report.top3.end()) rank = "top";
    if (std::find(report.bottom3.begin(), report.bottom3.end(), r.index) != report.bottom3.end()) {
      rank = rank.empty() ? "bottom" : rank + "+bottom";
    }
    table.add_row({std::to_string(r.index), std::to_string(r.token), r.text, format_number(r.cosine),
                   r.zero_norm ? "true" : "false", rank});
  }
  run.write("alignment.csv", table.str());
  run.write("alignment.json",
            json_text(json{{"layer", layer}, {"top3", report.top3}, {"bottom3", report.bottom3}}));
  run.log << "aligned " << report.rows.size() << " tokens at layer " << layer << "\n";
}

void cmd_flip(Run& run) {
  const Model model = load_model_source(run);
  const auto pairs = load_pairs(run);
  const auto inputs = load_inputs(run, model.config(), pairs);
  FlipOptions options;
  options.alpha = run.config.number("alpha", 1.0);
  options.layers = layer_list(run, model.config().num_layers, 1);
  options.scope = steering_scope_from_string(run.config.text("scope", "all-positions"));
  const std::string norm = run.config.text("normalization", "all-prompts");
  if (norm == "all-prompts") {
    options.normalization = FlipNormalization::kAllPrompts;
  } else if (norm == "flippable") {
    options.normalization = FlipNormalization::kFlippable;
  } else {
    throw Error(ErrorKind::kConfig, "config 'normalization': expected all-prompts or flippable");
  }
  options.jobs = run.jobs;

  std::vector<ConceptVector> concepts;
  if (run.config.has("concepts")) {
    for (const auto& p : run.config.inputs("concepts")) {
      concepts.push_back(load_concept_checked(p, model.config()));
    }
  } else {
    ExtractionOptions ex;
    ex.skip_overflow = run.config.flag("skip_overflow", false);
    ex.jobs = run.jobs;
    concepts = extract_all_layers(model, inputs, dataset_id(run), ex);
  }
  std::vector<ConceptVector> selected;
  for (auto l : options.layers) {
    const auto it = std::find_if(concepts.begin(), concepts.end(),
                                 [l](const ConceptVector& c) { return c.layer == l; });
    if (it == concepts.end()) {
      throw Error(ErrorKind::kConfig, "config 'concepts': no vector for layer " + std::to_string(l));
    }
    selected.push_back(*it);
  }

  const FlipReport report = decision_flip_experiment(model, inputs, selected, options);
  CsvTable table({"layer", "alpha", "n_prompts", "baseline_secure", "pos_to_secure",
                  "pos_to_insecure", "pos_unchanged", "neg_to_secure", "neg_to_insecure",
                  "neg_unchanged", "flipped_back", "frac_to_secure", "frac_to_insecure"});
  for (const auto& r : report.rows) {
    table.add_row({std::to_string(r.layer), format_number(report.alpha), std::to_string(r.n_prompts),
                   std::to_string(r.baseline_secure), std::to_string(r.positive.to_secure),
                   std::to_string(r.positive.to_insecure), std::to_string(r.positive.unchanged),
                   std::to_string(r.negative.to_secure), std::to_string(r.negative.to_insecure),
                   std::to_string(r.negative.unchanged), std::to_string(r.flipped_back),
                   format_number(r.frac_to_secure), format_number(r.frac_to_insecure)});
  }
  run.write("flip.csv", table.str());
  std::vector<std::string> baseline;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Token chosen = model.config().choice_token(report.baseline[i]);
    baseline.push_back(chosen == inputs[i].positive ? "secure" : "insecure");
  }
  run.write("flip.json", json_text(json{{"alpha", report.alpha},
                                        {"normalization", norm},
                                        {"prompt_ids", [&] {
                                           std::vector<std::string> ids;
                                           for (const auto& in : inputs) ids.push_back(in.id);
                                           return ids;
                                         }()},
                                        {"baseline", baseline}}));
  run.log << "flip experiment over " << report.rows.size() << " layer(s)\n";
}

struct GenerationSetup {
  Model model;
  std::vector<Task> tasks;
  ConceptVector cv;
  std::size_t layer = 0;
  GenerationConfig gen;
  std::unique_ptr<MarkerVerdictProvider> provider;
};

GenerationSetup generation_setup(Run& run) {
  Model model = load_model_source(run);
  const auto& c = model.config();
  auto tasks = load_tasks(run.config.input("tasks"), c);
  ConceptVector cv = load_concept_checked(run.config.input("concept"), c);
  const std::size_t layer = checked_layer(run.config.count("layer", cv.layer), c.num_layers, 1);
  GenerationConfig gen = generation_config(run);
  const Token secure = marker(run, "verdict.secure_marker", "S");
  const Token insecure = marker(run, "verdict.insecure_marker", "X");
  auto provider = std::make_unique<MarkerVerdictProvider>(c, secure, insecure);
  return {std::move(model), std::move(tasks), std::move(cv), layer, gen, std::move(provider)};
}

void cmd_sweep(Run& run) {
  const auto alphas = run.config.numbers("alphas");
  GenerationSetup s = generation_setup(run);
  const auto rows =
      magnitude_sweep(s.model, s.tasks, s.cv.values, s.layer, alphas, *s.provider, s.gen);
  std::vector<std::string> header = {"alpha", "layer", "runs", "seed", "complete", "error"};
  header.insert(header.end(), kMetricColumns.begin(), kMetricColumns.end());
  header.push_back("verdicts");
  CsvTable table(header);
  json report = json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const std::string file = "verdicts/sweep_" + padded(i) + ".jsonl";
    run.write(file, verdicts_to_jsonl(r.batches));
    std::vector<std::string> row = {format_number(r.alpha), std::to_string(r.layer),
                                    std::to_string(r.runs), std::to_string(r.seed),
                                    r.complete ? "true" : "false", r.error};
    const auto cells = metric_cells(r);
    row.insert(row.end(), cells.begin(), cells.end());
    row.push_back(file);
    table.add_row(std::move(row));
    report.push_back({{"alpha", r.alpha},
                      {"layer", r.layer},
                      {"complete", r.complete},
                      {"error", r.error},
                      {"metrics", metric_json(r)},
                      {"verdicts", file}});
  }
  run.write("sweep.csv", table.str());
  run.write("sweep.json", json_text(report));
  run.log << "sweep over " << rows.size() << " alpha value(s)\n";
}

void cmd_ablate(Run& run) {
  GenerationSetup s = generation_setup(run);
  const double alpha = run.config.number("alpha", 1.0);
  const std::size_t k = run.config.count("random_vectors", 5);
  run.seeds["random_vector_seed"] = run.seed;
  const AblationReport report = random_vector_ablation(s.model, s.tasks, s.cv.values, s.layer, alpha,
                                                       k, run.seed, *s.provider, s.gen);
  std::vector<std::string> header = {"label", "alpha", "layer", "complete", "error"};
  header.insert(header.end(), kMetricColumns.begin(), kMetricColumns.end());
  header.insert(header.end(), {"delta_secure-pass@1", "delta_pass@1", "verdicts"});
  CsvTable table(header);
  for (const auto& r : report.rows) {
    const std::string file = "verdicts/ablate_" + r.label + ".jsonl";
    run.write(file, verdicts_to_jsonl(r.metrics.batches));
    std::vector<std::string> row = {r.label, format_number(r.metrics.alpha),
                                    std::to_string(r.metrics.layer),
                                    r.metrics.complete ? "true" : "false", r.metrics.error};
    const auto cells = metric_cells(r.metrics);
    row.insert(row.end(), cells.begin(), cells.end());
    row.push_back(format_number(r.delta_secure_pass_at_1));
    row.push_back(format_number(r.delta_pass_at_1));
    row.push_back(file);
    table.add_row(std::move(row));
  }
  run.write("ablation.csv", table.str());
  json vectors = json::array();
  for (const auto& v : report.random_vectors) vectors.push_back(v);
  run.write("random_vectors.json",
            json_text(json{{"norm", s.cv.norm()}, {"seed", run.seed}, {"vectors", vectors}}));
  run.log << "ablation with " << report.random_vectors.size() << " random vector(s)\n";
}

void cmd_metrics(Run& run) {
  const auto batches = ingest_verdicts(run.config.input("verdicts"));
  const auto names =
      run.config.texts("metrics", {"pass@k", "secure-pass@k", "secure@k_pass", "sven-sr"});
  const auto ks = run.config.counts("k", {1});
  const bool across = run.config.flag("sven_across_runs", false);
  if (ks.empty()) throw Error(ErrorKind::kConfig, "config 'k': empty");
  std::vector<Metric> metrics;
  for (const auto& n : names) metrics.push_back(metric_from_string(n));

  CsvTable table({"metric", "k", "mean", "ci95_halfwidth", "runs_used", "status"});
  json results = json::array();
  for (Metric m : metrics) {
    const bool sven = m == Metric::kSvenSr;
    for (std::size_t ki = 0; ki < (sven ? 1 : ks.size()); ++ki) {
      AggregateOptions options;
      options.metric = m;
      options.k = sven ? 1 : ks[ki];
      options.sven_across_runs = across;
      const std::string k_text = sven ? "" : std::to_string(options.k);
      json entry{{"metric", std::string(to_string(m))}, {"k", sven ? json(nullptr) : json(options.k)}};
      try {
        const AggregateResult r = aggregate(batches, options);
        table.add_row({std::string(to_string(m)), k_text, format_number(r.mean),
                       format_number(r.ci_halfwidth), std::to_string(r.runs_used), "ok"});
        json runs = json::array();
        for (const auto& rv : r.runs) {
          runs.push_back({{"run_index", rv.run_index},
                          {"value", optional_number(rv.value)},
                          {"tasks_used", rv.tasks_used},
                          {"tasks_not_applicable", rv.tasks_not_applicable}});
        }
        entry.update({{"mean", r.mean},
                      {"ci_halfwidth", r.ci_halfwidth},
                      {"runs_used", r.runs_used},
                      {"runs", runs},
                      {"warnings", r.warnings},
                      {"status", "ok"}});
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kDegenerate) throw;
        table.add_row({std::string(to_string(m)), k_text, "", "", "0", "not-applicable"});
        entry.update({{"mean", nullptr}, {"status", "not-applicable"}, {"reason", e.what()}});
      }
      results.push_back(std::move(entry));
    }
  }
  run.write("metrics.csv", table.str());
  run.write("metrics.json", json_text(json{{"batches", batches.size()}, {"results", results}}));
  run.log << "metrics over " << batches.size() << " batch(es)\n";
}

void cmd_dump(Run& run) {
  const Model model = load_model_source(run);
  CsvTable table({"file", "pair_id", "choice", "tokens"});
  if (run.config.has("text")) {
    const auto tokens = encode_text(run.config.text("text"), model.config());
    const ActivationDump d = trace_to_dump(forward_trace(model, tokens), model.id());
    run.write("dumps/text.scsa", encode_dump(d));
    table.add_row({"dumps/text.scsa", "", "", std::to_string(d.num_tokens())});
  } else {
    const auto pairs = load_pairs(run);
    const auto inputs = load_inputs(run, model.config(), pairs);
    const auto dumps = dump_choice_traces(model, inputs);
    for (std::size_t i = 0; i < dumps.size(); ++i) {
      const auto& d = dumps[i];
      const std::string file = "dumps/" + padded(i) + "-" + d.metadata.at("choice") + ".scsa";
      run.write(file, encode_dump(d));
      table.add_row({file, d.metadata.at("pair_id"), d.metadata.at("choice"),
                     std::to_string(d.num_tokens())});
    }
  }
  run.write("dumps.csv", table.str());
  run.log << "wrote " << table.rows() << " dump(s)\n";
}

void cmd_gen(Run& run) {
  const Model model = load_model_source(run);
  const auto& c = model.config();
  const std::string text = run.config.text("text");
  const auto prompt = encode_text(text, c);
  GenerationConfig g = generation_config(run);

  std::optional<SteeringSpec> steering;
  if (run.config.has("steering") && run.config.has("concept")) {
    throw Error(ErrorKind::kConfig, "config: give either 'steering' or 'concept', not both");
  }
  if (run.config.has("steering")) {
    steering = load_steering(run.config.input("steering"));
    if (run.config.has("alpha")) steering->alpha = run.config.number("alpha");
    if (run.config.has("layer")) steering->layer = run.config.count("layer");
  } else if (run.config.has("concept")) {
    ConceptVector cv = load_concept_checked(run.config.input("concept"), c);
    SteeringSpec s;
    s.layer = run.config.count("layer", cv.layer);
    s.alpha = run.config.number("alpha", 1.0);
    s.vector = std::move(cv.values);
    s.scope = g.scope;
    steering = std::move(s);
  }
  if (steering) {
    try {
      validate_steering(c, *steering);
    } catch (const Error& e) {
      throw Error(ErrorKind::kConfig, std::string("steering: ") + e.what());
    }
  }

  const Generation out = generate(model, prompt, g.sampling, steering);
  json report{{"prompt", text},
              {"generated", decode_tokens(out.generated, c)},
              {"generated_tokens", out.generated},
              {"seed", g.sampling.seed}};
  if (steering) {
    report["steering"] = {{"layer", steering->layer},
                          {"alpha", steering->alpha},
                          {"scope", std::string(to_string(steering->scope))},
                          {"norm", norm(steering->vector)}};
  }
  run.write("generation.json", report.dump(2, ' ', false, json::error_handler_t::replace) + "\n");
  if (run.config.flag("write_dump", false)) {
    run.write("generation.scsa", encode_dump(trace_to_dump(out.trace, model.id())));
  }
  run.log << "generated " << out.generated.size() << " token(s)\n";
}

}  // namespace

const std::vector<Command>& commands() {
  static const std::vector<Command> table = {
      {"extract", "Concept vectors per layer from a contrastive dataset",
       {"layer", "dataset", "model"}, cmd_extract},
      {"converge", "Running-mean convergence of a concept vector", {"layer", "dataset", "model"},
       cmd_converge},
      {"compare", "Pairwise cosine similarity and trajectory of concept vectors", {"concept"},
       cmd_compare},
      {"pca", "PCA of answer-position residuals", {"layer", "component", "dataset", "model"},
       cmd_pca},
      {"align", "Per-token alignment with a concept vector", {"layer", "concept", "text", "model"},
       cmd_align},
      {"probe", "Linear probe on 2-d PCA projections", {"layer", "dataset", "model"}, cmd_probe},
      {"flip", "Decision-flip experiment on A/B prompts", {"layer", "alpha", "dataset", "model"},
       cmd_flip},
      {"sweep", "Steering magnitude sweep over generation tasks",
       {"layer", "alphas", "runs", "concept", "tasks", "model"}, cmd_sweep},
      {"ablate", "Concept vector against random vectors of equal norm",
       {"layer", "alpha", "runs", "concept", "tasks", "model"}, cmd_ablate},
      {"metrics", "Aggregate metrics from a verdict manifest", {"verdicts"}, cmd_metrics},
      {"dump", "Write SCSA activation dumps", {"dataset", "text", "model"}, cmd_dump},
      {"gen", "Generate text, optionally steered",
       {"layer", "alpha", "concept", "steering", "text", "model"}, cmd_gen},
  };
  return table;
}

}  // namespace scs::cli
