#include "config.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "scs/error.hpp"
#include "scs/report.hpp"

namespace scs::cli {

namespace {

namespace fs = std::filesystem;

json::json_pointer pointer(std::string_view key) {
  std::string p = "/";
  for (char c : key) p += c == '.' ? '/' : c;
  return json::json_pointer(p);
}

constexpr std::array kTopLevel = {
    "alpha",       "alphas",         "component",        "concept",        "concepts",
    "dataset",     "dataset_id",     "dump",             "folds",          "jobs",
    "k",           "label_by",       "layer",            "layers",         "metrics",
    "model",       "normalization",  "order",            "out",            "plane",
    "probe_learning_rate",           "probe_steps",      "prompt_seed",    "random_vectors",
    "runs",        "samples_per_task", "sampling",       "scope",          "seed",
    "skip_overflow", "steering",     "sven_across_runs", "tasks",          "template",
    "text",        "verdict",        "verdicts",         "write_dump",
};

struct Nested {
  const char* key;
  std::vector<const char*> allowed;
};

const std::array<Nested, 4> kNested = {{
    {"model", {"toy", "weights", "dumps"}},
    {"sampling", {"temperature", "top_p", "max_new_tokens", "seed"}},
    {"template", {"include_question"}},
    {"verdict", {"secure_marker", "insecure_marker"}},
}};

}  // namespace

Config::Config(json data, fs::path base_dir) : data_(std::move(data)), base_(std::move(base_dir)) {
  if (!data_.is_object()) throw Error(ErrorKind::kConfig, "config must be a JSON object");
}

const json* Config::find(std::string_view key) const {
  const auto ptr = pointer(key);
  if (!data_.contains(ptr)) return nullptr;
  const json& v = data_.at(ptr);
  return v.is_null() ? nullptr : &v;
}

bool Config::has(std::string_view key) const { return find(key) != nullptr; }

void Config::record(std::string_view key, json value) { resolved_[pointer(key)] = std::move(value); }

void Config::fail(std::string_view key, const std::string& what) const {
  throw Error(ErrorKind::kConfig, "config '" + std::string(key) + "': " + what);
}

fs::path Config::absolute(const std::string& text) const {
  fs::path p(text);
  if (p.is_relative()) p = base_ / p;
  return p.lexically_normal();
}

std::size_t Config::count(std::string_view key, std::optional<std::size_t> fallback) {
  std::size_t value = 0;
  if (const json* v = find(key)) {
    if (!v->is_number_integer() || v->get<std::int64_t>() < 0) fail(key, "expected a non-negative integer");
    value = v->get<std::size_t>();
  } else if (fallback) {
    value = *fallback;
  } else {
    fail(key, "required");
  }
  record(key, value);
  return value;
}

double Config::number(std::string_view key, std::optional<double> fallback) {
  double value = 0.0;
  if (const json* v = find(key)) {
    if (!v->is_number()) fail(key, "expected a number");
    value = v->get<double>();
    if (!std::isfinite(value)) fail(key, "must be finite");
  } else if (fallback) {
    value = *fallback;
  } else {
    fail(key, "required");
  }
  record(key, value);
  return value;
}

bool Config::flag(std::string_view key, bool fallback) {
  bool value = fallback;
  if (const json* v = find(key)) {
    if (!v->is_boolean()) fail(key, "expected true or false");
    value = v->get<bool>();
  }
  record(key, value);
  return value;
}

std::string Config::text(std::string_view key, std::optional<std::string> fallback) {
  std::string value;
  if (const json* v = find(key)) {
    if (!v->is_string()) fail(key, "expected a string");
    value = v->get<std::string>();
  } else if (fallback) {
    value = *fallback;
  } else {
    fail(key, "required");
  }
  record(key, value);
  return value;
}

std::uint64_t Config::seed(std::string_view key, std::uint64_t fallback) {
  std::uint64_t value = fallback;
  if (const json* v = find(key)) {
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
      fail(key, "expected a non-negative integer");
    }
    value = v->get<std::uint64_t>();
  }
  record(key, value);
  return value;
}

std::vector<double> Config::numbers(std::string_view key) {
  const json* v = find(key);
  if (!v) fail(key, "required");
  if (!v->is_array() || v->empty()) fail(key, "expected a non-empty list of numbers");
  std::vector<double> out;
  for (const auto& x : *v) {
    if (!x.is_number() || !std::isfinite(x.get<double>())) fail(key, "expected finite numbers");
    out.push_back(x.get<double>());
  }
  record(key, out);
  return out;
}

std::vector<std::size_t> Config::counts(std::string_view key, std::vector<std::size_t> fallback) {
  std::vector<std::size_t> out = std::move(fallback);
  if (const json* v = find(key)) {
    if (!v->is_array()) fail(key, "expected a list of non-negative integers");
    out.clear();
    for (const auto& x : *v) {
      if (!x.is_number_integer() || x.get<std::int64_t>() < 0) {
        fail(key, "expected a list of non-negative integers");
      }
      out.push_back(x.get<std::size_t>());
    }
  }
  record(key, out);
  return out;
}

std::vector<std::string> Config::texts(std::string_view key, std::vector<std::string> fallback) {
  std::vector<std::string> out = std::move(fallback);
  if (const json* v = find(key)) {
    if (!v->is_array()) fail(key, "expected a list of strings");
    out.clear();
    for (const auto& x : *v) {
      if (!x.is_string()) fail(key, "expected a list of strings");
      out.push_back(x.get<std::string>());
    }
  }
  record(key, out);
  return out;
}

fs::path Config::input(std::string_view key) {
  const json* v = find(key);
  if (!v) fail(key, "required");
  if (!v->is_string()) fail(key, "expected a path");
  const fs::path p = absolute(v->get<std::string>());
  std::error_code ec;
  if (!fs::exists(p, ec)) fail(key, "no such file or directory: " + p.string());
  record(key, p.string());
  return p;
}

std::vector<fs::path> Config::inputs(std::string_view key) {
  const json* v = find(key);
  if (!v) fail(key, "required");
  if (!v->is_array()) fail(key, "expected a list of paths");
  std::vector<fs::path> out;
  std::vector<std::string> recorded;
  for (const auto& x : *v) {
    if (!x.is_string()) fail(key, "expected a list of paths");
    const fs::path p = absolute(x.get<std::string>());
    std::error_code ec;
    if (!fs::exists(p, ec)) fail(key, "no such file or directory: " + p.string());
    recorded.push_back(p.string());
    out.push_back(p);
  }
  record(key, recorded);
  return out;
}

fs::path Config::output(std::string_view key, std::string_view fallback) {
  std::string raw(fallback);
  if (const json* v = find(key)) {
    if (!v->is_string() || v->get<std::string>().empty()) fail(key, "expected a path");
    raw = v->get<std::string>();
  }
  const fs::path p = absolute(raw);
  record(key, p.string());
  return p;
}

const json& Config::object(std::string_view key) {
  const json* v = find(key);
  if (!v) fail(key, "required");
  if (!v->is_object()) fail(key, "expected an object");
  record(key, *v);
  return *v;
}

json load_config_file(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfig, e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kConfig, path.string() + ": " + e.what());
  }
  if (j.is_object() && j.contains("toolkit") && j.contains("config")) j = j.at("config");
  if (!j.is_object()) throw Error(ErrorKind::kConfig, path.string() + ": expected a JSON object");
  return j;
}

void check_keys(const json& config) {
  for (const auto& [key, value] : config.items()) {
    if (std::find_if(kTopLevel.begin(), kTopLevel.end(),
                     [&](const char* k) { return key == k; }) == kTopLevel.end()) {
      throw Error(ErrorKind::kConfig, "config: unknown key '" + key + "'");
    }
  }
  for (const auto& nested : kNested) {
    if (!config.contains(nested.key) || !config.at(nested.key).is_object()) continue;
    for (const auto& [key, value] : config.at(nested.key).items()) {
      if (std::find_if(nested.allowed.begin(), nested.allowed.end(),
                       [&](const char* k) { return key == k; }) == nested.allowed.end()) {
        throw Error(ErrorKind::kConfig,
                    "config: unknown key '" + std::string(nested.key) + "." + key + "'");
      }
    }
  }
}

}  // namespace scs::cli
