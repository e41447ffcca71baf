#include "scs/dump.hpp"

#include <algorithm>
#include <json.hpp>

#include "binary_io.hpp"
#include "scs/error.hpp"

namespace scs {

namespace {

using nlohmann::json;

constexpr char kDumpMagic[4] = {'S', 'C', 'S', 'A'};
constexpr std::size_t kPreamble = 10;

std::size_t expected_floats(std::size_t layers, std::size_t tokens, std::size_t dim) {
  return (layers + 1) * tokens * dim;
}

}  // namespace

std::span<const float> ActivationDump::residual(std::size_t layer, std::size_t position) const {
  if (layer > num_layers || position >= num_tokens()) {
    throw Error(ErrorKind::kInput, "dump index (" + std::to_string(layer) + ", " +
                                       std::to_string(position) + ") out of range");
  }
  return std::span<const float>(residuals).subspan((layer * num_tokens() + position) * hidden_dim,
                                                   hidden_dim);
}

std::string encode_dump(const ActivationDump& dump) {
  if (dump.residuals.size() != expected_floats(dump.num_layers, dump.num_tokens(), dump.hidden_dim)) {
    throw Error(ErrorKind::kInput, "dump residuals do not match (L, T, d)");
  }
  json header{{"model_id", dump.model_id},     {"L", dump.num_layers},
              {"d", dump.hidden_dim},          {"T", dump.num_tokens()},
              {"dtype", "f32"},                {"layout", "layer-major"},
              {"token_ids", dump.token_ids},   {"metadata", dump.metadata}};
  std::string text;
  try {
    text = header.dump();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kInput, std::string("dump header: ") + e.what());
  }
  std::string bytes(kDumpMagic, 4);
  detail::put_u16(bytes, kDumpVersion);
  detail::put_u32(bytes, static_cast<std::uint32_t>(text.size()));
  bytes += text;
  detail::put_f32(bytes, dump.residuals);
  return bytes;
}

ActivationDump decode_dump(std::string_view bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < kPreamble || !std::equal(kDumpMagic, kDumpMagic + 4, bytes.data())) {
    throw Error(ErrorKind::kFormat, "not an activation dump (bad magic)");
  }
  const std::uint16_t version = detail::get_u16(p + 4);
  if (version > kDumpVersion) {
    throw Error(ErrorKind::kUnsupportedVersion,
                "dump version " + std::to_string(version) + " is newer than supported version " +
                    std::to_string(kDumpVersion));
  }
  const std::size_t header_len = detail::get_u32(p + 6);
  if (bytes.size() < kPreamble + header_len) {
    throw Error(ErrorKind::kFormat, "header truncated: expected " + std::to_string(header_len) +
                                        " bytes, have " + std::to_string(bytes.size() - kPreamble));
  }
  json header;
  try {
    header = json::parse(bytes.substr(kPreamble, header_len));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("header is not JSON: ") + e.what());
  }

  ActivationDump dump;
  std::size_t tokens = 0;
  try {
    auto field = [&](const char* name) -> const json& {
      if (!header.contains(name)) {
        throw Error(ErrorKind::kFormat, std::string("header missing '") + name + "'");
      }
      return header.at(name);
    };
    dump.model_id = field("model_id").get<std::string>();
    dump.num_layers = field("L").get<std::size_t>();
    dump.hidden_dim = field("d").get<std::size_t>();
    tokens = field("T").get<std::size_t>();
    if (field("dtype").get<std::string>() != "f32") {
      throw Error(ErrorKind::kFormat, "unsupported dtype " + header.at("dtype").dump());
    }
    if (field("layout").get<std::string>() != "layer-major") {
      throw Error(ErrorKind::kFormat, "unsupported layout " + header.at("layout").dump());
    }
    dump.token_ids = field("token_ids").get<std::vector<Token>>();
    if (header.contains("metadata")) {
      dump.metadata = header.at("metadata").get<std::map<std::string, std::string>>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("bad header field: ") + e.what());
  }
  if (dump.token_ids.size() != tokens) {
    throw Error(ErrorKind::kFormat, "header T=" + std::to_string(tokens) + " but " +
                                        std::to_string(dump.token_ids.size()) + " token ids");
  }
  const std::size_t count = expected_floats(dump.num_layers, tokens, dump.hidden_dim);
  const std::size_t payload = bytes.size() - kPreamble - header_len;
  if (payload != 4 * count) {
    throw Error(ErrorKind::kFormat, "payload has " + std::to_string(payload) +
                                        " bytes, header implies " + std::to_string(4 * count) +
                                        " (L=" + std::to_string(dump.num_layers) +
                                        ", T=" + std::to_string(tokens) +
                                        ", d=" + std::to_string(dump.hidden_dim) + ")");
  }
  dump.residuals.resize(count);
  detail::get_f32(p + kPreamble + header_len, dump.residuals);
  return dump;
}

void write_dump(const ActivationDump& dump, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_dump(dump));
}

ActivationDump read_dump(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  try {
    return decode_dump(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

ActivationDump trace_to_dump(const ForwardTrace& trace, std::string_view model_id,
                             std::map<std::string, std::string> metadata) {
  ActivationDump dump;
  dump.model_id = model_id;
  dump.num_layers = trace.num_layers;
  dump.hidden_dim = trace.hidden_dim;
  dump.token_ids = trace.tokens;
  dump.residuals = trace.residuals;
  dump.metadata = std::move(metadata);
  return dump;
}

ForwardTrace dump_to_trace(const ActivationDump& dump) {
  ForwardTrace trace;
  trace.tokens = dump.token_ids;
  trace.num_layers = dump.num_layers;
  trace.hidden_dim = dump.hidden_dim;
  trace.vocab_size = 0;
  trace.residuals = dump.residuals;
  return trace;
}

ChoiceActivations choice_activations_from_dumps(std::span<const ActivationDump> dumps) {
  struct Slot {
    std::string id;
    const ActivationDump* positive = nullptr;
    const ActivationDump* negative = nullptr;
  };
  std::vector<Slot> slots;
  std::map<std::string, std::size_t> index;
  for (const auto& d : dumps) {
    const auto id = d.metadata.find("pair_id");
    const auto choice = d.metadata.find("choice");
    if (id == d.metadata.end() || choice == d.metadata.end()) {
      throw Error(ErrorKind::kValidation, "dump lacks 'pair_id' / 'choice' metadata");
    }
    if (d.num_tokens() == 0) {
      throw Error(ErrorKind::kValidation, "dump for pair '" + id->second + "' has no tokens");
    }
    const auto [it, inserted] = index.emplace(id->second, slots.size());
    if (inserted) slots.push_back({id->second});
    Slot& slot = slots[it->second];
    const ActivationDump** target = nullptr;
    if (choice->second == "positive") {
      target = &slot.positive;
    } else if (choice->second == "negative") {
      target = &slot.negative;
    } else {
      throw Error(ErrorKind::kValidation, "pair '" + id->second + "': unknown choice '" +
                                              choice->second + "'");
    }
    if (*target) {
      throw Error(ErrorKind::kValidation,
                  "pair '" + id->second + "' has two '" + choice->second + "' dumps");
    }
    *target = &d;
  }

  ChoiceActivations acts;
  for (const auto& slot : slots) {
    if (!slot.positive || !slot.negative) {
      throw Error(ErrorKind::kValidation, "pair '" + slot.id + "' is missing a dump");
    }
    for (const ActivationDump* d : {slot.positive, slot.negative}) {
      if (acts.ids.empty() && d == slot.positive) {
        acts.num_layers = d->num_layers;
        acts.hidden_dim = d->hidden_dim;
      }
      if (d->num_layers != acts.num_layers || d->hidden_dim != acts.hidden_dim) {
        throw Error(ErrorKind::kValidation, "pair '" + slot.id + "': dump shape differs");
      }
    }
    acts.ids.push_back(slot.id);
    for (std::size_t l = 0; l <= acts.num_layers; ++l) {
      const auto p = slot.positive->residual(l, slot.positive->num_tokens() - 1);
      const auto n = slot.negative->residual(l, slot.negative->num_tokens() - 1);
      acts.positive.insert(acts.positive.end(), p.begin(), p.end());
      acts.negative.insert(acts.negative.end(), n.begin(), n.end());
    }
  }
  return acts;
}

std::vector<ActivationDump> dump_choice_traces(const Model& model,
                                               std::span<const ContrastiveInput> prompts) {
  std::vector<ActivationDump> out;
  const std::string id = model.id();
  for (const auto& p : prompts) {
    for (const bool positive : {true, false}) {
      std::vector<Token> tokens = p.context;
      tokens.push_back(positive ? p.positive : p.negative);
      out.push_back(trace_to_dump(forward_trace(model, tokens), id,
                                  {{"pair_id", p.id}, {"choice", positive ? "positive" : "negative"}}));
    }
  }
  return out;
}

}  // namespace scs
