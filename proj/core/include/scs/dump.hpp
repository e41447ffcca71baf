#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scs/concept.hpp"
#include "scs/forward.hpp"

namespace scs {

// Residual-stream capture shared with external model adapters. On disk:
// "SCSA", u16 LE version, u32 LE header length, UTF-8 JSON header, then
// little-endian f32 residuals, layer-major, then token, then channel.
struct ActivationDump {
  std::string model_id;
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  std::vector<Token> token_ids;
  std::vector<float> residuals;  // [(L+1) x T x d]
  std::map<std::string, std::string> metadata;

  std::size_t num_tokens() const noexcept { return token_ids.size(); }
  std::span<const float> residual(std::size_t layer, std::size_t position) const;
};

inline constexpr std::uint16_t kDumpVersion = 1;

std::string encode_dump(const ActivationDump& dump);
ActivationDump decode_dump(std::string_view bytes);

// Writes to a temporary sibling and renames, so no partial file is ever
// visible under `path`.
void write_dump(const ActivationDump& dump, const std::filesystem::path& path);
ActivationDump read_dump(const std::filesystem::path& path);

ActivationDump trace_to_dump(const ForwardTrace& trace, std::string_view model_id,
                             std::map<std::string, std::string> metadata = {});
// Logits are not stored in dumps; the result has none and vocab_size 0.
ForwardTrace dump_to_trace(const ActivationDump& dump);

// Pairs dumps by metadata "pair_id" and "choice" ("positive" / "negative")
// and takes the final-token residuals, giving the same input that in-process
// extraction uses. Pairs keep the order of their first dump.
ChoiceActivations choice_activations_from_dumps(std::span<const ActivationDump> dumps);

// Dumps of x||p and x||n for every prompt, tagged for the function above.
std::vector<ActivationDump> dump_choice_traces(const Model& model,
                                               std::span<const ContrastiveInput> prompts);

}  // namespace scs
