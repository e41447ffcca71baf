#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scs/model.hpp"

namespace scs {

// Byte-level tokenizer. Every byte maps to its own id; bytes that collide
// with the reserved choice ids (or exceed a reduced vocabulary) are rejected.
std::vector<Token> encode_text(std::string_view text, const ModelConfig& config);

// Inverse of encode_text. Choice tokens render as "(A)" / "(B)".
std::string decode_tokens(std::span<const Token> tokens, const ModelConfig& config);

// Display form for reports: printable ASCII as-is, choice tokens as "<A>" /
// "<B>", everything else as "\xNN".
std::string token_display(Token token, const ModelConfig& config);

}  // namespace scs
