#include "scs/tokenizer.hpp"

#include <cstdio>

#include "scs/error.hpp"

namespace scs {

std::vector<Token> encode_text(std::string_view text, const ModelConfig& config) {
  std::vector<Token> out;
  out.reserve(text.size());
  const std::size_t limit = config.vocab_size - 2;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto byte = static_cast<unsigned char>(text[i]);
    if (byte >= limit) {
      char buf[8];
      std::snprintf(buf, sizeof buf, "0x%02X", byte);
      throw Error(ErrorKind::kInput, std::string("byte ") + buf + " at offset " + std::to_string(i) +
                                         " is not encodable with vocab_size " +
                                         std::to_string(config.vocab_size));
    }
    out.push_back(byte);
  }
  return out;
}

std::string decode_tokens(std::span<const Token> tokens, const ModelConfig& config) {
  std::string out;
  out.reserve(tokens.size());
  for (Token t : tokens) {
    if (t >= config.vocab_size) {
      throw Error(ErrorKind::kInput, "token " + std::to_string(t) + " outside vocabulary");
    }
    if (t == config.choice_token(Choice::kA)) {
      out += "(A)";
    } else if (t == config.choice_token(Choice::kB)) {
      out += "(B)";
    } else {
      out.push_back(static_cast<char>(t));
    }
  }
  return out;
}

std::string token_display(Token token, const ModelConfig& config) {
  if (token == config.choice_token(Choice::kA)) return "<A>";
  if (token == config.choice_token(Choice::kB)) return "<B>";
  if (token >= 0x20 && token < 0x7F) return std::string(1, static_cast<char>(token));
  char buf[16];
  std::snprintf(buf, sizeof buf, "\\x%02X", static_cast<unsigned>(token));
  return buf;
}

}  // namespace scs
