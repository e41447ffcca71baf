#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scs/model.hpp"

namespace scs {

struct ContrastivePair {
  std::string id;
  std::string language;
  std::string category;  // vulnerability group
  std::string secure_code;
  std::string insecure_code;
  std::string description;
};

// JSON-lines, one object per line. Blank lines are ignored. Malformed lines
// raise Error(kParse) with the 1-based line number; duplicate ids and
// degenerate pairs raise Error(kValidation).
std::vector<ContrastivePair> parse_contrastive_dataset(std::string_view text);
std::vector<ContrastivePair> load_contrastive_dataset(const std::filesystem::path& path);

struct TemplateOptions {
  bool include_question = true;  // trailing "Which snippet do you choose" line
};

struct ABPrompt {
  std::string pair_id;
  std::string language;
  std::string category;
  Choice secure_choice = Choice::kA;
  std::string secure_code;
  std::string insecure_code;
  TemplateOptions options;
  std::string context;  // rendered template text

  const std::string& code_at(Choice c) const {
    return c == secure_choice ? secure_code : insecure_code;
  }
};

std::string render_ab_context(std::string_view language, std::string_view code_a,
                              std::string_view code_b, const TemplateOptions& options = {});

// One prompt per pair; the secure snippet goes to A or B by a coin flip
// seeded from (seed, pair id).
std::vector<ABPrompt> build_ab_prompts(std::span<const ContrastivePair> pairs, std::uint64_t seed,
                                       const TemplateOptions& options = {});

// Tokenized A/B prompt. The two snippet labels are the reserved choice
// tokens; the rest of the template is plain bytes.
struct ContrastiveInput {
  std::string id;
  std::vector<Token> context;
  Token positive = 0;  // choice token of the secure snippet
  Token negative = 0;
};

std::vector<Token> encode_ab_context(const ABPrompt& prompt, const ModelConfig& config);
ContrastiveInput encode_ab_prompt(const ABPrompt& prompt, const ModelConfig& config);
std::vector<ContrastiveInput> encode_ab_prompts(std::span<const ABPrompt> prompts,
                                                const ModelConfig& config);

}  // namespace scs
