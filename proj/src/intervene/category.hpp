#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace xcod::intervene {

struct ReasoningCategory {
  std::string name;
  std::vector<std::string> target_tokens;  // exact surface forms, leading-space variants listed explicitly

  bool matches(const std::string& token_text) const;
  void validate() const;
};

// Self-reflection, deductive, alternative and contrastive reasoning with their
// bare and leading-space target words.
std::vector<ReasoningCategory> reasoning_categories();

nlohmann::json to_json(const ReasoningCategory& c);
ReasoningCategory category_from_json(const nlohmann::json& j);

}  // namespace xcod::intervene
