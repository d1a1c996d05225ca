#include "intervene/category.hpp"

#include <algorithm>

#include "common/error.hpp"

namespace xcod::intervene {

bool ReasoningCategory::matches(const std::string& token_text) const {
  return std::find(target_tokens.begin(), target_tokens.end(), token_text) != target_tokens.end();
}

void ReasoningCategory::validate() const {
  require(!name.empty(), ErrorCode::kInvalidArgument, "reasoning category needs a name");
  require(!target_tokens.empty(), ErrorCode::kInvalidArgument,
          "reasoning category '" + name + "' has no target tokens");
}

std::vector<ReasoningCategory> reasoning_categories() {
  return {
      {"self-reflection", {"Wait", " Wait"}},
      {"deductive", {"Therefore", " Therefore", "Thus", " Thus"}},
      {"alternative", {"Alternatively", " Alternatively"}},
      {"contrastive", {"But", " But", "However", " However"}},
  };
}

nlohmann::json to_json(const ReasoningCategory& c) {
  return {{"name", c.name}, {"target_tokens", c.target_tokens}};
}

ReasoningCategory category_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::kConfig, "category must be an object");
  for (const auto& [key, _] : j.items())
    require(key == "name" || key == "target_tokens", ErrorCode::kConfig, "unknown category key '" + key + "'");
  ReasoningCategory c;
  try {
    c.name = j.at("name").get<std::string>();
    c.target_tokens = j.at("target_tokens").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("bad category: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace xcod::intervene
