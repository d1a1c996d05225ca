#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "diff/diff.hpp"

namespace xcod::diff {

struct AnnotateConfig {
  std::string endpoint;        // full URL of a chat-completion style endpoint; empty disables annotation
  std::string model;
  std::string credential_env;  // name of the environment variable holding a bearer token
  std::string prompt_template = default_prompt_template();
  int timeout_seconds = 30;

  static std::string default_prompt_template();
};

AnnotateConfig annotate_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AnnotateConfig& c);

struct HttpResponse {
  int status = 0;
  std::string body;
  std::string error;  // transport failure, empty when a response arrived
};

using HttpPost = std::function<HttpResponse(const std::string& url, const std::map<std::string, std::string>& headers,
                                            const std::string& body, int timeout_seconds)>;

// POST over httplib, with TLS for https URLs.
HttpResponse http_post(const std::string& url, const std::map<std::string, std::string>& headers,
                       const std::string& body, int timeout_seconds);

// Fills {feature} and {contexts}; the activating token is marked <<like this>>.
std::string render_prompt(const std::string& prompt_template, Index feature,
                          const std::vector<ActivatingContext>& contexts);

inline constexpr const char* kUnannotated = "(unannotated)";

// One label per feature. Failures become "(error: ...)" labels and never throw.
std::vector<std::string> annotate_features(const std::vector<Index>& features,
                                           const std::vector<std::vector<ActivatingContext>>& contexts,
                                           const AnnotateConfig& config, const HttpPost& post = http_post);

}  // namespace xcod::diff
