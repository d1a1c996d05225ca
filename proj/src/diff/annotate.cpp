#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "diff/annotate.hpp"

#include <cstdlib>
#include <sstream>

#include <httplib.h>

#include "common/error.hpp"

namespace xcod::diff {

namespace {

void replace_all(std::string& s, const std::string& key, const std::string& value) {
  for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size()))
    s.replace(pos, key.size(), value);
}

std::string error_label(const std::string& what) { return "(error: " + what + ")"; }

}  // namespace

std::string AnnotateConfig::default_prompt_template() {
  return "Below are the top activating contexts of feature {feature} from a sparse dictionary trained on a "
         "language model's residual stream. The activating token is marked <<like this>>.\n\n{contexts}\n"
         "Reply with a short label (a few words) for what this feature detects.";
}

AnnotateConfig annotate_config_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::kConfig, "annotation config must be an object");
  AnnotateConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "endpoint") c.endpoint = value.get<std::string>();
      else if (key == "model") c.model = value.get<std::string>();
      else if (key == "credential_env") c.credential_env = value.get<std::string>();
      else if (key == "prompt_template") c.prompt_template = value.get<std::string>();
      else if (key == "timeout_seconds") c.timeout_seconds = value.get<int>();
      else fail(ErrorCode::kConfig, "unknown annotation key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kConfig, "bad annotation key '" + key + "': " + e.what());
    }
  }
  require(c.timeout_seconds > 0, ErrorCode::kConfig, "annotation timeout must be positive");
  return c;
}

nlohmann::json to_json(const AnnotateConfig& c) {
  return {{"endpoint", c.endpoint},
          {"model", c.model},
          {"credential_env", c.credential_env},
          {"prompt_template", c.prompt_template},
          {"timeout_seconds", c.timeout_seconds}};
}

HttpResponse http_post(const std::string& url, const std::map<std::string, std::string>& headers,
                       const std::string& body, int timeout_seconds) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) return {0, "", "endpoint has no scheme: " + url};
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string origin = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
  httplib::Client client(origin);
  if (!client.is_valid()) return {0, "", "cannot create client for " + origin};
  client.set_connection_timeout(timeout_seconds, 0);
  client.set_read_timeout(timeout_seconds, 0);
  client.set_write_timeout(timeout_seconds, 0);
  httplib::Headers h;
  for (const auto& [k, v] : headers) h.emplace(k, v);
  auto res = client.Post(path, h, body, "application/json");
  if (!res) return {0, "", httplib::to_string(res.error())};
  return {res->status, res->body, ""};
}

std::string render_prompt(const std::string& prompt_template, Index feature,
                          const std::vector<ActivatingContext>& contexts) {
  std::ostringstream ctx;
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    ctx << i + 1 << ".";
    const auto& c = contexts[i];
    for (std::size_t t = 0; t < c.tokens.size(); ++t) {
      ctx << ' ';
      if (t == c.focus) ctx << "<<" << c.tokens[t].text << ">>";
      else ctx << c.tokens[t].text;
    }
    ctx << "\n";
  }
  std::string out = prompt_template;
  replace_all(out, "{feature}", std::to_string(feature));
  replace_all(out, "{contexts}", ctx.str());
  return out;
}

std::vector<std::string> annotate_features(const std::vector<Index>& features,
                                           const std::vector<std::vector<ActivatingContext>>& contexts,
                                           const AnnotateConfig& config, const HttpPost& post) {
  require(features.size() == contexts.size(), ErrorCode::kShapeMismatch, "one context list per feature expected");
  std::vector<std::string> labels(features.size(), kUnannotated);
  if (config.endpoint.empty()) return labels;

  std::map<std::string, std::string> headers;
  if (!config.credential_env.empty()) {
    const char* token = std::getenv(config.credential_env.c_str());
    if (token == nullptr || *token == '\0') {
      for (auto& l : labels) l = error_label("credential variable " + config.credential_env + " is unset");
      return labels;
    }
    headers["Authorization"] = std::string("Bearer ") + token;
  }
  for (std::size_t i = 0; i < features.size(); ++i) {
    const nlohmann::json body = {
        {"model", config.model},
        {"messages", nlohmann::json::array(
                         {{{"role", "user"}, {"content", render_prompt(config.prompt_template, features[i], contexts[i])}}})}};
    const HttpResponse res = post(config.endpoint, headers, body.dump(), config.timeout_seconds);
    if (!res.error.empty()) {
      labels[i] = error_label(res.error);
      continue;
    }
    if (res.status < 200 || res.status >= 300) {
      labels[i] = error_label("HTTP " + std::to_string(res.status));
      continue;
    }
    try {
      labels[i] = nlohmann::json::parse(res.body).at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      labels[i] = error_label(std::string("malformed response: ") + e.what());
    }
  }
  return labels;
}

}  // namespace xcod::diff
