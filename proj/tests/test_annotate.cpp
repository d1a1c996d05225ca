#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "diff/annotate.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

using namespace xcod;
using namespace xcod::diff;

namespace {

std::vector<std::vector<ActivatingContext>> contexts_for(std::size_t n) {
  std::vector<std::vector<ActivatingContext>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    ActivatingContext c;
    c.tokens = {{"so", 0.0}, {"Wait" + std::to_string(i), 2.0}, {"no", 0.0}};
    c.focus = 1;
    out[i].push_back(c);
  }
  return out;
}

}  // namespace

TEST_CASE("no endpoint means every feature is unannotated") {
  const auto labels = annotate_features({1, 2}, contexts_for(2), AnnotateConfig{});
  CHECK(labels == std::vector<std::string>{kUnannotated, kUnannotated});
}

TEST_CASE("prompt marks the activating token") {
  const auto p = render_prompt("f={feature}\n{contexts}", 7, contexts_for(1)[0]);
  CHECK(p == "f=7\n1. so <<Wait0>> no\n");
}

TEST_CASE("one request per feature with contexts in the prompt") {
  AnnotateConfig cfg;
  cfg.endpoint = "http://example.invalid/v1/chat";
  cfg.model = "m";
  std::vector<std::string> bodies;
  const HttpPost capture = [&](const std::string& url, const std::map<std::string, std::string>&,
                               const std::string& body, int) {
    CHECK(url == cfg.endpoint);
    bodies.push_back(body);
    const nlohmann::json reply = {
        {"choices", {{{"message", {{"content", "label for " + std::to_string(bodies.size())}}}}}}};
    return HttpResponse{200, reply.dump(), ""};
  };
  const auto labels = annotate_features({3, 4, 5}, contexts_for(3), cfg, capture);
  REQUIRE(bodies.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto req = nlohmann::json::parse(bodies[i]);
    CHECK(req["model"] == "m");
    CHECK(req["messages"][0]["role"] == "user");
    CHECK(req["messages"][0]["content"].get<std::string>().find("<<Wait" + std::to_string(i) + ">>") != std::string::npos);
    CHECK(labels[i] == "label for " + std::to_string(i + 1));
  }
}

TEST_CASE("failures become per-feature error labels") {
  AnnotateConfig cfg;
  cfg.endpoint = "http://example.invalid/x";
  int calls = 0;
  const HttpPost flaky = [&](const std::string&, const std::map<std::string, std::string>&, const std::string&, int) {
    ++calls;
    if (calls == 1) return HttpResponse{0, "", "connection refused"};
    if (calls == 2) return HttpResponse{401, "nope", ""};
    return HttpResponse{200, "{\"unexpected\":1}", ""};
  };
  const auto labels = annotate_features({0, 1, 2}, contexts_for(3), cfg, flaky);
  CHECK(labels[0] == "(error: connection refused)");
  CHECK(labels[1] == "(error: HTTP 401)");
  CHECK(labels[2].rfind("(error: malformed response", 0) == 0);

  cfg.credential_env = "XCOD_TEST_UNSET_CREDENTIAL";
  ::unsetenv(cfg.credential_env.c_str());
  const auto missing = annotate_features({0}, contexts_for(1), cfg, flaky);
  CHECK(missing[0].find("XCOD_TEST_UNSET_CREDENTIAL") != std::string::npos);
}

TEST_CASE("http client against a local mock endpoint") {
  httplib::Server server;
  std::atomic<int> requests{0};
  std::string auth;
  server.Post("/v1/chat", [&](const httplib::Request& req, httplib::Response& res) {
    ++requests;
    auth = req.get_header_value("Authorization");
    res.set_content(R"({"choices":[{"message":{"content":"Wait detector"}}]})", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("XCOD_TEST_CREDENTIAL", "secret", 1);
  AnnotateConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat";
  cfg.credential_env = "XCOD_TEST_CREDENTIAL";
  cfg.timeout_seconds = 5;
  const auto labels = annotate_features({0, 1}, contexts_for(2), cfg);
  server.stop();
  worker.join();

  CHECK(requests == 2);
  CHECK(auth == "Bearer secret");
  CHECK(labels == std::vector<std::string>{"Wait detector", "Wait detector"});
}

TEST_CASE("annotation config keys are strict") {
  CHECK(annotate_config_from_json({{"endpoint", "http://h/x"}, {"model", "m"}}).endpoint == "http://h/x");
  CHECK_THROWS(annotate_config_from_json({{"endpont", "x"}}));
  CHECK_THROWS(annotate_config_from_json({{"timeout_seconds", 0}}));
}
