#include "redloop/http_backend.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include <cstdlib>
#include <regex>

namespace redloop {

HttpBackendConfig HttpBackendConfig::from_env() {
  HttpBackendConfig cfg;
  const char* endpoint = std::getenv("REDLOOP_LLM_ENDPOINT");
  if (!endpoint || !*endpoint) throw ConfigError("REDLOOP_LLM_ENDPOINT is not set");
  cfg.endpoint = endpoint;
  if (const char* key = std::getenv("REDLOOP_LLM_API_KEY")) cfg.api_key = key;
  if (const char* model = std::getenv("REDLOOP_LLM_MODEL"); model && *model) cfg.model = model;
  return cfg;
}

HttpBackend::HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(cfg_.endpoint, m, url_re)) throw ConfigError("malformed LLM endpoint: " + cfg_.endpoint);
  scheme_host_port_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/v1/chat/completions";
  if (cfg_.timeout_seconds <= 0) throw ConfigError("LLM timeout must be positive");
}

std::string HttpBackend::complete(const Prompt& prompt) {
  nlohmann::json body;
  body["model"] = cfg_.model;
  body["temperature"] = cfg_.temperature;
  body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt.text}}});

  httplib::Client client(scheme_host_port_);
  const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
  const auto usecs = static_cast<time_t>((cfg_.timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) throw TransportError("LLM request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw TransportError("LLM endpoint returned HTTP " + std::to_string(res->status));
  try {
    const auto reply = nlohmann::json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("unexpected LLM reply: ") + e.what());
  }
}

}  // namespace redloop
