#pragma once

// OpenAI-compatible chat-completions client. Not used by any acceptance run.
//
//   REDLOOP_LLM_ENDPOINT  base URL, e.g. http://127.0.0.1:8000/v1/chat/completions
//   REDLOOP_LLM_API_KEY   bearer token (optional)
//   REDLOOP_LLM_MODEL     model name sent with each request

#include <string>

#include "redloop/pipeline.hpp"

namespace redloop {

struct HttpBackendConfig {
  std::string endpoint;
  std::string api_key;
  std::string model = "gpt-4o";
  double timeout_seconds = 60.0;
  double temperature = 0.0;

  // Reads the REDLOOP_LLM_* variables; ConfigError when the endpoint is unset.
  static HttpBackendConfig from_env();
};

class HttpBackend final : public ModelBackend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg);

  // Throws TransportError on connection failures, non-200 replies and
  // replies without a message.
  std::string complete(const Prompt& prompt) override;
  std::string identity() const override { return "http:" + cfg_.model; }

 private:
  HttpBackendConfig cfg_;
  std::string scheme_host_port_;
  std::string path_;
};

}  // namespace redloop
