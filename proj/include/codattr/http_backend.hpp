#pragma once

// HTTP chat-completion transport. Speaks the OpenAI-style
// /v1/chat/completions protocol and a Gemini-style generateContent adapter.
// Transient failures (transport errors, 5xx, 429) are retried with seeded
// exponential backoff; other 4xx responses are rejected without retry.

#include <chrono>
#include <cstdint>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "codattr/backend.hpp"
#include "codattr/util.hpp"

namespace codattr {

enum class HttpApi { OpenAi, Gemini };

inline HttpApi http_api_from_string(std::string_view s) {
  const std::string v = to_lower(trim(s));
  if (v == "openai") return HttpApi::OpenAi;
  if (v == "gemini") return HttpApi::Gemini;
  throw ConfigError("unknown http api \"" + std::string(s) + "\" (expected openai or gemini)");
}

struct HttpBackendConfig {
  HttpApi api = HttpApi::OpenAi;
  std::string base_url;  // e.g. https://api.openai.com or http://127.0.0.1:8080
  std::string api_key;
  int max_retries = 3;
  std::int64_t base_backoff_ms = 250;
  std::uint64_t jitter_seed = 0;
  std::int64_t timeout_seconds = 120;
};

class HttpChatBackend final : public Backend {
 public:
  explicit HttpChatBackend(HttpBackendConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) throw ConfigError("http backend needs a base_url");
  }

  std::string name() const override { return "http"; }

  ChatResponse complete(const ChatRequest& request) override {
    const std::string path = request_path(request);
    const std::string body = request_body(request);

    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);

    httplib::Headers headers = {{"Content-Type", "application/json"}};
    if (config_.api == HttpApi::OpenAi && !config_.api_key.empty())
      headers.emplace("Authorization", "Bearer " + config_.api_key);

    DetRng jitter(config_.jitter_seed ^ request_cache_hash(request));
    std::string last_error;
    std::int64_t retry_after_ms = 0;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) {
        const std::int64_t backoff =
            config_.base_backoff_ms * (std::int64_t{1} << (attempt - 1)) +
            static_cast<std::int64_t>(jitter.below(100));
        std::this_thread::sleep_for(
            std::chrono::milliseconds(retry_after_ms > 0 ? retry_after_ms : backoff));
        retry_after_ms = 0;
      }

      auto result = client.Post(path, headers, body, "application/json");
      if (!result) {
        last_error = "transport error: " + httplib::to_string(result.error());
        continue;
      }
      const int status = result->status;
      if (status >= 200 && status < 300) {
        ChatResponse response = parse_body(request, result->body);
        response.retry_count = attempt;
        return response;
      }
      if (status == 429 || status >= 500) {
        last_error = "HTTP " + std::to_string(status);
        if (result->has_header("Retry-After")) {
          try {
            retry_after_ms = std::stoll(result->get_header_value("Retry-After")) * 1000;
          } catch (...) {
            retry_after_ms = 0;
          }
        }
        continue;
      }
      throw RequestRejected("HTTP " + std::to_string(status) + ": " +
                            result->body.substr(0, 200));
    }
    throw BackendUnavailable("backend unreachable after " + std::to_string(config_.max_retries) +
                             " retries (" + last_error + ")");
  }

 private:
  std::string request_path(const ChatRequest& r) const {
    if (config_.api == HttpApi::OpenAi) return "/v1/chat/completions";
    std::string path = "/v1beta/models/" + r.model + ":generateContent";
    if (!config_.api_key.empty()) path += "?key=" + config_.api_key;
    return path;
  }

  std::string request_body(const ChatRequest& r) const {
    nlohmann::json j;
    if (config_.api == HttpApi::OpenAi) {
      j["model"] = r.model;
      j["temperature"] = r.temperature;
      j["top_p"] = r.top_p;
      j["max_tokens"] = r.max_output_tokens;
      nlohmann::json messages = nlohmann::json::array();
      if (!r.system_text.empty())
        messages.push_back({{"role", "system"}, {"content", r.system_text}});
      messages.push_back({{"role", "user"}, {"content", r.user_text}});
      j["messages"] = std::move(messages);
    } else {
      if (!r.system_text.empty())
        j["system_instruction"] = {{"parts", {{{"text", r.system_text}}}}};
      j["contents"] = {{{"role", "user"}, {"parts", {{{"text", r.user_text}}}}}};
      j["generationConfig"] = {{"temperature", r.temperature},
                               {"topP", r.top_p},
                               {"maxOutputTokens", r.max_output_tokens}};
    }
    return j.dump();
  }

  ChatResponse parse_body(const ChatRequest& r, const std::string& body) const {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError("response body is not JSON: " + std::string(e.what()));
    }
    ChatResponse response;
    try {
      if (config_.api == HttpApi::OpenAi) {
        response.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
        if (j.contains("usage")) {
          response.prompt_tokens = j["usage"].value("prompt_tokens", 0u);
          response.output_tokens = j["usage"].value("completion_tokens", 0u);
        }
      } else {
        for (const auto& part : j.at("candidates").at(0).at("content").at("parts")) {
          response.text += part.value("text", "");
        }
        if (j.contains("usageMetadata")) {
          response.prompt_tokens = j["usageMetadata"].value("promptTokenCount", 0u);
          response.output_tokens = j["usageMetadata"].value("candidatesTokenCount", 0u);
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError("response body missing expected fields: " + std::string(e.what()));
    }
    if (response.prompt_tokens == 0)
      response.prompt_tokens = estimate_tokens(r.user_text) + estimate_tokens(r.system_text);
    if (response.output_tokens == 0) response.output_tokens = estimate_tokens(response.text);
    return response;
  }

  HttpBackendConfig config_;
};

}  // namespace codattr
