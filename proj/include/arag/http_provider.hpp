#pragma once

#include <chrono>
#include <cstdlib>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "arag/agents.hpp"
#include "arag/errors.hpp"
#include "arag/ledger.hpp"
#include "arag/retrieval.hpp"

namespace arag {

struct HttpEndpoint {
  std::string url;  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string model;
};

struct HttpRetryPolicy {
  int max_retries = 2;      // additional attempts after the first
  int timeout_ms = 60000;
  int backoff_ms = 250;     // doubled per retry
};

namespace detail {

inline bool status_retryable(int status) {
  return status == 429 || (status >= 500 && status < 600);
}

/// POSTs `body` as JSON with retry/backoff on transport failures, 429 and
/// 5xx. Returns the parsed response body.
inline nlohmann::json post_json(const HttpEndpoint& ep, const nlohmann::json& body,
                                const HttpRetryPolicy& retry, const std::string& api_key) {
  std::string payload = body.dump();
  std::string last_error;
  for (int attempt = 0; attempt <= retry.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(
          std::chrono::milliseconds(retry.backoff_ms * (1 << (attempt - 1))));
    }
    httplib::Client cli(ep.url);
    cli.set_connection_timeout(0, retry.timeout_ms * 1000LL);
    cli.set_read_timeout(retry.timeout_ms / 1000, (retry.timeout_ms % 1000) * 1000);
    httplib::Headers headers;
    if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
    auto res = cli.Post(ep.path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 200 && res->status < 300) {
      nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded())
        throw TransportError("endpoint " + ep.url + ep.path + " returned non-JSON body");
      return j;
    }
    last_error = "HTTP " + std::to_string(res->status) + " from " + ep.url + ep.path;
    if (!status_retryable(res->status)) throw TransportError(last_error);
  }
  throw TransportError(last_error + " (retries exhausted)");
}

}  // namespace detail

/// Chat-completions client. Request: {"model", "messages":
/// [{"role":"user","content"}], "max_tokens", "temperature"}. The response may
/// be OpenAI-shaped (choices[0].message.content + usage) or a plain {"text"}
/// object; missing usage falls back to whitespace-token counts. The API key
/// is read from the ARAG_API_KEY environment variable only.
class HttpChatProvider final : public ChatProvider {
 public:
  HttpChatProvider(std::map<Role, HttpEndpoint> endpoints, HttpRetryPolicy retry = {},
                   double temperature = 0.0)
      : endpoints_(std::move(endpoints)), retry_(retry), temperature_(temperature) {
    const char* key = std::getenv("ARAG_API_KEY");
    if (key) api_key_ = key;
  }

  bool has_role(Role role) const { return endpoints_.count(role) != 0; }

  ChatResult complete(Role role, std::string_view prompt, int max_new_tokens) override {
    auto it = endpoints_.find(role);
    if (it == endpoints_.end())
      throw ConfigError(std::string("no endpoint configured for role ") + role_name(role));
    const HttpEndpoint& ep = it->second;
    nlohmann::json body{{"model", ep.model},
                        {"messages", nlohmann::json::array({nlohmann::json{
                                         {"role", "user"}, {"content", std::string(prompt)}}})},
                        {"max_tokens", max_new_tokens},
                        {"temperature", temperature_}};
    nlohmann::json j = detail::post_json(ep, body, retry_, api_key_);

    ChatResult out;
    if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
      const auto& choice = j["choices"][0];
      if (choice.contains("message") && choice["message"].contains("content")) {
        out.text = choice["message"]["content"].get<std::string>();
      } else if (choice.contains("text")) {
        out.text = choice["text"].get<std::string>();
      }
    } else if (j.contains("text") && j["text"].is_string()) {
      out.text = j["text"].get<std::string>();
    }
    if (out.text.empty() && !j.contains("choices") && !j.contains("text"))
      throw TransportError("chat response has neither \"choices\" nor \"text\"");
    if (j.contains("usage") && j["usage"].is_object()) {
      out.tokens_in = j["usage"].value("prompt_tokens", 0LL);
      out.tokens_out = j["usage"].value("completion_tokens", 0LL);
    } else {
      out.tokens_in = count_ws_tokens(prompt);
      out.tokens_out = count_ws_tokens(out.text);
    }
    return out;
  }

 private:
  std::map<Role, HttpEndpoint> endpoints_;
  HttpRetryPolicy retry_;
  double temperature_;
  std::string api_key_;
};

/// Embedding wire client: POST {"input": str} -> {"embedding": [float, ...]}.
/// Dimension is pinned by the first successful call (or up front via
/// `expected_dim`) and enforced afterwards.
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(HttpEndpoint endpoint, HttpRetryPolicy retry = {}, int expected_dim = 0)
      : endpoint_(std::move(endpoint)), retry_(retry), dim_(expected_dim) {
    const char* key = std::getenv("ARAG_API_KEY");
    if (key) api_key_ = key;
  }

  std::vector<double> embed(std::string_view text, int max_tokens) override {
    nlohmann::json body{{"input", truncate_words(text, max_tokens)}};
    nlohmann::json j = detail::post_json(endpoint_, body, retry_, api_key_);
    auto it = j.find("embedding");
    if (it == j.end() || !it->is_array())
      throw TransportError("embedding response lacks an \"embedding\" array");
    std::vector<double> vec;
    vec.reserve(it->size());
    for (const auto& v : *it) vec.push_back(v.get<double>());
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (dim_ == 0) dim_ = static_cast<int>(vec.size());
      if (static_cast<int>(vec.size()) != dim_)
        throw IntegrityError("embedding dimension changed mid-stream: expected " +
                             std::to_string(dim_) + ", got " + std::to_string(vec.size()));
    }
    return vec;
  }

  int dimension() const override {
    std::lock_guard<std::mutex> lock(mu_);
    return dim_;
  }

 private:
  HttpEndpoint endpoint_;
  HttpRetryPolicy retry_;
  mutable std::mutex mu_;
  int dim_;
  std::string api_key_;
};

}  // namespace arag
