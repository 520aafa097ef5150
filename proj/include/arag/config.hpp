#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>

#include "arag/agents.hpp"
#include "arag/errors.hpp"
#include "arag/http_provider.hpp"
#include "arag/orchestrator.hpp"
#include "arag/retrieval.hpp"
#include "arag/util.hpp"

namespace arag {

struct ProviderSettings {
  std::string type = "http";  // http | scripted
  std::string script_path;    // scripted only
  std::map<Role, HttpEndpoint> endpoints;
  HttpRetryPolicy retry;
};

struct EmbedderSettings {
  std::string type = "hash";  // hash | http | none
  int dim = 256;              // hash dimension, or expected http dimension (0 = infer)
  HttpEndpoint endpoint{.url = "", .path = "/embed", .model = ""};
  HttpRetryPolicy retry;
};

/// Everything an operator run needs: pipeline knobs plus provider, embedder,
/// index, and prompt locations. Loaded from a flat key=value file; CLI flags
/// override individual keys.
struct AppConfig {
  PipelineConfig pipeline;
  ProviderSettings provider;
  EmbedderSettings embedder;
  std::string index_dir;
  std::string prompts_dir = "prompts";
};

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (iequals(value, "true") || value == "1" || iequals(value, "yes")) return true;
  if (iequals(value, "false") || value == "0" || iequals(value, "no")) return false;
  throw ConfigError("config key \"" + key + "\": expected a boolean, got \"" + value + "\"");
}

inline int parse_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key \"" + key + "\": expected an integer, got \"" + value + "\"");
  }
}

inline double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key \"" + key + "\": expected a number, got \"" + value + "\"");
  }
}

}  // namespace detail

/// Applies one key=value setting. Unknown keys are rejected by name.
inline void apply_config_entry(AppConfig& cfg, const std::string& key, const std::string& value) {
  auto endpoint_field = [&](Role role) -> HttpEndpoint& { return cfg.provider.endpoints[role]; };

  if (key == "max_iterations") cfg.pipeline.max_iterations = detail::parse_int(key, value);
  else if (key == "top_k") cfg.pipeline.top_k = detail::parse_int(key, value);
  else if (key == "retrieval_mode") cfg.pipeline.retrieval_mode = retrieval_mode_from_name(value);
  else if (key == "obvious_shortcut") cfg.pipeline.obvious_shortcut = detail::parse_bool(key, value);
  else if (key == "adaptive_models") cfg.pipeline.adaptive_models = detail::parse_bool(key, value);
  else if (key == "filter_batch_size") cfg.pipeline.filter_batch_size = detail::parse_int(key, value);
  else if (key == "rrf_k") cfg.pipeline.rrf_k = detail::parse_int(key, value);
  else if (key == "bm25_k1") cfg.pipeline.bm25.k1 = detail::parse_double(key, value);
  else if (key == "bm25_b") cfg.pipeline.bm25.b = detail::parse_double(key, value);
  else if (key == "fetch_multiplier") cfg.pipeline.fetch_multiplier = detail::parse_int(key, value);
  else if (key == "query_max_tokens") cfg.pipeline.query_max_tokens = detail::parse_int(key, value);
  else if (key == "max_new_tokens") cfg.pipeline.max_new_tokens = detail::parse_int(key, value);
  else if (key == "max_input_tokens") cfg.pipeline.max_input_tokens = detail::parse_int(key, value);
  else if (key == "temperature") cfg.pipeline.temperature = detail::parse_double(key, value);
  else if (key == "index_dir") cfg.index_dir = value;
  else if (key == "prompts_dir") cfg.prompts_dir = value;
  else if (key == "provider_type") cfg.provider.type = value;
  else if (key == "provider_script") cfg.provider.script_path = value;
  else if (key == "provider_timeout_ms") cfg.provider.retry.timeout_ms = detail::parse_int(key, value);
  else if (key == "provider_max_retries") cfg.provider.retry.max_retries = detail::parse_int(key, value);
  else if (key == "provider_small_url") endpoint_field(Role::Small).url = value;
  else if (key == "provider_small_path") endpoint_field(Role::Small).path = value;
  else if (key == "provider_small_model") endpoint_field(Role::Small).model = value;
  else if (key == "provider_large_url") endpoint_field(Role::Large).url = value;
  else if (key == "provider_large_path") endpoint_field(Role::Large).path = value;
  else if (key == "provider_large_model") endpoint_field(Role::Large).model = value;
  else if (key == "provider_reasoner_url") endpoint_field(Role::Reasoner).url = value;
  else if (key == "provider_reasoner_path") endpoint_field(Role::Reasoner).path = value;
  else if (key == "provider_reasoner_model") endpoint_field(Role::Reasoner).model = value;
  else if (key == "provider_judge_url") endpoint_field(Role::Judge).url = value;
  else if (key == "provider_judge_path") endpoint_field(Role::Judge).path = value;
  else if (key == "provider_judge_model") endpoint_field(Role::Judge).model = value;
  else if (key == "embedder_type") cfg.embedder.type = value;
  else if (key == "embedder_dim") cfg.embedder.dim = detail::parse_int(key, value);
  else if (key == "embedder_url") cfg.embedder.endpoint.url = value;
  else if (key == "embedder_path") cfg.embedder.endpoint.path = value;
  else if (key == "embedder_timeout_ms") cfg.embedder.retry.timeout_ms = detail::parse_int(key, value);
  else if (key == "embedder_max_retries") cfg.embedder.retry.max_retries = detail::parse_int(key, value);
  else throw ConfigError("unknown config key: " + key);
}

/// Flat key = value file; '#' starts a comment, blank lines are skipped.
inline AppConfig load_config_file(const std::filesystem::path& path) {
  AppConfig cfg;
  std::string text = read_file(path);
  size_t line_no = 0;
  for (const std::string& raw_line : split_lines(text)) {
    ++line_no;
    std::string line = raw_line;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    size_t eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ": line " + std::to_string(line_no) +
                        ": expected key = value");
    std::string key = trim(trimmed.substr(0, eq));
    std::string value = trim(trimmed.substr(eq + 1));
    apply_config_entry(cfg, key, value);
  }
  return cfg;
}

inline std::unique_ptr<ChatProvider> make_chat_provider(const ProviderSettings& s,
                                                        double temperature) {
  if (s.type == "scripted") {
    if (s.script_path.empty())
      throw ConfigError("provider_type = scripted requires provider_script = <path>");
    return std::make_unique<ScriptedProvider>(ScriptedProvider::rules_from_file(s.script_path));
  }
  if (s.type == "http") {
    if (s.endpoints.empty())
      throw ConfigError("provider_type = http requires at least one provider_<role>_url");
    for (const auto& [role, ep] : s.endpoints) {
      if (ep.url.empty())
        throw ConfigError(std::string("provider endpoint for role ") + role_name(role) +
                          " has no url");
    }
    return std::make_unique<HttpChatProvider>(s.endpoints, s.retry, temperature);
  }
  throw ConfigError("unknown provider_type: " + s.type);
}

inline std::unique_ptr<EmbeddingProvider> make_embedder(const EmbedderSettings& s) {
  if (s.type == "hash") return std::make_unique<HashEmbedder>(s.dim);
  if (s.type == "http") {
    if (s.endpoint.url.empty()) throw ConfigError("embedder_type = http requires embedder_url");
    return std::make_unique<HttpEmbeddingProvider>(s.endpoint, s.retry, s.dim);
  }
  if (s.type == "none") return nullptr;
  throw ConfigError("unknown embedder_type: " + s.type);
}

/// True when a judge model can actually be called with this provider setup.
inline bool judge_configured(const ProviderSettings& s) {
  if (s.type == "scripted") return true;  // the script answers any role it covers
  return s.endpoints.count(Role::Judge) != 0 && !s.endpoints.at(Role::Judge).url.empty();
}

}  // namespace arag
