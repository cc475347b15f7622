#include "ranslice/llm_client.hpp"

#include <cstdlib>
#include <regex>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "ranslice/errors.hpp"

namespace ranslice {

using nlohmann::json;

void LlmEndpointConfig::validate() const {
  if (base_url.empty()) {
    throw ConfigError("llm endpoint base_url is empty");
  }
  if (model.empty()) {
    throw ConfigError("llm endpoint model is empty");
  }
  if (act_temperature < 0.0 || rollout_temperature < 0.0) {
    throw ConfigError("llm temperatures must be >= 0");
  }
  if (timeout_s <= 0.0) {
    throw ConfigError("llm timeout must be > 0");
  }
  if (max_retries < 0) {
    throw ConfigError("llm max_retries must be >= 0");
  }
}

namespace {

bool retryable_status(int status) {
  return status == 408 || status == 429 || status >= 500;
}

std::string body_excerpt(const std::string& body) {
  constexpr std::size_t kMax = 200;
  if (body.size() <= kMax) {
    return body;
  }
  return body.substr(0, kMax) + "...";
}

}  // namespace

ChatClient::ChatClient(LlmEndpointConfig config) : config_(std::move(config)) {
  config_.validate();
  // Split base_url into scheme://host:port and a path prefix.
  static const std::regex url_re(R"(^(https?)://([^/:]+)(?::(\d+))?(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.base_url, m, url_re)) {
    throw ConfigError("cannot parse llm base_url: " + config_.base_url);
  }
  if (m[1] == "https") {
    throw ConfigError("https endpoints are not supported in this build; use http");
  }
  host_ = m[2];
  port_ = m[3].matched ? std::stoi(m[3]) : 80;
  path_prefix_ = m[4].matched ? m[4].str() : "";
  while (!path_prefix_.empty() && path_prefix_.back() == '/') {
    path_prefix_.pop_back();
  }
}

std::string ChatClient::complete(const std::vector<Message>& messages,
                                 double temperature) const {
  json body{{"model", config_.model}, {"temperature", temperature},
            {"max_tokens", config_.max_tokens}};
  body["messages"] = json::array();
  for (const Message& msg : messages) {
    body["messages"].push_back(json{{"role", msg.role}, {"content", msg.content}});
  }
  const std::string payload = body.dump();
  const std::string path = path_prefix_ + "/chat/completions";

  httplib::Headers headers;
  if (const char* token = std::getenv(config_.auth_env_var.c_str());
      token != nullptr && *token != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    httplib::Client client(host_, port_);
    client.set_connection_timeout(static_cast<time_t>(config_.timeout_s), 0);
    client.set_read_timeout(static_cast<time_t>(config_.timeout_s), 0);
    auto result = client.Post(path, headers, payload, "application/json");
    if (!result) {
      last_error = fmt::format("transport error ({})", httplib::to_string(result.error()));
      continue;
    }
    if (result->status < 200 || result->status >= 300) {
      if (retryable_status(result->status) && attempt < config_.max_retries) {
        last_error = fmt::format("status {}", result->status);
        continue;
      }
      throw EndpointError(fmt::format("endpoint returned status {}: {}", result->status,
                                      body_excerpt(result->body)));
    }
    json response;
    try {
      response = json::parse(result->body);
      return response.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& ex) {
      throw EndpointError(fmt::format("malformed endpoint response ({}): {}", ex.what(),
                                      body_excerpt(result->body)));
    }
  }
  throw TransportError(fmt::format("llm request failed after {} attempts: {}",
                                   config_.max_retries + 1, last_error));
}

LlmEndpointPolicy::LlmEndpointPolicy(LlmEndpointConfig config) : client_(std::move(config)) {}

std::string LlmEndpointPolicy::act(const std::string& prompt, const StateVector&) {
  return client_.complete({{"user", prompt}}, client_.config().act_temperature);
}

std::vector<std::string> LlmEndpointPolicy::sample_k(const std::string& prompt,
                                                     const StateVector&, int m) {
  if (m < 1) {
    throw DomainError("sample_k requires m >= 1");
  }
  std::vector<std::string> out;
  out.reserve(m);
  for (int i = 0; i < m; ++i) {
    out.push_back(client_.complete({{"user", prompt}}, client_.config().rollout_temperature));
  }
  return out;
}

}  // namespace ranslice
