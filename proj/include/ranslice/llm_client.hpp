#pragma once

#include <string>
#include <vector>

#include "ranslice/policy.hpp"

namespace ranslice {

/// Remote LLM endpoint configuration. The auth token is read from the named
/// environment variable at request time; no secrets live in config files.
struct LlmEndpointConfig {
  std::string base_url;  // e.g. http://127.0.0.1:8080/v1
  std::string model;
  std::string auth_env_var = "RANSLICE_LLM_TOKEN";
  double act_temperature = 0.0;
  double rollout_temperature = 0.8;
  double timeout_s = 60.0;
  int max_retries = 2;
  int max_tokens = 512;

  void validate() const;
};

/// Minimal chat-completion client: one POST per completion, retrying on
/// transport failures and retryable statuses, returning the first choice's
/// message text verbatim.
class ChatClient {
 public:
  explicit ChatClient(LlmEndpointConfig config);

  struct Message {
    std::string role;
    std::string content;
  };

  std::string complete(const std::vector<Message>& messages, double temperature) const;

  const LlmEndpointConfig& config() const { return config_; }

 private:
  LlmEndpointConfig config_;
  std::string host_;
  std::string path_prefix_;
  int port_ = 80;
};

/// Policy backed by a remote chat-completion endpoint. No exact
/// log-probabilities; action_prob falls back to sampled frequency.
class LlmEndpointPolicy : public Policy {
 public:
  explicit LlmEndpointPolicy(LlmEndpointConfig config);

  std::string name() const override { return "llm:" + client_.config().model; }
  PolicyCapabilities capabilities() const override { return {false, true}; }
  std::string act(const std::string& prompt, const StateVector& state) override;
  std::vector<std::string> sample_k(const std::string& prompt, const StateVector& state,
                                    int m) override;

 private:
  ChatClient client_;
};

}  // namespace ranslice
