#pragma once

#include <string>
#include <vector>

#include "erl/policy.hpp"

namespace erl {

struct ChatMessage {
    std::string role;  // system | user | assistant | tool
    std::string content;
};

struct RemoteConfig {
    std::string endpoint;  // e.g. http://host:port
    std::string model;
    std::string api_key;       // optional bearer token
    std::string path = "/v1/chat/completions";
    int max_retries = 3;       // on transport errors and retryable statuses
    int backoff_ms = 250;      // doubled per retry
    int timeout_s = 60;
    int concurrency = 4;       // in-flight request cap
    bool request_logprobs = true;
};

// Chat-completions wire protocol over HTTP. Request body:
// {model, messages:[{role, content}], temperature, top_p, top_k,
//  max_tokens, logprobs}. Tool-call responses are flattened into the
// completion text as the inner function-call JSON so environments can parse
// them uniformly.
class RemoteClient {
public:
    explicit RemoteClient(RemoteConfig config) : config_(std::move(config)) {}

    Completion complete(const std::vector<ChatMessage>& messages,
                        const SamplingParams& sampling) const;

    const RemoteConfig& config() const { return config_; }

private:
    RemoteConfig config_;
};

// Parses one chat-completions response body into a Completion. Exposed for
// tests; throws ProtocolError on malformed payloads.
Completion parse_chat_response(const std::string& body);

class RemotePolicy final : public Policy {
public:
    explicit RemotePolicy(RemoteConfig config) : client_(std::move(config)) {}

    std::string backend_name() const override { return "remote"; }
    bool exposes_logprobs() const override { return true; }  // degrades per response
    Completion generate(const PromptContext& ctx, const std::vector<std::string>& support,
                        const SamplingParams& sampling, std::uint64_t seed) override;
    int concurrency_cap() const override { return client_.config().concurrency; }

private:
    RemoteClient client_;
};

// Turns a prompt context into chat messages: system block, then the history
// as alternating user/assistant turns with feedback prefixed to the
// following user message.
std::vector<ChatMessage> context_to_messages(const PromptContext& ctx);

}  // namespace erl
