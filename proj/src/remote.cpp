#include "erl/remote.hpp"

#include <chrono>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "erl/errors.hpp"

namespace erl {

namespace {

bool retryable_status(int status) {
    return status == 408 || status == 429 || (status >= 500 && status < 600);
}

}  // namespace

Completion parse_chat_response(const std::string& body) {
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded()) throw ProtocolError("remote: response is not JSON");
    if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
        throw ProtocolError("remote: response has no choices");
    const auto& choice = j["choices"][0];
    if (!choice.contains("message")) throw ProtocolError("remote: choice has no message");
    const auto& message = choice["message"];

    Completion out;
    out.backend = "remote";
    if (message.contains("content") && message["content"].is_string())
        out.text = message["content"].get<std::string>();

    // Tool calls are flattened into the text as the inner function-call
    // JSON; environments parse tool calls from completion text uniformly.
    if (message.contains("tool_calls") && message["tool_calls"].is_array()) {
        for (const auto& call : message["tool_calls"]) {
            if (call.contains("function")) {
                if (!out.text.empty()) out.text += "\n";
                out.text += call["function"].dump();
            }
        }
    }

    if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
        choice["logprobs"].contains("content") && choice["logprobs"]["content"].is_array()) {
        std::vector<std::string> tokens;
        std::vector<double> lps;
        for (const auto& entry : choice["logprobs"]["content"]) {
            tokens.push_back(entry.value("token", ""));
            lps.push_back(entry.value("logprob", 0.0));
        }
        out.tokens = std::move(tokens);
        out.logprobs = std::move(lps);
    }
    return out;
}

Completion RemoteClient::complete(const std::vector<ChatMessage>& messages,
                                  const SamplingParams& sampling) const {
    nlohmann::json body{{"model", config_.model},
                        {"temperature", sampling.temperature},
                        {"top_p", sampling.top_p},
                        {"top_k", sampling.top_k},
                        {"max_tokens", sampling.max_tokens}};
    if (config_.request_logprobs) body["logprobs"] = true;
    auto msgs = nlohmann::json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    body["messages"] = std::move(msgs);
    const std::string payload = body.dump();

    httplib::Client client(config_.endpoint);
    client.set_connection_timeout(config_.timeout_s, 0);
    client.set_read_timeout(config_.timeout_s, 0);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    int backoff = config_.backoff_ms;
    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
            backoff *= 2;
        }
        auto res = client.Post(config_.path, headers, payload, "application/json");
        if (!res) {
            last_error = "transport failure: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 200 && res->status < 300) return parse_chat_response(res->body);
        last_error = "http status " + std::to_string(res->status);
        if (!retryable_status(res->status))
            throw ProtocolError("remote: non-retryable " + last_error + ": " + res->body);
    }
    throw TransportError("remote: retries exhausted; last error: " + last_error);
}

std::vector<ChatMessage> context_to_messages(const PromptContext& ctx) {
    std::vector<ChatMessage> messages;
    messages.push_back({"system", ctx.system_text});
    std::string pending;
    if (ctx.history) {
        for (const auto& step : *ctx.history) {
            messages.push_back({"user", pending + step.observation});
            messages.push_back({"assistant", step.model_output});
            pending = step.feedback.empty() ? "" : "Feedback: " + step.feedback + "\n\n";
        }
    }
    messages.push_back({"user", pending + ctx.observation});
    return messages;
}

Completion RemotePolicy::generate(const PromptContext& ctx, const std::vector<std::string>&,
                                  const SamplingParams& sampling, std::uint64_t) {
    return client_.complete(context_to_messages(ctx), sampling);
}

}  // namespace erl
