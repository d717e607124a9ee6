#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "erl/env.hpp"

namespace erl {

struct SamplingParams {
    double temperature = 0.7;
    double top_p = 0.8;
    int top_k = 20;
    int max_tokens = 512;
};

struct Completion {
    std::string text;
    std::vector<std::string> tokens;
    // Absent when the backend does not expose log-probabilities. When
    // present, each entry is the full-distribution log-probability of the
    // corresponding token (temperature-independent).
    std::optional<std::vector<double>> logprobs;
    std::string backend;
};

// Conditioning for one generation step. The key digests system text
// (including any memory/reflection block), the rolling interaction history,
// and the current observation, so any change to those changes the key.
struct PromptContext {
    std::string system_text;
    const std::vector<TraceStep>* history = nullptr;
    std::string observation;

    std::string flat() const;  // canonical concatenation
    std::string key() const;   // 64-bit digest of flat(), hex
};

std::string context_key(std::string_view system_text, const std::vector<TraceStep>* history,
                        std::string_view observation);

class Policy {
public:
    virtual ~Policy() = default;
    virtual std::string backend_name() const = 0;
    virtual bool exposes_logprobs() const = 0;
    // `support` is the finite candidate set for tabular backends (the
    // environment's action space, or reflection candidates); free-form
    // backends ignore it.
    virtual Completion generate(const PromptContext& ctx, const std::vector<std::string>& support,
                                const SamplingParams& sampling, std::uint64_t seed) = 0;
    virtual int concurrency_cap() const { return 1; }
};

// Softmax policy over (context key, token) logits with exact analytic
// gradients. Absent keys read as zero logits, i.e. a uniform prior over the
// support. Sampling applies temperature and top-k/top-p filtering; recorded
// log-probabilities always come from the unfiltered temperature-1 softmax so
// that score() reproduces them.
class TabularPolicy final : public Policy {
public:
    using Logits = std::map<std::string, double>;        // token -> logit
    using ParamTable = std::map<std::string, Logits>;    // key -> logits

    std::string backend_name() const override { return "tabular"; }
    bool exposes_logprobs() const override { return true; }
    Completion generate(const PromptContext& ctx, const std::vector<std::string>& support,
                        const SamplingParams& sampling, std::uint64_t seed) override;

    // Temperature-scaled probabilities in support order; sums to 1.
    std::vector<double> probs(const std::string& key, const std::vector<std::string>& support,
                              double temperature = 1.0) const;
    // Full-distribution log-probability of one token.
    double score_token(const std::string& key, const std::vector<std::string>& support,
                       const std::string& token) const;
    // d log p(token) / d logit(v) = [v == token] - p(v), in support order.
    std::vector<double> score_gradient(const std::string& key,
                                       const std::vector<std::string>& support,
                                       const std::string& token) const;

    double logit(const std::string& key, const std::string& token) const;
    void add_to_logit(const std::string& key, const std::string& token, double delta);

    const ParamTable& parameters() const { return params_; }
    void set_parameters(ParamTable params) { params_ = std::move(params); }
    long update_count() const { return update_count_; }
    void bump_update_count() { ++update_count_; }

private:
    ParamTable params_;
    long update_count_ = 0;
};

// Per-token log-probabilities of a completion under the given context.
std::vector<double> score(const TabularPolicy& policy, const PromptContext& ctx,
                          const std::vector<std::string>& support, const Completion& completion);

// Replays predetermined outputs; for tests and demos.
class ScriptedPolicy final : public Policy {
public:
    explicit ScriptedPolicy(std::vector<std::string> outputs, bool cycle = false)
        : outputs_(std::move(outputs)), cycle_(cycle) {}

    std::string backend_name() const override { return "scripted"; }
    bool exposes_logprobs() const override { return false; }
    Completion generate(const PromptContext& ctx, const std::vector<std::string>& support,
                        const SamplingParams& sampling, std::uint64_t seed) override;

private:
    std::vector<std::string> outputs_;
    std::size_t cursor_ = 0;
    bool cycle_ = false;
};

inline constexpr char kSentinelReflection[] = "RETRY:EXPLORE";

// Deterministic advice from a failed first attempt: "AVOID:(r,c)" for the
// hole the agent entered, "BLOCKED:<action>@(r,c)" for the first wasted
// push, and the RETRY:EXPLORE sentinel otherwise.
std::string scripted_reflector(const EpisodeTrace& trace);

// Reflection conditioning, assembled in the order (x, y1, f1, r1, m).
std::string assemble_reflection_context(std::string_view reflection_prompt,
                                        std::string_view task_block,
                                        std::string_view first_attempt_transcript,
                                        std::string_view feedback, double reward,
                                        std::string_view memory);

// Plain-text transcript of an episode: observation, model output, feedback,
// in order, for every step.
std::string transcript(const EpisodeTrace& trace);

}  // namespace erl
