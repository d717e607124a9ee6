#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace erl {

enum class Split { train, eval };

std::string to_string(Split s);
Split split_from_string(std::string_view s);

// An immutable task specification. `payload` is environment-specific; see
// each environment header for its schema.
struct EnvInstance {
    std::string id;
    std::uint64_t seed = 0;
    Split split = Split::train;
    nlohmann::json payload;
};

struct StepOutcome {
    std::string observation;  // what the agent sees next
    std::string feedback;     // one of the environment's enumerated strings
    double reward = 0.0;      // terminal-only in all shipped environments
    bool terminal = false;
};

// One of the environment's enumerated actions, or parse failure. Parse
// failure is a value, not a fault; environments translate it to their
// invalid-action feedback.
using ParsedAction = std::optional<std::string>;

// Returns the content of the last complete triple-backtick block if it
// matches an action name case-insensitively after trimming.
ParsedAction parse_action(std::string_view model_output,
                          const std::vector<std::string>& action_space);

struct TraceStep {
    std::string observation;
    std::string model_output;
    ParsedAction action;  // nullopt = parse failure
    std::string feedback;
    // Generation bookkeeping for RL. `tokens`/`logprobs` are empty when the
    // backend does not expose them; `support` is the finite candidate set a
    // tabular backend sampled from.
    std::vector<std::string> tokens;
    std::vector<double> logprobs;
    std::vector<std::string> support;
    std::string context_key;
};

struct EpisodeTrace {
    std::string instance_id;
    int attempt_index = 1;  // 1 or 2
    std::vector<TraceStep> steps;
    double final_reward = 0.0;
    bool truncated = false;
    // System block the episode was generated under (may embed a reflection
    // or retry preamble) and the deploy-form block (task conditioning only).
    std::string system_text;
    std::string base_system_text;

    std::string final_feedback() const {
        return steps.empty() ? std::string{} : steps.back().feedback;
    }
};

nlohmann::ordered_json trace_to_json(const EpisodeTrace& trace);
EpisodeTrace trace_from_json(const nlohmann::json& j);

// Mutable episode state for one instance. Strictly sequential; stepping a
// terminal state is a contract violation.
class EnvState {
public:
    virtual ~EnvState() = default;
    virtual std::string observation() const = 0;
    virtual StepOutcome step(std::string_view model_output) = 0;
    // Action parsed by the most recent step(), if the environment has a
    // finite action space.
    virtual ParsedAction last_action() const { return std::nullopt; }
    virtual bool terminal() const = 0;
};

class Environment {
public:
    virtual ~Environment() = default;
    virtual std::string name() const = 0;
    virtual std::string system_prompt() const = 0;
    // Empty for free-form environments (QA).
    virtual std::vector<std::string> action_space() const = 0;
    virtual int step_budget() const = 0;
    // Every feedback string an episode may contain. "" marks an uneventful
    // step with no explicit feedback.
    virtual std::vector<std::string> feedback_set() const = 0;
    virtual std::string budget_feedback() const = 0;
    virtual std::unique_ptr<EnvState> make_state(const EnvInstance& instance) const = 0;
};

class Policy;
struct SamplingParams;

struct EpisodeContext {
    std::string system_text;       // full block: system prompt (+ memory/reflection)
    std::string base_system_text;  // deploy form, no reflection and no memory
};

struct EpisodeOptions {
    int budget = 0;  // 0: use the environment's own budget
    std::uint64_t seed = 0;
    int attempt_index = 1;
};

// observe -> generate -> parse -> step until terminal or budget; appends
// every observation, model output, and feedback to the rolling interaction
// history visible to the policy. TransportError aborts the episode; the
// caller discards it unscored.
EpisodeTrace run_episode(const Environment& env, const EnvInstance& instance, Policy& policy,
                         const EpisodeContext& ctx, const SamplingParams& sampling,
                         const EpisodeOptions& opts);

// line-delimited JSON instance files: {id, seed, split, payload}
std::vector<EnvInstance> load_instances(const std::string& path);
void save_instances(const std::string& path, const std::vector<EnvInstance>& instances);

}  // namespace erl
