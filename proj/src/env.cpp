#include "erl/env.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "erl/errors.hpp"
#include "erl/policy.hpp"
#include "erl/rng.hpp"

namespace erl {

std::string to_string(Split s) { return s == Split::train ? "train" : "eval"; }

Split split_from_string(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "eval") return Split::eval;
    throw Error("unknown split: " + std::string(s));
}

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

bool iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(a[i])) !=
            std::tolower(static_cast<unsigned char>(b[i])))
            return false;
    }
    return true;
}

}  // namespace

ParsedAction parse_action(std::string_view model_output,
                          const std::vector<std::string>& action_space) {
    // Content of the last complete ``` ... ``` pair.
    constexpr std::string_view kFence = "```";
    std::optional<std::string> last_block;
    std::size_t pos = 0;
    for (;;) {
        const std::size_t open = model_output.find(kFence, pos);
        if (open == std::string_view::npos) break;
        const std::size_t start = open + kFence.size();
        const std::size_t close = model_output.find(kFence, start);
        if (close == std::string_view::npos) break;
        last_block = std::string(model_output.substr(start, close - start));
        pos = close + kFence.size();
    }
    if (!last_block) return std::nullopt;
    const std::string content = trim(*last_block);
    for (const auto& action : action_space) {
        if (iequals(content, action)) return action;
    }
    return std::nullopt;
}

nlohmann::ordered_json trace_to_json(const EpisodeTrace& trace) {
    nlohmann::ordered_json steps = nlohmann::ordered_json::array();
    for (const auto& s : trace.steps) {
        nlohmann::ordered_json js{{"observation", s.observation},
                                  {"model_output", s.model_output},
                                  {"parse_failure", !s.action.has_value()},
                                  {"feedback", s.feedback}};
        if (s.action) js["action"] = *s.action;
        if (!s.tokens.empty()) js["tokens"] = s.tokens;
        if (!s.logprobs.empty()) js["logprobs"] = s.logprobs;
        if (!s.support.empty()) js["support"] = s.support;
        if (!s.context_key.empty()) js["context_key"] = s.context_key;
        steps.push_back(std::move(js));
    }
    return nlohmann::ordered_json{{"instance_id", trace.instance_id},
                                  {"attempt_index", trace.attempt_index},
                                  {"final_reward", trace.final_reward},
                                  {"truncated", trace.truncated},
                                  {"system_text", trace.system_text},
                                  {"base_system_text", trace.base_system_text},
                                  {"steps", std::move(steps)}};
}

EpisodeTrace trace_from_json(const nlohmann::json& j) {
    EpisodeTrace trace;
    trace.instance_id = j.at("instance_id").get<std::string>();
    trace.attempt_index = j.at("attempt_index").get<int>();
    trace.final_reward = j.at("final_reward").get<double>();
    trace.truncated = j.at("truncated").get<bool>();
    trace.system_text = j.value("system_text", "");
    trace.base_system_text = j.value("base_system_text", "");
    for (const auto& js : j.at("steps")) {
        TraceStep s;
        s.observation = js.at("observation").get<std::string>();
        s.model_output = js.at("model_output").get<std::string>();
        s.feedback = js.at("feedback").get<std::string>();
        if (js.contains("action")) s.action = js["action"].get<std::string>();
        if (js.contains("tokens")) s.tokens = js["tokens"].get<std::vector<std::string>>();
        if (js.contains("logprobs")) s.logprobs = js["logprobs"].get<std::vector<double>>();
        if (js.contains("support")) s.support = js["support"].get<std::vector<std::string>>();
        s.context_key = js.value("context_key", "");
        trace.steps.push_back(std::move(s));
    }
    return trace;
}

EpisodeTrace run_episode(const Environment& env, const EnvInstance& instance, Policy& policy,
                         const EpisodeContext& ctx, const SamplingParams& sampling,
                         const EpisodeOptions& opts) {
    const int budget = opts.budget > 0 ? opts.budget : env.step_budget();
    if (budget < 1) throw Error("run_episode: budget must be >= 1");

    EpisodeTrace trace;
    trace.instance_id = instance.id;
    trace.attempt_index = opts.attempt_index;
    trace.system_text = ctx.system_text;
    trace.base_system_text =
        ctx.base_system_text.empty() ? env.system_prompt() : ctx.base_system_text;

    auto state = env.make_state(instance);
    const auto actions = env.action_space();

    for (int step_idx = 0; step_idx < budget && !state->terminal(); ++step_idx) {
        TraceStep record;
        record.observation = state->observation();

        PromptContext prompt{ctx.system_text, &trace.steps, record.observation};
        const std::uint64_t step_seed = rng::mix(opts.seed, static_cast<std::uint64_t>(step_idx));
        const Completion completion = policy.generate(prompt, actions, sampling, step_seed);

        record.model_output = completion.text;
        record.tokens = completion.tokens;
        if (completion.logprobs) record.logprobs = *completion.logprobs;
        if (policy.backend_name() == "tabular") record.support = actions;
        record.context_key = prompt.key();

        const StepOutcome outcome = state->step(completion.text);
        record.action = state->last_action();
        record.feedback = outcome.feedback;
        trace.steps.push_back(std::move(record));
        trace.final_reward = outcome.reward;

        if (outcome.terminal) {
            trace.truncated = outcome.feedback == env.budget_feedback();
            return trace;
        }
    }
    // Orchestrator budget exhausted before the environment terminated.
    if (!state->terminal()) trace.truncated = true;
    return trace;
}

std::vector<EnvInstance> load_instances(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open instance file: " + path);
    std::vector<EnvInstance> out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        EnvInstance inst;
        inst.id = j.at("id").get<std::string>();
        inst.seed = j.at("seed").get<std::uint64_t>();
        inst.split = split_from_string(j.at("split").get<std::string>());
        if (j.contains("payload")) {
            inst.payload = j["payload"];
        } else {
            // QA files are flat {id, seed, question, gold_answer, split}.
            inst.payload = j;
            inst.payload.erase("id");
            inst.payload.erase("seed");
            inst.payload.erase("split");
        }
        out.push_back(std::move(inst));
    }
    return out;
}

void save_instances(const std::string& path, const std::vector<EnvInstance>& instances) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write instance file: " + path);
    for (const auto& inst : instances) {
        nlohmann::ordered_json j{{"id", inst.id},
                                 {"seed", inst.seed},
                                 {"split", to_string(inst.split)},
                                 {"payload", inst.payload}};
        out << j.dump() << "\n";
    }
}

}  // namespace erl
