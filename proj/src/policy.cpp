#include "erl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "erl/errors.hpp"
#include "erl/frozenlake.hpp"
#include "erl/rng.hpp"
#include "erl/sokoban.hpp"

namespace erl {

namespace {

constexpr char kRecordSep = '\x1e';

std::string history_text(const std::vector<TraceStep>* history) {
    if (!history) return {};
    std::string out;
    for (const auto& step : *history) {
        out += step.observation;
        out += '\n';
        out += step.model_output;
        out += '\n';
        if (!step.feedback.empty()) {
            out += "Feedback: ";
            out += step.feedback;
            out += '\n';
        }
        out += '\n';
    }
    return out;
}

}  // namespace

std::string PromptContext::flat() const {
    std::string out = system_text;
    out += kRecordSep;
    out += history_text(history);
    out += kRecordSep;
    out += observation;
    return out;
}

std::string PromptContext::key() const { return rng::to_hex(rng::fnv1a64(flat())); }

std::string context_key(std::string_view system_text, const std::vector<TraceStep>* history,
                        std::string_view observation) {
    PromptContext ctx{std::string(system_text), history, std::string(observation)};
    return ctx.key();
}

double TabularPolicy::logit(const std::string& key, const std::string& token) const {
    const auto kit = params_.find(key);
    if (kit == params_.end()) return 0.0;
    const auto tit = kit->second.find(token);
    return tit == kit->second.end() ? 0.0 : tit->second;
}

void TabularPolicy::add_to_logit(const std::string& key, const std::string& token, double delta) {
    params_[key][token] += delta;
}

std::vector<double> TabularPolicy::probs(const std::string& key,
                                         const std::vector<std::string>& support,
                                         double temperature) const {
    if (support.empty()) throw Error("tabular policy: empty support");
    std::vector<double> z(support.size());
    for (std::size_t i = 0; i < support.size(); ++i) z[i] = logit(key, support[i]);
    if (temperature > 0.0 && temperature != 1.0) {
        for (auto& v : z) v /= temperature;
    }
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) {
        v = std::exp(v - zmax);
        sum += v;
    }
    for (auto& v : z) v /= sum;
    return z;
}

double TabularPolicy::score_token(const std::string& key, const std::vector<std::string>& support,
                                  const std::string& token) const {
    std::vector<double> z(support.size());
    std::size_t idx = support.size();
    for (std::size_t i = 0; i < support.size(); ++i) {
        z[i] = logit(key, support[i]);
        if (support[i] == token) idx = i;
    }
    if (idx == support.size()) throw Error("score: token not in support: " + token);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (const double v : z) sum += std::exp(v - zmax);
    return z[idx] - zmax - std::log(sum);
}

std::vector<double> TabularPolicy::score_gradient(const std::string& key,
                                                  const std::vector<std::string>& support,
                                                  const std::string& token) const {
    const auto p = probs(key, support);
    std::vector<double> grad(support.size());
    for (std::size_t i = 0; i < support.size(); ++i) {
        grad[i] = (support[i] == token ? 1.0 : 0.0) - p[i];
    }
    return grad;
}

Completion TabularPolicy::generate(const PromptContext& ctx,
                                   const std::vector<std::string>& support,
                                   const SamplingParams& sampling, std::uint64_t seed) {
    if (support.empty())
        throw Error("tabular policy requires a finite action vocabulary");
    const std::string key = ctx.key();

    std::size_t chosen;
    if (sampling.temperature <= 0.0) {
        // Greedy limit: argmax, first index on ties.
        const auto p = probs(key, support, 1.0);
        chosen = static_cast<std::size_t>(
            std::distance(p.begin(), std::max_element(p.begin(), p.end())));
    } else {
        auto p = probs(key, support, sampling.temperature);
        // top-k then nucleus filtering over (prob desc, index asc).
        std::vector<std::size_t> order(p.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
        std::size_t keep = order.size();
        if (sampling.top_k > 0) keep = std::min<std::size_t>(keep, sampling.top_k);
        if (sampling.top_p > 0.0 && sampling.top_p < 1.0) {
            double cum = 0.0;
            for (std::size_t i = 0; i < keep; ++i) {
                cum += p[order[i]];
                if (cum >= sampling.top_p) {
                    keep = i + 1;
                    break;
                }
            }
        }
        double mass = 0.0;
        for (std::size_t i = 0; i < keep; ++i) mass += p[order[i]];
        rng::SplitMix64 g(seed);
        const double u = g.next_double() * mass;
        double cum = 0.0;
        chosen = order[keep - 1];
        for (std::size_t i = 0; i < keep; ++i) {
            cum += p[order[i]];
            if (u < cum) {
                chosen = order[i];
                break;
            }
        }
    }

    Completion out;
    out.backend = backend_name();
    out.tokens = {support[chosen]};
    // Recorded log-probability comes from the unfiltered temperature-1
    // distribution so score() reproduces it exactly.
    out.logprobs = std::vector<double>{score_token(key, support, support[chosen])};
    out.text = "```" + support[chosen] + "```";
    return out;
}

std::vector<double> score(const TabularPolicy& policy, const PromptContext& ctx,
                          const std::vector<std::string>& support, const Completion& completion) {
    const std::string key = ctx.key();
    std::vector<double> out;
    out.reserve(completion.tokens.size());
    for (const auto& tok : completion.tokens) out.push_back(policy.score_token(key, support, tok));
    return out;
}

Completion ScriptedPolicy::generate(const PromptContext&, const std::vector<std::string>&,
                                    const SamplingParams&, std::uint64_t) {
    Completion out;
    out.backend = backend_name();
    if (outputs_.empty()) return out;
    std::size_t idx = cursor_;
    if (idx >= outputs_.size()) idx = cycle_ ? cursor_ % outputs_.size() : outputs_.size() - 1;
    ++cursor_;
    out.text = outputs_[idx];
    return out;
}

namespace {

struct GridPos {
    int row = -1, col = -1;
    bool found() const { return row >= 0; }
};

// Locates the agent symbol in the rendered grid embedded in an observation
// block ("Current Observation (k):" / "Current Board (k):" header).
GridPos find_agent(const std::string& observation) {
    std::istringstream is(observation);
    std::string line;
    bool in_grid = false;
    int row = 0;
    while (std::getline(is, line)) {
        if (!in_grid) {
            if (line.rfind("Current ", 0) == 0 && line.find(':') != std::string::npos) in_grid = true;
            continue;
        }
        if (line.empty()) break;
        int col = 0;
        for (std::size_t i = 0; i < line.size(); ++i) {
            const char ch = line[i];
            if (ch == ' ') continue;
            if (ch == 'A' || ch == 'a') return {row, col};
            ++col;
        }
        ++row;
    }
    return {};
}

std::string coord(int r, int c) {
    return "(" + std::to_string(r) + "," + std::to_string(c) + ")";
}

}  // namespace

std::string scripted_reflector(const EpisodeTrace& trace) {
    if (trace.steps.empty()) return kSentinelReflection;

    const TraceStep& last = trace.steps.back();
    if (last.feedback == frozenlake::kFeedbackHole && last.action) {
        const GridPos agent = find_agent(last.observation);
        if (agent.found()) {
            int dr = 0, dc = 0;
            if (*last.action == "Up") dr = -1;
            else if (*last.action == "Down") dr = 1;
            else if (*last.action == "Left") dc = -1;
            else if (*last.action == "Right") dc = 1;
            return "AVOID:" + coord(agent.row + dr, agent.col + dc);
        }
    }
    for (const auto& step : trace.steps) {
        if (step.feedback == sokoban::kFeedbackBlocked && step.action) {
            const GridPos agent = find_agent(step.observation);
            if (agent.found()) return "BLOCKED:" + *step.action + "@" + coord(agent.row, agent.col);
        }
    }
    return kSentinelReflection;
}

std::string assemble_reflection_context(std::string_view reflection_prompt,
                                        std::string_view task_block,
                                        std::string_view first_attempt_transcript,
                                        std::string_view feedback, double reward,
                                        std::string_view memory) {
    std::ostringstream os;
    os << reflection_prompt << kRecordSep;
    os << "## Task\n" << task_block << kRecordSep;
    os << "## First Attempt\n" << first_attempt_transcript << kRecordSep;
    os << "## Feedback\n" << feedback << kRecordSep;
    os << "## Reward\n" << reward << kRecordSep;
    os << "## Memory\n" << (memory.empty() ? std::string_view("(empty)") : memory);
    return os.str();
}

std::string transcript(const EpisodeTrace& trace) { return history_text(&trace.steps); }

}  // namespace erl
