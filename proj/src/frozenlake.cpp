#include "erl/frozenlake.hpp"

#include <array>
#include <queue>
#include <sstream>

#include "erl/errors.hpp"
#include "erl/prompts.hpp"
#include "erl/rng.hpp"

namespace erl::frozenlake {

namespace {

constexpr int kRejectionCap = 10000;

struct Delta {
    const char* name;
    int dr, dc;
};
constexpr std::array<Delta, 4> kDeltas{{{"Up", -1, 0}, {"Down", 1, 0}, {"Left", 0, -1}, {"Right", 0, 1}}};

const Delta* find_delta(const std::string& action) {
    for (const auto& d : kDeltas) {
        if (action == d.name) return &d;
    }
    return nullptr;
}

}  // namespace

LakeInstance generate_lake(std::uint64_t seed, const LakeGenRanges& ranges) {
    rng::SplitMix64 g(seed);
    LakeInstance inst;
    inst.n = g.next_int(ranges.n_lo, ranges.n_hi);
    inst.frozen_prob = g.next_real(ranges.p_lo, ranges.p_hi);
    const int cells = inst.n * inst.n;
    const int start = g.next_int(0, cells - 1);
    int goal = g.next_int(0, cells - 2);
    if (goal >= start) ++goal;  // distinct uniform pair
    inst.start_row = start / inst.n;
    inst.start_col = start % inst.n;
    inst.goal_row = goal / inst.n;
    inst.goal_col = goal % inst.n;

    for (int attempt = 0; attempt < kRejectionCap; ++attempt) {
        inst.cells.assign(static_cast<std::size_t>(cells), 'D');
        for (int i = 0; i < cells; ++i) {
            if (i == start) {
                inst.cells[i] = 'A';
            } else if (i == goal) {
                inst.cells[i] = 'B';
            } else {
                inst.cells[i] = g.next_double() < inst.frozen_prob ? 'D' : 'C';
            }
        }
        if (lake_has_path(inst)) return inst;
    }
    throw GenerationError("frozenlake: no solvable layout within rejection cap", seed);
}

LakeState initial_state(const LakeInstance& instance) {
    return LakeState{&instance, instance.start_row, instance.start_col, 0, false};
}

StepOutcome lake_step(LakeState& state, const ParsedAction& action) {
    if (state.done) throw std::logic_error("lake_step: state is terminal");
    const LakeInstance& inst = *state.instance;
    ++state.steps_taken;

    StepOutcome out;
    bool moved = false;
    char entered = 0;
    if (action) {
        const Delta* d = find_delta(*action);
        const int nr = state.row + d->dr;
        const int nc = state.col + d->dc;
        if (inst.in_bounds(nr, nc)) {
            moved = true;
            entered = inst.cell(nr, nc);
            state.row = nr;
            state.col = nc;
        }
    }

    // Terminal tile effects take precedence over the max-step cutoff.
    if (moved && entered == 'B') {
        state.done = true;
        out.reward = 1.0;
        out.terminal = true;
        out.feedback = kFeedbackGoal;
    } else if (moved && entered == 'C') {
        state.done = true;
        out.terminal = true;
        out.feedback = kFeedbackHole;
    } else if (state.steps_taken >= kStepBudget) {
        state.done = true;
        out.terminal = true;
        out.feedback = kFeedbackMaxStep;
    } else if (!moved) {
        out.feedback = kFeedbackInvalid;
    }
    if (!out.terminal) out.observation = render_lake(state);
    return out;
}

std::string render_lake(const LakeState& state) {
    const LakeInstance& inst = *state.instance;
    std::string out;
    for (int r = 0; r < inst.n; ++r) {
        for (int c = 0; c < inst.n; ++c) {
            char ch;
            if (r == state.row && c == state.col) {
                ch = 'A';  // agent occludes the cell it stands on
            } else {
                ch = inst.cell(r, c);
                if (ch == 'A') ch = 'D';  // vacated start tile is safe ice
            }
            out += ch;
            if (c + 1 < inst.n) out += ' ';
        }
        if (r + 1 < inst.n) out += '\n';
    }
    return out;
}

bool lake_has_path(const LakeInstance& instance) {
    const int n = instance.n;
    std::vector<char> seen(static_cast<std::size_t>(n) * n, 0);
    std::queue<int> frontier;
    const int start = instance.start_row * n + instance.start_col;
    const int goal = instance.goal_row * n + instance.goal_col;
    frontier.push(start);
    seen[start] = 1;
    while (!frontier.empty()) {
        const int cur = frontier.front();
        frontier.pop();
        if (cur == goal) return true;
        const int r = cur / n, c = cur % n;
        for (const auto& d : kDeltas) {
            const int nr = r + d.dr, nc = c + d.dc;
            if (!instance.in_bounds(nr, nc)) continue;
            const int idx = nr * n + nc;
            if (seen[idx] || instance.cell(nr, nc) == 'C') continue;
            seen[idx] = 1;
            frontier.push(idx);
        }
    }
    return false;
}

nlohmann::ordered_json lake_payload(const LakeInstance& instance) {
    return nlohmann::ordered_json{{"n", instance.n},
                                  {"cells", instance.cells},
                                  {"start", {instance.start_row, instance.start_col}},
                                  {"goal", {instance.goal_row, instance.goal_col}},
                                  {"frozen_prob", instance.frozen_prob}};
}

LakeInstance lake_from_payload(const nlohmann::json& payload) try {
    LakeInstance inst;
    inst.n = payload.at("n").get<int>();
    inst.cells = payload.at("cells").get<std::string>();
    inst.start_row = payload.at("start")[0].get<int>();
    inst.start_col = payload.at("start")[1].get<int>();
    inst.goal_row = payload.at("goal")[0].get<int>();
    inst.goal_col = payload.at("goal")[1].get<int>();
    inst.frozen_prob = payload.at("frozen_prob").get<double>();
    if (inst.cells.size() != static_cast<std::size_t>(inst.n) * inst.n)
        throw Error("frozenlake payload: cells length mismatch");
    return inst;
} catch (const nlohmann::json::exception& e) {
    throw Error(std::string("frozenlake payload: ") + e.what());
}

namespace {

class LakeEnvState final : public EnvState {
public:
    LakeEnvState(LakeInstance instance, std::vector<std::string> actions)
        : instance_(std::move(instance)), actions_(std::move(actions)) {
        state_ = initial_state(instance_);
    }

    std::string observation() const override {
        std::ostringstream os;
        os << "Current Observation (" << state_.steps_taken << "):\n"
           << render_lake(state_) << "\n\n"
           << "You have not achieved the goal yet. Please give the next action.\n\n"
           << "## Action space\nUp | Down | Left | Right\n\n"
           << "## Output requirement\nReturn reasoning in <reason>...</reason> and final action "
              "in triple backticks, e.g., ```Right```.";
        return os.str();
    }

    StepOutcome step(std::string_view model_output) override {
        last_action_ = parse_action(model_output, actions_);
        return lake_step(state_, last_action_);
    }

    ParsedAction last_action() const override { return last_action_; }
    bool terminal() const override { return state_.done; }

private:
    LakeInstance instance_;
    std::vector<std::string> actions_;
    LakeState state_;
    ParsedAction last_action_;
};

}  // namespace

std::string LakeEnv::system_prompt() const { return std::string(prompts::grid_system()); }

std::vector<std::string> LakeEnv::action_space() const { return {"Up", "Down", "Left", "Right"}; }

std::vector<std::string> LakeEnv::feedback_set() const {
    return {kFeedbackGoal, kFeedbackHole, kFeedbackMaxStep, kFeedbackInvalid, ""};
}

std::unique_ptr<EnvState> LakeEnv::make_state(const EnvInstance& instance) const {
    return std::make_unique<LakeEnvState>(lake_from_payload(instance.payload), action_space());
}

}  // namespace erl::frozenlake
