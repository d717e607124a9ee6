#include "erl/sokoban.hpp"

#include <array>
#include <queue>
#include <sstream>
#include <unordered_map>

#include "erl/errors.hpp"
#include "erl/prompts.hpp"
#include "erl/rng.hpp"

namespace erl::sokoban {

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

struct MoveResult {
    bool moved = false;
    int player_r, player_c, box_r, box_c;
};

// Pure transition used by both the live step and the BFS solver.
MoveResult try_move(const SokobanInstance& inst, int pr, int pc, int br, int bc, const Delta& d) {
    MoveResult r{false, pr, pc, br, bc};
    const int tr = pr + d.dr, tc = pc + d.dc;
    if (inst.wall(tr, tc)) return r;
    if (tr == br && tc == bc) {
        const int yr = br + d.dr, yc = bc + d.dc;
        if (inst.wall(yr, yc)) return r;  // push into a blocked space
        r.box_r = yr;
        r.box_c = yc;
    }
    r.player_r = tr;
    r.player_c = tc;
    r.moved = true;
    return r;
}

int pack(const SokobanInstance& inst, int pr, int pc, int br, int bc) {
    const int n = inst.n;
    return ((pr * n + pc) * n + br) * n + bc;
}

}  // namespace

std::optional<std::vector<std::string>> sokoban_solve(const SokobanInstance& instance) {
    if (instance.box_r == instance.goal_r && instance.box_c == instance.goal_c)
        return std::vector<std::string>{};
    struct Node {
        int pr, pc, br, bc;
    };
    std::unordered_map<int, std::pair<int, int>> parent;  // packed -> (packed prev, action)
    std::queue<Node> frontier;
    const int start = pack(instance, instance.player_r, instance.player_c, instance.box_r, instance.box_c);
    parent[start] = {-1, -1};
    frontier.push({instance.player_r, instance.player_c, instance.box_r, instance.box_c});
    while (!frontier.empty()) {
        const Node cur = frontier.front();
        frontier.pop();
        const int cur_key = pack(instance, cur.pr, cur.pc, cur.br, cur.bc);
        for (int a = 0; a < 4; ++a) {
            const MoveResult mv = try_move(instance, cur.pr, cur.pc, cur.br, cur.bc, kDeltas[a]);
            if (!mv.moved) continue;
            const int key = pack(instance, mv.player_r, mv.player_c, mv.box_r, mv.box_c);
            if (parent.count(key)) continue;
            parent[key] = {cur_key, a};
            if (mv.box_r == instance.goal_r && mv.box_c == instance.goal_c) {
                std::vector<std::string> plan;
                int at = key;
                while (parent[at].first != -1) {
                    plan.push_back(kDeltas[parent[at].second].name);
                    at = parent[at].first;
                }
                std::reverse(plan.begin(), plan.end());
                return plan;
            }
            frontier.push({mv.player_r, mv.player_c, mv.box_r, mv.box_c});
        }
    }
    return std::nullopt;
}

std::optional<int> sokoban_min_solution(const SokobanInstance& instance) {
    const auto plan = sokoban_solve(instance);
    if (!plan) return std::nullopt;
    return static_cast<int>(plan->size());
}

SokobanInstance generate_sokoban(std::uint64_t seed) {
    rng::SplitMix64 g(seed);
    SokobanInstance inst;
    inst.n = g.next_int(6, 8);
    const int side = inst.n - 2;
    const int interior = side * side;

    const auto to_rc = [&](int idx, int& r, int& c) {
        r = 1 + idx / side;
        c = 1 + idx % side;
    };

    for (int attempt = 0; attempt < kRejectionCap; ++attempt) {
        // Three distinct interior cells, uniform without replacement.
        const int goal = g.next_int(0, interior - 1);
        int box = g.next_int(0, interior - 2);
        if (box >= goal) ++box;
        int player = g.next_int(0, interior - 3);
        const int lo = std::min(goal, box), hi = std::max(goal, box);
        if (player >= lo) ++player;
        if (player >= hi) ++player;

        to_rc(goal, inst.goal_r, inst.goal_c);
        to_rc(box, inst.box_r, inst.box_c);
        to_rc(player, inst.player_r, inst.player_c);

        const auto optimum = sokoban_min_solution(inst);
        if (optimum && *optimum >= 1 && *optimum <= 8) {
            inst.min_solution = *optimum;
            return inst;
        }
    }
    throw GenerationError("sokoban: no acceptable layout within rejection cap", seed);
}

SokobanState initial_state(const SokobanInstance& instance) {
    return SokobanState{&instance, instance.player_r, instance.player_c,
                        instance.box_r, instance.box_c, 0, false};
}

StepOutcome sokoban_step(SokobanState& state, const ParsedAction& action) {
    if (state.done) throw std::logic_error("sokoban_step: state is terminal");
    const SokobanInstance& inst = *state.instance;
    ++state.steps_taken;

    bool moved = false;
    if (action) {
        const Delta* d = find_delta(*action);
        const MoveResult mv =
            try_move(inst, state.player_r, state.player_c, state.box_r, state.box_c, *d);
        if (mv.moved) {
            state.player_r = mv.player_r;
            state.player_c = mv.player_c;
            state.box_r = mv.box_r;
            state.box_c = mv.box_c;
            moved = true;
        }
    }

    StepOutcome out;
    const bool solved = state.box_r == inst.goal_r && state.box_c == inst.goal_c;
    if (moved && solved) {
        state.done = true;
        out.reward = 1.0;
        out.terminal = true;
        out.feedback = kFeedbackSolved;
    } else if (state.steps_taken >= kStepBudget) {
        state.done = true;
        out.terminal = true;
        out.feedback = kFeedbackMaxStep;
    } else {
        out.feedback = moved ? kFeedbackMoved : kFeedbackBlocked;
    }
    if (!out.terminal) out.observation = render_sokoban(state);
    return out;
}

std::string render_sokoban(const SokobanState& state) {
    const SokobanInstance& inst = *state.instance;
    std::string out;
    for (int r = 0; r < inst.n; ++r) {
        for (int c = 0; c < inst.n; ++c) {
            char ch;
            const bool on_goal = r == inst.goal_r && c == inst.goal_c;
            if (inst.wall(r, c)) {
                ch = 'E';
            } else if (r == state.player_r && c == state.player_c) {
                ch = on_goal ? 'a' : 'A';
            } else if (r == state.box_r && c == state.box_c) {
                ch = on_goal ? 'b' : 'B';
            } else if (on_goal) {
                ch = 'C';
            } else {
                ch = 'D';
            }
            out += ch;
            if (c + 1 < inst.n) out += ' ';
        }
        if (r + 1 < inst.n) out += '\n';
    }
    return out;
}

nlohmann::ordered_json sokoban_payload(const SokobanInstance& instance) {
    return nlohmann::ordered_json{{"n", instance.n},
                                  {"goal", {instance.goal_r, instance.goal_c}},
                                  {"box", {instance.box_r, instance.box_c}},
                                  {"player", {instance.player_r, instance.player_c}},
                                  {"min_solution", instance.min_solution}};
}

SokobanInstance sokoban_from_payload(const nlohmann::json& payload) try {
    SokobanInstance inst;
    inst.n = payload.at("n").get<int>();
    inst.goal_r = payload.at("goal")[0].get<int>();
    inst.goal_c = payload.at("goal")[1].get<int>();
    inst.box_r = payload.at("box")[0].get<int>();
    inst.box_c = payload.at("box")[1].get<int>();
    inst.player_r = payload.at("player")[0].get<int>();
    inst.player_c = payload.at("player")[1].get<int>();
    inst.min_solution = payload.value("min_solution", 0);
    return inst;
} catch (const nlohmann::json::exception& e) {
    throw Error(std::string("sokoban payload: ") + e.what());
}

namespace {

class SokobanEnvState final : public EnvState {
public:
    SokobanEnvState(SokobanInstance instance, std::vector<std::string> actions)
        : instance_(std::move(instance)), actions_(std::move(actions)) {
        state_ = initial_state(instance_);
    }

    std::string observation() const override {
        std::ostringstream os;
        os << "Current Board (" << state_.steps_taken << "):\n"
           << render_sokoban(state_) << "\n\n"
           << "Puzzle not solved yet. Provide the next move.\n\n"
           << "## Action space\nUp | Down | Left | Right\n\n"
           << "## Output requirement\nReturn reasoning in <reason>...</reason> and final action "
              "in triple backticks, e.g., ```Right```.";
        return os.str();
    }

    StepOutcome step(std::string_view model_output) override {
        last_action_ = parse_action(model_output, actions_);
        return sokoban_step(state_, last_action_);
    }

    ParsedAction last_action() const override { return last_action_; }
    bool terminal() const override { return state_.done; }

private:
    SokobanInstance instance_;
    std::vector<std::string> actions_;
    SokobanState state_;
    ParsedAction last_action_;
};

}  // namespace

std::string SokobanEnv::system_prompt() const { return std::string(prompts::grid_system()); }

std::vector<std::string> SokobanEnv::action_space() const {
    return {"Up", "Down", "Left", "Right"};
}

std::vector<std::string> SokobanEnv::feedback_set() const {
    return {kFeedbackSolved, kFeedbackMoved, kFeedbackBlocked, kFeedbackMaxStep, ""};
}

std::unique_ptr<EnvState> SokobanEnv::make_state(const EnvInstance& instance) const {
    return std::make_unique<SokobanEnvState>(sokoban_from_payload(instance.payload),
                                             action_space());
}

}  // namespace erl::sokoban
