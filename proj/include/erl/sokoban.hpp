#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "erl/env.hpp"

namespace erl::sokoban {

// Cell codes: A player, a player on goal, B box, b box on goal, C empty
// goal, E wall, D floor.
inline constexpr char kFeedbackSolved[] = "The agent solved the puzzle (all boxes on goals).";
inline constexpr char kFeedbackMoved[] = "The agent moved or pushed a box; puzzle not solved yet.";
inline constexpr char kFeedbackBlocked[] =
    "The agent did not move (likely hit a wall or tried to push into a blocked space).";
inline constexpr char kFeedbackMaxStep[] = "Hit the max step limit";
inline constexpr int kStepBudget = 8;

struct SokobanInstance {
    int n = 0;  // side length; walls are the border ring, interior is open floor
    int goal_r = 0, goal_c = 0;
    int box_r = 0, box_c = 0;
    int player_r = 0, player_c = 0;
    int min_solution = 0;  // BFS optimum, in [1, 8] for generated instances

    bool wall(int r, int c) const { return r <= 0 || c <= 0 || r >= n - 1 || c >= n - 1; }
};

struct SokobanState {
    const SokobanInstance* instance = nullptr;
    int player_r = 0, player_c = 0;
    int box_r = 0, box_c = 0;
    int steps_taken = 0;
    bool done = false;
};

// Samples n uniformly from [6, 8] and goal/box/player as distinct interior
// cells; accepts iff the BFS optimum over player-box states is in [1, 8].
SokobanInstance generate_sokoban(std::uint64_t seed);

SokobanState initial_state(const SokobanInstance& instance);

// Push mechanics: the player may push the box only when the cell beyond it
// is free; blocked moves change nothing. Solve is checked before the
// max-step cutoff on the final budgeted action.
StepOutcome sokoban_step(SokobanState& state, const ParsedAction& action);

std::string render_sokoban(const SokobanState& state);

// Optimal move count by BFS over (player, box) states, or nullopt when the
// layout is unsolvable (e.g. box dead-locked in a non-goal corner).
std::optional<int> sokoban_min_solution(const SokobanInstance& instance);

// The optimal plan itself, for replay checks.
std::optional<std::vector<std::string>> sokoban_solve(const SokobanInstance& instance);

nlohmann::ordered_json sokoban_payload(const SokobanInstance& instance);
SokobanInstance sokoban_from_payload(const nlohmann::json& payload);

class SokobanEnv final : public Environment {
public:
    std::string name() const override { return "sokoban"; }
    std::string system_prompt() const override;
    std::vector<std::string> action_space() const override;
    int step_budget() const override { return kStepBudget; }
    std::vector<std::string> feedback_set() const override;
    std::string budget_feedback() const override { return kFeedbackMaxStep; }
    std::unique_ptr<EnvState> make_state(const EnvInstance& instance) const override;
};

}  // namespace erl::sokoban
