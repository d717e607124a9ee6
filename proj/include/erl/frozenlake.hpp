#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "erl/env.hpp"

namespace erl::frozenlake {

// Cell codes: A agent/start, B goal, C hole, D safe frozen tile.
inline constexpr char kFeedbackGoal[] = "The agent reached the goal";
inline constexpr char kFeedbackHole[] = "The agent fell into the hole";
inline constexpr char kFeedbackMaxStep[] = "Hit the max step limit";
inline constexpr char kFeedbackInvalid[] = "No valid actions were recorded.";
inline constexpr int kStepBudget = 8;

struct LakeInstance {
    int n = 0;
    std::string cells;  // n*n row-major codes, exactly one A and one B
    int start_row = 0, start_col = 0;
    int goal_row = 0, goal_col = 0;
    double frozen_prob = 0.0;

    char cell(int r, int c) const { return cells[static_cast<std::size_t>(r) * n + c]; }
    bool in_bounds(int r, int c) const { return r >= 0 && r < n && c >= 0 && c < n; }
};

struct LakeState {
    const LakeInstance* instance = nullptr;
    int row = 0, col = 0;
    int steps_taken = 0;
    bool done = false;
};

struct LakeGenRanges {
    int n_lo = 2, n_hi = 9;
    double p_lo = 0.6, p_hi = 0.85;
};

// Samples n and the frozen probability uniformly, start/goal as distinct
// uniform cells, then assigns each remaining cell frozen-vs-hole and
// rejection-resamples the tile layout until a start->goal path exists.
// Deterministic in seed; throws GenerationError after 10,000 rejections.
LakeInstance generate_lake(std::uint64_t seed, const LakeGenRanges& ranges = {});

LakeState initial_state(const LakeInstance& instance);

// Deterministic transition. Terminal tile effects are evaluated before the
// max-step cutoff on the final budgeted action.
StepOutcome lake_step(LakeState& state, const ParsedAction& action);

// n rows of space-separated codes; the agent occludes the cell it stands on.
std::string render_lake(const LakeState& state);

// BFS over non-hole cells, 4-connectivity.
bool lake_has_path(const LakeInstance& instance);

nlohmann::ordered_json lake_payload(const LakeInstance& instance);
LakeInstance lake_from_payload(const nlohmann::json& payload);

class LakeEnv final : public Environment {
public:
    std::string name() const override { return "frozenlake"; }
    std::string system_prompt() const override;
    std::vector<std::string> action_space() const override;
    int step_budget() const override { return kStepBudget; }
    std::vector<std::string> feedback_set() const override;
    std::string budget_feedback() const override { return kFeedbackMaxStep; }
    std::unique_ptr<EnvState> make_state(const EnvInstance& instance) const override;
};

}  // namespace erl::frozenlake
