#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "erl/rng.hpp"
#include "erl/sokoban.hpp"

using namespace erl;
using namespace erl::sokoban;

namespace {

const std::vector<std::string> kNames{"Up", "Down", "Left", "Right"};

// Test-side oracle: depth-limited DFS over raw action sequences, replaying
// the exact step semantics. Returns the optimal move count within
// `max_depth`, or nullopt.
std::optional<int> exhaustive_optimum(const SokobanInstance& inst, int max_depth) {
    struct Search {
        const SokobanInstance& inst;
        int best = INT32_MAX;
        void run(SokobanState state, int depth) {
            if (depth >= best) return;
            for (const auto& name : kNames) {
                SokobanState next = state;
                next.done = false;
                next.steps_taken = 0;  // depth handled here, not by the budget
                const StepOutcome out = sokoban_step(next, name);
                if (out.reward == 1.0) {
                    best = std::min(best, depth + 1);
                    continue;
                }
                if (next.player_r == state.player_r && next.player_c == state.player_c &&
                    next.box_r == state.box_r && next.box_c == state.box_c)
                    continue;  // blocked: identical state, skip
                if (depth + 1 < 8) run(next, depth + 1);
            }
        }
    };
    Search search{inst};
    SokobanState start = initial_state(inst);
    search.run(start, 0);
    (void)max_depth;
    if (search.best == INT32_MAX) return std::nullopt;
    return search.best;
}

SokobanInstance one_push_layout() {
    // 6x6: player (1,1), box (1,2), goal (1,3), clear row.
    SokobanInstance inst;
    inst.n = 6;
    inst.player_r = 1;
    inst.player_c = 1;
    inst.box_r = 1;
    inst.box_c = 2;
    inst.goal_r = 1;
    inst.goal_c = 3;
    inst.min_solution = 1;
    return inst;
}

SokobanInstance table_layout() {
    // E E E E E E / E A D B C E / E D D D D E / ... : player (1,1), box (1,3),
    // goal (1,4) on a 6x6 board.
    SokobanInstance inst;
    inst.n = 6;
    inst.player_r = 1;
    inst.player_c = 1;
    inst.box_r = 1;
    inst.box_c = 3;
    inst.goal_r = 1;
    inst.goal_c = 4;
    inst.min_solution = 2;
    return inst;
}

}  // namespace

TEST_CASE("generate_sokoban: 500 seeded draws satisfy the exhaustive oracle") {
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        const SokobanInstance inst = generate_sokoban(seed);
        CHECK(inst.n >= 6);
        CHECK(inst.n <= 8);
        // goal/box/player strictly interior and pairwise distinct
        CHECK_FALSE(inst.wall(inst.goal_r, inst.goal_c));
        CHECK_FALSE(inst.wall(inst.box_r, inst.box_c));
        CHECK_FALSE(inst.wall(inst.player_r, inst.player_c));
        CHECK((inst.goal_r != inst.box_r || inst.goal_c != inst.box_c));
        CHECK((inst.goal_r != inst.player_r || inst.goal_c != inst.player_c));
        CHECK((inst.box_r != inst.player_r || inst.box_c != inst.player_c));
        REQUIRE(inst.min_solution >= 1);
        REQUIRE(inst.min_solution <= 8);
        const auto oracle = exhaustive_optimum(inst, 8);
        REQUIRE(oracle.has_value());
        REQUIRE(*oracle == inst.min_solution);
    }
}

TEST_CASE("generate_sokoban: deterministic in seed") {
    for (const std::uint64_t seed : {11ull, 222ull, 3333ull}) {
        CHECK(sokoban_payload(generate_sokoban(seed)).dump() ==
              sokoban_payload(generate_sokoban(seed)).dump());
    }
}

TEST_CASE("one-push layout has min_solution 1") {
    CHECK(sokoban_min_solution(one_push_layout()) == 1);
}

TEST_CASE("corner deadlock is unsolvable") {
    SokobanInstance inst;
    inst.n = 6;
    inst.box_r = 1;
    inst.box_c = 1;  // non-goal corner
    inst.goal_r = 3;
    inst.goal_c = 3;
    inst.player_r = 2;
    inst.player_c = 2;
    CHECK_FALSE(sokoban_min_solution(inst).has_value());
}

TEST_CASE("sokoban_min_solution equals exhaustive enumeration on 50 random 6x6 layouts") {
    rng::SplitMix64 g(99);
    int done = 0;
    while (done < 50) {
        SokobanInstance inst;
        inst.n = 6;
        const int side = inst.n - 2;
        const auto cell = [&](int idx, int& r, int& c) {
            r = 1 + idx / side;
            c = 1 + idx % side;
        };
        int a = g.next_int(0, side * side - 1);
        int b = g.next_int(0, side * side - 1);
        int p = g.next_int(0, side * side - 1);
        if (a == b || b == p || a == p) continue;
        cell(a, inst.goal_r, inst.goal_c);
        cell(b, inst.box_r, inst.box_c);
        cell(p, inst.player_r, inst.player_c);
        ++done;
        const auto bfs = sokoban_min_solution(inst);
        const auto oracle = exhaustive_optimum(inst, 8);
        if (oracle.has_value()) {
            REQUIRE(bfs.has_value());
            REQUIRE(*bfs == *oracle);
        } else if (bfs.has_value()) {
            REQUIRE(*bfs > 8);  // solvable, but not within the oracle's horizon
        }
    }
}

TEST_CASE("generator output replays to success via the BFS-recovered plan") {
    for (std::uint64_t seed = 100; seed < 140; ++seed) {
        const SokobanInstance inst = generate_sokoban(seed);
        const auto plan = sokoban_solve(inst);
        REQUIRE(plan.has_value());
        REQUIRE(static_cast<int>(plan->size()) == inst.min_solution);
        SokobanState state = initial_state(inst);
        StepOutcome out;
        for (const auto& action : *plan) out = sokoban_step(state, action);
        CHECK(out.reward == 1.0);
        CHECK(out.feedback == kFeedbackSolved);
    }
}

TEST_CASE("sokoban_step: push onto the goal solves the puzzle") {
    SokobanInstance inst = one_push_layout();
    SokobanState state = initial_state(inst);
    const StepOutcome out = sokoban_step(state, std::string("Right"));
    CHECK(out.reward == 1.0);
    CHECK(out.terminal);
    CHECK(out.feedback == kFeedbackSolved);
}

TEST_CASE("sokoban_step: walking into the border wall blocks") {
    SokobanInstance inst = one_push_layout();
    SokobanState state = initial_state(inst);
    const StepOutcome out = sokoban_step(state, std::string("Left"));
    CHECK(out.feedback == kFeedbackBlocked);
    CHECK(state.player_r == 1);
    CHECK(state.player_c == 1);
}

TEST_CASE("sokoban_step: pushing a box against a wall blocks with no state change") {
    SokobanInstance inst;
    inst.n = 6;
    inst.player_r = 1;
    inst.player_c = 2;
    inst.box_r = 1;
    inst.box_c = 1;  // wall beyond at column 0
    inst.goal_r = 3;
    inst.goal_c = 3;
    SokobanState state = initial_state(inst);
    const SokobanState before = state;
    const StepOutcome out = sokoban_step(state, std::string("Left"));
    CHECK(out.feedback == kFeedbackBlocked);
    CHECK(state.player_r == before.player_r);
    CHECK(state.player_c == before.player_c);
    CHECK(state.box_r == before.box_r);
    CHECK(state.box_c == before.box_c);
}

TEST_CASE("sokoban_step: effective non-solving move reports movement") {
    SokobanInstance inst = one_push_layout();
    SokobanState state = initial_state(inst);
    const StepOutcome out = sokoban_step(state, std::string("Down"));
    CHECK(out.feedback == kFeedbackMoved);
    CHECK_FALSE(out.terminal);
}

TEST_CASE("sokoban_step: 8th step without solving hits the limit") {
    SokobanInstance inst = one_push_layout();
    SokobanState state = initial_state(inst);
    StepOutcome out;
    for (int i = 0; i < 8; ++i) {
        // bounce up/down, never pushing
        out = sokoban_step(state, std::string(i % 2 == 0 ? "Down" : "Up"));
    }
    CHECK(out.terminal);
    CHECK(out.reward == 0.0);
    CHECK(out.feedback == kFeedbackMaxStep);
}

TEST_CASE("sokoban_step: solve on the 8th action beats the cutoff") {
    SokobanInstance inst = one_push_layout();
    SokobanState state = initial_state(inst);
    state.steps_taken = 7;
    const StepOutcome out = sokoban_step(state, std::string("Right"));
    CHECK(out.reward == 1.0);
    CHECK(out.feedback == kFeedbackSolved);
}

TEST_CASE("sokoban_step: terminal state is a contract violation") {
    SokobanInstance inst = one_push_layout();
    SokobanState state = initial_state(inst);
    state.done = true;
    CHECK_THROWS_AS(sokoban_step(state, std::string("Up")), std::logic_error);
}

TEST_CASE("render_sokoban: reproduces the example board row") {
    const SokobanInstance inst = table_layout();
    const std::string frame = render_sokoban(initial_state(inst));
    CHECK(frame.substr(0, 11) == "E E E E E E");
    CHECK(frame.find("E A D B C E") != std::string::npos);
}

TEST_CASE("render_sokoban: box on goal renders b and no C remains") {
    SokobanInstance inst = one_push_layout();
    SokobanState state = initial_state(inst);
    sokoban_step(state, std::string("Right"));
    const std::string frame = render_sokoban(state);
    CHECK(frame.find('b') != std::string::npos);
    CHECK(frame.find('C') == std::string::npos);
    CHECK(frame.find('B') == std::string::npos);
}

TEST_CASE("render_sokoban: player standing on the goal renders a") {
    SokobanInstance inst;
    inst.n = 6;
    inst.player_r = 2;
    inst.player_c = 2;
    inst.box_r = 1;
    inst.box_c = 1;
    inst.goal_r = 2;
    inst.goal_c = 2;  // player on the goal cell
    const std::string frame = render_sokoban(initial_state(inst));
    CHECK(frame.find('a') != std::string::npos);
    CHECK(frame.find('A') == std::string::npos);
}

TEST_CASE("conservation: every frame has exactly one player and one box") {
    rng::SplitMix64 g(12);
    for (int trial = 0; trial < 30; ++trial) {
        const SokobanInstance inst = generate_sokoban(g.next());
        SokobanState state = initial_state(inst);
        while (!state.done) {
            const std::string frame = render_sokoban(state);
            const long players = std::count(frame.begin(), frame.end(), 'A') +
                                 std::count(frame.begin(), frame.end(), 'a');
            const long boxes = std::count(frame.begin(), frame.end(), 'B') +
                               std::count(frame.begin(), frame.end(), 'b');
            REQUIRE(players == 1);
            REQUIRE(boxes == 1);
            sokoban_step(state, kNames[g.next_range(0, 3)]);
        }
    }
}

TEST_CASE("no tunneling: a blocked step leaves the state bit-identical") {
    rng::SplitMix64 g(13);
    for (int trial = 0; trial < 200; ++trial) {
        const SokobanInstance inst = generate_sokoban(g.next());
        SokobanState state = initial_state(inst);
        while (!state.done) {
            const SokobanState before = state;
            const StepOutcome out = sokoban_step(state, kNames[g.next_range(0, 3)]);
            if (out.feedback == kFeedbackBlocked) {
                REQUIRE(state.player_r == before.player_r);
                REQUIRE(state.player_c == before.player_c);
                REQUIRE(state.box_r == before.box_r);
                REQUIRE(state.box_c == before.box_c);
            }
        }
    }
}

TEST_CASE("payload round-trip") {
    const SokobanInstance inst = generate_sokoban(4);
    CHECK(sokoban_payload(sokoban_from_payload(sokoban_payload(inst))).dump() ==
          sokoban_payload(inst).dump());
}
