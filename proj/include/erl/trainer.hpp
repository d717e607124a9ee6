#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "erl/env.hpp"
#include "erl/policy.hpp"

namespace erl::trainer {

// Cross-episode reflection memory: a replaceable plain-text block.
struct MemoryState {
    std::string text;
    std::string source_instance_id;
    long stored_at_iteration = -1;

    bool empty() const { return text.empty(); }
};

struct Thresholds {
    double tau_gate = 1.0;   // reflect/retry when r1 < tau_gate
    double tau_store = 1.0;  // store memory when r2 >= tau_store
};

enum class UpdateKind { attempt1, reflection, attempt2, distill };
std::string to_string(UpdateKind kind);

struct TokenEntry {
    std::string key;
    std::vector<std::string> support;
    std::string token;
    double old_logprob = 0.0;  // under the rollout snapshot
    double ref_logprob = 0.0;  // under the reference policy
};

struct TrajectoryItem {
    std::vector<TokenEntry> tokens;
    double reward = 0.0;
    double advantage = 0.0;
    UpdateKind kind = UpdateKind::attempt1;
    std::string instance_id;
    // True when the backend exposed no per-token logprobs; the trajectory
    // contributes a single sequence-level surrogate with unit ratio and no
    // gradient (score-free REINFORCE-style weighting).
    bool sequence_weighted = false;
};

// Trajectories grouped per (instance, kind); advantages are normalized
// within each group before batch construction.
struct UpdateBatch {
    std::vector<std::vector<TrajectoryItem>> groups;
};

struct TrainerConfig {
    double learning_rate = 1e-6;
    int batch = 64;
    int rollouts_rlvr = 10;
    int rollouts_erl_per_attempt = 4;
    double clip_upper = 0.28;
    double clip_lower = 0.2;
    double kl_coef = 0.001;
    int eval_every = 5;
    double advantage_eps = 1e-6;
    Thresholds thresholds;
    SamplingParams sampling;
};

// A_i = (r_i - mean) / (population std + eps). All-equal groups yield
// exactly zero advantages. Group size must be >= 2.
std::vector<double> group_advantages(const std::vector<double>& rewards, double eps = 1e-6);

using Gradient = std::map<std::string, std::map<std::string, double>>;

struct LossResult {
    double loss = 0.0;
    Gradient gradient;
    long token_count = 0;
    long masked_tokens = 0;
    bool skipped = false;  // all tokens masked: no update
};

// Clipped surrogate with k3 KL regularization:
//   surrogate = min(rho * A, clip(rho, 1-clip_lower, 1+clip_upper) * A)
//   loss = -mean(surrogate) + kl_coef * mean(k3),
//   k3 = exp(ref - new) - (ref - new) - 1
// rho = exp(new - old). Non-finite ratios mask the offending token.
LossResult policy_loss(const TabularPolicy& policy, const UpdateBatch& batch, double clip_lower,
                       double clip_upper, double kl_coef);

struct DistillItem {
    std::vector<TokenEntry> tokens;  // scored under the deploy-form context
    double reward2 = 0.0;
};

// Selective distillation: -I(r2 > 0) * mean per-token logprob of y2 under
// the deploy-form context. Stabilized with the policy-loss upper clip: each
// token's term is clamped once its probability has grown by (1+clip_upper)
// over the rollout snapshot, which keeps value and gradient consistent.
LossResult distill_loss(const TabularPolicy& policy, const DistillItem& item, double clip_upper);
LossResult distill_batch_loss(const TabularPolicy& policy, const std::vector<DistillItem>& items,
                              double clip_upper);

struct OdItem {
    std::string contextual_key;  // conditioned on (x, reflection)
    std::string deploy_key;      // conditioned on x only
    std::vector<std::string> contextual_support;
    std::vector<std::string> deploy_support;
    double reward2 = 0.0;
};

struct OdResult {
    double loss = 0.0;
    Gradient gradient;
    long mismatches = 0;  // support mismatches clamped out
};

// Optional on-policy variant: I(r2 > 0) * KL(pi(.|x,delta) || pi(.|x)) per
// shared key, teacher side frozen; gradients flow to the deploy-context
// logits only.
OdResult od_loss(const TabularPolicy& policy, const std::vector<OdItem>& items);

// SGD step over the tabular logits.
void apply_gradient(TabularPolicy& policy, const Gradient& gradient, double learning_rate);

struct ReflectionResult {
    std::string text;
    Completion completion;
    std::string context_key;
    std::vector<std::string> support;
};

// Samples/produces a reflection conditioned on (x, y1, f1, r1, m). The
// tabular/scripted verification path delegates to scripted_reflector and
// scores the advice against a two-candidate support so reflection tokens
// stay trainable; the remote path prompts with the reflection template.
ReflectionResult reflect(Policy& policy, const Environment& env, const EnvInstance& instance,
                         const EpisodeTrace& first_attempt, const MemoryState& memory,
                         const SamplingParams& sampling, std::uint64_t seed);

// m <- delta iff r2 >= tau_store; returns true when memory changed.
bool memory_update(MemoryState& memory, const std::string& delta, double r2, double tau_store,
                   const std::string& instance_id, long iteration);

struct IterationMetrics {
    long iteration = 0;
    double attempt1_mean = 0.0;
    long attempt1_count = 0;
    double attempt2_mean = 0.0;
    long attempt2_count = 0;
    // First-attempt reward over the gated cohort (the attempts whose failure
    // triggered reflection) — the pre-reflection side of the post-vs-pre
    // comparison.
    double gated_pre_mean = 0.0;
    long gated_count = 0;
    long attempt1_groups = 0;
    long attempt2_groups = 0;
    long reflections = 0;
    long memory_stores = 0;
    long distill_trajectories = 0;
    long dropped_groups = 0;
    long discarded_episodes = 0;
    long masked_tokens = 0;
    long rl_updates = 0;
    bool memory_changed = false;
    double loss_attempt1 = 0.0;
    double loss_attempt2 = 0.0;
    double loss_distill = 0.0;
};

struct IterationOptions {
    bool no_memory = false;      // ablation: never store reflections
    bool no_reflection = false;  // ablation: generic retry preamble instead of reflection
    bool use_od = false;         // internalize with the reverse-KL variant
    long iteration = 0;
    std::uint64_t seed = 0;
};

using TraceSink = std::function<void(const EpisodeTrace&)>;

// One gated experience-reflection-consolidation iteration over the given
// instances: first attempts -> RL update -> per failed attempt: reflection,
// second attempt -> RL update (reflection reward r~ = r2) -> memory store ->
// selective distillation. `trainable`/`reference` are null for rollout-only
// backends (updates are skipped).
IterationMetrics erl_iteration(const TrainerConfig& config, Policy& rollout_policy,
                               TabularPolicy* trainable, const TabularPolicy* reference,
                               const Environment& env, const std::vector<EnvInstance>& instances,
                               MemoryState& memory, const IterationOptions& options,
                               const TraceSink& sink = nullptr);

// Compute-matched baseline: rollouts_rlvr attempts per instance, grouped
// advantages, policy_loss only.
IterationMetrics rlvr_iteration(const TrainerConfig& config, Policy& rollout_policy,
                                TabularPolicy* trainable, const TabularPolicy* reference,
                                const Environment& env, const std::vector<EnvInstance>& instances,
                                const IterationOptions& options, const TraceSink& sink = nullptr);

// Builds the RL token entries for a trace, scoring old/reference logprobs
// under the given snapshots. Used by the iterations and exposed for tests.
TrajectoryItem trajectory_from_trace(const EpisodeTrace& trace, UpdateKind kind,
                                     const TabularPolicy* snapshot,
                                     const TabularPolicy* reference);

// Rescores a trace's steps under a replacement system block (deploy form for
// distillation), rebuilding each step's context from the recorded history.
std::vector<TokenEntry> rescore_under_system(const EpisodeTrace& trace,
                                             const std::string& system_text,
                                             const TabularPolicy& snapshot);

// Checkpoints: parameter table + memory + iteration counter, versioned,
// written atomically (write-then-rename).
struct Checkpoint {
    int version = 1;
    long iteration = 0;
    std::string env_name;
    std::string algo;
    MemoryState memory;
    TabularPolicy::ParamTable params;
    TabularPolicy::ParamTable reference_params;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace erl::trainer
