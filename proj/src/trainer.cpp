#include "erl/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "erl/errors.hpp"
#include "erl/prompts.hpp"
#include "erl/rng.hpp"

namespace erl::trainer {

std::string to_string(UpdateKind kind) {
    switch (kind) {
        case UpdateKind::attempt1: return "attempt1";
        case UpdateKind::reflection: return "reflection";
        case UpdateKind::attempt2: return "attempt2";
        case UpdateKind::distill: return "distill";
    }
    return "unknown";
}

std::vector<double> group_advantages(const std::vector<double>& rewards, double eps) {
    if (rewards.size() < 2) throw Error("group_advantages: group size must be >= 2");
    const bool all_equal =
        std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards.front(); });
    if (all_equal) return std::vector<double>(rewards.size(), 0.0);

    const auto n = static_cast<long double>(rewards.size());
    long double mean = 0.0L;
    for (const double r : rewards) mean += r;
    mean /= n;
    std::vector<long double> dev(rewards.size());
    long double resid = 0.0L;
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        dev[i] = static_cast<long double>(rewards[i]) - mean;
        resid += dev[i];
    }
    resid /= n;  // second-pass recentering keeps the advantage sum at zero
    long double var = 0.0L;
    for (auto& d : dev) {
        d -= resid;
        var += d * d;
    }
    var /= n;  // population variance
    const long double denom = std::sqrt(var) + static_cast<long double>(eps);
    std::vector<double> out(rewards.size());
    for (std::size_t i = 0; i < rewards.size(); ++i)
        out[i] = static_cast<double>(dev[i] / denom);
    return out;
}

TrajectoryItem trajectory_from_trace(const EpisodeTrace& trace, UpdateKind kind,
                                     const TabularPolicy* snapshot,
                                     const TabularPolicy* reference) {
    TrajectoryItem item;
    item.kind = kind;
    item.instance_id = trace.instance_id;
    item.reward = trace.final_reward;
    for (const auto& step : trace.steps) {
        if (step.tokens.empty() || step.support.empty()) {
            item.sequence_weighted = true;
            item.tokens.clear();
            return item;
        }
        for (std::size_t i = 0; i < step.tokens.size(); ++i) {
            TokenEntry entry;
            entry.key = step.context_key;
            entry.support = step.support;
            entry.token = step.tokens[i];
            if (i < step.logprobs.size()) {
                entry.old_logprob = step.logprobs[i];
            } else if (snapshot) {
                entry.old_logprob = snapshot->score_token(entry.key, entry.support, entry.token);
            }
            entry.ref_logprob = reference
                                    ? reference->score_token(entry.key, entry.support, entry.token)
                                    : entry.old_logprob;
            item.tokens.push_back(std::move(entry));
        }
    }
    return item;
}

LossResult policy_loss(const TabularPolicy& policy, const UpdateBatch& batch, double clip_lower,
                       double clip_upper, double kl_coef) {
    struct TokenTerm {
        const TokenEntry* entry;
        double dsurrogate_dlp;  // d surrogate / d new_logprob
        double dk3_dlp;
    };

    LossResult result;
    double surrogate_sum = 0.0;
    double k3_sum = 0.0;
    std::vector<TokenTerm> terms;

    const double lo = 1.0 - clip_lower;
    const double hi = 1.0 + clip_upper;

    for (const auto& group : batch.groups) {
        for (const auto& traj : group) {
            if (traj.sequence_weighted) {
                // No per-token logprobs: the trajectory enters as a single
                // sequence-level surrogate with unit ratio (no gradient).
                surrogate_sum += traj.advantage;
                ++result.token_count;
                continue;
            }
            for (const auto& tok : traj.tokens) {
                const double new_lp = policy.score_token(tok.key, tok.support, tok.token);
                const double rho = std::exp(new_lp - tok.old_logprob);
                if (!std::isfinite(rho)) {
                    ++result.masked_tokens;
                    continue;
                }
                const double a = traj.advantage;
                const double unclipped = rho * a;
                const double clipped = std::clamp(rho, lo, hi) * a;
                double dsur;
                if (unclipped <= clipped) {
                    dsur = rho * a;  // unclipped branch active (d rho / d lp = rho)
                } else {
                    dsur = (rho >= lo && rho <= hi) ? rho * a : 0.0;
                }
                surrogate_sum += std::min(unclipped, clipped);

                const double delta = tok.ref_logprob - new_lp;
                const double k3 = std::exp(delta) - delta - 1.0;
                k3_sum += k3;
                const double dk3 = -std::exp(delta) + 1.0;

                terms.push_back({&tok, dsur, dk3});
                ++result.token_count;
            }
        }
    }

    if (result.token_count == 0) {
        result.skipped = true;
        return result;
    }

    const double n = static_cast<double>(result.token_count);
    result.loss = -surrogate_sum / n + kl_coef * k3_sum / n;

    for (const auto& term : terms) {
        const double dloss_dlp = (-term.dsurrogate_dlp + kl_coef * term.dk3_dlp) / n;
        if (dloss_dlp == 0.0) continue;
        const auto grad_lp =
            policy.score_gradient(term.entry->key, term.entry->support, term.entry->token);
        auto& slot = result.gradient[term.entry->key];
        for (std::size_t i = 0; i < term.entry->support.size(); ++i) {
            slot[term.entry->support[i]] += dloss_dlp * grad_lp[i];
        }
    }
    return result;
}

LossResult distill_loss(const TabularPolicy& policy, const DistillItem& item, double clip_upper) {
    LossResult result;
    if (item.reward2 <= 0.0 || item.tokens.empty()) return result;  // indicator off

    const double cap_gain = std::log1p(clip_upper);
    double loss_sum = 0.0;
    struct Term {
        const TokenEntry* entry;
        bool active;
    };
    std::vector<Term> terms;
    for (const auto& tok : item.tokens) {
        const double new_lp = policy.score_token(tok.key, tok.support, tok.token);
        const double cap = tok.old_logprob + cap_gain;
        // Clamp once the token's probability has grown by (1 + clip_upper)
        // over the rollout snapshot; keeps loss value and gradient consistent.
        loss_sum += -std::min(new_lp, cap);
        terms.push_back({&tok, new_lp <= cap});
        ++result.token_count;
    }
    const double n = static_cast<double>(result.token_count);
    result.loss = loss_sum / n;
    for (const auto& term : terms) {
        if (!term.active) continue;
        const auto grad_lp =
            policy.score_gradient(term.entry->key, term.entry->support, term.entry->token);
        auto& slot = result.gradient[term.entry->key];
        for (std::size_t i = 0; i < term.entry->support.size(); ++i) {
            slot[term.entry->support[i]] += -grad_lp[i] / n;
        }
    }
    return result;
}

LossResult distill_batch_loss(const TabularPolicy& policy, const std::vector<DistillItem>& items,
                              double clip_upper) {
    LossResult result;
    if (items.empty()) {
        result.skipped = true;
        return result;
    }
    const double scale = 1.0 / static_cast<double>(items.size());
    for (const auto& item : items) {
        LossResult one = distill_loss(policy, item, clip_upper);
        result.loss += scale * one.loss;
        result.token_count += one.token_count;
        for (const auto& [key, slot] : one.gradient) {
            for (const auto& [token, g] : slot) result.gradient[key][token] += scale * g;
        }
    }
    return result;
}

OdResult od_loss(const TabularPolicy& policy, const std::vector<OdItem>& items) {
    OdResult result;
    if (items.empty()) return result;
    const double scale = 1.0 / static_cast<double>(items.size());
    for (const auto& item : items) {
        if (item.reward2 <= 0.0) continue;  // indicator off
        // Union of supports; tokens absent on either side are clamped out.
        std::vector<std::string> shared;
        for (const auto& t : item.contextual_support) {
            if (std::find(item.deploy_support.begin(), item.deploy_support.end(), t) !=
                item.deploy_support.end()) {
                shared.push_back(t);
            } else {
                ++result.mismatches;
            }
        }
        for (const auto& t : item.deploy_support) {
            if (std::find(item.contextual_support.begin(), item.contextual_support.end(), t) ==
                item.contextual_support.end())
                ++result.mismatches;
        }
        if (shared.empty()) continue;

        // Teacher (contextual) probabilities are frozen; gradients flow to
        // the deploy-context logits only.
        const auto p = policy.probs(item.contextual_key, item.contextual_support);
        const auto q = policy.probs(item.deploy_key, item.deploy_support);
        double kl = 0.0;
        double p_mass = 0.0;
        std::vector<double> p_shared(shared.size()), q_shared(shared.size());
        for (std::size_t i = 0; i < shared.size(); ++i) {
            const auto pi_it =
                std::find(item.contextual_support.begin(), item.contextual_support.end(), shared[i]);
            const auto qi_it =
                std::find(item.deploy_support.begin(), item.deploy_support.end(), shared[i]);
            p_shared[i] = p[static_cast<std::size_t>(pi_it - item.contextual_support.begin())];
            q_shared[i] = q[static_cast<std::size_t>(qi_it - item.deploy_support.begin())];
            kl += p_shared[i] * std::log(p_shared[i] / q_shared[i]);
            p_mass += p_shared[i];
        }
        result.loss += scale * kl;
        // d KL / d deploy_logit(v) = q_v * p_mass - p_v over the shared set.
        auto& slot = result.gradient[item.deploy_key];
        for (std::size_t i = 0; i < shared.size(); ++i) {
            slot[shared[i]] += scale * (q_shared[i] * p_mass - p_shared[i]);
        }
    }
    return result;
}

void apply_gradient(TabularPolicy& policy, const Gradient& gradient, double learning_rate) {
    for (const auto& [key, slot] : gradient) {
        for (const auto& [token, g] : slot) {
            if (g != 0.0) policy.add_to_logit(key, token, -learning_rate * g);
        }
    }
    policy.bump_update_count();
}

ReflectionResult reflect(Policy& policy, const Environment& env, const EnvInstance& instance,
                         const EpisodeTrace& first_attempt, const MemoryState& memory,
                         const SamplingParams& sampling, std::uint64_t seed) {
    const bool grid = env.name() != "qa";
    const std::string reflection_prompt =
        std::string(grid ? prompts::grid_reflection() : prompts::qa_reflection());
    const std::string task_block = env.system_prompt() + "\n\n" +
                                   (first_attempt.steps.empty() ? std::string{}
                                                                : first_attempt.steps.front().observation);
    const std::string assembled = assemble_reflection_context(
        reflection_prompt, task_block, transcript(first_attempt), first_attempt.final_feedback(),
        first_attempt.final_reward, memory.text);

    ReflectionResult result;
    result.context_key = rng::to_hex(rng::fnv1a64(assembled));

    if (policy.backend_name() == "remote") {
        // The context splits into a system block (template) and a user block
        // (task, attempt, feedback, reward, memory) for the wire format.
        const std::size_t cut = reflection_prompt.size() + 1;
        PromptContext ctx{reflection_prompt, nullptr, assembled.substr(cut)};
        Completion completion = policy.generate(ctx, {}, sampling, seed);
        std::string text = completion.text;
        const std::size_t open = text.rfind("<prompt>");
        if (open != std::string::npos) {
            const std::size_t close = text.find("</prompt>", open);
            if (close != std::string::npos) text = text.substr(open + 8, close - open - 8);
        }
        while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front())))
            text.erase(text.begin());
        while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
        result.text = text.empty() ? kSentinelReflection : text;
        result.completion = std::move(completion);
        return result;
    }

    // Verification path: deterministic scripted advice, scored against a
    // two-candidate support so the reflection keeps trainable logprobs.
    const std::string advice = scripted_reflector(first_attempt);
    result.text = advice.empty() ? kSentinelReflection : advice;
    result.support = {result.text};
    if (result.text != kSentinelReflection) result.support.push_back(kSentinelReflection);

    result.completion.text = result.text;
    result.completion.tokens = {result.text};
    result.completion.backend = policy.backend_name();
    if (auto* tabular = dynamic_cast<TabularPolicy*>(&policy)) {
        result.completion.logprobs =
            std::vector<double>{tabular->score_token(result.context_key, result.support, result.text)};
    }
    return result;
}

bool memory_update(MemoryState& memory, const std::string& delta, double r2, double tau_store,
                   const std::string& instance_id, long iteration) {
    if (r2 < tau_store) return false;
    memory.text = delta;
    memory.source_instance_id = instance_id;
    memory.stored_at_iteration = iteration;
    return true;
}

std::vector<TokenEntry> rescore_under_system(const EpisodeTrace& trace,
                                             const std::string& system_text,
                                             const TabularPolicy& snapshot) {
    std::vector<TokenEntry> entries;
    std::vector<TraceStep> replayed;
    for (const auto& step : trace.steps) {
        PromptContext ctx{system_text, &replayed, step.observation};
        const std::string key = ctx.key();
        for (const auto& tok : step.tokens) {
            TokenEntry entry;
            entry.key = key;
            entry.support = step.support;
            entry.token = tok;
            entry.old_logprob = snapshot.score_token(key, step.support, tok);
            entry.ref_logprob = entry.old_logprob;
            entries.push_back(std::move(entry));
        }
        replayed.push_back(step);
    }
    return entries;
}

namespace {

struct EpisodeBundle {
    EpisodeTrace trace;
    bool discarded = false;
};

struct EpisodeSpec {
    const EnvInstance* instance = nullptr;
    EpisodeContext ctx;
    std::uint64_t seed = 0;
    int attempt_index = 1;
};

EpisodeBundle roll_one(const Environment& env, const EnvInstance& instance, Policy& policy,
                       const EpisodeContext& ctx, const SamplingParams& sampling,
                       std::uint64_t seed, int attempt_index) {
    EpisodeBundle bundle;
    try {
        EpisodeOptions opts;
        opts.seed = seed;
        opts.attempt_index = attempt_index;
        bundle.trace = run_episode(env, instance, policy, ctx, sampling, opts);
    } catch (const TransportError&) {
        bundle.discarded = true;  // aborted episodes are never scored
    }
    return bundle;
}

// Runs a batch of independent episodes, fanning out up to the policy's
// in-flight cap. Results and sink emission keep submission order regardless of
// completion order.
std::vector<EpisodeBundle> roll_many(const Environment& env, Policy& policy,
                                     const SamplingParams& sampling,
                                     const std::vector<EpisodeSpec>& specs,
                                     const TraceSink& sink) {
    std::vector<EpisodeBundle> bundles(specs.size());
    const int cap = std::max(1, policy.concurrency_cap());
    if (cap <= 1 || specs.size() <= 1) {
        for (std::size_t i = 0; i < specs.size(); ++i) {
            bundles[i] = roll_one(env, *specs[i].instance, policy, specs[i].ctx, sampling,
                                  specs[i].seed, specs[i].attempt_index);
        }
    } else {
        std::atomic<std::size_t> cursor{0};
        const std::size_t workers =
            std::min<std::size_t>(static_cast<std::size_t>(cap), specs.size());
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t i = cursor.fetch_add(1);
                    if (i >= specs.size()) return;
                    bundles[i] = roll_one(env, *specs[i].instance, policy, specs[i].ctx, sampling,
                                          specs[i].seed, specs[i].attempt_index);
                }
            });
        }
        for (auto& t : pool) t.join();
    }
    if (sink) {
        for (const auto& bundle : bundles) {
            if (!bundle.discarded) sink(bundle.trace);
        }
    }
    return bundles;
}

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (const double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

// Normalizes advantages within each group; groups below two members are
// dropped (counted) since group-relative advantages are undefined there.
void normalize_groups(std::vector<std::vector<TrajectoryItem>>& groups, double eps,
                      long& dropped_groups) {
    std::vector<std::vector<TrajectoryItem>> kept;
    for (auto& group : groups) {
        if (group.size() < 2) {
            ++dropped_groups;
            continue;
        }
        std::vector<double> rewards;
        rewards.reserve(group.size());
        for (const auto& t : group) rewards.push_back(t.reward);
        const auto advantages = group_advantages(rewards, eps);
        for (std::size_t i = 0; i < group.size(); ++i) group[i].advantage = advantages[i];
        kept.push_back(std::move(group));
    }
    groups = std::move(kept);
}

}  // namespace

IterationMetrics erl_iteration(const TrainerConfig& config, Policy& rollout_policy,
                               TabularPolicy* trainable, const TabularPolicy* reference,
                               const Environment& env, const std::vector<EnvInstance>& instances,
                               MemoryState& memory, const IterationOptions& options,
                               const TraceSink& sink) {
    IterationMetrics metrics;
    metrics.iteration = options.iteration;
    const std::uint64_t iter_seed = rng::mix(options.seed, static_cast<std::uint64_t>(options.iteration));

    // Frozen snapshot: all rollouts in this iteration sample from it and it
    // defines the "old" logprobs; mutation happens at the end.
    std::optional<TabularPolicy> snapshot;
    if (trainable) snapshot = *trainable;

    const std::string deploy_system = env.system_prompt();

    std::vector<std::vector<TrajectoryItem>> attempt1_groups;
    std::vector<std::vector<TrajectoryItem>> reflection_groups;
    std::vector<std::vector<TrajectoryItem>> attempt2_groups;
    std::vector<DistillItem> distill_items;
    std::vector<OdItem> od_items;
    std::vector<double> attempt1_rewards, attempt2_rewards, gated_rewards;
    std::vector<std::pair<std::string, double>> store_candidates;  // (reflection, r2)
    std::vector<std::string> store_instance_ids;

    for (std::size_t inst_idx = 0; inst_idx < instances.size(); ++inst_idx) {
        const EnvInstance& instance = instances[inst_idx];
        const std::uint64_t inst_seed = rng::mix(iter_seed, static_cast<std::uint64_t>(inst_idx));

        // First attempts: deploy-form conditioning (no memory, no reflection).
        EpisodeContext ctx1{deploy_system, deploy_system};
        std::vector<EpisodeSpec> first_specs;
        for (int r = 0; r < config.rollouts_erl_per_attempt; ++r) {
            first_specs.push_back(
                {&instance, ctx1, rng::mix(inst_seed, 1, static_cast<std::uint64_t>(r)), 1});
        }
        std::vector<EpisodeTrace> firsts;
        for (const auto& bundle : roll_many(env, rollout_policy, config.sampling, first_specs, sink)) {
            if (bundle.discarded) {
                ++metrics.discarded_episodes;
                continue;
            }
            attempt1_rewards.push_back(bundle.trace.final_reward);
            firsts.push_back(bundle.trace);
        }

        std::vector<TrajectoryItem> group1;
        for (const auto& trace : firsts) {
            group1.push_back(trajectory_from_trace(trace, UpdateKind::attempt1,
                                                   snapshot ? &*snapshot : nullptr, reference));
        }
        if (!group1.empty()) attempt1_groups.push_back(std::move(group1));

        // Gated reflection and second attempt, one per failed first attempt.
        std::vector<TrajectoryItem> reflection_group;
        std::vector<TrajectoryItem> group2;
        struct GatedPair {
            std::optional<ReflectionResult> reflection;
        };
        std::vector<GatedPair> pairs;
        std::vector<EpisodeSpec> retry_specs;
        for (std::size_t a = 0; a < firsts.size(); ++a) {
            const EpisodeTrace& first = firsts[a];
            if (first.final_reward >= config.thresholds.tau_gate) continue;
            gated_rewards.push_back(first.final_reward);

            std::string attempt2_system;
            GatedPair pair;
            if (options.no_reflection) {
                attempt2_system = deploy_system + "\n\n" + std::string(prompts::retry_generic()) +
                                  "\n\n## Past Attempt\n" + transcript(first);
            } else {
                ++metrics.reflections;
                pair.reflection =
                    reflect(rollout_policy, env, instance, first, memory, config.sampling,
                            rng::mix(inst_seed, 3, static_cast<std::uint64_t>(a)));
                attempt2_system = deploy_system + "\n\n## Reflection\n" + pair.reflection->text;
            }
            pairs.push_back(std::move(pair));
            retry_specs.push_back({&instance, EpisodeContext{attempt2_system, deploy_system},
                                   rng::mix(inst_seed, 2, static_cast<std::uint64_t>(a)), 2});
        }
        const auto retry_bundles = roll_many(env, rollout_policy, config.sampling, retry_specs, sink);
        for (std::size_t p = 0; p < retry_bundles.size(); ++p) {
            const auto& bundle = retry_bundles[p];
            const auto& reflection = pairs[p].reflection;
            if (bundle.discarded) {
                // The pair is unscored: no reflection reward exists either.
                ++metrics.discarded_episodes;
                continue;
            }
            const EpisodeTrace& second = bundle.trace;
            attempt2_rewards.push_back(second.final_reward);

            group2.push_back(trajectory_from_trace(second, UpdateKind::attempt2,
                                                   snapshot ? &*snapshot : nullptr, reference));
            if (reflection) {
                // Reflection reward r~ = r2.
                TrajectoryItem item;
                item.kind = UpdateKind::reflection;
                item.instance_id = instance.id;
                item.reward = second.final_reward;
                if (reflection->completion.logprobs && !reflection->support.empty()) {
                    TokenEntry entry;
                    entry.key = reflection->context_key;
                    entry.support = reflection->support;
                    entry.token = reflection->completion.tokens.front();
                    entry.old_logprob = reflection->completion.logprobs->front();
                    entry.ref_logprob =
                        reference ? reference->score_token(entry.key, entry.support, entry.token)
                                  : entry.old_logprob;
                    item.tokens.push_back(std::move(entry));
                } else {
                    item.sequence_weighted = true;
                }
                reflection_group.push_back(std::move(item));
                store_candidates.emplace_back(reflection->text, second.final_reward);
                store_instance_ids.push_back(instance.id);
            }

            if (second.final_reward > 0.0 && snapshot) {
                if (options.use_od) {
                    std::vector<TraceStep> replayed;
                    for (const auto& step : second.steps) {
                        if (step.support.empty()) break;
                        OdItem od;
                        od.contextual_key = step.context_key;
                        PromptContext deploy_ctx{deploy_system, &replayed, step.observation};
                        od.deploy_key = deploy_ctx.key();
                        od.contextual_support = step.support;
                        od.deploy_support = step.support;
                        od.reward2 = second.final_reward;
                        od_items.push_back(std::move(od));
                        replayed.push_back(step);
                    }
                } else {
                    DistillItem item;
                    item.reward2 = second.final_reward;
                    item.tokens = rescore_under_system(second, deploy_system, *snapshot);
                    if (!item.tokens.empty()) {
                        distill_items.push_back(std::move(item));
                        ++metrics.distill_trajectories;
                    }
                }
                if (options.use_od) ++metrics.distill_trajectories;
            }
        }
        if (!reflection_group.empty()) reflection_groups.push_back(std::move(reflection_group));
        if (!group2.empty()) attempt2_groups.push_back(std::move(group2));
    }

    metrics.attempt1_mean = mean_of(attempt1_rewards);
    metrics.attempt1_count = static_cast<long>(attempt1_rewards.size());
    metrics.attempt2_mean = mean_of(attempt2_rewards);
    metrics.attempt2_count = static_cast<long>(attempt2_rewards.size());
    metrics.gated_pre_mean = mean_of(gated_rewards);
    metrics.gated_count = static_cast<long>(gated_rewards.size());
    metrics.attempt1_groups = static_cast<long>(attempt1_groups.size());
    metrics.attempt2_groups = static_cast<long>(attempt2_groups.size());

    // Update order mirrors the loop: first attempts, then reflection and
    // second attempts, then internalization; memory lands with the rest of
    // the end-of-iteration mutation.
    normalize_groups(attempt1_groups, config.advantage_eps, metrics.dropped_groups);
    normalize_groups(reflection_groups, config.advantage_eps, metrics.dropped_groups);
    normalize_groups(attempt2_groups, config.advantage_eps, metrics.dropped_groups);

    if (trainable) {
        if (!attempt1_groups.empty()) {
            const LossResult loss = policy_loss(*trainable, UpdateBatch{attempt1_groups},
                                                config.clip_lower, config.clip_upper, config.kl_coef);
            metrics.loss_attempt1 = loss.loss;
            metrics.masked_tokens += loss.masked_tokens;
            if (!loss.skipped) {
                apply_gradient(*trainable, loss.gradient, config.learning_rate);
                ++metrics.rl_updates;
            }
        }
        std::vector<std::vector<TrajectoryItem>> phase2 = reflection_groups;
        for (auto& g : attempt2_groups) phase2.push_back(g);
        if (!phase2.empty()) {
            const LossResult loss = policy_loss(*trainable, UpdateBatch{phase2}, config.clip_lower,
                                                config.clip_upper, config.kl_coef);
            metrics.loss_attempt2 = loss.loss;
            metrics.masked_tokens += loss.masked_tokens;
            if (!loss.skipped) {
                apply_gradient(*trainable, loss.gradient, config.learning_rate);
                ++metrics.rl_updates;
            }
        }
    }

    if (!options.no_memory && !options.no_reflection) {
        for (std::size_t i = 0; i < store_candidates.size(); ++i) {
            if (memory_update(memory, store_candidates[i].first, store_candidates[i].second,
                              config.thresholds.tau_store, store_instance_ids[i],
                              options.iteration)) {
                ++metrics.memory_stores;
                metrics.memory_changed = true;
            }
        }
    }

    if (trainable) {
        if (options.use_od) {
            if (!od_items.empty()) {
                const OdResult od = od_loss(*trainable, od_items);
                metrics.loss_distill = od.loss;
                apply_gradient(*trainable, od.gradient, config.learning_rate);
            }
        } else if (!distill_items.empty()) {
            const LossResult loss = distill_batch_loss(*trainable, distill_items, config.clip_upper);
            metrics.loss_distill = loss.loss;
            if (!loss.skipped) apply_gradient(*trainable, loss.gradient, config.learning_rate);
        }
    }

    return metrics;
}

IterationMetrics rlvr_iteration(const TrainerConfig& config, Policy& rollout_policy,
                                TabularPolicy* trainable, const TabularPolicy* reference,
                                const Environment& env, const std::vector<EnvInstance>& instances,
                                const IterationOptions& options, const TraceSink& sink) {
    IterationMetrics metrics;
    metrics.iteration = options.iteration;
    const std::uint64_t iter_seed = rng::mix(options.seed, static_cast<std::uint64_t>(options.iteration));

    std::optional<TabularPolicy> snapshot;
    if (trainable) snapshot = *trainable;
    const std::string deploy_system = env.system_prompt();

    std::vector<std::vector<TrajectoryItem>> groups;
    std::vector<double> rewards;
    for (std::size_t inst_idx = 0; inst_idx < instances.size(); ++inst_idx) {
        const EnvInstance& instance = instances[inst_idx];
        const std::uint64_t inst_seed = rng::mix(iter_seed, static_cast<std::uint64_t>(inst_idx));
        EpisodeContext ctx{deploy_system, deploy_system};
        std::vector<EpisodeSpec> specs;
        for (int r = 0; r < config.rollouts_rlvr; ++r) {
            specs.push_back({&instance, ctx, rng::mix(inst_seed, 1, static_cast<std::uint64_t>(r)), 1});
        }
        std::vector<TrajectoryItem> group;
        for (const auto& bundle : roll_many(env, rollout_policy, config.sampling, specs, sink)) {
            if (bundle.discarded) {
                ++metrics.discarded_episodes;
                continue;
            }
            rewards.push_back(bundle.trace.final_reward);
            group.push_back(trajectory_from_trace(bundle.trace, UpdateKind::attempt1,
                                                  snapshot ? &*snapshot : nullptr, reference));
        }
        if (!group.empty()) groups.push_back(std::move(group));
    }

    metrics.attempt1_mean = mean_of(rewards);
    metrics.attempt1_count = static_cast<long>(rewards.size());
    metrics.attempt1_groups = static_cast<long>(groups.size());

    normalize_groups(groups, config.advantage_eps, metrics.dropped_groups);
    if (trainable && !groups.empty()) {
        const LossResult loss = policy_loss(*trainable, UpdateBatch{groups}, config.clip_lower,
                                            config.clip_upper, config.kl_coef);
        metrics.loss_attempt1 = loss.loss;
        metrics.masked_tokens += loss.masked_tokens;
        if (!loss.skipped) {
            apply_gradient(*trainable, loss.gradient, config.learning_rate);
            ++metrics.rl_updates;
        }
    }
    return metrics;
}

namespace {

nlohmann::ordered_json params_to_json(const TabularPolicy::ParamTable& params) {
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    for (const auto& [key, slot] : params) {
        nlohmann::ordered_json tokens = nlohmann::ordered_json::object();
        for (const auto& [token, logit] : slot) tokens[token] = logit;
        out[key] = std::move(tokens);
    }
    return out;
}

TabularPolicy::ParamTable params_from_json(const nlohmann::json& j) {
    TabularPolicy::ParamTable out;
    for (const auto& [key, slot] : j.items()) {
        for (const auto& [token, logit] : slot.items()) out[key][token] = logit.get<double>();
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
    nlohmann::ordered_json j{{"version", checkpoint.version},
                             {"iteration", checkpoint.iteration},
                             {"env", checkpoint.env_name},
                             {"algo", checkpoint.algo},
                             {"memory",
                              {{"text", checkpoint.memory.text},
                               {"source_instance_id", checkpoint.memory.source_instance_id},
                               {"stored_at_iteration", checkpoint.memory.stored_at_iteration}}},
                             {"params", params_to_json(checkpoint.params)},
                             {"reference_params", params_to_json(checkpoint.reference_params)}};
    const std::filesystem::path target(path);
    if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
    const std::filesystem::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw IoError("cannot write checkpoint: " + tmp.string());
        out << j.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, target);  // atomic replace
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    nlohmann::json j;
    in >> j;
    Checkpoint cp;
    cp.version = j.at("version").get<int>();
    if (cp.version != 1) throw Error("unsupported checkpoint version " + std::to_string(cp.version));
    cp.iteration = j.at("iteration").get<long>();
    cp.env_name = j.value("env", "");
    cp.algo = j.value("algo", "");
    cp.memory.text = j.at("memory").value("text", "");
    cp.memory.source_instance_id = j.at("memory").value("source_instance_id", "");
    cp.memory.stored_at_iteration = j.at("memory").value("stored_at_iteration", -1);
    cp.params = params_from_json(j.at("params"));
    cp.reference_params = params_from_json(j.at("reference_params"));
    return cp;
}

}  // namespace erl::trainer
