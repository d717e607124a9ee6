/* C interface to the experiential reinforcement learning core.
 *
 * All functions that can fail return an erl_status; the session keeps the
 * last error message. Handles are opaque; free them with the matching
 * *_free call.
 */
#ifndef ERL_ERL_H
#define ERL_ERL_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum erl_status {
    ERL_OK = 0,
    ERL_ERR_INVALID_ARGUMENT = 1,
    ERL_ERR_IO = 2,
    ERL_ERR_CONFIG = 3,
    ERL_ERR_GENERATION = 4,
    ERL_ERR_TRANSPORT = 5,
    ERL_ERR_INTERNAL = 6
} erl_status;

typedef struct erl_session erl_session;

erl_session* erl_session_new(void);
void erl_session_free(erl_session* session);

/* Message for the last failing call on this session; empty string if none.
 * The pointer stays valid until the next call on the same session. */
const char* erl_last_error(const erl_session* session);

const char* erl_version(void);

/* Writes disjoint train/eval instance files (plus corpus.jsonl for "qa")
 * under out_dir, deterministic in seed. */
erl_status erl_gen_dataset(erl_session* session, const char* env_name, long train_count,
                           long eval_count, unsigned long long seed, const char* out_dir);

/* Runs a training session from a key=value config file. `overrides` is an
 * optional newline- or comma-separated key=value list applied on top (may
 * be NULL). */
erl_status erl_train(erl_session* session, const char* config_path, const char* overrides);

/* Deploy-form evaluation of a checkpoint against an eval-split dataset.
 * Writes a JSON report to report_path; corpus_file may be NULL except for
 * QA checkpoints. */
erl_status erl_evaluate(erl_session* session, const char* checkpoint_path,
                        const char* dataset_path, int samples_per_prompt,
                        const char* corpus_file, const char* report_path);

/* Trailing moving average over `window` points; output length equals input
 * length. Pure; no session needed. */
erl_status erl_smooth(const double* input, size_t length, size_t window, double* output);

/* Renders smoothed reward curves from a metrics CSV to a standalone SVG. */
erl_status erl_plot(erl_session* session, const char* metrics_csv, const char* out_svg,
                    size_t window);

#ifdef __cplusplus
}
#endif

#endif /* ERL_ERL_H */
