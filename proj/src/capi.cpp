#include "erl/erl.h"

#include <string>

#include "erl/errors.hpp"
#include "erl/harness.hpp"

struct erl_session {
    std::string last_error;
};

namespace {

erl_status fail(erl_session* session, erl_status status, const std::string& message) {
    if (session) session->last_error = message;
    return status;
}

template <typename Fn>
erl_status guarded(erl_session* session, Fn&& fn) {
    try {
        fn();
        if (session) session->last_error.clear();
        return ERL_OK;
    } catch (const erl::ConfigError& e) {
        return fail(session, ERL_ERR_CONFIG, e.what());
    } catch (const erl::GenerationError& e) {
        return fail(session, ERL_ERR_GENERATION, e.what());
    } catch (const erl::TransportError& e) {
        return fail(session, ERL_ERR_TRANSPORT, e.what());
    } catch (const erl::IoError& e) {
        return fail(session, ERL_ERR_IO, e.what());
    } catch (const std::exception& e) {
        return fail(session, ERL_ERR_INTERNAL, e.what());
    }
}

}  // namespace

extern "C" {

erl_session* erl_session_new(void) { return new erl_session{}; }

void erl_session_free(erl_session* session) { delete session; }

const char* erl_last_error(const erl_session* session) {
    return session ? session->last_error.c_str() : "";
}

const char* erl_version(void) { return "0.1.0"; }

erl_status erl_gen_dataset(erl_session* session, const char* env_name, long train_count,
                           long eval_count, unsigned long long seed, const char* out_dir) {
    if (!env_name || !out_dir)
        return fail(session, ERL_ERR_INVALID_ARGUMENT, "env_name and out_dir are required");
    return guarded(session, [&] {
        erl::harness::gen_dataset(env_name, train_count, eval_count, seed, out_dir);
    });
}

erl_status erl_train(erl_session* session, const char* config_path, const char* overrides) {
    if (!config_path) return fail(session, ERL_ERR_INVALID_ARGUMENT, "config_path is required");
    return guarded(session, [&] {
        erl::harness::ConfigParse parse = erl::harness::load_config(config_path);
        if (overrides && *overrides) erl::harness::apply_overrides(parse, overrides);
        const erl::harness::RunConfig config = erl::harness::validate_config(std::move(parse));
        erl::harness::run_train(config);
    });
}

erl_status erl_evaluate(erl_session* session, const char* checkpoint_path,
                        const char* dataset_path, int samples_per_prompt, const char* corpus_file,
                        const char* report_path) {
    if (!checkpoint_path || !dataset_path || !report_path)
        return fail(session, ERL_ERR_INVALID_ARGUMENT,
                    "checkpoint_path, dataset_path, and report_path are required");
    return guarded(session, [&] {
        const auto report =
            erl::harness::run_evaluate(checkpoint_path, dataset_path, samples_per_prompt,
                                       corpus_file ? corpus_file : "");
        erl::harness::write_eval_report(report_path, report);
    });
}

erl_status erl_smooth(const double* input, size_t length, size_t window, double* output) {
    if (!input || !output || window < 1) return ERL_ERR_INVALID_ARGUMENT;
    const std::vector<double> in(input, input + length);
    const auto out = erl::harness::smooth(in, static_cast<int>(window));
    for (size_t i = 0; i < length; ++i) output[i] = out[i];
    return ERL_OK;
}

erl_status erl_plot(erl_session* session, const char* metrics_csv, const char* out_svg,
                    size_t window) {
    if (!metrics_csv || !out_svg)
        return fail(session, ERL_ERR_INVALID_ARGUMENT, "metrics_csv and out_svg are required");
    return guarded(session, [&] {
        erl::harness::write_plot_svg(metrics_csv, out_svg,
                                     window >= 1 ? static_cast<int>(window) : 5);
    });
}

}  // extern "C"
