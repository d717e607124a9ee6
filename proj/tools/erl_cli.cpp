// Command-line front end; talks to the core exclusively through the C API.
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "erl/erl.h"

namespace {

int check(erl_session* session, erl_status status) {
    if (status == ERL_OK) return 0;
    std::fprintf(stderr, "error (%d): %s\n", static_cast<int>(status), erl_last_error(session));
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Experiential reinforcement learning harness"};
    app.require_subcommand(1);

    erl_session* session = erl_session_new();
    int rc = 0;

    // gen-dataset
    std::string gen_env = "frozenlake", gen_out = "data";
    long train_count = 10000, eval_count = 100;
    unsigned long long gen_seed = 0;
    auto* gen = app.add_subcommand("gen-dataset", "Generate disjoint train/eval instance files");
    gen->add_option("--env", gen_env, "frozenlake|sokoban|qa")->required();
    gen->add_option("--train-count", train_count, "training instances (default 10000)");
    gen->add_option("--eval-count", eval_count, "evaluation instances (default 100)");
    gen->add_option("--seed", gen_seed, "generation seed");
    gen->add_option("--out", gen_out, "output directory");
    gen->callback([&] {
        rc = check(session, erl_gen_dataset(session, gen_env.c_str(), train_count, eval_count,
                                            gen_seed, gen_out.c_str()));
    });

    // train
    std::string config_path, train_env, algo, ablate, backend, seed_override;
    auto* train = app.add_subcommand("train", "Run a training session from a config file");
    train->add_option("--config", config_path, "key = value config file")->required();
    train->add_option("--env", train_env, "override: frozenlake|sokoban|qa");
    train->add_option("--algo", algo, "override: erl|rlvr");
    train->add_option("--ablate", ablate, "override: no-memory|no-reflection");
    train->add_option("--backend", backend, "override: tabular|remote");
    train->add_option("--seed", seed_override, "override: run seed");
    train->callback([&] {
        std::string overrides;
        const auto add = [&overrides](const char* key, const std::string& value) {
            if (value.empty()) return;
            if (!overrides.empty()) overrides += "\n";
            overrides += std::string(key) + "=" + value;
        };
        add("env", train_env);
        add("algo", algo);
        add("ablate", ablate);
        add("backend", backend);
        add("seed", seed_override);
        rc = check(session, erl_train(session, config_path.c_str(),
                                      overrides.empty() ? nullptr : overrides.c_str()));
    });

    // eval
    std::string checkpoint, dataset, corpus, report = "eval_report.json";
    int samples = 4;
    auto* eval = app.add_subcommand("eval", "Deploy-form evaluation of a checkpoint");
    eval->add_option("--checkpoint", checkpoint, "checkpoint.json path")->required();
    eval->add_option("--dataset", dataset, "eval-split instance file")->required();
    eval->add_option("--samples", samples, "samples per prompt (default 4)");
    eval->add_option("--corpus", corpus, "corpus.jsonl (qa checkpoints)");
    eval->add_option("--report", report, "output report path");
    eval->callback([&] {
        rc = check(session, erl_evaluate(session, checkpoint.c_str(), dataset.c_str(), samples,
                                         corpus.empty() ? nullptr : corpus.c_str(),
                                         report.c_str()));
        if (rc == 0) std::printf("report written to %s\n", report.c_str());
    });

    // plot
    std::string metrics, svg = "metrics.svg";
    size_t window = 5;
    auto* plot = app.add_subcommand("plot", "Smoothed reward curves from a metrics CSV");
    plot->add_option("--metrics", metrics, "metrics.csv path")->required();
    plot->add_option("--out", svg, "output SVG path");
    plot->add_option("--window", window, "smoothing window (default 5)");
    plot->callback([&] {
        rc = check(session, erl_plot(session, metrics.c_str(), svg.c_str(), window));
        if (rc == 0) std::printf("plot written to %s\n", svg.c_str());
    });

    CLI11_PARSE(app, argc, argv);
    erl_session_free(session);
    return rc;
}
