#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "erl/env.hpp"
#include "erl/qa.hpp"
#include "erl/trainer.hpp"

namespace erl::harness {

// Flat key = value run configuration ('#' comments, blank lines ignored).
struct RunConfig {
    std::string env = "frozenlake";       // frozenlake | sokoban | qa
    std::string algo = "erl";             // erl | rlvr
    std::string backend = "tabular";      // tabular | remote
    std::string ablate = "none";          // none | no-memory | no-reflection
    std::uint64_t seed = 0;
    long iterations = 50;
    std::string train_file;
    std::string eval_file;
    std::string corpus_file;  // qa only
    std::string out_dir = "runs/out";
    std::string trace_file;   // optional episode log (jsonl)
    int eval_samples_per_prompt = 4;
    int checkpoint_every = 5;
    bool use_od = false;
    std::string remote_model = "default";
    int remote_concurrency = 4;
    trainer::TrainerConfig trainer;
};

struct ConfigParse {
    RunConfig config;
    std::vector<std::string> errors;  // field-level diagnostics
    bool ok() const { return errors.empty(); }
};

ConfigParse parse_config_text(const std::string& text);
ConfigParse load_config(const std::string& path);
// overrides: newline- or comma-separated key=value pairs
void apply_overrides(ConfigParse& parse, const std::string& overrides);
// Throws ConfigError when invalid.
RunConfig validate_config(ConfigParse parse);

struct MetricsRow {
    long iteration = 0;
    double wall_clock_s = 0.0;
    std::string split;  // train | eval
    std::string phase;  // attempt1 | attempt2 | deploy
    double mean_reward = 0.0;
    long group_count = 0;
    bool memory_changed = false;
};

inline constexpr char kMetricsHeader[] =
    "iteration,wall_clock_s,split,phase,mean_reward,group_count,memory_changed";

class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path);
    void append(const MetricsRow& row);
    const std::string& path() const { return path_; }

private:
    std::string path_;
    double last_wall_clock_ = 0.0;
};

std::vector<MetricsRow> load_metrics(const std::string& path);

// Trailing moving average: out[i] = mean(in[max(0, i-window+1) ..= i]).
std::vector<double> smooth(const std::vector<double>& series, int window = 5);

// Writes disjoint train/eval instance files (and the corpus for qa),
// deterministic in seed. Returns the file paths written.
struct DatasetPaths {
    std::string train_file;
    std::string eval_file;
    std::string corpus_file;  // empty unless qa
};
DatasetPaths gen_dataset(const std::string& env_name, long train_count, long eval_count,
                         std::uint64_t seed, const std::string& out_dir);

// Environment + dataset wiring for one run.
std::unique_ptr<Environment> make_environment(const std::string& env_name,
                                              const std::string& corpus_file = "");
std::vector<EnvInstance> load_dataset(const std::string& env_name, const std::string& path);

struct TrainResult {
    std::string checkpoint_path;
    std::string metrics_path;
    long iterations = 0;
    double final_eval_reward = 0.0;
};

// Runs erl or rlvr iterations per config, evaluating on the eval split every
// eval_every iterations (deploy form) and checkpointing atomically.
TrainResult run_train(const RunConfig& config);

struct EvalRow {
    std::string instance_id;
    int sample_index = 0;
    double reward = 0.0;
    bool truncated = false;
};

struct EvalReport {
    double mean_reward = 0.0;
    std::vector<EvalRow> rows;
};

// Deploy-form evaluation of a checkpoint: no reflection, no memory in the
// conditioning. Refuses datasets that are not an eval split. Never mutates
// the checkpoint.
EvalReport run_evaluate(const std::string& checkpoint_path, const std::string& dataset_path,
                        int samples_per_prompt, const std::string& corpus_file = "");
void write_eval_report(const std::string& path, const EvalReport& report);

// Smoothed reward curves (one polyline per split/phase) as a standalone SVG.
void write_plot_svg(const std::string& metrics_csv, const std::string& out_svg, int window = 5);

}  // namespace erl::harness
