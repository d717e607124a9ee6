#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "erl/errors.hpp"
#include "erl/frozenlake.hpp"
#include "erl/harness.hpp"
#include "erl/rng.hpp"

using namespace erl;
using namespace erl::harness;

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::path("harness_tmp") / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& child = "") const {
        return child.empty() ? path.string() : (path / child).string();
    }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string demo_config_text(const TempDir& dir, const DatasetPaths& data) {
    return "env = frozenlake\n"
           "algo = erl\n"
           "backend = tabular\n"
           "seed = 7\n"
           "iterations = 6\n"
           "learning_rate = 0.5\n"
           "batch = 4\n"
           "rollouts_erl_per_attempt = 2\n"
           "rollouts_rlvr = 4\n"
           "eval_every = 3\n"
           "eval_samples_per_prompt = 2\n"
           "train_file = " + data.train_file + "\n"
           "eval_file = " + data.eval_file + "\n"
           "out_dir = " + dir.str("run") + "\n";
}

}  // namespace

TEST_CASE("smooth: trailing moving average examples") {
    CHECK(smooth({1, 1, 1, 1}, 5) == std::vector<double>{1, 1, 1, 1});
    const auto s = smooth({0, 0, 0, 0, 5}, 5);
    CHECK(s.back() == doctest::Approx(1.0));
    CHECK(smooth({3.5}, 5) == std::vector<double>{3.5});
    CHECK(smooth({}, 5).empty());
    const auto w1 = smooth({4, 2, 9}, 1);
    CHECK(w1 == std::vector<double>{4, 2, 9});
}

TEST_CASE("smooth: preserves length and the range envelope") {
    rng::SplitMix64 g(606);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> series(g.next_range(1, 40));
        for (auto& v : series) v = g.next_double();
        const auto out = smooth(series, 5);
        REQUIRE(out.size() == series.size());
        const double lo = *std::min_element(series.begin(), series.end());
        const double hi = *std::max_element(series.begin(), series.end());
        for (const double v : out) {
            REQUIRE(v >= lo - 1e-12);
            REQUIRE(v <= hi + 1e-12);
        }
    }
}

TEST_CASE("smooth matches a direct window recomputation") {
    rng::SplitMix64 g(607);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> series(g.next_range(1, 60));
        for (auto& v : series) v = g.next_real(-3.0, 3.0);
        const int window = 1 + static_cast<int>(g.next_range(0, 7));
        const auto out = smooth(series, window);
        for (std::size_t i = 0; i < series.size(); ++i) {
            double sum = 0.0;
            int n = 0;
            for (std::size_t j = (i + 1 >= static_cast<std::size_t>(window))
                                     ? i + 1 - window
                                     : 0;
                 j <= i; ++j, ++n)
                sum += series[j];
            REQUIRE(out[i] == doctest::Approx(sum / n).epsilon(1e-12));
        }
    }
}

TEST_CASE("config: parse, overrides, and field-level diagnostics") {
    ConfigParse parse = parse_config_text(
        "# comment\n"
        "env = sokoban\n"
        "learning_rate = 0.25\n"
        "iterations = 12\n");
    CHECK(parse.ok());
    CHECK(parse.config.env == "sokoban");
    CHECK(parse.config.trainer.learning_rate == doctest::Approx(0.25));

    apply_overrides(parse, "algo=rlvr,seed=9\nbatch=16");
    CHECK(parse.config.algo == "rlvr");
    CHECK(parse.config.seed == 9);
    CHECK(parse.config.trainer.batch == 16);

    ConfigParse bad = parse_config_text(
        "env = marsrover\n"
        "learning_rate = fast\n"
        "mystery_knob = 3\n"
        "tau_gate = 1.5\n"
        "train_file = t.jsonl\n"
        "eval_file = e.jsonl\n");
    CHECK_FALSE(bad.ok());
    try {
        validate_config(std::move(bad));
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        CHECK(what.find("env:") != std::string::npos);
        CHECK(what.find("learning_rate:") != std::string::npos);
        CHECK(what.find("mystery_knob") != std::string::npos);
        CHECK(what.find("tau_gate:") != std::string::npos);
    }
}

TEST_CASE("config: qa plus tabular backend is refused") {
    ConfigParse parse = parse_config_text(
        "env = qa\n"
        "backend = tabular\n"
        "train_file = t\n"
        "eval_file = e\n"
        "corpus_file = c\n");
    CHECK(parse.ok());
    CHECK_THROWS_AS(validate_config(std::move(parse)), ConfigError);
}

TEST_CASE("gen_dataset: defaults are disjoint and deterministic") {
    TempDir dir("gen");
    const DatasetPaths a = gen_dataset("frozenlake", 50, 10, 123, dir.str("a"));
    const DatasetPaths b = gen_dataset("frozenlake", 50, 10, 123, dir.str("b"));
    CHECK(read_file(a.train_file) == read_file(b.train_file));
    CHECK(read_file(a.eval_file) == read_file(b.eval_file));

    const auto train = load_dataset("frozenlake", a.train_file);
    const auto eval = load_dataset("frozenlake", a.eval_file);
    CHECK(train.size() == 50);
    CHECK(eval.size() == 10);
    std::set<std::string> ids;
    for (const auto& inst : train) {
        CHECK(inst.split == Split::train);
        ids.insert(inst.id);
    }
    for (const auto& inst : eval) {
        CHECK(inst.split == Split::eval);
        CHECK(ids.count(inst.id) == 0);
    }

    const DatasetPaths single = gen_dataset("sokoban", 3, 1, 5, dir.str("c"));
    CHECK(load_dataset("sokoban", single.eval_file).size() == 1);
    CHECK_THROWS_AS(gen_dataset("frozenlake", 0, 1, 0, dir.str("d")), Error);
}

TEST_CASE("gen_dataset: qa emits a corpus answering its own questions") {
    TempDir dir("genqa");
    const DatasetPaths paths = gen_dataset("qa", 12, 4, 42, dir.str());
    REQUIRE_FALSE(paths.corpus_file.empty());
    const auto corpus = qa::load_corpus(paths.corpus_file);
    CHECK(corpus.size() > 12);
    const auto train = load_dataset("qa", paths.train_file);
    REQUIRE(train.size() == 12);

    // Every question's gold answer appears somewhere in the corpus text.
    for (const auto& inst : train) {
        const auto q = qa::qa_from_instance(inst);
        bool found = false;
        for (const auto& doc : corpus) {
            if (qa::normalize(doc.title + " " + doc.text).find(qa::normalize(q.gold_answer)) !=
                std::string::npos) {
                found = true;
                break;
            }
        }
        CAPTURE(q.question);
        CHECK(found);
    }
}

TEST_CASE("metrics: writer produces the pinned header and monotone wall clock") {
    TempDir dir("metrics");
    const std::string path = dir.str("metrics.csv");
    MetricsWriter writer(path);
    writer.append({1, 0.5, "train", "attempt1", 0.25, 4, false});
    writer.append({1, 0.4, "train", "attempt2", 0.5, 2, true});  // clock clamped up
    writer.append({2, 0.9, "eval", "deploy", 0.75, 8, false});

    const std::string text = read_file(path);
    CHECK(text.rfind("iteration,wall_clock_s,split,phase,mean_reward,group_count,memory_changed",
                     0) == 0);
    const auto rows = load_metrics(path);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].iteration == 1);
    CHECK(rows[1].wall_clock_s >= rows[0].wall_clock_s);
    CHECK(rows[1].memory_changed);
    CHECK(rows[2].phase == "deploy");
    CHECK(rows[2].mean_reward == doctest::Approx(0.75));
}

TEST_CASE("run_train: end-to-end tiny run writes metrics, checkpoint, eval rows") {
    TempDir dir("train");
    const DatasetPaths data = gen_dataset("frozenlake", 6, 3, 11, dir.str("data"));
    ConfigParse parse = parse_config_text(demo_config_text(dir, data));
    REQUIRE(parse.ok());
    const RunConfig config = validate_config(std::move(parse));
    const TrainResult result = run_train(config);

    CHECK(fs::exists(result.checkpoint_path));
    const auto rows = load_metrics(result.metrics_path);
    REQUIRE_FALSE(rows.empty());
    // eval cadence 3 over 6 iterations: deploy rows at 3 and 6
    std::vector<long> eval_iters;
    double last_clock = 0.0;
    for (const auto& row : rows) {
        CHECK(row.mean_reward >= 0.0);
        CHECK(row.mean_reward <= 1.0);
        CHECK(row.wall_clock_s >= last_clock);
        last_clock = row.wall_clock_s;
        if (row.split == "eval") {
            CHECK(row.phase == "deploy");
            eval_iters.push_back(row.iteration);
            CHECK(row.group_count == 3 * 2);  // instances x samples_per_prompt
        }
    }
    CHECK(eval_iters == std::vector<long>{3, 6});

    const auto cp = trainer::load_checkpoint(result.checkpoint_path);
    CHECK(cp.iteration == 6);
    CHECK(cp.env_name == "frozenlake");
    CHECK(cp.algo == "erl");
}

TEST_CASE("run_train: identical seeds reproduce the metrics stream") {
    TempDir dir("trainrep");
    const DatasetPaths data = gen_dataset("frozenlake", 5, 2, 3, dir.str("data"));
    const auto run_once = [&](const std::string& out) {
        ConfigParse parse = parse_config_text(demo_config_text(dir, data));
        apply_overrides(parse, "out_dir=" + dir.str(out) + ",iterations=4");
        const TrainResult r = run_train(validate_config(std::move(parse)));
        auto rows = load_metrics(r.metrics_path);
        std::string digest;
        for (const auto& row : rows) {
            digest += std::to_string(row.iteration) + "|" + row.split + "|" + row.phase + "|" +
                      std::to_string(row.mean_reward) + "|" + std::to_string(row.group_count) +
                      "|" + (row.memory_changed ? "1" : "0") + "\n";
        }
        return digest;
    };
    CHECK(run_once("r1") == run_once("r2"));
}

TEST_CASE("run_train: trace log captures one episode per line") {
    TempDir dir("traces");
    const DatasetPaths data = gen_dataset("frozenlake", 3, 1, 2, dir.str("data"));
    ConfigParse parse = parse_config_text(demo_config_text(dir, data));
    apply_overrides(parse, "iterations=2,trace_file=" + dir.str("run/traces.jsonl"));
    run_train(validate_config(std::move(parse)));
    std::ifstream in(dir.str("run/traces.jsonl"));
    REQUIRE(in.good());
    std::string line;
    long episodes = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const EpisodeTrace trace = trace_from_json(nlohmann::json::parse(line));
        CHECK_FALSE(trace.instance_id.empty());
        ++episodes;
    }
    CHECK(episodes > 0);
}

TEST_CASE("run_evaluate: deploy form, purity, and refusal of non-eval splits") {
    TempDir dir("eval");
    const DatasetPaths data = gen_dataset("frozenlake", 4, 2, 21, dir.str("data"));
    ConfigParse parse = parse_config_text(demo_config_text(dir, data));
    apply_overrides(parse, "iterations=2");
    const RunConfig config = validate_config(std::move(parse));
    const TrainResult trained = run_train(config);

    const std::string before = read_file(trained.checkpoint_path);
    const EvalReport report = run_evaluate(trained.checkpoint_path, data.eval_file, 3);
    CHECK(report.rows.size() == 2 * 3);  // instance count x samples_per_prompt
    CHECK(report.mean_reward >= 0.0);
    CHECK(report.mean_reward <= 1.0);
    CHECK(read_file(trained.checkpoint_path) == before);  // evaluation never mutates

    CHECK_THROWS_AS(run_evaluate(trained.checkpoint_path, data.train_file, 1), Error);

    const std::string report_path = dir.str("report.json");
    write_eval_report(report_path, report);
    const auto parsed = nlohmann::json::parse(read_file(report_path));
    CHECK(parsed["rows"].size() == 6);
}

TEST_CASE("uniform policy on 2x2 zero-hole lakes succeeds at the enumerated Markov rate") {
    // Exact DP oracle over the 8-step uniform random walk on the 2x2 board
    // with start (0,0), goal (1,1): states 0=(0,0), 1=(0,1), 2=(1,0).
    // From 0: 2 self-loops, -> 1, -> 2. From 1: 2 self-loops, -> 0, -> goal.
    const auto dp_success = [] {
        double p[3] = {1.0, 0.0, 0.0};
        double success = 0.0;
        for (int step = 0; step < 8; ++step) {
            double next[3] = {0.0, 0.0, 0.0};
            next[0] += p[0] * 0.5;
            next[1] += p[0] * 0.25;
            next[2] += p[0] * 0.25;
            next[1] += p[1] * 0.5;
            next[0] += p[1] * 0.25;
            success += p[1] * 0.25;
            next[2] += p[2] * 0.5;
            next[0] += p[2] * 0.25;
            success += p[2] * 0.25;
            p[0] = next[0];
            p[1] = next[1];
            p[2] = next[2];
        }
        return success;
    }();

    TempDir dir("markov");
    frozenlake::LakeInstance lake;
    lake.n = 2;
    lake.cells = "ADDB";
    lake.start_row = 0;
    lake.start_col = 0;
    lake.goal_row = 1;
    lake.goal_col = 1;
    lake.frozen_prob = 0.7;
    std::vector<EnvInstance> eval_set;
    EnvInstance inst;
    inst.id = "fl-eval-000000";
    inst.split = Split::eval;
    inst.payload = frozenlake::lake_payload(lake);
    eval_set.push_back(inst);
    save_instances(dir.str("eval.jsonl"), eval_set);

    trainer::Checkpoint cp;
    cp.env_name = "frozenlake";
    cp.algo = "rlvr";
    save_checkpoint(dir.str("checkpoint.json"), cp);

    // 1500 samples: binomial std ~ 0.012, so a 0.05 tolerance is comfortable.
    const EvalReport report = run_evaluate(dir.str("checkpoint.json"), dir.str("eval.jsonl"), 1500);
    CHECK(dp_success > 0.3);  // "well above zero"
    CHECK(report.mean_reward == doctest::Approx(dp_success).epsilon(0.12));
    CHECK(report.mean_reward > 0.3);
}

TEST_CASE("plot: writes an SVG with one polyline per split/phase") {
    TempDir dir("plot");
    const std::string metrics_path = dir.str("metrics.csv");
    MetricsWriter writer(metrics_path);
    for (long it = 1; it <= 10; ++it) {
        writer.append({it, it * 0.1, "train", "attempt1", 0.1 * it < 1.0 ? 0.1 * it : 1.0, 4, false});
        if (it % 5 == 0) writer.append({it, it * 0.1, "eval", "deploy", 0.05 * it, 8, false});
    }
    const std::string svg_path = dir.str("metrics.svg");
    write_plot_svg(metrics_path, svg_path, 5);
    const std::string svg = read_file(svg_path);
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("train/attempt1") != std::string::npos);
    CHECK(svg.find("eval/deploy") != std::string::npos);
    CHECK(std::count(svg.begin(), svg.end(), '\n') > 10);
}
