#include "erl/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "erl/errors.hpp"
#include "erl/frozenlake.hpp"
#include "erl/remote.hpp"
#include "erl/rng.hpp"
#include "erl/sokoban.hpp"

namespace erl::harness {

namespace {

namespace fs = std::filesystem;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

struct FieldSetter {
    RunConfig* cfg;
    std::vector<std::string>* errors;

    void note(const std::string& field, const std::string& msg) {
        errors->push_back(field + ": " + msg);
    }

    bool to_double(const std::string& field, const std::string& value, double& out) {
        try {
            std::size_t used = 0;
            out = std::stod(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
            return true;
        } catch (const std::exception&) {
            note(field, "expected a number, got '" + value + "'");
            return false;
        }
    }

    bool to_long(const std::string& field, const std::string& value, long& out) {
        try {
            std::size_t used = 0;
            out = std::stol(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
            return true;
        } catch (const std::exception&) {
            note(field, "expected an integer, got '" + value + "'");
            return false;
        }
    }

    bool to_bool(const std::string& field, const std::string& value, bool& out) {
        if (value == "true" || value == "1" || value == "yes") {
            out = true;
            return true;
        }
        if (value == "false" || value == "0" || value == "no") {
            out = false;
            return true;
        }
        note(field, "expected true/false, got '" + value + "'");
        return false;
    }

    void set(const std::string& key, const std::string& value) {
        auto& t = cfg->trainer;
        long l = 0;
        double d = 0.0;
        bool b = false;
        if (key == "env") cfg->env = value;
        else if (key == "algo") cfg->algo = value;
        else if (key == "backend") cfg->backend = value;
        else if (key == "ablate") cfg->ablate = value;
        else if (key == "seed") { if (to_long(key, value, l)) cfg->seed = static_cast<std::uint64_t>(l); }
        else if (key == "iterations") { if (to_long(key, value, l)) cfg->iterations = l; }
        else if (key == "train_file") cfg->train_file = value;
        else if (key == "eval_file") cfg->eval_file = value;
        else if (key == "corpus_file") cfg->corpus_file = value;
        else if (key == "out_dir") cfg->out_dir = value;
        else if (key == "trace_file") cfg->trace_file = value;
        else if (key == "eval_samples_per_prompt") { if (to_long(key, value, l)) cfg->eval_samples_per_prompt = static_cast<int>(l); }
        else if (key == "checkpoint_every") { if (to_long(key, value, l)) cfg->checkpoint_every = static_cast<int>(l); }
        else if (key == "use_od") { if (to_bool(key, value, b)) cfg->use_od = b; }
        else if (key == "remote_model") cfg->remote_model = value;
        else if (key == "remote_concurrency") { if (to_long(key, value, l)) cfg->remote_concurrency = static_cast<int>(l); }
        else if (key == "learning_rate") { if (to_double(key, value, d)) t.learning_rate = d; }
        else if (key == "batch") { if (to_long(key, value, l)) t.batch = static_cast<int>(l); }
        else if (key == "rollouts_rlvr") { if (to_long(key, value, l)) t.rollouts_rlvr = static_cast<int>(l); }
        else if (key == "rollouts_erl_per_attempt") { if (to_long(key, value, l)) t.rollouts_erl_per_attempt = static_cast<int>(l); }
        else if (key == "clip_upper") { if (to_double(key, value, d)) t.clip_upper = d; }
        else if (key == "clip_lower") { if (to_double(key, value, d)) t.clip_lower = d; }
        else if (key == "kl_coef") { if (to_double(key, value, d)) t.kl_coef = d; }
        else if (key == "eval_every") { if (to_long(key, value, l)) t.eval_every = static_cast<int>(l); }
        else if (key == "advantage_eps") { if (to_double(key, value, d)) t.advantage_eps = d; }
        else if (key == "tau_gate") { if (to_double(key, value, d)) t.thresholds.tau_gate = d; }
        else if (key == "tau_store") { if (to_double(key, value, d)) t.thresholds.tau_store = d; }
        else if (key == "temperature") { if (to_double(key, value, d)) t.sampling.temperature = d; }
        else if (key == "top_p") { if (to_double(key, value, d)) t.sampling.top_p = d; }
        else if (key == "top_k") { if (to_long(key, value, l)) t.sampling.top_k = static_cast<int>(l); }
        else if (key == "max_tokens") { if (to_long(key, value, l)) t.sampling.max_tokens = static_cast<int>(l); }
        else note(key, "unknown configuration key");
    }
};

}  // namespace

ConfigParse parse_config_text(const std::string& text) {
    ConfigParse parse;
    FieldSetter setter{&parse.config, &parse.errors};
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            parse.errors.push_back("line " + std::to_string(line_no) + ": expected key = value");
            continue;
        }
        setter.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return parse;
}

ConfigParse load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str());
}

void apply_overrides(ConfigParse& parse, const std::string& overrides) {
    FieldSetter setter{&parse.config, &parse.errors};
    std::string chunk;
    std::istringstream is(overrides);
    while (std::getline(is, chunk)) {
        std::istringstream parts(chunk);
        std::string pair;
        while (std::getline(parts, pair, ',')) {
            pair = trim(pair);
            if (pair.empty()) continue;
            const auto eq = pair.find('=');
            if (eq == std::string::npos) {
                parse.errors.push_back("override '" + pair + "': expected key=value");
                continue;
            }
            setter.set(trim(pair.substr(0, eq)), trim(pair.substr(eq + 1)));
        }
    }
}

RunConfig validate_config(ConfigParse parse) {
    auto& errors = parse.errors;
    const RunConfig& c = parse.config;
    const auto& t = c.trainer;
    if (c.env != "frozenlake" && c.env != "sokoban" && c.env != "qa")
        errors.push_back("env: must be frozenlake, sokoban, or qa (got '" + c.env + "')");
    if (c.algo != "erl" && c.algo != "rlvr")
        errors.push_back("algo: must be erl or rlvr (got '" + c.algo + "')");
    if (c.backend != "tabular" && c.backend != "remote")
        errors.push_back("backend: must be tabular or remote (got '" + c.backend + "')");
    if (c.ablate != "none" && c.ablate != "no-memory" && c.ablate != "no-reflection")
        errors.push_back("ablate: must be none, no-memory, or no-reflection (got '" + c.ablate + "')");
    if (c.env == "qa" && c.backend == "tabular")
        errors.push_back("backend: the tabular backend needs a finite action vocabulary; qa supports the remote backend");
    if (c.env == "qa" && c.corpus_file.empty())
        errors.push_back("corpus_file: required for the qa environment");
    if (c.iterations < 1) errors.push_back("iterations: must be >= 1");
    if (c.eval_samples_per_prompt < 1) errors.push_back("eval_samples_per_prompt: must be >= 1");
    if (c.checkpoint_every < 1) errors.push_back("checkpoint_every: must be >= 1");
    if (t.learning_rate <= 0) errors.push_back("learning_rate: must be positive");
    if (t.batch < 1) errors.push_back("batch: must be >= 1");
    if (t.rollouts_rlvr < 2) errors.push_back("rollouts_rlvr: must be >= 2 for grouped advantages");
    if (t.rollouts_erl_per_attempt < 2)
        errors.push_back("rollouts_erl_per_attempt: must be >= 2 for grouped advantages");
    if (t.clip_upper <= 0) errors.push_back("clip_upper: must be positive");
    if (t.clip_lower <= 0 || t.clip_lower >= 1) errors.push_back("clip_lower: must be in (0, 1)");
    if (t.kl_coef < 0) errors.push_back("kl_coef: must be >= 0");
    if (t.eval_every < 1) errors.push_back("eval_every: must be >= 1");
    if (t.advantage_eps <= 0) errors.push_back("advantage_eps: must be positive");
    if (t.thresholds.tau_gate <= 0 || t.thresholds.tau_gate > 1)
        errors.push_back("tau_gate: must be in (0, 1]");
    if (t.thresholds.tau_store <= 0 || t.thresholds.tau_store > 1)
        errors.push_back("tau_store: must be in (0, 1]");
    if (t.sampling.temperature < 0) errors.push_back("temperature: must be >= 0");
    if (t.sampling.top_p <= 0 || t.sampling.top_p > 1) errors.push_back("top_p: must be in (0, 1]");
    if (t.sampling.top_k < 0) errors.push_back("top_k: must be >= 0");
    if (c.remote_concurrency < 1) errors.push_back("remote_concurrency: must be >= 1");
    if (c.train_file.empty()) errors.push_back("train_file: required");
    if (c.eval_file.empty()) errors.push_back("eval_file: required");
    if (!errors.empty()) throw ConfigError(errors);
    return parse.config;
}

MetricsWriter::MetricsWriter(const std::string& path) : path_(path) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write metrics file: " + path);
    out << kMetricsHeader << "\n";
}

void MetricsWriter::append(const MetricsRow& row) {
    std::ofstream out(path_, std::ios::app);
    if (!out) throw IoError("cannot append metrics file: " + path_);
    const double wall = std::max(row.wall_clock_s, last_wall_clock_);
    last_wall_clock_ = wall;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%ld,%.3f,%s,%s,%.6f,%ld,%s", row.iteration, wall,
                  row.split.c_str(), row.phase.c_str(), row.mean_reward, row.group_count,
                  row.memory_changed ? "true" : "false");
    out << buf << "\n";
}

std::vector<MetricsRow> load_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics file: " + path);
    std::vector<MetricsRow> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (first) {
            first = false;
            continue;  // header
        }
        if (trim(line).empty()) continue;
        std::istringstream is(line);
        std::string field;
        MetricsRow row;
        std::getline(is, field, ',');
        row.iteration = std::stol(field);
        std::getline(is, field, ',');
        row.wall_clock_s = std::stod(field);
        std::getline(is, row.split, ',');
        std::getline(is, row.phase, ',');
        std::getline(is, field, ',');
        row.mean_reward = std::stod(field);
        std::getline(is, field, ',');
        row.group_count = std::stol(field);
        std::getline(is, field, ',');
        row.memory_changed = field == "true" || field == "1";
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<double> smooth(const std::vector<double>& series, int window) {
    if (window < 1) throw Error("smooth: window must be >= 1");
    std::vector<double> out(series.size());
    // Direct per-window summation in ascending order, so any independent
    // recomputation with the same order reproduces it bit for bit.
    for (std::size_t i = 0; i < series.size(); ++i) {
        const std::size_t lo = i + 1 >= static_cast<std::size_t>(window)
                                   ? i + 1 - static_cast<std::size_t>(window)
                                   : 0;
        double sum = 0.0;
        for (std::size_t j = lo; j <= i; ++j) sum += series[j];
        out[i] = sum / static_cast<double>(i - lo + 1);
    }
    return out;
}

namespace {

std::string two_digit_env_tag(const std::string& env_name) {
    if (env_name == "frozenlake") return "fl";
    if (env_name == "sokoban") return "sk";
    return "qa";
}

std::string instance_id(const std::string& tag, Split split, long index) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s-%s-%06ld", tag.c_str(), to_string(split).c_str(), index);
    return buf;
}

EnvInstance make_grid_instance(const std::string& env_name, Split split, long index,
                               std::uint64_t inst_seed, const std::string& tag) {
    EnvInstance inst;
    inst.id = instance_id(tag, split, index);
    inst.seed = inst_seed;
    inst.split = split;
    if (env_name == "frozenlake") {
        inst.payload = frozenlake::lake_payload(frozenlake::generate_lake(inst_seed));
    } else {
        inst.payload = sokoban::sokoban_payload(sokoban::generate_sokoban(inst_seed));
    }
    return inst;
}

// Synthetic fact world for the desk-scale QA corpus: invented people, books,
// cities, and countries with abstract names, supporting one- and two-hop
// questions through the search tool.
struct QaWorld {
    struct Person {
        std::string name, city, country, profession, book;
    };
    std::vector<Person> people;
    std::vector<std::pair<std::string, std::string>> cities;  // city -> country
};

std::string make_word(rng::SplitMix64& g, int syllables, bool capitalize) {
    static const char* consonants = "bdfgklmnprstvz";
    static const char* vowels = "aeiou";
    std::string w;
    for (int s = 0; s < syllables; ++s) {
        w += consonants[g.next_range(0, 13)];
        w += vowels[g.next_range(0, 4)];
    }
    if (g.next_double() < 0.5) w += consonants[g.next_range(0, 13)];
    if (capitalize) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    return w;
}

QaWorld make_qa_world(std::uint64_t seed, long n_people) {
    QaWorld world;
    rng::SplitMix64 g(rng::mix(seed, 0x9a17u));
    static const std::vector<std::string> professions{
        "cartographer", "beekeeper", "astronomer", "sculptor",
        "violinist",    "archivist", "botanist",   "glassblower"};

    std::set<std::string> used;
    const long n_cities = std::max<long>(4, n_people / 4);
    for (long i = 0; i < n_cities; ++i) {
        std::string city, country;
        do { city = make_word(g, 2, true); } while (!used.insert(city).second);
        do { country = make_word(g, 3, true); } while (!used.insert(country).second);
        world.cities.emplace_back(city, country);
    }
    for (long i = 0; i < n_people; ++i) {
        QaWorld::Person p;
        std::string given, family;
        do {
            given = make_word(g, 2, true);
            family = make_word(g, 2, true);
            p.name = given + " " + family;
        } while (!used.insert(p.name).second);
        const auto& city = world.cities[g.next_range(0, world.cities.size() - 1)];
        p.city = city.first;
        p.country = city.second;
        p.profession = professions[g.next_range(0, professions.size() - 1)];
        std::string token;
        do { token = make_word(g, 3, true); } while (!used.insert(token).second);
        p.book = "The Chronicle of " + token;
        world.people.push_back(std::move(p));
    }
    return world;
}

std::vector<qa::CorpusDoc> world_corpus(const QaWorld& world) {
    std::vector<qa::CorpusDoc> docs;
    long idx = 0;
    for (const auto& p : world.people) {
        char id[32];
        std::snprintf(id, sizeof(id), "doc-p%05ld", idx++);
        const bool vowel = std::string("aeiou").find(p.profession.front()) != std::string::npos;
        docs.push_back({id, p.name,
                        p.name + " is " + (vowel ? "an " : "a ") + p.profession + ". " + p.name +
                            " was born in " + p.city + ". " + p.name + " wrote the book " +
                            p.book + "."});
    }
    idx = 0;
    for (const auto& [city, country] : world.cities) {
        char id[32];
        std::snprintf(id, sizeof(id), "doc-c%05ld", idx++);
        docs.push_back({id, city, city + " is a city in " + country + "."});
    }
    return docs;
}

EnvInstance make_qa_question(const QaWorld& world, Split split, long ordinal, long person_index,
                             std::uint64_t inst_seed) {
    const auto& p = world.people[static_cast<std::size_t>(person_index) % world.people.size()];
    std::string question, gold;
    switch (person_index % 4) {
        case 0:
            question = "Where was " + p.name + " born?";
            gold = p.city;
            break;
        case 1:
            question = "Who wrote " + p.book + "?";
            gold = p.name;
            break;
        case 2:
            question = "In which country was the author of " + p.book + " born?";
            gold = p.country;
            break;
        default:
            question = "What is the profession of the author of " + p.book + "?";
            gold = p.profession;
            break;
    }
    qa::QaInstance q;
    q.id = instance_id("qa", split, ordinal);
    q.seed = inst_seed;
    q.split = split;
    q.question = question;
    q.gold_answer = gold;
    return qa::qa_to_instance(q);
}

}  // namespace

DatasetPaths gen_dataset(const std::string& env_name, long train_count, long eval_count,
                         std::uint64_t seed, const std::string& out_dir) {
    if (train_count < 1 || eval_count < 1) throw Error("gen_dataset: counts must be >= 1");
    if (env_name != "frozenlake" && env_name != "sokoban" && env_name != "qa")
        throw Error("gen_dataset: unknown environment '" + env_name + "'");
    fs::create_directories(out_dir);
    DatasetPaths paths;
    paths.train_file = (fs::path(out_dir) / "train.jsonl").string();
    paths.eval_file = (fs::path(out_dir) / "eval.jsonl").string();

    std::vector<EnvInstance> train, eval;
    if (env_name == "qa") {
        const QaWorld world = make_qa_world(seed, train_count + eval_count);
        for (long i = 0; i < train_count; ++i)
            train.push_back(make_qa_question(world, Split::train, i, i, rng::mix(seed, 1, i)));
        for (long i = 0; i < eval_count; ++i)
            eval.push_back(
                make_qa_question(world, Split::eval, i, train_count + i, rng::mix(seed, 2, i)));
        paths.corpus_file = (fs::path(out_dir) / "corpus.jsonl").string();
        qa::save_corpus(paths.corpus_file, world_corpus(world));
        qa::save_qa_dataset(paths.train_file, train);
        qa::save_qa_dataset(paths.eval_file, eval);
        return paths;
    }

    const std::string tag = two_digit_env_tag(env_name);
    for (long i = 0; i < train_count; ++i)
        train.push_back(make_grid_instance(env_name, Split::train, i, rng::mix(seed, 1, i), tag));
    for (long i = 0; i < eval_count; ++i)
        eval.push_back(make_grid_instance(env_name, Split::eval, i, rng::mix(seed, 2, i), tag));
    save_instances(paths.train_file, train);
    save_instances(paths.eval_file, eval);
    return paths;
}

std::unique_ptr<Environment> make_environment(const std::string& env_name,
                                              const std::string& corpus_file) {
    if (env_name == "frozenlake") return std::make_unique<frozenlake::LakeEnv>();
    if (env_name == "sokoban") return std::make_unique<sokoban::SokobanEnv>();
    if (env_name == "qa") {
        if (corpus_file.empty()) throw Error("qa environment requires a corpus file");
        auto index = std::make_shared<qa::SearchIndex>(qa::SearchIndex::from_jsonl(corpus_file));
        return std::make_unique<qa::QaEnv>(std::move(index));
    }
    throw Error("unknown environment '" + env_name + "'");
}

std::vector<EnvInstance> load_dataset(const std::string& env_name, const std::string& path) {
    auto instances = load_instances(path);
    std::set<std::string> ids;
    for (const auto& inst : instances) {
        if (!ids.insert(inst.id).second) throw Error("duplicate instance id: " + inst.id);
    }
    (void)env_name;
    return instances;
}

namespace {

struct EvalOutcome {
    double mean_reward = 0.0;
    std::vector<EvalRow> rows;
};

EvalOutcome evaluate_policy(const Environment& env, const std::vector<EnvInstance>& instances,
                            Policy& policy, int samples_per_prompt, const SamplingParams& sampling,
                            std::uint64_t seed) {
    EvalOutcome out;
    const std::string deploy_system = env.system_prompt();
    double total = 0.0;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        for (int s = 0; s < samples_per_prompt; ++s) {
            EpisodeOptions opts;
            opts.seed = rng::mix(seed, i, static_cast<std::uint64_t>(s));
            EpisodeContext ctx{deploy_system, deploy_system};
            const EpisodeTrace trace =
                run_episode(env, instances[i], policy, ctx, sampling, opts);
            out.rows.push_back({instances[i].id, s, trace.final_reward, trace.truncated});
            total += trace.final_reward;
        }
    }
    if (!out.rows.empty()) out.mean_reward = total / static_cast<double>(out.rows.size());
    return out;
}

std::unique_ptr<Policy> make_remote_policy(const RunConfig& config) {
    const char* endpoint = std::getenv("ERL_REMOTE_ENDPOINT");
    if (!endpoint || !*endpoint)
        throw ConfigError({"backend: remote backend needs ERL_REMOTE_ENDPOINT in the environment"});
    RemoteConfig rc;
    rc.endpoint = endpoint;
    rc.model = config.remote_model;
    rc.concurrency = config.remote_concurrency;
    if (const char* key = std::getenv("ERL_REMOTE_API_KEY")) rc.api_key = key;
    return std::make_unique<RemotePolicy>(rc);
}

}  // namespace

TrainResult run_train(const RunConfig& config) {
    auto env = make_environment(config.env, config.corpus_file);
    auto train_set = load_dataset(config.env, config.train_file);
    auto eval_set = load_dataset(config.env, config.eval_file);
    if (train_set.empty()) throw Error("train_file has no instances");
    if (eval_set.empty()) throw Error("eval_file has no instances");
    for (const auto& inst : train_set) {
        if (inst.split != Split::train) throw Error("train_file contains non-train instance " + inst.id);
    }
    {
        std::set<std::string> train_ids;
        for (const auto& inst : train_set) train_ids.insert(inst.id);
        for (const auto& inst : eval_set) {
            if (train_ids.count(inst.id)) throw Error("train/eval splits share id " + inst.id);
        }
    }

    std::unique_ptr<Policy> remote;
    TabularPolicy tabular;
    TabularPolicy reference;  // run-start snapshot; uniform for fresh runs
    Policy* rollout_policy = &tabular;
    TabularPolicy* trainable = &tabular;
    const TabularPolicy* ref_ptr = &reference;
    if (config.backend == "remote") {
        remote = make_remote_policy(config);
        rollout_policy = remote.get();
        trainable = nullptr;  // rollout-only backend: no weight updates
        ref_ptr = nullptr;
    }

    fs::create_directories(config.out_dir);
    MetricsWriter metrics((fs::path(config.out_dir) / "metrics.csv").string());
    const std::string checkpoint_path = (fs::path(config.out_dir) / "checkpoint.json").string();

    std::ofstream trace_out;
    trainer::TraceSink sink;
    if (!config.trace_file.empty()) {
        const fs::path tp(config.trace_file);
        if (tp.has_parent_path()) fs::create_directories(tp.parent_path());
        trace_out.open(config.trace_file, std::ios::trunc);
        if (!trace_out) throw IoError("cannot write trace file: " + config.trace_file);
        sink = [&trace_out](const EpisodeTrace& trace) {
            trace_out << trace_to_json(trace).dump() << "\n";
        };
    }

    trainer::MemoryState memory;
    const auto started = std::chrono::steady_clock::now();
    const auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    };

    const auto save = [&](long iteration) {
        trainer::Checkpoint cp;
        cp.iteration = iteration;
        cp.env_name = config.env;
        cp.algo = config.algo;
        cp.memory = memory;
        if (trainable) cp.params = trainable->parameters();
        if (ref_ptr) cp.reference_params = ref_ptr->parameters();
        trainer::save_checkpoint(checkpoint_path, cp);
    };

    double final_eval = 0.0;
    for (long it = 1; it <= config.iterations; ++it) {
        // Seeded sample of `batch` instances, without replacement.
        std::vector<std::size_t> order(train_set.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng::SplitMix64 shuffle_rng(rng::mix(config.seed, static_cast<std::uint64_t>(it), 0x5u));
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = shuffle_rng.next_range(0, i - 1);
            std::swap(order[i - 1], order[j]);
        }
        const std::size_t take =
            std::min<std::size_t>(order.size(), static_cast<std::size_t>(config.trainer.batch));
        std::vector<EnvInstance> batch;
        batch.reserve(take);
        for (std::size_t i = 0; i < take; ++i) batch.push_back(train_set[order[i]]);

        trainer::IterationOptions options;
        options.iteration = it;
        options.seed = config.seed;
        options.no_memory = config.ablate == "no-memory";
        options.no_reflection = config.ablate == "no-reflection";
        options.use_od = config.use_od;

        trainer::IterationMetrics m;
        if (config.algo == "erl") {
            m = trainer::erl_iteration(config.trainer, *rollout_policy, trainable, ref_ptr, *env,
                                       batch, memory, options, sink);
        } else {
            m = trainer::rlvr_iteration(config.trainer, *rollout_policy, trainable, ref_ptr, *env,
                                        batch, options, sink);
        }

        metrics.append({it, elapsed(), "train", "attempt1", m.attempt1_mean, m.attempt1_groups,
                        m.memory_changed});
        if (m.attempt2_count > 0) {
            metrics.append({it, elapsed(), "train", "attempt2", m.attempt2_mean, m.attempt2_groups,
                            m.memory_changed});
        }

        if (it % config.trainer.eval_every == 0 || it == config.iterations) {
            // Validation sampling is pinned (0.7 / 0.8 / 20), independent of
            // any training-time sampling overrides.
            const EvalOutcome eval = evaluate_policy(*env, eval_set, *rollout_policy,
                                                     config.eval_samples_per_prompt,
                                                     SamplingParams{},
                                                     rng::mix(config.seed, 0xEF, it));
            final_eval = eval.mean_reward;
            metrics.append({it, elapsed(), "eval", "deploy", eval.mean_reward,
                            static_cast<long>(eval.rows.size()), m.memory_changed});
        }
        if (it % config.checkpoint_every == 0) save(it);
    }
    save(config.iterations);

    TrainResult result;
    result.checkpoint_path = checkpoint_path;
    result.metrics_path = metrics.path();
    result.iterations = config.iterations;
    result.final_eval_reward = final_eval;
    return result;
}

EvalReport run_evaluate(const std::string& checkpoint_path, const std::string& dataset_path,
                        int samples_per_prompt, const std::string& corpus_file) {
    if (samples_per_prompt < 1) throw Error("samples_per_prompt must be >= 1");
    const trainer::Checkpoint cp = trainer::load_checkpoint(checkpoint_path);
    auto env = make_environment(cp.env_name, corpus_file);
    auto instances = load_dataset(cp.env_name, dataset_path);
    for (const auto& inst : instances) {
        if (inst.split != Split::eval)
            throw Error("evaluate: dataset must be an eval split (instance " + inst.id + ")");
    }

    std::unique_ptr<Policy> remote;
    TabularPolicy tabular;
    Policy* policy = &tabular;
    if (cp.env_name == "qa") {
        // Free-form environment: rollouts come from the remote backend.
        RunConfig remote_cfg;
        remote = make_remote_policy(remote_cfg);
        policy = remote.get();
    } else {
        tabular.set_parameters(cp.params);
    }

    SamplingParams sampling;  // validation sampling defaults
    const EvalOutcome out =
        evaluate_policy(*env, instances, *policy, samples_per_prompt, sampling, cp.iteration);
    EvalReport report;
    report.mean_reward = out.mean_reward;
    report.rows = out.rows;
    return report;
}

void write_eval_report(const std::string& path, const EvalReport& report) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"instance_id", r.instance_id},
                        {"sample_index", r.sample_index},
                        {"reward", r.reward},
                        {"truncated", r.truncated}});
    }
    nlohmann::ordered_json j{{"mean_reward", report.mean_reward}, {"rows", std::move(rows)}};
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write eval report: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace erl::harness
