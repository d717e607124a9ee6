#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "erl/env.hpp"
#include "erl/policy.hpp"
#include "erl/qa.hpp"
#include "erl/rng.hpp"

using namespace erl;
using namespace erl::qa;

namespace {

std::vector<CorpusDoc> toy_corpus() {
    return {
        {"doc-a", "Lumen City", "Lumen City is a city in Astra. It sits by the sea."},
        {"doc-b", "Orin Vale", "Orin Vale is a sculptor born in Lumen City. Orin Vale wrote a book."},
        {"doc-c", "Weather", "Weather patterns change. The sea wind is strong in spring."},
    };
}

// Independent tf-idf scorer for the oracle check.
double hand_score(const std::vector<CorpusDoc>& docs, const std::string& doc_id,
                  const std::vector<std::string>& query_terms) {
    const double n = static_cast<double>(docs.size());
    double score = 0.0;
    for (const auto& term : query_terms) {
        int df = 0;
        int tf = 0;
        for (const auto& d : docs) {
            const std::string field = normalize(d.title + " " + d.text);
            int count = 0;
            std::istringstream is(field);
            std::string tok;
            while (is >> tok)
                if (tok == term) ++count;
            if (count > 0) ++df;
            if (d.doc_id == doc_id) tf = count;
        }
        if (tf > 0) score += tf * (std::log((1.0 + n) / (1.0 + df)) + 1.0);
    }
    return score;
}

}  // namespace

TEST_CASE("normalize examples") {
    CHECK(normalize("  Barack   OBAMA ") == "barack obama");
    CHECK(normalize("already normal") == "already normal");
    CHECK(normalize(normalize("  MiXeD \t CaSe\nText ")) == normalize("  MiXeD \t CaSe\nText "));
    CHECK(normalize("") == "");
    CHECK(normalize(" \t\n ") == "");
}

TEST_CASE("extract_boxed: last balanced span wins") {
    CHECK(extract_boxed("\\boxed{Paris}") == std::string("Paris"));
    CHECK(extract_boxed("\\boxed{a} then \\boxed{b}") == std::string("b"));
    CHECK(extract_boxed("no box") == std::optional<std::string>{});
    CHECK(extract_boxed("\\boxed{nested {braces} inside}") == std::string("nested {braces} inside"));
    CHECK(extract_boxed("\\boxed{unclosed") == std::optional<std::string>{});
    CHECK(extract_boxed("\\boxed{first} \\boxed{unclosed") == std::string("first"));
}

TEST_CASE("token_f1 examples and symmetry") {
    CHECK(token_f1("barack obama", "barack obama") == 1.0);
    CHECK(token_f1("obama", "barack obama") == doctest::Approx(2.0 / 3.0));
    CHECK(token_f1("paris", "london") == 0.0);
    CHECK(token_f1("", "x") == 0.0);
    rng::SplitMix64 g(5);
    const std::vector<std::string> words{"a", "b", "c", "d", "e"};
    for (int trial = 0; trial < 200; ++trial) {
        std::string s1, s2;
        for (int i = 0; i < static_cast<int>(g.next_range(0, 4)); ++i)
            s1 += words[g.next_range(0, 4)] + " ";
        for (int i = 0; i < static_cast<int>(g.next_range(0, 4)); ++i)
            s2 += words[g.next_range(0, 4)] + " ";
        const std::string a = normalize(s1), b = normalize(s2);
        REQUIRE(token_f1(a, b) == doctest::Approx(token_f1(b, a)));
        const double f1 = token_f1(a, b);
        REQUIRE(f1 >= 0.0);
        REQUIRE(f1 <= 1.0);
        if (f1 == 1.0) {
            auto sorted_tokens = [](const std::string& s) {
                std::vector<std::string> t;
                std::istringstream is(s);
                std::string w;
                while (is >> w) t.push_back(w);
                std::sort(t.begin(), t.end());
                return t;
            };
            REQUIRE(sorted_tokens(a) == sorted_tokens(b));
        }
    }
}

TEST_CASE("qa_reward: the 12-case hand-verified table") {
    struct Case {
        const char* pred;
        const char* gold;
        double expected;
    };
    // Hand computation: multiset overlap, P = ov/|pred|, R = ov/|gold|,
    // F1 = 2PR/(P+R); exact match 1.0; F1 < 0.3 floors at 0.
    const Case cases[] = {
        {"Paris", "Paris", 1.0},
        {"  Barack   OBAMA ", "barack obama", 1.0},
        {"obama", "barack obama", 2.0 / 3.0},
        {"barack hussein obama", "barack obama", 0.8},
        {"the president obama", "president barack obama", 2.0 / 3.0},
        {"paris france", "london", 0.0},
        {"a b c d e f g", "a", 0.0},  // F1 = 0.25 < 0.3
        {"", "x", 0.0},
        {"new york city", "new york", 0.8},
        {"x x", "x", 2.0 / 3.0},
        {"answer is rome", "rome italy", 0.4},
        {"a b c", "a", 0.5},  // F1 exactly 0.5, non-exact
    };
    for (const auto& c : cases) {
        CAPTURE(c.pred);
        CAPTURE(c.gold);
        CHECK(qa_reward(std::string(c.pred), c.gold) == doctest::Approx(c.expected).epsilon(1e-12));
    }
    CHECK(qa_reward(std::nullopt, "anything") == 0.0);
}

TEST_CASE("qa_reward support is {0} union [0.3, 1]") {
    rng::SplitMix64 g(77);
    const std::vector<std::string> words{"red", "blue", "green", "lake", "stone", "sky"};
    for (int trial = 0; trial < 500; ++trial) {
        std::string pred, gold = "gold";
        for (int i = 0; i < static_cast<int>(g.next_range(0, 5)); ++i)
            pred += words[g.next_range(0, 5)] + " ";
        for (int i = 0; i < static_cast<int>(g.next_range(0, 3)); ++i)
            gold += " " + words[g.next_range(0, 5)];
        const double r = qa_reward(pred, gold);
        REQUIRE((r == 0.0 || (r >= 0.3 && r <= 1.0)));
    }
}

TEST_CASE("local_search: default top_k, bounds, and ranking") {
    SearchIndex index;
    index.build(toy_corpus());

    SUBCASE("omitted top_k defaults to 5") {
        const auto resp = index.search({"sea", kDefaultTopK});
        REQUIRE(resp.ok());
        CHECK(resp.hits.size() <= 5);
        CHECK(!resp.hits.empty());
    }
    SUBCASE("top_k = 51 is rejected") {
        const auto resp = index.search({"sea", 51});
        CHECK_FALSE(resp.ok());
        CHECK(resp.error == kFeedbackToolRejected);
    }
    SUBCASE("top_k = 0 is rejected") {
        CHECK_FALSE(index.search({"sea", 0}).ok());
    }
    SUBCASE("query matching exactly one title ranks that doc first") {
        const auto resp = index.search({"Orin Vale", 3});
        REQUIRE(resp.ok());
        REQUIRE(!resp.hits.empty());
        CHECK(resp.hits[0].doc_id == "doc-b");
    }
    SUBCASE("scores match the hand-computed tf-idf") {
        const auto docs = toy_corpus();
        const auto resp = index.search({"lumen city", 3});
        REQUIRE(resp.ok());
        for (const auto& hit : resp.hits) {
            const double expected = hand_score(docs, hit.doc_id, {"lumen", "city"});
            REQUIRE(hit.score == doctest::Approx(expected).epsilon(1e-12));
        }
        // doc-a mentions the pair most often; it must outrank doc-b.
        REQUIRE(resp.hits[0].doc_id == "doc-a");
    }
    SUBCASE("identical requests give identical rankings") {
        const auto a = index.search({"city sea", 3});
        const auto b = index.search({"city sea", 3});
        REQUIRE(a.hits.size() == b.hits.size());
        for (std::size_t i = 0; i < a.hits.size(); ++i) {
            REQUIRE(a.hits[i].doc_id == b.hits[i].doc_id);
            REQUIRE(a.hits[i].score == b.hits[i].score);
        }
    }
}

TEST_CASE("parse_tool_call accepts plain and OpenAI-style forms") {
    const auto direct = parse_tool_call(
        R"(I will search. {"name":"local_search","arguments":{"query":"who wrote it","top_k":3}})");
    REQUIRE(direct.request.has_value());
    CHECK(direct.request->query == "who wrote it");
    CHECK(direct.request->top_k == 3);

    const auto wrapped = parse_tool_call(
        R"({"id":"c1","type":"function","function":{"name":"local_search","arguments":"{\"query\":\"x\"}"}})");
    REQUIRE(wrapped.request.has_value());
    CHECK(wrapped.request->query == "x");
    CHECK(wrapped.request->top_k == kDefaultTopK);

    CHECK_FALSE(parse_tool_call("no json here").request.has_value());
    CHECK_FALSE(parse_tool_call(R"({"name":"other_tool","arguments":{}})").request.has_value());

    const auto bad = parse_tool_call(R"({"name":"local_search","arguments":{"top_k":2}})");
    CHECK_FALSE(bad.request.has_value());
    CHECK_FALSE(bad.error.empty());

    // the last call wins
    const auto last = parse_tool_call(
        R"({"name":"local_search","arguments":{"query":"first"}} and then)"
        R"( {"name":"local_search","arguments":{"query":"second"}})");
    REQUIRE(last.request.has_value());
    CHECK(last.request->query == "second");
}

TEST_CASE("qa episode: search then boxed answer scores the reward") {
    auto index = std::make_shared<SearchIndex>();
    index->build(toy_corpus());
    QaEnv env(index);
    EnvInstance inst;
    inst.id = "qa-t-1";
    inst.payload = {{"question", "Where was Orin Vale born?"}, {"gold_answer", "Lumen City"}};

    ScriptedPolicy policy({R"({"name":"local_search","arguments":{"query":"Orin Vale"}})",
                           "The answer is \\boxed{Lumen City}"});
    EpisodeContext ctx{env.system_prompt(), env.system_prompt()};
    const EpisodeTrace trace = run_episode(env, inst, policy, ctx, SamplingParams{}, EpisodeOptions{});
    REQUIRE(trace.steps.size() == 2);
    CHECK(trace.steps[0].feedback == kFeedbackResults);
    CHECK(trace.steps[1].feedback == kFeedbackAnswered);
    CHECK(trace.final_reward == 1.0);
}

TEST_CASE("qa episode: out-of-range top_k surfaces the tool rejection as feedback") {
    auto index = std::make_shared<SearchIndex>();
    index->build(toy_corpus());
    QaEnv env(index);
    EnvInstance inst;
    inst.id = "qa-t-2";
    inst.payload = {{"question", "q"}, {"gold_answer", "g"}};
    ScriptedPolicy policy({R"({"name":"local_search","arguments":{"query":"sea","top_k":51}})",
                           "\\boxed{wrong}"});
    EpisodeContext ctx{env.system_prompt(), env.system_prompt()};
    const EpisodeTrace trace = run_episode(env, inst, policy, ctx, SamplingParams{}, EpisodeOptions{});
    CHECK(trace.steps[0].feedback == kFeedbackToolRejected);
    CHECK(trace.final_reward == 0.0);
}

TEST_CASE("qa episode: no boxed answer within 5 turns scores 0") {
    auto index = std::make_shared<SearchIndex>();
    index->build(toy_corpus());
    QaEnv env(index);
    EnvInstance inst;
    inst.id = "qa-t-3";
    inst.payload = {{"question", "q"}, {"gold_answer", "g"}};
    ScriptedPolicy policy({"I keep thinking without acting."}, /*cycle=*/true);
    EpisodeContext ctx{env.system_prompt(), env.system_prompt()};
    const EpisodeTrace trace = run_episode(env, inst, policy, ctx, SamplingParams{}, EpisodeOptions{});
    CHECK(trace.steps.size() == 5);
    CHECK(trace.truncated);
    for (std::size_t i = 0; i + 1 < trace.steps.size(); ++i)
        CHECK(trace.steps[i].feedback == kFeedbackInvalid);
    CHECK(trace.final_feedback() == kFeedbackMaxStep);
}

TEST_CASE("corpus and dataset files round-trip") {
    const std::string dir = "qa_io_test";
    std::filesystem::create_directories(dir);
    const std::string corpus_path = dir + "/corpus.jsonl";
    save_corpus(corpus_path, toy_corpus());
    const auto docs = load_corpus(corpus_path);
    REQUIRE(docs.size() == 3);
    CHECK(docs[1].title == "Orin Vale");

    QaInstance q;
    q.id = "qa-train-000000";
    q.seed = 9;
    q.split = Split::train;
    q.question = "Where was Orin Vale born?";
    q.gold_answer = "Lumen City";
    const std::string data_path = dir + "/train.jsonl";
    save_qa_dataset(data_path, {qa_to_instance(q)});
    const auto insts = load_qa_dataset(data_path);
    REQUIRE(insts.size() == 1);
    const QaInstance back = qa_from_instance(insts[0]);
    CHECK(back.question == q.question);
    CHECK(back.gold_answer == q.gold_answer);
    CHECK(back.seed == 9);
    std::filesystem::remove_all(dir);
}
