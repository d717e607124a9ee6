#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "erl/env.hpp"

namespace erl::qa {

inline constexpr char kFeedbackAnswered[] = "Submitted final answer.";
inline constexpr char kFeedbackResults[] = "Returned search results.";
inline constexpr char kFeedbackToolRejected[] = "Tool request rejected: top_k must be in [1, 50].";
inline constexpr char kFeedbackInvalid[] = "No valid actions were recorded.";
inline constexpr char kFeedbackMaxStep[] = "Hit the max step limit";
inline constexpr int kTurnBudget = 5;
inline constexpr int kDefaultTopK = 5;
inline constexpr int kMaxTopK = 50;
inline constexpr int kSnippetChars = 160;

struct QaInstance {
    std::string id;
    std::uint64_t seed = 0;
    Split split = Split::train;
    std::string question;
    std::string gold_answer;
};

struct SearchRequest {
    std::string query;
    int top_k = kDefaultTopK;
};

struct CorpusDoc {
    std::string doc_id;
    std::string title;
    std::string text;
};

struct SearchHit {
    std::string doc_id;
    std::string snippet;
    double score = 0.0;
};

struct SearchResponse {
    std::vector<SearchHit> hits;
    std::string error;  // empty on success
    bool ok() const { return error.empty(); }
};

// Lowercases and collapses whitespace runs to single spaces; idempotent.
std::string normalize(std::string_view text);

// Content of the last brace-balanced \boxed{...} span, or nullopt.
std::optional<std::string> extract_boxed(std::string_view text);

// Token-multiset F1 over whitespace tokens of already-normalized strings.
double token_f1(std::string_view pred, std::string_view gold);

// 1.0 on normalized exact match, else F1 when F1 >= 0.3, else 0.
double qa_reward(const std::optional<std::string>& pred, const std::string& gold);

// Deterministic lexical index: score(d) = sum over distinct query tokens of
// tf(t, d) * idf(t) with idf(t) = ln((1+N)/(1+df(t))) + 1, computed over
// normalized tokens of title and text. Only docs with positive score are
// returned; ties break by doc_id.
class SearchIndex {
public:
    void build(std::vector<CorpusDoc> docs);
    static SearchIndex from_jsonl(const std::string& path);

    SearchResponse search(const SearchRequest& request) const;
    std::size_t size() const { return docs_.size(); }

private:
    std::vector<CorpusDoc> docs_;
    std::vector<std::unordered_map<std::string, int>> term_counts_;
    std::unordered_map<std::string, int> doc_freq_;
};

// The last well-formed local_search tool call embedded in the model output,
// either as {"name": "local_search", "arguments": {...}} or wrapped in an
// OpenAI-style {"function": {...}} object; `arguments` may itself be a
// JSON-encoded string. nullopt when no tool call is present; `error` set
// when a call is present but malformed (e.g. non-integer top_k).
struct ToolCallParse {
    std::optional<SearchRequest> request;
    std::string error;
};
ToolCallParse parse_tool_call(std::string_view model_output);

std::string render_hits(const std::string& query, const std::vector<SearchHit>& hits);

QaInstance qa_from_instance(const EnvInstance& instance);
EnvInstance qa_to_instance(const QaInstance& q);

class QaEnv final : public Environment {
public:
    explicit QaEnv(std::shared_ptr<const SearchIndex> index) : index_(std::move(index)) {}

    std::string name() const override { return "qa"; }
    std::string system_prompt() const override;
    std::vector<std::string> action_space() const override { return {}; }
    int step_budget() const override { return kTurnBudget; }
    std::vector<std::string> feedback_set() const override;
    std::string budget_feedback() const override { return kFeedbackMaxStep; }
    std::unique_ptr<EnvState> make_state(const EnvInstance& instance) const override;

    const SearchIndex& index() const { return *index_; }

private:
    std::shared_ptr<const SearchIndex> index_;
};

// Corpus ingest: line-delimited JSON {doc_id, title, text}.
std::vector<CorpusDoc> load_corpus(const std::string& path);
void save_corpus(const std::string& path, const std::vector<CorpusDoc>& docs);

// QA datasets are line-delimited JSON {id, seed, question, gold_answer, split}.
std::vector<EnvInstance> load_qa_dataset(const std::string& path);
void save_qa_dataset(const std::string& path, const std::vector<EnvInstance>& instances);

}  // namespace erl::qa
