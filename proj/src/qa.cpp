#include "erl/qa.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "erl/errors.hpp"
#include "erl/prompts.hpp"

namespace erl::qa {

std::string normalize(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool in_space = false;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty()) out += ' ';
        in_space = false;
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
    return out;
}

std::optional<std::string> extract_boxed(std::string_view text) {
    constexpr std::string_view kMarker = "\\boxed{";
    std::optional<std::string> last;
    std::size_t pos = 0;
    for (;;) {
        const std::size_t open = text.find(kMarker, pos);
        if (open == std::string_view::npos) break;
        std::size_t i = open + kMarker.size();
        int depth = 1;
        while (i < text.size() && depth > 0) {
            if (text[i] == '{') ++depth;
            else if (text[i] == '}') --depth;
            ++i;
        }
        if (depth != 0) break;  // unbalanced: ignore this and any later span
        last = std::string(text.substr(open + kMarker.size(), i - 1 - (open + kMarker.size())));
        pos = i;
    }
    return last;
}

namespace {

std::vector<std::string> tokens_of(std::string_view s) {
    std::vector<std::string> toks;
    std::istringstream is{std::string(s)};
    std::string t;
    while (is >> t) toks.push_back(t);
    return toks;
}

std::map<std::string, int> counts_of(const std::vector<std::string>& toks) {
    std::map<std::string, int> m;
    for (const auto& t : toks) ++m[t];
    return m;
}

}  // namespace

double token_f1(std::string_view pred, std::string_view gold) {
    const auto p = tokens_of(pred);
    const auto g = tokens_of(gold);
    if (p.empty() || g.empty()) return 0.0;
    const auto pc = counts_of(p);
    const auto gc = counts_of(g);
    long overlap = 0;
    for (const auto& [tok, cnt] : pc) {
        const auto it = gc.find(tok);
        if (it != gc.end()) overlap += std::min(cnt, it->second);
    }
    if (overlap == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
    const double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
    return 2.0 * precision * recall / (precision + recall);
}

double qa_reward(const std::optional<std::string>& pred, const std::string& gold) {
    if (!pred) return 0.0;
    const std::string np = normalize(*pred);
    const std::string ng = normalize(gold);
    if (np == ng) return 1.0;
    const double f1 = token_f1(np, ng);
    return f1 >= 0.3 ? f1 : 0.0;
}

void SearchIndex::build(std::vector<CorpusDoc> docs) {
    docs_ = std::move(docs);
    term_counts_.clear();
    doc_freq_.clear();
    term_counts_.resize(docs_.size());
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        const auto toks = tokens_of(normalize(docs_[i].title + " " + docs_[i].text));
        for (const auto& t : toks) ++term_counts_[i][t];
        for (const auto& [t, cnt] : term_counts_[i]) {
            (void)cnt;
            ++doc_freq_[t];
        }
    }
}

SearchIndex SearchIndex::from_jsonl(const std::string& path) {
    SearchIndex index;
    index.build(load_corpus(path));
    return index;
}

SearchResponse SearchIndex::search(const SearchRequest& request) const {
    SearchResponse resp;
    if (request.top_k < 1 || request.top_k > kMaxTopK) {
        resp.error = kFeedbackToolRejected;
        return resp;
    }
    const auto qtoks = tokens_of(normalize(request.query));
    std::vector<std::string> uniq(qtoks);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

    const double n_docs = static_cast<double>(docs_.size());
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        double score = 0.0;
        for (const auto& t : uniq) {
            const auto tf = term_counts_[i].find(t);
            if (tf == term_counts_[i].end()) continue;
            const double df = static_cast<double>(doc_freq_.at(t));
            const double idf = std::log((1.0 + n_docs) / (1.0 + df)) + 1.0;
            score += static_cast<double>(tf->second) * idf;
        }
        if (score > 0.0) scored.emplace_back(score, i);
    }
    std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return docs_[a.second].doc_id < docs_[b.second].doc_id;
    });
    const std::size_t take = std::min<std::size_t>(scored.size(), static_cast<std::size_t>(request.top_k));
    for (std::size_t i = 0; i < take; ++i) {
        const CorpusDoc& doc = docs_[scored[i].second];
        std::string snippet = doc.text.substr(0, kSnippetChars);
        std::replace(snippet.begin(), snippet.end(), '\n', ' ');
        resp.hits.push_back({doc.doc_id, std::move(snippet), scored[i].first});
    }
    return resp;
}

namespace {

// Balanced JSON object starting at `open`; respects strings and escapes.
std::optional<std::string> balanced_object(std::string_view text, std::size_t open) {
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = open; i < text.size(); ++i) {
        const char ch = text[i];
        if (in_string) {
            if (ch == '\\') ++i;
            else if (ch == '"') in_string = false;
            continue;
        }
        if (ch == '"') in_string = true;
        else if (ch == '{') ++depth;
        else if (ch == '}') {
            if (--depth == 0) return std::string(text.substr(open, i - open + 1));
        }
    }
    return std::nullopt;
}

// arguments may be an object or a JSON-encoded string
std::optional<nlohmann::json> arguments_of(const nlohmann::json& call) {
    if (!call.contains("arguments")) return std::nullopt;
    const auto& args = call["arguments"];
    if (args.is_object()) return args;
    if (args.is_string()) {
        auto parsed = nlohmann::json::parse(args.get<std::string>(), nullptr, false);
        if (parsed.is_object()) return parsed;
    }
    return std::nullopt;
}

std::optional<nlohmann::json> as_local_search_call(const nlohmann::json& obj) {
    if (!obj.is_object()) return std::nullopt;
    if (obj.value("name", "") == "local_search") return obj;
    if (obj.contains("function")) return as_local_search_call(obj["function"]);
    return std::nullopt;
}

}  // namespace

ToolCallParse parse_tool_call(std::string_view model_output) {
    ToolCallParse result;
    std::size_t pos = 0;
    while (pos < model_output.size()) {
        const std::size_t open = model_output.find('{', pos);
        if (open == std::string_view::npos) break;
        const auto candidate = balanced_object(model_output, open);
        if (!candidate) break;
        auto parsed = nlohmann::json::parse(*candidate, nullptr, false);
        if (!parsed.is_discarded()) {
            if (const auto call = as_local_search_call(parsed)) {
                result.request.reset();
                result.error.clear();
                const auto args = arguments_of(*call);
                if (!args || !args->contains("query") || !(*args)["query"].is_string()) {
                    result.error = "local_search call missing string `query`";
                } else {
                    SearchRequest req;
                    req.query = (*args)["query"].get<std::string>();
                    if (args->contains("top_k")) {
                        const auto& tk = (*args)["top_k"];
                        if (tk.is_number_integer()) {
                            req.top_k = tk.get<int>();
                        } else if (tk.is_number_float() &&
                                   tk.get<double>() == std::floor(tk.get<double>())) {
                            req.top_k = static_cast<int>(tk.get<double>());
                        } else {
                            result.error = "local_search top_k must be an integer";
                        }
                    }
                    if (result.error.empty()) result.request = req;
                }
            }
            pos = open + candidate->size();
            continue;
        }
        pos = open + 1;
    }
    return result;
}

std::string render_hits(const std::string& query, const std::vector<SearchHit>& hits) {
    std::ostringstream os;
    os << "Search results for \"" << query << "\":";
    if (hits.empty()) os << "\n(no matching documents)";
    for (std::size_t i = 0; i < hits.size(); ++i) {
        os << "\n" << (i + 1) << ". [" << hits[i].doc_id << "] " << hits[i].snippet;
    }
    return os.str();
}

QaInstance qa_from_instance(const EnvInstance& instance) {
    QaInstance q;
    q.id = instance.id;
    q.seed = instance.seed;
    q.split = instance.split;
    q.question = instance.payload.at("question").get<std::string>();
    q.gold_answer = instance.payload.at("gold_answer").get<std::string>();
    if (normalize(q.gold_answer).empty()) throw Error("qa instance " + q.id + ": empty gold answer");
    return q;
}

EnvInstance qa_to_instance(const QaInstance& q) {
    EnvInstance inst;
    inst.id = q.id;
    inst.seed = q.seed;
    inst.split = q.split;
    inst.payload = nlohmann::json{{"question", q.question}, {"gold_answer", q.gold_answer}};
    return inst;
}

namespace {

constexpr char kContinueLine[] =
    "Continue. Provide a local_search tool call or your final answer in \\boxed{}.";

class QaEnvState final : public EnvState {
public:
    QaEnvState(QaInstance instance, const SearchIndex* index)
        : instance_(std::move(instance)), index_(index) {
        observation_ = "Question:\n" + instance_.question +
                       "\n\nProvide your final answer in \\boxed{} format.";
    }

    std::string observation() const override { return observation_; }

    StepOutcome step(std::string_view model_output) override {
        if (done_) throw std::logic_error("qa step: state is terminal");
        ++turns_;

        StepOutcome out;
        if (const auto boxed = extract_boxed(model_output)) {
            done_ = true;
            out.terminal = true;
            out.reward = qa_reward(boxed, instance_.gold_answer);
            out.feedback = kFeedbackAnswered;
            return out;
        }

        const ToolCallParse call = parse_tool_call(model_output);
        std::string next_obs{kContinueLine};
        if (call.request) {
            const SearchResponse resp = index_->search(*call.request);
            if (resp.ok()) {
                out.feedback = kFeedbackResults;
                next_obs = render_hits(call.request->query, resp.hits) + "\n\n" + kContinueLine;
            } else {
                out.feedback = kFeedbackToolRejected;
            }
        } else {
            out.feedback = kFeedbackInvalid;
        }

        if (turns_ >= kTurnBudget) {
            // Turn budget exhausted without a final answer.
            done_ = true;
            out.terminal = true;
            out.reward = 0.0;
            out.feedback = kFeedbackMaxStep;
            return out;
        }
        out.observation = std::move(next_obs);
        observation_ = out.observation;
        return out;
    }

    bool terminal() const override { return done_; }

private:
    QaInstance instance_;
    const SearchIndex* index_;
    std::string observation_;
    int turns_ = 0;
    bool done_ = false;
};

}  // namespace

std::string QaEnv::system_prompt() const { return std::string(prompts::qa_system()); }

std::vector<std::string> QaEnv::feedback_set() const {
    return {kFeedbackAnswered, kFeedbackResults, kFeedbackToolRejected, kFeedbackInvalid,
            kFeedbackMaxStep, ""};
}

std::unique_ptr<EnvState> QaEnv::make_state(const EnvInstance& instance) const {
    return std::make_unique<QaEnvState>(qa_from_instance(instance), index_.get());
}

std::vector<CorpusDoc> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open corpus file: " + path);
    std::vector<CorpusDoc> docs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        docs.push_back({j.at("doc_id").get<std::string>(), j.at("title").get<std::string>(),
                        j.at("text").get<std::string>()});
    }
    return docs;
}

void save_corpus(const std::string& path, const std::vector<CorpusDoc>& docs) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write corpus file: " + path);
    for (const auto& d : docs) {
        nlohmann::ordered_json j{{"doc_id", d.doc_id}, {"title", d.title}, {"text", d.text}};
        out << j.dump() << "\n";
    }
}

std::vector<EnvInstance> load_qa_dataset(const std::string& path) { return load_instances(path); }

void save_qa_dataset(const std::string& path, const std::vector<EnvInstance>& instances) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write qa dataset: " + path);
    for (const auto& inst : instances) {
        nlohmann::ordered_json j{{"id", inst.id},
                                 {"seed", inst.seed},
                                 {"question", inst.payload.at("question")},
                                 {"gold_answer", inst.payload.at("gold_answer")},
                                 {"split", to_string(inst.split)}};
        out << j.dump() << "\n";
    }
}

}  // namespace erl::qa
