#pragma once

// Judge orchestration: versioned prompt templates, message rendering,
// single-stage and two-stage evaluation through a ChatBackend, score
// extraction, and model-vs-rater benchmarking.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "repeval/backend.hpp"
#include "repeval/core.hpp"
#include "repeval/metrics.hpp"
#include "repeval/respparse.hpp"

namespace repeval {

class UnboundPlaceholderError : public Error {
public:
    using Error::Error;
};

class TooFewPairsError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Prompt templates

struct PromptTemplate {
    enum class Stage { single, compare, count };
    Stage stage = Stage::single;
    std::string version;
    std::string body;
};

inline std::string_view to_string(PromptTemplate::Stage s) {
    switch (s) {
    case PromptTemplate::Stage::single: return "single";
    case PromptTemplate::Stage::compare: return "compare";
    case PromptTemplate::Stage::count: return "count";
    }
    throw Error("invalid template stage");
}

inline std::optional<PromptTemplate::Stage> stage_from_string(std::string_view s) {
    if (s == "single") return PromptTemplate::Stage::single;
    if (s == "compare") return PromptTemplate::Stage::compare;
    if (s == "count") return PromptTemplate::Stage::count;
    return std::nullopt;
}

inline void validate_template(const PromptTemplate& t) {
    auto require = [&](const char* placeholder) {
        if (t.body.find(placeholder) == std::string::npos)
            throw Error(std::string("template stage '") + std::string(to_string(t.stage)) +
                        "' must contain " + placeholder);
    };
    if (t.stage == PromptTemplate::Stage::count) {
        require("{{comparison}}");
    } else {
        require("{{reference}}");
        require("{{candidate}}");
    }
    if (t.version.empty()) throw Error("template version must be non-empty");
}

/// Plain-text template file: `---` front-matter with `stage:` and `version:`
/// keys, then the body verbatim.
inline PromptTemplate parse_template_text(const std::string& text) {
    auto lines = split_lines(text);
    if (lines.empty() || trim(lines[0]) != "---")
        throw Error("template file must start with --- front-matter");
    PromptTemplate t;
    std::size_t i = 1;
    bool have_stage = false;
    for (; i < lines.size() && trim(lines[i]) != "---"; ++i) {
        const std::string line = trim(lines[i]);
        if (line.empty()) continue;
        const std::size_t colon = line.find(':');
        if (colon == std::string::npos) throw Error("bad front-matter line: " + line);
        const std::string key = trim(line.substr(0, colon));
        const std::string value = trim(line.substr(colon + 1));
        if (key == "stage") {
            auto stage = stage_from_string(value);
            if (!stage) throw Error("unknown template stage: " + value);
            t.stage = *stage;
            have_stage = true;
        } else if (key == "version") {
            t.version = value;
        } else {
            throw Error("unknown front-matter key: " + key);
        }
    }
    if (i >= lines.size()) throw Error("unterminated front-matter");
    if (!have_stage) throw Error("front-matter missing stage");
    std::string body;
    for (std::size_t k = i + 1; k < lines.size(); ++k) {
        body += lines[k];
        body += '\n';
    }
    if (!body.empty()) body.pop_back();
    t.body = std::move(body);
    validate_template(t);
    return t;
}

inline PromptTemplate load_template(const std::filesystem::path& path) {
    return parse_template_text(read_file(path));
}

inline std::string template_to_text(const PromptTemplate& t) {
    return "---\nstage: " + std::string(to_string(t.stage)) + "\nversion: " + t.version +
           "\n---\n" + t.body;
}

// ---------------------------------------------------------------------------
// Default templates, version v1

namespace prompts {

inline constexpr const char* kSystemV1 =
    "You are an experienced thoracic radiologist reviewing chest X-ray reports. Your task is "
    "to compare a candidate report against a reference report and identify every clinical "
    "discrepancy.\n"
    "\n"
    "Classify each discrepancy into exactly one of these six error categories:\n"
    "1. false_prediction_of_finding: the candidate states a finding the reference does not "
    "support.\n"
    "2. omission_of_finding: the candidate omits a finding the reference states.\n"
    "3. incorrect_location_of_finding: a finding is placed at the wrong location or position.\n"
    "4. incorrect_severity_of_finding: a finding is described with the wrong severity or "
    "extent.\n"
    "5. spurious_comparison: the candidate mentions a comparison to a prior study that the "
    "reference does not contain.\n"
    "6. omitted_comparison: the candidate omits a comparison describing a change from a "
    "previous study that the reference contains.\n"
    "\n"
    "Label each error clinically_significant when it could change patient management or "
    "diagnosis, and clinically_insignificant when it is a minor or stylistic difference "
    "without impact on care.";

inline constexpr const char* kSingleV1 =
    "Reference report:\n"
    "{{reference}}\n"
    "\n"
    "Candidate report:\n"
    "{{candidate}}\n"
    "\n"
    "Compare the candidate report against the reference report. Identify and list all "
    "errors, assigning each one category and one significance label. Then respond with "
    "exactly one JSON object of the form:\n"
    "{\"errors\": [{\"category\": \"...\", \"significance\": \"...\", \"description\": "
    "\"...\"}], \"total_count\": <integer>, \"significant_count\": <integer>}\n"
    "Use an empty errors list and zero counts when the reports agree clinically. Output "
    "only the JSON object.";

inline constexpr const char* kCompareV1 =
    "Reference report:\n"
    "{{reference}}\n"
    "\n"
    "Candidate report:\n"
    "{{candidate}}\n"
    "\n"
    "Compare the candidate report against the reference report, statement by statement. "
    "Identify and list all errors in plain text, one per line, each as:\n"
    "<category> | <clinically_significant or clinically_insignificant> | <short "
    "explanation>\n"
    "If the reports agree clinically, write exactly: NO ERRORS\n"
    "Do not output JSON in this step.";

inline constexpr const char* kCountV1 =
    "Below is a comparison listing the discrepancies between a candidate radiology report "
    "and a reference report:\n"
    "\n"
    "{{comparison}}\n"
    "\n"
    "Summarize these discrepancies as exactly one JSON object of the form:\n"
    "{\"errors\": [{\"category\": \"...\", \"significance\": \"...\", \"description\": "
    "\"...\"}], \"total_count\": <integer>, \"significant_count\": <integer>}\n"
    "Each category must be one of: false_prediction_of_finding, omission_of_finding, "
    "incorrect_location_of_finding, incorrect_severity_of_finding, spurious_comparison, "
    "omitted_comparison.\n"
    "If the comparison reports no errors, use an empty list and zero counts. Output only "
    "the JSON object.";

inline constexpr const char* kScreenV1 =
    "Reference report:\n"
    "{{reference}}\n"
    "\n"
    "Candidate report:\n"
    "{{candidate}}\n"
    "\n"
    "Decide whether this pair of radiology reports is usable as a comparison training "
    "example. Answer REJECT if either text is empty, truncated, garbled, duplicated "
    "boilerplate, or not a radiology report; otherwise answer KEEP. Reply with KEEP or "
    "REJECT followed by one short reason.";

}  // namespace prompts

struct TemplateSet {
    std::string version;
    std::string system_text;
    PromptTemplate single;
    PromptTemplate compare;
    PromptTemplate count;
    PromptTemplate screen;  // reference+candidate template used by pair screening

    static TemplateSet defaults_v1() {
        TemplateSet t;
        t.version = "v1";
        t.system_text = prompts::kSystemV1;
        t.single = {PromptTemplate::Stage::single, "v1", prompts::kSingleV1};
        t.compare = {PromptTemplate::Stage::compare, "v1", prompts::kCompareV1};
        t.count = {PromptTemplate::Stage::count, "v1", prompts::kCountV1};
        t.screen = {PromptTemplate::Stage::single, "screen-v1", prompts::kScreenV1};
        return t;
    }

    /// Loads system.txt (plain text) and single/compare/count[.txt] templates
    /// (front-matter files) from a directory; screen.txt is optional and
    /// falls back to the built-in.
    static TemplateSet load_dir(const std::filesystem::path& dir) {
        TemplateSet t;
        t.system_text = read_file(dir / "system.txt");
        t.single = load_template(dir / "single.txt");
        t.compare = load_template(dir / "compare.txt");
        t.count = load_template(dir / "count.txt");
        if (t.single.stage != PromptTemplate::Stage::single ||
            t.compare.stage != PromptTemplate::Stage::compare ||
            t.count.stage != PromptTemplate::Stage::count)
            throw Error("template directory has files with mismatched stages");
        if (t.single.version != t.compare.version || t.single.version != t.count.version)
            throw Error("template versions disagree across stages");
        t.version = t.single.version;
        if (std::filesystem::exists(dir / "screen.txt"))
            t.screen = load_template(dir / "screen.txt");
        else
            t.screen = defaults_v1().screen;
        return t;
    }
};

// ---------------------------------------------------------------------------
// Rendering

/// System message (task framing and taxonomy) plus the rendered user body.
/// {{reference}}/{{candidate}} bind from the pair; further placeholders come
/// from `bindings`. Deterministic; unbound placeholders are an error.
inline std::vector<ChatMessage> render_messages(
    const PromptTemplate& tmpl, const ReportPair& pair,
    const std::map<std::string, std::string>& bindings = {},
    const std::string& system_text = prompts::kSystemV1) {
    std::map<std::string, std::string> values = bindings;
    values.emplace("reference", pair.reference.text);
    values.emplace("candidate", pair.candidate.text);

    std::string rendered;
    rendered.reserve(tmpl.body.size());
    std::size_t pos = 0;
    while (pos < tmpl.body.size()) {
        const std::size_t open = tmpl.body.find("{{", pos);
        if (open == std::string::npos) {
            rendered.append(tmpl.body, pos, std::string::npos);
            break;
        }
        const std::size_t close = tmpl.body.find("}}", open + 2);
        if (close == std::string::npos) {
            rendered.append(tmpl.body, pos, std::string::npos);
            break;
        }
        const std::string key = tmpl.body.substr(open + 2, close - open - 2);
        auto it = values.find(key);
        if (it == values.end())
            throw UnboundPlaceholderError("unbound placeholder {{" + key + "}} in " +
                                          std::string(to_string(tmpl.stage)) + " template");
        rendered.append(tmpl.body, pos, open - pos);
        rendered += it->second;
        pos = close + 2;
    }
    return {{Role::system, system_text}, {Role::user, rendered}};
}

// ---------------------------------------------------------------------------
// Judging

struct JudgeParams {
    std::string model = "gpt-4";
    double temperature = 0.0;
    int max_tokens = 1600;
    int parse_retries = 1;  // re-ask the backend once when parsing fails
    int concurrency = 4;    // in-flight bound for benchmark fan-out
};

struct JudgeOutcome {
    Judgment judgment;
    long long prompt_tokens = 0;
    long long completion_tokens = 0;
    RepairTrace trace;  // from the final parse attempt
};

/// single_stage: one completion parsed into a Judgment. two_stage: the
/// compare completion is kept verbatim as raw_stage1 and fed to the count
/// template, whose completion is parsed. A ParseError re-asks the backend up
/// to parse_retries times before propagating.
inline JudgeOutcome judge_pair_detailed(const ReportPair& pair, ChatBackend& backend,
                                        JudgeStrategy strategy, const TemplateSet& templates,
                                        const JudgeParams& params,
                                        const SynonymTable& synonyms = SynonymTable::defaults()) {
    auto request_for = [&](const PromptTemplate& tmpl,
                           const std::map<std::string, std::string>& bindings) {
        ChatRequest req;
        req.model = params.model;
        req.temperature = params.temperature;
        req.max_tokens = params.max_tokens;
        req.messages = render_messages(tmpl, pair, bindings, templates.system_text);
        return req;
    };

    JudgeOutcome out;
    auto complete = [&](const ChatRequest& req) {
        try {
            ChatResponse resp = backend.complete(req);
            out.prompt_tokens += resp.prompt_tokens;
            out.completion_tokens += resp.completion_tokens;
            return resp;
        } catch (const BackendError& e) {
            throw BackendError(e.kind(), "pair " + pair.pair_id + ": " + e.what(), e.status(),
                               e.body());
        }
    };
    auto parse_with_retry = [&](const ChatRequest& req) {
        for (int attempt = 0;; ++attempt) {
            ChatResponse resp = complete(req);
            try {
                return parse_judgment(resp.content, pair.pair_id, params.model,
                                      templates.version, strategy, synonyms, &out.trace);
            } catch (const ParseError&) {
                if (attempt >= params.parse_retries) throw;
            }
        }
    };

    if (strategy == JudgeStrategy::single_stage) {
        out.judgment = parse_with_retry(request_for(templates.single, {}));
    } else {
        ChatResponse stage1 = complete(request_for(templates.compare, {}));
        out.judgment =
            parse_with_retry(request_for(templates.count, {{"comparison", stage1.content}}));
        out.judgment.raw_stage1 = stage1.content;
    }
    return out;
}

inline Judgment judge_pair(const ReportPair& pair, ChatBackend& backend,
                           JudgeStrategy strategy, const TemplateSet& templates,
                           const JudgeParams& params,
                           const SynonymTable& synonyms = SynonymTable::defaults()) {
    return judge_pair_detailed(pair, backend, strategy, templates, params, synonyms).judgment;
}

enum class ScoreMode { total, significant_only };

inline int score(const Judgment& j, ScoreMode mode) {
    return mode == ScoreMode::total ? j.total_count : j.significant_count;
}

// ---------------------------------------------------------------------------
// Benchmark

struct BenchmarkReport {
    std::string model_id;
    JudgeStrategy strategy = JudgeStrategy::two_stage;
    AgreementResult tau_vs_raters;
    struct PairRow {
        std::string pair_id;
        int judge_total = 0;
        double rater_mean = 0.0;
    };
    std::vector<PairRow> per_pair;  // sorted by pair_id; successes only
    ErrorDistribution error_dist;
    std::vector<std::pair<std::string, std::string>> failures;  // pair_id -> error
    long long prompt_tokens = 0;
    long long completion_tokens = 0;
    int repaired_count = 0;  // judgments that needed repair rules
};

inline ojson to_json(const BenchmarkReport& r) {
    ojson j;
    j["model_id"] = r.model_id;
    j["strategy"] = std::string(to_string(r.strategy));
    j["tau_vs_raters"] = to_json(r.tau_vs_raters);
    ojson rows = ojson::array();
    for (const auto& row : r.per_pair)
        rows.push_back({{"pair_id", row.pair_id},
                        {"judge_total", row.judge_total},
                        {"rater_mean", row.rater_mean}});
    j["per_pair"] = std::move(rows);
    j["error_distribution"] = to_json(r.error_dist);
    ojson failures = ojson::array();
    for (const auto& [pair_id, error] : r.failures)
        failures.push_back({{"pair_id", pair_id}, {"error", error}});
    j["failures"] = std::move(failures);
    j["prompt_tokens"] = r.prompt_tokens;
    j["completion_tokens"] = r.completion_tokens;
    j["repaired_count"] = r.repaired_count;
    return j;
}

/// Per-pair mean of rater totals, keyed by pair_id.
inline std::map<std::string, double> rater_mean_totals(
    const std::vector<RaterAnnotation>& annotations) {
    std::map<std::string, std::pair<double, int>> sums;
    for (const RaterAnnotation& a : annotations) {
        auto& [sum, count] = sums[a.pair_id];
        sum += a.total_count();
        ++count;
    }
    std::map<std::string, double> means;
    for (const auto& [pair_id, sc] : sums) means[pair_id] = sc.first / sc.second;
    return means;
}

/// Judges every annotated pair (bounded fan-out), then correlates judge
/// totals with rater means. Failed pairs are listed, never fabricated as
/// zeros, and excluded from the statistics.
inline BenchmarkReport benchmark(const std::vector<ReportPair>& pairs,
                                 const std::vector<RaterAnnotation>& annotations,
                                 ChatBackend& backend, JudgeStrategy strategy,
                                 const TemplateSet& templates, const JudgeParams& params,
                                 const SynonymTable& synonyms = SynonymTable::defaults()) {
    const std::map<std::string, double> means = rater_mean_totals(annotations);

    std::vector<const ReportPair*> eligible;
    for (const ReportPair& p : pairs)
        if (means.count(p.pair_id)) eligible.push_back(&p);
    std::sort(eligible.begin(), eligible.end(),
              [](const ReportPair* a, const ReportPair* b) { return a->pair_id < b->pair_id; });
    if (eligible.size() < 2)
        throw TooFewPairsError("benchmark requires at least 2 pairs with annotations, got " +
                               std::to_string(eligible.size()));

    std::vector<std::optional<JudgeOutcome>> outcomes(eligible.size());
    std::vector<std::optional<std::string>> errors(eligible.size());
    std::atomic<std::size_t> next{0};
    const int worker_count = std::clamp<int>(params.concurrency, 1,
                                             static_cast<int>(eligible.size()));
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < eligible.size();) {
            try {
                outcomes[i] = judge_pair_detailed(*eligible[i], backend, strategy, templates,
                                                  params, synonyms);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    if (worker_count == 1) {
        work();
    } else {
        std::vector<std::thread> workers;
        for (int w = 0; w < worker_count; ++w) workers.emplace_back(work);
        for (auto& w : workers) w.join();
    }

    BenchmarkReport report;
    report.model_id = params.model;
    report.strategy = strategy;
    std::map<std::string, int> judge_totals;
    std::map<std::string, double> judged_means;
    for (std::size_t i = 0; i < eligible.size(); ++i) {
        const std::string& pair_id = eligible[i]->pair_id;
        if (outcomes[i]) {
            const Judgment& j = outcomes[i]->judgment;
            report.per_pair.push_back({pair_id, j.total_count, means.at(pair_id)});
            judge_totals[pair_id] = j.total_count;
            judged_means[pair_id] = means.at(pair_id);
            report.prompt_tokens += outcomes[i]->prompt_tokens;
            report.completion_tokens += outcomes[i]->completion_tokens;
            if (!j.repair_rules.empty()) ++report.repaired_count;
        } else {
            report.failures.emplace_back(pair_id, *errors[i]);
        }
    }
    if (report.per_pair.size() < 2)
        throw TooFewPairsError("fewer than 2 pairs were judged successfully");

    std::vector<double> x, y;
    x.reserve(report.per_pair.size());
    y.reserve(report.per_pair.size());
    for (const auto& row : report.per_pair) {
        x.push_back(row.judge_total);
        y.push_back(row.rater_mean);
    }
    report.tau_vs_raters = kendall_tau_b(x, y);
    report.error_dist = error_distribution(judge_totals, judged_means);
    return report;
}

}  // namespace repeval
