#pragma once

// Extraction, repair, and validation of structured judge output. LLM
// responses arrive with prose around the JSON, single-quoted strings,
// trailing commas, bare keys, comment lines, truncated brackets, or missing
// keys; this module turns them into well-formed Judgments or typed errors.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "repeval/core.hpp"
#include "repeval/io.hpp"

namespace repeval {

class NoObjectFoundError : public Error {
public:
    using Error::Error;
};

class UnmappableCategoryError : public Error {
public:
    using Error::Error;
};

struct RepairTrace {
    std::vector<std::string> applied_rules;  // rule ids in application order
    std::string original;
    std::string repaired;
};

class ParseError : public Error {
public:
    ParseError(const std::string& message, std::string raw, RepairTrace trace)
        : Error(message), raw_(std::move(raw)), trace_(std::move(trace)) {}
    const std::string& raw() const { return raw_; }
    const RepairTrace& trace() const { return trace_; }

private:
    std::string raw_;
    RepairTrace trace_;
};

// ---------------------------------------------------------------------------
// Candidate object extraction

namespace detail {

// Largest balanced {...} span in text[begin, end), tracking double-quoted
// strings so braces inside them do not count. Best effort on malformed input.
inline std::optional<std::pair<std::size_t, std::size_t>> largest_balanced_object(
    std::string_view text, std::size_t begin, std::size_t end) {
    std::optional<std::pair<std::size_t, std::size_t>> best;
    std::vector<std::size_t> opens;
    bool in_string = false;
    for (std::size_t i = begin; i < end; ++i) {
        const char c = text[i];
        if (in_string) {
            if (c == '\\') ++i;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            opens.push_back(i);
        } else if (c == '}' && !opens.empty()) {
            const std::size_t open = opens.back();
            opens.pop_back();
            if (opens.empty()) {
                const std::size_t size = i - open + 1;
                if (!best || size > best->second - best->first) best = {{open, i + 1}};
            }
        }
    }
    return best;
}

}  // namespace detail

/// Largest balanced {...} block, preferring one inside a fenced code block.
/// Prose before and after is stripped. If braces exist but never balance
/// (a truncated response), the tail from the first '{' is returned so the
/// repair pass can close it.
inline std::string extract_candidate_object(const std::string& text) {
    // fenced code blocks first
    std::optional<std::pair<std::size_t, std::size_t>> best_fenced;
    std::size_t pos = 0;
    while (true) {
        const std::size_t open = text.find("```", pos);
        if (open == std::string::npos) break;
        std::size_t body_start = text.find('\n', open + 3);
        if (body_start == std::string::npos) break;
        ++body_start;
        const std::size_t close = text.find("```", body_start);
        const std::size_t body_end = close == std::string::npos ? text.size() : close;
        auto span = detail::largest_balanced_object(text, body_start, body_end);
        if (span && (!best_fenced || span->second - span->first >
                                         best_fenced->second - best_fenced->first))
            best_fenced = span;
        if (close == std::string::npos) break;
        pos = close + 3;
    }
    if (best_fenced)
        return text.substr(best_fenced->first, best_fenced->second - best_fenced->first);

    auto span = detail::largest_balanced_object(text, 0, text.size());
    if (span) return text.substr(span->first, span->second - span->first);

    const std::size_t first_brace = text.find('{');
    if (first_brace != std::string::npos) return text.substr(first_brace);
    throw NoObjectFoundError("no JSON object in text");
}

// ---------------------------------------------------------------------------
// Repair rules R1..R5, applied in fixed order

namespace detail {

// R1: single-quoted strings become double-quoted; spans that are already
// double-quoted are left untouched.
inline std::string repair_single_quotes(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    enum { outside, in_dq, in_sq } state = outside;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        switch (state) {
        case outside:
            if (c == '"') {
                state = in_dq;
                out += c;
            } else if (c == '\'') {
                state = in_sq;
                out += '"';
            } else {
                out += c;
            }
            break;
        case in_dq:
            out += c;
            if (c == '\\' && i + 1 < text.size()) out += text[++i];
            else if (c == '"') state = outside;
            break;
        case in_sq:
            if (c == '\\' && i + 1 < text.size()) {
                const char next = text[++i];
                if (next == '\'') out += '\'';       // \' has no meaning in JSON
                else if (next == '"') out += "\\\"";
                else { out += '\\'; out += next; }
            } else if (c == '\'') {
                state = outside;
                out += '"';
            } else if (c == '"') {
                out += "\\\"";
            } else {
                out += c;
            }
            break;
        }
    }
    return out;
}

// R2: drop commas directly before a closing bracket.
inline std::string repair_trailing_commas(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool in_string = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            out += c;
            if (c == '\\' && i + 1 < text.size()) out += text[++i];
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') {
            in_string = true;
            out += c;
            continue;
        }
        if (c == ',') {
            std::size_t j = i + 1;
            while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
            if (j < text.size() && (text[j] == '}' || text[j] == ']')) continue;
        }
        out += c;
    }
    return out;
}

// R3: quote bare object keys.
inline std::string repair_bare_keys(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool in_string = false;
    std::vector<char> stack;
    char last_significant = '\0';
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (in_string) {
            out += c;
            if (c == '\\' && i + 1 < text.size()) out += text[++i];
            else if (c == '"') in_string = false;
            ++i;
            continue;
        }
        if (c == '"') {
            in_string = true;
            last_significant = c;
            out += c;
            ++i;
            continue;
        }
        if (c == '{' || c == '[') stack.push_back(c);
        else if (c == '}' && !stack.empty() && stack.back() == '{') stack.pop_back();
        else if (c == ']' && !stack.empty() && stack.back() == '[') stack.pop_back();

        const bool key_position = !stack.empty() && stack.back() == '{' &&
                                  (last_significant == '{' || last_significant == ',');
        if (key_position &&
            (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$')) {
            std::size_t j = i;
            while (j < text.size() &&
                   (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_' ||
                    text[j] == '$' || text[j] == '-'))
                ++j;
            std::size_t k = j;
            while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
            if (k < text.size() && text[k] == ':') {
                out += '"';
                out.append(text, i, j - i);
                out += '"';
                last_significant = '"';
                i = j;
                continue;
            }
        }
        if (!std::isspace(static_cast<unsigned char>(c))) last_significant = c;
        out += c;
        ++i;
    }
    return out;
}

// R4: remove // comments outside strings.
inline std::string repair_comments(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool in_string = false;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (in_string) {
            out += c;
            if (c == '\\' && i + 1 < text.size()) out += text[++i];
            else if (c == '"') in_string = false;
            ++i;
            continue;
        }
        if (c == '"') {
            in_string = true;
            out += c;
            ++i;
            continue;
        }
        if (c == '/' && i + 1 < text.size() && text[i + 1] == '/') {
            while (i < text.size() && text[i] != '\n') ++i;
            continue;
        }
        out += c;
        ++i;
    }
    return out;
}

// R5: close an unterminated string, then append missing closing brackets.
inline std::string repair_truncation(const std::string& text) {
    bool in_string = false;
    std::vector<char> stack;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (c == '\\') ++i;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '{' || c == '[') stack.push_back(c);
        else if (c == '}' && !stack.empty() && stack.back() == '{') stack.pop_back();
        else if (c == ']' && !stack.empty() && stack.back() == '[') stack.pop_back();
    }
    if (!in_string && stack.empty()) return text;
    std::string out = text;
    if (in_string) out += '"';
    for (auto it = stack.rbegin(); it != stack.rend(); ++it)
        out += *it == '{' ? '}' : ']';
    return out;
}

inline bool parses_strict(const std::string& text) {
    return !ojson::parse(text, nullptr, false).is_discarded();
}

}  // namespace detail

/// Best-effort repair: rules R1..R5 in fixed order, swept until a fixed point
/// (or the text parses). The trace records every rule that changed the text,
/// in application order; it is empty iff the input already parsed cleanly.
inline std::pair<std::string, RepairTrace> repair(const std::string& text) {
    RepairTrace trace;
    trace.original = text;
    std::string current = text;
    if (detail::parses_strict(current)) {
        trace.repaired = current;
        return {current, trace};
    }

    struct Rule {
        const char* id;
        std::string (*apply)(const std::string&);
    };
    static constexpr Rule rules[] = {
        {"R1", detail::repair_single_quotes},
        {"R2", detail::repair_trailing_commas},
        {"R3", detail::repair_bare_keys},
        {"R4", detail::repair_comments},
        {"R5", detail::repair_truncation},
    };

    constexpr int kMaxSweeps = 8;
    bool parsed = false;
    for (int sweep = 0; sweep < kMaxSweeps && !parsed; ++sweep) {
        bool changed = false;
        for (const Rule& rule : rules) {
            std::string next = rule.apply(current);
            if (next != current) {
                trace.applied_rules.emplace_back(rule.id);
                current = std::move(next);
                changed = true;
                if (detail::parses_strict(current)) {
                    parsed = true;
                    break;
                }
            }
        }
        if (!changed) break;
    }
    trace.repaired = current;
    return {current, trace};
}

// ---------------------------------------------------------------------------
// Category normalization

namespace detail {

// lowercase, punctuation and '_' to single spaces, whitespace collapsed
inline std::string normalize_label(std::string_view label) {
    std::string out;
    for (unsigned char c : label) {
        if (std::isalnum(c)) {
            out += static_cast<char>(std::tolower(c));
        } else if (!out.empty() && out.back() != ' ') {
            out += ' ';
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

}  // namespace detail

/// Accepted surface forms per category. The default table covers the
/// canonical snake_case ids, the taxonomy's prose labels, and frequent model
/// paraphrases; an editable JSON file with the same shape can replace it.
class SynonymTable {
public:
    static const SynonymTable& defaults() {
        static const SynonymTable table = make_defaults();
        return table;
    }

    static SynonymTable from_json(const ojson& j) {
        SynonymTable t;
        for (const auto& [key, forms] : j.items()) {
            auto category = category_from_string(key);
            if (!category) throw Error("synonym table: unknown category id '" + key + "'");
            if (!forms.is_array()) throw Error("synonym table: forms for '" + key + "' must be an array");
            for (const auto& form : forms) t.add(*category, form.get<std::string>());
        }
        return t;
    }

    static SynonymTable load(const std::filesystem::path& path) {
        return from_json(ojson::parse(read_file(path)));
    }

    ojson to_json() const {
        ojson j;
        for (ErrorCategory c : all_categories()) {
            ojson forms = ojson::array();
            auto it = surface_.find(c);
            if (it != surface_.end())
                for (const std::string& s : it->second) forms.push_back(s);
            j[std::string(to_string(c))] = std::move(forms);
        }
        return j;
    }

    std::optional<ErrorCategory> find(std::string_view label) const {
        auto it = normalized_.find(detail::normalize_label(label));
        if (it == normalized_.end()) return std::nullopt;
        return it->second;
    }

    void add(ErrorCategory category, std::string surface) {
        normalized_[detail::normalize_label(surface)] = category;
        surface_[category].push_back(std::move(surface));
    }

private:
    static SynonymTable make_defaults() {
        SynonymTable t;
        auto add_all = [&](ErrorCategory c, std::initializer_list<const char*> forms) {
            for (const char* f : forms) t.add(c, f);
        };
        add_all(ErrorCategory::false_prediction_of_finding,
                {"false_prediction_of_finding", "False prediction of finding",
                 "false prediction of findings", "false prediction", "false positive finding",
                 "false positive", "falsely predicted finding", "finding not in reference"});
        add_all(ErrorCategory::omission_of_finding,
                {"omission_of_finding", "Omission of finding", "omission of findings",
                 "omitted finding", "missed finding", "missing finding", "omission"});
        add_all(ErrorCategory::incorrect_location_of_finding,
                {"incorrect_location_of_finding", "Incorrect location/position of finding",
                 "incorrect location of finding", "incorrect position of finding",
                 "incorrect location", "incorrect position", "wrong location of finding"});
        add_all(ErrorCategory::incorrect_severity_of_finding,
                {"incorrect_severity_of_finding", "Incorrect severity of finding",
                 "incorrect severity", "wrong severity of finding", "wrong severity"});
        add_all(ErrorCategory::spurious_comparison,
                {"spurious_comparison",
                 "Mention of comparison that is not present in the reference impression",
                 "mention of comparison not present in the reference", "spurious comparison",
                 "comparison not present in reference", "false comparison"});
        add_all(ErrorCategory::omitted_comparison,
                {"omitted_comparison",
                 "Omission of comparison describing a change from a previous study",
                 "omission of comparison", "omitted comparison", "missing comparison"});
        return t;
    }

    std::map<std::string, ErrorCategory> normalized_;
    std::map<ErrorCategory, std::vector<std::string>> surface_;
};

inline ErrorCategory normalize_category(std::string_view label,
                                        const SynonymTable& table = SynonymTable::defaults()) {
    auto category = table.find(label);
    if (!category)
        throw UnmappableCategoryError("unmappable error category: '" + std::string(label) + "'");
    return *category;
}

namespace detail {

inline std::optional<Significance> normalize_significance(std::string_view label) {
    const std::string n = normalize_label(label);
    if (n == "clinically significant" || n == "significant" ||
        n == "clinically significant error")
        return Significance::clinically_significant;
    if (n == "clinically insignificant" || n == "insignificant" ||
        n == "not significant" || n == "clinically not significant" ||
        n == "clinically insignificant error")
        return Significance::clinically_insignificant;
    return std::nullopt;
}

inline std::optional<long long> as_count(const ojson& v) {
    if (v.is_number_integer()) return v.get<long long>();
    if (v.is_number_float()) {
        const double d = v.get<double>();
        if (d == static_cast<long long>(d)) return static_cast<long long>(d);
        return std::nullopt;
    }
    if (v.is_string()) {
        try {
            std::size_t pos = 0;
            const long long n = std::stoll(v.get<std::string>(), &pos);
            if (pos == v.get<std::string>().size()) return n;
        } catch (const std::exception&) {
        }
    }
    return std::nullopt;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Judgment parsing

/// extract -> parse -> (repair -> reparse) -> decode. The errors list is the
/// evidence: counts are recomputed from it, a missing total_count is derived,
/// and a declared total that disagrees loses with a warning. Unknown
/// categories degrade to a warning and a dropped item, never a failure.
inline Judgment parse_judgment(const std::string& text, const std::string& pair_id,
                               const std::string& model_id,
                               const std::string& prompt_version, JudgeStrategy strategy,
                               const SynonymTable& synonyms = SynonymTable::defaults(),
                               RepairTrace* trace_out = nullptr) {
    RepairTrace trace;
    trace.original = text;

    std::string object_text;
    try {
        object_text = extract_candidate_object(text);
    } catch (const NoObjectFoundError&) {
        trace.repaired.clear();
        if (trace_out) *trace_out = trace;
        throw ParseError("no JSON object found in response", text, trace);
    }

    ojson obj = ojson::parse(object_text, nullptr, false);
    if (obj.is_discarded()) {
        auto [repaired, repair_trace] = repair(object_text);
        trace = std::move(repair_trace);
        trace.original = text;
        obj = ojson::parse(repaired, nullptr, false);
        if (obj.is_discarded()) {
            if (trace_out) *trace_out = trace;
            throw ParseError("response is not parseable JSON after repair", text, trace);
        }
    } else {
        trace.repaired = object_text;
    }
    if (trace_out) *trace_out = trace;

    if (!obj.is_object()) {
        throw ParseError("extracted JSON value is not an object", text, trace);
    }

    Judgment j;
    j.pair_id = pair_id;
    j.model_id = model_id;
    j.prompt_version = prompt_version;
    j.strategy = strategy;
    j.raw_final = text;
    j.repair_rules = trace.applied_rules;

    try {
        bool counts_imported = false;
        if (obj.contains("errors") && obj.at("errors").is_array()) {
            for (const ojson& e : obj.at("errors")) {
                if (!e.is_object()) {
                    j.warnings.push_back("non-object entry in errors list dropped");
                    continue;
                }
                if (!e.contains("category") || !e.at("category").is_string()) {
                    j.warnings.push_back("error item without a category label dropped");
                    continue;
                }
                const std::string label = e.at("category").get<std::string>();
                auto category = synonyms.find(label);
                if (!category) {
                    j.warnings.push_back("unmappable category '" + label + "'; item dropped");
                    continue;
                }
                ErrorItem item;
                item.category = *category;
                if (e.contains("significance") && e.at("significance").is_string()) {
                    auto sig = detail::normalize_significance(e.at("significance").get<std::string>());
                    if (sig) {
                        item.significance = *sig;
                    } else {
                        item.significance = Significance::clinically_insignificant;
                        j.warnings.push_back("unrecognized significance '" +
                                             e.at("significance").get<std::string>() +
                                             "' treated as clinically_insignificant");
                    }
                } else {
                    item.significance = Significance::clinically_insignificant;
                    j.warnings.push_back("missing significance treated as clinically_insignificant");
                }
                if (e.contains("description") && e.at("description").is_string())
                    item.description = e.at("description").get<std::string>();
                j.errors.push_back(std::move(item));
            }
        } else if (obj.contains("errors")) {
            j.warnings.push_back("errors key is not an array; ignored");
        } else if (obj.contains("counts") && obj.at("counts").is_object()) {
            // counts imported without an item list
            try {
                j.counts = counts_from_json(obj.at("counts"));
                counts_imported = true;
            } catch (const std::exception&) {
                j.warnings.push_back("counts object does not match the expected layout; ignored");
            }
        } else {
            j.warnings.push_back("response has no errors list");
        }

        if (!counts_imported) j.counts = counts_from_errors(j.errors);
        j.total_count = j.counts.total();
        j.significant_count = j.counts.significant();

        if (obj.contains("total_count")) {
            auto declared = detail::as_count(obj.at("total_count"));
            if (!declared) {
                j.warnings.push_back("total_count is not an integer; derived from errors list");
            } else if (*declared != j.total_count) {
                j.warnings.push_back("declared total_count " + std::to_string(*declared) +
                                     " != derived " + std::to_string(j.total_count) +
                                     "; errors list wins");
            }
        } else {
            j.warnings.push_back("total_count missing; derived from errors list");
        }
        if (obj.contains("significant_count")) {
            auto declared = detail::as_count(obj.at("significant_count"));
            if (declared && *declared != j.significant_count)
                j.warnings.push_back("declared significant_count " + std::to_string(*declared) +
                                     " != derived " + std::to_string(j.significant_count) +
                                     "; errors list wins");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("response decoding failed: ") + e.what(), text, trace);
    }
    return j;
}

}  // namespace repeval
