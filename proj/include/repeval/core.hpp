#pragma once

// Domain types for radiology report evaluation: reports, report pairs, the
// six-category clinical error taxonomy, structured judgments and human rater
// annotations, plus their canonical JSON encodings.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace repeval {

using ojson = nlohmann::ordered_json;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Error taxonomy

enum class ErrorCategory {
    false_prediction_of_finding,
    omission_of_finding,
    incorrect_location_of_finding,
    incorrect_severity_of_finding,
    spurious_comparison,
    omitted_comparison,
};

inline constexpr std::size_t kCategoryCount = 6;

inline constexpr std::array<ErrorCategory, kCategoryCount> all_categories() {
    return {ErrorCategory::false_prediction_of_finding,
            ErrorCategory::omission_of_finding,
            ErrorCategory::incorrect_location_of_finding,
            ErrorCategory::incorrect_severity_of_finding,
            ErrorCategory::spurious_comparison,
            ErrorCategory::omitted_comparison};
}

// Serialized names are a stable contract; never rename.
inline std::string_view to_string(ErrorCategory c) {
    switch (c) {
    case ErrorCategory::false_prediction_of_finding: return "false_prediction_of_finding";
    case ErrorCategory::omission_of_finding: return "omission_of_finding";
    case ErrorCategory::incorrect_location_of_finding: return "incorrect_location_of_finding";
    case ErrorCategory::incorrect_severity_of_finding: return "incorrect_severity_of_finding";
    case ErrorCategory::spurious_comparison: return "spurious_comparison";
    case ErrorCategory::omitted_comparison: return "omitted_comparison";
    }
    throw Error("invalid ErrorCategory");
}

inline std::optional<ErrorCategory> category_from_string(std::string_view s) {
    for (ErrorCategory c : all_categories())
        if (to_string(c) == s) return c;
    return std::nullopt;
}

enum class Significance {
    clinically_significant,
    clinically_insignificant,
};

inline constexpr std::size_t kSignificanceCount = 2;

inline std::string_view to_string(Significance s) {
    return s == Significance::clinically_significant ? "clinically_significant"
                                                     : "clinically_insignificant";
}

inline std::optional<Significance> significance_from_string(std::string_view s) {
    if (s == "clinically_significant") return Significance::clinically_significant;
    if (s == "clinically_insignificant") return Significance::clinically_insignificant;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Reports

struct Report {
    std::string id;
    std::string text;
    std::map<std::string, std::string> meta;

    friend bool operator==(const Report&, const Report&) = default;
};

enum class Provenance { bleu_matched, random, user };

inline std::string_view to_string(Provenance p) {
    switch (p) {
    case Provenance::bleu_matched: return "bleu_matched";
    case Provenance::random: return "random";
    case Provenance::user: return "user";
    }
    throw Error("invalid Provenance");
}

inline std::optional<Provenance> provenance_from_string(std::string_view s) {
    if (s == "bleu_matched") return Provenance::bleu_matched;
    if (s == "random") return Provenance::random;
    if (s == "user") return Provenance::user;
    return std::nullopt;
}

struct ReportPair {
    std::string pair_id;
    Report reference;
    Report candidate;
    Provenance provenance = Provenance::user;

    friend bool operator==(const ReportPair&, const ReportPair&) = default;
};

// ---------------------------------------------------------------------------
// Judgments

enum class JudgeStrategy { single_stage, two_stage };

inline std::string_view to_string(JudgeStrategy s) {
    return s == JudgeStrategy::single_stage ? "single_stage" : "two_stage";
}

inline std::optional<JudgeStrategy> strategy_from_string(std::string_view s) {
    if (s == "single_stage") return JudgeStrategy::single_stage;
    if (s == "two_stage") return JudgeStrategy::two_stage;
    return std::nullopt;
}

struct ErrorItem {
    ErrorCategory category = ErrorCategory::false_prediction_of_finding;
    Significance significance = Significance::clinically_significant;
    std::string description;  // may be empty only for counts imported without text

    friend bool operator==(const ErrorItem&, const ErrorItem&) = default;
};

// category x significance count grid
struct CountMatrix {
    std::array<std::array<int, kSignificanceCount>, kCategoryCount> cells{};

    int& at(ErrorCategory c, Significance s) {
        return cells[static_cast<std::size_t>(c)][static_cast<std::size_t>(s)];
    }
    int at(ErrorCategory c, Significance s) const {
        return cells[static_cast<std::size_t>(c)][static_cast<std::size_t>(s)];
    }

    int total() const {
        int sum = 0;
        for (const auto& row : cells) sum += row[0] + row[1];
        return sum;
    }

    int significant() const {
        int sum = 0;
        for (const auto& row : cells)
            sum += row[static_cast<std::size_t>(Significance::clinically_significant)];
        return sum;
    }

    friend bool operator==(const CountMatrix&, const CountMatrix&) = default;
};

inline CountMatrix counts_from_errors(const std::vector<ErrorItem>& errors) {
    CountMatrix m;
    for (const ErrorItem& e : errors) m.at(e.category, e.significance) += 1;
    return m;
}

/// Full structured judge output for one report pair. Raw LLM text is kept
/// verbatim for audit and never re-synthesized from the parsed fields.
struct Judgment {
    std::string pair_id;
    std::string model_id;
    std::string prompt_version;
    JudgeStrategy strategy = JudgeStrategy::single_stage;
    std::vector<ErrorItem> errors;
    CountMatrix counts;
    int total_count = 0;
    int significant_count = 0;
    std::string raw_stage1;  // two-stage only
    std::string raw_final;
    std::vector<std::string> warnings;      // parse/consistency notes
    std::vector<std::string> repair_rules;  // repair rule ids applied, in order

    friend bool operator==(const Judgment&, const Judgment&) = default;
};

/// Returns every invariant violation; empty means valid. Never throws.
inline std::vector<std::string> validate_judgment(const Judgment& j) {
    std::vector<std::string> violations;
    for (ErrorCategory c : all_categories())
        for (Significance s :
             {Significance::clinically_significant, Significance::clinically_insignificant})
            if (j.counts.at(c, s) < 0)
                violations.push_back("negative cell: " + std::string(to_string(c)) + "/" +
                                     std::string(to_string(s)));
    if (j.total_count != j.counts.total())
        violations.push_back("total mismatch: total_count=" + std::to_string(j.total_count) +
                             " but matrix sum=" + std::to_string(j.counts.total()));
    if (j.significant_count != j.counts.significant())
        violations.push_back(
            "significant mismatch: significant_count=" + std::to_string(j.significant_count) +
            " but significant column sum=" + std::to_string(j.counts.significant()));
    if (!j.errors.empty() && !(counts_from_errors(j.errors) == j.counts))
        violations.push_back("histogram mismatch: counts matrix does not equal the histogram of "
                             "the errors list");
    if (j.total_count < 0) violations.push_back("negative total_count");
    if (j.significant_count < 0) violations.push_back("negative significant_count");
    return violations;
}

/// Human rater's per-category error counts for one pair (ReXVal-style).
struct RaterAnnotation {
    std::string pair_id;
    std::string rater_id;
    CountMatrix counts;

    int total_count() const { return counts.total(); }

    friend bool operator==(const RaterAnnotation&, const RaterAnnotation&) = default;
};

// ---------------------------------------------------------------------------
// Canonical JSON encodings. Field order is fixed so dumps are byte-stable.

inline ojson to_json(const Report& r) {
    ojson j;
    j["id"] = r.id;
    j["text"] = r.text;
    if (!r.meta.empty()) j["meta"] = r.meta;
    return j;
}

inline Report report_from_json(const ojson& j) {
    Report r;
    r.id = j.at("id").get<std::string>();
    r.text = j.at("text").get<std::string>();
    if (j.contains("meta"))
        r.meta = j.at("meta").get<std::map<std::string, std::string>>();
    if (r.id.empty()) throw Error("report id must be non-empty");
    return r;
}

inline ojson to_json(const ReportPair& p) {
    ojson j;
    j["pair_id"] = p.pair_id;
    j["reference"] = to_json(p.reference);
    j["candidate"] = to_json(p.candidate);
    j["provenance"] = std::string(to_string(p.provenance));
    return j;
}

inline ReportPair pair_from_json(const ojson& j) {
    ReportPair p;
    p.pair_id = j.at("pair_id").get<std::string>();
    p.reference = report_from_json(j.at("reference"));
    p.candidate = report_from_json(j.at("candidate"));
    auto prov = provenance_from_string(j.at("provenance").get<std::string>());
    if (!prov) throw Error("unknown provenance: " + j.at("provenance").get<std::string>());
    p.provenance = *prov;
    return p;
}

inline ojson to_json(const CountMatrix& m) {
    ojson j;
    for (ErrorCategory c : all_categories()) {
        ojson row;
        row["clinically_significant"] = m.at(c, Significance::clinically_significant);
        row["clinically_insignificant"] = m.at(c, Significance::clinically_insignificant);
        j[std::string(to_string(c))] = std::move(row);
    }
    return j;
}

inline CountMatrix counts_from_json(const ojson& j) {
    CountMatrix m;
    for (ErrorCategory c : all_categories()) {
        const ojson& row = j.at(std::string(to_string(c)));
        m.at(c, Significance::clinically_significant) =
            row.at("clinically_significant").get<int>();
        m.at(c, Significance::clinically_insignificant) =
            row.at("clinically_insignificant").get<int>();
    }
    return m;
}

inline ojson to_json(const ErrorItem& e) {
    ojson j;
    j["category"] = std::string(to_string(e.category));
    j["significance"] = std::string(to_string(e.significance));
    j["description"] = e.description;
    return j;
}

inline ErrorItem error_item_from_json(const ojson& j) {
    ErrorItem e;
    auto cat = category_from_string(j.at("category").get<std::string>());
    if (!cat) throw Error("unknown category: " + j.at("category").get<std::string>());
    e.category = *cat;
    auto sig = significance_from_string(j.at("significance").get<std::string>());
    if (!sig) throw Error("unknown significance: " + j.at("significance").get<std::string>());
    e.significance = *sig;
    e.description = j.value("description", std::string());
    return e;
}

inline ojson to_json(const Judgment& j) {
    ojson out;
    out["pair_id"] = j.pair_id;
    out["model_id"] = j.model_id;
    out["prompt_version"] = j.prompt_version;
    out["strategy"] = std::string(to_string(j.strategy));
    ojson errs = ojson::array();
    for (const ErrorItem& e : j.errors) errs.push_back(to_json(e));
    out["errors"] = std::move(errs);
    out["counts"] = to_json(j.counts);
    out["total_count"] = j.total_count;
    out["significant_count"] = j.significant_count;
    out["raw_stage1"] = j.raw_stage1;
    out["raw_final"] = j.raw_final;
    out["warnings"] = j.warnings;
    out["repair_rules"] = j.repair_rules;
    return out;
}

inline Judgment judgment_from_json(const ojson& j) {
    Judgment out;
    out.pair_id = j.at("pair_id").get<std::string>();
    out.model_id = j.at("model_id").get<std::string>();
    out.prompt_version = j.at("prompt_version").get<std::string>();
    auto strat = strategy_from_string(j.at("strategy").get<std::string>());
    if (!strat) throw Error("unknown strategy: " + j.at("strategy").get<std::string>());
    out.strategy = *strat;
    for (const ojson& e : j.at("errors")) out.errors.push_back(error_item_from_json(e));
    out.counts = counts_from_json(j.at("counts"));
    out.total_count = j.at("total_count").get<int>();
    out.significant_count = j.at("significant_count").get<int>();
    out.raw_stage1 = j.value("raw_stage1", std::string());
    out.raw_final = j.value("raw_final", std::string());
    out.warnings = j.value("warnings", std::vector<std::string>());
    out.repair_rules = j.value("repair_rules", std::vector<std::string>());
    return out;
}

inline ojson to_json(const RaterAnnotation& a) {
    ojson j;
    j["pair_id"] = a.pair_id;
    j["rater_id"] = a.rater_id;
    j["counts"] = to_json(a.counts);
    j["total_count"] = a.total_count();
    return j;
}

inline RaterAnnotation annotation_from_json(const ojson& j) {
    RaterAnnotation a;
    a.pair_id = j.at("pair_id").get<std::string>();
    a.rater_id = j.at("rater_id").get<std::string>();
    a.counts = counts_from_json(j.at("counts"));
    return a;
}

}  // namespace repeval
