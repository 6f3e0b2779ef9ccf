// Regenerates the bundled bench20 fixture: 20 report pairs (six drawn from
// the fig1 fixture file, fourteen synthetic), recorded two-stage judge
// responses (a handful deliberately malformed to exercise the repair rules),
// six synthetic rater annotation rows per pair, and the expected judge
// totals. Everything is seeded; outputs are committed under fixtures/bench20.

#include <cstdio>
#include <iostream>
#include <random>

#include "repeval/corpus.hpp"
#include "repeval/io.hpp"
#include "repeval/judge.hpp"
#include "repeval/testing/scripted_backend.hpp"
#include "repeval/testing/synthetic.hpp"

using namespace repeval;
namespace fs = std::filesystem;

namespace {

enum class Malformation { none, single_quotes, trailing_comma, missing_total, bare_keys, comment };

struct FixtureError {
    ErrorCategory category;
    Significance significance;
    std::string description;
};

struct FixturePair {
    ReportPair pair;
    std::vector<FixtureError> errors;
    Malformation malformation = Malformation::none;
};

std::string stage1_text(const std::vector<FixtureError>& errors) {
    if (errors.empty()) return "NO ERRORS";
    std::string out;
    for (const FixtureError& e : errors) {
        if (!out.empty()) out += '\n';
        out += std::string(to_string(e.category)) + " | " +
               std::string(to_string(e.significance)) + " | " + e.description;
    }
    return out;
}

std::string stage2_text(const std::vector<FixtureError>& errors, Malformation malformation) {
    ojson payload;
    ojson list = ojson::array();
    int significant = 0;
    for (const FixtureError& e : errors) {
        list.push_back({{"category", std::string(to_string(e.category))},
                        {"significance", std::string(to_string(e.significance))},
                        {"description", e.description}});
        if (e.significance == Significance::clinically_significant) ++significant;
    }
    payload["errors"] = std::move(list);
    if (malformation != Malformation::missing_total)
        payload["total_count"] = static_cast<int>(errors.size());
    payload["significant_count"] = significant;
    std::string text = payload.dump(1);

    switch (malformation) {
    case Malformation::single_quotes: {
        std::string swapped;
        for (char c : text) swapped += c == '"' ? '\'' : c;
        return swapped;
    }
    case Malformation::trailing_comma: {
        const std::size_t last = text.rfind('}');
        return text.substr(0, last) + ",\n}" + text.substr(last + 1);
    }
    case Malformation::bare_keys: {
        std::string out = text;
        for (const char* key : {"errors", "category", "significance", "description",
                                "total_count", "significant_count"}) {
            const std::string quoted = "\"" + std::string(key) + "\":";
            const std::string bare = std::string(key) + ":";
            std::size_t pos = 0;
            while ((pos = out.find(quoted, pos)) != std::string::npos) {
                out.replace(pos, quoted.size(), bare);
                pos += bare.size();
            }
        }
        return out;
    }
    case Malformation::comment:
        // inside the object, so extraction alone cannot sidestep it
        return "{\n// structured tally follows" + text.substr(1);
    case Malformation::missing_total:
    case Malformation::none: break;
    }
    return text;
}

FixtureError err(ErrorCategory c, Significance s, std::string d) {
    return FixtureError{c, s, std::move(d)};
}

}  // namespace

int main() {
    const fs::path root = REPEVAL_SOURCE_DIR;
    const fs::path out_dir = root / "fixtures" / "bench20";
    const fs::path cache_dir = out_dir / "cache";
    fs::remove_all(cache_dir);
    fs::create_directories(cache_dir);

    const ojson fig1 = ojson::parse(read_file(root / "fixtures" / "fig1_reports.json"));
    auto fig_report = [&](const char* group, const char* key, const std::string& id) {
        return Report{id, fig1.at(group).at(key).get<std::string>(), {}};
    };

    constexpr auto sig = Significance::clinically_significant;
    constexpr auto insig = Significance::clinically_insignificant;
    using EC = ErrorCategory;

    std::vector<FixturePair> fixtures;
    auto add_fig_pair = [&](const char* group, const char* cand, const std::string& pair_id,
                            std::vector<FixtureError> errors) {
        FixturePair f;
        f.pair.pair_id = pair_id;
        f.pair.reference = fig_report(group, "gt", pair_id + "-gt");
        f.pair.candidate = fig_report(group, cand, pair_id + "-" + cand);
        f.pair.provenance = Provenance::user;
        f.errors = std::move(errors);
        fixtures.push_back(std::move(f));
    };

    add_fig_pair("group_a", "gr1", "fig1a-gr1", {});
    add_fig_pair(
        "group_a", "gr2", "fig1a-gr2",
        {err(EC::false_prediction_of_finding, sig,
             "focal consolidation reported as seen but the reference states none"),
         err(EC::false_prediction_of_finding, sig,
             "pleural effusion reported as seen but the reference states none"),
         err(EC::false_prediction_of_finding, sig,
             "pneumothorax reported as seen but the reference states none"),
         err(EC::false_prediction_of_finding, sig,
             "rib fracture reported but the reference finds no displaced fracture"),
         err(EC::omission_of_finding, sig,
             "lateral views were obtained per the reference but are absent in the candidate"),
         err(EC::incorrect_severity_of_finding, sig,
             "cardiac silhouette described as enlarged instead of top normal")});
    add_fig_pair("group_a", "gr3", "fig1a-gr3",
                 {err(EC::incorrect_severity_of_finding, insig,
                      "cardiac silhouette described as bottom normal instead of top normal"),
                  err(EC::false_prediction_of_finding, sig,
                      "free air beneath the diaphragms reported but the reference excludes "
                      "it")});
    add_fig_pair("group_b", "gr1", "fig1b-gr1", {});
    add_fig_pair("group_b", "gr2", "fig1b-gr2",
                 {err(EC::false_prediction_of_finding, sig,
                      "mediastinal enlargement reported but the reference describes a stable "
                      "mediastinum"),
                  err(EC::incorrect_severity_of_finding, sig,
                      "multifocal opacities reduced to a single opacity"),
                  err(EC::incorrect_severity_of_finding, sig,
                      "opacities described as minimally decreased instead of minimally "
                      "improved")});
    add_fig_pair("group_b", "gr3", "fig1b-gr3",
                 {err(EC::false_prediction_of_finding, sig,
                      "large mediastinum reported but the reference describes a stable "
                      "mediastinum"),
                  err(EC::incorrect_location_of_finding, sig,
                      "opacities localized to the bases without support in the reference"),
                  err(EC::incorrect_severity_of_finding, insig,
                      "opacities described as minimally decreased instead of minimally "
                      "improved"),
                  err(EC::false_prediction_of_finding, sig,
                      "rib fractures described as changed while the reference notes them "
                      "unchanged")});

    // fourteen synthetic pairs with authored totals and a spread of
    // malformations for the repair path
    const std::vector<int> synthetic_totals = {2, 1, 3, 0, 4, 2, 5, 1, 3, 6, 0, 2, 4, 7};
    const std::vector<Report> pool = testing::synthetic_reports(28, 424242);
    static const char* const phrases[] = {
        "candidate adds a finding the reference does not support",
        "candidate drops a finding the reference states",
        "finding placed on the wrong side",
        "finding graded with the wrong severity",
        "candidate cites a prior study the reference never mentions",
        "candidate omits the interval change the reference notes",
    };
    for (std::size_t k = 0; k < synthetic_totals.size(); ++k) {
        FixturePair f;
        char id[8];
        std::snprintf(id, sizeof id, "p%02zu", k + 7);
        f.pair.pair_id = id;
        f.pair.reference = pool[2 * k];
        f.pair.candidate = pool[2 * k + 1];
        f.pair.provenance = k % 3 == 0 ? Provenance::random : Provenance::bleu_matched;
        // descriptions cite candidate tokens, which also keeps every pair's
        // stage-1 text (and so its stage-2 request key) distinct
        std::string snippet;
        const auto tokens = tokenize(f.pair.candidate.text);
        for (std::size_t t = 0; t < std::min<std::size_t>(tokens.size(), 4); ++t) {
            if (!snippet.empty()) snippet += ' ';
            snippet += tokens[t];
        }
        for (int e = 0; e < synthetic_totals[k]; ++e) {
            const auto category = static_cast<ErrorCategory>((static_cast<int>(k) + e) % 6);
            f.errors.push_back(err(category, e % 2 == 0 ? sig : insig,
                                   std::string(phrases[static_cast<std::size_t>(
                                       (static_cast<int>(k) + e) % 6)]) +
                                       " (item " + std::to_string(e + 1) + " of " +
                                       f.pair.pair_id + ", near: " + snippet + ")"));
        }
        // malformed pairs must have unique stage-1 text, so none sit on the
        // shared zero-error response
        if (f.pair.pair_id == "p08") f.malformation = Malformation::single_quotes;
        if (f.pair.pair_id == "p11") f.malformation = Malformation::trailing_comma;
        if (f.pair.pair_id == "p14") f.malformation = Malformation::missing_total;
        if (f.pair.pair_id == "p16") f.malformation = Malformation::bare_keys;
        if (f.pair.pair_id == "p19") f.malformation = Malformation::comment;
        fixtures.push_back(std::move(f));
    }

    // record the scripted responses through the real judge path so the cache
    // keys match exactly what replay runs will request
    const TemplateSet templates = TemplateSet::defaults_v1();
    JudgeParams params;  // defaults: gpt-4, temperature 0, 1600 tokens
    std::vector<ojson> pair_lines;
    std::string expected_csv = "pair_id,judge_total\n";
    bool ok = true;
    std::vector<std::pair<std::string, int>> totals_sorted;
    for (const FixturePair& f : fixtures) {
        testing::ScriptedBackend scripted;
        scripted.enqueue_content(stage1_text(f.errors), params.model);
        scripted.enqueue_content(stage2_text(f.errors, f.malformation), params.model);
        RecordingBackend recorder(scripted, cache_dir);
        const Judgment judgment =
            judge_pair(f.pair, recorder, JudgeStrategy::two_stage, templates, params);
        const int intended = static_cast<int>(f.errors.size());
        if (judgment.total_count != intended) {
            std::cerr << f.pair.pair_id << ": judged total " << judgment.total_count
                      << " != intended " << intended << "\n";
            ok = false;
        }
        if (!validate_judgment(judgment).empty()) {
            std::cerr << f.pair.pair_id << ": judgment fails validation\n";
            ok = false;
        }
        pair_lines.push_back(to_json(f.pair));
        totals_sorted.emplace_back(f.pair.pair_id, intended);
    }
    std::sort(totals_sorted.begin(), totals_sorted.end());
    for (const auto& [pair_id, total] : totals_sorted)
        expected_csv += pair_id + "," + std::to_string(total) + "\n";
    if (!ok) return 1;

    write_jsonl_atomic(out_dir / "pairs.jsonl", pair_lines);
    write_file_atomic(out_dir / "expected_judge_totals.csv", expected_csv);

    // six synthetic raters per pair: totals jittered around the judge total,
    // spread over random taxonomy cells
    std::mt19937_64 rng(20240101);
    const std::vector<int> noise_pool = {-2, -1, -1, 0, 0, 0, 0, 1, 1, 2};
    std::vector<RaterAnnotation> annotations;
    for (const FixturePair& f : fixtures) {
        for (int r = 0; r < 6; ++r) {
            RaterAnnotation a;
            a.pair_id = f.pair.pair_id;
            a.rater_id = "r" + std::to_string(r);
            const int noise = noise_pool[rng() % noise_pool.size()];
            const int total = std::max(0, static_cast<int>(f.errors.size()) + noise);
            for (int unit = 0; unit < total; ++unit)
                a.counts.at(static_cast<ErrorCategory>(rng() % 6),
                            static_cast<Significance>(rng() % 2)) += 1;
            annotations.push_back(std::move(a));
        }
    }
    write_file_atomic(out_dir / "annotations.csv", annotations_csv_dump(annotations));

    // shipped data files mirror the built-in defaults
    const fs::path data_dir = root / "data";
    write_file_atomic(data_dir / "category_synonyms.json",
                      SynonymTable::defaults().to_json().dump(2) + "\n");
    const fs::path template_dir = data_dir / "templates" / "v1";
    write_file_atomic(template_dir / "system.txt", templates.system_text);
    write_file_atomic(template_dir / "single.txt", template_to_text(templates.single));
    write_file_atomic(template_dir / "compare.txt", template_to_text(templates.compare));
    write_file_atomic(template_dir / "count.txt", template_to_text(templates.count));
    write_file_atomic(template_dir / "screen.txt", template_to_text(templates.screen));

    std::cout << "wrote " << fixtures.size() << " pairs, " << annotations.size()
              << " annotations, cache entries under " << cache_dir << "\n";
    return 0;
}
