#pragma once

// Command-line surface: judge, benchmark, agreement, pair, screen, export,
// plot. Configuration resolves as CLI flags > config file > environment
// variables (secrets only), and every output artifact embeds the resolved
// config plus the prompt template version. Exit codes: 0 success, 1 partial
// data failure, 2 configuration/schema failure.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "repeval/backend.hpp"
#include "repeval/core.hpp"
#include "repeval/corpus.hpp"
#include "repeval/io.hpp"
#include "repeval/judge.hpp"
#include "repeval/metrics.hpp"
#include "repeval/respparse.hpp"

namespace repeval::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitConfig = 2;

struct RunConfig {
    std::string backend = "replay";  // replay | record | live
    std::string base_url;
    std::string api_key;  // environment only, never echoed
    std::string model = "gpt-4";
    double temperature = 0.0;
    int max_tokens = 1600;
    std::string strategy = "two_stage";
    int concurrency = 4;
    std::string cache_dir;
    std::uint64_t seed = 0;
    std::string template_dir;   // empty: built-in v1 templates
    std::string synonyms_path;  // empty: built-in synonym table
    int timeout_sec = 120;
    int max_attempts = 3;
    bool strict = false;
    bool verbose = false;
};

namespace detail {

inline JudgeStrategy parse_strategy(const std::string& s) {
    auto strategy = strategy_from_string(s);
    if (!strategy) throw Error("unknown strategy '" + s + "' (single_stage or two_stage)");
    return *strategy;
}

inline std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path) {
    std::map<std::string, std::string> values;
    std::size_t lineno = 0;
    for (const std::string& raw : split_lines(read_file(path))) {
        ++lineno;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("config file line " + std::to_string(lineno) +
                        ": expected key = value");
        values[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return values;
}

inline void apply_config_entry(RunConfig& cfg, const std::string& key,
                               const std::string& value) {
    if (key == "backend") cfg.backend = value;
    else if (key == "base_url") cfg.base_url = value;
    else if (key == "model") cfg.model = value;
    else if (key == "temperature") cfg.temperature = std::stod(value);
    else if (key == "max_tokens") cfg.max_tokens = std::stoi(value);
    else if (key == "strategy") cfg.strategy = value;
    else if (key == "concurrency") cfg.concurrency = std::stoi(value);
    else if (key == "cache_dir") cfg.cache_dir = value;
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "template_dir") cfg.template_dir = value;
    else if (key == "synonyms") cfg.synonyms_path = value;
    else if (key == "timeout_sec") cfg.timeout_sec = std::stoi(value);
    else if (key == "max_attempts") cfg.max_attempts = std::stoi(value);
    else throw Error("unknown config file key: " + key);
}

struct Resolved {
    RunConfig config;
    TemplateSet templates;
    SynonymTable synonyms;
    JudgeParams params;
};

inline Resolved resolve(const RunConfig& cfg) {
    Resolved r;
    r.config = cfg;
    r.templates = cfg.template_dir.empty() ? TemplateSet::defaults_v1()
                                           : TemplateSet::load_dir(cfg.template_dir);
    r.synonyms = cfg.synonyms_path.empty() ? SynonymTable::defaults()
                                           : SynonymTable::load(cfg.synonyms_path);
    r.params.model = cfg.model;
    r.params.temperature = cfg.temperature;
    r.params.max_tokens = cfg.max_tokens;
    r.params.concurrency = cfg.concurrency;
    if (r.params.concurrency < 1) throw Error("concurrency must be >= 1");
    return r;
}

/// Resolved config echo, with the API key masked.
inline ojson config_json(const Resolved& r) {
    const RunConfig& c = r.config;
    ojson j;
    j["backend"] = c.backend;
    j["base_url"] = c.base_url;
    j["api_key"] = c.api_key.empty() ? "" : "***";
    j["model"] = c.model;
    j["temperature"] = c.temperature;
    j["max_tokens"] = c.max_tokens;
    j["strategy"] = c.strategy;
    j["concurrency"] = c.concurrency;
    j["cache_dir"] = c.cache_dir;
    j["seed"] = c.seed;
    j["template_dir"] = c.template_dir;
    j["template_version"] = r.templates.version;
    j["synonyms"] = c.synonyms_path;
    j["timeout_sec"] = c.timeout_sec;
    j["max_attempts"] = c.max_attempts;
    j["strict"] = c.strict;
    return j;
}

/// Owns the configured backend chain; `active` is the entry point.
struct BackendStack {
    std::unique_ptr<HttpChatBackend> live;
    std::unique_ptr<RetryingBackend> retrying;
    std::unique_ptr<RecordingBackend> recorder;
    std::unique_ptr<ReplayBackend> replay;
    ChatBackend* active = nullptr;
};

inline BackendStack make_backend(const RunConfig& cfg) {
    BackendStack stack;
    auto make_live = [&] {
        if (cfg.base_url.empty())
            throw Error("live backend needs a base URL (--base-url or REPEVAL_BASE_URL)");
        if (cfg.api_key.empty())
            throw Error("live backend needs an API key (REPEVAL_API_KEY)");
        HttpBackendConfig http;
        http.base_url = cfg.base_url;
        http.api_key = cfg.api_key;
        http.timeout_sec = cfg.timeout_sec;
        stack.live = std::make_unique<HttpChatBackend>(http);
        RetryPolicy policy;
        policy.max_attempts = cfg.max_attempts;
        stack.retrying = std::make_unique<RetryingBackend>(*stack.live, policy);
    };
    if (cfg.backend == "replay") {
        if (cfg.cache_dir.empty()) throw Error("replay backend needs --cache-dir");
        stack.replay = std::make_unique<ReplayBackend>(cfg.cache_dir, ReplayMode::strict);
        stack.active = stack.replay.get();
    } else if (cfg.backend == "record") {
        if (cfg.cache_dir.empty()) throw Error("record backend needs --cache-dir");
        make_live();
        stack.recorder = std::make_unique<RecordingBackend>(*stack.retrying, cfg.cache_dir);
        stack.active = stack.recorder.get();
    } else if (cfg.backend == "live") {
        make_live();
        stack.active = stack.retrying.get();
    } else {
        throw Error("unknown backend '" + cfg.backend + "' (replay, record, or live)");
    }
    return stack;
}

/// Reads a pairs JSONL file; manifest header lines are skipped.
inline std::vector<ReportPair> read_pairs_file(const std::filesystem::path& path) {
    std::vector<ReportPair> pairs;
    std::set<std::string> ids;
    for (const ojson& j : read_jsonl(path)) {
        if (j.contains("manifest")) continue;
        ReportPair p = pair_from_json(j);
        if (!ids.insert(p.pair_id).second) throw Error("duplicate pair_id: " + p.pair_id);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

inline std::vector<RaterAnnotation> read_annotations(const std::filesystem::path& path,
                                                     const std::string& mapping_path) {
    std::map<std::string, std::string> mapping;
    if (!mapping_path.empty()) mapping = load_column_mapping(mapping_path);
    return load_annotations_csv(path, mapping);
}

inline std::string json_number(double v) {
    if (std::isnan(v)) return "nan";
    return ojson(v).dump();
}

// ---------------------------------------------------------------------------
// Plot series

inline std::string scatter_csv(const BenchmarkReport& report, const ojson& config) {
    std::string out = "# config: " + config.dump() + "\n";
    out += "pair_id,judge_total,rater_mean\n";
    for (const auto& row : report.per_pair)
        out += csv_escape(row.pair_id) + "," + std::to_string(row.judge_total) + "," +
               json_number(row.rater_mean) + "\n";
    return out;
}

inline std::string histogram_csv(const ErrorDistribution& dist, const ojson& config) {
    std::string out = "# config: " + config.dump() + "\n";
    out += "bin_center,count\n";
    for (const auto& [center, count] : dist.histogram)
        out += std::to_string(center) + "," + std::to_string(count) + "\n";
    return out;
}

inline std::string bland_altman_csv(const BlandAltmanResult& ba, const ojson& config) {
    std::string out = "# config: " + config.dump() + "\n";
    out += "# mean_diff: " + json_number(ba.mean_diff) + "\n";
    out += "# sd_diff: " + json_number(ba.sd_diff) + "\n";
    out += "# loa_lower: " + json_number(ba.loa_lower) + "\n";
    out += "# loa_upper: " + json_number(ba.loa_upper) + "\n";
    out += "mean,diff\n";
    for (const auto& [mean, diff] : ba.points)
        out += json_number(mean) + "," + json_number(diff) + "\n";
    return out;
}

// Decorative SVG rendering; the CSV files are the contract.
inline std::string points_svg(const std::vector<std::pair<double, double>>& points,
                              const std::string& x_label, const std::string& y_label,
                              const std::vector<double>& hlines = {}) {
    constexpr double width = 640, height = 480, margin = 48;
    double min_x = 0, max_x = 1, min_y = 0, max_y = 1;
    if (!points.empty()) {
        min_x = max_x = points[0].first;
        min_y = max_y = points[0].second;
        for (const auto& [x, y] : points) {
            min_x = std::min(min_x, x);
            max_x = std::max(max_x, x);
            min_y = std::min(min_y, y);
            max_y = std::max(max_y, y);
        }
    }
    for (double h : hlines) {
        min_y = std::min(min_y, h);
        max_y = std::max(max_y, h);
    }
    if (max_x == min_x) max_x = min_x + 1;
    if (max_y == min_y) max_y = min_y + 1;
    auto sx = [&](double x) {
        return margin + (x - min_x) / (max_x - min_x) * (width - 2 * margin);
    };
    auto sy = [&](double y) {
        return height - margin - (y - min_y) / (max_y - min_y) * (height - 2 * margin);
    };
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
                      "viewBox=\"0 0 640 480\">\n";
    svg += "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
    svg += "<line x1=\"48\" y1=\"432\" x2=\"592\" y2=\"432\" stroke=\"black\"/>\n";
    svg += "<line x1=\"48\" y1=\"48\" x2=\"48\" y2=\"432\" stroke=\"black\"/>\n";
    for (double h : hlines)
        svg += "<line x1=\"48\" y1=\"" + json_number(sy(h)) + "\" x2=\"592\" y2=\"" +
               json_number(sy(h)) + "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
    for (const auto& [x, y] : points)
        svg += "<circle cx=\"" + json_number(sx(x)) + "\" cy=\"" + json_number(sy(y)) +
               "\" r=\"4\" fill=\"steelblue\" fill-opacity=\"0.7\"/>\n";
    svg += "<text x=\"320\" y=\"470\" text-anchor=\"middle\" font-size=\"13\">" + x_label +
           "</text>\n";
    svg += "<text x=\"14\" y=\"240\" transform=\"rotate(-90 14 240)\" text-anchor=\"middle\" "
           "font-size=\"13\">" +
           y_label + "</text>\n";
    svg += "</svg>\n";
    return svg;
}

inline std::string bars_svg(const std::map<int, long long>& histogram) {
    constexpr double width = 640, height = 480, margin = 48;
    if (histogram.empty()) return "<svg xmlns=\"http://www.w3.org/2000/svg\"/>\n";
    const int min_bin = histogram.begin()->first;
    const int max_bin = histogram.rbegin()->first;
    long long max_count = 1;
    for (const auto& [bin, count] : histogram) max_count = std::max(max_count, count);
    const int bins = max_bin - min_bin + 1;
    const double bar_width = (width - 2 * margin) / bins;
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
                      "viewBox=\"0 0 640 480\">\n<rect width=\"640\" height=\"480\" "
                      "fill=\"white\"/>\n";
    for (const auto& [bin, count] : histogram) {
        const double h = (height - 2 * margin) *
                         static_cast<double>(count) / static_cast<double>(max_count);
        const double x = margin + (bin - min_bin) * bar_width;
        svg += "<rect x=\"" + json_number(x + 1) + "\" y=\"" +
               json_number(height - margin - h) + "\" width=\"" +
               json_number(bar_width - 2) + "\" height=\"" + json_number(h) +
               "\" fill=\"steelblue\"/>\n";
        svg += "<text x=\"" + json_number(x + bar_width / 2) + "\" y=\"" +
               json_number(height - margin + 16) +
               "\" text-anchor=\"middle\" font-size=\"11\">" + std::to_string(bin) +
               "</text>\n";
    }
    svg += "<line x1=\"48\" y1=\"432\" x2=\"592\" y2=\"432\" stroke=\"black\"/>\n</svg>\n";
    return svg;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

inline int cmd_judge(const detail::Resolved& r, const std::string& pairs_path,
                     const std::string& out_path, const std::string& summary_path) {
    const std::vector<ReportPair> pairs = detail::read_pairs_file(pairs_path);
    detail::BackendStack backend = detail::make_backend(r.config);
    const JudgeStrategy strategy = detail::parse_strategy(r.config.strategy);

    struct Slot {
        std::optional<JudgeOutcome> outcome;
        std::string error;
    };
    std::vector<Slot> slots(pairs.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < pairs.size();) {
            try {
                slots[i].outcome = judge_pair_detailed(pairs[i], *backend.active, strategy,
                                                       r.templates, r.params, r.synonyms);
            } catch (const std::exception& e) {
                slots[i].error = e.what();
            }
        }
    };
    const int workers = std::clamp<int>(r.params.concurrency, 1,
                                        static_cast<int>(std::max<std::size_t>(pairs.size(), 1)));
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }

    const ojson config = detail::config_json(r);
    std::vector<ojson> lines;
    int failed = 0, repaired = 0;
    long long prompt_tokens = 0, completion_tokens = 0, warning_count = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (slots[i].outcome) {
            const Judgment& j = slots[i].outcome->judgment;
            ojson line = to_json(j);
            if (r.config.verbose) {
                line["repair"] = {{"applied_rules", slots[i].outcome->trace.applied_rules},
                                  {"repaired", slots[i].outcome->trace.repaired}};
            }
            lines.push_back(std::move(line));
            if (!j.repair_rules.empty()) ++repaired;
            warning_count += static_cast<long long>(j.warnings.size());
            prompt_tokens += slots[i].outcome->prompt_tokens;
            completion_tokens += slots[i].outcome->completion_tokens;
        } else {
            ++failed;
            lines.push_back({{"pair_id", pairs[i].pair_id}, {"error", slots[i].error}});
        }
    }
    write_jsonl_atomic(out_path, lines);

    ojson summary;
    summary["config"] = config;
    summary["pairs"] = pairs.size();
    summary["succeeded"] = pairs.size() - static_cast<std::size_t>(failed);
    summary["failed"] = failed;
    summary["repaired"] = repaired;
    summary["warnings"] = warning_count;
    summary["prompt_tokens"] = prompt_tokens;
    summary["completion_tokens"] = completion_tokens;
    if (!summary_path.empty()) write_file_atomic(summary_path, summary.dump(2) + "\n");
    std::cout << summary.dump(2) << "\n";

    if (failed > 0 && r.config.strict) return kExitPartial;
    return kExitOk;
}

inline int cmd_benchmark(const detail::Resolved& r, const std::string& pairs_path,
                         const std::string& annotations_path, const std::string& mapping_path,
                         const std::string& report_path, const std::string& csv_path) {
    const std::vector<ReportPair> pairs = detail::read_pairs_file(pairs_path);
    const std::vector<RaterAnnotation> annotations =
        detail::read_annotations(annotations_path, mapping_path);

    std::set<std::string> pair_ids;
    for (const ReportPair& p : pairs) pair_ids.insert(p.pair_id);
    for (const RaterAnnotation& a : annotations)
        if (!pair_ids.count(a.pair_id))
            throw Error("annotation references unknown pair_id: " + a.pair_id);

    detail::BackendStack backend = detail::make_backend(r.config);
    const JudgeStrategy strategy = detail::parse_strategy(r.config.strategy);
    const BenchmarkReport report = benchmark(pairs, annotations, *backend.active, strategy,
                                             r.templates, r.params, r.synonyms);

    const ojson config = detail::config_json(r);
    ojson out;
    out["config"] = config;
    out.update(to_json(report));
    write_file_atomic(report_path, out.dump(2) + "\n");

    if (!csv_path.empty()) write_file_atomic(csv_path, detail::scatter_csv(report, config));

    std::cout << "benchmark: model=" << report.model_id << " strategy="
              << to_string(report.strategy) << " pairs=" << report.per_pair.size()
              << " failures=" << report.failures.size()
              << " tau=" << detail::json_number(report.tau_vs_raters.tau) << "\n";
    return report.failures.empty() ? kExitOk : kExitPartial;
}

inline int cmd_agreement(const detail::Resolved& r, const std::string& annotations_path,
                         const std::string& mapping_path, const std::string& out_path,
                         const std::string& csv_path) {
    const std::vector<RaterAnnotation> annotations =
        detail::read_annotations(annotations_path, mapping_path);
    const std::map<std::string, AgreementResult> loo = leave_one_out_agreement(annotations);

    // pairwise tau over per-pair totals, every rater against every other
    std::map<std::string, std::map<std::string, int>> totals;
    for (const RaterAnnotation& a : annotations) totals[a.rater_id][a.pair_id] = a.total_count();
    ojson pairwise = ojson::array();
    for (auto a = totals.begin(); a != totals.end(); ++a) {
        for (auto b = std::next(a); b != totals.end(); ++b) {
            std::vector<double> x, y;
            for (const auto& [pair_id, total] : a->second) {
                x.push_back(total);
                y.push_back(b->second.at(pair_id));
            }
            const AgreementResult tau = repeval::detail::tau_b_counts(x, y);
            pairwise.push_back({{"rater_a", a->first},
                                {"rater_b", b->first},
                                {"tau", std::isnan(tau.tau) ? ojson() : ojson(tau.tau)}});
        }
    }

    const ojson config = detail::config_json(r);
    ojson out;
    out["config"] = config;
    ojson table = ojson::array();
    for (const auto& [rater, result] : loo) {
        ojson row = to_json(result);
        row.erase("tau");
        ojson entry;
        entry["rater_id"] = rater;
        entry["tau"] = std::isnan(result.tau) ? ojson() : ojson(result.tau);
        entry.update(row);
        table.push_back(std::move(entry));
    }
    out["leave_one_out"] = std::move(table);
    out["pairwise"] = std::move(pairwise);
    write_file_atomic(out_path, out.dump(2) + "\n");

    if (!csv_path.empty()) {
        std::string csv = "# config: " + config.dump() + "\nrater_id,tau,n\n";
        for (const auto& [rater, result] : loo)
            csv += csv_escape(rater) + "," + detail::json_number(result.tau) + "," +
                   std::to_string(result.n) + "\n";
        write_file_atomic(csv_path, csv);
    }

    for (const auto& [rater, result] : loo)
        std::cout << "rater " << rater << ": tau=" << detail::json_number(result.tau)
                  << " n=" << result.n << "\n";
    return kExitOk;
}

inline int cmd_pair(const detail::Resolved& r, const std::string& input_path,
                    const std::string& format_name, const std::string& mode_name, int count,
                    int prune, const std::string& out_path) {
    CorpusFormat format;
    if (format_name == "jsonl") format = CorpusFormat::jsonl;
    else if (format_name == "csv") format = CorpusFormat::csv;
    else if (format_name == "dir") format = CorpusFormat::directory_of_text;
    else throw Error("unknown corpus format '" + format_name + "' (jsonl, csv, or dir)");

    PairingSpec spec;
    if (mode_name == "random") spec.mode = PairingSpec::Mode::random;
    else if (mode_name == "bleu_top") spec.mode = PairingSpec::Mode::bleu_top;
    else throw Error("unknown pairing mode '" + mode_name + "' (bleu_top or random)");
    spec.count = count;
    spec.seed = r.config.seed;
    spec.prune_candidates = prune;

    const LoadResult loaded = load_reports(input_path, format);
    const std::vector<ReportPair> pairs = make_pairs(loaded.corpus, spec);

    std::vector<ojson> lines;
    ojson manifest;
    manifest["config"] = detail::config_json(r);
    manifest["mode"] = mode_name;
    manifest["count"] = count;
    manifest["seed"] = spec.seed;
    manifest["prune_candidates"] = prune;
    manifest["corpus_size"] = loaded.corpus.size();
    manifest["skipped_blank"] = loaded.skipped;
    lines.push_back(ojson{{"manifest", std::move(manifest)}});
    for (const ReportPair& p : pairs) lines.push_back(to_json(p));
    write_jsonl_atomic(out_path, lines);

    std::cout << "paired " << pairs.size() << " of " << loaded.corpus.size()
              << " reports (skipped " << loaded.skipped << " blank)\n";
    return kExitOk;
}

inline int cmd_screen(const detail::Resolved& r, const std::string& pairs_path,
                      const std::string& out_path, const std::string& report_path) {
    const std::vector<ReportPair> pairs = detail::read_pairs_file(pairs_path);
    detail::BackendStack backend = detail::make_backend(r.config);
    const ScreenResult result =
        screen_pairs(pairs, *backend.active, r.templates.screen, r.params);

    std::vector<ojson> lines;
    for (const ReportPair& p : result.kept) lines.push_back(to_json(p));
    write_jsonl_atomic(out_path, lines);

    ojson report;
    report["config"] = detail::config_json(r);
    report["input"] = pairs.size();
    report["kept"] = result.kept.size();
    ojson rejected = ojson::array();
    for (const auto& [pair, reason] : result.rejected)
        rejected.push_back({{"pair_id", pair.pair_id}, {"reason", reason}});
    report["rejected"] = std::move(rejected);
    report["unscreened"] = result.unscreened;
    if (!report_path.empty()) write_file_atomic(report_path, report.dump(2) + "\n");
    std::cout << report.dump(2) << "\n";

    return result.unscreened.empty() ? kExitOk : kExitPartial;
}

inline int cmd_export(const detail::Resolved& r, const std::string& pairs_path,
                      const std::string& judgments_path, const std::string& out_path) {
    const std::vector<ReportPair> pairs = detail::read_pairs_file(pairs_path);
    std::map<std::string, const ReportPair*> by_id;
    for (const ReportPair& p : pairs) by_id[p.pair_id] = &p;

    std::vector<std::pair<ReportPair, Judgment>> data;
    int failures_skipped = 0;
    for (const ojson& line : read_jsonl(judgments_path)) {
        if (line.contains("error") && !line.contains("errors")) {
            ++failures_skipped;  // failure record from cmd_judge
            continue;
        }
        Judgment j = judgment_from_json(line);
        auto it = by_id.find(j.pair_id);
        if (it == by_id.end())
            throw Error("judgment references unknown pair_id: " + j.pair_id);
        data.emplace_back(*it->second, std::move(j));
    }
    const int written = export_sft(data, r.templates, out_path);

    ojson summary;
    summary["config"] = detail::config_json(r);
    summary["written"] = written;
    summary["skipped_failures"] = failures_skipped;
    summary["pairs_without_judgment"] = pairs.size() - data.size();
    std::cout << summary.dump(2) << "\n";
    return kExitOk;
}

inline int cmd_plot(const detail::Resolved& r, const std::string& report_path,
                    const std::string& scores_path, const std::string& out_dir, bool svg) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const ojson config = detail::config_json(r);

    if (!report_path.empty()) {
        ojson j = ojson::parse(read_file(report_path), nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("per_pair"))
            throw Error("unknown report schema in " + report_path);
        BenchmarkReport report;
        std::vector<double> judge, raters;
        for (const ojson& row : j.at("per_pair")) {
            BenchmarkReport::PairRow r_row;
            r_row.pair_id = row.at("pair_id").get<std::string>();
            r_row.judge_total = row.at("judge_total").get<int>();
            r_row.rater_mean = row.at("rater_mean").get<double>();
            report.per_pair.push_back(r_row);
            judge.push_back(r_row.judge_total);
            raters.push_back(r_row.rater_mean);
        }
        if (report.per_pair.size() < 2) throw Error("report has fewer than 2 per-pair rows");
        std::map<std::string, int> judge_map;
        std::map<std::string, double> rater_map;
        for (const auto& row : report.per_pair) {
            judge_map[row.pair_id] = row.judge_total;
            rater_map[row.pair_id] = row.rater_mean;
        }
        report.error_dist = error_distribution(judge_map, rater_map);
        const BlandAltmanResult ba = bland_altman(judge, raters);

        write_file_atomic(fs::path(out_dir) / "scatter.csv",
                          detail::scatter_csv(report, config));
        write_file_atomic(fs::path(out_dir) / "error_hist.csv",
                          detail::histogram_csv(report.error_dist, config));
        write_file_atomic(fs::path(out_dir) / "bland_altman.csv",
                          detail::bland_altman_csv(ba, config));
        if (svg) {
            std::vector<std::pair<double, double>> scatter_points;
            for (std::size_t i = 0; i < judge.size(); ++i)
                scatter_points.emplace_back(raters[i], judge[i]);
            write_file_atomic(fs::path(out_dir) / "scatter.svg",
                              detail::points_svg(scatter_points, "rater mean", "judge total"));
            write_file_atomic(fs::path(out_dir) / "error_hist.svg",
                              detail::bars_svg(report.error_dist.histogram));
            write_file_atomic(
                fs::path(out_dir) / "bland_altman.svg",
                detail::points_svg(ba.points, "mean of methods", "difference",
                                   {ba.loa_lower, ba.mean_diff, ba.loa_upper}));
        }
        std::cout << "wrote scatter, error_hist, bland_altman series to " << out_dir << "\n";
        return kExitOk;
    }

    if (!scores_path.empty()) {
        auto rows = parse_csv(read_file(scores_path));
        if (rows.size() < 3 || rows.front().size() < 3)
            throw Error("scores file needs a header and >= 2 rows of pair_id,a,b");
        std::vector<double> a, b;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].size() == 1 && trim(rows[i][0]).empty()) continue;
            if (rows[i].size() < 3) throw Error("scores row " + std::to_string(i + 1) + " is short");
            a.push_back(std::stod(rows[i][1]));
            b.push_back(std::stod(rows[i][2]));
        }
        const BlandAltmanResult ba = bland_altman(a, b);
        write_file_atomic(fs::path(out_dir) / "bland_altman.csv",
                          detail::bland_altman_csv(ba, config));
        if (svg)
            write_file_atomic(
                fs::path(out_dir) / "bland_altman.svg",
                detail::points_svg(ba.points, "mean of methods", "difference",
                                   {ba.loa_lower, ba.mean_diff, ba.loa_upper}));
        std::cout << "wrote bland_altman series to " << out_dir << "\n";
        return kExitOk;
    }
    throw Error("plot needs --report or --scores");
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv) {
    CLI::App app{"repeval: LLM-judge evaluation of radiology reports"};
    app.fallthrough();

    RunConfig cfg;
    std::string config_file;
    if (const char* key = std::getenv("REPEVAL_API_KEY")) cfg.api_key = key;
    if (const char* url = std::getenv("REPEVAL_BASE_URL")) cfg.base_url = url;

    app.add_option("--config", config_file, "key = value configuration file");
    auto* opt_backend =
        app.add_option("--backend", cfg.backend, "backend: replay, record, or live");
    auto* opt_base_url = app.add_option("--base-url", cfg.base_url, "chat-completions base URL");
    auto* opt_model = app.add_option("--model", cfg.model, "model name");
    auto* opt_temperature = app.add_option("--temperature", cfg.temperature, "sampling temperature");
    auto* opt_max_tokens = app.add_option("--max-tokens", cfg.max_tokens, "completion token budget");
    auto* opt_strategy =
        app.add_option("--strategy", cfg.strategy, "single_stage or two_stage");
    auto* opt_concurrency = app.add_option("--concurrency", cfg.concurrency, "in-flight bound");
    auto* opt_cache_dir = app.add_option("--cache-dir", cfg.cache_dir, "record/replay cache dir");
    auto* opt_seed = app.add_option("--seed", cfg.seed, "RNG seed");
    auto* opt_templates = app.add_option("--templates", cfg.template_dir, "template directory");
    auto* opt_synonyms =
        app.add_option("--synonyms", cfg.synonyms_path, "category synonym table JSON");
    auto* opt_timeout = app.add_option("--timeout", cfg.timeout_sec, "HTTP timeout seconds");
    auto* opt_attempts = app.add_option("--max-attempts", cfg.max_attempts, "retry attempts");
    app.add_flag("--strict", cfg.strict, "exit 1 on any pair failure");
    app.add_flag("--verbose", cfg.verbose, "serialize repair traces alongside judgments");

    std::string pairs_path, out_path, summary_path, annotations_path, mapping_path;
    std::string report_path, csv_path, input_path, judgments_path, scores_path, out_dir;
    std::string format_name = "jsonl", mode_name = "bleu_top";
    int count = 1, prune = 1000;
    bool svg = false;

    CLI::App* judge_cmd = app.add_subcommand("judge", "judge report pairs");
    judge_cmd->add_option("--pairs", pairs_path, "pairs JSONL")->required();
    judge_cmd->add_option("--out", out_path, "judgments JSONL")->required();
    judge_cmd->add_option("--summary", summary_path, "summary JSON");

    CLI::App* bench_cmd =
        app.add_subcommand("benchmark", "judge pairs and correlate with rater annotations");
    bench_cmd->add_option("--pairs", pairs_path, "pairs JSONL")->required();
    bench_cmd->add_option("--annotations", annotations_path, "annotations CSV")->required();
    bench_cmd->add_option("--mapping", mapping_path, "annotation column mapping JSON");
    bench_cmd->add_option("--report", report_path, "benchmark report JSON")->required();
    bench_cmd->add_option("--csv", csv_path, "per-pair CSV");

    CLI::App* agree_cmd =
        app.add_subcommand("agreement", "leave-one-out and pairwise rater agreement");
    agree_cmd->add_option("--annotations", annotations_path, "annotations CSV")->required();
    agree_cmd->add_option("--mapping", mapping_path, "annotation column mapping JSON");
    agree_cmd->add_option("--out", out_path, "agreement JSON")->required();
    agree_cmd->add_option("--csv", csv_path, "per-rater CSV");

    CLI::App* pair_cmd = app.add_subcommand("pair", "build report pairs from a corpus");
    pair_cmd->add_option("--input", input_path, "corpus path")->required();
    pair_cmd->add_option("--format", format_name, "jsonl, csv, or dir");
    pair_cmd->add_option("--mode", mode_name, "bleu_top or random");
    pair_cmd->add_option("--count", count, "number of pairs")->required();
    pair_cmd->add_option("--prune", prune, "candidate prune limit (0 = exhaustive)");
    pair_cmd->add_option("--out", out_path, "pairing manifest JSONL")->required();

    CLI::App* screen_cmd = app.add_subcommand("screen", "LLM-screen pairs for artifacts");
    screen_cmd->add_option("--pairs", pairs_path, "pairs JSONL")->required();
    screen_cmd->add_option("--out", out_path, "kept pairs JSONL")->required();
    screen_cmd->add_option("--report", report_path, "screening report JSON");

    CLI::App* export_cmd = app.add_subcommand("export", "export SFT prompt/completion JSONL");
    export_cmd->add_option("--pairs", pairs_path, "pairs JSONL")->required();
    export_cmd->add_option("--judgments", judgments_path, "judgments JSONL")->required();
    export_cmd->add_option("--out", out_path, "SFT JSONL")->required();

    CLI::App* plot_cmd = app.add_subcommand("plot", "emit plot-ready CSV (and optional SVG)");
    plot_cmd->add_option("--report", report_path, "benchmark report JSON");
    plot_cmd->add_option("--scores", scores_path, "pair_id,a,b score CSV");
    plot_cmd->add_option("--out-dir", out_dir, "output directory")->required();
    plot_cmd->add_flag("--svg", svg, "also render decorative SVG");

    app.require_subcommand(1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (!config_file.empty()) {
            for (const auto& [key, value] : detail::parse_config_file(config_file)) {
                // CLI flags win over config file entries
                if (key == "backend" && opt_backend->count()) continue;
                if (key == "base_url" && opt_base_url->count()) continue;
                if (key == "model" && opt_model->count()) continue;
                if (key == "temperature" && opt_temperature->count()) continue;
                if (key == "max_tokens" && opt_max_tokens->count()) continue;
                if (key == "strategy" && opt_strategy->count()) continue;
                if (key == "concurrency" && opt_concurrency->count()) continue;
                if (key == "cache_dir" && opt_cache_dir->count()) continue;
                if (key == "seed" && opt_seed->count()) continue;
                if (key == "template_dir" && opt_templates->count()) continue;
                if (key == "synonyms" && opt_synonyms->count()) continue;
                if (key == "timeout_sec" && opt_timeout->count()) continue;
                if (key == "max_attempts" && opt_attempts->count()) continue;
                detail::apply_config_entry(cfg, key, value);
            }
        }
        const detail::Resolved resolved = detail::resolve(cfg);

        if (judge_cmd->parsed()) return cmd_judge(resolved, pairs_path, out_path, summary_path);
        if (bench_cmd->parsed())
            return cmd_benchmark(resolved, pairs_path, annotations_path, mapping_path,
                                 report_path, csv_path);
        if (agree_cmd->parsed())
            return cmd_agreement(resolved, annotations_path, mapping_path, out_path, csv_path);
        if (pair_cmd->parsed())
            return cmd_pair(resolved, input_path, format_name, mode_name, count, prune,
                            out_path);
        if (screen_cmd->parsed()) return cmd_screen(resolved, pairs_path, out_path, report_path);
        if (export_cmd->parsed())
            return cmd_export(resolved, pairs_path, judgments_path, out_path);
        if (plot_cmd->parsed())
            return cmd_plot(resolved, report_path, scores_path, out_dir, svg);
        std::cerr << "no subcommand given\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
}

}  // namespace repeval::cli
