#pragma once

// Report ingestion, bigram inverted-index construction, top-BLEU and random
// pairing, LLM pair screening, and SFT dataset export.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "repeval/backend.hpp"
#include "repeval/core.hpp"
#include "repeval/io.hpp"
#include "repeval/judge.hpp"
#include "repeval/metrics.hpp"
#include "repeval/respparse.hpp"

namespace repeval {

class NoCandidateError : public Error {
public:
    using Error::Error;
};

class CountTooLargeError : public Error {
public:
    using Error::Error;
};

class InvalidJudgmentError : public Error {
public:
    InvalidJudgmentError(std::string pair_id, const std::string& what)
        : Error("pair " + pair_id + ": " + what), pair_id_(std::move(pair_id)) {}
    const std::string& pair_id() const { return pair_id_; }

private:
    std::string pair_id_;
};

// ---------------------------------------------------------------------------
// Corpus

struct Corpus {
    std::vector<Report> reports;  // insertion order preserved
    std::unordered_map<std::string, std::size_t> by_id;

    void add(Report report) {
        if (report.id.empty()) throw Error("report id must be non-empty");
        if (!by_id.emplace(report.id, reports.size()).second)
            throw Error("duplicate report id: " + report.id);
        reports.push_back(std::move(report));
    }

    std::size_t size() const { return reports.size(); }
    bool contains(const std::string& id) const { return by_id.count(id) > 0; }
    const Report& at(const std::string& id) const {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw Error("unknown report id: " + id);
        return reports[it->second];
    }
};

enum class CorpusFormat { jsonl, csv, directory_of_text };

struct LoadResult {
    Corpus corpus;
    int skipped = 0;  // blank-text records
};

inline LoadResult load_reports(const std::filesystem::path& path, CorpusFormat format) {
    LoadResult result;
    auto add_checked = [&](Report report, std::size_t line) {
        if (trim(report.text).empty()) {
            ++result.skipped;
            return;
        }
        if (report.id.empty()) throw MalformedRecordError(line, "empty report id");
        if (result.corpus.contains(report.id))
            throw MalformedRecordError(line, "duplicate report id: " + report.id);
        result.corpus.add(std::move(report));
    };

    switch (format) {
    case CorpusFormat::jsonl: {
        std::size_t lineno = 0;
        for (const std::string& line : split_lines(read_file(path))) {
            ++lineno;
            if (trim(line).empty()) continue;
            ojson j = ojson::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object())
                throw MalformedRecordError(lineno, "invalid JSON record");
            if (!j.contains("id") || !j.at("id").is_string() || !j.contains("text") ||
                !j.at("text").is_string())
                throw MalformedRecordError(lineno, "record needs string fields id and text");
            Report r;
            r.id = j.at("id").get<std::string>();
            r.text = j.at("text").get<std::string>();
            if (j.contains("meta") && j.at("meta").is_object())
                for (const auto& [k, v] : j.at("meta").items())
                    if (v.is_string()) r.meta[k] = v.get<std::string>();
            add_checked(std::move(r), lineno);
        }
        break;
    }
    case CorpusFormat::csv: {
        auto rows = parse_csv(read_file(path));
        if (rows.empty()) throw MalformedRecordError(1, "empty csv file");
        const auto& header = rows.front();
        std::map<std::string, std::size_t> col;
        for (std::size_t i = 0; i < header.size(); ++i) col[trim(header[i])] = i;
        if (!col.count("id") || !col.count("text"))
            throw MalformedRecordError(1, "csv header must contain id and text columns");
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const auto& row = rows[i];
            if (row.size() == 1 && trim(row[0]).empty()) continue;
            if (row.size() < header.size())
                throw MalformedRecordError(i + 1, "row has fewer columns than the header");
            Report r;
            r.id = trim(row[col.at("id")]);
            r.text = row[col.at("text")];
            for (const auto& [name, idx] : col)
                if (name != "id" && name != "text" && !row[idx].empty()) r.meta[name] = row[idx];
            add_checked(std::move(r), i + 1);
        }
        break;
    }
    case CorpusFormat::directory_of_text: {
        if (!std::filesystem::is_directory(path)) throw IoError("not a directory: " + path.string());
        std::vector<std::filesystem::path> files;
        for (const auto& entry : std::filesystem::directory_iterator(path))
            if (entry.is_regular_file() && entry.path().extension() == ".txt")
                files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        std::size_t lineno = 0;
        for (const auto& file : files) {
            Report r;
            r.id = file.stem().string();
            r.text = read_file(file);
            r.meta["source_file"] = file.filename().string();
            add_checked(std::move(r), ++lineno);
        }
        break;
    }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Bigram index

struct BigramIndex {
    // bigram key is the two tokens joined with '\x1f', matching NgramProfile
    std::unordered_map<std::string, std::vector<std::uint32_t>> postings;
    std::vector<int> doc_lengths;
    TokenizerConfig tokenizer;
    // token/profile caches so match scoring never re-tokenizes
    std::vector<std::vector<std::string>> doc_tokens;
    std::vector<NgramProfile> doc_profiles;
};

inline BigramIndex build_bigram_index(const Corpus& corpus, const TokenizerConfig& tok = {}) {
    if (corpus.size() == 0) throw Error("cannot index an empty corpus");
    BigramIndex index;
    index.tokenizer = tok;
    index.doc_lengths.reserve(corpus.size());
    index.doc_tokens.reserve(corpus.size());
    index.doc_profiles.reserve(corpus.size());
    for (std::uint32_t i = 0; i < corpus.size(); ++i) {
        std::vector<std::string> tokens = tokenize(corpus.reports[i].text, tok);
        index.doc_lengths.push_back(static_cast<int>(tokens.size()));
        index.doc_profiles.push_back(ngram_profile(tokens, 2));
        for (const auto& [gram, unused] : index.doc_profiles.back().grams[1]) {
            auto& posting = index.postings[gram];
            if (posting.empty() || posting.back() != i) posting.push_back(i);
        }
        index.doc_tokens.push_back(std::move(tokens));
    }
    return index;
}

inline ojson index_to_json(const BigramIndex& index, const Corpus& corpus) {
    ojson j;
    j["tokenizer"] = {{"lowercase", index.tokenizer.lowercase},
                      {"split_punctuation", index.tokenizer.split_punctuation},
                      {"collapse_whitespace", index.tokenizer.collapse_whitespace}};
    ojson ids = ojson::array();
    for (const Report& r : corpus.reports) ids.push_back(r.id);
    j["doc_ids"] = std::move(ids);
    j["doc_lengths"] = index.doc_lengths;
    // keys readable: tokens never contain whitespace, so join with a space
    std::map<std::string, const std::vector<std::uint32_t>*> sorted;
    for (const auto& [gram, posting] : index.postings) {
        std::string key = gram;
        std::replace(key.begin(), key.end(), '\x1f', ' ');
        sorted[key] = &posting;
    }
    ojson postings;
    for (const auto& [key, posting] : sorted) postings[key] = *posting;
    j["postings"] = std::move(postings);
    return j;
}

inline void save_index(const std::filesystem::path& path, const BigramIndex& index,
                       const Corpus& corpus) {
    write_file_atomic(path, index_to_json(index, corpus).dump(2) + "\n");
}

/// Rebuilds the token caches from the corpus and checks the stored document
/// ids and postings still describe it.
inline BigramIndex load_index(const std::filesystem::path& path, const Corpus& corpus) {
    ojson j = ojson::parse(read_file(path));
    TokenizerConfig tok;
    tok.lowercase = j.at("tokenizer").at("lowercase").get<bool>();
    tok.split_punctuation = j.at("tokenizer").at("split_punctuation").get<bool>();
    const auto& ids = j.at("doc_ids");
    if (ids.size() != corpus.size()) throw Error("index does not match corpus size");
    for (std::size_t i = 0; i < corpus.size(); ++i)
        if (ids.at(i).get<std::string>() != corpus.reports[i].id)
            throw Error("index doc ids do not match the corpus");
    BigramIndex rebuilt = build_bigram_index(corpus, tok);
    if (rebuilt.postings.size() != j.at("postings").size())
        throw Error("stored postings do not match the corpus content");
    return rebuilt;
}

// ---------------------------------------------------------------------------
// Pairing

struct PairingSpec {
    enum class Mode { bleu_top, random };
    Mode mode = Mode::bleu_top;
    int count = 1;
    std::uint64_t seed = 0;
    int prune_candidates = 1000;  // 0 = exhaustive
};

struct TopMatch {
    std::string match_id;
    double score = 0.0;
};

/// Best BLEU counterpart of one report: candidates sharing at least one
/// bigram are ranked by shared-bigram count and truncated to
/// prune_candidates, then scored with exact smoothed BLEU-2 (query as the
/// reference). prune_candidates = 0 scores the entire corpus. Ties break to
/// the lexicographically smallest id; the query itself is excluded.
inline TopMatch top_bleu_match(const std::string& query_id, const Corpus& corpus,
                               const BigramIndex& index, const PairingSpec& spec) {
    auto qit = corpus.by_id.find(query_id);
    if (qit == corpus.by_id.end()) throw Error("unknown query id: " + query_id);
    if (corpus.size() < 2)
        throw NoCandidateError("corpus holds only the query report");
    const std::uint32_t q = static_cast<std::uint32_t>(qit->second);

    std::vector<std::uint32_t> candidates;
    if (spec.prune_candidates > 0) {
        std::unordered_map<std::uint32_t, int> shared;
        for (const auto& [gram, unused] : index.doc_profiles[q].grams[1]) {
            auto posting = index.postings.find(gram);
            if (posting == index.postings.end()) continue;
            for (std::uint32_t doc : posting->second)
                if (doc != q) ++shared[doc];
        }
        candidates.reserve(shared.size());
        for (const auto& [doc, unused] : shared) candidates.push_back(doc);
        std::sort(candidates.begin(), candidates.end(),
                  [&](std::uint32_t a, std::uint32_t b) {
                      if (shared.at(a) != shared.at(b)) return shared.at(a) > shared.at(b);
                      return corpus.reports[a].id < corpus.reports[b].id;
                  });
        if (candidates.size() > static_cast<std::size_t>(spec.prune_candidates))
            candidates.resize(static_cast<std::size_t>(spec.prune_candidates));
    }
    if (candidates.empty()) {
        // exhaustive: requested, or no bigram overlap anywhere
        candidates.reserve(corpus.size() - 1);
        for (std::uint32_t i = 0; i < corpus.size(); ++i)
            if (i != q) candidates.push_back(i);
    }

    BleuConfig cfg;
    cfg.max_n = 2;
    cfg.smoothing = BleuSmoothing::epsilon;
    TopMatch best;
    bool have_best = false;
    for (std::uint32_t doc : candidates) {
        const double score = bleu_profiles(index.doc_profiles[doc], index.doc_profiles[q], cfg);
        const std::string& id = corpus.reports[doc].id;
        if (!have_best || score > best.score ||
            (score == best.score && id < best.match_id)) {
            best = {id, score};
            have_best = true;
        }
    }
    return best;
}

namespace detail {

inline std::string numbered_pair_id(const char* prefix, std::size_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%06zu", prefix, n);
    return buf;
}

}  // namespace detail

/// bleu_top: a seeded sample of query reports, each paired with its top BLEU
/// match. random: seeded uniform unordered pairs. Neither mode emits a
/// self-pair or repeats an unordered pair within one call.
inline std::vector<ReportPair> make_pairs(const Corpus& corpus, const PairingSpec& spec) {
    if (spec.count < 1) throw Error("PairingSpec.count must be >= 1");
    const std::size_t n = corpus.size();
    if (n < 2) throw NoCandidateError("pairing needs at least 2 reports");
    std::mt19937_64 rng(spec.seed);
    std::vector<ReportPair> pairs;
    pairs.reserve(static_cast<std::size_t>(spec.count));

    auto emit = [&](const char* prefix, std::size_t a, std::size_t b, Provenance prov) {
        ReportPair p;
        p.pair_id = detail::numbered_pair_id(prefix, pairs.size() + 1);
        p.reference = corpus.reports[a];
        p.candidate = corpus.reports[b];
        p.provenance = prov;
        pairs.push_back(std::move(p));
    };

    if (spec.mode == PairingSpec::Mode::random) {
        const unsigned long long total =
            static_cast<unsigned long long>(n) * (n - 1) / 2;
        if (static_cast<unsigned long long>(spec.count) > total)
            throw CountTooLargeError("requested " + std::to_string(spec.count) +
                                     " distinct pairs but only " + std::to_string(total) +
                                     " exist");
        if (total <= 2'000'000ULL) {
            std::vector<std::pair<std::uint32_t, std::uint32_t>> all;
            all.reserve(static_cast<std::size_t>(total));
            for (std::uint32_t i = 0; i < n; ++i)
                for (std::uint32_t j = i + 1; j < n; ++j) all.emplace_back(i, j);
            std::shuffle(all.begin(), all.end(), rng);
            for (int k = 0; k < spec.count; ++k)
                emit("rand", all[static_cast<std::size_t>(k)].first,
                     all[static_cast<std::size_t>(k)].second, Provenance::random);
        } else {
            std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
            std::uniform_int_distribution<std::uint32_t> pick(0,
                                                              static_cast<std::uint32_t>(n - 1));
            while (pairs.size() < static_cast<std::size_t>(spec.count)) {
                const std::uint32_t i = pick(rng), j = pick(rng);
                if (i == j) continue;
                const auto key = std::minmax(i, j);
                if (!seen.insert({key.first, key.second}).second) continue;
                emit("rand", key.first, key.second, Provenance::random);
            }
        }
    } else {
        const BigramIndex index = build_bigram_index(corpus);
        std::vector<std::uint32_t> queries(n);
        std::iota(queries.begin(), queries.end(), 0U);
        std::shuffle(queries.begin(), queries.end(), rng);
        std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
        for (std::uint32_t q : queries) {
            if (pairs.size() == static_cast<std::size_t>(spec.count)) break;
            const TopMatch match = top_bleu_match(corpus.reports[q].id, corpus, index, spec);
            const std::uint32_t m = static_cast<std::uint32_t>(corpus.by_id.at(match.match_id));
            const auto key = std::minmax(q, m);
            if (!seen.insert({key.first, key.second}).second) continue;
            emit("bleu", q, m, Provenance::bleu_matched);
        }
        if (pairs.size() < static_cast<std::size_t>(spec.count))
            throw CountTooLargeError("distinct bleu-top pairs exhausted at " +
                                     std::to_string(pairs.size()) + " of " +
                                     std::to_string(spec.count));
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// Screening

struct ScreenResult {
    std::vector<ReportPair> kept;
    std::vector<std::pair<ReportPair, std::string>> rejected;  // with the model's reason
    std::vector<std::string> unscreened;  // kept despite backend failure or odd verdict
};

namespace detail {

// first alphabetic token, lowercased, plus the remainder as the reason
inline std::pair<std::string, std::string> split_verdict(const std::string& content) {
    std::size_t start = 0;
    while (start < content.size() &&
           !std::isalpha(static_cast<unsigned char>(content[start])))
        ++start;
    std::size_t end = start;
    std::string token;
    while (end < content.size() && std::isalpha(static_cast<unsigned char>(content[end]))) {
        token += static_cast<char>(std::tolower(static_cast<unsigned char>(content[end])));
        ++end;
    }
    std::size_t reason_start = end;
    while (reason_start < content.size() &&
           (std::isspace(static_cast<unsigned char>(content[reason_start])) ||
            content[reason_start] == ':' || content[reason_start] == ',' ||
            content[reason_start] == '-' || content[reason_start] == '.'))
        ++reason_start;
    return {token, trim(content.substr(reason_start))};
}

}  // namespace detail

/// Yes/no screening of pairs through the backend. Verdict parsing is
/// tolerant: the first token decides, case-insensitive. Backend failures and
/// unrecognizable verdicts keep the pair and flag it (screening is a quality
/// filter, so it fails open).
inline ScreenResult screen_pairs(const std::vector<ReportPair>& pairs, ChatBackend& backend,
                                 const PromptTemplate& screen_template,
                                 const JudgeParams& params,
                                 const std::string& system_text =
                                     "You curate radiology report datasets and screen out "
                                     "unusable records.") {
    ScreenResult result;
    for (const ReportPair& pair : pairs) {
        ChatRequest request;
        request.model = params.model;
        request.temperature = params.temperature;
        request.max_tokens = params.max_tokens;
        request.messages = render_messages(screen_template, pair, {}, system_text);
        std::string content;
        try {
            content = backend.complete(request).content;
        } catch (const BackendError& e) {
            result.kept.push_back(pair);
            result.unscreened.push_back(pair.pair_id);
            (void)e;
            continue;
        }
        const auto [token, reason] = detail::split_verdict(content);
        if (token == "keep" || token == "yes") {
            result.kept.push_back(pair);
        } else if (token == "reject" || token == "no") {
            result.rejected.emplace_back(pair, reason.empty() ? trim(content) : reason);
        } else {
            result.kept.push_back(pair);
            result.unscreened.push_back(pair.pair_id);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// SFT export

enum class SftFormat { prompt_completion_jsonl };

struct SftRecord {
    std::string system;
    std::string prompt;
    std::string completion;
    struct Meta {
        std::string pair_id;
        Provenance provenance = Provenance::user;
        std::string model_id;
        std::string prompt_version;
    } meta;

    friend bool operator==(const SftRecord&, const SftRecord&) = default;
};

inline ojson to_json(const SftRecord& r) {
    ojson j;
    j["system"] = r.system;
    j["prompt"] = r.prompt;
    j["completion"] = r.completion;
    j["meta"] = {{"pair_id", r.meta.pair_id},
                 {"provenance", std::string(to_string(r.meta.provenance))},
                 {"model_id", r.meta.model_id},
                 {"prompt_version", r.meta.prompt_version}};
    return j;
}

inline SftRecord sft_from_json(const ojson& j) {
    SftRecord r;
    r.system = j.at("system").get<std::string>();
    r.prompt = j.at("prompt").get<std::string>();
    r.completion = j.at("completion").get<std::string>();
    const ojson& meta = j.at("meta");
    r.meta.pair_id = meta.at("pair_id").get<std::string>();
    auto prov = provenance_from_string(meta.at("provenance").get<std::string>());
    if (!prov) throw Error("unknown provenance in sft record");
    r.meta.provenance = *prov;
    r.meta.model_id = meta.at("model_id").get<std::string>();
    r.meta.prompt_version = meta.at("prompt_version").get<std::string>();
    return r;
}

/// Canonical completion payload: the two-stage comparison text (when present)
/// followed by the repaired judgment as fenced JSON; single-stage judgments
/// are the JSON object alone.
inline std::string sft_completion(const Judgment& j) {
    ojson payload;
    ojson errors = ojson::array();
    for (const ErrorItem& e : j.errors) errors.push_back(to_json(e));
    payload["errors"] = std::move(errors);
    payload["total_count"] = j.total_count;
    payload["significant_count"] = j.significant_count;
    const std::string body = payload.dump();
    if (j.raw_stage1.empty()) return body;
    return j.raw_stage1 + "\n\n```json\n" + body + "\n```";
}

inline SftRecord make_sft_record(const ReportPair& pair, const Judgment& judgment,
                                 const TemplateSet& templates) {
    SftRecord r;
    r.system = templates.system_text;
    r.prompt = render_messages(templates.single, pair, {}, templates.system_text)[1].content;
    r.completion = sft_completion(judgment);
    r.meta.pair_id = pair.pair_id;
    r.meta.provenance = pair.provenance;
    r.meta.model_id = judgment.model_id;
    r.meta.prompt_version = judgment.prompt_version;
    return r;
}

/// Writes prompt/completion JSONL. Every completion is re-parsed before
/// anything is written; one bad record aborts the whole export.
inline int export_sft(const std::vector<SftRecord>& records, const std::filesystem::path& path,
                      SftFormat format = SftFormat::prompt_completion_jsonl) {
    (void)format;  // single format today
    std::vector<ojson> lines;
    lines.reserve(records.size());
    for (const SftRecord& r : records) {
        try {
            Judgment parsed = parse_judgment(r.completion, r.meta.pair_id, r.meta.model_id,
                                             r.meta.prompt_version, JudgeStrategy::two_stage);
            auto violations = validate_judgment(parsed);
            if (!violations.empty())
                throw InvalidJudgmentError(r.meta.pair_id, violations.front());
        } catch (const ParseError& e) {
            throw InvalidJudgmentError(r.meta.pair_id,
                                       std::string("completion does not re-parse: ") + e.what());
        }
        lines.push_back(to_json(r));
    }
    write_jsonl_atomic(path, lines);
    return static_cast<int>(lines.size());
}

inline int export_sft(const std::vector<std::pair<ReportPair, Judgment>>& pairs_with_judgments,
                      const TemplateSet& templates, const std::filesystem::path& path,
                      SftFormat format = SftFormat::prompt_completion_jsonl) {
    std::vector<SftRecord> records;
    records.reserve(pairs_with_judgments.size());
    for (const auto& [pair, judgment] : pairs_with_judgments) {
        auto violations = validate_judgment(judgment);
        if (!violations.empty()) throw InvalidJudgmentError(pair.pair_id, violations.front());
        records.push_back(make_sft_record(pair, judgment, templates));
    }
    return export_sft(records, path, format);
}

inline std::vector<SftRecord> load_sft(const std::filesystem::path& path) {
    std::vector<SftRecord> records;
    for (const ojson& j : read_jsonl(path)) records.push_back(sft_from_json(j));
    return records;
}

}  // namespace repeval
