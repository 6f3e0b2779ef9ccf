#pragma once

// Deterministic text and rank statistics: BLEU-n with optional epsilon
// smoothing and brevity penalty, tie-corrected Kendall tau-b, leave-one-out
// rater concordance, per-pair error distribution, and Bland-Altman agreement.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "repeval/core.hpp"

namespace repeval {

class LengthMismatchError : public Error {
public:
    using Error::Error;
};

class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class EmptyReferenceError : public Error {
public:
    using Error::Error;
};

class IncompleteGridError : public Error {
public:
    using Error::Error;
};

class KeyMismatchError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Tokenization

struct TokenizerConfig {
    bool lowercase = true;
    bool split_punctuation = true;  // punctuation becomes separate tokens
    bool collapse_whitespace = true;
};

inline std::vector<std::string> tokenize(std::string_view text,
                                         const TokenizerConfig& cfg = {}) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            tokens.push_back(current);
            current.clear();
        }
    };
    for (unsigned char c : text) {
        if (c < 0x80 && std::isspace(c)) {
            flush();
            continue;
        }
        // Bytes >= 0x80 are UTF-8 continuation/lead bytes; keep them in-word.
        const bool word_char = c >= 0x80 || std::isalnum(c);
        if (!word_char && cfg.split_punctuation) {
            flush();
            tokens.emplace_back(1, static_cast<char>(c));
        } else {
            if (cfg.lowercase && c < 0x80)
                current += static_cast<char>(std::tolower(c));
            else
                current += static_cast<char>(c);
        }
    }
    flush();
    return tokens;
}

// ---------------------------------------------------------------------------
// BLEU

enum class BleuSmoothing { none, epsilon };

struct BleuConfig {
    int max_n = 2;
    BleuSmoothing smoothing = BleuSmoothing::none;
    bool brevity_penalty = true;
};

inline constexpr double kBleuEpsilon = 1e-9;

/// Pre-counted n-grams of one token sequence, for repeated scoring.
struct NgramProfile {
    std::array<std::unordered_map<std::string, long long>, 4> grams;
    std::size_t token_count = 0;
    int max_n = 0;
};

inline NgramProfile ngram_profile(const std::vector<std::string>& tokens, int max_n) {
    NgramProfile p;
    p.token_count = tokens.size();
    p.max_n = max_n;
    for (int n = 1; n <= max_n; ++n) {
        auto& counts = p.grams[static_cast<std::size_t>(n - 1)];
        if (tokens.size() + 1 <= static_cast<std::size_t>(n)) continue;
        for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
            std::string key = tokens[i];
            for (int k = 1; k < n; ++k) {
                key += '\x1f';
                key += tokens[i + k];
            }
            ++counts[key];
        }
    }
    return p;
}

/// Geometric mean of modified n-gram precisions times the brevity penalty
/// exp(1 - r/c) when the candidate is shorter than the reference.
inline double bleu_profiles(const NgramProfile& candidate, const NgramProfile& reference,
                            const BleuConfig& cfg = {}) {
    if (cfg.max_n < 1 || cfg.max_n > 4) throw Error("BLEU max_n must be within [1, 4]");
    if (candidate.max_n < cfg.max_n || reference.max_n < cfg.max_n)
        throw Error("n-gram profile built with smaller max_n than requested");
    if (reference.token_count == 0) throw EmptyReferenceError("reference has no tokens");
    if (candidate.token_count == 0) return 0.0;

    double log_precision_sum = 0.0;
    for (int n = 1; n <= cfg.max_n; ++n) {
        const auto& cand = candidate.grams[static_cast<std::size_t>(n - 1)];
        const auto& ref = reference.grams[static_cast<std::size_t>(n - 1)];
        const long long denom =
            candidate.token_count + 1 > static_cast<std::size_t>(n)
                ? static_cast<long long>(candidate.token_count) - n + 1
                : 0;
        long long matches = 0;
        for (const auto& [gram, count] : cand) {
            auto it = ref.find(gram);
            if (it != ref.end()) matches += std::min(count, it->second);
        }
        double num = static_cast<double>(matches);
        double den = static_cast<double>(denom);
        if (denom == 0 || matches == 0) {
            if (cfg.smoothing != BleuSmoothing::epsilon) return 0.0;
            num = kBleuEpsilon;
            if (denom == 0) den = 1.0;
        }
        log_precision_sum += std::log(num / den);
    }
    double score = std::exp(log_precision_sum / cfg.max_n);
    if (cfg.brevity_penalty && candidate.token_count < reference.token_count)
        score *= std::exp(1.0 - static_cast<double>(reference.token_count) /
                                    static_cast<double>(candidate.token_count));
    return std::min(1.0, score);
}

inline double bleu_tokens(const std::vector<std::string>& candidate,
                          const std::vector<std::string>& reference,
                          const BleuConfig& cfg = {}) {
    return bleu_profiles(ngram_profile(candidate, cfg.max_n),
                         ngram_profile(reference, cfg.max_n), cfg);
}

inline double bleu(std::string_view candidate, std::string_view reference,
                   const BleuConfig& cfg = {}, const TokenizerConfig& tok = {}) {
    return bleu_tokens(tokenize(candidate, tok), tokenize(reference, tok), cfg);
}

// ---------------------------------------------------------------------------
// Kendall tau-b

struct AgreementResult {
    double tau = 0.0;
    long long n = 0;
    long long concordant = 0;
    long long discordant = 0;
    long long ties_x = 0;   // pairs tied in x only
    long long ties_y = 0;   // pairs tied in y only
    long long ties_xy = 0;  // pairs tied in both
};

inline ojson to_json(const AgreementResult& r) {
    ojson j;
    j["tau"] = r.tau;
    j["n"] = r.n;
    j["concordant"] = r.concordant;
    j["discordant"] = r.discordant;
    j["ties_x"] = r.ties_x;
    j["ties_y"] = r.ties_y;
    j["ties_xy"] = r.ties_xy;
    return j;
}

namespace detail {

// Inversion count of values via merge sort; equal elements do not invert.
inline long long count_inversions(std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<double> buffer(n);
    long long inversions = 0;
    for (std::size_t width = 1; width < n; width *= 2) {
        for (std::size_t lo = 0; lo + width < n; lo += 2 * width) {
            const std::size_t mid = lo + width;
            const std::size_t hi = std::min(lo + 2 * width, n);
            std::size_t i = lo, j = mid, k = lo;
            while (i < mid && j < hi) {
                if (values[i] <= values[j]) {
                    buffer[k++] = values[i++];
                } else {
                    inversions += static_cast<long long>(mid - i);
                    buffer[k++] = values[j++];
                }
            }
            while (i < mid) buffer[k++] = values[i++];
            while (j < hi) buffer[k++] = values[j++];
            std::copy(buffer.begin() + static_cast<std::ptrdiff_t>(lo),
                      buffer.begin() + static_cast<std::ptrdiff_t>(hi),
                      values.begin() + static_cast<std::ptrdiff_t>(lo));
        }
    }
    return inversions;
}

inline long long tied_pairs_sorted(const std::vector<double>& sorted) {
    long long ties = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        const long long g = static_cast<long long>(j - i);
        ties += g * (g - 1) / 2;
        i = j;
    }
    return ties;
}


// Pair counting shared by kendall_tau_b and the leave-one-out aggregation.
// Degenerate input (one sequence constant) yields tau = NaN here; the public
// operation turns that into an error.
inline AgreementResult tau_b_counts(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (x[a] != x[b]) return x[a] < x[b];
        return y[a] < y[b];
    });

    // Pairs tied in x (n1) and tied in both (n3), scanned over equal-x runs.
    long long n1 = 0, n3 = 0;
    {
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j < n && x[order[j]] == x[order[i]]) ++j;
            const long long g = static_cast<long long>(j - i);
            n1 += g * (g - 1) / 2;
            std::size_t k = i;
            while (k < j) {
                std::size_t m = k;
                while (m < j && y[order[m]] == y[order[k]]) ++m;
                const long long h = static_cast<long long>(m - k);
                n3 += h * (h - 1) / 2;
                k = m;
            }
            i = j;
        }
    }

    long long n2 = 0;
    {
        std::vector<double> ys(y.begin(), y.end());
        std::sort(ys.begin(), ys.end());
        n2 = detail::tied_pairs_sorted(ys);
    }

    const long long n0 = static_cast<long long>(n) * (static_cast<long long>(n) - 1) / 2;

    std::vector<double> ys_in_x_order(n);
    for (std::size_t i = 0; i < n; ++i) ys_in_x_order[i] = y[order[i]];
    const long long discordant = count_inversions(ys_in_x_order);
    const long long usable = n0 - n1 - n2 + n3;  // pairs tied in neither
    const long long concordant = usable - discordant;

    AgreementResult r;
    r.n = static_cast<long long>(n);
    r.concordant = concordant;
    r.discordant = discordant;
    r.ties_x = n1 - n3;
    r.ties_y = n2 - n3;
    r.ties_xy = n3;
    if (n1 == n0 || n2 == n0)
        r.tau = std::numeric_limits<double>::quiet_NaN();
    else
        r.tau = static_cast<double>(concordant - discordant) /
                std::sqrt(static_cast<double>(static_cast<__int128>(n0 - n1) * (n0 - n2)));
    return r;
}

}  // namespace detail

/// Tie-corrected Kendall tau-b in O(n log n): pair counts are exact integers,
/// with a single division at the end.
inline AgreementResult kendall_tau_b(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw LengthMismatchError("kendall_tau_b: sequence lengths differ (" +
                                  std::to_string(x.size()) + " vs " +
                                  std::to_string(y.size()) + ")");
    if (x.size() < 2) throw LengthMismatchError("kendall_tau_b requires at least 2 observations");
    AgreementResult r = detail::tau_b_counts(x, y);
    if (std::isnan(r.tau)) {
        const long long n0 = r.n * (r.n - 1) / 2;
        throw DegenerateInputError(r.ties_x + r.ties_xy == n0 ? "kendall_tau_b: all x values tied"
                                                              : "kendall_tau_b: all y values tied");
    }
    return r;
}

inline AgreementResult kendall_tau_b(const std::vector<double>& x,
                                     const std::vector<double>& y) {
    return kendall_tau_b(std::span<const double>(x), std::span<const double>(y));
}

// ---------------------------------------------------------------------------
// Leave-one-out rater concordance

/// For every rater: tau-b between that rater's per-pair totals and the mean
/// of the remaining raters' totals. Requires a complete rater x pair grid.
/// A rater whose comparison is degenerate (either sequence constant) gets
/// tau = NaN rather than failing the whole table.
inline std::map<std::string, AgreementResult> leave_one_out_agreement(
    const std::vector<RaterAnnotation>& annotations) {
    std::map<std::string, std::map<std::string, int>> grid;  // rater -> pair -> total
    std::map<std::string, int> pair_ids;                     // pair -> observations
    for (const RaterAnnotation& a : annotations) {
        auto [it, inserted] = grid[a.rater_id].emplace(a.pair_id, a.total_count());
        if (!inserted)
            throw Error("duplicate annotation for rater " + a.rater_id + ", pair " + a.pair_id);
        ++pair_ids[a.pair_id];
    }
    if (grid.size() < 2 || pair_ids.size() < 2)
        throw Error("leave_one_out_agreement requires at least 2 raters and 2 pairs");

    std::string missing;
    int missing_count = 0;
    for (const auto& [rater, totals] : grid) {
        for (const auto& [pair, unused] : pair_ids) {
            if (!totals.count(pair)) {
                ++missing_count;
                if (missing_count <= 20)
                    missing += (missing.empty() ? "" : "; ") + ("rater " + rater + ", pair " + pair);
            }
        }
    }
    if (missing_count > 0)
        throw IncompleteGridError("incomplete rater grid, " + std::to_string(missing_count) +
                                  " missing cell(s): " + missing +
                                  (missing_count > 20 ? "; ..." : ""));

    std::map<std::string, AgreementResult> out;
    for (const auto& [rater, totals] : grid) {
        std::vector<double> own, others_mean;
        own.reserve(pair_ids.size());
        others_mean.reserve(pair_ids.size());
        for (const auto& [pair, unused] : pair_ids) {
            own.push_back(totals.at(pair));
            double sum = 0.0;
            for (const auto& [other, other_totals] : grid)
                if (other != rater) sum += other_totals.at(pair);
            others_mean.push_back(sum / static_cast<double>(grid.size() - 1));
        }
        out[rater] = detail::tau_b_counts(own, others_mean);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Error distribution (judge minus rater mean, per pair)

struct ErrorDistribution {
    std::vector<std::pair<std::string, double>> diffs;  // pair_id -> diff, sorted by pair_id
    std::map<int, long long> histogram;                 // unit bins centered on integers
    double mean_diff = 0.0;
};

inline ojson to_json(const ErrorDistribution& d) {
    ojson j;
    ojson diffs = ojson::array();
    for (const auto& [pair_id, diff] : d.diffs) diffs.push_back({{"pair_id", pair_id}, {"diff", diff}});
    j["diffs"] = std::move(diffs);
    ojson hist = ojson::array();
    for (const auto& [center, count] : d.histogram)
        hist.push_back({{"bin_center", center}, {"count", count}});
    j["histogram"] = std::move(hist);
    j["mean_diff"] = d.mean_diff;
    return j;
}

inline ErrorDistribution error_distribution(const std::map<std::string, int>& judge_totals,
                                            const std::map<std::string, double>& rater_mean_totals) {
    for (const auto& [k, unused] : judge_totals)
        if (!rater_mean_totals.count(k))
            throw KeyMismatchError("pair " + k + " has a judge total but no rater mean");
    for (const auto& [k, unused] : rater_mean_totals)
        if (!judge_totals.count(k))
            throw KeyMismatchError("pair " + k + " has a rater mean but no judge total");

    ErrorDistribution d;
    double sum = 0.0;
    for (const auto& [pair_id, judge_total] : judge_totals) {
        const double diff = static_cast<double>(judge_total) - rater_mean_totals.at(pair_id);
        d.diffs.emplace_back(pair_id, diff);
        // bin k covers [k - 0.5, k + 0.5)
        ++d.histogram[static_cast<int>(std::floor(diff + 0.5))];
        sum += diff;
    }
    d.mean_diff = d.diffs.empty() ? 0.0 : sum / static_cast<double>(d.diffs.size());
    return d;
}

// ---------------------------------------------------------------------------
// Bland-Altman agreement

struct BlandAltmanResult {
    double mean_diff = 0.0;
    double sd_diff = 0.0;  // sample standard deviation, n-1 denominator
    double loa_lower = 0.0;
    double loa_upper = 0.0;
    std::vector<std::pair<double, double>> points;  // (mean, diff) per observation
};

inline ojson to_json(const BlandAltmanResult& r) {
    ojson j;
    j["mean_diff"] = r.mean_diff;
    j["sd_diff"] = r.sd_diff;
    j["loa_lower"] = r.loa_lower;
    j["loa_upper"] = r.loa_upper;
    ojson pts = ojson::array();
    for (const auto& [mean, diff] : r.points) pts.push_back({{"mean", mean}, {"diff", diff}});
    j["points"] = std::move(pts);
    return j;
}

inline BlandAltmanResult bland_altman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw LengthMismatchError("bland_altman: sequence lengths differ");
    if (a.size() < 2) throw LengthMismatchError("bland_altman requires at least 2 observations");

    BlandAltmanResult r;
    r.points.reserve(a.size());
    double diff_sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        r.points.emplace_back((a[i] + b[i]) / 2.0, diff);
        diff_sum += diff;
    }
    r.mean_diff = diff_sum / static_cast<double>(a.size());
    double sq = 0.0;
    for (const auto& [mean, diff] : r.points) sq += (diff - r.mean_diff) * (diff - r.mean_diff);
    r.sd_diff = std::sqrt(sq / static_cast<double>(a.size() - 1));
    r.loa_lower = r.mean_diff - 1.96 * r.sd_diff;
    r.loa_upper = r.mean_diff + 1.96 * r.sd_diff;
    return r;
}

inline BlandAltmanResult bland_altman(const std::vector<double>& a,
                                      const std::vector<double>& b) {
    return bland_altman(std::span<const double>(a), std::span<const double>(b));
}

}  // namespace repeval
