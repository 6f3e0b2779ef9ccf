#pragma once

// Independent oracles for the test suites. These deliberately avoid the
// library's production code paths: tau by O(n^2) pair enumeration, BLEU by
// direct nested-loop n-gram counting, JSON syntax by a hand-rolled
// recursive-descent checker, and top-BLEU matching by exhaustive argmax.

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "repeval/core.hpp"
#include "repeval/corpus.hpp"
#include "repeval/metrics.hpp"

namespace repeval::oracle {

// ---------------------------------------------------------------------------
// Kendall tau-b by brute force over all pairs

inline AgreementResult kendall_tau_b_bruteforce(std::span<const double> x,
                                                std::span<const double> y) {
    const std::size_t n = x.size();
    long long concordant = 0, discordant = 0, ties_x = 0, ties_y = 0, ties_xy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const bool tx = x[i] == x[j];
            const bool ty = y[i] == y[j];
            if (tx && ty) ++ties_xy;
            else if (tx) ++ties_x;
            else if (ty) ++ties_y;
            else if ((x[i] < x[j]) == (y[i] < y[j])) ++concordant;
            else ++discordant;
        }
    }
    const long long n0 = static_cast<long long>(n) * (static_cast<long long>(n) - 1) / 2;
    const long long n1 = ties_x + ties_xy;
    const long long n2 = ties_y + ties_xy;
    AgreementResult r;
    r.n = static_cast<long long>(n);
    r.concordant = concordant;
    r.discordant = discordant;
    r.ties_x = ties_x;
    r.ties_y = ties_y;
    r.ties_xy = ties_xy;
    r.tau = static_cast<double>(concordant - discordant) /
            std::sqrt(static_cast<double>(static_cast<__int128>(n0 - n1) * (n0 - n2)));
    return r;
}

inline AgreementResult kendall_tau_b_bruteforce(const std::vector<double>& x,
                                                const std::vector<double>& y) {
    return kendall_tau_b_bruteforce(std::span<const double>(x), std::span<const double>(y));
}

// ---------------------------------------------------------------------------
// BLEU by direct application of the textbook formula

inline double bleu_bruteforce(const std::vector<std::string>& cand,
                              const std::vector<std::string>& ref, int max_n,
                              bool epsilon_smoothing) {
    if (cand.empty()) return 0.0;
    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        const long long total =
            cand.size() + 1 > static_cast<std::size_t>(n)
                ? static_cast<long long>(cand.size()) - n + 1
                : 0;
        long long matches = 0;
        // clipped matches: count each candidate n-gram position, capped at the
        // reference occurrence count of that n-gram
        std::map<std::vector<std::string>, long long> used;
        for (long long i = 0; i < total; ++i) {
            std::vector<std::string> gram(cand.begin() + i, cand.begin() + i + n);
            long long ref_count = 0;
            for (std::size_t j = 0; j + n <= ref.size(); ++j) {
                bool equal = true;
                for (int k = 0; k < n; ++k)
                    if (ref[j + k] != gram[static_cast<std::size_t>(k)]) { equal = false; break; }
                if (equal) ++ref_count;
            }
            if (used[gram] < ref_count) {
                ++used[gram];
                ++matches;
            }
        }
        double num = static_cast<double>(matches);
        double den = static_cast<double>(total);
        if (total == 0 || matches == 0) {
            if (!epsilon_smoothing) return 0.0;
            num = 1e-9;
            if (total == 0) den = 1.0;
        }
        log_sum += std::log(num / den);
    }
    double score = std::exp(log_sum / max_n);
    if (cand.size() < ref.size())
        score *= std::exp(1.0 - static_cast<double>(ref.size()) / static_cast<double>(cand.size()));
    return std::min(1.0, score);
}

// ---------------------------------------------------------------------------
// Exhaustive top-BLEU match: plain double loop, brute-force BLEU scorer,
// smallest-id tie break. No index, no pruning, no profile caches.

inline TopMatch top_bleu_match_bruteforce(const std::string& query_id, const Corpus& corpus) {
    const std::vector<std::string> query_tokens = tokenize(corpus.at(query_id).text);
    TopMatch best;
    bool have_best = false;
    for (const Report& other : corpus.reports) {
        if (other.id == query_id) continue;
        const double score = bleu_bruteforce(tokenize(other.text), query_tokens, 2, true);
        if (!have_best || score > best.score ||
            (score == best.score && other.id < best.match_id)) {
            best = {other.id, score};
            have_best = true;
        }
    }
    if (!have_best) throw Error("no candidate in oracle");
    return best;
}

// ---------------------------------------------------------------------------
// Strict JSON syntax checker (recursive descent, no dependency on the JSON
// library used by the implementation)

namespace detail {

struct JsonChecker {
    std::string_view text;
    std::size_t pos = 0;
    int depth = 0;

    bool fail() { return false; }
    bool eof() const { return pos >= text.size(); }
    char peek() const { return text[pos]; }
    void skip_ws() {
        while (!eof() && (peek() == ' ' || peek() == '\t' || peek() == '\n' || peek() == '\r'))
            ++pos;
    }
    bool consume(char c) {
        if (eof() || peek() != c) return false;
        ++pos;
        return true;
    }

    bool value() {
        if (++depth > 512) return fail();
        skip_ws();
        if (eof()) return fail();
        bool ok = false;
        switch (peek()) {
        case '{': ok = object(); break;
        case '[': ok = array(); break;
        case '"': ok = string(); break;
        case 't': ok = literal("true"); break;
        case 'f': ok = literal("false"); break;
        case 'n': ok = literal("null"); break;
        default: ok = number(); break;
        }
        --depth;
        return ok;
    }

    bool literal(std::string_view lit) {
        if (text.substr(pos, lit.size()) != lit) return fail();
        pos += lit.size();
        return true;
    }

    bool object() {
        if (!consume('{')) return fail();
        skip_ws();
        if (consume('}')) return true;
        while (true) {
            skip_ws();
            if (!string()) return fail();
            skip_ws();
            if (!consume(':')) return fail();
            if (!value()) return fail();
            skip_ws();
            if (consume(',')) continue;
            return consume('}');
        }
    }

    bool array() {
        if (!consume('[')) return fail();
        skip_ws();
        if (consume(']')) return true;
        while (true) {
            if (!value()) return fail();
            skip_ws();
            if (consume(',')) continue;
            return consume(']');
        }
    }

    bool string() {
        if (!consume('"')) return fail();
        while (!eof()) {
            unsigned char c = static_cast<unsigned char>(text[pos]);
            if (c == '"') {
                ++pos;
                return true;
            }
            if (c == '\\') {
                ++pos;
                if (eof()) return fail();
                char esc = text[pos];
                if (esc == 'u') {
                    for (int i = 0; i < 4; ++i) {
                        ++pos;
                        if (eof() || !std::isxdigit(static_cast<unsigned char>(text[pos])))
                            return fail();
                    }
                } else if (std::string_view("\"\\/bfnrt").find(esc) == std::string_view::npos) {
                    return fail();
                }
                ++pos;
            } else if (c < 0x20) {
                return fail();
            } else {
                ++pos;
            }
        }
        return fail();
    }

    bool number() {
        std::size_t start = pos;
        consume('-');
        if (eof() || !std::isdigit(static_cast<unsigned char>(peek()))) return fail();
        if (peek() == '0') {
            ++pos;
        } else {
            while (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos;
        }
        if (!eof() && peek() == '.') {
            ++pos;
            if (eof() || !std::isdigit(static_cast<unsigned char>(peek()))) return fail();
            while (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos;
        }
        if (!eof() && (peek() == 'e' || peek() == 'E')) {
            ++pos;
            if (!eof() && (peek() == '+' || peek() == '-')) ++pos;
            if (eof() || !std::isdigit(static_cast<unsigned char>(peek()))) return fail();
            while (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos;
        }
        return pos > start;
    }
};

}  // namespace detail

/// True iff `text` is one complete, strictly valid JSON value.
inline bool is_strict_json(std::string_view text) {
    detail::JsonChecker checker{text};
    if (!checker.value()) return false;
    checker.skip_ws();
    return checker.eof();
}

}  // namespace repeval::oracle
