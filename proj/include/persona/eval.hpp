#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "persona/corpus.hpp"
#include "persona/errors.hpp"
#include "persona/scoring/nli.hpp"

namespace persona::eval {

struct Consistency {
    double entail = 0.0;
    double conflict = 0.0;
};

/// Max-entailment consistency of a response against a profile, with the max-contradiction
/// companion. Each persona is the premise and the response the hypothesis.
inline Consistency entail_response(const Profile& profile, const Tokens& response, scoring::NliBackend& nli)
{
    if (profile.empty()) {
        throw ArgumentError("entail_response needs a non-empty profile");
    }
    Consistency out;
    for (const auto& p : profile.personas()) {
        auto v = nli.verdict(p.text, response);
        out.entail = std::max(out.entail, v.entail);
        out.conflict = std::max(out.conflict, v.contradict);
    }
    return out;
}

namespace detail {

using NgramCounts = std::map<Tokens, int>;

inline NgramCounts ngrams(const Tokens& s, std::size_t n)
{
    NgramCounts out;
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
        ++out[Tokens(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return out;
}

}  // namespace detail

/// Corpus BLEU-4 with one reference per hypothesis, uniform weights and the standard
/// brevity penalty. A higher order with no clipped match uses (0 + 1) / (count + 1).
inline double corpus_bleu(const std::vector<Tokens>& references, const std::vector<Tokens>& hypotheses)
{
    if (references.size() != hypotheses.size()) {
        throw ArgumentError("bleu needs one reference per hypothesis");
    }
    double matches[4] = {0, 0, 0, 0};
    double totals[4] = {0, 0, 0, 0};
    double hyp_len = 0;
    double ref_len = 0;
    for (std::size_t k = 0; k < hypotheses.size(); ++k) {
        hyp_len += static_cast<double>(hypotheses[k].size());
        ref_len += static_cast<double>(references[k].size());
        for (std::size_t n = 1; n <= 4; ++n) {
            auto h = detail::ngrams(hypotheses[k], n);
            auto r = detail::ngrams(references[k], n);
            for (const auto& [g, c] : h) {
                auto it = r.find(g);
                matches[n - 1] += std::min(c, it == r.end() ? 0 : it->second);
                totals[n - 1] += c;
            }
        }
    }
    if (hyp_len == 0 || matches[0] == 0) {
        return 0.0;
    }
    double log_sum = 0.0;
    for (int n = 0; n < 4; ++n) {
        double p = matches[n] > 0 ? matches[n] / totals[n] : 1.0 / (totals[n] + 1.0);
        log_sum += 0.25 * std::log(p);
    }
    double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
    return bp * std::exp(log_sum);
}

inline double bleu(const Tokens& reference, const Tokens& hypothesis)
{
    return corpus_bleu({reference}, {hypothesis});
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b)
{
    std::vector<std::size_t> prev(b.size() + 1, 0);
    std::vector<std::size_t> cur(b.size() + 1, 0);
    for (const auto& x : a) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            cur[j + 1] = x == b[j] ? prev[j] + 1 : std::max(prev[j + 1], cur[j]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

/// ROUGE-L F-measure with beta = 1.2.
inline double rouge_l(const Tokens& reference, const Tokens& hypothesis, double beta = 1.2)
{
    if (reference.empty() || hypothesis.empty()) {
        return 0.0;
    }
    double lcs = static_cast<double>(lcs_length(reference, hypothesis));
    if (lcs == 0) {
        return 0.0;
    }
    double p = lcs / static_cast<double>(hypothesis.size());
    double r = lcs / static_cast<double>(reference.size());
    double b2 = beta * beta;
    return (1 + b2) * p * r / (r + b2 * p);
}

/// CIDEr over a corpus with one reference per item: per-order cosine of tf-idf n-gram
/// vectors (idf = ln(N / max(1, df)) over references), averaged over n = 1..4, scaled by 10
/// and averaged over items.
inline double cider(const std::vector<Tokens>& references, const std::vector<Tokens>& hypotheses)
{
    if (references.size() != hypotheses.size()) {
        throw ArgumentError("cider needs one reference per hypothesis");
    }
    if (references.size() < 2) {
        throw ArgumentError("cider needs at least two corpus items for document frequencies");
    }
    const double n_docs = static_cast<double>(references.size());
    double total = 0.0;
    std::vector<std::vector<detail::NgramCounts>> ref_grams(4);
    std::map<Tokens, int> df;
    for (std::size_t n = 1; n <= 4; ++n) {
        for (const auto& r : references) {
            ref_grams[n - 1].push_back(detail::ngrams(r, n));
            for (const auto& [g, _] : ref_grams[n - 1].back()) {
                ++df[g];
            }
        }
    }
    auto idf = [&](const Tokens& g) {
        auto it = df.find(g);
        return std::log(n_docs / std::max(1.0, it == df.end() ? 0.0 : static_cast<double>(it->second)));
    };
    for (std::size_t k = 0; k < hypotheses.size(); ++k) {
        double item = 0.0;
        for (std::size_t n = 1; n <= 4; ++n) {
            auto h = detail::ngrams(hypotheses[k], n);
            const auto& r = ref_grams[n - 1][k];
            double dot = 0.0;
            double nh = 0.0;
            double nr = 0.0;
            for (const auto& [g, c] : h) {
                double w = c * idf(g);
                nh += w * w;
                auto it = r.find(g);
                if (it != r.end()) {
                    dot += w * it->second * idf(g);
                }
            }
            for (const auto& [g, c] : r) {
                double w = c * idf(g);
                nr += w * w;
            }
            if (nh > 0 && nr > 0) {
                item += dot / (std::sqrt(nh) * std::sqrt(nr));
            }
        }
        total += 10.0 * item / 4.0;
    }
    return total / n_docs;
}

/// Discounted cumulative gain over exactly three graded gains.
inline double dcg_at_3(const std::vector<int>& rels)
{
    if (rels.size() != 3) {
        throw ArgumentError("dcg_at_3 needs exactly three gains");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        s += (std::pow(2.0, rels[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    }
    return s;
}

/// One judged retrieved persona. The gain is the persona-entailment grade when the persona is
/// judged related, else 0.
struct AnnotationRecord {
    std::string query;
    std::size_t rank = 0;      // 1-based
    bool related = false;
    int s_pp = 0;              // persona entailment 0..2
    int query_relevance = 0;   // 0..1

    void validate() const
    {
        if (rank == 0 || s_pp < 0 || s_pp > 2 || query_relevance < 0 || query_relevance > 1) {
            throw ArgumentError("annotation values outside their ranges");
        }
    }

    int gain() const { return related ? s_pp : 0; }
};

/// Mean DCG@3 over queries; unjudged ranks among the top three count as gain 0.
inline double mean_dcg_at_3(const std::vector<AnnotationRecord>& records)
{
    std::map<std::string, std::vector<int>> by_query;
    for (const auto& r : records) {
        r.validate();
        auto& gains = by_query.try_emplace(r.query, std::vector<int>(3, 0)).first->second;
        if (r.rank <= 3) {
            gains[r.rank - 1] = r.gain();
        }
    }
    if (by_query.empty()) {
        throw ArgumentError("no annotations");
    }
    double s = 0.0;
    for (const auto& [_, gains] : by_query) {
        s += dcg_at_3(gains);
    }
    return s / static_cast<double>(by_query.size());
}

struct MetricReport {
    double entail = 0.0;
    double conflict = 0.0;
    double bleu = 0.0;
    double rouge_l = 0.0;
    double cider = 0.0;
    std::size_t n = 0;

    nlohmann::ordered_json to_json() const
    {
        nlohmann::ordered_json j;
        j["entail"] = entail;
        j["conflict"] = conflict;
        j["bleu"] = bleu;
        j["rouge_l"] = rouge_l;
        j["cider"] = cider;
        j["n"] = n;
        return j;
    }

    /// Fixed-width table; BLEU and ROUGE-L shown x100.
    std::string to_table() const
    {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%-8s %-8s %-8s %-8s %-8s %6s\n%-8.3f %-8.3f %-8.2f %-8.2f %-8.2f %6zu\n",
                      "entail", "conflict", "bleu", "rouge_l", "cider", "n", entail, conflict, bleu * 100,
                      rouge_l * 100, cider, n);
        return buf;
    }
};

/// Aggregates per-example metrics over aligned predictions, references and profiles.
inline MetricReport evaluate_run(const std::vector<Tokens>& predictions, const std::vector<Tokens>& references,
                                 const std::vector<Profile>& profiles, scoring::NliBackend& nli)
{
    if (predictions.empty()) {
        throw ArgumentError("no predictions to evaluate");
    }
    if (predictions.size() != references.size() || predictions.size() != profiles.size()) {
        throw ArgumentError("predictions, references and profiles differ in count");
    }
    MetricReport rep;
    rep.n = predictions.size();
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        auto c = entail_response(profiles[i], predictions[i], nli);
        rep.entail += c.entail;
        rep.conflict += c.conflict;
        rep.rouge_l += rouge_l(references[i], predictions[i]);
    }
    const double n = static_cast<double>(rep.n);
    rep.entail /= n;
    rep.conflict /= n;
    rep.rouge_l /= n;
    rep.bleu = corpus_bleu(references, predictions);
    rep.cider = rep.n >= 2 ? cider(references, predictions) : 0.0;
    return rep;
}

}  // namespace persona::eval
