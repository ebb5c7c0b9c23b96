#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "persona/corpus.hpp"
#include "persona/errors.hpp"
#include "persona/scoring/bm25.hpp"
#include "persona/scoring/nli.hpp"

namespace persona::prm {

enum class Strategy { bm25, classify_sp, nli_hr, nli_wc };

inline std::string to_string(Strategy s)
{
    switch (s) {
    case Strategy::bm25:
        return "bm25";
    case Strategy::classify_sp:
        return "classify_sp";
    case Strategy::nli_hr:
        return "nli_hr";
    case Strategy::nli_wc:
        return "nli_wc";
    }
    return {};
}

inline Strategy parse_strategy(const std::string& s)
{
    for (auto st : {Strategy::bm25, Strategy::classify_sp, Strategy::nli_hr, Strategy::nli_wc}) {
        if (to_string(st) == s) {
            return st;
        }
    }
    throw ArgumentError("unknown retrieval strategy '" + s + "'");
}

struct RetrievalConfig {
    Strategy strategy = Strategy::nli_wc;
    double alpha = 0.75;
    double beta = 0.25;
    double gamma = 0.10;
    std::size_t pool_r = 10;
    std::size_t pool_c = 3;

    void validate() const
    {
        if (alpha < 0 || beta < 0 || gamma < 0) {
            throw ArgumentError("retrieval weights must be non-negative");
        }
        if (pool_c == 0 || pool_c > pool_r) {
            throw ArgumentError("retrieval pools need 1 <= pool_c <= pool_r");
        }
    }

    double combined(double r, double e, double c) const { return alpha * r + beta * (1.0 - c) + gamma * e; }
};

struct RankedCandidate {
    PersonaSentence persona;
    double r = 0.0;
    double e = 0.0;
    double c = 0.0;
    double s = 0.0;
    double bm25 = 0.0;
    std::size_t rank = 0;  // 1-based; 0 while unranked
};

/// Scorers consulted by compute_scores. `bm25` may be null unless the bm25 strategy runs.
struct Backends {
    scoring::NliBackend& nli;
    scoring::RelevanceBackend& relevance;
    const scoring::Bm25Index* bm25 = nullptr;
};

/// r, e and c for every collection persona that is not textually one of the profile's.
inline std::vector<RankedCandidate> compute_scores(const Tokens& query, const Profile& profile,
                                                   const GlobalPersonaCollection& collection,
                                                   Backends backends)
{
    if (collection.empty()) {
        throw RetrievalError("global persona collection is empty");
    }
    std::vector<RankedCandidate> out;
    for (const auto& p : collection.personas()) {
        if (profile.contains(p.str())) {
            continue;
        }
        RankedCandidate rc;
        rc.persona = p;
        rc.r = std::clamp(backends.relevance.related(query, p.text), 0.0, 1.0);
        rc.e = scoring::entail_set(profile, p.text, backends.nli);
        rc.c = scoring::conflict_set(profile, p.text, backends.nli);
        if (backends.bm25) {
            rc.bm25 = backends.bm25->score(query, p.id);
        }
        out.push_back(std::move(rc));
    }
    if (out.empty()) {
        throw RetrievalError("every collection persona is already in the profile");
    }
    return out;
}

namespace detail {

template <typename Key>
void sort_desc_by(std::vector<RankedCandidate>& v, Key key)
{
    std::stable_sort(v.begin(), v.end(), [&](const auto& a, const auto& b) {
        double ka = key(a);
        double kb = key(b);
        if (ka != kb) {
            return ka > kb;
        }
        return a.persona.id < b.persona.id;
    });
}

inline void assign_ranks(std::vector<RankedCandidate>& v)
{
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i].rank = i + 1;
    }
}

}  // namespace detail

/// Fills s with the weighted combination and sorts by s (descending, ties by id).
inline std::vector<RankedCandidate> rank_wc(std::vector<RankedCandidate> candidates,
                                            const RetrievalConfig& cfg)
{
    for (auto& c : candidates) {
        c.s = cfg.combined(c.r, c.e, c.c);
    }
    detail::sort_desc_by(candidates, [](const auto& c) { return c.s; });
    detail::assign_ranks(candidates);
    return candidates;
}

/// Heuristic rule ordering: the winner (highest e among the pool_c lowest-c members of the
/// pool_r highest-r candidates) first, then the rest of that c-pool by e, the rest of the
/// r-pool by r, and everything else by r. Every tie goes to the lower persona id.
inline std::vector<RankedCandidate> rank_hr_order(std::vector<RankedCandidate> candidates,
                                                  const RetrievalConfig& cfg)
{
    for (auto& c : candidates) {
        c.s = cfg.combined(c.r, c.e, c.c);
    }
    detail::sort_desc_by(candidates, [](const auto& c) { return c.r; });
    auto r_end = std::min(cfg.pool_r, candidates.size());
    std::vector<RankedCandidate> r_pool(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(r_end));
    std::vector<RankedCandidate> rest(candidates.begin() + static_cast<std::ptrdiff_t>(r_end), candidates.end());

    detail::sort_desc_by(r_pool, [](const auto& c) { return -c.c; });
    auto c_end = std::min(cfg.pool_c, r_pool.size());
    std::vector<RankedCandidate> c_pool(r_pool.begin(), r_pool.begin() + static_cast<std::ptrdiff_t>(c_end));
    std::vector<RankedCandidate> r_rest(r_pool.begin() + static_cast<std::ptrdiff_t>(c_end), r_pool.end());

    detail::sort_desc_by(c_pool, [](const auto& c) { return c.e; });
    detail::sort_desc_by(r_rest, [](const auto& c) { return c.r; });

    std::vector<RankedCandidate> out;
    out.reserve(candidates.size());
    out.insert(out.end(), c_pool.begin(), c_pool.end());
    out.insert(out.end(), r_rest.begin(), r_rest.end());
    out.insert(out.end(), rest.begin(), rest.end());
    detail::assign_ranks(out);
    return out;
}

inline PersonaSentence rank_hr(const std::vector<RankedCandidate>& candidates, const RetrievalConfig& cfg)
{
    if (candidates.empty()) {
        throw RetrievalError("rank_hr needs at least one candidate");
    }
    return rank_hr_order(candidates, cfg).front().persona;
}

struct RetrievalResult {
    PersonaSentence chosen;
    std::vector<RankedCandidate> ranked;
};

/// Picks the extended persona for a query. The returned ranking follows the strategy's
/// own ordering; s always holds the weighted combination under `cfg`.
inline RetrievalResult retrieve(const Tokens& query, const Profile& profile,
                                const GlobalPersonaCollection& collection, const RetrievalConfig& cfg,
                                Backends backends)
{
    cfg.validate();
    if (cfg.strategy == Strategy::bm25 && !backends.bm25) {
        throw ArgumentError("bm25 strategy needs a BM25 index");
    }
    auto candidates = compute_scores(query, profile, collection, backends);
    std::vector<RankedCandidate> ranked;
    switch (cfg.strategy) {
    case Strategy::nli_wc:
        ranked = rank_wc(std::move(candidates), cfg);
        break;
    case Strategy::nli_hr:
        ranked = rank_hr_order(std::move(candidates), cfg);
        break;
    case Strategy::classify_sp:
        for (auto& c : candidates) {
            c.s = cfg.combined(c.r, c.e, c.c);
        }
        detail::sort_desc_by(candidates, [](const auto& c) { return c.r; });
        detail::assign_ranks(candidates);
        ranked = std::move(candidates);
        break;
    case Strategy::bm25:
        for (auto& c : candidates) {
            c.s = cfg.combined(c.r, c.e, c.c);
        }
        detail::sort_desc_by(candidates, [](const auto& c) { return c.bm25; });
        detail::assign_ranks(candidates);
        ranked = std::move(candidates);
        break;
    }
    return {ranked.front().persona, std::move(ranked)};
}

}  // namespace persona::prm
