#include <algorithm>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "persona/prm.hpp"

using namespace persona;
using namespace persona::prm;

namespace {

Tokens tok(const std::string& s) { return text::tokenize(s); }

// Scores looked up by candidate text so fixtures can pin r, e and c exactly.
struct StubScores final : scoring::NliBackend, scoring::RelevanceBackend {
    std::map<std::string, double> r;
    std::map<std::string, scoring::NliVerdict> v;

    scoring::NliVerdict verdict(const Tokens&, const Tokens& hyp) override { return v.at(text::join(hyp)); }
    double related(const Tokens&, const Tokens& cand) override { return r.at(text::join(cand)); }
    std::string name() const override { return "stub"; }
};

RankedCandidate cand(std::size_t id, double r, double e, double c)
{
    RankedCandidate rc;
    rc.persona = {id, {"p" + std::to_string(id)}};
    rc.r = r;
    rc.e = e;
    rc.c = c;
    return rc;
}

GlobalPersonaCollection collection_of(const std::vector<std::string>& sentences)
{
    GlobalPersonaCollection c;
    for (const auto& s : sentences) {
        c.add(tok(s));
    }
    return c;
}

}  // namespace

TEST(Prm, StrategyNames)
{
    for (auto s : {Strategy::bm25, Strategy::classify_sp, Strategy::nli_hr, Strategy::nli_wc}) {
        EXPECT_EQ(parse_strategy(to_string(s)), s);
    }
    EXPECT_THROW(parse_strategy("dense"), ArgumentError);
}

TEST(Prm, ConfigValidation)
{
    RetrievalConfig cfg;
    cfg.pool_c = 11;
    EXPECT_THROW(cfg.validate(), ArgumentError);
    cfg = {};
    cfg.beta = -1;
    EXPECT_THROW(cfg.validate(), ArgumentError);
}

TEST(Prm, CombinedScoreByHand)
{
    RetrievalConfig cfg;
    EXPECT_NEAR(cfg.combined(0.9, 0.8, 0.1), 0.98, 1e-12);
    EXPECT_NEAR(cfg.combined(1.0, 1.0, 0.0), 1.10, 1e-12);
}

TEST(Prm, ComputeScoresMatchesDirectCalls)
{
    scoring::LexicalBackend lex;
    auto profile = Profile::from_sentences({"i have two cats", "i don't like winter"});
    auto coll = collection_of({"i have two cats", "i love skiing in winter", "i have a dog", "my cats are old",
                               "i work at a bank", "i never eat meat"});
    auto q = tok("do you like winter sports ?");
    auto out = compute_scores(q, profile, coll, {lex, lex});
    ASSERT_EQ(out.size(), 5u);
    for (const auto& c : out) {
        EXPECT_FALSE(profile.contains(c.persona.str()));
        EXPECT_DOUBLE_EQ(c.r, lex.related(q, c.persona.text));
        EXPECT_DOUBLE_EQ(c.e, scoring::entail_set(profile, c.persona.text, lex));
        EXPECT_DOUBLE_EQ(c.c, scoring::conflict_set(profile, c.persona.text, lex));
    }
}

TEST(Prm, EverythingExcludedIsRetrievalError)
{
    scoring::LexicalBackend lex;
    auto profile = Profile::from_sentences({"i ski", "i swim"});
    auto coll = collection_of({"i ski", "i swim"});
    EXPECT_THROW(compute_scores(tok("hi ?"), profile, coll, {lex, lex}), RetrievalError);
    EXPECT_THROW(compute_scores(tok("hi ?"), profile, GlobalPersonaCollection{}, {lex, lex}), RetrievalError);
    auto one = collection_of({"i ski", "i run"});
    auto out = compute_scores(tok("do you run ?"), profile, one, {lex, lex});
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].persona.str(), "i run");
}

TEST(Prm, RankWcOrdersAndBreaksTiesById)
{
    RetrievalConfig cfg;
    auto ranked = rank_wc({cand(3, 0.5, 0.5, 0.5), cand(1, 0.5, 0.5, 0.5), cand(2, 0.9, 0.8, 0.1)}, cfg);
    EXPECT_EQ(ranked[0].persona.id, 2u);
    EXPECT_NEAR(ranked[0].s, 0.98, 1e-12);
    EXPECT_EQ(ranked[1].persona.id, 1u);
    EXPECT_EQ(ranked[2].persona.id, 3u);
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        EXPECT_EQ(ranked[i].rank, i + 1);
    }
}

TEST(Prm, RankWcInvariants)
{
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<RankedCandidate> cs;
    for (std::size_t i = 0; i < 40; ++i) {
        cs.push_back(cand(i, u(rng), u(rng), u(rng)));
    }
    RetrievalConfig cfg;
    auto ranked = rank_wc(cs, cfg);
    std::set<std::size_t> ranks;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        const auto& c = ranked[i];
        EXPECT_EQ(c.s, cfg.alpha * c.r + cfg.beta * (1.0 - c.c) + cfg.gamma * c.e);
        if (i > 0) {
            EXPECT_GE(ranked[i - 1].s, c.s);
        }
        ranks.insert(c.rank);
    }
    EXPECT_EQ(ranks.size(), 40u);
    EXPECT_EQ(*ranks.begin(), 1u);
    EXPECT_EQ(*ranks.rbegin(), 40u);

    // Scaling every weight by a positive constant scales s and keeps the permutation.
    RetrievalConfig scaled = cfg;
    scaled.alpha *= 3.5;
    scaled.beta *= 3.5;
    scaled.gamma *= 3.5;
    auto again = rank_wc(cs, scaled);
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        EXPECT_EQ(again[i].persona.id, ranked[i].persona.id);
    }

    // beta = gamma = 0 collapses to ordering by r alone.
    RetrievalConfig r_only = cfg;
    r_only.beta = 0;
    r_only.gamma = 0;
    auto by_wc = rank_wc(cs, r_only);
    auto by_r = cs;
    std::stable_sort(by_r.begin(), by_r.end(), [](const auto& a, const auto& b) {
        return a.r != b.r ? a.r > b.r : a.persona.id < b.persona.id;
    });
    for (std::size_t i = 0; i < cs.size(); ++i) {
        EXPECT_EQ(by_wc[i].persona.id, by_r[i].persona.id);
    }
}

// Top ten by r drops ids 10 and 11; the three lowest c among the rest are 2 (0.05), then 4 and
// 6 tied at 0.10 (both kept, 9 at 0.30 is out); highest e among {2, 4, 6} is 6.
TEST(Prm, RankHrHandTrace)
{
    std::vector<RankedCandidate> cs{
        cand(0, 0.95, 1.0, 0.9), cand(1, 0.90, 0.5, 0.8), cand(2, 0.85, 0.2, 0.05), cand(3, 0.80, 0.1, 0.7),
        cand(4, 0.75, 0.6, 0.1), cand(5, 0.70, 0.3, 0.6),  cand(6, 0.65, 0.9, 0.1),  cand(7, 0.60, 0.4, 0.5),
        cand(8, 0.55, 0.2, 0.4), cand(9, 0.50, 0.95, 0.3), cand(10, 0.10, 1.0, 0.0), cand(11, 0.05, 1.0, 0.0)};
    RetrievalConfig cfg;
    cfg.strategy = Strategy::nli_hr;
    EXPECT_EQ(rank_hr(cs, cfg).id, 6u);
    auto order = rank_hr_order(cs, cfg);
    EXPECT_EQ(order[0].persona.id, 6u);
    EXPECT_EQ(order[1].persona.id, 4u);
    EXPECT_EQ(order[2].persona.id, 2u);
    EXPECT_EQ(rank_hr({cand(5, 0.1, 0.1, 0.9)}, cfg).id, 5u);
    EXPECT_THROW(rank_hr({}, cfg), RetrievalError);
}

TEST(Prm, RankHrWinnerInsidePools)
{
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    RetrievalConfig cfg;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<RankedCandidate> cs;
        std::size_t n = 1 + trial % 25;
        for (std::size_t i = 0; i < n; ++i) {
            // Coarse values force plenty of ties.
            cs.push_back(cand(i, std::round(u(rng) * 4) / 4, std::round(u(rng) * 4) / 4, std::round(u(rng) * 4) / 4));
        }
        auto win = rank_hr(cs, cfg);
        auto by_r = cs;
        std::stable_sort(by_r.begin(), by_r.end(), [](const auto& a, const auto& b) {
            return a.r != b.r ? a.r > b.r : a.persona.id < b.persona.id;
        });
        by_r.resize(std::min<std::size_t>(10, by_r.size()));
        std::stable_sort(by_r.begin(), by_r.end(), [](const auto& a, const auto& b) {
            return a.c != b.c ? a.c < b.c : a.persona.id < b.persona.id;
        });
        by_r.resize(std::min<std::size_t>(3, by_r.size()));
        auto best = *std::min_element(by_r.begin(), by_r.end(), [](const auto& a, const auto& b) {
            return a.e != b.e ? a.e > b.e : a.persona.id < b.persona.id;
        });
        EXPECT_EQ(win.id, best.persona.id);
    }
}

TEST(Prm, RetrieveDispatch)
{
    StubScores st;
    auto coll = collection_of({"candidate a", "candidate b", "candidate c", "candidate d"});
    // A: very relevant but conflicting; B: slightly less relevant, no conflict.
    st.r = {{"candidate a", 0.95}, {"candidate b", 0.9}, {"candidate c", 0.2}, {"candidate d", 0.99}};
    st.v = {{"candidate a", {0.1, 0.1, 0.8}},
            {"candidate b", {0.3, 0.7, 0.0}},
            {"candidate c", {0.0, 1.0, 0.0}},
            {"candidate d", {0.0, 0.05, 0.95}}};
    auto profile = Profile::from_sentences({"predefined one"});
    RetrievalConfig cfg;
    cfg.strategy = Strategy::classify_sp;
    auto sp = retrieve(tok("q ?"), profile, coll, cfg, {st, st});
    EXPECT_EQ(sp.chosen.str(), "candidate d");
    cfg.strategy = Strategy::nli_wc;
    auto wc = retrieve(tok("q ?"), profile, coll, cfg, {st, st});
    EXPECT_EQ(wc.chosen.str(), "candidate b");
    auto pos = [&](const std::string& s) {
        for (const auto& c : wc.ranked) {
            if (c.persona.str() == s) {
                return c.rank;
            }
        }
        return std::size_t{0};
    };
    EXPECT_LT(pos("candidate b"), pos("candidate a"));
    cfg.strategy = Strategy::nli_hr;
    EXPECT_EQ(retrieve(tok("q ?"), profile, coll, cfg, {st, st}).chosen.str(), "candidate b");
    cfg.strategy = Strategy::bm25;
    EXPECT_THROW(retrieve(tok("q ?"), profile, coll, cfg, {st, st}), ArgumentError);
}

TEST(Prm, Bm25StrategyIsArgMax)
{
    scoring::LexicalBackend lex;
    auto coll = collection_of({"i like jazz music", "i play guitar", "music is my life", "i like pizza",
                               "i play jazz guitar at night"});
    scoring::Bm25Index idx(coll);
    auto profile = Profile::from_sentences({"i am a student"});
    auto q = tok("do you play jazz guitar ?");
    RetrievalConfig cfg;
    cfg.strategy = Strategy::bm25;
    auto res = retrieve(q, profile, coll, cfg, {lex, lex, &idx});
    std::size_t best = 0;
    for (std::size_t i = 1; i < coll.size(); ++i) {
        if (idx.score(q, i) > idx.score(q, best)) {
            best = i;
        }
    }
    EXPECT_EQ(res.chosen.id, best);
}

TEST(Prm, NeverReturnsProfilePersona)
{
    scoring::LexicalBackend lex;
    auto coll = collection_of({"i have two cats", "i love cats", "i have two dogs", "cats are great"});
    auto profile = Profile::from_sentences({"i have two cats", "i love cats"});
    for (auto s : {Strategy::classify_sp, Strategy::nli_hr, Strategy::nli_wc}) {
        RetrievalConfig cfg;
        cfg.strategy = s;
        auto res = retrieve(tok("do you have two cats ?"), profile, coll, cfg, {lex, lex});
        EXPECT_FALSE(profile.contains(res.chosen.str()));
        for (const auto& c : res.ranked) {
            EXPECT_FALSE(profile.contains(c.persona.str()));
        }
    }
}
