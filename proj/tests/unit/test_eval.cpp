#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <gtest/gtest.h>

#include "persona/eval.hpp"

using namespace persona;
using namespace persona::eval;

namespace {

Tokens tok(const char* s) { return text::tokenize(s); }

struct TableBackend final : scoring::NliBackend {
    std::map<std::string, scoring::NliVerdict> table;
    scoring::NliVerdict verdict(const Tokens& premise, const Tokens&) override { return table.at(text::join(premise)); }
    std::string name() const override { return "table"; }
};

}  // namespace

TEST(Metrics, EntailResponseIsMax)
{
    TableBackend t;
    t.table["a"] = {0.1, 0.9, 0.0};
    t.table["b"] = {0.6, 0.1, 0.3};
    t.table["c"] = {0.3, 0.2, 0.5};
    auto c = entail_response(Profile::from_sentences({"a", "b", "c"}), tok("x"), t);
    EXPECT_DOUBLE_EQ(c.entail, 0.6);
    EXPECT_DOUBLE_EQ(c.conflict, 0.5);
    EXPECT_THROW(entail_response(Profile{}, tok("x"), t), ArgumentError);
}

TEST(Metrics, EntailResponseBruteForce)
{
    scoring::LexicalBackend nli("eval");
    std::vector<std::string> pool{"i have two cats", "i like to ski", "i don't eat meat", "i am a nurse",
                                  "my car is red"};
    std::vector<Tokens> responses{tok("i have two cats at home"), tok("i eat meat daily"), tok("i am a nurse"),
                                  tok("hello there")};
    for (unsigned mask = 1; mask < 32; ++mask) {
        std::vector<std::string> members;
        for (std::size_t i = 0; i < 5; ++i) {
            if (mask & (1u << i)) {
                members.push_back(pool[i]);
            }
        }
        auto prof = Profile::from_sentences(members);
        for (const auto& r : responses) {
            double e = 0;
            double k = 0;
            for (const auto& m : members) {
                auto v = nli.verdict(text::tokenize(m), r);
                e = std::max(e, v.entail);
                k = std::max(k, v.contradict);
            }
            auto got = entail_response(prof, r, nli);
            EXPECT_DOUBLE_EQ(got.entail, e);
            EXPECT_DOUBLE_EQ(got.conflict, k);
        }
    }
    auto self = entail_response(Profile::from_sentences({"i am a nurse"}), tok("i am a nurse"), nli);
    EXPECT_DOUBLE_EQ(self.entail, 1.0);
}

// p1 = 5/5, p2 = 3/4, p3 = 1/3, p4 = (0 + 1) / (2 + 1); BP = exp(1 - 6/5).
TEST(Metrics, BleuHandComputed)
{
    double expect = std::exp(1.0 - 6.0 / 5.0) *
                    std::exp(0.25 * (std::log(1.0) + std::log(0.75) + std::log(1.0 / 3) + std::log(1.0 / 3)));
    EXPECT_NEAR(bleu(tok("the cat sat on the mat"), tok("the cat on the mat")), expect, 1e-12);
    EXPECT_NEAR(expect, 0.439892, 1e-6);
}

TEST(Metrics, BleuEdgeCases)
{
    EXPECT_DOUBLE_EQ(bleu(tok("i like cats a lot"), tok("i like cats a lot")), 1.0);
    EXPECT_DOUBLE_EQ(bleu(tok("i like cats"), tok("you hate dogs")), 0.0);
    EXPECT_DOUBLE_EQ(bleu(tok("i like cats"), {}), 0.0);
    EXPECT_THROW(corpus_bleu({tok("a")}, {}), ArgumentError);
    double b = corpus_bleu({tok("a b c d e"), tok("x y z")}, {tok("a b c"), tok("x y q z")});
    EXPECT_GT(b, 0.0);
    EXPECT_LT(b, 1.0);
}

TEST(Metrics, RougeLHandComputed)
{
    // LCS("a b c d", "a c d") = 3: P = 1, R = 3/4, F = (1 + 1.44) P R / (R + 1.44 P).
    EXPECT_EQ(lcs_length(tok("a b c d"), tok("a c d")), 3u);
    EXPECT_NEAR(rouge_l(tok("a b c d"), tok("a c d")), 2.44 * 0.75 / (0.75 + 1.44), 1e-12);
    EXPECT_NEAR(rouge_l(tok("a b c d"), tok("a c d")), 0.835616, 1e-6);
    EXPECT_DOUBLE_EQ(rouge_l(tok("i like cats"), tok("i like cats")), 1.0);
    EXPECT_DOUBLE_EQ(rouge_l(tok("a b"), tok("c d")), 0.0);
    EXPECT_DOUBLE_EQ(rouge_l({}, {}), 0.0);
}

// Three items; idf over references: a, b -> ln(3/2); c, d, e, f, g, "b c", "e f", ... -> ln 3.
//   item 1 (hyp = ref): cosine 1 for n = 1, 2, 3 and no 4-grams -> 10 * 3 / 4
//   item 2 ("a d" vs "a b d"): n = 1 cosine (x^2 + y^2) / (sqrt(x^2 + y^2) sqrt(2 x^2 + y^2)),
//     x = ln 1.5, y = ln 3; "a d" is not a reference bigram -> 0
//   item 3 ("e f" vs "e f g"): n = 1 cosine 2 / sqrt(6), n = 2 cosine 1 / sqrt(2)
TEST(Metrics, CiderHandComputed)
{
    double x = std::log(1.5);
    double y = std::log(3.0);
    double item1 = 10.0 * 3.0 / 4.0;
    double item2 = 10.0 * ((x * x + y * y) / (std::sqrt(x * x + y * y) * std::sqrt(2 * x * x + y * y))) / 4.0;
    double item3 = 10.0 * (2.0 / std::sqrt(6.0) + 1.0 / std::sqrt(2.0)) / 4.0;
    double expect = (item1 + item2 + item3) / 3.0;
    double got = cider({tok("a b c"), tok("a b d"), tok("e f g")}, {tok("a b c"), tok("a d"), tok("e f")});
    EXPECT_NEAR(got, expect, 1e-12);
    EXPECT_NEAR(got, 4.557137, 1e-6);
}

TEST(Metrics, CiderEdgeCases)
{
    std::vector<Tokens> refs{tok("i like red cats a lot"), tok("you swim in blue lakes daily"),
                             tok("we bake fresh bread every sunday")};
    double same = cider(refs, refs);
    EXPECT_NEAR(same, 10.0, 1e-12);
    std::vector<Tokens> other{tok("zzz"), tok("yyy"), tok("xxx")};
    EXPECT_DOUBLE_EQ(cider(refs, other), 0.0);
    EXPECT_GE(same, cider(refs, {refs[0], refs[0], refs[1]}));
    EXPECT_THROW(cider({refs[0]}, {refs[0]}), ArgumentError);
}

TEST(Metrics, DcgAt3)
{
    EXPECT_DOUBLE_EQ(dcg_at_3({0, 0, 0}), 0.0);
    EXPECT_NEAR(dcg_at_3({2, 1, 0}), 3.0 + 1.0 / std::log2(3.0), 1e-12);
    EXPECT_NEAR(dcg_at_3({2, 1, 0}), 3.630930, 1e-6);
    EXPECT_NEAR(dcg_at_3({2, 2, 2}), 6.392789, 1e-6);
    EXPECT_THROW(dcg_at_3({1, 1}), ArgumentError);
    EXPECT_THROW(dcg_at_3({1, 1, 1, 1}), ArgumentError);
}

TEST(Metrics, DcgMonotoneAndSortedIsBest)
{
    for (int a = 0; a <= 2; ++a) {
        for (int b = 0; b <= 2; ++b) {
            for (int c = 0; c <= 2; ++c) {
                std::vector<int> g{a, b, c};
                double base = dcg_at_3(g);
                for (std::size_t i = 0; i < 3; ++i) {
                    if (g[i] < 2) {
                        auto h = g;
                        ++h[i];
                        EXPECT_GE(dcg_at_3(h), base);
                    }
                }
                auto sorted = g;
                std::sort(sorted.rbegin(), sorted.rend());
                auto perm = g;
                std::sort(perm.begin(), perm.end());
                do {
                    EXPECT_GE(dcg_at_3(sorted) + 1e-12, dcg_at_3(perm));
                } while (std::next_permutation(perm.begin(), perm.end()));
            }
        }
    }
}

TEST(Metrics, MeanDcgFromAnnotations)
{
    std::vector<AnnotationRecord> recs{{"q1", 1, true, 2, 1}, {"q1", 2, false, 2, 1}, {"q1", 3, true, 1, 0},
                                       {"q2", 2, true, 2, 1}};
    double q1 = 3.0 + 0.0 + 1.0 / 2.0;
    double q2 = 3.0 / std::log2(3.0);
    EXPECT_NEAR(mean_dcg_at_3(recs), (q1 + q2) / 2, 1e-12);
    EXPECT_THROW(mean_dcg_at_3({{"q", 1, true, 3, 0}}), ArgumentError);
    EXPECT_THROW(mean_dcg_at_3({}), ArgumentError);
}

TEST(Metrics, EvaluateRunAggregates)
{
    scoring::LexicalBackend nli("eval");
    std::vector<Tokens> refs;
    std::vector<Tokens> preds;
    std::vector<Profile> profiles;
    const char* r[] = {"i have two cats", "i like to ski in winter", "i work as a nurse", "my car is red",
                       "i eat pizza on fridays", "i play the guitar", "i live near the sea", "i read books daily",
                       "i have a brother", "i run every morning"};
    const char* p[] = {"i have two dogs", "i like to ski", "i work as a nurse", "my bike is red", "i eat pizza",
                       "you play the drums", "i live near the sea", "books are fun", "i have no brother",
                       "i run"};
    for (int i = 0; i < 10; ++i) {
        refs.push_back(tok(r[i]));
        preds.push_back(tok(p[i]));
        profiles.push_back(Profile::from_sentences({r[i], "i am tall"}));
    }
    auto rep = evaluate_run(preds, refs, profiles, nli);
    double e = 0;
    double c = 0;
    double rl = 0;
    for (int i = 0; i < 10; ++i) {
        auto k = entail_response(profiles[i], preds[i], nli);
        e += k.entail;
        c += k.conflict;
        rl += rouge_l(refs[i], preds[i]);
    }
    EXPECT_EQ(rep.n, 10u);
    EXPECT_NEAR(rep.entail, e / 10, 1e-12);
    EXPECT_NEAR(rep.conflict, c / 10, 1e-12);
    EXPECT_NEAR(rep.rouge_l, rl / 10, 1e-12);
    EXPECT_NEAR(rep.bleu, corpus_bleu(refs, preds), 1e-12);
    EXPECT_NEAR(rep.cider, cider(refs, preds), 1e-12);

    // Corpus metrics do not depend on example order.
    std::vector<std::size_t> order(10);
    std::iota(order.begin(), order.end(), 0);
    std::reverse(order.begin(), order.end());
    std::vector<Tokens> r2;
    std::vector<Tokens> p2;
    std::vector<Profile> f2;
    for (auto i : order) {
        r2.push_back(refs[i]);
        p2.push_back(preds[i]);
        f2.push_back(profiles[i]);
    }
    auto rep2 = evaluate_run(p2, r2, f2, nli);
    EXPECT_NEAR(rep2.bleu, rep.bleu, 1e-12);
    EXPECT_NEAR(rep2.cider, rep.cider, 1e-12);
    EXPECT_NEAR(rep2.entail, rep.entail, 1e-12);

    auto perfect = evaluate_run(refs, refs, profiles, nli);
    EXPECT_DOUBLE_EQ(perfect.bleu, 1.0);
    EXPECT_DOUBLE_EQ(perfect.rouge_l, 1.0);
    EXPECT_THROW(evaluate_run({}, {}, {}, nli), ArgumentError);
    EXPECT_THROW(evaluate_run(preds, {refs[0]}, profiles, nli), ArgumentError);
    auto j = rep.to_json();
    EXPECT_EQ(j.begin().key(), "entail");
    EXPECT_NE(rep.to_table().find("rouge_l"), std::string::npos);
}
