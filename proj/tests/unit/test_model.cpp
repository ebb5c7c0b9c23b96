#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "persona/generator.hpp"

using namespace persona;
using namespace persona::model;

namespace {

ModelConfig small_config(int vocab = 24)
{
    ModelConfig c;
    c.vocab_size = vocab;
    c.embed_dim = 16;
    c.layers = 2;
    c.heads = 2;
    c.scorer_heads = 2;
    c.max_len = 8;
    c.max_personas = 4;
    c.max_decode_len = 10;
    c.seed = 11;
    return c;
}

EncodedExample fixture_example()
{
    EncodedExample ex;
    ex.personas = {{4, 5, 6}, {7, 8, 9, 10, 11}, {12, 13}};
    ex.query = {14, 15, 16, 17};
    ex.response = {5, 6, 18, 19, 20};
    ex.labels = {1, 0, 0};
    return ex;
}

double loss_value(const GeneratorModel& m, const EncodedExample& ex, int which, const LossOptions& o)
{
    auto l = compute_losses(m, ex, o);
    double v[] = {l.l1, l.l2, l.l3, l.total};
    return v[which];
}

}  // namespace

TEST(Model, ConfigValidation)
{
    auto c = small_config();
    c.heads = 3;
    EXPECT_THROW(c.validate(), ArgumentError);
    c = small_config();
    c.embed_dim = 0;
    EXPECT_THROW(c.validate(), ArgumentError);
}

TEST(Model, SeedReproducibleParameters)
{
    GeneratorModel a(small_config());
    GeneratorModel b(small_config());
    for (const auto& n : a.params().names()) {
        EXPECT_EQ(a.params().value(n), b.params().value(n)) << n;
    }
    EXPECT_GT(a.params().count(), 0u);
}

// Analytic gradients of each loss term vs central differences on 20 sampled coordinates.
TEST(Model, GradientCheckAllLosses)
{
    GeneratorModel m(small_config());
    auto ex = fixture_example();
    LossOptions opts;
    std::mt19937_64 rng(5);
    const auto& names = m.params().names();
    for (int which = 0; which < 4; ++which) {
        m.params().zero_grad();
        {
            ad::Tape t(&m.params());
            auto g = build_losses(t, m, ex, opts);
            ad::Var v[] = {g.l1, g.l2, g.l3, g.total};
            t.backward(v[which]);
        }
        std::uniform_int_distribution<std::size_t> pick_name(0, names.size() - 1);
        for (int k = 0; k < 20; ++k) {
            const auto& name = names[pick_name(rng)];
            auto& value = m.params().value(name);
            std::uniform_int_distribution<Eigen::Index> pick(0, value.size() - 1);
            auto i = pick(rng);
            double analytic = m.params().grad(name).data()[i];
            double orig = value.data()[i];
            const double h = 1e-5;
            value.data()[i] = orig + h;
            double up = loss_value(m, ex, which, opts);
            value.data()[i] = orig - h;
            double down = loss_value(m, ex, which, opts);
            value.data()[i] = orig;
            double numeric = (up - down) / (2 * h);
            double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
            EXPECT_LT(rel, 1e-4) << "loss " << which << " " << name << "[" << i << "] analytic " << analytic
                                 << " numeric " << numeric;
        }
    }
}

TEST(Model, LossBreakdownInvariants)
{
    GeneratorModel m(small_config());
    auto ex = fixture_example();
    LossOptions opts{.lambda1 = 0.5, .lambda2 = 2.0};
    auto l = compute_losses(m, ex, opts);
    EXPECT_GE(l.l1, 0.0);
    EXPECT_GE(l.l3, 0.0);
    EXPECT_GE(l.l2, 0.0);
    EXPECT_LE(l.l2, 2.0);
    EXPECT_NEAR(l.total, l.l3 + 0.5 * l.l1 + 2.0 * l.l2, 1e-12);
}

TEST(Model, MissingLabelsRejected)
{
    GeneratorModel m(small_config());
    auto ex = fixture_example();
    ex.labels.clear();
    EXPECT_THROW(compute_losses(m, ex), ArgumentError);
}

TEST(Model, CopiedPosteriorHeadGivesZeroCosineLoss)
{
    GeneratorModel m(small_config());
    m.copy_posterior_to_prior();
    auto ex = fixture_example();
    ex.response = ex.query;  // E_G coincides with E_Q apart from the segment embedding
    // Make the segment embeddings coincide too so the inputs are identical.
    m.params().value("seg_emb").row(2) = m.params().value("seg_emb").row(1);
    EXPECT_NEAR(compute_losses(m, ex).l2, 0.0, 1e-12);
}

TEST(Model, AblationsDropScorerTerms)
{
    GeneratorModel m(small_config());
    auto ex = fixture_example();
    auto nos = compute_losses(m, ex, {.ablation = Ablation::no_scorer});
    EXPECT_EQ(nos.l1, 0.0);
    EXPECT_EQ(nos.l2, 0.0);
    EXPECT_DOUBLE_EQ(nos.total, nos.l3);
    auto nop = compute_losses(m, ex, {.ablation = Ablation::no_posterior});
    EXPECT_GT(nop.l1, 0.0);
    EXPECT_EQ(nop.l2, 0.0);
}

TEST(Model, EmptyPrefixGivesHEqualE)
{
    GeneratorModel m(small_config());
    auto ex = fixture_example();
    auto enc = encode_segments(m, ex.personas, ex.query, {});
    for (std::size_t i = 0; i < ex.personas.size(); ++i) {
        const auto& s = enc.personas[i];
        EXPECT_EQ(s.E.rows(), static_cast<Eigen::Index>(ex.personas[i].size()));
        EXPECT_EQ(s.E.cols(), 16);
        EXPECT_TRUE(s.E.allFinite());
        EXPECT_TRUE((s.H - s.E).cwiseAbs().maxCoeff() < 1e-12);
    }
    EXPECT_TRUE((enc.query.H - enc.query.E).cwiseAbs().maxCoeff() < 1e-12);
}

TEST(Model, NonEmptyPrefixChangesH)
{
    GeneratorModel m(small_config());
    auto ex = fixture_example();
    auto enc = encode_segments(m, ex.personas, ex.query, {5, 6});
    EXPECT_GT((enc.query.H - enc.query.E).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_EQ(enc.query.H.rows(), 4);
    EXPECT_EQ(enc.query.H_padded.rows(), 8);
}

TEST(Model, PersonaPermutationEquivariance)
{
    GeneratorModel m(small_config());
    auto ex = fixture_example();
    std::vector<std::size_t> perm{2, 0, 1};
    std::vector<std::vector<int>> permuted;
    for (auto i : perm) {
        permuted.push_back(ex.personas[i]);
    }
    auto a = persona_weights(m, ex.personas, ex.query, ex.response);
    auto b = persona_weights(m, permuted, ex.query, ex.response);
    for (std::size_t k = 0; k < perm.size(); ++k) {
        EXPECT_NEAR(b.w_pri[k], a.w_pri[perm[k]], 1e-12);
        EXPECT_NEAR(b.w_post[k], a.w_post[perm[k]], 1e-12);
    }
    std::vector<int> prefix{5, 6};
    auto ea = encode_segments(m, ex.personas, ex.query, prefix);
    auto eb = encode_segments(m, permuted, ex.query, prefix);
    for (std::size_t k = 0; k < perm.size(); ++k) {
        EXPECT_LT((eb.personas[k].H_padded - ea.personas[perm[k]].H_padded).cwiseAbs().maxCoeff(), 1e-12);
    }
    std::vector<Matrix> ha;
    std::vector<Matrix> hb;
    for (std::size_t k = 0; k < perm.size(); ++k) {
        ha.push_back(ea.personas[k].H_padded);
        hb.push_back(eb.personas[k].H_padded);
    }
    auto hpa = fuse_personas(ha, a.w_pri);
    auto hpb = fuse_personas(hb, b.w_pri);
    EXPECT_LT((hpa - hpb).cwiseAbs().maxCoeff(), 1e-9);
    auto da = decode_step(m, ea.query.H_padded, hpa, ea.prefix);
    auto db = decode_step(m, eb.query.H_padded, hpb, eb.prefix);
    EXPECT_LT((da - db).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Model, WeightsStrictlyInsideUnitInterval)
{
    GeneratorModel m(small_config());
    auto ex = fixture_example();
    auto enc = encode_segments(m, ex.personas, ex.query, {});
    for (double scale : {0.01, 1.0, 100.0}) {
        for (auto mode : {ScorerMode::prior, ScorerMode::posterior}) {
            auto s = persona_attention(m, enc.personas[0].E, enc.query.E * scale, mode);
            EXPECT_GT(s.weight, 0.0);
            EXPECT_LT(s.weight, 1.0);
            EXPECT_TRUE(s.attention.allFinite());
            EXPECT_EQ(s.attention.size(), 16);
        }
    }
}

TEST(Model, PersonaAttentionDeterministic)
{
    GeneratorModel m(small_config());
    auto ex = fixture_example();
    auto enc = encode_segments(m, ex.personas, ex.query, {});
    auto a = persona_attention(m, enc.personas[1].E, enc.query.E, ScorerMode::prior);
    auto b = persona_attention(m, enc.personas[1].E, enc.query.E, ScorerMode::prior);
    EXPECT_EQ(a.weight, b.weight);
    EXPECT_EQ(a.attention, b.attention);
}

TEST(Model, FusePersonasHandArithmetic)
{
    Matrix a(2, 2);
    a << 1, 2, 3, 4;
    Matrix b(2, 2);
    b << 10, 20, 30, 40;
    Matrix expect(2, 2);
    expect << 0.3 * 1 + 0.7 * 10, 0.3 * 2 + 0.7 * 20, 0.3 * 3 + 0.7 * 30, 0.3 * 4 + 0.7 * 40;
    EXPECT_LT((fuse_personas({a, b}, {0.3, 0.7}) - expect).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(fuse_personas({a, b}, {0.0, 1.0}), b);
    EXPECT_EQ(fuse_personas({a, b}, {0.0, 0.0}), Matrix::Zero(2, 2));
    EXPECT_THROW(fuse_personas({a, b}, {1.0}), ArgumentError);
}

TEST(Model, DecodeStepIsDistribution)
{
    GeneratorModel m(small_config());
    std::mt19937_64 rng(2);
    for (int k = 0; k < 5; ++k) {
        Matrix q = ad::gaussian(8, 16, 1.0, rng);
        Matrix p = ad::gaussian(8, 16, 1.0, rng);
        Matrix g = ad::gaussian(3, 16, 1.0, rng);
        auto dist = decode_step(m, q, p, g);
        EXPECT_EQ(dist.size(), 24);
        EXPECT_GE(dist.minCoeff(), 0.0);
        EXPECT_NEAR(dist.sum(), 1.0, 1e-6);
    }
    Matrix same = ad::gaussian(8, 16, 1.0, rng);
    auto from_same = decode_step(m, same, same, same);
    Matrix logits = same.row(7) * m.params().value("tok_emb").transpose();
    RowVector z = (logits.row(0).array() - logits.maxCoeff()).exp();
    EXPECT_LT((from_same - z / z.sum()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_THROW(decode_step(m, same, Matrix::Zero(7, 16), same), std::logic_error);
}

// The matrix-level inference path and the per-row training path give the same distribution.
TEST(Model, DecodeStepAgreesWithTeacherForcedPath)
{
    GeneratorModel m(small_config());
    auto ex = fixture_example();
    for (std::size_t t = 0; t <= ex.response.size(); ++t) {
        std::vector<int> prefix(ex.response.begin(), ex.response.begin() + static_cast<std::ptrdiff_t>(t));
        auto enc = encode_segments(m, ex.personas, ex.query, prefix);
        auto w = persona_weights(m, ex.personas, ex.query);
        std::vector<Matrix> hs;
        for (const auto& s : enc.personas) {
            hs.push_back(s.H_padded);
        }
        auto dist = decode_step(m, enc.query.H_padded, fuse_personas(hs, w.w_pri), enc.prefix);

        ad::Tape tape(&m.params());
        std::vector<ad::Var> wv;
        for (double x : w.w_pri) {
            wv.push_back(tape.scalar_constant(x));
        }
        auto logits = tape.value(model::detail::next_logits(tape, m, ex.personas, ex.query, wv, prefix));
        EXPECT_LT((dist - model::detail::softmax(logits)).cwiseAbs().maxCoeff(), 1e-10) << "t=" << t;
    }
}

TEST(Model, TooManyOrZeroPersonasRejected)
{
    GeneratorModel m(small_config());
    auto ex = fixture_example();
    EXPECT_THROW(encode_segments(m, {}, ex.query, {}), ArgumentError);
    std::vector<std::vector<int>> many(5, std::vector<int>{4, 5});
    EXPECT_THROW(generate(m, many, ex.query), ArgumentError);
}

TEST(Model, OverlongSegmentTruncated)
{
    GeneratorModel m(small_config());
    std::vector<int> longq(12, 14);
    auto enc = encode_segments(m, {{4, 5}}, longq, {});
    EXPECT_EQ(enc.query.E.rows(), 8);
}

TEST(Model, GenerateRespectsMaxLength)
{
    GeneratorModel m(small_config());
    auto ex = fixture_example();
    auto g = generate(m, ex.personas, ex.query, {.max_len = 1});
    EXPECT_LE(g.ids.size(), 1u);
    EXPECT_EQ(g.w_pri.size(), 3u);
    auto u = generate(m, ex.personas, ex.query, {.max_len = 3, .uniform_weights = true});
    for (double w : u.w_pri) {
        EXPECT_DOUBLE_EQ(w, 1.0 / 3.0);
    }
    auto b = generate(m, ex.personas, ex.query, {.max_len = 4, .beam = 3});
    EXPECT_LE(b.ids.size(), 4u);
    EXPECT_THROW(generate(m, ex.personas, ex.query, {.beam = 5}), ArgumentError);
}

TEST(Model, TrainingIsSeedReproducibleAndLrZeroFreezes)
{
    auto ex = fixture_example();
    TrainConfig tc;
    tc.steps = 5;
    tc.seed = 3;
    GeneratorModel a(small_config());
    GeneratorModel b(small_config());
    auto ta = train(a, {ex, ex}, tc);
    auto tb = train(b, {ex, ex}, tc);
    ASSERT_EQ(ta.trace.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(ta.trace[i].total, tb.trace[i].total);
    }
    EXPECT_LT(ta.trace.back().total, ta.trace.front().total);

    GeneratorModel c(small_config());
    GeneratorModel before = c;
    tc.lr = 0.0;
    auto tr = train(c, {ex}, tc);
    for (const auto& n : c.params().names()) {
        EXPECT_EQ(c.params().value(n), before.params().value(n));
    }
    for (const auto& l : tr.trace) {
        EXPECT_EQ(l.total, tr.trace.front().total);
    }
}

TEST(Model, DivergenceReportsStep)
{
    GeneratorModel m(small_config());
    m.params().value("tok_emb")(4, 0) = std::numeric_limits<double>::quiet_NaN();
    TrainConfig tc;
    tc.steps = 3;
    try {
        train(m, {fixture_example()}, tc);
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_EQ(e.step(), 0u);
    }
}

TEST(Model, CheckpointRoundTrip)
{
    Checkpoint c{GeneratorModel(small_config()), Vocabulary{}, Ablation::no_posterior};
    for (int i = 4; i < 24; ++i) {
        c.vocab.add("w" + std::to_string(i));
    }
    auto j = nlohmann::json::parse(c.to_json().dump());
    auto back = Checkpoint::from_json(j);
    EXPECT_EQ(back.ablation, Ablation::no_posterior);
    EXPECT_EQ(back.vocab.tokens(), c.vocab.tokens());
    EXPECT_EQ(back.model.config(), c.model.config());
    for (const auto& n : c.model.params().names()) {
        EXPECT_EQ(back.model.params().value(n), c.model.params().value(n)) << n;
    }
}

TEST(Model, VocabularyRoundTrip)
{
    Vocabulary v;
    v.add_all({"i", "like", "cats"});
    auto ids = v.encode({"i", "like", "dogs"});
    EXPECT_EQ(ids[2], Vocabulary::unk);
    EXPECT_EQ(v.decode({4, 5, Vocabulary::eos, 6}), (Tokens{"i", "like"}));
    EXPECT_THROW(Vocabulary::from_tokens({"a"}), ArgumentError);
}
