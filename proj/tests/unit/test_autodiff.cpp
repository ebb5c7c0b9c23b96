#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "persona/autodiff.hpp"

using namespace persona::ad;

namespace {

using Build = std::function<Var(Tape&)>;

// Compares every parameter coordinate against a central difference of the scalar graph.
void expect_gradients_match(ParameterSet& params, const Build& build, double tol = 1e-6)
{
    params.zero_grad();
    {
        Tape t(&params);
        t.backward(build(t));
    }
    const double h = 1e-6;
    for (const auto& name : params.names()) {
        auto& v = params.value(name);
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            double orig = v.data()[i];
            v.data()[i] = orig + h;
            Tape tp(&params);
            double up = tp.item(build(tp));
            v.data()[i] = orig - h;
            Tape tm(&params);
            double down = tm.item(build(tm));
            v.data()[i] = orig;
            double numeric = (up - down) / (2 * h);
            double analytic = params.grad(name).data()[i];
            double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            EXPECT_LT(std::abs(numeric - analytic) / denom, tol) << name << "[" << i << "]";
        }
    }
}

ParameterSet random_params(std::initializer_list<std::tuple<const char*, int, int>> shapes, unsigned seed = 3)
{
    std::mt19937_64 rng(seed);
    ParameterSet p;
    for (auto [name, r, c] : shapes) {
        p.add(name, gaussian(r, c, 0.7, rng));
    }
    return p;
}

}  // namespace

TEST(Autodiff, MatmulAndBroadcast)
{
    auto p = random_params({{"a", 3, 4}, {"b", 4, 2}, {"bias", 1, 2}});
    expect_gradients_match(p, [](Tape& t) {
        auto y = t.add_row(t.matmul(t.param("a"), t.param("b")), t.param("bias"));
        return t.sum(t.hadamard(y, y));
    });
}

TEST(Autodiff, MatmulTransposed)
{
    auto p = random_params({{"a", 3, 4}, {"b", 5, 4}});
    expect_gradients_match(p, [](Tape& t) {
        auto y = t.matmul_nt(t.param("a"), t.param("b"));
        return t.sum(t.tanh(y));
    });
}

TEST(Autodiff, Nonlinearities)
{
    auto p = random_params({{"x", 2, 5}});
    expect_gradients_match(p, [](Tape& t) {
        auto x = t.param("x");
        return t.add_n({t.sum(t.sigmoid(x)), t.sum(t.gelu(x)), t.sum(t.hadamard(t.abs(x), x))});
    });
}

TEST(Autodiff, RowsStackGatherMean)
{
    auto p = random_params({{"x", 4, 3}, {"y", 2, 3}, {"z", 4, 2}});
    expect_gradients_match(p, [](Tape& t) {
        auto x = t.param("x");
        auto v = t.vstack({t.rows(x, 1, 2), t.param("y")});
        auto h = t.hstack({x, t.param("z")});
        auto g = t.gather_rows(x, {0, 2, 2, 3});
        auto m = t.mean_rows(t.hadamard(v, g));
        return t.add(t.sum(t.tanh(m)), t.sum(t.sigmoid(h)));
    });
}

TEST(Autodiff, ScaleByAndSub)
{
    auto p = random_params({{"x", 2, 3}, {"s", 1, 1}, {"y", 2, 3}});
    expect_gradients_match(p, [](Tape& t) {
        auto a = t.scale_by(t.param("x"), t.param("s"));
        return t.sum(t.tanh(t.sub(t.scale(a, 1.7), t.param("y"))));
    });
}

TEST(Autodiff, LayerNorm)
{
    auto p = random_params({{"x", 3, 6}, {"g", 1, 6}, {"b", 1, 6}, {"w", 3, 6}});
    expect_gradients_match(p, [](Tape& t) {
        auto y = t.layer_norm(t.param("x"), t.param("g"), t.param("b"));
        return t.sum(t.hadamard(y, t.param("w")));
    }, 1e-5);
}

TEST(Autodiff, MaskedMultiHeadAttention)
{
    auto p = random_params({{"q", 3, 4}, {"k", 5, 4}, {"v", 5, 4}, {"w", 3, 4}});
    Mask mask = Mask::Constant(3, 5, true);
    mask(0, 4) = false;
    mask(1, 0) = false;
    expect_gradients_match(p, [&](Tape& t) {
        auto y = t.attention(t.param("q"), t.param("k"), t.param("v"), 2, &mask);
        return t.sum(t.hadamard(y, t.param("w")));
    });
}

TEST(Autodiff, CrossEntropyBceCosine)
{
    auto p = random_params({{"logits", 3, 5}, {"z", 1, 1}, {"a", 1, 4}, {"b", 1, 4}});
    expect_gradients_match(p, [](Tape& t) {
        auto ce = t.cross_entropy(t.param("logits"), {1, 4, 0});
        auto bce = t.bce_with_logits(t.param("z"), 1.0);
        auto cs = t.cosine(t.param("a"), t.param("b"));
        return t.add_n({ce, bce, cs});
    });
}

TEST(Autodiff, DetachBlocksGradient)
{
    auto p = random_params({{"x", 1, 3}});
    p.zero_grad();
    Tape t(&p);
    auto y = t.sum(t.detach(t.param("x")));
    t.backward(y);
    EXPECT_EQ(p.grad("x").norm(), 0.0);
}

TEST(Autodiff, BceAtHalfAgainstPositiveIsLn2)
{
    Tape t;
    EXPECT_NEAR(t.item(t.bce_with_logits(t.scalar_constant(0.0), 1.0)), 0.693147, 1e-6);
}

TEST(Autodiff, CrossEntropyMatchesLogSoftmax)
{
    Tape t;
    Matrix l(1, 3);
    l << 1.0, 2.0, 3.0;
    double expect = -(1.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
    EXPECT_NEAR(t.item(t.cross_entropy(t.constant(l), {0})), expect, 1e-12);
}

TEST(Autodiff, AdamWithZeroLearningRateLeavesParameters)
{
    auto p = random_params({{"x", 2, 2}});
    Matrix before = p.value("x");
    p.zero_grad();
    {
        Tape t(&p);
        t.backward(t.sum(t.hadamard(t.param("x"), t.param("x"))));
    }
    Adam opt({.lr = 0.0});
    opt.step(p);
    EXPECT_EQ(p.value("x"), before);
}

TEST(Autodiff, AdamClipsGlobalNorm)
{
    ParameterSet p;
    p.add("x", Matrix::Zero(1, 2));
    p.grad("x") << 30.0, 40.0;
    Adam opt({.lr = 0.1, .clip_norm = 1.0});
    EXPECT_DOUBLE_EQ(opt.step(p), 50.0);
}
