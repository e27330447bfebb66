#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "lemol/maddpg.hpp"

namespace lemol::maddpg {
namespace {

Tensor rand_matrix(std::size_t r, std::size_t c, Rng& rng, double lim = 1.0) { return uniform_init({r, c}, lim, rng); }

Tensor rand_simplex(std::size_t r, std::size_t c, Rng& rng) {
    Tensor t = ops::softmax_rows(rand_matrix(r, c, rng, 2.0));
    return t;
}

CriticContext central_ctx(std::size_t B, Rng& rng) {
    return {rand_matrix(B, 8, rng), rand_matrix(B, 8, rng), rand_simplex(B, 5, rng)};
}

TEST(Act, EvalIsDeterministicAndOnSimplex) {
    Rng rng(1);
    Policy p = Policy::make("pi", 8, {16, 16}, 5, rng);
    Vec obs(8, 0.3);
    Vec a = act(p, obs, ActMode::eval, rng);
    Vec b = act(p, obs, ActMode::eval, rng);
    EXPECT_EQ(a, b);
    double s = 0;
    for (double x : a) s += x;
    EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Act, ExploreIsUniformOverOneHots) {
    Rng rng(2);
    Policy p = Policy::make("pi", 8, {4}, 5, rng);
    std::array<int, 5> count{};
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        Vec a = act(p, Vec(8, 0.0), ActMode::explore, rng);
        double s = 0;
        for (double x : a) s += x;
        ASSERT_EQ(s, 1.0);
        ++count[argmax(a)];
    }
    for (int c : count) EXPECT_NEAR(static_cast<double>(c) / n, 0.2, 0.01);
}

TEST(Act, LowTemperatureGumbelApproachesArgmax) {
    Rng rng(3);
    Policy p = Policy::make("pi", 8, {16}, 5, rng);
    // make one logit dominate
    p.params.value("pi.l1.b")[2] = 50.0;
    for (int i = 0; i < 100; ++i) {
        Vec a = act(p, Vec(8, 0.1), ActMode::train_noise, rng, 1e-3);
        EXPECT_NEAR(a[2], 1.0, 1e-9);
    }
}

TEST(Act, DimensionMismatch) {
    Rng rng(4);
    Policy p = Policy::make("pi", 8, {4}, 5, rng);
    EXPECT_THROW(act(p, Vec(7, 0.0), ActMode::eval, rng), ShapeError);
}

TargetPair tiny_targets(Rng& rng, bool centralised = true) {
    return {Policy::make("pi", 8, {3}, 5, rng), Critic::make("q", centralised, 8, 5, {3}, rng)};
}

TEST(QTarget, GammaZeroAndTerminalGiveReward) {
    Rng rng(5);
    TargetPair tg = tiny_targets(rng);
    CriticContext next = central_ctx(4, rng);
    Tensor r = Tensor::matrix(4, 1, {1, -2, 3, 0.5});
    Tensor y0 = q_target(r, Tensor::matrix(4, 1, {0, 0, 0, 0}), tg, next, next.obs, 0.0);
    EXPECT_EQ(y0.data(), r.data());
    Tensor yd = q_target(r, Tensor::matrix(4, 1, {1, 1, 1, 1}), tg, next, next.obs, 0.95);
    EXPECT_EQ(yd.data(), r.data());
}

TEST(QTarget, CentralisedNeedsOpponentObservation) {
    Rng rng(5);
    TargetPair tg = tiny_targets(rng);
    CriticContext next = central_ctx(2, rng);
    next.opp_obs.reset();
    EXPECT_THROW(q_target(Tensor::zeros({2, 1}), Tensor::zeros({2, 1}), tg, next, next.obs, 0.9),
                 std::invalid_argument);
}

// Independent forward pass over explicit loops.
double manual_mlp(const ParamStore& s, const MlpSpec& spec, const Vec& x_in) {
    Vec x = x_in;
    for (std::size_t l = 0; l < spec.layers(); ++l) {
        const Tensor& W = s.value(spec.weight(l));
        const Tensor& b = s.value(spec.bias(l));
        Vec y(W.cols());
        for (std::size_t o = 0; o < W.cols(); ++o) {
            double acc = b[o];
            for (std::size_t i = 0; i < W.rows(); ++i) acc += x[i] * W(i, o);
            y[o] = (l + 1 == spec.layers()) ? acc : std::max(0.0, acc);
        }
        x = y;
    }
    return x[0];
}

TEST(QTarget, MatchesHandComputation) {
    Rng rng(6);
    TargetPair tg = tiny_targets(rng);
    CriticContext next = central_ctx(2, rng);
    Tensor r = Tensor::matrix(2, 1, {0.7, -0.3});
    Tensor d = Tensor::matrix(2, 1, {0, 1});
    const double gamma = 0.9;
    Tensor y = q_target(r, d, tg, next, next.obs, gamma);
    for (std::size_t i = 0; i < 2; ++i) {
        // target policy softmax by hand
        Vec obs = next.obs.row_vec(i);
        Vec h(3);
        const Tensor& W0 = tg.policy.params.value("pi.l0.w");
        const Tensor& W1 = tg.policy.params.value("pi.l1.w");
        for (std::size_t o = 0; o < 3; ++o) {
            double acc = tg.policy.params.value("pi.l0.b")[o];
            for (std::size_t k = 0; k < 8; ++k) acc += obs[k] * W0(k, o);
            h[o] = std::max(0.0, acc);
        }
        Vec z(5);
        double zmax = -1e300, zs = 0;
        for (std::size_t o = 0; o < 5; ++o) {
            z[o] = tg.policy.params.value("pi.l1.b")[o];
            for (std::size_t k = 0; k < 3; ++k) z[o] += h[k] * W1(k, o);
            zmax = std::max(zmax, z[o]);
        }
        for (auto& v : z) zs += std::exp(v - zmax);
        Vec a(5);
        for (std::size_t o = 0; o < 5; ++o) a[o] = std::exp(z[o] - zmax) / zs;
        Vec in = obs;
        Vec oo = next.opp_obs->row_vec(i);
        in.insert(in.end(), oo.begin(), oo.end());
        in.insert(in.end(), a.begin(), a.end());
        Vec oa = next.opp_act.row_vec(i);
        in.insert(in.end(), oa.begin(), oa.end());
        const double q = manual_mlp(tg.critic.params, tg.critic.spec, in);
        EXPECT_NEAR(y[i], r[i] + (1 - d[i]) * gamma * q, 1e-12);
    }
}

TEST(QTarget, ConstantWithRespectToCriticParameters) {
    Rng rng(7);
    TargetPair tg = tiny_targets(rng);
    Critic main = Critic::make("q", true, 8, 5, {3}, rng);
    CriticContext next = central_ctx(3, rng);
    Tensor r = Tensor::matrix(3, 1, {1, 2, 3}), d = Tensor::zeros({3, 1});
    Tensor y1 = q_target(r, d, tg, next, next.obs, 0.9);
    Tensor q1 = q_values(main, next, next.opp_act);
    main.params.value("q.l1.b")[0] += 0.5;
    EXPECT_EQ(q_target(r, d, tg, next, next.obs, 0.9), y1);
    EXPECT_NE(q_values(main, next, next.opp_act), q1);
}

TEST(CriticUpdate, ZeroErrorLeavesParameters) {
    Rng rng(8);
    Critic c = Critic::make("q", true, 8, 5, {4}, rng);
    CriticContext ctx = central_ctx(5, rng);
    Tensor a = rand_simplex(5, 5, rng);
    Tensor y = q_values(c, ctx, a);
    ParamStore before = c.params;
    UpdateStats s = critic_update(c, ctx, a, y, AdamConfig{});
    EXPECT_EQ(s.loss, 0.0);
    for (const auto& [k, e] : c.params) {
        EXPECT_EQ(e.value, before.value(k));
        EXPECT_EQ(e.t, 1u);
    }
}

TEST(CriticUpdate, LossMatchesIndependentMeanSquaredError) {
    Rng rng(9);
    Critic c = Critic::make("q", true, 8, 5, {4}, rng);
    CriticContext ctx = central_ctx(6, rng);
    Tensor a = rand_simplex(6, 5, rng);
    Tensor y = rand_matrix(6, 1, rng);
    double expect = 0;
    for (std::size_t i = 0; i < 6; ++i) {
        Vec in = ctx.obs.row_vec(i);
        for (const Tensor* t : {&*ctx.opp_obs, &a, &ctx.opp_act}) {
            Vec row = t->row_vec(i);
            in.insert(in.end(), row.begin(), row.end());
        }
        const double e = manual_mlp(c.params, c.spec, in) - y[i];
        expect += e * e / 6.0;
    }
    EXPECT_NEAR(critic_update(c, ctx, a, y, AdamConfig{}).loss, expect, 1e-12);
}

TEST(CriticUpdate, RepeatedStepsReduceLoss) {
    Rng rng(10);
    Critic c = Critic::make("q", true, 8, 5, {16, 16}, rng);
    CriticContext ctx = central_ctx(32, rng);
    Tensor a = rand_simplex(32, 5, rng);
    Tensor y = rand_matrix(32, 1, rng);
    double prev = 1e300;
    for (int i = 0; i < 50; ++i) {
        const double loss = critic_update(c, ctx, a, y, AdamConfig{0.001, 0.9, 0.999, 1e-8}).loss;
        EXPECT_LT(loss, prev) << "step " << i;
        prev = loss;
    }
}

TEST(CriticUpdate, GammaZeroRegressionConverges) {
    Rng rng(11);
    Critic c = Critic::make("q", true, 8, 5, {64, 64}, rng);
    CriticContext ctx = central_ctx(16, rng);
    Tensor a = rand_simplex(16, 5, rng);
    Tensor r = rand_matrix(16, 1, rng);
    TargetPair tg = tiny_targets(rng);
    Tensor y = q_target(r, Tensor::zeros({16, 1}), tg, ctx, ctx.obs, 0.0);
    double loss = 1.0;
    for (int i = 0; i < 2000; ++i) loss = critic_update(c, ctx, a, y, AdamConfig{}).loss;
    EXPECT_LT(loss, 1e-3);
}

TEST(PolicyUpdate, ConstantCriticGivesZeroGradient) {
    Rng rng(12);
    Policy p = Policy::make("pi", 8, {8}, 5, rng);
    Critic c = Critic::make("q", true, 8, 5, {4}, rng);
    for (auto& [k, e] : c.params)
        for (double& x : e.value.data()) x = 0.0;
    c.params.value("q.l1.b")[0] = 3.0;
    CriticContext ctx = central_ctx(4, rng);
    Tape t;
    Bound pp(t, p.params, true);
    Var loss = policy_loss(t, pp, p, c, ctx, ctx.obs, rng, 1.0);
    EXPECT_EQ(loss.value().item(), -3.0);
    t.backward(loss);
    for (const auto& [k, g] : t.param_grads())
        for (double x : g.data()) EXPECT_EQ(x, 0.0) << k;
}

TEST(PolicyUpdate, RaisesProbabilityOfRewardedAction) {
    Rng rng(13);
    Policy p = Policy::make("pi", 8, {16}, 5, rng);
    Critic c = Critic::make("q", true, 8, 5, {}, rng);
    for (auto& [k, e] : c.params)
        for (double& x : e.value.data()) x = 0.0;
    c.params.value("q.l0.w")[16] = 1.0;  // own action, component 0
    CriticContext ctx = central_ctx(16, rng);
    auto prob0 = [&]() {
        Tape t;
        Bound b(t, p.params, false);
        Tensor pr = ops::softmax_rows(p.logits(b, t.constant(ctx.obs)).value());
        double s = 0;
        for (std::size_t i = 0; i < 16; ++i) s += pr(i, 0);
        return s / 16;
    };
    const double before = prob0();
    for (int i = 0; i < 20; ++i) policy_update(p, c, ctx, ctx.obs, rng, 1.0, AdamConfig{});
    EXPECT_GT(prob0(), before + 0.1);
}

TEST(PolicyUpdate, GradientMatchesFiniteDifferences) {
    Rng rng(14);
    Policy p = Policy::make("pi", 8, {6}, 5, rng);
    Critic c = Critic::make("q", true, 8, 5, {6}, rng);
    CriticContext ctx = central_ctx(3, rng);
    auto f = [&](Tape& t, Bound& pp) {
        Rng noise(99);  // same Gumbel draw on every evaluation
        return policy_loss(t, pp, p, c, ctx, ctx.obs, noise, 1.0);
    };
    EXPECT_LE(grad_check(f, p.params, 1e-5), 1e-4);
}

TEST(Updates, TouchOnlyTheirOwnNetwork) {
    Rng rng(15);
    Policy p = Policy::make("pi", 8, {6}, 5, rng);
    Critic c = Critic::make("q", true, 8, 5, {6}, rng);
    CriticContext ctx = central_ctx(8, rng);
    ParamStore c0 = c.params;
    UpdateStats ps = policy_update(p, c, ctx, ctx.obs, rng, 1.0, AdamConfig{});
    EXPECT_TRUE(c.params == c0);
    for (const auto& n : ps.updated) EXPECT_EQ(n.rfind("pi.", 0), 0u);
    ParamStore p0 = p.params;
    UpdateStats cs = critic_update(c, ctx, rand_simplex(8, 5, rng), rand_matrix(8, 1, rng), AdamConfig{});
    EXPECT_TRUE(p.params == p0);
    for (const auto& n : cs.updated) EXPECT_EQ(n.rfind("q.", 0), 0u);
}

TEST(SyncTargets, TauOneCopiesAndContractionOtherwise) {
    Rng rng(16);
    MaddpgAgent agent("att", 8, 5, TrainHyper{}, rng);
    TargetPair& tg = agent.targets();
    auto dist = [&]() {
        double d = 0;
        for (const auto& [k, e] : agent.policy().params) {
            const Tensor& t = tg.policy.params.value(k);
            for (std::size_t i = 0; i < t.size(); ++i) d += std::pow(t[i] - e.value[i], 2);
        }
        return std::sqrt(d);
    };
    EXPECT_NE(tg.policy.params.value("att.policy.l0.w"), agent.policy().params.value("att.policy.l0.w"));
    const double d0 = dist();
    sync_targets(agent.policy(), agent.critic(), tg, 0.01);
    EXPECT_NEAR(dist(), 0.99 * d0, 1e-12);
    sync_targets(agent.policy(), agent.critic(), tg, 1.0);
    EXPECT_EQ(dist(), 0.0);
}

}  // namespace
}  // namespace lemol::maddpg
