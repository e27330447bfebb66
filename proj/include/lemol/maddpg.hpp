#ifndef LEMOL_MADDPG_HPP
#define LEMOL_MADDPG_HPP

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lemol/experience.hpp"
#include "lemol/nn.hpp"

namespace lemol::maddpg {

enum class ActMode { explore, train_noise, eval };

struct TrainHyper {
    double gamma = 0.95;
    AdamConfig adam{0.01, 0.9, 0.999, 1e-8};
    double tau = 0.01;
    std::size_t batch = 1024;
    int update_every = 25;
    int explore_episodes = 1024;
    std::size_t buffer_capacity = 1'000'000;
    double gumbel_temperature = 1.0;
    std::vector<std::size_t> hidden{64, 64};

    friend bool operator==(const TrainHyper&, const TrainHyper&) = default;
};

/// pi(input) -> action logits. The input is the observation, optionally
/// followed by a predicted opponent action.
struct Policy {
    MlpSpec spec;
    ParamStore params;

    static Policy make(const std::string& prefix, std::size_t input_dim, const std::vector<std::size_t>& hidden,
                       std::size_t actions, Rng& rng) {
        Policy p;
        p.spec.prefix = prefix;
        p.spec.sizes.push_back(input_dim);
        p.spec.sizes.insert(p.spec.sizes.end(), hidden.begin(), hidden.end());
        p.spec.sizes.push_back(actions);
        p.spec.init(p.params, rng);
        return p;
    }

    std::size_t input_dim() const { return spec.input_dim(); }
    std::size_t action_dim() const { return spec.output_dim(); }
    Var logits(Bound& b, Var input) const { return spec.forward(b, input); }
};

/// Q(obs, [opp_obs], act, opp_act) -> scalar. Centralised critics take the
/// opponent's observation, decentralised ones do not.
struct Critic {
    MlpSpec spec;
    ParamStore params;
    bool centralised = true;
    std::size_t obs_dim = 0;
    std::size_t act_dim = 0;

    static Critic make(const std::string& prefix, bool centralised, std::size_t obs_dim, std::size_t act_dim,
                       const std::vector<std::size_t>& hidden, Rng& rng) {
        Critic c;
        c.centralised = centralised;
        c.obs_dim = obs_dim;
        c.act_dim = act_dim;
        c.spec.prefix = prefix;
        c.spec.sizes.push_back(obs_dim * (centralised ? 2 : 1) + 2 * act_dim);
        c.spec.sizes.insert(c.spec.sizes.end(), hidden.begin(), hidden.end());
        c.spec.sizes.push_back(1);
        c.spec.init(c.params, rng);
        return c;
    }

    Var q(Bound& b, Var obs, std::optional<Var> opp_obs, Var act, Var opp_act) const {
        if (centralised != opp_obs.has_value())
            throw std::invalid_argument(centralised ? "centralised critic needs the opponent observation"
                                                    : "decentralised critic must not see the opponent observation");
        std::vector<Var> parts{obs};
        if (opp_obs) parts.push_back(*opp_obs);
        parts.push_back(act);
        parts.push_back(opp_act);
        return spec.forward(b, ops::concat_cols(parts));
    }
};

struct TargetPair {
    Policy policy;
    Critic critic;
};

/// Inputs of Q other than the acting agent's own action.
struct CriticContext {
    Tensor obs;
    std::optional<Tensor> opp_obs;
    Tensor opp_act;
};

struct UpdateStats {
    double loss = 0.0;
    std::vector<std::string> updated;  // parameter names that received a step
};

inline Tensor as_row_batch(const Vec& v) { return Tensor(Shape{1, v.size()}, v); }

inline Tensor gumbel_noise(std::size_t rows, std::size_t cols, Rng& rng) {
    std::uniform_real_distribution<double> u(std::nextafter(0.0, 1.0), 1.0);
    Tensor g(Shape{rows, cols});
    for (double& x : g.data()) x = -std::log(-std::log(u(rng)));
    return g;
}

/// softmax((logits + g) / temperature) with g ~ Gumbel(0, 1), differentiable
/// in the logits.
inline Var gumbel_softmax(Var logits, Rng& rng, double temperature) {
    Tape& t = *logits.tape;
    Var noisy = ops::add(logits, t.constant(gumbel_noise(logits.rows(), logits.cols(), rng)));
    return ops::softmax(ops::scale(noisy, 1.0 / temperature));
}

inline Vec act(const Policy& policy, const Vec& input, ActMode mode, Rng& rng, double temperature = 1.0) {
    if (input.size() != policy.input_dim())
        throw ShapeError("policy input has " + std::to_string(input.size()) + " entries, expected " +
                         std::to_string(policy.input_dim()));
    if (mode == ActMode::explore) {
        std::uniform_int_distribution<std::size_t> pick(0, policy.action_dim() - 1);
        return one_hot(pick(rng), policy.action_dim());
    }
    Tape t;
    Bound b(t, policy.params, false);
    Var logits = policy.logits(b, t.constant(as_row_batch(input)));
    if (mode == ActMode::eval) return ops::softmax_rows(logits.value()).data();
    return gumbel_softmax(logits, rng, temperature).value().data();
}

/// Deterministic target-policy action (softmax of the target logits).
inline Tensor target_action(const Policy& target, const Tensor& policy_input) {
    Tape t;
    Bound b(t, target.params, false);
    return ops::softmax_rows(target.logits(b, t.constant(policy_input)).value());
}

inline Tensor q_values(const Critic& critic, const CriticContext& ctx, const Tensor& act) {
    Tape t;
    Bound b(t, critic.params, false);
    std::optional<Var> oo;
    if (ctx.opp_obs) oo = t.constant(*ctx.opp_obs);
    return critic.q(b, t.constant(ctx.obs), oo, t.constant(act), t.constant(ctx.opp_act)).value();
}

/// y = r + (1 - done) * gamma * Qbar(next context, target-policy own action).
/// `next_policy_input` feeds the target policy; the result is a constant.
inline Tensor q_target(const Tensor& reward, const Tensor& done, const TargetPair& targets,
                       const CriticContext& next, const Tensor& next_policy_input, double gamma) {
    if (targets.critic.centralised && !next.opp_obs)
        throw std::invalid_argument("centralised TD target needs the opponent's next observation");
    const Tensor next_act = target_action(targets.policy, next_policy_input);
    const Tensor qn = q_values(targets.critic, next, next_act);
    Tensor y(Shape{reward.rows(), 1});
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = reward[i] + (1.0 - done[i]) * gamma * qn[i];
    return y;
}

/// Centralised MADDPG target for a batch: the opponent's next action comes
/// from the opponent's target policy, supplied by the caller.
inline Tensor q_target(const Batch& b, const TargetPair& targets, const Tensor& next_opp_target_action, double gamma) {
    CriticContext next{b.next_obs, b.next_opp_obs, next_opp_target_action};
    return q_target(b.reward, b.done, targets, next, b.next_obs, gamma);
}

inline Var critic_loss(Tape& t, Bound& p, const Critic& critic, const CriticContext& ctx, const Tensor& act,
                       const Tensor& y) {
    std::optional<Var> oo;
    if (ctx.opp_obs) oo = t.constant(*ctx.opp_obs);
    Var q = critic.q(p, t.constant(ctx.obs), oo, t.constant(act), t.constant(ctx.opp_act));
    return ops::mean(ops::square(ops::sub(q, t.constant(y))));
}

/// One Adam step on mean((Q - y)^2). Returns the loss before the step.
inline UpdateStats critic_update(Critic& critic, const CriticContext& ctx, const Tensor& act, const Tensor& y,
                                 const AdamConfig& opt) {
    NamedTensors grads;
    UpdateStats s;
    {
        Tape t;
        Bound p(t, critic.params, true);
        Var loss = critic_loss(t, p, critic, ctx, act, y);
        s.loss = loss.value().item();
        t.backward(loss);
        grads = t.param_grads();
    }
    for (const auto& [k, _] : grads) s.updated.push_back(k);
    adam_step(critic.params, grads, opt);
    return s;
}

/// -mean Q(ctx, gumbel_softmax(pi(policy_input))) with the critic held fixed.
inline Var policy_loss(Tape& t, Bound& pp, const Policy& policy, const Critic& critic, const CriticContext& ctx,
                       const Tensor& policy_input, Rng& rng, double temperature) {
    Bound cp(t, critic.params, false);
    Var a = gumbel_softmax(policy.logits(pp, t.constant(policy_input)), rng, temperature);
    std::optional<Var> oo;
    if (ctx.opp_obs) oo = t.constant(*ctx.opp_obs);
    Var q = critic.q(cp, t.constant(ctx.obs), oo, a, t.constant(ctx.opp_act));
    return ops::scale(ops::mean(q), -1.0);
}

inline UpdateStats policy_update(Policy& policy, const Critic& critic, const CriticContext& ctx,
                                 const Tensor& policy_input, Rng& rng, double temperature, const AdamConfig& opt) {
    NamedTensors grads;
    UpdateStats s;
    {
        Tape t;
        Bound pp(t, policy.params, true);
        Var loss = policy_loss(t, pp, policy, critic, ctx, policy_input, rng, temperature);
        s.loss = loss.value().item();
        t.backward(loss);
        grads = t.param_grads();
    }
    for (const auto& [k, _] : grads) s.updated.push_back(k);
    adam_step(policy.params, grads, opt);
    return s;
}

inline void sync_targets(const Policy& policy, const Critic& critic, TargetPair& targets, double tau) {
    polyak_update(targets.policy.params, policy.params, tau);
    polyak_update(targets.critic.params, critic.params, tau);
}

struct LossPair {
    double critic = 0.0;
    double policy = 0.0;
};

/// Plain MADDPG learner with a centralised critic. Used for the attacker and
/// for the baseline defender.
class MaddpgAgent {
  public:
    MaddpgAgent(const std::string& name, std::size_t obs_dim, std::size_t act_dim, const TrainHyper& hyper, Rng& rng)
        : hyper_(hyper) {
        policy_ = Policy::make(name + ".policy", obs_dim, hyper.hidden, act_dim, rng);
        critic_ = Critic::make(name + ".critic", true, obs_dim, act_dim, hyper.hidden, rng);
        // independently initialised targets
        targets_.policy = Policy::make(name + ".policy", obs_dim, hyper.hidden, act_dim, rng);
        targets_.critic = Critic::make(name + ".critic", true, obs_dim, act_dim, hyper.hidden, rng);
    }

    Vec act(const Vec& obs, ActMode mode, Rng& rng) const {
        return maddpg::act(policy_, obs, mode, rng, hyper_.gumbel_temperature);
    }

    Tensor target_action(const Tensor& next_obs) const { return maddpg::target_action(targets_.policy, next_obs); }

    /// One critic step, one policy step, then a soft target sync.
    LossPair update(const Batch& b, const Tensor& next_opp_target_action, Rng& rng) {
        if (!b.opp_obs) throw std::invalid_argument("MADDPG update needs a centralised batch");
        const Tensor y = q_target(b, targets_, next_opp_target_action, hyper_.gamma);
        CriticContext ctx{b.obs, b.opp_obs, b.opp_act};
        LossPair out;
        out.critic = critic_update(critic_, ctx, b.act, y, hyper_.adam).loss;
        out.policy = policy_update(policy_, critic_, ctx, b.obs, rng, hyper_.gumbel_temperature, hyper_.adam).loss;
        sync_targets(policy_, critic_, targets_, hyper_.tau);
        return out;
    }

    const Policy& policy() const { return policy_; }
    const Critic& critic() const { return critic_; }
    const TargetPair& targets() const { return targets_; }
    Policy& policy() { return policy_; }
    Critic& critic() { return critic_; }
    TargetPair& targets() { return targets_; }
    const TrainHyper& hyper() const { return hyper_; }

    std::vector<std::uint8_t> checkpoint() const {
        return encode_checkpoint({{"policy", &policy_.params},
                                  {"critic", &critic_.params},
                                  {"target_policy", &targets_.policy.params},
                                  {"target_critic", &targets_.critic.params}});
    }

  private:
    TrainHyper hyper_;
    Policy policy_;
    Critic critic_;
    TargetPair targets_;
};

}  // namespace lemol::maddpg

#endif
