#ifndef LEMOL_LEMOL_AGENT_HPP
#define LEMOL_LEMOL_AGENT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lemol/experience.hpp"
#include "lemol/keepaway.hpp"
#include "lemol/maddpg.hpp"
#include "lemol/opponent_model.hpp"

namespace lemol::agent {

using maddpg::ActMode;
using maddpg::LossPair;
using maddpg::TrainHyper;
using maddpg::UpdateStats;
using om::OmVariant;

enum class Variant {
    maddpg,
    maddpg_om,
    lemol_ep,
    lemol_ep_ablated,
    lemol_ep_oracle,
    lemol_ep_naive,
    lemol_ep_dec,
    lemol_ep_dec_ablated,
    lemol_ep_dec_naive,
    lemol_ep_dec_oracle,
};

struct VariantFlags {
    Variant id;
    const char* name;
    bool centralised;
    std::optional<OmVariant> om;
    bool feed_prediction;   // predicted opponent action is a policy input
    bool in_episode_lstm;
    bool models_learning;  // learning-process tracker active
};

inline const std::vector<VariantFlags>& variant_table() {
    static const std::vector<VariantFlags> table{
        {Variant::maddpg, "maddpg", true, std::nullopt, false, false, false},
        {Variant::maddpg_om, "maddpg-om", false, OmVariant::ablated, false, true, false},
        {Variant::lemol_ep, "lemol-ep", true, OmVariant::full, true, true, true},
        {Variant::lemol_ep_ablated, "lemol-ep-ablated", true, OmVariant::ablated, true, true, false},
        {Variant::lemol_ep_oracle, "lemol-ep-oracle", true, OmVariant::oracle, true, false, false},
        {Variant::lemol_ep_naive, "lemol-ep-naive", true, OmVariant::naive, true, true, true},
        {Variant::lemol_ep_dec, "lemol-ep-dec", false, OmVariant::full, true, true, true},
        {Variant::lemol_ep_dec_ablated, "lemol-ep-dec-ablated", false, OmVariant::ablated, true, true, false},
        {Variant::lemol_ep_dec_naive, "lemol-ep-dec-naive", false, OmVariant::naive, true, true, true},
        {Variant::lemol_ep_dec_oracle, "lemol-ep-dec-oracle", false, OmVariant::oracle, true, false, false},
    };
    return table;
}

inline const VariantFlags& flags(Variant v) {
    for (const auto& f : variant_table())
        if (f.id == v) return f;
    throw std::invalid_argument("unknown variant");
}

inline const char* to_string(Variant v) { return flags(v).name; }

inline Variant parse_variant(const std::string& s) {
    for (const auto& f : variant_table())
        if (s == f.name) return f.id;
    std::string known;
    for (const auto& f : variant_table()) known += std::string(known.empty() ? "" : ", ") + f.name;
    throw std::invalid_argument("unknown variant '" + s + "' (expected one of: " + known + ")");
}

/// Whether the opponent model is fitted offline before evaluation runs.
inline bool needs_om_training(Variant v) {
    const auto& f = flags(v);
    return f.om == OmVariant::full || f.om == OmVariant::ablated;
}

inline void check_simplex(const Vec& a, const char* what) {
    double s = 0.0;
    for (double x : a) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument(std::string(what) + " has a negative or non-finite entry");
        s += x;
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument(std::string(what) + " is not on the simplex");
}

inline Vec concat(const Vec& a, const Vec& b) {
    Vec out(a);
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

/// maddpg::act on concat(obs, predicted opponent action).
inline Vec act_conditioned(const maddpg::Policy& policy, const Vec& obs, const Vec& predicted, ActMode mode, Rng& rng,
                           double temperature = 1.0) {
    check_simplex(predicted, "predicted opponent action");
    return maddpg::act(policy, concat(obs, predicted), mode, rng, temperature);
}

/// Rows of one-hot argmax predictions from stored opponent-model states.
inline Tensor predicted_actions(const om::OpponentModel& model, const Tensor& u_h, const Tensor& h_h,
                                const Tensor* oracle_actions) {
    Tensor dist = om::predict_rows(model, u_h, h_h, oracle_actions);
    Tensor out(dist.shape());
    for (std::size_t r = 0; r < dist.rows(); ++r) out(r, argmax(dist.ptr() + r * dist.cols(), dist.cols())) = 1.0;
    return out;
}

/// The learning defender in every variant, including plain MADDPG.
class LemolAgent {
  public:
    /// `om_rng` initialises the opponent model only, so variants sharing a
    /// seed start from the same model.
    LemolAgent(Variant v, std::size_t obs_dim, std::size_t act_dim, const TrainHyper& hyper, const om::OmDims& om_dims,
               Rng& rng, Rng& om_rng)
        : flags_(flags(v)), hyper_(hyper), obs_dim_(obs_dim), act_dim_(act_dim) {
        const std::size_t in = obs_dim + (flags_.feed_prediction ? act_dim : 0);
        policy_ = maddpg::Policy::make("defender.policy", in, hyper.hidden, act_dim, rng);
        critic_ = maddpg::Critic::make("defender.critic", flags_.centralised, obs_dim, act_dim, hyper.hidden, rng);
        targets_.policy = maddpg::Policy::make("defender.policy", in, hyper.hidden, act_dim, rng);
        targets_.critic =
            maddpg::Critic::make("defender.critic", flags_.centralised, obs_dim, act_dim, hyper.hidden, rng);
        if (flags_.om) {
            if (om_dims.obs_dim != obs_dim || om_dims.action_dim != act_dim)
                throw ShapeError("opponent model dimensions do not match the agent");
            om_.emplace(om_dims, *flags_.om, om_rng);
        }
    }

    const VariantFlags& variant() const { return flags_; }
    bool centralised() const { return flags_.centralised; }
    bool has_om() const { return om_.has_value(); }

    const om::OpponentModel& om() const {
        if (!om_) throw std::logic_error(std::string(flags_.name) + " has no opponent model");
        return *om_;
    }
    om::OpponentModel& om() {
        if (!om_) throw std::logic_error(std::string(flags_.name) + " has no opponent model");
        return *om_;
    }

    /// Replaces the opponent-model parameters with trained ones.
    void load_om(const ParamStore& trained) {
        ParamStore& cur = om().params();
        if (cur.names() != trained.names()) throw std::invalid_argument("opponent model parameter names differ");
        for (const auto& n : cur.names())
            if (cur.value(n).shape() != trained.value(n).shape())
                throw ShapeError("opponent model parameter " + n + " has the wrong shape");
        cur = trained;
    }

    Vec policy_input(const Vec& obs, const Vec& predicted) const {
        return flags_.feed_prediction ? concat(obs, predicted) : obs;
    }

    Tensor policy_input(const Tensor& obs, const Tensor& predicted) const {
        if (!flags_.feed_prediction) return obs;
        if (predicted.rows() != obs.rows() || predicted.cols() != act_dim_)
            throw std::invalid_argument("batch is missing stored opponent predictions");
        Tensor out(Shape{obs.rows(), obs.cols() + predicted.cols()});
        for (std::size_t r = 0; r < obs.rows(); ++r) {
            std::copy(obs.ptr() + r * obs.cols(), obs.ptr() + (r + 1) * obs.cols(), out.ptr() + r * out.cols());
            std::copy(predicted.ptr() + r * predicted.cols(), predicted.ptr() + (r + 1) * predicted.cols(),
                      out.ptr() + r * out.cols() + obs.cols());
        }
        return out;
    }

    Vec act(const Vec& obs, const Vec& predicted, ActMode mode, Rng& rng) const {
        if (flags_.feed_prediction) return act_conditioned(policy_, obs, predicted, mode, rng, hyper_.gumbel_temperature);
        return maddpg::act(policy_, obs, mode, rng, hyper_.gumbel_temperature);
    }

    Tensor target_action(const Tensor& next_obs, const Tensor& next_predicted) const {
        return maddpg::target_action(targets_.policy, policy_input(next_obs, next_predicted));
    }

    /// MADDPG critic and policy steps; the policy and its target consume the
    /// predictions stored with each transition.
    LossPair update_centralised(const Batch& b, const Tensor& next_opp_target_action, Rng& rng) {
        if (!flags_.centralised) throw std::logic_error(std::string(flags_.name) + " trains decentralised");
        if (!b.opp_obs || !b.next_opp_obs) throw std::invalid_argument("centralised update needs opponent observations");
        const maddpg::CriticContext next{b.next_obs, b.next_opp_obs, next_opp_target_action};
        const Tensor y = maddpg::q_target(b.reward, b.done, targets_, next, policy_input(b.next_obs, b.next_pred),
                                          hyper_.gamma);
        const maddpg::CriticContext ctx{b.obs, b.opp_obs, b.opp_act};
        LossPair out;
        record(out.critic, maddpg::critic_update(critic_, ctx, b.act, y, hyper_.adam));
        record(out.policy, maddpg::policy_update(policy_, critic_, ctx, policy_input(b.obs, b.pred), rng,
                                                 hyper_.gumbel_temperature, hyper_.adam));
        maddpg::sync_targets(policy_, critic_, targets_, hyper_.tau);
        return out;
    }

    /// y = r + (1 - done) gamma Qbar(o+, pibar(o+, a_hat+), a_hat+) with a_hat+
    /// the argmax prediction from the stored next-step model state.
    Tensor decentralised_q_target(const DecentralisedBatch& b) const {
        const Tensor next_pred =
            predicted_actions(om(), b.next_om_u, b.next_om_h, oracle() ? &b.next_opp_act : nullptr);
        const maddpg::CriticContext next{b.next_obs, std::nullopt, next_pred};
        return maddpg::q_target(b.reward, b.done, targets_, next, policy_input(b.next_obs, next_pred), hyper_.gamma);
    }

    UpdateStats decentralised_q_update(const DecentralisedBatch& b) {
        require_decentralised();
        const Tensor y = decentralised_q_target(b);
        const maddpg::CriticContext ctx{b.obs, std::nullopt, b.opp_act};
        UpdateStats s = maddpg::critic_update(critic_, ctx, b.act, y, hyper_.adam);
        audit(s);
        return s;
    }

    /// Predictions are regenerated from stored (u, h) with the current
    /// opponent model.
    Tensor decentralised_policy_context(const DecentralisedBatch& b) const {
        return predicted_actions(om(), b.om_u, b.om_h, oracle() ? &b.opp_act : nullptr);
    }

    Var decentralised_policy_loss(Tape& t, Bound& pp, const DecentralisedBatch& b, Rng& rng) const {
        const Tensor pred = decentralised_policy_context(b);
        const maddpg::CriticContext ctx{b.obs, std::nullopt, pred};
        return maddpg::policy_loss(t, pp, policy_, critic_, ctx, policy_input(b.obs, pred), rng,
                                   hyper_.gumbel_temperature);
    }

    UpdateStats decentralised_policy_update(const DecentralisedBatch& b, Rng& rng) {
        require_decentralised();
        const Tensor pred = decentralised_policy_context(b);
        const maddpg::CriticContext ctx{b.obs, std::nullopt, pred};
        UpdateStats s = maddpg::policy_update(policy_, critic_, ctx, policy_input(b.obs, pred), rng,
                                              hyper_.gumbel_temperature, hyper_.adam);
        audit(s);
        return s;
    }

    LossPair update_decentralised(const DecentralisedBatch& b, Rng& rng) {
        LossPair out;
        out.critic = decentralised_q_update(b).loss;
        out.policy = decentralised_policy_update(b, rng).loss;
        maddpg::sync_targets(policy_, critic_, targets_, hyper_.tau);
        return out;
    }

    /// Every parameter name that has received an RL gradient step.
    const std::vector<std::string>& rl_updated_names() const { return rl_updated_; }

    const maddpg::Policy& policy() const { return policy_; }
    const maddpg::Critic& critic() const { return critic_; }
    const maddpg::TargetPair& targets() const { return targets_; }
    maddpg::Policy& policy() { return policy_; }
    maddpg::Critic& critic() { return critic_; }
    maddpg::TargetPair& targets() { return targets_; }
    const TrainHyper& hyper() const { return hyper_; }

    std::vector<std::uint8_t> checkpoint() const {
        std::vector<std::pair<std::string, const ParamStore*>> parts{{"policy", &policy_.params},
                                                                     {"critic", &critic_.params},
                                                                     {"target_policy", &targets_.policy.params},
                                                                     {"target_critic", &targets_.critic.params}};
        if (om_) parts.emplace_back("om", &om_->params());
        return encode_checkpoint(parts);
    }

  private:
    bool oracle() const { return flags_.om == OmVariant::oracle; }

    void require_decentralised() const {
        if (flags_.centralised) throw std::logic_error(std::string(flags_.name) + " trains centralised");
        if (!om_) throw std::logic_error("decentralised training needs an opponent model");
    }

    void audit(const UpdateStats& s) {
        for (const auto& n : s.updated)
            if (std::find(rl_updated_.begin(), rl_updated_.end(), n) == rl_updated_.end()) rl_updated_.push_back(n);
    }

    void record(double& loss, const UpdateStats& s) {
        loss = s.loss;
        audit(s);
    }

    VariantFlags flags_;
    TrainHyper hyper_;
    std::size_t obs_dim_;
    std::size_t act_dim_;
    maddpg::Policy policy_;
    maddpg::Critic critic_;
    maddpg::TargetPair targets_;
    std::optional<om::OpponentModel> om_;
    std::vector<std::string> rl_updated_;
};

// ---------------------------------------------------------------------------
// One learning trajectory: defender vs a MADDPG attacker, both from scratch.

struct RunConfig {
    std::size_t episodes = 61024;
    keepaway::EnvConfig env;
    TrainHyper hyper;
    om::OmDims om_dims;
    bool record_opponent_obs = false;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct EpisodeMetrics {
    std::size_t episode = 0;
    std::size_t total_steps = 0;
    double reward_defender = 0.0;
    double reward_attacker = 0.0;
    double om_cross_entropy = std::nan("");
    double critic_loss = std::nan("");
    double policy_loss = std::nan("");
};

struct RunResult {
    TrajectoryRecord record;
    std::vector<EpisodeMetrics> metrics;
    std::vector<om::TraceRow> trace;
    std::vector<std::uint8_t> defender_checkpoint;
    std::vector<std::uint8_t> attacker_checkpoint;
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Independent streams per concern; none depends on the variant, so runs of
/// different variants with the same seed share environment draws and
/// attacker initialisation.
struct SeedStreams {
    std::uint64_t env, defender, attacker, om, noise;

    static SeedStreams derive(std::uint64_t seed) {
        std::uint64_t s = seed;
        SeedStreams out{};
        out.env = splitmix64(s);
        out.defender = splitmix64(s);
        out.attacker = splitmix64(s);
        out.om = splitmix64(s);
        out.noise = splitmix64(s);
        return out;
    }
};

inline void validate(Variant v, const RunConfig& cfg) {
    const auto& f = flags(v);
    if (!f.centralised && cfg.record_opponent_obs)
        throw std::invalid_argument(std::string(f.name) +
                                    " is decentralised but the run records opponent observations");
    if (cfg.episodes == 0) throw std::invalid_argument("a trajectory needs at least one episode");
    if (cfg.hyper.batch == 0 || cfg.hyper.update_every <= 0) throw std::invalid_argument("batch and update_every must be positive");
    if (cfg.hyper.batch > cfg.hyper.buffer_capacity) throw std::invalid_argument("batch exceeds the buffer capacity");
    if (f.om && (cfg.om_dims.obs_dim != keepaway::kObsDim || cfg.om_dims.action_dim != keepaway::kActionDim))
        throw ShapeError("opponent model dimensions do not match the environment");
}

inline RunResult run_trajectory(Variant v, const RunConfig& cfg, std::uint64_t seed,
                                const ParamStore* trained_om = nullptr, const std::string& run_id = "") {
    using namespace keepaway;
    validate(v, cfg);
    const SeedStreams ss = SeedStreams::derive(seed);
    Rng env_rng(ss.env), def_rng(ss.defender), att_rng(ss.attacker), om_rng(ss.om), noise(ss.noise);
    LemolAgent def(v, kObsDim, kActionDim, cfg.hyper, cfg.om_dims, def_rng, om_rng);
    if (trained_om) def.load_om(*trained_om);
    maddpg::MaddpgAgent att("attacker", kObsDim, kActionDim, cfg.hyper, att_rng);
    const bool oracle = def.variant().om == OmVariant::oracle;
    const std::size_t T = cfg.env.episode_length;

    TrajectoryMeta meta;
    meta.run_id = run_id.empty() ? std::string(def.variant().name) + "-" + std::to_string(seed) : run_id;
    meta.variant = def.variant().name;
    meta.seed = seed;
    meta.episode_length = static_cast<std::uint32_t>(T);
    meta.obs_dim = kObsDim;
    meta.action_dim = kActionDim;
    meta.has_opp_obs = cfg.record_opponent_obs;

    RunResult res;
    res.record = TrajectoryRecord(meta);
    RingBuffer<Transition> buf(cfg.hyper.buffer_capacity);
    std::optional<om::OmPlayState> play;
    if (def.has_om()) play.emplace(def.om(), T);
    const KeepAway env(cfg.env);
    const Vec zero_action(kActionDim, 0.0);
    std::size_t total_steps = 0;

    for (std::size_t k = 0; k < cfg.episodes; ++k) {
        const ActMode mode = k < static_cast<std::size_t>(cfg.hyper.explore_episodes) ? ActMode::explore : ActMode::train_noise;
        auto [state, obs] = env.reset(env_rng);
        std::optional<Transition> pending;
        EpisodeMetrics m;
        m.episode = k;
        double ce = 0, closs = 0, ploss = 0;
        int updates = 0;
        for (std::size_t t = 0; t < T; ++t) {
            const Vec a_att = att.act(obs[kAttacker], mode, noise);
            Vec pred, u, h;
            if (play) {
                const Vec dist = play->predict(obs[kDefender], oracle ? std::optional<Vec>(a_att) : std::nullopt);
                pred = one_hot(argmax(dist), kActionDim);
                u = play->in_episode().h.data();
                h = play->representation().h.data();
            }
            const Vec a_def = def.act(obs[kDefender], pred, mode, noise);
            if (pending) {
                pending->next_action = {a_def, a_att};
                pending->next_pred = pred;
                pending->next_om_u = u;
                pending->next_om_h = h;
                buf.add(std::move(*pending));
                pending.reset();
            }
            StepResult step = env.step(state, a_def, a_att);

            Event ev;
            ev.obs = obs[kDefender];
            ev.action = a_def;
            ev.reward = step.rewards[kDefender];
            ev.opp_action = a_att;
            ev.done = step.done;
            if (cfg.record_opponent_obs) ev.opp_obs = obs[kAttacker];
            if (play) ce += play->observe(ev);
            res.record.record_event(std::move(ev));

            Transition tr;
            tr.obs = obs;
            tr.action = {a_def, a_att};
            tr.reward = step.rewards;
            tr.next_obs = step.obs;
            tr.done = step.done;
            tr.om_u = std::move(u);
            tr.om_h = std::move(h);
            tr.pred = std::move(pred);
            if (step.done) {
                tr.next_action = {zero_action, zero_action};
                if (play) {
                    tr.next_pred = zero_action;
                    tr.next_om_u = Vec(tr.om_u.size(), 0.0);
                    tr.next_om_h = Vec(tr.om_h.size(), 0.0);
                }
                buf.add(std::move(tr));
            } else {
                pending = std::move(tr);
            }
            m.reward_defender += step.rewards[kDefender];
            m.reward_attacker += step.rewards[kAttacker];
            state = step.state;
            obs = step.obs;
            ++total_steps;

            if (mode != ActMode::explore && total_steps % static_cast<std::size_t>(cfg.hyper.update_every) == 0 &&
                buf.size() >= cfg.hyper.batch) {
                const auto idx = buf.sample_indices(cfg.hyper.batch, noise);
                const Batch bd = make_batch(buf, idx, kDefender, def.centralised());
                const Batch ba = make_batch(buf, idx, kAttacker, true);
                const Tensor def_next = def.target_action(bd.next_obs, bd.next_pred);
                LossPair l;
                if (def.centralised()) {
                    const Tensor att_next = att.target_action(*bd.next_opp_obs);
                    l = def.update_centralised(bd, att_next, noise);
                } else {
                    l = def.update_decentralised(to_decentralised(bd), noise);
                }
                att.update(ba, def_next, noise);
                closs += l.critic;
                ploss += l.policy;
                ++updates;
            }
        }
        res.record.close_episode();
        m.total_steps = total_steps;
        m.reward_defender /= static_cast<double>(T);
        m.reward_attacker /= static_cast<double>(T);
        if (play) m.om_cross_entropy = ce / static_cast<double>(T);
        if (updates > 0) {
            m.critic_loss = closs / updates;
            m.policy_loss = ploss / updates;
        }
        res.metrics.push_back(m);
    }
    if (play) res.trace = play->trace();
    res.defender_checkpoint = def.checkpoint();
    res.attacker_checkpoint = att.checkpoint();
    return res;
}

inline constexpr const char* kMetricsHeader =
    "episode,total_steps,mean_reward_defender,mean_reward_attacker,mean_om_cross_entropy,critic_loss,policy_loss";

}  // namespace lemol::agent

#endif
