#ifndef LEMOL_SCRIPTED_HPP
#define LEMOL_SCRIPTED_HPP

#include <random>
#include <string>

#include "lemol/experience.hpp"
#include "lemol/nn.hpp"

namespace lemol::scripted {

/// An opponent whose favoured action moves on by one every episode,
/// cycling through `period` actions. It plays the favoured action with
/// probability `focus` and a uniformly random action otherwise. With
/// period 1 and focus 1 it always plays `offset`.
struct DriftingOpponent {
    std::size_t period = 4;
    double focus = 0.75;
    std::size_t offset = 0;
    bool random_phase = true;
};

inline std::size_t favoured_action(const DriftingOpponent& opp, std::size_t phase, std::size_t episode) {
    return opp.offset + (phase + episode) % opp.period;
}

/// Synthetic learning trajectory against the scripted opponent. The modelling
/// agent's observations and actions are noise.
inline TrajectoryRecord drifting_trajectory(const DriftingOpponent& opp, std::size_t episodes,
                                            std::uint32_t episode_length, Rng& rng, std::string run_id = "scripted") {
    TrajectoryMeta meta;
    meta.run_id = std::move(run_id);
    meta.variant = "scripted";
    meta.episode_length = episode_length;
    TrajectoryRecord rec(meta);
    std::uniform_real_distribution<double> obs_d(-1.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> act_d(0, meta.action_dim - 1);
    const std::size_t phase = opp.random_phase ? std::uniform_int_distribution<std::size_t>(0, opp.period - 1)(rng) : 0;
    for (std::size_t k = 0; k < episodes; ++k) {
        const std::size_t fav = favoured_action(opp, phase, k);
        for (std::uint32_t t = 0; t < episode_length; ++t) {
            Event e;
            e.obs.resize(meta.obs_dim);
            for (auto& v : e.obs) v = obs_d(rng);
            e.action = one_hot(act_d(rng), meta.action_dim);
            e.reward = 0.0;
            const std::size_t a = u01(rng) < opp.focus ? fav : act_d(rng);
            e.opp_action = one_hot(a, meta.action_dim);
            e.done = t + 1 == episode_length;
            rec.record_event(std::move(e));
        }
        rec.close_episode();
    }
    return rec;
}

}  // namespace lemol::scripted

#endif
