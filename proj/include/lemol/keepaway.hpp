#ifndef LEMOL_KEEPAWAY_HPP
#define LEMOL_KEEPAWAY_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

#include "lemol/tensor.hpp"

namespace lemol::keepaway {

inline constexpr std::size_t kObsDim = 8;
inline constexpr std::size_t kActionDim = 5;
inline constexpr std::size_t kDefender = 0;
inline constexpr std::size_t kAttacker = 1;

using Vec2 = std::array<double, 2>;

struct EnvConfig {
    double dt = 0.1;
    double damping = 0.25;
    double max_speed = 1.0;
    double force_scale = 5.0;
    int episode_length = 25;
    double interception_coef = 0.5;
    double bound = 1.5;
    double spawn_range = 1.0;
    double landmark_range = 0.9;
    double landmark_min_separation = 0.5;
    int landmark_retries = 100;

    friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

struct WorldState {
    Vec2 defender_pos{};
    Vec2 attacker_pos{};
    Vec2 defender_vel{};
    Vec2 attacker_vel{};
    std::array<Vec2, 2> landmark_pos{};
    int goal_index = 0;
    int t = 0;

    friend bool operator==(const WorldState&, const WorldState&) = default;
};

/// Observations indexed by kDefender / kAttacker.
using Observations = std::array<Vec, 2>;

struct StepResult {
    WorldState state;
    Observations obs;
    std::array<double, 2> rewards{};
    bool done = false;
};

inline double dist(const Vec2& a, const Vec2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

/// Defender: [own_vel, landmark0 - self, landmark1 - self, attacker - self].
/// Nothing in it depends on goal_index.
inline Vec observe_defender(const WorldState& s) {
    const Vec2& p = s.defender_pos;
    return {s.defender_vel[0],
            s.defender_vel[1],
            s.landmark_pos[0][0] - p[0],
            s.landmark_pos[0][1] - p[1],
            s.landmark_pos[1][0] - p[0],
            s.landmark_pos[1][1] - p[1],
            s.attacker_pos[0] - p[0],
            s.attacker_pos[1] - p[1]};
}

/// Attacker: [own_vel, goal - self, other_landmark - self, defender - self].
inline Vec observe_attacker(const WorldState& s) {
    const Vec2& p = s.attacker_pos;
    const Vec2& g = s.landmark_pos[static_cast<std::size_t>(s.goal_index)];
    const Vec2& o = s.landmark_pos[static_cast<std::size_t>(1 - s.goal_index)];
    return {s.attacker_vel[0],
            s.attacker_vel[1],
            g[0] - p[0],
            g[1] - p[1],
            o[0] - p[0],
            o[1] - p[1],
            s.defender_pos[0] - p[0],
            s.defender_pos[1] - p[1]};
}

inline Observations observe(const WorldState& s) { return {observe_defender(s), observe_attacker(s)}; }

inline double reward_attacker(const WorldState& s) {
    return -dist(s.attacker_pos, s.landmark_pos[static_cast<std::size_t>(s.goal_index)]);
}

inline double reward_defender(const WorldState& s, const EnvConfig& cfg = {}) {
    return dist(s.attacker_pos, s.landmark_pos[static_cast<std::size_t>(s.goal_index)]) -
           cfg.interception_coef * dist(s.defender_pos, s.attacker_pos);
}

inline void check_action(const Vec& a, const char* who) {
    if (a.size() != kActionDim) throw std::invalid_argument(std::string(who) + " action must have 5 entries");
    double s = 0.0;
    for (double x : a) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument(std::string(who) + " action has a negative or non-finite entry");
        s += x;
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument(std::string(who) + " action is not on the simplex");
}

class KeepAway {
  public:
    explicit KeepAway(EnvConfig cfg = {}) : cfg_(cfg) {}

    const EnvConfig& config() const { return cfg_; }

    template <class Urbg>
    std::pair<WorldState, Observations> reset(Urbg& rng) const {
        std::uniform_real_distribution<double> spawn(-cfg_.spawn_range, cfg_.spawn_range);
        std::uniform_real_distribution<double> lm(-cfg_.landmark_range, cfg_.landmark_range);
        std::uniform_int_distribution<int> coin(0, 1);
        WorldState s;
        s.defender_pos = {spawn(rng), spawn(rng)};
        s.attacker_pos = {spawn(rng), spawn(rng)};
        // rejection-sample the landmarks; after the retry budget the last draw stands
        for (int attempt = 0; attempt <= cfg_.landmark_retries; ++attempt) {
            s.landmark_pos[0] = {lm(rng), lm(rng)};
            s.landmark_pos[1] = {lm(rng), lm(rng)};
            if (dist(s.landmark_pos[0], s.landmark_pos[1]) >= cfg_.landmark_min_separation) break;
        }
        s.goal_index = coin(rng);
        s.t = 0;
        return {s, observe(s)};
    }

    StepResult step(const WorldState& state, const Vec& a_def, const Vec& a_att) const {
        if (state.t >= cfg_.episode_length) throw std::logic_error("step() called on a finished episode");
        check_action(a_def, "defender");
        check_action(a_att, "attacker");
        StepResult r;
        r.state = state;
        move(r.state.defender_pos, r.state.defender_vel, a_def);
        move(r.state.attacker_pos, r.state.attacker_vel, a_att);
        r.state.t = state.t + 1;
        r.obs = observe(r.state);
        r.rewards = {reward_defender(r.state, cfg_), reward_attacker(r.state)};
        r.done = r.state.t == cfg_.episode_length;
        return r;
    }

  private:
    void move(Vec2& pos, Vec2& vel, const Vec& a) const {
        const Vec2 f{cfg_.force_scale * (a[1] - a[2]), cfg_.force_scale * (a[3] - a[4])};
        for (int d = 0; d < 2; ++d) vel[d] = (1.0 - cfg_.damping) * vel[d] + f[d] * cfg_.dt;
        const double speed = std::hypot(vel[0], vel[1]);
        if (speed > cfg_.max_speed) {
            vel[0] *= cfg_.max_speed / speed;
            vel[1] *= cfg_.max_speed / speed;
        }
        for (int d = 0; d < 2; ++d) pos[d] = std::clamp(pos[d] + vel[d] * cfg_.dt, -cfg_.bound, cfg_.bound);
    }

    EnvConfig cfg_;
};

/// One CSV row of the rollout render export.
inline std::string render_row(const WorldState& s) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d", s.t, s.defender_pos[0],
                  s.defender_pos[1], s.attacker_pos[0], s.attacker_pos[1], s.landmark_pos[0][0], s.landmark_pos[0][1],
                  s.landmark_pos[1][0], s.landmark_pos[1][1], s.goal_index);
    return buf;
}

inline constexpr const char* kRenderHeader = "t,def_x,def_y,att_x,att_y,lm0_x,lm0_y,lm1_x,lm1_y,goal_index";

}  // namespace lemol::keepaway

#endif
