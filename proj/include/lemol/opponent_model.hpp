#ifndef LEMOL_OPPONENT_MODEL_HPP
#define LEMOL_OPPONENT_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lemol/experience.hpp"
#include "lemol/nn.hpp"

namespace lemol::om {

enum class OmVariant { full, ablated, naive, oracle };

inline const char* to_string(OmVariant v) {
    switch (v) {
        case OmVariant::full: return "full";
        case OmVariant::ablated: return "ablated";
        case OmVariant::naive: return "naive";
        case OmVariant::oracle: return "oracle";
    }
    return "?";
}

struct OmDims {
    std::size_t obs_dim = 8;
    std::size_t action_dim = 5;
    std::size_t summary_hidden = 64;
    std::size_t embed = 128;
    std::size_t core = 64;
    std::size_t in_episode = 32;
    std::size_t head_hidden = 64;

    /// obs, own action, reward, opponent action, done
    std::size_t event_dim() const { return obs_dim + 2 * action_dim + 2; }

    friend bool operator==(const OmDims&, const OmDims&) = default;
};

struct OmHyper {
    std::size_t chunk_length = 500;  // time steps per truncated-BPTT chunk
    std::size_t batch_trajectories = 8;
    int epochs = 50;
    AdamConfig adam{0.001, 0.9, 0.999, 1e-8};
    double holdout_fraction = 0.2;

    friend bool operator==(const OmHyper&, const OmHyper&) = default;
};

inline constexpr double kLogFloor = 1e-12;

/// Parameters live in one store under disjoint prefixes:
///   om.summary.*  bidirectional episode summariser
///   om.core.*     learning-tracker LSTM (episode summaries -> h)
///   om.inep.*     in-episode LSTM over own observations (-> u)
///   om.head.*     prediction head on [u | h]
class OpponentModel {
  public:
    OpponentModel(OmDims dims, OmVariant variant, Rng& rng) : dims_(dims), variant_(variant) {
        summariser().init(params_, rng);
        core().init(params_, rng);
        in_episode().init(params_, rng);
        head().init(params_, rng);
    }

    BiLstmSpec summariser() const { return {"om.summary", dims_.event_dim(), dims_.summary_hidden, dims_.embed}; }
    LstmSpec core() const { return {"om.core", dims_.embed, dims_.core}; }
    LstmSpec in_episode() const { return {"om.inep", dims_.obs_dim, dims_.in_episode}; }
    MlpSpec head() const { return {"om.head", {dims_.in_episode + dims_.core, dims_.head_hidden, dims_.action_dim}}; }

    const OmDims& dims() const { return dims_; }
    OmVariant variant() const { return variant_; }
    void set_variant(OmVariant v) { variant_ = v; }
    bool trainable() const { return variant_ == OmVariant::full || variant_ == OmVariant::ablated; }
    /// Whether the learning tracker feeds predictions.
    bool uses_representation() const { return variant_ == OmVariant::full || variant_ == OmVariant::naive; }

    const ParamStore& params() const { return params_; }
    ParamStore& params() { return params_; }

  private:
    OmDims dims_;
    OmVariant variant_;
    ParamStore params_;
};

inline Vec event_vector(const Event& e) {
    Vec x;
    x.reserve(e.obs.size() + e.action.size() + e.opp_action.size() + 2);
    x.insert(x.end(), e.obs.begin(), e.obs.end());
    x.insert(x.end(), e.action.begin(), e.action.end());
    x.push_back(e.reward);
    x.insert(x.end(), e.opp_action.begin(), e.opp_action.end());
    x.push_back(e.done ? 1.0 : 0.0);
    return x;
}

/// e_k: bidirectional summary of one complete episode, [1 x embed].
inline Tensor summarise_episode(const OpponentModel& om, const std::vector<Event>& events, std::size_t episode_length) {
    if (events.size() != episode_length)
        throw std::invalid_argument("episode has " + std::to_string(events.size()) + " events, expected " +
                                    std::to_string(episode_length));
    Tape t;
    Bound p(t, om.params(), false);
    std::vector<Var> xs;
    xs.reserve(events.size());
    for (const auto& e : events) xs.push_back(t.constant(Tensor::row(event_vector(e))));
    return om.summariser().encode(p, xs).value();
}

/// h_k = core_lstm(e_k, h_{k-1}).
inline LstmState update_representation(const OpponentModel& om, const LstmState& h, const Tensor& summary) {
    return lstm_step(summary, h, om.params(), om.core());
}

/// u_{k,t} = in_episode_lstm(o_{k,t}, u_{k,t-1}).
inline LstmState in_episode_step(const OpponentModel& om, const LstmState& u, const Vec& obs) {
    return lstm_step(Tensor::row(obs), u, om.params(), om.in_episode());
}

/// Head on hidden components, batched: u_h [B x Hu], h_h [B x Hc] -> [B x A]
/// distributions. Ablated models see zeros in place of h.
inline Var predict_var(Bound& p, const OpponentModel& om, Var u_h, Var h_h) {
    Tape& t = p.tape();
    Var hin = om.uses_representation() ? h_h : t.constant(Tensor::zeros({u_h.rows(), om.dims().core}));
    return ops::softmax(om.head().forward(p, ops::concat_cols({u_h, hin})));
}

inline Tensor predict_rows(const OpponentModel& om, const Tensor& u_h, const Tensor& h_h,
                           const Tensor* oracle_actions = nullptr) {
    if (om.variant() == OmVariant::oracle) {
        if (!oracle_actions) throw std::invalid_argument("oracle opponent model needs the true opponent actions");
        Tensor out(Shape{oracle_actions->rows(), oracle_actions->cols()});
        for (std::size_t r = 0; r < out.rows(); ++r)
            out(r, argmax(oracle_actions->ptr() + r * out.cols(), out.cols())) = 1.0;
        return out;
    }
    Tape t;
    Bound p(t, om.params(), false);
    return predict_var(p, om, t.constant(u_h), t.constant(h_h)).value();
}

/// rho(a | u_{k,t}, h_{k-1}) as a distribution over opponent actions.
inline Vec predict(const OpponentModel& om, const LstmState& u, const LstmState& h,
                   const std::optional<Vec>& oracle_action = std::nullopt) {
    if (om.variant() == OmVariant::oracle) {
        if (!oracle_action) throw std::invalid_argument("oracle opponent model needs the true opponent action");
        return one_hot(argmax(*oracle_action), oracle_action->size());
    }
    return predict_rows(om, u.h, h.h).data();
}

/// Rows of `p` that are one-hot in `actual` contribute -log p[actual];
/// all-zero rows are padding and contribute nothing. Mean over real rows.
inline Var cat_loss_var(Var predicted, const Tensor& actual, double real_rows) {
    Tape& t = *predicted.tape;
    Var ll = ops::mul(ops::log_clamped(predicted, kLogFloor), t.constant(actual));
    return ops::scale(ops::sum(ll), -1.0 / real_rows);
}

/// -(1/N) sum_i log(max(p_i[actual_i], 1e-12)).
inline double cat_loss(const Tensor& predicted, const Tensor& actual_one_hot) {
    if (predicted.shape() != actual_one_hot.shape())
        throw ShapeError("cat_loss: predictions " + shape_str(predicted.shape()) + " vs targets " +
                         shape_str(actual_one_hot.shape()));
    const std::size_t N = predicted.rows(), A = predicted.cols();
    double s = 0.0;
    for (std::size_t r = 0; r < N; ++r) {
        const std::size_t a = argmax(actual_one_hot.ptr() + r * A, A);
        s += std::log(std::max(predicted(r, a), kLogFloor));
    }
    return -s / static_cast<double>(N);
}

// ---------------------------------------------------------------------------
// Training

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double holdout_loss = std::nan("");
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    std::size_t train_trajectories = 0;
    std::size_t holdout_trajectories = 0;
    std::size_t adam_steps = 0;
};

/// Last `fraction` of the records (at least one when there are two or more)
/// is held out.
inline std::size_t holdout_count(std::size_t n, double fraction) {
    if (n < 2 || fraction <= 0.0) return 0;
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n - 1);
}

namespace detail {

struct ChunkResult {
    Var loss;
    double real_rows = 0;
    LstmState core_out;
};

/// CAT loss over episodes [k0, k1) of a batch of trajectories. Rows are laid
/// out episode-major (row = e * B + b). `core_in` is the carried learning
/// tracker state ([B x Hc]); it enters as a constant so gradients stop at the
/// chunk boundary.
inline ChunkResult chunk_loss(Tape& t, Bound& p, const OpponentModel& om,
                              const std::vector<const TrajectoryRecord*>& batch, std::size_t k0, std::size_t k1,
                              const LstmState& core_in) {
    const OmDims& d = om.dims();
    const std::size_t B = batch.size(), E = k1 - k0, R = E * B;
    const std::size_t T = batch.front()->meta().episode_length;

    std::vector<Var> events(T), obs(T);
    Tensor target(Shape{T * R, d.action_dim});
    double real = 0;
    for (std::size_t s = 0; s < T; ++s) {
        Tensor X(Shape{R, d.event_dim()});
        Tensor O(Shape{R, d.obs_dim});
        for (std::size_t e = 0; e < E; ++e)
            for (std::size_t b = 0; b < B; ++b) {
                const auto& eps = batch[b]->episodes();
                if (k0 + e >= eps.size()) continue;  // padding row
                const Event& ev = eps[k0 + e][s];
                const std::size_t r = e * B + b;
                const Vec x = event_vector(ev);
                std::copy(x.begin(), x.end(), X.ptr() + r * d.event_dim());
                std::copy(ev.obs.begin(), ev.obs.end(), O.ptr() + r * d.obs_dim);
                target(s * R + r, argmax(ev.opp_action)) = 1.0;
                real += 1;
            }
        events[s] = t.constant(std::move(X));
        obs[s] = t.constant(std::move(O));
    }

    // learning tracker: h_{k-1} feeds every step of episode k
    std::vector<Var> h_prev;
    h_prev.reserve(E);
    LstmVars core{t.constant(core_in.h), t.constant(core_in.c)};
    if (om.uses_representation()) {
        Var summaries = om.summariser().encode(p, events);
        const LstmSpec cs = om.core();
        for (std::size_t e = 0; e < E; ++e) {
            h_prev.push_back(core.h);
            core = cs.step(p, ops::slice_rows(summaries, e * B, B), core);
        }
    } else {
        for (std::size_t e = 0; e < E; ++e) h_prev.push_back(core.h);
    }
    Var hp = ops::concat_rows(h_prev);

    const LstmSpec is = om.in_episode();
    LstmVars u{t.constant(Tensor::zeros({R, d.in_episode})), t.constant(Tensor::zeros({R, d.in_episode}))};
    std::vector<Var> u_steps, h_steps;
    for (std::size_t s = 0; s < T; ++s) {
        u = is.step(p, obs[s], u);
        u_steps.push_back(u.h);
        h_steps.push_back(hp);
    }
    Var pred = predict_var(p, om, ops::concat_rows(u_steps), ops::concat_rows(h_steps));
    ChunkResult out;
    out.real_rows = real;
    out.loss = cat_loss_var(pred, target, std::max(real, 1.0));
    out.core_out = {core.h.value(), core.c.value()};
    return out;
}

inline std::size_t episodes_per_chunk(const OmHyper& hyper, std::size_t T) {
    return std::max<std::size_t>(1, hyper.chunk_length / T);
}

inline void check_records(const std::vector<const TrajectoryRecord*>& recs, const OpponentModel& om) {
    if (recs.empty()) throw std::invalid_argument("opponent model training needs at least one trajectory");
    const auto T = recs.front()->meta().episode_length;
    for (const auto* r : recs) {
        if (r->meta().episode_length != T)
            throw std::invalid_argument("trajectories mix episode lengths " + std::to_string(T) + " and " +
                                        std::to_string(r->meta().episode_length));
        if (r->meta().obs_dim != om.dims().obs_dim || r->meta().action_dim != om.dims().action_dim)
            throw ShapeError("trajectory dimensions do not match the opponent model");
    }
}

}  // namespace detail

/// Mean CAT loss of the model over whole trajectories, chunked exactly as in
/// training but without gradient steps.
inline double evaluate_cat(const OpponentModel& om, const std::vector<const TrajectoryRecord*>& recs,
                           const OmHyper& hyper) {
    detail::check_records(recs, om);
    const std::size_t T = recs.front()->meta().episode_length;
    const std::size_t per = detail::episodes_per_chunk(hyper, T);
    double total = 0, rows = 0;
    for (std::size_t i = 0; i < recs.size(); i += hyper.batch_trajectories) {
        std::vector<const TrajectoryRecord*> batch(recs.begin() + static_cast<std::ptrdiff_t>(i),
                                                   recs.begin() + static_cast<std::ptrdiff_t>(std::min(recs.size(), i + hyper.batch_trajectories)));
        std::size_t K = 0;
        for (const auto* r : batch) K = std::max(K, r->episode_count());
        LstmState core = LstmState::zeros(batch.size(), om.dims().core);
        for (std::size_t k0 = 0; k0 < K; k0 += per) {
            Tape t;
            Bound p(t, om.params(), false);
            auto res = detail::chunk_loss(t, p, om, batch, k0, std::min(K, k0 + per), core);
            total += res.loss.value().item() * std::max(res.real_rows, 1.0);
            rows += res.real_rows;
            core = res.core_out;
        }
    }
    return rows > 0 ? total / rows : std::nan("");
}

/// Fits the model to whole learning trajectories with the chosen-action
/// target. Each trajectory is replayed from h = 0 in chronological chunks;
/// state crosses chunk boundaries, gradients do not. Naive models are
/// evaluated but never stepped.
inline TrainReport train_om(OpponentModel& om, const std::vector<const TrajectoryRecord*>& records,
                            const OmHyper& hyper, Rng& rng) {
    if (om.variant() == OmVariant::oracle) throw std::invalid_argument("the oracle opponent model is not trainable");
    detail::check_records(records, om);
    const std::size_t n_hold = holdout_count(records.size(), hyper.holdout_fraction);
    std::vector<const TrajectoryRecord*> train(records.begin(), records.end() - static_cast<std::ptrdiff_t>(n_hold));
    std::vector<const TrajectoryRecord*> hold(records.end() - static_cast<std::ptrdiff_t>(n_hold), records.end());
    const std::size_t T = records.front()->meta().episode_length;
    const std::size_t per = detail::episodes_per_chunk(hyper, T);

    TrainReport rep;
    rep.train_trajectories = train.size();
    rep.holdout_trajectories = hold.size();
    std::vector<std::size_t> order(train.size());
    for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0, rows = 0;
        for (std::size_t i = 0; i < order.size(); i += hyper.batch_trajectories) {
            std::vector<const TrajectoryRecord*> batch;
            for (std::size_t j = i; j < std::min(order.size(), i + hyper.batch_trajectories); ++j)
                batch.push_back(train[order[j]]);
            std::size_t K = 0;
            for (const auto* r : batch) K = std::max(K, r->episode_count());
            LstmState core = LstmState::zeros(batch.size(), om.dims().core);
            for (std::size_t k0 = 0; k0 < K; k0 += per) {
                NamedTensors grads;
                {
                    Tape t;
                    Bound p(t, om.params(), om.trainable());
                    auto res = detail::chunk_loss(t, p, om, batch, k0, std::min(K, k0 + per), core);
                    total += res.loss.value().item() * std::max(res.real_rows, 1.0);
                    rows += res.real_rows;
                    core = res.core_out;
                    if (om.trainable()) {
                        t.backward(res.loss);
                        grads = t.param_grads();
                    }
                }
                if (om.trainable()) {
                    adam_step(om.params(), grads, hyper.adam);
                    ++rep.adam_steps;
                }
            }
        }
        EpochStats s;
        s.epoch = epoch;
        s.train_loss = rows > 0 ? total / rows : std::nan("");
        if (!hold.empty()) s.holdout_loss = evaluate_cat(om, hold, hyper);
        rep.epochs.push_back(s);
    }
    return rep;
}

inline std::vector<const TrajectoryRecord*> record_ptrs(const std::vector<TrajectoryRecord>& recs) {
    std::vector<const TrajectoryRecord*> out;
    out.reserve(recs.size());
    for (const auto& r : recs) out.push_back(&r);
    return out;
}

inline TrainReport train_om(OpponentModel& om, const std::vector<TrajectoryRecord>& records, const OmHyper& hyper,
                            Rng& rng) {
    return train_om(om, record_ptrs(records), hyper, rng);
}

inline TrainReport train_om(OpponentModel& om, const TrajectoryStore& store, const OmHyper& hyper, Rng& rng) {
    return train_om(om, store.load_all(), hyper, rng);
}

// ---------------------------------------------------------------------------
// Online use during play

struct TraceRow {
    std::size_t episode = 0;
    std::size_t step = 0;
    std::size_t predicted = 0;
    std::size_t actual = 0;
    double cross_entropy = 0.0;
};

/// Runs the model alongside play. For each step call predict() with the
/// agent's observation (before the opponent's action is known), then
/// observe() with the completed event. After the final step of an episode
/// the episode is summarised and the learning tracker advances once.
class OmPlayState {
  public:
    OmPlayState(const OpponentModel& om, std::size_t episode_length)
        : om_(&om),
          T_(episode_length),
          h_(LstmState::zeros(1, om.dims().core)),
          u_(LstmState::zeros(1, om.dims().in_episode)) {}

    Vec predict(const Vec& obs, const std::optional<Vec>& oracle_action = std::nullopt) {
        if (pending_) throw std::logic_error("predict() called twice without observe()");
        if (obs.size() != om_->dims().obs_dim) throw ShapeError("observation width does not match opponent model");
        u_ = in_episode_step(*om_, u_, obs);
        last_pred_ = om::predict(*om_, u_, h_, oracle_action);
        last_obs_ = obs;
        pending_ = true;
        return last_pred_;
    }

    /// Records the realised event for the pending step; returns its cross-entropy.
    double observe(const Event& e) {
        if (!pending_) throw std::logic_error("observe() without a preceding predict()");
        if (e.obs != last_obs_) throw std::logic_error("event does not belong to the pending prediction");
        const bool last = events_.size() + 1 == T_;
        if (e.done != last) throw std::logic_error("episode boundary out of order");
        pending_ = false;
        const std::size_t actual = argmax(e.opp_action);
        TraceRow row{episode_, events_.size(), argmax(last_pred_), actual,
                     -std::log(std::max(last_pred_[actual], kLogFloor))};
        trace_.push_back(row);
        events_.push_back(e);
        if (last) close_episode();
        return row.cross_entropy;
    }

    const LstmState& representation() const { return h_; }
    const LstmState& in_episode() const { return u_; }
    const std::vector<TraceRow>& trace() const { return trace_; }
    std::size_t episode() const { return episode_; }
    std::size_t representation_updates() const { return h_updates_; }
    const OpponentModel& model() const { return *om_; }

  private:
    void close_episode() {
        if (om_->uses_representation()) {
            h_ = update_representation(*om_, h_, summarise_episode(*om_, events_, T_));
            ++h_updates_;
        }
        events_.clear();
        u_ = LstmState::zeros(1, om_->dims().in_episode);
        ++episode_;
    }

    const OpponentModel* om_;
    std::size_t T_;
    LstmState h_;
    LstmState u_;
    std::vector<Event> events_;
    Vec last_pred_;
    Vec last_obs_;
    bool pending_ = false;
    std::size_t episode_ = 0;
    std::size_t h_updates_ = 0;
    std::vector<TraceRow> trace_;
};

/// Offline replay of a recorded trajectory through the online play state.
inline std::vector<TraceRow> replay_trace(const OpponentModel& om, const TrajectoryRecord& rec) {
    OmPlayState play(om, rec.meta().episode_length);
    for (const auto& ep : rec.episodes())
        for (const auto& e : ep) {
            play.predict(e.obs, e.opp_action);
            play.observe(e);
        }
    return play.trace();
}

inline double mean_cross_entropy(const std::vector<TraceRow>& trace) {
    if (trace.empty()) return std::nan("");
    double s = 0;
    for (const auto& r : trace) s += r.cross_entropy;
    return s / static_cast<double>(trace.size());
}

inline constexpr const char* kTraceHeader = "episode,step,predicted_index,actual_index,cross_entropy";
inline constexpr const char* kTrainReportHeader = "epoch,train_loss,holdout_loss";

}  // namespace lemol::om

#endif
