#ifndef LEMOL_EXPERIENCE_HPP
#define LEMOL_EXPERIENCE_HPP

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lemol/binary_io.hpp"
#include "lemol/tensor.hpp"

namespace lemol {

// ---------------------------------------------------------------------------
// Replay

/// Fixed-capacity ring; once full, each add evicts the oldest element.
template <class T>
class RingBuffer {
  public:
    explicit RingBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw std::invalid_argument("ring buffer capacity must be positive");
    }

    void add(T item) {
        if (items_.size() < capacity_) {
            items_.push_back(std::move(item));
        } else {
            items_[head_] = std::move(item);
            head_ = (head_ + 1) % capacity_;
        }
    }

    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return items_.empty(); }
    void clear() {
        items_.clear();
        head_ = 0;
    }

    /// i-th element in insertion order (0 = oldest retained).
    const T& at(std::size_t i) const {
        if (i >= items_.size()) throw std::out_of_range("ring buffer index");
        return items_[(head_ + i) % items_.size()];
    }

    /// Raw slot access; slots are a permutation of insertion order.
    const T& slot(std::size_t i) const { return items_[i]; }

    /// n uniform draws with replacement.
    template <class Urbg>
    std::vector<std::size_t> sample_indices(std::size_t n, Urbg& rng) const {
        if (items_.size() < n)
            throw std::logic_error("cannot sample " + std::to_string(n) + " items from a buffer holding " +
                                   std::to_string(items_.size()));
        std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
        std::vector<std::size_t> idx(n);
        for (auto& i : idx) i = pick(rng);
        return idx;
    }

  private:
    std::size_t capacity_;
    std::size_t head_ = 0;
    std::vector<T> items_;
};

/// One environment step seen from both seats (index 0 defender, 1 attacker),
/// plus the defender's opponent-model state at t and t+1.
struct Transition {
    std::array<Vec, 2> obs;
    std::array<Vec, 2> action;
    std::array<double, 2> reward{};
    std::array<Vec, 2> next_obs;
    bool done = false;
    // Opponent action executed at t+1 (zeros after the last step).
    std::array<Vec, 2> next_action;
    // Defender opponent-model data; empty when the defender has no model.
    Vec om_u, om_h, pred;
    Vec next_om_u, next_om_h, next_pred;
};

/// Centralised batch for one seat. Rows are sampled transitions.
struct Batch {
    Tensor obs, act, reward, next_obs, done;
    Tensor opp_act;
    std::optional<Tensor> opp_obs, next_opp_obs;
    Tensor next_opp_act;
    Tensor om_u, om_h, pred, next_om_u, next_om_h, next_pred;

    std::size_t size() const { return obs.rows(); }
};

/// Batch for decentralised training: there are no fields for the opponent's
/// observations, so no code path can read them.
struct DecentralisedBatch {
    Tensor obs, act, reward, next_obs, done;
    Tensor opp_act;
    Tensor next_opp_act;
    Tensor om_u, om_h, pred, next_om_u, next_om_h, next_pred;

    std::size_t size() const { return obs.rows(); }
};

namespace detail {
template <class Get>
Tensor gather(const RingBuffer<Transition>& buf, const std::vector<std::size_t>& idx, Get get) {
    std::vector<Vec> rows;
    rows.reserve(idx.size());
    for (std::size_t i : idx) rows.push_back(get(buf.slot(i)));
    if (!rows.empty() && rows.front().empty()) return Tensor(Shape{idx.size(), 0});
    return stack_rows(rows);
}
}  // namespace detail

inline Batch make_batch(const RingBuffer<Transition>& buf, const std::vector<std::size_t>& idx, std::size_t seat,
                        bool with_opponent_obs) {
    const std::size_t o = 1 - seat;
    using detail::gather;
    Batch b;
    b.obs = gather(buf, idx, [&](const Transition& t) { return t.obs[seat]; });
    b.act = gather(buf, idx, [&](const Transition& t) { return t.action[seat]; });
    b.reward = gather(buf, idx, [&](const Transition& t) { return Vec{t.reward[seat]}; });
    b.next_obs = gather(buf, idx, [&](const Transition& t) { return t.next_obs[seat]; });
    b.done = gather(buf, idx, [&](const Transition& t) { return Vec{t.done ? 1.0 : 0.0}; });
    b.opp_act = gather(buf, idx, [&](const Transition& t) { return t.action[o]; });
    b.next_opp_act = gather(buf, idx, [&](const Transition& t) { return t.next_action[o]; });
    if (with_opponent_obs) {
        b.opp_obs = gather(buf, idx, [&](const Transition& t) { return t.obs[o]; });
        b.next_opp_obs = gather(buf, idx, [&](const Transition& t) { return t.next_obs[o]; });
    }
    if (seat == 0) {
        b.om_u = gather(buf, idx, [](const Transition& t) { return t.om_u; });
        b.om_h = gather(buf, idx, [](const Transition& t) { return t.om_h; });
        b.pred = gather(buf, idx, [](const Transition& t) { return t.pred; });
        b.next_om_u = gather(buf, idx, [](const Transition& t) { return t.next_om_u; });
        b.next_om_h = gather(buf, idx, [](const Transition& t) { return t.next_om_h; });
        b.next_pred = gather(buf, idx, [](const Transition& t) { return t.next_pred; });
    }
    return b;
}

/// Drops to the decentralised view. Handing a batch that carries opponent
/// observations to decentralised training is a contract violation.
inline DecentralisedBatch to_decentralised(const Batch& b) {
    if (b.opp_obs || b.next_opp_obs)
        throw std::logic_error("decentralised training received a batch containing opponent observations");
    DecentralisedBatch d;
    d.obs = b.obs;
    d.act = b.act;
    d.reward = b.reward;
    d.next_obs = b.next_obs;
    d.done = b.done;
    d.opp_act = b.opp_act;
    d.next_opp_act = b.next_opp_act;
    d.om_u = b.om_u;
    d.om_h = b.om_h;
    d.pred = b.pred;
    d.next_om_u = b.next_om_u;
    d.next_om_h = b.next_om_h;
    d.next_pred = b.next_pred;
    return d;
}

// ---------------------------------------------------------------------------
// Learning trajectories

/// x_t: what the modelling agent saw at one step.
struct Event {
    Vec obs;
    Vec action;
    double reward = 0.0;
    Vec opp_action;
    bool done = false;
    std::optional<Vec> opp_obs;

    friend bool operator==(const Event&, const Event&) = default;
};

struct TrajectoryMeta {
    std::string run_id;
    std::string variant;
    std::uint64_t seed = 0;
    std::uint32_t episode_length = 25;
    std::uint32_t obs_dim = 8;
    std::uint32_t action_dim = 5;
    bool has_opp_obs = false;

    friend bool operator==(const TrajectoryMeta&, const TrajectoryMeta&) = default;
};

/// A whole learning run as an ordered list of fixed-length episodes.
class TrajectoryRecord {
  public:
    TrajectoryRecord() = default;
    explicit TrajectoryRecord(TrajectoryMeta meta) : meta_(std::move(meta)) {}

    const TrajectoryMeta& meta() const { return meta_; }
    TrajectoryMeta& meta() { return meta_; }

    void record_event(Event e) {
        if (open_.size() >= meta_.episode_length)
            throw std::logic_error("episode already holds " + std::to_string(meta_.episode_length) + " events");
        if (e.obs.size() != meta_.obs_dim || e.action.size() != meta_.action_dim ||
            e.opp_action.size() != meta_.action_dim)
            throw ShapeError("event dimensions do not match trajectory metadata");
        if (e.opp_obs.has_value() != meta_.has_opp_obs || (e.opp_obs && e.opp_obs->size() != meta_.obs_dim))
            throw ShapeError("event opponent observation does not match trajectory metadata");
        const bool last = open_.size() + 1 == meta_.episode_length;
        if (e.done != last) throw std::logic_error("done flag must be set exactly on the final step of an episode");
        open_.push_back(std::move(e));
    }

    void close_episode() {
        if (open_.size() != meta_.episode_length)
            throw std::logic_error("cannot close an episode with " + std::to_string(open_.size()) + " of " +
                                   std::to_string(meta_.episode_length) + " events");
        episodes_.push_back(std::move(open_));
        open_.clear();
    }

    /// Appends an already complete episode.
    void add_episode(std::vector<Event> ep) {
        if (!open_.empty()) throw std::logic_error("add_episode with an open episode pending");
        for (auto& e : ep) record_event(std::move(e));
        close_episode();
    }

    const std::vector<std::vector<Event>>& episodes() const { return episodes_; }
    std::size_t episode_count() const { return episodes_.size(); }
    std::size_t open_events() const { return open_.size(); }
    std::size_t event_count() const { return episodes_.size() * meta_.episode_length; }

    friend bool operator==(const TrajectoryRecord& a, const TrajectoryRecord& b) {
        return a.meta_ == b.meta_ && a.episodes_ == b.episodes_ && a.open_ == b.open_;
    }

  private:
    TrajectoryMeta meta_;
    std::vector<std::vector<Event>> episodes_;
    std::vector<Event> open_;
};

// "LTRJ" | u16 version | metadata block + crc | per episode: u32 count,
// events, crc32 of count+events.
inline constexpr char kTrajectoryMagic[4] = {'L', 'T', 'R', 'J'};
inline constexpr std::uint16_t kTrajectoryVersion = 1;

inline std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
    return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), p, static_cast<uInt>(n)));
}

inline std::vector<std::uint8_t> encode_trajectory(const TrajectoryRecord& rec) {
    if (rec.open_events() != 0) throw std::logic_error("cannot persist a trajectory with an unclosed episode");
    const TrajectoryMeta& m = rec.meta();
    std::vector<std::uint8_t> out;
    io::Writer w(out);
    w.bytes(kTrajectoryMagic, 4);
    w.u16(kTrajectoryVersion);

    std::vector<std::uint8_t> meta;
    io::Writer mw(meta);
    mw.str(m.run_id);
    mw.str(m.variant);
    mw.u64(m.seed);
    mw.u32(m.episode_length);
    mw.u32(m.obs_dim);
    mw.u32(m.action_dim);
    mw.u8(m.has_opp_obs ? 1 : 0);
    mw.u64(rec.episode_count());
    w.u32(static_cast<std::uint32_t>(meta.size()));
    w.bytes(meta.data(), meta.size());
    w.u32(crc32_of(meta.data(), meta.size()));

    std::vector<std::uint8_t> ep;
    for (const auto& episode : rec.episodes()) {
        ep.clear();
        io::Writer ew(ep);
        ew.u32(static_cast<std::uint32_t>(episode.size()));
        for (const auto& e : episode) {
            for (double x : e.obs) ew.f64(x);
            for (double x : e.action) ew.f64(x);
            ew.f64(e.reward);
            for (double x : e.opp_action) ew.f64(x);
            ew.u8(e.done ? 1 : 0);
            if (m.has_opp_obs)
                for (double x : *e.opp_obs) ew.f64(x);
        }
        w.bytes(ep.data(), ep.size());
        w.u32(crc32_of(ep.data(), ep.size()));
    }
    return out;
}

inline TrajectoryRecord decode_trajectory(const std::vector<std::uint8_t>& bytes) {
    io::Reader r(bytes.data(), bytes.size());
    r.set_section("header");
    if (std::memcmp(r.take(4), kTrajectoryMagic, 4) != 0) r.fail("bad magic (not an LTRJ trajectory)");
    const std::uint16_t version = r.u16();
    if (version != kTrajectoryVersion) r.fail("unsupported version " + std::to_string(version));

    r.set_section("metadata");
    const std::uint32_t meta_len = r.u32();
    const std::uint8_t* meta_bytes = r.take(meta_len);
    if (r.u32() != crc32_of(meta_bytes, meta_len)) r.fail("checksum mismatch");
    io::Reader mr(meta_bytes, meta_len);
    mr.set_section("metadata");
    TrajectoryMeta m;
    m.run_id = mr.str();
    m.variant = mr.str();
    m.seed = mr.u64();
    m.episode_length = mr.u32();
    m.obs_dim = mr.u32();
    m.action_dim = mr.u32();
    m.has_opp_obs = mr.u8() != 0;
    const std::uint64_t episodes = mr.u64();
    if (m.episode_length == 0) mr.fail("episode length is zero");

    TrajectoryRecord rec(m);
    const std::size_t event_bytes =
        8 * (m.obs_dim + 2 * m.action_dim + 1 + (m.has_opp_obs ? m.obs_dim : 0)) + 1;
    for (std::uint64_t k = 0; k < episodes; ++k) {
        r.set_section("episode " + std::to_string(k));
        const std::uint8_t* start = r.cursor();
        const std::uint32_t n = r.u32();
        if (n != m.episode_length)
            r.fail("holds " + std::to_string(n) + " events, expected " + std::to_string(m.episode_length));
        const std::uint8_t* payload = r.take(static_cast<std::size_t>(n) * event_bytes);
        const std::size_t span = static_cast<std::size_t>(payload - start) + static_cast<std::size_t>(n) * event_bytes;
        if (r.u32() != crc32_of(start, span)) r.fail("checksum mismatch");
        io::Reader er(payload, static_cast<std::size_t>(n) * event_bytes);
        er.set_section(r.section());
        std::vector<Event> ep(n);
        for (auto& e : ep) {
            e.obs.resize(m.obs_dim);
            for (auto& x : e.obs) x = er.f64();
            e.action.resize(m.action_dim);
            for (auto& x : e.action) x = er.f64();
            e.reward = er.f64();
            e.opp_action.resize(m.action_dim);
            for (auto& x : e.opp_action) x = er.f64();
            e.done = er.u8() != 0;
            if (m.has_opp_obs) {
                e.opp_obs = Vec(m.obs_dim);
                for (auto& x : *e.opp_obs) x = er.f64();
            }
        }
        try {
            rec.add_episode(std::move(ep));
        } catch (const std::exception& ex) {
            r.fail(ex.what());
        }
    }
    r.set_section("trailer");
    if (r.remaining() != 0) r.fail("unexpected trailing bytes");
    return rec;
}

inline void store_write(const std::string& path, const TrajectoryRecord& rec) {
    io::write_file(path, encode_trajectory(rec));
}

inline TrajectoryRecord store_read(const std::string& path) { return decode_trajectory(io::read_file(path)); }

/// A directory of .ltrj files, read back in file-name order.
class TrajectoryStore {
  public:
    explicit TrajectoryStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

    const std::filesystem::path& dir() const { return dir_; }

    std::filesystem::path write(const TrajectoryRecord& rec) const {
        std::filesystem::create_directories(dir_);
        auto path = dir_ / (rec.meta().run_id + ".ltrj");
        store_write(path.string(), rec);
        return path;
    }

    std::vector<std::filesystem::path> files() const {
        std::vector<std::filesystem::path> out;
        if (!std::filesystem::exists(dir_)) return out;
        for (const auto& e : std::filesystem::directory_iterator(dir_))
            if (e.path().extension() == ".ltrj") out.push_back(e.path());
        std::sort(out.begin(), out.end());
        return out;
    }

    std::vector<TrajectoryRecord> load_all() const {
        std::vector<TrajectoryRecord> out;
        for (const auto& p : files()) out.push_back(store_read(p.string()));
        return out;
    }

  private:
    std::filesystem::path dir_;
};

/// One JSON object per event, doubles written at round-trip precision.
inline void export_jsonl(const TrajectoryRecord& rec, std::ostream& os) {
    for (std::size_t k = 0; k < rec.episodes().size(); ++k) {
        const auto& ep = rec.episodes()[k];
        for (std::size_t t = 0; t < ep.size(); ++t) {
            const Event& e = ep[t];
            nlohmann::json j = {{"run_id", rec.meta().run_id},
                                {"episode", k},
                                {"t", t},
                                {"obs", e.obs},
                                {"action", e.action},
                                {"reward", e.reward},
                                {"opp_action", e.opp_action},
                                {"done", e.done}};
            if (e.opp_obs) j["opp_obs"] = *e.opp_obs;
            os << j.dump() << '\n';
        }
    }
}

}  // namespace lemol

#endif
