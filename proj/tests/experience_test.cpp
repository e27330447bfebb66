#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lemol/experience.hpp"

namespace lemol {
namespace {

Transition tagged(double r) {
    Transition t;
    t.reward = {r, -r};
    return t;
}

TEST(RingBuffer, EvictsOldestFirst) {
    RingBuffer<Transition> buf(3);
    for (int i = 0; i < 4; ++i) buf.add(tagged(i));
    EXPECT_EQ(buf.size(), 3u);
    EXPECT_EQ(buf.at(0).reward[0], 1.0);
    EXPECT_EQ(buf.at(2).reward[0], 3.0);
}

TEST(RingBuffer, HoldsLastCapacityItemsInOrder) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t cap = 1 + rng() % 20;
        const std::size_t n = rng() % 60;
        RingBuffer<int> buf(cap);
        for (std::size_t i = 0; i < n; ++i) buf.add(static_cast<int>(i));
        ASSERT_EQ(buf.size(), std::min(cap, n));
        for (std::size_t i = 0; i < buf.size(); ++i)
            EXPECT_EQ(buf.at(i), static_cast<int>(n - buf.size() + i));
    }
}

TEST(RingBuffer, SampleDrawsStoredItems) {
    RingBuffer<Transition> buf(8);
    for (int i = 0; i < 8; ++i) buf.add(tagged(10.0 + i));
    std::mt19937_64 rng(1);
    auto idx = buf.sample_indices(8, rng);
    Batch b = make_batch(buf, idx, 0, true);
    for (std::size_t r = 0; r < 8; ++r) {
        EXPECT_GE(b.reward[r], 10.0);
        EXPECT_LE(b.reward[r], 17.0);
    }
    EXPECT_THROW(buf.sample_indices(9, rng), std::logic_error);
}

TEST(RingBuffer, SamplingIsUniform) {
    RingBuffer<int> buf(10);
    for (int i = 0; i < 10; ++i) buf.add(i);
    std::mt19937_64 rng(123);
    std::map<std::size_t, int> freq;
    for (int draw = 0; draw < 10000; ++draw)
        for (std::size_t i : buf.sample_indices(10, rng)) ++freq[i];
    ASSERT_EQ(freq.size(), 10u);
    for (const auto& [_, c] : freq) {
        EXPECT_GE(c / 100000.0, 0.09);
        EXPECT_LE(c / 100000.0, 0.11);
    }
}

TEST(RingBuffer, SamplingReproducibleUnderSeed) {
    RingBuffer<int> buf(50);
    for (int i = 0; i < 50; ++i) buf.add(i);
    std::mt19937_64 a(5), b(5);
    EXPECT_EQ(buf.sample_indices(40, a), buf.sample_indices(40, b));
}

TEST(Batch, DecentralisedViewRefusesOpponentObservations) {
    RingBuffer<Transition> buf(4);
    Transition t;
    t.obs = {Vec{1, 2}, Vec{3, 4}};
    t.next_obs = t.obs;
    t.action = {Vec{1, 0}, Vec{0, 1}};
    t.next_action = t.action;
    buf.add(t);
    std::vector<std::size_t> idx{0};
    EXPECT_THROW(to_decentralised(make_batch(buf, idx, 0, true)), std::logic_error);
    DecentralisedBatch d = to_decentralised(make_batch(buf, idx, 0, false));
    EXPECT_EQ(d.obs.data(), (Vec{1, 2}));
    EXPECT_EQ(d.opp_act.data(), (Vec{0, 1}));
}

TrajectoryMeta small_meta(std::uint32_t T = 25, bool opp_obs = false) {
    TrajectoryMeta m;
    m.run_id = "run";
    m.variant = "lemol-ep";
    m.seed = 7;
    m.episode_length = T;
    m.obs_dim = 8;
    m.action_dim = 5;
    m.has_opp_obs = opp_obs;
    return m;
}

Event random_event(std::mt19937_64& rng, bool done, bool opp_obs) {
    std::normal_distribution<double> n(0.0, 1.0);
    Event e;
    e.obs.resize(8);
    for (auto& x : e.obs) x = n(rng);
    e.action = one_hot(rng() % 5, 5);
    e.reward = n(rng);
    e.opp_action = Vec{0.1, 0.2, 0.3, 0.15, 0.25};
    e.done = done;
    if (opp_obs) {
        e.opp_obs = Vec(8);
        for (auto& x : *e.opp_obs) x = n(rng);
    }
    return e;
}

TrajectoryRecord random_record(std::mt19937_64& rng, std::size_t episodes, std::uint32_t T, bool opp_obs) {
    TrajectoryRecord rec(small_meta(T, opp_obs));
    for (std::size_t k = 0; k < episodes; ++k) {
        for (std::uint32_t t = 0; t < T; ++t) rec.record_event(random_event(rng, t + 1 == T, opp_obs));
        rec.close_episode();
    }
    return rec;
}

TEST(Trajectory, EpisodeStructure) {
    std::mt19937_64 rng(1);
    TrajectoryRecord rec(small_meta());
    for (int t = 0; t < 24; ++t) rec.record_event(random_event(rng, false, false));
    EXPECT_THROW(rec.close_episode(), std::logic_error);
    rec.record_event(random_event(rng, true, false));
    EXPECT_THROW(rec.record_event(random_event(rng, true, false)), std::logic_error);
    rec.close_episode();
    EXPECT_EQ(rec.episode_count(), 1u);
    EXPECT_EQ(rec.event_count(), 25u);
}

TEST(Trajectory, DoneFlagOnlyOnLastStep) {
    std::mt19937_64 rng(1);
    TrajectoryRecord rec(small_meta(3));
    EXPECT_THROW(rec.record_event(random_event(rng, true, false)), std::logic_error);
}

TEST(TrajectoryFile, RoundTripsSmallEmptyAndLarge) {
    std::mt19937_64 rng(2);
    for (auto rec : {random_record(rng, 3, 25, false), TrajectoryRecord(small_meta()),
                     random_record(rng, 1000, 25, false)}) {
        auto bytes = encode_trajectory(rec);
        EXPECT_TRUE(decode_trajectory(bytes) == rec);
    }
}

TEST(TrajectoryFile, RoundTripPropertyOnRandomRecords) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const std::uint32_t T = 1 + static_cast<std::uint32_t>(rng() % 30);
        auto rec = random_record(rng, rng() % 12, T, trial % 2 == 0);
        rec.meta().run_id = "r" + std::to_string(rng());
        rec.meta().seed = rng();
        EXPECT_TRUE(decode_trajectory(encode_trajectory(rec)) == rec);
    }
}

TEST(TrajectoryFile, PayloadCorruptionIsDetected) {
    std::mt19937_64 rng(4);
    auto bytes = encode_trajectory(random_record(rng, 3, 25, false));
    auto bad = bytes;
    bad[bad.size() - 100] ^= 0x01;
    try {
        decode_trajectory(bad);
        FAIL();
    } catch (const io::FormatError& e) {
        EXPECT_EQ(e.section(), "episode 2");
        EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
    }
}

TEST(TrajectoryFile, StructuredErrors) {
    std::mt19937_64 rng(5);
    auto bytes = encode_trajectory(random_record(rng, 2, 5, false));
    auto magic = bytes;
    magic[1] = 'X';
    EXPECT_THROW(decode_trajectory(magic), io::FormatError);
    auto version = bytes;
    version[4] = 9;
    try {
        decode_trajectory(version);
        FAIL();
    } catch (const io::FormatError& e) {
        EXPECT_EQ(e.section(), "header");
    }
    auto meta = bytes;
    meta[12] ^= 0xFF;
    try {
        decode_trajectory(meta);
        FAIL();
    } catch (const io::FormatError& e) {
        EXPECT_EQ(e.section(), "metadata");
    }
    auto cut = bytes;
    cut.resize(cut.size() - 10);
    try {
        decode_trajectory(cut);
        FAIL();
    } catch (const io::FormatError& e) {
        EXPECT_EQ(e.section(), "episode 1");
    }
}

TEST(TrajectoryStore, WritesAndReadsDirectory) {
    std::mt19937_64 rng(6);
    auto dir = std::filesystem::temp_directory_path() / "lemol_store_test";
    std::filesystem::remove_all(dir);
    TrajectoryStore store(dir);
    auto a = random_record(rng, 2, 4, false);
    a.meta().run_id = "a";
    auto b = random_record(rng, 3, 4, false);
    b.meta().run_id = "b";
    store.write(b);
    store.write(a);
    auto all = store.load_all();
    ASSERT_EQ(all.size(), 2u);
    EXPECT_TRUE(all[0] == a);
    EXPECT_TRUE(all[1] == b);
    std::filesystem::remove_all(dir);
}

TEST(Jsonl, OneLinePerEventLosslessDoubles) {
    std::mt19937_64 rng(7);
    auto rec = random_record(rng, 2, 3, true);
    std::ostringstream os;
    export_jsonl(rec, os);
    std::istringstream is(os.str());
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        auto j = nlohmann::json::parse(line);
        const Event& e = rec.episodes()[j["episode"].get<std::size_t>()][j["t"].get<std::size_t>()];
        EXPECT_EQ(j["obs"].get<Vec>(), e.obs);
        EXPECT_EQ(j["reward"].get<double>(), e.reward);
        EXPECT_EQ(j["opp_obs"].get<Vec>(), *e.opp_obs);
        ++n;
    }
    EXPECT_EQ(n, 6u);
}

}  // namespace
}  // namespace lemol
