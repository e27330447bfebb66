#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <random>

#include "lemol/harness.hpp"

using namespace lemol;
using namespace lemol::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("lemol_harness_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

ExperimentConfig tiny_config(const fs::path& out) {
    ExperimentConfig c = desk_preset();
    c.run.episodes = 4;
    c.run.hyper.hidden = {6};
    c.run.hyper.batch = 16;
    c.run.hyper.explore_episodes = 1;
    c.run.om_dims.summary_hidden = 3;
    c.run.om_dims.embed = 4;
    c.run.om_dims.core = 3;
    c.run.om_dims.in_episode = 3;
    c.run.om_dims.head_hidden = 4;
    c.om.chunk_length = 50;
    c.om.epochs = 2;
    c.collect_trajectories = 2;
    c.seeds = {0, 1};
    c.output_dir = out.string();
    return c;
}

ExperimentConfig random_config(Rng& rng) {
    std::uniform_int_distribution<int> coin(0, 1), small(1, 50);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    ExperimentConfig c = coin(rng) ? desk_preset() : paper_preset();
    c.variant = agent::variant_table()[static_cast<std::size_t>(small(rng)) % agent::variant_table().size()].id;
    c.run.episodes = static_cast<std::size_t>(small(rng)) * 100;
    c.seeds.clear();
    for (int i = 0, n = small(rng) % 5 + 1; i < n; ++i) c.seeds.push_back(static_cast<std::uint64_t>(small(rng) * 3 + i));
    c.run.env.dt = unit(rng) * 0.2 + 1e-3;
    c.run.env.damping = unit(rng);
    c.run.hyper.gamma = unit(rng);
    c.run.hyper.tau = unit(rng) * 0.1;
    c.run.hyper.adam.lr = unit(rng) * 0.1 + 1e-6;
    c.run.hyper.hidden = {static_cast<std::size_t>(small(rng)), static_cast<std::size_t>(small(rng))};
    c.run.hyper.batch = static_cast<std::size_t>(small(rng));
    c.run.om_dims.embed = static_cast<std::size_t>(small(rng));
    c.om.holdout_fraction = unit(rng) * 0.9;
    c.om.adam.eps = unit(rng) * 1e-6 + 1e-12;
    c.output_dir = "out_" + std::to_string(small(rng));
    c.smoothing_window = static_cast<std::size_t>(small(rng));
    c.run.record_opponent_obs = agent::flags(c.variant).centralised && coin(rng);
    return c;
}

}  // namespace

TEST(Config, RoundTripsArbitraryValidConfigs) {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const ExperimentConfig c = random_config(rng);
        const std::string text = render_config(c);
        EXPECT_EQ(parse_config(text), c) << text;
        EXPECT_EQ(render_config(parse_config(text)), text);
    }
}

TEST(Config, PresetsCarryTheirValues) {
    const auto p = paper_preset();
    EXPECT_EQ(p.run.episodes, 61024u);
    EXPECT_EQ(p.run.hyper.batch, 1024u);
    EXPECT_EQ(p.run.hyper.explore_episodes, 1024);
    EXPECT_EQ(p.run.om_dims.embed, 128u);
    EXPECT_EQ(p.om.chunk_length, 500u);
    EXPECT_EQ(p.om.epochs, 50);
    EXPECT_DOUBLE_EQ(p.om.adam.lr, 0.001);
    const auto d = desk_preset();
    EXPECT_EQ(d.run.episodes, 2000u);
    EXPECT_EQ(d.run.hyper.hidden, (std::vector<std::size_t>{32, 32}));
    EXPECT_EQ(d.run.hyper.buffer_capacity, 100000u);
    EXPECT_EQ(d.om.chunk_length, 250u);
    EXPECT_EQ(d.collect_trajectories, 4u);
    EXPECT_EQ(d.om.epochs, 10);
    // a file naming only the preset yields the preset
    EXPECT_EQ(parse_config("[experiment]\npreset = desk\n"), d);
    EXPECT_EQ(parse_config(""), p);
}

TEST(Config, UnknownKeysAndBadValuesReportLineAndField) {
    try {
        parse_config("[experiment]\nvariant = lemol-ep\n\n[train]\nbatchsize = 4\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "train.batchsize");
        EXPECT_EQ(e.line(), 5);
        EXPECT_NE(std::string(e.what()).find("unknown key"), std::string::npos);
    }
    try {
        parse_config("[train]\ngamma = 0.9x\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "train.gamma");
        EXPECT_EQ(e.line(), 2);
    }
    try {
        parse_config("[experiment]\nvariant = nope\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "experiment.variant");
    }
    try {
        parse_config("[experiment]\nepisodes = 10\n[train]\nbatch = 999999999\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "train.batch");
        EXPECT_EQ(e.line(), 4);
    }
    EXPECT_THROW(parse_config("[bogus]\nx = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("[experiment]\nvariant = lemol-ep-dec\nrecord_opponent_obs = true\n"), ConfigError);
    EXPECT_THROW(parse_config("[experiment\n"), ConfigError);
}

TEST(Config, SeedForms) {
    EXPECT_EQ(parse_seeds("0..4"), (std::vector<std::uint64_t>{0, 1, 2, 3, 4}));
    EXPECT_EQ(parse_seeds("3, 1,9"), (std::vector<std::uint64_t>{3, 1, 9}));
    EXPECT_EQ(render_seeds({2, 3, 4}), "2..4");
    EXPECT_EQ(render_seeds({7}), "7");
    EXPECT_EQ(render_seeds({1, 5}), "1,5");
    EXPECT_THROW(parse_seeds("4..1"), std::invalid_argument);
    EXPECT_THROW(parse_seeds("a"), std::invalid_argument);
}

TEST(Hashes, MatchKnownDigests) {
    EXPECT_EQ(sha1_hex(std::string("abc")), "a9993e364706816aba3e25717850c26c9cd0d89d");
    const std::string hello = "hello\n";
    EXPECT_EQ(git_blob_hash(std::vector<std::uint8_t>(hello.begin(), hello.end())),
              "ce013625030ba8dba906f756967f9e9ca394464a");
    ExperimentConfig a = desk_preset(), b = desk_preset();
    b.output_dir = "elsewhere";
    b.workers = 4;
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.run.hyper.gamma = 0.9;
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Aggregate, SingleRunAndTwoRunFormula) {
    CsvTable a, b;
    a.header = b.header = {"episode", "x"};
    a.rows = {{0, 1}, {1, 5}};
    b.rows = {{0, 3}, {1, 5}};
    auto one = aggregate_tables({a}, {"a"});
    EXPECT_EQ(one.mean[0], (std::vector<double>{1, 5}));
    EXPECT_EQ(one.stddev[0], (std::vector<double>{0, 0}));
    auto two = aggregate_tables({a, b}, {"a", "b"});
    EXPECT_EQ(two.runs, 2u);
    EXPECT_DOUBLE_EQ(two.mean[0][0], 2.0);
    EXPECT_DOUBLE_EQ(two.stddev[0][0], std::sqrt(2.0));
    EXPECT_EQ(two.stddev[0][1], 0.0);
}

TEST(Aggregate, MatchesIndependentComputationOnRandomCsvs) {
    Rng rng(3);
    std::normal_distribution<double> nd;
    const fs::path dir = scratch("agg");
    fs::create_directories(dir);
    std::vector<fs::path> files;
    std::vector<std::vector<double>> vals(3);
    for (int f = 0; f < 3; ++f) {
        std::string s = "# config_hash=x seed=" + std::to_string(f) + " checkpoint_hash=y\nepisode,total_steps,r\n";
        for (int e = 0; e < 20; ++e) {
            vals[f].push_back(nd(rng));
            s += std::to_string(e) + "," + std::to_string(25 * (e + 1)) + "," + csv_number(vals[f].back()) + "\n";
        }
        files.push_back(dir / ("m" + std::to_string(f) + ".csv"));
        write_text(files.back(), s);
    }
    auto a = aggregate_runs(files);
    ASSERT_EQ(a.metrics, (std::vector<std::string>{"total_steps", "r"}));
    for (int e = 0; e < 20; ++e) {
        const double m = (vals[0][e] + vals[1][e] + vals[2][e]) / 3;
        double v = 0;
        for (int f = 0; f < 3; ++f) v += (vals[f][e] - m) * (vals[f][e] - m);
        EXPECT_NEAR(a.mean[1][e], m, 1e-12);
        EXPECT_NEAR(a.stddev[1][e], std::sqrt(v / 2), 1e-12);
        EXPECT_EQ(a.mean[0][e], 25 * (e + 1));
    }
    // identical files: zero spread
    auto same = aggregate_runs({files[0], files[0], files[0], files[0], files[0]});
    for (const auto& sd : same.stddev)
        for (double x : sd) EXPECT_EQ(x, 0.0);
    // smoothing is recorded and applied per run
    auto sm = aggregate_runs({files[0]}, 3);
    EXPECT_EQ(sm.smoothing_window, 3u);
    EXPECT_NEAR(sm.mean[1][5], (vals[0][3] + vals[0][4] + vals[0][5]) / 3, 1e-12);
    EXPECT_NE(aggregate_csv(sm).find("smoothing_window=3"), std::string::npos);
}

TEST(Aggregate, LengthMismatchListsFiles) {
    const fs::path dir = scratch("agg_bad");
    write_text(dir / "a.csv", "episode,r\n0,1\n1,2\n");
    write_text(dir / "b.csv", "episode,r\n0,1\n");
    try {
        aggregate_runs({dir / "a.csv", dir / "b.csv"});
        FAIL();
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("a.csv"), std::string::npos);
        EXPECT_NE(msg.find("b.csv"), std::string::npos);
    }
    EXPECT_THROW(aggregate_runs({}), std::invalid_argument);
}

TEST(Plot, EmbeddedTableParsesBackToCsvValues) {
    CsvTable a;
    a.header = {"episode", "r"};
    Rng rng(4);
    std::normal_distribution<double> nd;
    for (int e = 0; e < 30; ++e) a.rows.push_back({double(e), nd(rng)});
    CsvTable b = a;
    for (auto& r : b.rows) r[1] += 1.0;
    const std::string csv_a = aggregate_csv(aggregate_tables({a, b}, {"a", "b"}));
    std::istringstream is(csv_a);
    const CsvTable agg = read_csv(is);
    auto s = series_from_aggregate(agg, "r", "variant A");
    const std::string svg = render_svg({s, s}, "t", "r", 5);
    std::size_t window = 0;
    auto back = parse_svg_data(svg, &window);
    EXPECT_EQ(window, 5u);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].label, "variant A");
    for (std::size_t i = 0; i < agg.rows.size(); ++i) {
        EXPECT_EQ(back[0].x[i], agg.rows[i][0]);
        EXPECT_EQ(back[0].mean[i], agg.rows[i][agg.column("r_mean")]);
        EXPECT_EQ(back[0].stddev[i], agg.rows[i][agg.column("r_std")]);
    }
    EXPECT_NE(svg.find("<polyline"), std::string::npos);
    EXPECT_THROW(parse_svg_data("<svg></svg>"), std::runtime_error);
}

TEST(Orchestrate, EndToEndEmitsAllArtefactsAndIsByteReproducible) {
    const fs::path out1 = scratch("e2e1"), out2 = scratch("e2e2");
    ExperimentConfig c = tiny_config(out1);
    auto r1 = orchestrate(c, false);
    EXPECT_EQ(r1.collected.size(), 2u);
    ASSERT_TRUE(r1.om_report);
    EXPECT_EQ(r1.om_report->epochs.size(), 2u);
    const fs::path d = out1 / "lemol-ep";
    for (const char* f : {"config.ini", "om.ckpt", "om_train.csv", "seed_0/metrics.csv", "seed_0/trace.csv",
                          "seed_1/defender.ckpt", "seed_1/attacker.ckpt", "collect/metrics_1.csv",
                          "trajectories/lemol-ep_seed_1.ltrj"})
        EXPECT_TRUE(fs::exists(d / f)) << f;
    const auto table = read_csv_file(d / "seed_0/metrics.csv");
    ASSERT_EQ(table.metadata.size(), 1u);
    EXPECT_NE(table.metadata[0].find("config_hash=" + config_hash(c)), std::string::npos);
    EXPECT_NE(table.metadata[0].find("checkpoint_hash=" + git_blob_hash(io::read_file((d / "seed_0/defender.ckpt").string()))),
              std::string::npos);
    EXPECT_EQ(table.rows.size(), 4u);

    c.output_dir = out2.string();
    orchestrate(c, false);
    for (const char* f : {"seed_0/metrics.csv", "seed_1/metrics.csv", "seed_0/trace.csv", "om_train.csv"})
        EXPECT_EQ(slurp(d / f), slurp(out2 / "lemol-ep" / f)) << f;
    EXPECT_EQ(slurp(d / "trajectories/lemol-ep_seed_0.ltrj"), slurp(out2 / "lemol-ep/trajectories/lemol-ep_seed_0.ltrj"));
}

TEST(Orchestrate, RefusesToOverwriteWithoutForce) {
    const fs::path out = scratch("force");
    ExperimentConfig c = tiny_config(out);
    c.variant = agent::Variant::maddpg;
    c.seeds = {0};
    orchestrate(c, false);
    EXPECT_THROW(orchestrate(c, false), std::runtime_error);
    EXPECT_NO_THROW(orchestrate(c, true));
}

TEST(Orchestrate, DegeneratePhases) {
    const fs::path out = scratch("phases");
    ExperimentConfig c = tiny_config(out);
    c.seeds = {3};
    c.collect_trajectories = 0;
    auto full = orchestrate(c, false);
    EXPECT_TRUE(full.collected.empty());
    EXPECT_FALSE(full.om_report);
    c.variant = agent::Variant::lemol_ep_naive;
    auto naive = orchestrate(c, false);
    // untrained full model plays exactly as the naive baseline
    ASSERT_EQ(full.runs[0].data.size(), naive.runs[0].data.size());
    for (std::size_t i = 0; i < full.runs[0].data.size(); ++i) {
        EXPECT_EQ(full.runs[0].data[i].reward_defender, naive.runs[0].data[i].reward_defender);
        EXPECT_EQ(full.runs[0].data[i].om_cross_entropy, naive.runs[0].data[i].om_cross_entropy);
    }
    c.variant = agent::Variant::lemol_ep_oracle;
    c.collect_trajectories = 4;
    auto oracle = orchestrate(c, false);
    EXPECT_TRUE(oracle.collected.empty());
    EXPECT_FALSE(oracle.om_report);
    EXPECT_FALSE(fs::exists(out / "lemol-ep-oracle" / "collect"));
}

TEST(Orchestrate, PhaseFailuresNameThePhase) {
    const fs::path out = scratch("phase_err");
    ExperimentConfig c = tiny_config(out);
    c.collect_trajectories = 1;
    c.om.holdout_fraction = 0.2;
    c.run.hyper.batch = c.run.hyper.buffer_capacity + 1;
    try {
        orchestrate(c, false);
        FAIL();
    } catch (const ConfigError&) {
    }
    c = tiny_config(out);
    c.run.om_dims.obs_dim = 3;
    try {
        orchestrate(c, true);
        FAIL();
    } catch (const PhaseError& e) {
        EXPECT_EQ(e.phase(), "collect");
    }
}

TEST(Orchestrate, OutputDirectoryOverride) {
    const fs::path out = scratch("env_out");
    ExperimentConfig c = tiny_config("/nonexistent/should/not/be/used");
    c.variant = agent::Variant::maddpg;
    c.seeds = {0};
    ::setenv("LEMOL_OUT", out.c_str(), 1);
    EXPECT_EQ(resolve_output_dir(c), out.string());
    auto r = orchestrate(c, false);
    ::unsetenv("LEMOL_OUT");
    EXPECT_TRUE(fs::exists(out / "maddpg" / "seed_0" / "metrics.csv"));
    EXPECT_EQ(resolve_output_dir(c), c.output_dir);
}

TEST(Orchestrate, ParallelWorkersMatchSerial) {
    const fs::path a = scratch("serial"), b = scratch("parallel");
    ExperimentConfig c = tiny_config(a);
    c.variant = agent::Variant::lemol_ep_dec;
    c.seeds = {0, 1, 2};
    orchestrate(c, false);
    c.output_dir = b.string();
    c.workers = 3;
    orchestrate(c, false);
    for (int s = 0; s < 3; ++s) {
        const std::string f = "lemol-ep-dec/seed_" + std::to_string(s) + "/metrics.csv";
        EXPECT_EQ(slurp(a / f), slurp(b / f));
    }
}
