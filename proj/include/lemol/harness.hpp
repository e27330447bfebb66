#ifndef LEMOL_HARNESS_HPP
#define LEMOL_HARNESS_HPP

#include <openssl/evp.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "lemol/config.hpp"

namespace lemol::harness {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Hashes

inline std::string sha1_hex(const void* data, std::size_t n) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data, n, md, &len, EVP_sha1(), nullptr) != 1) throw std::runtime_error("SHA-1 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

inline std::string sha1_hex(const std::string& s) { return sha1_hex(s.data(), s.size()); }

/// Same digest `git hash-object` gives for a file with these contents.
inline std::string git_blob_hash(const std::vector<std::uint8_t>& bytes) {
    std::string buf = "blob " + std::to_string(bytes.size());
    buf.push_back('\0');
    buf.append(bytes.begin(), bytes.end());
    return sha1_hex(buf);
}

/// Hash of everything that can change results; output location and worker
/// count are excluded.
inline std::string config_hash(const ExperimentConfig& c) {
    ExperimentConfig k = c;
    k.output_dir = "-";
    k.workers = 1;
    return sha1_hex(render_config(k));
}

// ---------------------------------------------------------------------------
// CSV

inline std::string csv_number(double v) { return std::isnan(v) ? "nan" : render_double(v); }

inline double csv_parse_number(const std::string& s) {
    if (s == "nan") return std::nan("");
    return parse_double(s);
}

struct CsvTable {
    std::vector<std::string> metadata;  // comment lines without the leading "# "
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw std::invalid_argument("no column '" + name + "'");
    }
};

inline CsvTable read_csv(std::istream& is, const std::string& label = "csv") {
    CsvTable t;
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
        ++n;
        if (line.empty()) continue;
        if (line.rfind("#", 0) == 0) {
            t.metadata.push_back(line.size() > 1 && line[1] == ' ' ? line.substr(2) : line.substr(1));
            continue;
        }
        if (t.header.empty()) {
            t.header = split(line, ',');
            continue;
        }
        const auto cells = split(line, ',');
        if (cells.size() != t.header.size())
            throw std::runtime_error(label + ":" + std::to_string(n) + ": expected " + std::to_string(t.header.size()) +
                                     " cells, found " + std::to_string(cells.size()));
        std::vector<double> row;
        for (const auto& c : cells) {
            try {
                row.push_back(csv_parse_number(c));
            } catch (const std::exception&) {
                throw std::runtime_error(label + ":" + std::to_string(n) + ": bad number '" + c + "'");
            }
        }
        t.rows.push_back(std::move(row));
    }
    if (t.header.empty()) throw std::runtime_error(label + ": missing header row");
    return t;
}

inline CsvTable read_csv_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return read_csv(in, p.string());
}

inline void write_text(const fs::path& p, const std::string& s) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << s;
    if (!out) throw std::runtime_error("write failed for " + p.string());
}

inline std::string metadata_line(const std::string& cfg_hash, const std::string& seed, const std::string& ckpt_hash,
                                 const std::string& extra = "") {
    std::string s = "# config_hash=" + cfg_hash + " seed=" + seed + " checkpoint_hash=" + ckpt_hash;
    if (!extra.empty()) s += " " + extra;
    return s + "\n";
}

inline std::string metrics_csv(const std::vector<agent::EpisodeMetrics>& ms, const std::string& meta) {
    std::string s = meta + agent::kMetricsHeader + "\n";
    for (const auto& m : ms)
        s += std::to_string(m.episode) + "," + std::to_string(m.total_steps) + "," + csv_number(m.reward_defender) +
             "," + csv_number(m.reward_attacker) + "," + csv_number(m.om_cross_entropy) + "," +
             csv_number(m.critic_loss) + "," + csv_number(m.policy_loss) + "\n";
    return s;
}

inline std::string trace_csv(const std::vector<om::TraceRow>& rows, const std::string& meta) {
    std::string s = meta + om::kTraceHeader + "\n";
    for (const auto& r : rows)
        s += std::to_string(r.episode) + "," + std::to_string(r.step) + "," + std::to_string(r.predicted) + "," +
             std::to_string(r.actual) + "," + csv_number(r.cross_entropy) + "\n";
    return s;
}

inline std::string train_report_csv(const om::TrainReport& rep, const std::string& meta) {
    std::string s = meta + om::kTrainReportHeader + "\n";
    for (const auto& e : rep.epochs)
        s += std::to_string(e.epoch) + "," + csv_number(e.train_loss) + "," + csv_number(e.holdout_loss) + "\n";
    return s;
}

// ---------------------------------------------------------------------------
// Orchestration: collect -> train the opponent model -> evaluate

class PhaseError : public std::runtime_error {
  public:
    PhaseError(std::string phase, const std::string& what)
        : std::runtime_error("phase " + phase + ": " + what), phase_(std::move(phase)) {}
    const std::string& phase() const { return phase_; }

  private:
    std::string phase_;
};

/// LEMOL_OUT, when set, replaces the configured output directory.
inline std::string resolve_output_dir(const ExperimentConfig& c) {
    if (const char* env = std::getenv("LEMOL_OUT"); env && *env) return env;
    return c.output_dir;
}

/// Seeds for the collection runs, disjoint from small evaluation seeds.
inline std::uint64_t collection_seed(std::size_t m) { return 0xC0'11EC'7000'0000ULL + m; }

inline void prepare_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force) throw std::runtime_error(dir.string() + " already holds results; pass --force to overwrite");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads. The first
/// exception is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next++) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

struct RunOutput {
    std::uint64_t seed = 0;
    fs::path metrics;
    std::vector<agent::EpisodeMetrics> data;
};

struct OrchestrateResult {
    fs::path dir;
    std::vector<fs::path> collected;
    std::optional<om::TrainReport> om_report;
    fs::path om_checkpoint;
    std::vector<RunOutput> runs;
};

inline void log_line(std::ostream* log, std::mutex& mu, const std::string& s) {
    if (!log) return;
    std::lock_guard lock(mu);
    *log << s << std::endl;
}

/// Layout under <out>/<variant>/:
///   config.ini, collect/*.ltrj, collect/metrics_<m>.csv,
///   om.ckpt, om_train.csv, trajectories/*.ltrj,
///   seed_<s>/{metrics.csv, trace.csv, defender.ckpt, attacker.ckpt}
inline OrchestrateResult orchestrate(const ExperimentConfig& cfg, bool force, std::ostream* log = nullptr) {
    validate(cfg);
    const std::string hash = config_hash(cfg);
    OrchestrateResult res;
    res.dir = fs::path(resolve_output_dir(cfg)) / agent::to_string(cfg.variant);
    prepare_dir(res.dir, force);
    write_text(res.dir / "config.ini", render_config(cfg));
    std::mutex mu;

    const bool trains = agent::needs_om_training(cfg.variant) && cfg.collect_trajectories > 0;
    if (trains) {
        try {
            TrajectoryStore store(res.dir / "collect");
            res.collected.resize(cfg.collect_trajectories);
            parallel_for(cfg.collect_trajectories, cfg.workers, [&](std::size_t m) {
                const auto seed = collection_seed(m);
                auto r = agent::run_trajectory(cfg.variant, cfg.run, seed, nullptr, "collect_" + std::to_string(m));
                res.collected[m] = store.write(r.record);
                write_text(res.dir / "collect" / ("metrics_" + std::to_string(m) + ".csv"),
                           metrics_csv(r.metrics, metadata_line(hash, std::to_string(seed),
                                                                git_blob_hash(r.defender_checkpoint))));
                log_line(log, mu, "collect: trajectory " + std::to_string(m) + " done");
            });
        } catch (const std::exception& e) {
            throw PhaseError("collect", e.what());
        }
    }

    std::optional<ParamStore> trained;
    if (trains) {
        try {
            TrajectoryStore store(res.dir / "collect");
            const auto records = store.load_all();
            if (records.size() != cfg.collect_trajectories)
                throw std::runtime_error("expected " + std::to_string(cfg.collect_trajectories) +
                                         " collected trajectories, found " + std::to_string(records.size()));
            Rng rng(agent::SeedStreams::derive(collection_seed(cfg.collect_trajectories)).om);
            om::OpponentModel model(cfg.run.om_dims, *agent::flags(cfg.variant).om, rng);
            res.om_report = om::train_om(model, records, cfg.om, rng);
            const auto bytes = encode_checkpoint({{"om", &model.params()}});
            res.om_checkpoint = res.dir / "om.ckpt";
            io::write_file(res.om_checkpoint.string(), bytes);
            write_text(res.dir / "om_train.csv",
                       train_report_csv(*res.om_report, metadata_line(hash, "-", git_blob_hash(bytes))));
            trained = model.params();
            log_line(log, mu, "train-om: final train loss " + csv_number(res.om_report->epochs.back().train_loss));
        } catch (const std::exception& e) {
            throw PhaseError("train-om", e.what());
        }
    }

    try {
        TrajectoryStore store(res.dir / "trajectories");
        res.runs.resize(cfg.seeds.size());
        parallel_for(cfg.seeds.size(), cfg.workers, [&](std::size_t i) {
            const auto seed = cfg.seeds[i];
            auto r = agent::run_trajectory(cfg.variant, cfg.run, seed, trained ? &*trained : nullptr,
                                           std::string(agent::to_string(cfg.variant)) + "_seed_" + std::to_string(seed));
            const fs::path sd = res.dir / ("seed_" + std::to_string(seed));
            fs::create_directories(sd);
            io::write_file((sd / "defender.ckpt").string(), r.defender_checkpoint);
            io::write_file((sd / "attacker.ckpt").string(), r.attacker_checkpoint);
            const std::string meta = metadata_line(hash, std::to_string(seed), git_blob_hash(r.defender_checkpoint));
            write_text(sd / "metrics.csv", metrics_csv(r.metrics, meta));
            if (!r.trace.empty()) write_text(sd / "trace.csv", trace_csv(r.trace, meta));
            store.write(r.record);
            res.runs[i] = {seed, sd / "metrics.csv", std::move(r.metrics)};
            log_line(log, mu, "evaluate: seed " + std::to_string(seed) + " done");
        });
    } catch (const std::exception& e) {
        throw PhaseError("evaluate", e.what());
    }
    return res;
}

/// Loads the opponent model written by orchestrate or train-om.
inline ParamStore load_om_checkpoint(const fs::path& p) {
    auto stores = load_checkpoint(p.string());
    auto it = stores.find("om");
    if (it == stores.end()) throw std::runtime_error(p.string() + " holds no opponent model");
    return it->second;
}

// ---------------------------------------------------------------------------
// Aggregation

struct AggregateCurve {
    std::vector<std::string> metrics;  // column names aggregated
    std::vector<double> episode;
    std::vector<std::vector<double>> mean;  // [metric][episode]
    std::vector<std::vector<double>> stddev;
    std::size_t runs = 0;
    std::size_t smoothing_window = 1;
};

/// Trailing moving average over the last `window` finite values.
inline std::vector<double> smooth(const std::vector<double>& xs, std::size_t window) {
    if (window <= 1) return xs;
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double s = 0;
        std::size_t n = 0;
        for (std::size_t j = i + 1 > window ? i + 1 - window : 0; j <= i; ++j)
            if (!std::isnan(xs[j])) s += xs[j], ++n;
        out[i] = n ? s / static_cast<double>(n) : std::nan("");
    }
    return out;
}

inline AggregateCurve aggregate_tables(const std::vector<CsvTable>& tables, const std::vector<std::string>& labels,
                                       std::size_t window = 1) {
    if (tables.empty()) throw std::invalid_argument("aggregate needs at least one CSV");
    const std::size_t len = tables.front().rows.size();
    bool mismatch = false;
    for (const auto& t : tables) mismatch = mismatch || t.rows.size() != len || t.header != tables.front().header;
    if (mismatch) {
        std::string msg = "runs differ in length or columns:";
        for (std::size_t i = 0; i < tables.size(); ++i)
            msg += " " + labels[i] + "(" + std::to_string(tables[i].rows.size()) + " rows)";
        throw std::invalid_argument(msg);
    }
    AggregateCurve a;
    a.runs = tables.size();
    a.smoothing_window = std::max<std::size_t>(1, window);
    const auto& header = tables.front().header;
    const std::size_t ep = tables.front().column("episode");
    for (const auto& r : tables.front().rows) a.episode.push_back(r[ep]);
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == "episode") continue;
        a.metrics.push_back(header[c]);
        std::vector<std::vector<double>> series;
        for (const auto& t : tables) {
            std::vector<double> s;
            for (const auto& r : t.rows) s.push_back(r[c]);
            series.push_back(smooth(s, a.smoothing_window));
        }
        std::vector<double> mean(len), sd(len);
        const double n = static_cast<double>(tables.size());
        for (std::size_t i = 0; i < len; ++i) {
            // shifted by the first run so identical runs give exactly zero spread
            const double x0 = series.front()[i];
            double s = 0;
            for (const auto& x : series) s += x[i] - x0;
            mean[i] = x0 + s / n;
            double ss = 0;
            for (const auto& x : series) ss += (x[i] - mean[i]) * (x[i] - mean[i]);
            sd[i] = tables.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
        }
        a.mean.push_back(std::move(mean));
        a.stddev.push_back(std::move(sd));
    }
    return a;
}

inline AggregateCurve aggregate_runs(const std::vector<fs::path>& files, std::size_t window = 1) {
    std::vector<CsvTable> tables;
    std::vector<std::string> labels;
    for (const auto& f : files) {
        tables.push_back(read_csv_file(f));
        labels.push_back(f.string());
    }
    return aggregate_tables(tables, labels, window);
}

inline std::string aggregate_csv(const AggregateCurve& a) {
    std::string s = "# runs=" + std::to_string(a.runs) + " smoothing_window=" + std::to_string(a.smoothing_window) +
                    " std=sample\nepisode";
    for (const auto& m : a.metrics) s += "," + m + "_mean," + m + "_std";
    s += "\n";
    for (std::size_t i = 0; i < a.episode.size(); ++i) {
        s += csv_number(a.episode[i]);
        for (std::size_t m = 0; m < a.metrics.size(); ++m)
            s += "," + csv_number(a.mean[m][i]) + "," + csv_number(a.stddev[m][i]);
        s += "\n";
    }
    return s;
}

// ---------------------------------------------------------------------------
// SVG plots

struct PlotSeries {
    std::string label;
    std::vector<double> x, mean, stddev;
};

inline PlotSeries series_from_aggregate(const CsvTable& t, const std::string& metric, const std::string& label) {
    PlotSeries s;
    s.label = label;
    const auto ci = t.column("episode"), mi = t.column(metric + "_mean"), si = t.column(metric + "_std");
    for (const auto& r : t.rows) {
        s.x.push_back(r[ci]);
        s.mean.push_back(r[mi]);
        s.stddev.push_back(r[si]);
    }
    return s;
}

/// Line chart of mean +- one standard deviation per series. The source
/// values are embedded in a comment block so the figure can be checked
/// against its data; lines are drawn after a trailing moving average of
/// `window` episodes.
inline std::string render_svg(const std::vector<PlotSeries>& series, const std::string& title,
                              const std::string& y_label, std::size_t window) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
    const double W = 720, H = 440, L = 70, R = 170, Tm = 40, B = 50;
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    std::vector<std::vector<double>> sm(series.size()), ss(series.size());
    for (std::size_t k = 0; k < series.size(); ++k) {
        sm[k] = smooth(series[k].mean, window);
        ss[k] = smooth(series[k].stddev, window);
        for (std::size_t i = 0; i < series[k].x.size(); ++i) {
            if (std::isnan(sm[k][i])) continue;
            x0 = std::min(x0, series[k].x[i]);
            x1 = std::max(x1, series[k].x[i]);
            y0 = std::min(y0, sm[k][i] - ss[k][i]);
            y1 = std::max(y1, sm[k][i] + ss[k][i]);
        }
    }
    if (!(x1 > x0)) x0 -= 0.5, x1 += 0.5;
    if (!(y1 > y0)) y0 -= 0.5, y1 += 0.5;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - Tm - B); };
    auto num = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.2f", v);
        return std::string(b);
    };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << " " << H << "\">\n";
    o << "<!-- lemol-plot-data\nsmoothing_window=" << window << "\n";
    for (const auto& s : series) {
        o << "series=" << s.label << "\nx,mean,std\n";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            o << csv_number(s.x[i]) << "," << csv_number(s.mean[i]) << "," << csv_number(s.stddev[i]) << "\n";
    }
    o << "-->\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
      << title << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << Tm << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
        o << "<text x=\"" << num(px(xv)) << "\" y=\"" << H - B + 18
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << render_double(std::round(xv))
          << "</text>\n";
        o << "<text x=\"" << L - 6 << "\" y=\"" << num(py(yv) + 4)
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(yv) << "</text>\n";
    }
    o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">episode</text>\n";
    o << "<text x=\"16\" y=\"" << (Tm + H - B) / 2 << "\" transform=\"rotate(-90 16 " << (Tm + H - B) / 2
      << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << y_label << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* col = palette[k % 7];
        std::string band_hi, band_lo, line;
        for (std::size_t i = 0; i < series[k].x.size(); ++i) {
            if (std::isnan(sm[k][i])) continue;
            const std::string xs = num(px(series[k].x[i]));
            line += xs + "," + num(py(sm[k][i])) + " ";
            band_hi += xs + "," + num(py(sm[k][i] + ss[k][i])) + " ";
            band_lo = xs + "," + num(py(sm[k][i] - ss[k][i])) + " " + band_lo;
        }
        o << "<polygon points=\"" << band_hi << band_lo << "\" fill=\"" << col << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
        o << "<polyline points=\"" << line << "\" fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\"/>\n";
        o << "<text x=\"" << W - R + 10 << "\" y=\"" << Tm + 16 * (k + 1) << "\" fill=\"" << col
          << "\" font-family=\"sans-serif\" font-size=\"12\">" << series[k].label << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

/// Reads back the data block embedded by render_svg.
inline std::vector<PlotSeries> parse_svg_data(const std::string& svg, std::size_t* window = nullptr) {
    const auto a = svg.find("<!-- lemol-plot-data\n");
    const auto b = svg.find("-->", a);
    if (a == std::string::npos || b == std::string::npos) throw std::runtime_error("svg carries no data block");
    std::istringstream is(svg.substr(a, b - a));
    std::string line;
    std::getline(is, line);
    std::vector<PlotSeries> out;
    while (std::getline(is, line)) {
        if (line.rfind("smoothing_window=", 0) == 0) {
            if (window) *window = parse_uint(line.substr(17));
        } else if (line.rfind("series=", 0) == 0) {
            out.push_back({line.substr(7), {}, {}, {}});
        } else if (line == "x,mean,std" || line.empty()) {
        } else {
            if (out.empty()) throw std::runtime_error("svg data row before any series");
            const auto c = split(line, ',');
            if (c.size() != 3) throw std::runtime_error("bad svg data row '" + line + "'");
            out.back().x.push_back(csv_parse_number(c[0]));
            out.back().mean.push_back(csv_parse_number(c[1]));
            out.back().stddev.push_back(csv_parse_number(c[2]));
        }
    }
    return out;
}

}  // namespace lemol::harness

#endif
