// Command-line front end: run, train-om, evaluate, aggregate, plot, export.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "lemol/harness.hpp"

namespace fs = std::filesystem;
using namespace lemol;
using namespace lemol::harness;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

ExperimentConfig load_config(const std::string& path, const std::string& preset) {
    if (!path.empty()) {
        try {
            return parse_config(slurp(path));
        } catch (const ConfigError& e) {
            throw ConfigError(e.field(), e.line(), path + ": " + e.detail());
        }
    }
    return preset_by_name(preset);
}

void refuse_existing(const fs::path& p, bool force) {
    if (fs::exists(p) && !force) throw std::runtime_error(p.string() + " exists; pass --force to overwrite");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Opponent-learning-aware agents on the Keep-Away task"};
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "Collect, train the opponent model, then run evaluation trajectories");
    std::string cfg_path, preset = "desk", variant, seeds, out;
    std::size_t episodes = 0, workers = 0;
    bool force = false, dry = false;
    run->add_option("--config", cfg_path, "INI config file");
    run->add_option("--preset", preset, "Preset used when no config file is given (paper or desk)");
    run->add_option("--variant", variant, "Agent variant");
    run->add_option("--seeds", seeds, "Seeds, e.g. 0..4 or 1,5,9");
    run->add_option("--episodes", episodes, "Override the number of episodes per trajectory");
    run->add_option("--workers", workers, "Worker threads");
    run->add_option("--output", out, "Output directory (overrides LEMOL_OUT and the config)");
    run->add_flag("--force", force, "Overwrite existing results");
    run->add_flag("--print-config", dry, "Print the resolved config and exit");

    // train-om
    auto* train = app.add_subcommand("train-om", "Train an opponent model on a directory of trajectories");
    std::string store_dir, om_out, report_path, om_variant = "full";
    std::uint64_t om_seed = 0;
    train->add_option("--config", cfg_path, "INI config file (opponent-model settings)");
    train->add_option("--preset", preset, "Preset used when no config file is given");
    train->add_option("--store", store_dir, "Directory of .ltrj files")->required();
    train->add_option("--output", om_out, "Checkpoint to write")->required();
    train->add_option("--report", report_path, "Training report CSV");
    train->add_option("--model", om_variant, "full or ablated");
    train->add_option("--seed", om_seed, "Initialisation seed");
    train->add_flag("--force", force, "Overwrite existing files");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Replay an opponent model over held-out trajectories");
    std::string ckpt, trace_out;
    eval->add_option("--config", cfg_path, "INI config file (opponent-model dimensions)");
    eval->add_option("--preset", preset, "Preset used when no config file is given");
    eval->add_option("--checkpoint", ckpt, "Opponent-model checkpoint")->required();
    eval->add_option("--store", store_dir, "Directory of .ltrj files")->required();
    eval->add_option("--model", om_variant, "full, ablated or naive");
    eval->add_option("--trace", trace_out, "Per-step trace CSV to write");
    eval->add_flag("--force", force, "Overwrite existing files");

    // aggregate
    auto* agg = app.add_subcommand("aggregate", "Mean and standard deviation across metric CSVs");
    std::vector<std::string> inputs;
    std::string agg_out;
    std::size_t window = 1;
    agg->add_option("inputs", inputs, "Metric CSV files")->required();
    agg->add_option("--output", agg_out, "Aggregate CSV to write (stdout when absent)");
    agg->add_option("--smooth", window, "Trailing moving-average window applied per run");
    agg->add_flag("--force", force, "Overwrite existing files");

    // plot
    auto* plot = app.add_subcommand("plot", "Render aggregate CSVs as an SVG line chart");
    std::vector<std::string> labels;
    std::string metric = "mean_reward_defender", plot_out, title = "Keep-Away";
    std::size_t plot_window = 50;
    plot->add_option("inputs", inputs, "Aggregate CSV files")->required();
    plot->add_option("--label", labels, "Legend label per input (defaults to file stem)");
    plot->add_option("--metric", metric, "Metric column to plot");
    plot->add_option("--title", title, "Chart title");
    plot->add_option("--smooth", plot_window, "Trailing moving-average window in episodes");
    plot->add_option("--output", plot_out, "SVG file to write")->required();
    plot->add_flag("--force", force, "Overwrite existing files");

    // export
    auto* exp = app.add_subcommand("export", "Dump trajectories as JSON lines");
    std::string exp_out;
    exp->add_option("--store", store_dir, "Directory of .ltrj files")->required();
    exp->add_option("--output", exp_out, "JSONL file to write (stdout when absent)");
    exp->add_flag("--force", force, "Overwrite existing files");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            ExperimentConfig c = load_config(cfg_path, preset);
            if (!variant.empty()) c.variant = agent::parse_variant(variant);
            if (!seeds.empty()) c.seeds = parse_seeds(seeds);
            if (episodes) c.run.episodes = episodes;
            if (workers) c.workers = workers;
            c.output_dir = resolve_output_dir(c);
            if (!out.empty()) c.output_dir = out;
            validate(c);
            if (dry) {
                std::cout << render_config(c);
                return 0;
            }
            auto res = orchestrate(c, force, &std::cerr);
            std::cout << res.dir.string() << "\n";
        } else if (*train) {
            ExperimentConfig c = load_config(cfg_path, preset);
            refuse_existing(om_out, force);
            const auto v = om_variant == "full" ? om::OmVariant::full
                           : om_variant == "ablated"
                               ? om::OmVariant::ablated
                               : throw std::invalid_argument("--model must be full or ablated");
            const auto records = TrajectoryStore(store_dir).load_all();
            Rng rng(agent::SeedStreams::derive(om_seed).om);
            om::OpponentModel model(c.run.om_dims, v, rng);
            const auto rep = om::train_om(model, records, c.om, rng);
            const auto bytes = encode_checkpoint({{"om", &model.params()}});
            io::write_file(om_out, bytes);
            const std::string csv =
                train_report_csv(rep, metadata_line(config_hash(c), std::to_string(om_seed), git_blob_hash(bytes)));
            if (!report_path.empty()) {
                refuse_existing(report_path, force);
                write_text(report_path, csv);
            } else {
                std::cout << csv;
            }
        } else if (*eval) {
            ExperimentConfig c = load_config(cfg_path, preset);
            om::OmVariant v = om::OmVariant::full;
            if (om_variant == "ablated") v = om::OmVariant::ablated;
            else if (om_variant == "naive") v = om::OmVariant::naive;
            else if (om_variant != "full") throw std::invalid_argument("--model must be full, ablated or naive");
            Rng rng(0);
            om::OpponentModel model(c.run.om_dims, v, rng);
            const ParamStore loaded = load_om_checkpoint(ckpt);
            if (loaded.names() != model.params().names())
                throw std::runtime_error(ckpt + " does not match the configured opponent-model dimensions");
            model.params() = loaded;
            const auto records = TrajectoryStore(store_dir).load_all();
            if (records.empty()) throw std::runtime_error("no trajectories in " + store_dir);
            std::string trace = metadata_line(config_hash(c), "-", git_blob_hash(io::read_file(ckpt))) +
                                "run_id," + om::kTraceHeader + "\n";
            double total = 0;
            std::size_t n = 0;
            for (const auto& r : records) {
                const auto rows = om::replay_trace(model, r);
                const double ce = om::mean_cross_entropy(rows);
                std::cout << r.meta().run_id << " mean_cross_entropy=" << csv_number(ce) << "\n";
                for (const auto& row : rows) {
                    trace += r.meta().run_id + "," + std::to_string(row.episode) + "," + std::to_string(row.step) +
                             "," + std::to_string(row.predicted) + "," + std::to_string(row.actual) + "," +
                             csv_number(row.cross_entropy) + "\n";
                    total += row.cross_entropy;
                    ++n;
                }
            }
            std::cout << "overall mean_cross_entropy=" << csv_number(total / static_cast<double>(n)) << "\n";
            if (!trace_out.empty()) {
                refuse_existing(trace_out, force);
                write_text(trace_out, trace);
            }
        } else if (*agg) {
            std::vector<fs::path> files(inputs.begin(), inputs.end());
            const std::string csv = aggregate_csv(aggregate_runs(files, window));
            if (agg_out.empty()) {
                std::cout << csv;
            } else {
                refuse_existing(agg_out, force);
                write_text(agg_out, csv);
            }
        } else if (*plot) {
            if (!labels.empty() && labels.size() != inputs.size())
                throw std::invalid_argument("give one --label per input or none");
            std::vector<PlotSeries> series;
            for (std::size_t i = 0; i < inputs.size(); ++i)
                series.push_back(series_from_aggregate(read_csv_file(inputs[i]), metric,
                                                       labels.empty() ? fs::path(inputs[i]).stem().string() : labels[i]));
            refuse_existing(plot_out, force);
            write_text(plot_out, render_svg(series, title, metric, plot_window));
        } else if (*exp) {
            const auto records = TrajectoryStore(store_dir).load_all();
            if (exp_out.empty()) {
                for (const auto& r : records) export_jsonl(r, std::cout);
            } else {
                refuse_existing(exp_out, force);
                std::ofstream os(exp_out);
                for (const auto& r : records) export_jsonl(r, os);
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const io::FormatError& e) {
        std::cerr << "format error [" << e.section() << "]: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
