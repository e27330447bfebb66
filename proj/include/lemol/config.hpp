#ifndef LEMOL_CONFIG_HPP
#define LEMOL_CONFIG_HPP

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdio>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lemol/lemol_agent.hpp"

namespace lemol::harness {

struct ExperimentConfig {
    std::string preset = "paper";
    agent::Variant variant = agent::Variant::lemol_ep;
    agent::RunConfig run;
    om::OmHyper om;
    std::size_t collect_trajectories = 4;  // trajectories gathered before the model is trained
    std::vector<std::uint64_t> seeds{0};
    std::string output_dir = "results";
    std::size_t workers = 1;
    std::size_t smoothing_window = 50;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Full-size settings.
inline ExperimentConfig paper_preset() {
    ExperimentConfig c;
    c.preset = "paper";
    c.run.episodes = 61024;
    c.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14};
    return c;
}

/// Settings sized for one commodity core.
inline ExperimentConfig desk_preset() {
    ExperimentConfig c;
    c.preset = "desk";
    c.run.episodes = 2000;
    c.run.hyper.hidden = {32, 32};
    c.run.hyper.buffer_capacity = 100'000;
    c.run.hyper.batch = 256;
    c.run.hyper.explore_episodes = 100;
    c.run.om_dims.summary_hidden = 32;
    c.run.om_dims.embed = 32;
    c.run.om_dims.core = 32;
    c.run.om_dims.in_episode = 16;
    c.run.om_dims.head_hidden = 32;
    c.om.chunk_length = 250;
    c.om.epochs = 10;
    c.collect_trajectories = 4;
    c.seeds = {0, 1, 2, 3, 4};
    return c;
}

inline ExperimentConfig preset_by_name(const std::string& name) {
    if (name == "paper") return paper_preset();
    if (name == "desk") return desk_preset();
    throw std::invalid_argument("unknown preset '" + name + "' (expected paper or desk)");
}

/// Bad configuration, with the offending field and, when known, its line.
class ConfigError : public std::runtime_error {
  public:
    ConfigError(std::string field, int line, const std::string& what)
        : std::runtime_error(format(field, line, what)), field_(std::move(field)), line_(line), detail_(what) {}
    const std::string& field() const { return field_; }
    int line() const { return line_; }
    const std::string& detail() const { return detail_; }

  private:
    static std::string format(const std::string& field, int line, const std::string& what) {
        std::string s = line > 0 ? "line " + std::to_string(line) + ": " : "";
        if (!field.empty()) s += field + ": ";
        return s + what;
    }
    std::string field_;
    int line_;
    std::string detail_;
};

// ---------------------------------------------------------------------------
// Scalar text forms

inline std::string render_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& s) {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters in number '" + s + "'");
    return v;
}

inline std::uint64_t parse_uint(const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
        throw std::invalid_argument("expected a non-negative integer, got '" + s + "'");
    return std::stoull(s);
}

inline bool parse_bool(const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw std::invalid_argument("expected true or false, got '" + s + "'");
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) {
        const auto a = cur.find_first_not_of(" \t"), b = cur.find_last_not_of(" \t");
        out.push_back(a == std::string::npos ? "" : cur.substr(a, b - a + 1));
    }
    return out;
}

/// "0..4" (inclusive range) or a comma list "0,3,7".
inline std::vector<std::uint64_t> parse_seeds(const std::string& s) {
    std::vector<std::uint64_t> out;
    const auto dots = s.find("..");
    if (dots != std::string::npos) {
        const auto lo = parse_uint(s.substr(0, dots)), hi = parse_uint(s.substr(dots + 2));
        if (hi < lo) throw std::invalid_argument("empty seed range '" + s + "'");
        for (auto v = lo; v <= hi; ++v) out.push_back(v);
    } else {
        for (const auto& p : split(s, ',')) out.push_back(parse_uint(p));
    }
    if (out.empty()) throw std::invalid_argument("no seeds given");
    return out;
}

inline std::string render_seeds(const std::vector<std::uint64_t>& seeds) {
    bool contiguous = seeds.size() > 1;
    for (std::size_t i = 1; i < seeds.size(); ++i) contiguous = contiguous && seeds[i] == seeds[i - 1] + 1;
    if (contiguous) return std::to_string(seeds.front()) + ".." + std::to_string(seeds.back());
    std::string out;
    for (std::size_t i = 0; i < seeds.size(); ++i) out += (i ? "," : "") + std::to_string(seeds[i]);
    return out;
}

inline std::vector<std::size_t> parse_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    for (const auto& p : split(s, ',')) out.push_back(static_cast<std::size_t>(parse_uint(p)));
    if (out.empty()) throw std::invalid_argument("expected a comma-separated list of sizes");
    return out;
}

inline std::string render_sizes(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Field table

struct Field {
    const char* section;
    const char* key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

namespace detail {

inline Field make_double(const char* sec, const char* key, std::function<double&(ExperimentConfig&)> ref) {
    return {sec, key, [ref](const ExperimentConfig& c) { return render_double(ref(const_cast<ExperimentConfig&>(c))); },
            [ref](ExperimentConfig& c, const std::string& s) { ref(c) = parse_double(s); }};
}

template <class Int>
Field make_uint(const char* sec, const char* key, std::function<Int&(ExperimentConfig&)> ref) {
    return {sec, key,
            [ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); },
            [ref](ExperimentConfig& c, const std::string& s) { ref(c) = static_cast<Int>(parse_uint(s)); }};
}

}  // namespace detail

inline const std::vector<Field>& config_fields() {
    using C = ExperimentConfig;
    using detail::make_double;
    using detail::make_uint;
    static const std::vector<Field> fields{
        {"experiment", "preset", [](const C& c) { return c.preset; },
         [](C& c, const std::string& s) {
             preset_by_name(s);
             c.preset = s;
         }},
        {"experiment", "variant", [](const C& c) { return std::string(agent::to_string(c.variant)); },
         [](C& c, const std::string& s) { c.variant = agent::parse_variant(s); }},
        make_uint<std::size_t>("experiment", "episodes", [](C& c) -> std::size_t& { return c.run.episodes; }),
        {"experiment", "seeds", [](const C& c) { return render_seeds(c.seeds); },
         [](C& c, const std::string& s) { c.seeds = parse_seeds(s); }},
        make_uint<std::size_t>("experiment", "collect_trajectories",
                               [](C& c) -> std::size_t& { return c.collect_trajectories; }),
        make_uint<std::size_t>("experiment", "workers", [](C& c) -> std::size_t& { return c.workers; }),
        {"experiment", "output_dir", [](const C& c) { return c.output_dir; },
         [](C& c, const std::string& s) { c.output_dir = s; }},
        make_uint<std::size_t>("experiment", "smoothing_window", [](C& c) -> std::size_t& { return c.smoothing_window; }),
        {"experiment", "record_opponent_obs", [](const C& c) { return std::string(c.run.record_opponent_obs ? "true" : "false"); },
         [](C& c, const std::string& s) { c.run.record_opponent_obs = parse_bool(s); }},

        make_double("env", "dt", [](C& c) -> double& { return c.run.env.dt; }),
        make_double("env", "damping", [](C& c) -> double& { return c.run.env.damping; }),
        make_double("env", "max_speed", [](C& c) -> double& { return c.run.env.max_speed; }),
        make_double("env", "force_scale", [](C& c) -> double& { return c.run.env.force_scale; }),
        make_uint<int>("env", "episode_length", [](C& c) -> int& { return c.run.env.episode_length; }),
        make_double("env", "interception_coef", [](C& c) -> double& { return c.run.env.interception_coef; }),
        make_double("env", "bound", [](C& c) -> double& { return c.run.env.bound; }),
        make_double("env", "spawn_range", [](C& c) -> double& { return c.run.env.spawn_range; }),
        make_double("env", "landmark_range", [](C& c) -> double& { return c.run.env.landmark_range; }),
        make_double("env", "landmark_min_separation", [](C& c) -> double& { return c.run.env.landmark_min_separation; }),
        make_uint<int>("env", "landmark_retries", [](C& c) -> int& { return c.run.env.landmark_retries; }),

        make_double("train", "gamma", [](C& c) -> double& { return c.run.hyper.gamma; }),
        make_double("train", "lr", [](C& c) -> double& { return c.run.hyper.adam.lr; }),
        make_double("train", "beta1", [](C& c) -> double& { return c.run.hyper.adam.beta1; }),
        make_double("train", "beta2", [](C& c) -> double& { return c.run.hyper.adam.beta2; }),
        make_double("train", "epsilon", [](C& c) -> double& { return c.run.hyper.adam.eps; }),
        make_double("train", "tau", [](C& c) -> double& { return c.run.hyper.tau; }),
        make_uint<std::size_t>("train", "batch", [](C& c) -> std::size_t& { return c.run.hyper.batch; }),
        make_uint<int>("train", "update_every", [](C& c) -> int& { return c.run.hyper.update_every; }),
        make_uint<int>("train", "explore_episodes", [](C& c) -> int& { return c.run.hyper.explore_episodes; }),
        make_uint<std::size_t>("train", "buffer_capacity", [](C& c) -> std::size_t& { return c.run.hyper.buffer_capacity; }),
        make_double("train", "gumbel_temperature", [](C& c) -> double& { return c.run.hyper.gumbel_temperature; }),
        {"train", "hidden", [](const C& c) { return render_sizes(c.run.hyper.hidden); },
         [](C& c, const std::string& s) { c.run.hyper.hidden = parse_sizes(s); }},

        make_uint<std::size_t>("om", "summary_hidden", [](C& c) -> std::size_t& { return c.run.om_dims.summary_hidden; }),
        make_uint<std::size_t>("om", "embed", [](C& c) -> std::size_t& { return c.run.om_dims.embed; }),
        make_uint<std::size_t>("om", "core", [](C& c) -> std::size_t& { return c.run.om_dims.core; }),
        make_uint<std::size_t>("om", "in_episode", [](C& c) -> std::size_t& { return c.run.om_dims.in_episode; }),
        make_uint<std::size_t>("om", "head_hidden", [](C& c) -> std::size_t& { return c.run.om_dims.head_hidden; }),
        make_uint<std::size_t>("om", "chunk_length", [](C& c) -> std::size_t& { return c.om.chunk_length; }),
        make_uint<std::size_t>("om", "batch_trajectories", [](C& c) -> std::size_t& { return c.om.batch_trajectories; }),
        make_uint<int>("om", "epochs", [](C& c) -> int& { return c.om.epochs; }),
        make_double("om", "lr", [](C& c) -> double& { return c.om.adam.lr; }),
        make_double("om", "beta1", [](C& c) -> double& { return c.om.adam.beta1; }),
        make_double("om", "beta2", [](C& c) -> double& { return c.om.adam.beta2; }),
        make_double("om", "epsilon", [](C& c) -> double& { return c.om.adam.eps; }),
        make_double("om", "holdout_fraction", [](C& c) -> double& { return c.om.holdout_fraction; }),
    };
    return fields;
}

inline std::string render_config(const ExperimentConfig& c) {
    std::string out, section;
    for (const auto& f : config_fields()) {
        if (section != f.section) {
            section = f.section;
            out += (out.empty() ? "[" : "\n[") + section + "]\n";
        }
        out += std::string(f.key) + " = " + f.get(c) + "\n";
    }
    return out;
}

namespace detail {

/// Line of `key` inside `[section]`, or 0.
inline int locate(const std::string& text, const std::string& section, const std::string& key) {
    std::istringstream is(text);
    std::string line, cur;
    for (int n = 1; std::getline(is, line); ++n) {
        const auto s = split(line, '=');
        const std::string head = s.empty() ? "" : s.front();
        if (!head.empty() && head.front() == '[') {
            cur = head.substr(1, head.find(']') - 1);
        } else if (cur == section && head == key) {
            return n;
        }
    }
    return 0;
}

inline void check(bool ok, const char* field, const std::string& what) {
    if (!ok) throw ConfigError(field, 0, what);
}

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
    using detail::check;
    check(c.run.episodes > 0, "experiment.episodes", "must be positive");
    check(!c.seeds.empty(), "experiment.seeds", "at least one seed is required");
    check(c.workers > 0, "experiment.workers", "must be positive");
    check(!c.output_dir.empty(), "experiment.output_dir", "must not be empty");
    check(c.run.env.episode_length > 0, "env.episode_length", "must be positive");
    check(c.run.env.dt > 0, "env.dt", "must be positive");
    check(c.run.hyper.gamma >= 0 && c.run.hyper.gamma <= 1, "train.gamma", "must lie in [0, 1]");
    check(c.run.hyper.tau >= 0 && c.run.hyper.tau <= 1, "train.tau", "must lie in [0, 1]");
    check(c.run.hyper.adam.lr > 0, "train.lr", "must be positive");
    check(c.run.hyper.batch > 0, "train.batch", "must be positive");
    check(c.run.hyper.batch <= c.run.hyper.buffer_capacity, "train.batch", "exceeds train.buffer_capacity");
    check(c.run.hyper.update_every > 0, "train.update_every", "must be positive");
    check(c.run.hyper.gumbel_temperature > 0, "train.gumbel_temperature", "must be positive");
    for (auto h : c.run.hyper.hidden) check(h > 0, "train.hidden", "layer sizes must be positive");
    for (auto [v, name] : std::initializer_list<std::pair<std::size_t, const char*>>{{c.run.om_dims.summary_hidden, "om.summary_hidden"}, {c.run.om_dims.embed, "om.embed"},
                           {c.run.om_dims.core, "om.core"}, {c.run.om_dims.in_episode, "om.in_episode"},
                           {c.run.om_dims.head_hidden, "om.head_hidden"}, {c.om.chunk_length, "om.chunk_length"},
                           {c.om.batch_trajectories, "om.batch_trajectories"}})
        check(v > 0, name, "must be positive");
    check(c.om.adam.lr > 0, "om.lr", "must be positive");
    check(c.om.holdout_fraction >= 0 && c.om.holdout_fraction < 1, "om.holdout_fraction", "must lie in [0, 1)");
    check(agent::flags(c.variant).centralised || !c.run.record_opponent_obs, "experiment.record_opponent_obs",
          "decentralised variants cannot record opponent observations");
}

/// INI text -> config. Starts from the named preset (paper when absent),
/// then applies every key. Unknown sections or keys are errors.
inline ExperimentConfig parse_config(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream is(text);
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("", static_cast<int>(e.line()), e.message());
    }
    std::string preset = "paper";
    if (auto exp = tree.get_child_optional("experiment"))
        if (auto p = exp->get_optional<std::string>("preset")) preset = *p;
    ExperimentConfig c;
    try {
        c = preset_by_name(preset);
    } catch (const std::exception& e) {
        throw ConfigError("experiment.preset", detail::locate(text, "experiment", "preset"), e.what());
    }
    for (const auto& [section, body] : tree) {
        if (!body.data().empty())
            throw ConfigError(section, detail::locate(text, "", section), "key outside any section");
        for (const auto& [key, value] : body) {
            const Field* field = nullptr;
            for (const auto& f : config_fields())
                if (section == f.section && key == f.key) field = &f;
            const std::string name = section + "." + key;
            const int line = detail::locate(text, section, key);
            if (!field) throw ConfigError(name, line, "unknown key");
            try {
                field->set(c, value.data());
            } catch (const std::exception& e) {
                throw ConfigError(name, line, e.what());
            }
        }
    }
    try {
        validate(c);
    } catch (const ConfigError& e) {
        const auto dot = e.field().find('.');
        throw ConfigError(e.field(), detail::locate(text, e.field().substr(0, dot), e.field().substr(dot + 1)),
                          e.detail());
    }
    return c;
}

}  // namespace lemol::harness

#endif
