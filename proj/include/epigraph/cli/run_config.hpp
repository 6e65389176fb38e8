#pragma once

#include <charconv>
#include <concepts>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "epigraph/data/synth.hpp"
#include "epigraph/train/config.hpp"

namespace epigraph::cli {

// Everything a command needs: training settings plus paths, ingest policy,
// synthetic-data spec and report options.
struct RunConfig {
    train::TrainConfig train;
    data::SynthSpec synth;

    std::string table;  // canonical aligned table
    std::string surveillance, weather, airquality;
    std::map<std::string, data::Aggregation> aggregation;  // per-variable overrides
    std::size_t impute_max_gap = 4;

    std::string out = "out";
    std::vector<std::size_t> eval_horizons;  // empty: the configured horizon only
    std::vector<std::size_t> importance_horizons{2, 4, 8, 16};
    std::size_t importance_seeds = 20;
    std::size_t threads = 0;  // 0: one per core (EPIGRAPH_THREADS still caps)
    std::size_t chart_context = 12;

    std::vector<std::size_t> horizons_to_evaluate() const {
        return eval_horizons.empty() ? std::vector<std::size_t>{train.horizon} : eval_horizons;
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <class T>
T parse_value(std::string_view text, const std::string& key) {
    T v{};
    const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
    if (r.ec != std::errc() || r.ptr != text.data() + text.size() || text.empty())
        throw ConfigError("config key '" + key + "': cannot parse '" + std::string(text) + "'");
    return v;
}

inline bool parse_bool(std::string_view text, const std::string& key) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + std::string(text) + "'");
}

inline std::vector<std::size_t> parse_list(std::string_view text, const std::string& key) {
    std::vector<std::size_t> out;
    std::size_t start = 0;
    if (trim(text).empty()) return out;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const auto item = trim(text.substr(start, comma == std::string_view::npos ? text.npos : comma - start));
        out.push_back(parse_value<std::size_t>(item, key));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::string format_list(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view)> set;
};

#define EPIGRAPH_FIELD(KEY, EXPR, TYPE)                                                                          \
    Field {                                                                                                      \
        KEY, [](const RunConfig& c) { return detail::to_text(c.EXPR); },                                        \
            [](RunConfig& c, std::string_view v) { c.EXPR = detail::from_text<TYPE>(v, KEY); }                   \
    }

template <std::unsigned_integral T>
std::string to_text(T v) {
    return std::to_string(v);
}
inline std::string to_text(double v) { return format_double(v); }
inline std::string to_text(bool v) { return v ? "true" : "false"; }
inline std::string to_text(const std::string& v) { return v; }
inline std::string to_text(const std::vector<std::size_t>& v) { return format_list(v); }
inline std::string to_text(data::Date d) { return data::format_date(d); }

template <class T>
T from_text(std::string_view v, const std::string& key) {
    if constexpr (std::is_same_v<T, bool>)
        return parse_bool(v, key);
    else if constexpr (std::is_same_v<T, std::string>)
        return std::string(v);
    else if constexpr (std::is_same_v<T, std::vector<std::size_t>>)
        return parse_list(v, key);
    else if constexpr (std::is_same_v<T, data::Date>) {
        try {
            return data::parse_date(v);
        } catch (const Error& e) {
            throw ConfigError("config key '" + key + "': " + e.what());
        }
    } else
        return parse_value<T>(v, key);
}

inline const std::vector<Field>& fields() {
    static const std::vector<Field> all{
        EPIGRAPH_FIELD("table", table, std::string),
        EPIGRAPH_FIELD("surveillance", surveillance, std::string),
        EPIGRAPH_FIELD("weather", weather, std::string),
        EPIGRAPH_FIELD("airquality", airquality, std::string),
        EPIGRAPH_FIELD("impute_max_gap", impute_max_gap, std::size_t),
        EPIGRAPH_FIELD("out", out, std::string),
        EPIGRAPH_FIELD("seed", train.seed, std::uint64_t),
        EPIGRAPH_FIELD("target", train.target, std::string),
        EPIGRAPH_FIELD("max_lag", train.max_lag, std::size_t),
        EPIGRAPH_FIELD("horizon", train.horizon, std::size_t),
        EPIGRAPH_FIELD("window", train.window, std::size_t),
        EPIGRAPH_FIELD("train_end_week", train.train_end_week, std::size_t),
        EPIGRAPH_FIELD("test_start_week", train.test_start_week, std::size_t),
        EPIGRAPH_FIELD("test_end_week", train.test_end_week, std::size_t),
        EPIGRAPH_FIELD("truncate_tail", train.truncate_tail, bool),
        EPIGRAPH_FIELD("edge_threshold", train.edge_threshold, double),
        EPIGRAPH_FIELD("learning_rate", train.learning_rate, double),
        EPIGRAPH_FIELD("max_epochs", train.max_epochs, std::size_t),
        EPIGRAPH_FIELD("patience", train.patience, std::size_t),
        EPIGRAPH_FIELD("min_delta", train.min_delta, double),
        EPIGRAPH_FIELD("batch_size", train.batch_size, std::size_t),
        EPIGRAPH_FIELD("validation_fraction", train.validation_fraction, double),
        EPIGRAPH_FIELD("max_steps", train.max_steps, std::size_t),
        EPIGRAPH_FIELD("keep_fraction", train.graph.keep_fraction, double),
        EPIGRAPH_FIELD("d_node", train.graph.d_node, std::size_t),
        EPIGRAPH_FIELD("gat_layers", train.graph.gat_layers, std::size_t),
        EPIGRAPH_FIELD("gat_heads", train.graph.gat_heads, std::size_t),
        EPIGRAPH_FIELD("gat_head_dim", train.graph.gat_head_dim, std::size_t),
        EPIGRAPH_FIELD("leaky_slope", train.graph.slope, double),
        EPIGRAPH_FIELD("node_identity", train.graph.node_identity, bool),
        EPIGRAPH_FIELD("d_model", train.transformer.d_model, std::size_t),
        EPIGRAPH_FIELD("n_heads", train.transformer.n_heads, std::size_t),
        EPIGRAPH_FIELD("d_ff", train.transformer.d_ff, std::size_t),
        EPIGRAPH_FIELD("dropout", train.transformer.dropout, double),
        EPIGRAPH_FIELD("encoder_layers", train.transformer.encoder_layers, std::size_t),
        EPIGRAPH_FIELD("decoder_layers", train.transformer.decoder_layers, std::size_t),
        EPIGRAPH_FIELD("eval_horizons", eval_horizons, std::vector<std::size_t>),
        EPIGRAPH_FIELD("chart_context", chart_context, std::size_t),
        EPIGRAPH_FIELD("importance_horizons", importance_horizons, std::vector<std::size_t>),
        EPIGRAPH_FIELD("importance_seeds", importance_seeds, std::size_t),
        EPIGRAPH_FIELD("threads", threads, std::size_t),
        EPIGRAPH_FIELD("synth.weeks", synth.weeks, std::size_t),
        EPIGRAPH_FIELD("synth.predictors", synth.predictors, std::size_t),
        EPIGRAPH_FIELD("synth.period", synth.period, double),
        EPIGRAPH_FIELD("synth.noise", synth.noise, double),
        EPIGRAPH_FIELD("synth.driver", synth.driver, std::size_t),
        EPIGRAPH_FIELD("synth.driver_lag", synth.driver_lag, std::size_t),
        EPIGRAPH_FIELD("synth.level", synth.level, double),
        EPIGRAPH_FIELD("synth.seasonal_amplitude", synth.seasonal_amplitude, double),
        EPIGRAPH_FIELD("synth.coupling", synth.coupling, double),
        EPIGRAPH_FIELD("synth.predictor_amplitude", synth.predictor_amplitude, double),
        EPIGRAPH_FIELD("synth.ar", synth.ar, double),
        EPIGRAPH_FIELD("synth.innovation_std", synth.innovation_std, double),
        EPIGRAPH_FIELD("synth.target", synth.target, std::string),
        EPIGRAPH_FIELD("synth.start", synth.start, data::Date),
    };
    return all;
}

#undef EPIGRAPH_FIELD

inline const std::string kAggregationPrefix = "aggregation.";

}  // namespace detail

// Sets one key; `aggregation.<variable>` keys are open-ended, every other
// key must be known.
inline void set_key(RunConfig& cfg, const std::string& key, std::string_view value) {
    if (key.rfind(detail::kAggregationPrefix, 0) == 0 && key.size() > detail::kAggregationPrefix.size()) {
        cfg.aggregation[key.substr(detail::kAggregationPrefix.size())] = data::parse_aggregation(value);
        return;
    }
    for (const auto& f : detail::fields())
        if (f.key == key) {
            f.set(cfg, value);
            return;
        }
    throw ConfigError("unknown config key '" + key + "'");
}

// `key = value` lines; `#` starts a comment; blank lines are ignored.
inline RunConfig parse_run_config(std::istream& in, const std::string& origin, RunConfig cfg = {}) {
    std::string line;
    std::set<std::string> seen;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string body = detail::trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        const std::string where = origin + ":" + std::to_string(no);
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        const std::string key = detail::trim(std::string_view(body).substr(0, eq));
        const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
        if (key.empty()) throw ConfigError(where + ": missing key");
        if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
        try {
            set_key(cfg, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse_run_config(in, path);
}

// Every key with its resolved value, defaults included.
inline void write_run_config(std::ostream& out, const RunConfig& cfg) {
    for (const auto& f : detail::fields()) out << f.key << " = " << f.get(cfg) << "\n";
    for (const auto& [name, policy] : cfg.aggregation)
        out << detail::kAggregationPrefix << name << " = " << data::to_string(policy) << "\n";
}

inline std::string run_config_text(const RunConfig& cfg) {
    std::ostringstream s;
    write_run_config(s, cfg);
    return s.str();
}

}  // namespace epigraph::cli
