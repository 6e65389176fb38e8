#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "epigraph/cli/manifest.hpp"
#include "epigraph/cli/run_config.hpp"
#include "epigraph/data/ingest.hpp"
#include "epigraph/data/synth.hpp"
#include "epigraph/model/checkpoint.hpp"
#include "epigraph/train/checks.hpp"
#include "epigraph/train/importance.hpp"
#include "epigraph/train/pipeline.hpp"
#include "epigraph/train/reports.hpp"

namespace epigraph::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kDataQuality = 3, kMissingArtifact = 4, kInternal = 5 };

namespace fs = std::filesystem;

// Per-invocation state: resolved config, output directory, console streams
// and the manifest under construction.
struct Session {
    std::string command;
    RunConfig cfg;
    fs::path out;
    std::ostream& console;
    std::ostream& diag;
    RunManifest manifest;

    fs::path path(const std::string& name) const { return out / name; }

    void write(const fs::path& p, std::string_view bytes) {
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        std::ofstream f(p, std::ios::binary);
        if (!f) throw ArtifactError("cannot write " + p.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw ArtifactError("failed writing " + p.string());
        manifest.artifacts.push_back(p.string());
    }

    void input(const std::string& p) {
        if (!fs::exists(p)) throw ArtifactError("missing input file " + p);
        manifest.inputs.push_back(p);
    }

    std::string table_path() const { return cfg.table.empty() ? path("table.csv").string() : cfg.table; }
    std::string checkpoint_path(std::size_t H) const { return path("model_h" + std::to_string(H) + ".ckpt").string(); }
};

// Training-relevant keys only, so reports do not depend on where files live.
inline nlohmann::ordered_json config_echo(const RunConfig& cfg) {
    static const std::set<std::string> paths{"table", "surveillance", "weather", "airquality", "out"};
    nlohmann::ordered_json j;
    for (const auto& f : detail::fields())
        if (!paths.contains(f.key) && f.key.rfind("synth.", 0) != 0) j[f.key] = f.get(cfg);
    return j;
}

inline data::SeriesTable load_table(Session& s) {
    const std::string p = s.table_path();
    s.input(p);
    return data::read_canonical(csv::read_file(p), p);
}

inline model::Checkpoint load_checkpoint_for(Session& s, std::size_t H) {
    const std::string p = s.checkpoint_path(H);
    if (!fs::exists(p)) throw ArtifactError("missing checkpoint " + p + " (run `train --horizon " + std::to_string(H) + "` first)");
    s.input(p);
    auto c = model::load_checkpoint_file(p);
    if (c.model.horizon != H)
        throw ConfigError("checkpoint " + p + " was trained for horizon " + std::to_string(c.model.horizon) +
                          ", requested " + std::to_string(H));
    return c;
}

inline std::string json_text(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

// ---- commands ----

inline void cmd_synth(Session& s) {
    s.cfg.synth.validate();
    const auto result = data::synth_generate(s.cfg.synth, s.cfg.train.seed);
    std::ostringstream table;
    data::write_canonical(table, result.table);
    s.write(s.path("table.csv"), table.str());
    nlohmann::ordered_json truth;
    truth["seed"] = s.cfg.train.seed;
    truth["weeks"] = result.table.rows();
    truth["variables"] = nlohmann::ordered_json::array();
    for (const auto& v : result.table.variables) truth["variables"].push_back(v.name);
    truth["target"] = s.cfg.synth.target;
    truth["driver_variable"] = result.driver_variable;
    truth["driver_lag"] = result.driver_lag;
    truth["driver_column"] = result.driver_column;
    s.write(s.path("truth.json"), json_text(truth));
    s.console << "synth: " << result.table.rows() << " weeks x " << result.table.cols() << " variables, driver "
              << result.driver_column << "\n";
}

inline void cmd_ingest(Session& s) {
    const auto& c = s.cfg;
    if (c.surveillance.empty()) throw ConfigError("ingest needs a surveillance file (--surveillance or config key)");
    std::vector<data::SourceSeries> sources;
    s.input(c.surveillance);
    sources.push_back(data::load_surveillance(csv::read_file(c.surveillance), c.surveillance));
    auto daily = [&](const std::string& p, data::Source src) {
        if (p.empty()) return;
        s.input(p);
        for (auto& series : data::load_daily(csv::read_file(p), p, src, c.aggregation)) sources.push_back(std::move(series));
    };
    daily(c.weather, data::Source::weather);
    daily(c.airquality, data::Source::air_quality);

    const auto aligned = data::align(sources);
    const auto table = data::impute(aligned.table, {.max_gap = c.impute_max_gap});

    std::ostringstream out;
    data::write_canonical(out, table);
    s.write(s.path("table.csv"), out.str());

    std::ostringstream sidecar;
    csv::write_row(sidecar, {"week_start", "mmwr_year", "mmwr_week", "variable"});
    for (std::size_t t = 0; t < table.rows(); ++t)
        for (std::size_t m = 0; m < table.cols(); ++m)
            if (table.imputed[t * table.cols() + m])
                csv::write_row(sidecar, {data::format_date(table.weeks[t].start), std::to_string(table.weeks[t].year),
                                         std::to_string(table.weeks[t].week), table.variables[m].name});
    s.write(s.path("imputed.csv"), sidecar.str());

    auto week_json = [](const data::MmwrWeek& w) {
        return nlohmann::ordered_json{{"week_start", data::format_date(w.start)}, {"mmwr_year", w.year},
                                      {"mmwr_week", w.week}};
    };
    nlohmann::ordered_json j;
    j["weeks"] = table.rows();
    if (table.rows() > 0) {
        j["first_week"] = week_json(table.weeks.front());
        j["last_week"] = week_json(table.weeks.back());
    }
    j["variables"] = nlohmann::ordered_json::array();
    for (const auto& v : table.variables) {
        static const char* names[] = {"surveillance", "weather", "air_quality", "unspecified"};
        j["variables"].push_back({{"name", v.name},
                                  {"source", names[static_cast<int>(v.source)]},
                                  {"aggregation", data::to_string(v.policy)}});
    }
    j["dropped_weeks"] = nlohmann::ordered_json::array();
    for (const auto& w : aligned.dropped) j["dropped_weeks"].push_back(week_json(w));
    j["partial_weeks"] = nlohmann::ordered_json::array();
    for (const auto& p : aligned.partial) {
        auto e = week_json(p.week);
        e["variable"] = p.variable;
        e["observed_days"] = p.observed_days;
        j["partial_weeks"].push_back(e);
    }
    s.write(s.path("alignment.json"), json_text(j));
    s.console << "ingest: " << table.rows() << " weeks x " << table.cols() << " variables, "
              << aligned.dropped.size() << " weeks dropped by alignment\n";
}

// Edge list and gate mask. Uses the horizon's checkpoint when present,
// otherwise the graph built from the table with an untrained gate.
inline void cmd_graph(Session& s) {
    const std::size_t H = s.cfg.train.horizon;
    std::optional<model::EpiGraphModel> m;
    if (fs::exists(s.checkpoint_path(H))) {
        m.emplace(model::restore(load_checkpoint_for(s, H)));
    } else {
        s.cfg.train.validate();
        auto prepared = train::prepare(load_table(s), s.cfg.train);
        m.emplace(std::move(prepared.graph), s.cfg.train.model_config(), s.cfg.train.seed);
    }
    const auto& g = m->spatial().graph();
    const auto& gate = m->spatial().gate();
    std::ostringstream edges;
    csv::write_row(edges, {"u_name", "v_name", "weight"});
    for (const auto& e : g.edges()) csv::write_row(edges, {g.node_names[e.u], g.node_names[e.v], csv::format_number(e.weight)});
    s.write(s.path("edges.csv"), edges.str());

    const auto values = gate.gate_values();
    const auto chosen = graph::top_k(values, gate.k);
    const std::set<std::size_t> selected(chosen.begin(), chosen.end());
    std::ostringstream mask;
    csv::write_row(mask, {"name", "gate_value", "selected"});
    for (std::size_t i = 0; i < g.size(); ++i)
        csv::write_row(mask, {g.node_names[i], csv::format_number(values[i]), selected.contains(i) ? "1" : "0"});
    s.write(s.path("mask.csv"), mask.str());
    s.console << "graph: " << g.size() << " nodes, " << g.edges().size() << " edges, " << gate.k << " selected\n";
}

inline void cmd_train(Session& s) {
    const auto& cfg = s.cfg.train;
    cfg.validate();
    const auto table = load_table(s);
    auto trained = train::train_model(table, cfg);
    std::ostringstream ckpt;
    model::save_checkpoint(ckpt, trained.checkpoint(cfg));
    s.write(s.checkpoint_path(cfg.horizon), ckpt.str());

    std::ostringstream log;
    csv::write_row(log, {"epoch", "train_mse", "validation_mse", "steps", "improved"});
    for (const auto& e : trained.result.log)
        csv::write_row(log, {std::to_string(e.epoch), csv::format_number(e.train_loss),
                             csv::format_number(e.validation_loss), std::to_string(e.steps), e.improved ? "1" : "0"});
    s.write(s.path("train_log_h" + std::to_string(cfg.horizon) + ".csv"), log.str());
    s.console << "train: H=" << cfg.horizon << ", " << trained.train_samples << " training / "
              << trained.validation_samples << " validation windows, " << trained.result.log.size()
              << " epochs, best epoch " << trained.result.best_epoch << " (validation MSE "
              << trained.result.best_validation_loss << ")\n";
}

inline void cmd_eval(Session& s) {
    const auto& cfg = s.cfg.train;
    const auto table = load_table(s);
    std::vector<train::ForecastReport> reports;
    std::optional<data::ModelFrame> frame;
    for (const std::size_t H : s.cfg.horizons_to_evaluate()) {
        const auto c = load_checkpoint_for(s, H);
        auto m = model::restore(c);
        auto f = train::frame_for(table, c);
        reports.push_back(train::walk_forward(m, f, cfg.test_start_week, cfg.test_end_week, cfg.truncate_tail,
                                              cfg.batch_size));
        if (!frame) frame = std::move(f);
    }
    std::ostringstream forecasts, metrics;
    train::write_forecast_csv(forecasts, reports);
    train::write_metrics_csv(metrics, reports);
    s.write(s.path("forecasts.csv"), forecasts.str());
    s.write(s.path("metrics.csv"), metrics.str());
    s.write(s.path("metrics.json"), json_text(train::metrics_document(reports, config_echo(s.cfg))));
    s.write(s.path("overview.svg"), train::overview_chart(*frame, reports, cfg.test_start_week, cfg.test_end_week));
    std::set<std::size_t> origins;
    for (const auto& r : reports)
        for (const auto& row : r.rows) origins.insert(row.origin_index);
    for (const auto t : origins)
        s.write(s.path("charts/origin_" + std::to_string(t) + ".svg"),
                train::origin_chart(*frame, reports, t, s.cfg.chart_context));
    for (const auto& r : reports) {
        const auto m = r.metrics();
        s.console << "eval: H=" << r.horizon << " MAPE " << m.mape << " MAE " << m.mae << " MSE " << m.mse << " RSE "
                  << m.rse << " over " << m.count << " forecasts\n";
    }
}

inline void cmd_forecast(Session& s) {
    const std::size_t H = s.cfg.train.horizon;
    const auto table = load_table(s);
    const auto c = load_checkpoint_for(s, H);
    auto m = model::restore(c);
    const auto frame = train::frame_for(table, c);
    data::MmwrWeek origin;
    const auto y = train::forecast_latest(m, frame, &origin);
    std::ostringstream out;
    csv::write_row(out, {"origin_week", "origin_date", "step", "horizon", "target_date", "y_pred"});
    data::MmwrWeek w = origin;
    for (std::size_t h = 0; h < y.size(); ++h, w = w.next())
        csv::write_row(out, {std::to_string(frame.index.back() + 1), data::format_date(origin.start),
                             std::to_string(h + 1), std::to_string(H), data::format_date(w.start),
                             csv::format_number(y[h])});
    s.write(s.path("forecast_h" + std::to_string(H) + ".csv"), out.str());
    s.console << out.str();
}

inline void cmd_importance(Session& s) {
    const auto table = load_table(s);
    s.cfg.train.validate();
    const auto& hs = s.cfg.importance_horizons;
    const std::size_t jobs = hs.size() * s.cfg.importance_seeds;
    std::size_t threads = train::worker_threads(jobs);
    if (s.cfg.threads > 0) threads = std::min(threads, s.cfg.threads);
    std::size_t done = 0;
    const auto rep = train::run_importance(table, s.cfg.train, hs, s.cfg.importance_seeds, threads,
                                           [&](std::size_t H, std::uint64_t seed) {
                                               s.diag << "importance: [" << ++done << "/" << jobs << "] H=" << H
                                                      << " seed " << seed << "\n";
                                           });
    std::ostringstream table_csv, long_csv;
    train::write_importance_table(table_csv, rep);
    train::write_importance_csv(long_csv, rep);
    s.write(s.path("importance_table.csv"), table_csv.str());
    s.write(s.path("importance_long.csv"), long_csv.str());
    s.write(s.path("importance.json"), json_text(train::importance_document(rep, config_echo(s.cfg))));
    s.console << table_csv.str();
}

// Returns false when any layer fails.
inline bool cmd_gradcheck(Session& s) {
    const auto results = train::gradcheck_suite(s.cfg.train.seed);
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    bool ok = true;
    for (const auto& r : results) {
        ok = ok && r.report.passed();
        nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
        for (const auto& e : r.report.entries)
            tensors.push_back({{"tensor", e.name}, {"max_rel_error", e.max_rel_error}, {"passed", e.passed}});
        j.push_back({{"layer", r.layer},
                     {"max_rel_error", r.report.max_rel_error()},
                     {"passed", r.report.passed()},
                     {"tensors", tensors}});
        s.console << "gradcheck: " << r.layer << " max rel error " << r.report.max_rel_error() << " "
                  << (r.report.passed() ? "ok" : "FAILED") << "\n";
    }
    s.write(s.path("gradcheck.json"), json_text(j));
    return ok;
}

// ---- front end ----

inline int run(int argc, const char* const* argv, std::ostream& console = std::cout, std::ostream& diag = std::cerr) {
    CLI::App app{"Graph-gated transformer forecasting of weekly case counts"};
    app.name("epigraph");
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::size_t> horizon;
    app.add_option("--config", config_path, "flat key = value configuration file");
    app.add_option("--seed", seed, "random seed");
    app.add_option("--out", out, "output directory");
    app.add_option("--horizon", horizon, "forecast horizon in weeks")->check(CLI::IsMember({2, 4, 8, 16}));

    std::optional<std::string> table, surveillance, weather, airquality;
    std::optional<std::size_t> seeds;
    std::vector<std::size_t> horizons;

    auto* synth = app.add_subcommand("synth", "generate a synthetic seasonal table with a known lagged driver");
    auto* ingest = app.add_subcommand("ingest", "aggregate and align surveillance, weather and air-quality files");
    ingest->add_option("--surveillance", surveillance, "weekly surveillance CSV");
    ingest->add_option("--weather", weather, "daily weather CSV");
    ingest->add_option("--airquality", airquality, "daily air-quality CSV");
    auto* graph = app.add_subcommand("graph", "export the variable graph edge list and gate mask");
    auto* train = app.add_subcommand("train", "train one model for the configured horizon");
    auto* eval = app.add_subcommand("eval", "walk-forward evaluation with reports and charts");
    eval->add_option("--horizons", horizons, "horizons to evaluate (default: --horizon)")->delimiter(',');
    auto* forecast = app.add_subcommand("forecast", "forecast from the latest origin");
    auto* importance = app.add_subcommand("importance", "multi-seed gate selection frequencies");
    importance->add_option("--seeds", seeds, "number of seeds");
    importance->add_option("--horizons", horizons, "horizons (default 2,4,8,16)")->delimiter(',');
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks at tiny dimensions");
    for (auto* sub : {graph, train, eval, forecast, importance}) sub->add_option("--table", table, "canonical table CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e, console, diag);
    } catch (const CLI::ParseError& e) {
        app.exit(e, console, diag);
        return kUsage;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        if (seed) cfg.train.seed = *seed;
        if (out) cfg.out = *out;
        if (horizon) cfg.train.horizon = *horizon;
        if (table) cfg.table = *table;
        if (surveillance) cfg.surveillance = *surveillance;
        if (weather) cfg.weather = *weather;
        if (airquality) cfg.airquality = *airquality;
        if (seeds) cfg.importance_seeds = *seeds;
        if (!horizons.empty()) {
            if (command == "eval") cfg.eval_horizons = horizons;
            else cfg.importance_horizons = horizons;
        }

        Session s{command, cfg, cfg.out, console, diag, {}};
        s.manifest.command = command;
        s.manifest.seed = cfg.train.seed;
        fs::create_directories(s.out);
        const std::string resolved = run_config_text(cfg);
        const fs::path config_file = s.path(command + ".config");
        {
            std::ofstream f(config_file, std::ios::binary);
            f << resolved;
            if (!f) throw ArtifactError("cannot write " + config_file.string());
        }
        s.manifest.config_path = config_file.string();
        s.manifest.config_sha256 = sha256_hex(resolved);

        int code = kOk;
        if (command == "synth") cmd_synth(s);
        else if (command == "ingest") cmd_ingest(s);
        else if (command == "graph") cmd_graph(s);
        else if (command == "train") cmd_train(s);
        else if (command == "eval") cmd_eval(s);
        else if (command == "forecast") cmd_forecast(s);
        else if (command == "importance") cmd_importance(s);
        else if (command == "gradcheck") code = cmd_gradcheck(s) ? kOk : kInternal;

        s.manifest.finished = std::chrono::system_clock::now();
        std::ofstream m(s.path(command + ".manifest.json"), std::ios::binary);
        m << json_text(s.manifest.to_json());
        return code;
    } catch (const SchemaError& e) {
        diag << "epigraph " << command << ": " << e.what() << "\n";
        return kUsage;
    } catch (const ConfigError& e) {
        diag << "epigraph " << command << ": " << e.what() << "\n";
        return kUsage;
    } catch (const ContractError& e) {
        diag << "epigraph " << command << ": " << e.what() << "\n";
        return kUsage;
    } catch (const DataQualityError& e) {
        diag << "epigraph " << command << ": " << e.what() << "\n";
        return kDataQuality;
    } catch (const RangeError& e) {
        diag << "epigraph " << command << ": " << e.what() << "\n";
        return kDataQuality;
    } catch (const ArtifactError& e) {
        diag << "epigraph " << command << ": " << e.what() << "\n";
        return kMissingArtifact;
    } catch (const std::exception& e) {
        diag << "epigraph " << command << ": internal error: " << e.what() << "\n";
        return kInternal;
    }
}

}  // namespace epigraph::cli
