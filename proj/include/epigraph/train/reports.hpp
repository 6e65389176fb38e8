#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "epigraph/core/csv.hpp"
#include "epigraph/train/importance.hpp"

namespace epigraph::train {

inline void write_forecast_csv(std::ostream& out, const std::vector<ForecastReport>& reports) {
    csv::write_row(out, {"origin_week", "origin_date", "step", "horizon", "y_true", "y_pred"});
    for (const auto& rep : reports)
        for (const auto& r : rep.rows)
            csv::write_row(out, {std::to_string(r.origin_index), data::format_date(r.origin.start),
                                 std::to_string(r.step), std::to_string(r.horizon), csv::format_number(r.y_true),
                                 csv::format_number(r.y_pred)});
}

inline nlohmann::ordered_json metrics_json(const MetricsReport& m) {
    auto num = [](double v) -> nlohmann::ordered_json {
        if (std::isfinite(v)) return v;
        return nullptr;
    };
    return {{"mape", num(m.mape)},
            {"mae", num(m.mae)},
            {"mse", num(m.mse)},
            {"rse", num(m.rse)},
            {"rse_numerator", num(m.rse_numerator)},
            {"rse_denominator", num(m.rse_denominator)},
            {"count", m.count},
            {"mape_count", m.mape_count},
            {"zero_actuals_excluded", m.zero_actuals}};
}

// One row per (horizon, step); step "all" aggregates every step.
inline void write_metrics_csv(std::ostream& out, const std::vector<ForecastReport>& reports) {
    csv::write_row(out, {"horizon", "step", "mape", "mae", "mse", "rse", "rse_numerator", "rse_denominator", "count",
                         "zero_actuals_excluded"});
    auto row = [&](std::size_t H, const std::string& step, const MetricsReport& m) {
        csv::write_row(out, {std::to_string(H), step, csv::format_number(m.mape), csv::format_number(m.mae),
                             csv::format_number(m.mse), csv::format_number(m.rse), csv::format_number(m.rse_numerator),
                             csv::format_number(m.rse_denominator), std::to_string(m.count),
                             std::to_string(m.zero_actuals)});
    };
    for (const auto& rep : reports) {
        if (rep.rows.empty()) continue;
        row(rep.horizon, "all", rep.metrics());
        const auto steps = rep.per_step();
        for (std::size_t h = 0; h < steps.size(); ++h) row(rep.horizon, std::to_string(h + 1), steps[h]);
    }
}

inline nlohmann::ordered_json metrics_document(const std::vector<ForecastReport>& reports,
                                               const nlohmann::ordered_json& config_echo) {
    nlohmann::ordered_json doc;
    doc["config"] = config_echo;
    doc["horizons"] = nlohmann::ordered_json::array();
    for (const auto& rep : reports) {
        nlohmann::ordered_json h;
        h["horizon"] = rep.horizon;
        h["origins_skipped"] = rep.skipped_origins.size();
        if (!rep.rows.empty()) {
            h["overall"] = metrics_json(rep.metrics());
            h["per_step"] = nlohmann::ordered_json::array();
            for (const auto& m : rep.per_step()) h["per_step"].push_back(metrics_json(m));
        }
        doc["horizons"].push_back(h);
    }
    return doc;
}

// Rank table: every feature in any horizon's consensus top k, with its
// rank per horizon ("-" outside the top k).
inline void write_importance_table(std::ostream& out, const ImportanceReport& rep) {
    std::vector<std::string> header{"feature"};
    for (const auto& h : rep.horizons) header.push_back(std::to_string(h.horizon) + " weeks");
    csv::write_row(out, header);
    std::vector<std::size_t> features;
    for (const auto& h : rep.horizons)
        for (auto f : h.consensus)
            if (std::find(features.begin(), features.end(), f) == features.end()) features.push_back(f);
    // order: number of horizons present (desc), then mean rank over them
    auto score = [&](std::size_t f) {
        std::size_t present = 0;
        double total = 0;
        for (const auto& h : rep.horizons)
            if (auto r = h.rank_of(f)) {
                ++present;
                total += static_cast<double>(r);
            }
        return std::pair<std::size_t, double>{present, total / static_cast<double>(present)};
    };
    std::stable_sort(features.begin(), features.end(), [&](std::size_t a, std::size_t b) {
        const auto sa = score(a), sb = score(b);
        if (sa.first != sb.first) return sa.first > sb.first;
        return sa.second < sb.second;
    });
    for (auto f : features) {
        std::vector<std::string> row{rep.feature_names[f]};
        for (const auto& h : rep.horizons) {
            const auto r = h.rank_of(f);
            row.push_back(r ? std::to_string(r) : "-");
        }
        csv::write_row(out, row);
    }
}

// Long form: one row per (horizon, feature) with frequency, mean rank, mean gate.
inline void write_importance_csv(std::ostream& out, const ImportanceReport& rep) {
    csv::write_row(out, {"horizon", "feature", "frequency", "mean_rank", "mean_gate", "consensus_rank"});
    for (const auto& h : rep.horizons)
        for (std::size_t f = 0; f < rep.feature_names.size(); ++f)
            csv::write_row(out, {std::to_string(h.horizon), rep.feature_names[f], csv::format_number(h.frequency[f]),
                                 csv::format_number(h.mean_rank[f]), csv::format_number(h.mean_gate[f]),
                                 h.rank_of(f) ? std::to_string(h.rank_of(f)) : ""});
}

inline nlohmann::ordered_json importance_document(const ImportanceReport& rep,
                                                  const nlohmann::ordered_json& config_echo) {
    nlohmann::ordered_json doc;
    doc["config"] = config_echo;
    doc["seeds"] = rep.seeds;
    doc["features"] = rep.feature_names;
    doc["horizons"] = nlohmann::ordered_json::array();
    for (const auto& h : rep.horizons) {
        nlohmann::ordered_json j;
        j["horizon"] = h.horizon;
        j["k"] = h.k;
        j["consensus"] = nlohmann::ordered_json::array();
        for (auto f : h.consensus)
            j["consensus"].push_back({{"feature", rep.feature_names[f]},
                                      {"frequency", h.frequency[f]},
                                      {"mean_rank", h.mean_rank[f]},
                                      {"mean_gate", h.mean_gate[f]}});
        j["runs"] = nlohmann::ordered_json::array();
        for (const auto& r : h.runs) {
            nlohmann::ordered_json run;
            run["seed"] = r.seed;
            run["selected"] = nlohmann::ordered_json::array();
            for (auto f : r.ranked) run["selected"].push_back(rep.feature_names[f]);
            run["best_validation_mse"] = r.best_validation_loss;
            j["runs"].push_back(run);
        }
        doc["horizons"].push_back(j);
    }
    return doc;
}

// Minimal deterministic SVG line chart.
struct ChartSeries {
    std::string label;
    std::string color;
    std::vector<std::pair<double, double>> points;
    bool markers = false;
};

inline std::string fixed2(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, std::abs(v) < 0.005 ? 0.0 : v, std::chars_format::fixed, 2);
    return std::string(buf, r.ptr);
}

inline std::string horizon_color(std::size_t H) {
    switch (H) {
        case 2: return "#1f77b4";
        case 4: return "#ff7f0e";
        case 8: return "#2ca02c";
        case 16: return "#d62728";
        default: return "#9467bd";
    }
}

inline std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

inline std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                                  const std::vector<ChartSeries>& series) {
    const double W = 800, Hh = 400, left = 70, right = 150, top = 40, bottom = 50;
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            if (!std::isfinite(y)) continue;
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (W - left - right); };
    auto py = [&](double y) { return Hh - bottom - (y - y0) / (y1 - y0) * (Hh - top - bottom); };
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << Hh << "\" viewBox=\"0 0 "
      << W << " " << Hh << "\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
      << svg_escape(title) << "</text>\n";
    o << "<g stroke=\"#444\" stroke-width=\"1\">"
      << "<line x1=\"" << left << "\" y1=\"" << Hh - bottom << "\" x2=\"" << W - right << "\" y2=\"" << Hh - bottom
      << "\"/><line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << Hh - bottom
      << "\"/></g>\n";
    o << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#222\">\n";
    for (int i = 0; i <= 4; ++i) {
        const double yv = y0 + (y1 - y0) * i / 4.0, xv = x0 + (x1 - x0) * i / 4.0;
        o << "<text x=\"" << left - 6 << "\" y=\"" << fixed2(py(yv) + 4) << "\" text-anchor=\"end\">" << fixed2(yv)
          << "</text>";
        o << "<text x=\"" << fixed2(px(xv)) << "\" y=\"" << Hh - bottom + 16 << "\" text-anchor=\"middle\">"
          << fixed2(xv) << "</text>\n";
    }
    o << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << Hh - 12 << "\" text-anchor=\"middle\">"
      << svg_escape(x_label) << "</text>";
    o << "<text x=\"16\" y=\"" << Hh / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << Hh / 2
      << ")\">" << svg_escape(y_label) << "</text>\n</g>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
        bool first = true;
        for (auto [x, y] : s.points) {
            if (!std::isfinite(y)) continue;
            o << (first ? "" : " ") << fixed2(px(x)) << "," << fixed2(py(y));
            first = false;
        }
        o << "\"/>\n";
        if (s.markers)
            for (auto [x, y] : s.points)
                if (std::isfinite(y))
                    o << "<circle cx=\"" << fixed2(px(x)) << "\" cy=\"" << fixed2(py(y)) << "\" r=\"2.5\" fill=\""
                      << s.color << "\"/>\n";
        const double ly = top + 10 + 18.0 * static_cast<double>(i);
        o << "<line x1=\"" << W - right + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - right + 30 << "\" y2=\"" << ly
          << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>";
        o << "<text x=\"" << W - right + 36 << "\" y=\"" << ly + 4
          << "\" font-family=\"sans-serif\" font-size=\"11\">" << svg_escape(s.label) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

// Observed counts in black; each horizon's forecast trajectory from `origin`
// in its own color.
inline std::string origin_chart(const data::ModelFrame& frame, const std::vector<ForecastReport>& reports,
                                std::size_t origin, std::size_t context) {
    std::vector<ChartSeries> series;
    ChartSeries observed{"observed", "#000000", {}, true};
    std::size_t last = origin;
    for (const auto& rep : reports) last = std::max(last, origin + rep.horizon - 1);
    const std::size_t first = origin > context ? origin - context : frame.index.front();
    for (std::size_t t = std::max(first, frame.index.front()); t <= std::min(last, frame.index.back()); ++t)
        observed.points.push_back({static_cast<double>(t), frame.raw_target[*frame.row_of(t)]});
    series.push_back(observed);
    for (const auto& rep : reports) {
        ChartSeries s{std::to_string(rep.horizon) + "-week forecast", horizon_color(rep.horizon), {}, true};
        for (const auto& r : rep.rows)
            if (r.origin_index == origin)
                s.points.push_back({static_cast<double>(r.origin_index + r.step - 1), r.y_pred});
        if (!s.points.empty()) series.push_back(std::move(s));
    }
    return line_chart_svg("Forecast from epi-week " + std::to_string(origin), "epi-week index", "cases", series);
}

// Whole test period: observed in black; for each horizon the forecast made
// H weeks earlier for every target week (the step-H prediction).
inline std::string overview_chart(const data::ModelFrame& frame, const std::vector<ForecastReport>& reports,
                                  std::size_t test_start, std::size_t test_end) {
    std::vector<ChartSeries> series;
    ChartSeries observed{"observed", "#000000", {}, false};
    for (std::size_t t = test_start; t <= std::min(test_end, frame.index.back()); ++t)
        observed.points.push_back({static_cast<double>(t), frame.raw_target[*frame.row_of(t)]});
    series.push_back(observed);
    for (const auto& rep : reports) {
        ChartSeries s{std::to_string(rep.horizon) + "-week ahead", horizon_color(rep.horizon), {}, false};
        for (const auto& r : rep.rows)
            if (r.step == rep.horizon) s.points.push_back({static_cast<double>(r.origin_index + r.step - 1), r.y_pred});
        if (!s.points.empty()) series.push_back(std::move(s));
    }
    return line_chart_svg("Walk-forward forecasts, epi-weeks " + std::to_string(test_start) + "-" +
                              std::to_string(test_end),
                          "epi-week index", "cases", series);
}

}  // namespace epigraph::train
