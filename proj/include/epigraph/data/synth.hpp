#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "epigraph/core/errors.hpp"
#include "epigraph/core/rng.hpp"
#include "epigraph/data/preprocess.hpp"
#include "epigraph/data/series_table.hpp"

namespace epigraph::data {

// Desk-scale generator with a known lagged dependency.
//
//   predictor j:  x_j(t) = predictor_amplitude * sin(2 pi t / period + 2 pi j / M0) + e_j(t)
//                 e_j AR(1) with coefficient ar, stationary std innovation_std
//   target:       y(t)   = level + seasonal_amplitude * sin(2 pi t / period)
//                          + coupling * x_driver(t - driver_lag) + noise * eps(t)
struct SynthSpec {
    std::size_t weeks = 200;
    std::size_t predictors = 4;
    double period = 52.0;
    double noise = 0.1;
    std::size_t driver = 0;       // 0-based predictor index
    std::size_t driver_lag = 3;
    double level = 10.0;
    double seasonal_amplitude = 3.0;
    double coupling = 1.5;
    double predictor_amplitude = 1.0;
    double ar = 0.8;
    double innovation_std = 1.0;
    std::string target = "cases";
    Date start = make_date(2006, 1, 1);

    void validate() const {
        if (weeks < 2) throw ConfigError("synth: weeks must be >= 2");
        if (predictors < 1) throw ConfigError("synth: need at least one predictor");
        if (driver >= predictors) throw ConfigError("synth: driver index out of range");
        if (!(period > 0)) throw ConfigError("synth: period must be positive");
        if (noise < 0 || innovation_std < 0) throw ConfigError("synth: noise levels must be non-negative");
        if (!(ar > -1.0 && ar < 1.0)) throw ConfigError("synth: ar must lie in (-1, 1)");
    }
};

inline std::string predictor_name(std::size_t j) { return "X" + std::to_string(j + 1); }

struct SynthResult {
    SeriesTable table;
    std::string driver_variable;
    std::string driver_column;  // lag-expanded name, e.g. "X1 (-3)"
    std::size_t driver_lag = 0;
};

inline SynthResult synth_generate(const SynthSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    const std::size_t T = spec.weeks, P = spec.predictors, burn = spec.driver_lag;
    const double two_pi = 2.0 * std::numbers::pi;
    // predictors on t = -burn .. T-1
    std::vector<std::vector<double>> x(P, std::vector<double>(T + burn));
    const double innovation = spec.innovation_std * std::sqrt(1.0 - spec.ar * spec.ar);
    for (std::size_t j = 0; j < P; ++j) {
        double e = spec.innovation_std * rng.normal();
        for (std::size_t k = 0; k < T + burn; ++k) {
            const double t = static_cast<double>(k) - static_cast<double>(burn);
            if (k > 0) e = spec.ar * e + innovation * rng.normal();
            x[j][k] = spec.predictor_amplitude *
                          std::sin(two_pi * t / spec.period + two_pi * static_cast<double>(j) / static_cast<double>(P)) +
                      e;
        }
    }
    std::vector<MmwrWeek> weeks;
    MmwrWeek w = mmwr_week_of(spec.start);
    for (std::size_t t = 0; t < T; ++t, w = w.next()) weeks.push_back(w);
    std::vector<Variable> vars{{spec.target, Source::surveillance, Aggregation::sum}};
    for (std::size_t j = 0; j < P; ++j) vars.push_back({predictor_name(j), Source::weather, Aggregation::mean});
    SeriesTable table = SeriesTable::empty_like(std::move(weeks), std::move(vars));
    for (std::size_t t = 0; t < T; ++t) {
        const double season = spec.seasonal_amplitude * std::sin(two_pi * static_cast<double>(t) / spec.period);
        const double drive = spec.coupling * x[spec.driver][t + burn - spec.driver_lag];
        const double eps = spec.noise > 0 ? spec.noise * rng.normal() : 0.0;
        table.at(t, 0) = spec.level + season + drive + eps;
        for (std::size_t j = 0; j < P; ++j) table.at(t, j + 1) = x[j][t + burn];
    }
    SynthResult out;
    out.table = std::move(table);
    out.driver_variable = predictor_name(spec.driver);
    out.driver_column = lag_name(out.driver_variable, spec.driver_lag);
    out.driver_lag = spec.driver_lag;
    return out;
}

}  // namespace epigraph::data
