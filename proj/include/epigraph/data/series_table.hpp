#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "epigraph/core/csv.hpp"
#include "epigraph/core/errors.hpp"
#include "epigraph/data/calendar.hpp"

namespace epigraph::data {

enum class Source { surveillance, weather, air_quality, unspecified };
enum class Aggregation { mean, min, max, sum };

inline std::string to_string(Aggregation a) {
    switch (a) {
        case Aggregation::mean: return "mean";
        case Aggregation::min: return "min";
        case Aggregation::max: return "max";
        case Aggregation::sum: return "sum";
    }
    return "mean";
}

inline Aggregation parse_aggregation(std::string_view text) {
    if (text == "mean") return Aggregation::mean;
    if (text == "min") return Aggregation::min;
    if (text == "max") return Aggregation::max;
    if (text == "sum") return Aggregation::sum;
    throw ConfigError("unknown aggregation policy '" + std::string(text) + "' (expected mean|min|max|sum)");
}

// Default policy from the variable name: "... Total" sums, "... Min" / "... Max"
// take extremes, anything else is averaged.
inline Aggregation infer_aggregation(std::string_view name) {
    auto has_word = [&](std::string_view word) {
        std::size_t pos = name.find(word);
        while (pos != std::string_view::npos) {
            const bool left = pos == 0 || !std::isalnum(static_cast<unsigned char>(name[pos - 1]));
            const std::size_t end = pos + word.size();
            const bool right = end == name.size() || !std::isalnum(static_cast<unsigned char>(name[end]));
            if (left && right) return true;
            pos = name.find(word, pos + 1);
        }
        return false;
    };
    if (has_word("Total")) return Aggregation::sum;
    if (has_word("Min")) return Aggregation::min;
    if (has_word("Max")) return Aggregation::max;
    return Aggregation::mean;
}

struct Variable {
    std::string name;
    Source source = Source::unspecified;
    Aggregation policy = Aggregation::mean;
};

inline bool is_missing(double v) { return std::isnan(v); }
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

// Weekly multivariate series, T weeks by M variables, row-major. Missing
// cells are NaN. `imputed` flags cells filled by impute(). `first_index` is
// the 1-based position of row 0 in the canonical table (the epi-week index
// used by train/test boundaries).
struct SeriesTable {
    std::vector<MmwrWeek> weeks;
    std::vector<Variable> variables;
    std::vector<double> values;
    std::vector<char> imputed;
    std::size_t first_index = 1;

    std::size_t rows() const { return weeks.size(); }
    std::size_t cols() const { return variables.size(); }

    double at(std::size_t t, std::size_t m) const { return values[t * cols() + m]; }
    double& at(std::size_t t, std::size_t m) { return values[t * cols() + m]; }

    std::size_t index_of_row(std::size_t t) const { return first_index + t; }

    std::optional<std::size_t> find(std::string_view name) const {
        for (std::size_t m = 0; m < variables.size(); ++m)
            if (variables[m].name == name) return m;
        return std::nullopt;
    }
    std::size_t require(std::string_view name) const {
        if (auto m = find(name)) return *m;
        throw ConfigError("variable '" + std::string(name) + "' not present in table");
    }

    std::vector<double> column(std::size_t m) const {
        std::vector<double> out(rows());
        for (std::size_t t = 0; t < rows(); ++t) out[t] = at(t, m);
        return out;
    }

    bool has_missing() const {
        return std::any_of(values.begin(), values.end(), [](double v) { return is_missing(v); });
    }

    static SeriesTable empty_like(std::vector<MmwrWeek> weeks, std::vector<Variable> vars) {
        SeriesTable t;
        t.weeks = std::move(weeks);
        t.variables = std::move(vars);
        t.values.assign(t.rows() * t.cols(), kMissing);
        t.imputed.assign(t.values.size(), 0);
        return t;
    }

    // Throws unless weeks are strictly increasing without gaps.
    void check_contiguous() const {
        for (std::size_t t = 1; t < weeks.size(); ++t)
            if (weeks[t].start != weeks[t - 1].start + std::chrono::days{7})
                throw DataQualityError("weeks not contiguous between " + format_date(weeks[t - 1].start) + " and " +
                                       format_date(weeks[t].start));
    }
};

struct DailyRecord {
    Date date;
    double value = kMissing;  // NaN = missing cell
};

struct WeeklySeries {
    std::vector<MmwrWeek> weeks;
    std::vector<double> values;       // NaN when no day was observed
    std::vector<int> observed_days;   // 0..7
    bool partial(std::size_t i) const { return observed_days[i] > 0 && observed_days[i] < 7; }
};

// Collapses daily records into MMWR weeks spanning the first to the last
// record. Weeks without any observed day are missing.
inline WeeklySeries aggregate_daily(const std::vector<DailyRecord>& records, Aggregation policy) {
    WeeklySeries out;
    if (records.empty()) return out;
    auto [lo, hi] = std::minmax_element(records.begin(), records.end(),
                                        [](const auto& a, const auto& b) { return a.date < b.date; });
    const MmwrWeek first = mmwr_week_of(lo->date);
    const MmwrWeek last = mmwr_week_of(hi->date);
    for (MmwrWeek w = first; w.start <= last.start; w = w.next()) out.weeks.push_back(w);
    const std::size_t n = out.weeks.size();
    std::vector<double> acc(n, 0.0);
    out.observed_days.assign(n, 0);
    for (const auto& r : records) {
        if (is_missing(r.value)) continue;
        const auto i = static_cast<std::size_t>((week_sunday(r.date) - first.start).count() / 7);
        const int seen = out.observed_days[i]++;
        switch (policy) {
            case Aggregation::mean:
            case Aggregation::sum: acc[i] += r.value; break;
            case Aggregation::min: acc[i] = seen == 0 ? r.value : std::min(acc[i], r.value); break;
            case Aggregation::max: acc[i] = seen == 0 ? r.value : std::max(acc[i], r.value); break;
        }
    }
    out.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (out.observed_days[i] == 0)
            out.values[i] = kMissing;
        else if (policy == Aggregation::mean)
            out.values[i] = acc[i] / out.observed_days[i];
        else
            out.values[i] = acc[i];
    }
    return out;
}

struct ImputeOptions {
    std::size_t max_gap = 4;
};

// Fills missing cells: linear interpolation between observed neighbours,
// nearest observed value at the series edges. Runs longer than max_gap are
// a data-quality error.
inline SeriesTable impute(const SeriesTable& table, ImputeOptions options = {}) {
    SeriesTable out = table;
    if (out.imputed.size() != out.values.size()) out.imputed.assign(out.values.size(), 0);
    const std::size_t T = table.rows();
    for (std::size_t m = 0; m < table.cols(); ++m) {
        std::size_t t = 0;
        while (t < T) {
            if (!is_missing(table.at(t, m))) {
                ++t;
                continue;
            }
            std::size_t end = t;
            while (end < T && is_missing(table.at(end, m))) ++end;
            const std::size_t gap = end - t;
            if (gap > options.max_gap || gap == T)
                throw DataQualityError("variable '" + table.variables[m].name + "': " + std::to_string(gap) +
                                       "-week gap from " + format_date(table.weeks[t].start) + " to " +
                                       format_date(table.weeks[end - 1].start) + " exceeds limit of " +
                                       std::to_string(options.max_gap));
            for (std::size_t k = t; k < end; ++k) {
                double v;
                if (t == 0)
                    v = table.at(end, m);
                else if (end == T)
                    v = table.at(t - 1, m);
                else {
                    const double a = table.at(t - 1, m), b = table.at(end, m);
                    const double frac = static_cast<double>(k - t + 1) / static_cast<double>(gap + 1);
                    v = a + (b - a) * frac;
                }
                out.at(k, m) = v;
                out.imputed[k * out.cols() + m] = 1;
            }
            t = end;
        }
    }
    return out;
}

// Canonical aligned table: week_start, mmwr_year, mmwr_week, then variables.
inline void write_canonical(std::ostream& out, const SeriesTable& table) {
    csv::Row header{"week_start", "mmwr_year", "mmwr_week"};
    for (const auto& v : table.variables) header.push_back(v.name);
    csv::write_row(out, header);
    for (std::size_t t = 0; t < table.rows(); ++t) {
        csv::Row row{format_date(table.weeks[t].start), std::to_string(table.weeks[t].year),
                     std::to_string(table.weeks[t].week)};
        for (std::size_t m = 0; m < table.cols(); ++m) row.push_back(csv::format_number(table.at(t, m)));
        csv::write_row(out, row);
    }
}

inline SeriesTable read_canonical(const csv::Document& doc, const std::string& origin) {
    if (doc.header.size() < 4 || doc.header[0] != "week_start" || doc.header[1] != "mmwr_year" ||
        doc.header[2] != "mmwr_week")
        throw SchemaError(origin + ": canonical table header must start with week_start,mmwr_year,mmwr_week");
    std::vector<Variable> vars;
    for (std::size_t i = 3; i < doc.header.size(); ++i) vars.push_back({doc.header[i], Source::unspecified,
                                                                         infer_aggregation(doc.header[i])});
    std::vector<MmwrWeek> weeks;
    for (std::size_t r = 0; r < doc.rows.size(); ++r) {
        const std::string where = origin + ":" + std::to_string(doc.line_numbers[r]);
        const Date d = parse_date(doc.rows[r][0]);
        const MmwrWeek w = mmwr_week_of(d);
        if (w.start != d) throw SchemaError(where + ": week_start is not a Sunday");
        if (csv::parse_integer(doc.rows[r][1], where) != w.year || csv::parse_integer(doc.rows[r][2], where) != w.week)
            throw SchemaError(where + ": mmwr_year/mmwr_week disagree with week_start");
        weeks.push_back(w);
    }
    SeriesTable table = SeriesTable::empty_like(std::move(weeks), std::move(vars));
    for (std::size_t r = 0; r < doc.rows.size(); ++r)
        for (std::size_t m = 0; m < table.cols(); ++m)
            table.at(r, m) = csv::parse_number(doc.rows[r][m + 3], origin + ":" + std::to_string(doc.line_numbers[r]));
    table.check_contiguous();
    return table;
}

}  // namespace epigraph::data
