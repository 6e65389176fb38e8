#pragma once

#include <map>
#include <string>
#include <vector>

#include "epigraph/core/csv.hpp"
#include "epigraph/data/series_table.hpp"

namespace epigraph::data {

// One weekly-aggregated source variable.
struct SourceSeries {
    Variable variable;
    WeeklySeries series;
};

// Weekly surveillance counts keyed by (mmwr_year, mmwr_week); no date parsing.
inline SourceSeries load_surveillance(const csv::Document& doc, const std::string& origin) {
    const auto year_col = doc.column("mmwr_year");
    const auto week_col = doc.column("mmwr_week");
    const auto cases_col = doc.column("cases");
    if (!year_col || !week_col || !cases_col)
        throw SchemaError(origin + ": surveillance file needs columns mmwr_year, mmwr_week, cases");
    std::map<Date, double> by_week;
    for (std::size_t r = 0; r < doc.rows.size(); ++r) {
        const std::string where = origin + ":" + std::to_string(doc.line_numbers[r]);
        const auto y = csv::parse_integer(doc.rows[r][*year_col], where);
        const auto w = csv::parse_integer(doc.rows[r][*week_col], where);
        MmwrWeek week;
        try {
            week = mmwr_week(static_cast<int>(y), static_cast<int>(w));
        } catch (const RangeError& e) {
            throw SchemaError(where + ": " + e.what());
        }
        if (!by_week.emplace(week.start, csv::parse_number(doc.rows[r][*cases_col], where)).second)
            throw SchemaError(where + ": duplicate MMWR week " + std::to_string(y) + "-" + std::to_string(w));
    }
    SourceSeries out{{"cases", Source::surveillance, Aggregation::sum}, {}};
    if (by_week.empty()) return out;
    const MmwrWeek first = mmwr_week_of(by_week.begin()->first);
    const MmwrWeek last = mmwr_week_of(by_week.rbegin()->first);
    for (MmwrWeek w = first; w.start <= last.start; w = w.next()) {
        out.series.weeks.push_back(w);
        const auto it = by_week.find(w.start);
        const double v = it == by_week.end() ? kMissing : it->second;
        out.series.values.push_back(v);
        out.series.observed_days.push_back(is_missing(v) ? 0 : 7);
    }
    return out;
}

// Daily file: a `date` column plus one column per variable. Each variable is
// aggregated to MMWR weeks with its policy (override map, else inferred).
inline std::vector<SourceSeries> load_daily(const csv::Document& doc, const std::string& origin, Source source,
                                            const std::map<std::string, Aggregation>& overrides = {}) {
    const auto date_col = doc.column("date");
    if (!date_col) throw SchemaError(origin + ": daily file needs a 'date' column");
    std::vector<Date> dates;
    for (std::size_t r = 0; r < doc.rows.size(); ++r) {
        try {
            dates.push_back(parse_date(doc.rows[r][*date_col]));
        } catch (const SchemaError& e) {
            throw SchemaError(origin + ":" + std::to_string(doc.line_numbers[r]) + ": " + e.what());
        }
    }
    std::vector<SourceSeries> out;
    for (std::size_t c = 0; c < doc.header.size(); ++c) {
        if (c == *date_col) continue;
        const std::string& name = doc.header[c];
        const auto it = overrides.find(name);
        const Aggregation policy = it != overrides.end() ? it->second : infer_aggregation(name);
        std::vector<DailyRecord> records;
        records.reserve(doc.rows.size());
        for (std::size_t r = 0; r < doc.rows.size(); ++r)
            records.push_back({dates[r], csv::parse_number(doc.rows[r][c], origin + ":" +
                                                                             std::to_string(doc.line_numbers[r]))});
        out.push_back({{name, source, policy}, aggregate_daily(records, policy)});
    }
    return out;
}

struct PartialWeek {
    MmwrWeek week;
    std::string variable;
    int observed_days = 0;
};

struct AlignedTable {
    SeriesTable table;                  // before imputation
    std::vector<MmwrWeek> dropped;      // weeks outside the common range
    std::vector<PartialWeek> partial;   // weeks aggregated from fewer than 7 days
};

// Intersects the week ranges of all sources and lays them out as one table.
// Weeks present in some sources but outside the common range are reported.
inline AlignedTable align(const std::vector<SourceSeries>& sources) {
    if (sources.empty()) throw ContractError("align: no sources");
    Date lo = Date::min(), hi = Date::max();
    for (const auto& s : sources) {
        if (s.series.weeks.empty())
            throw DataQualityError("source variable '" + s.variable.name + "' has no observations");
        lo = std::max(lo, s.series.weeks.front().start);
        hi = std::min(hi, s.series.weeks.back().start);
    }
    if (lo > hi) throw DataQualityError("sources do not overlap in time");
    AlignedTable out;
    std::vector<MmwrWeek> weeks;
    for (MmwrWeek w = mmwr_week_of(lo); w.start <= hi; w = w.next()) weeks.push_back(w);
    std::vector<Variable> vars;
    for (const auto& s : sources) vars.push_back(s.variable);
    out.table = SeriesTable::empty_like(weeks, vars);
    std::map<Date, MmwrWeek> dropped;
    for (std::size_t m = 0; m < sources.size(); ++m) {
        const auto& s = sources[m].series;
        for (std::size_t i = 0; i < s.weeks.size(); ++i) {
            const Date d = s.weeks[i].start;
            if (d < lo || d > hi) {
                dropped.emplace(d, s.weeks[i]);
                continue;
            }
            const auto t = static_cast<std::size_t>((d - lo).count() / 7);
            out.table.at(t, m) = s.values[i];
            if (s.partial(i)) out.partial.push_back({s.weeks[i], sources[m].variable.name, s.observed_days[i]});
        }
    }
    for (const auto& [d, w] : dropped) out.dropped.push_back(w);
    return out;
}

}  // namespace epigraph::data
