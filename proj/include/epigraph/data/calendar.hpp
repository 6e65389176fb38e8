#pragma once

#include <charconv>
#include <chrono>
#include <compare>
#include <cstdio>
#include <string>
#include <string_view>

#include "epigraph/core/errors.hpp"

namespace epigraph::data {

using Date = std::chrono::sys_days;

inline Date make_date(int y, unsigned m, unsigned d) {
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) throw RangeError("invalid calendar date " + std::to_string(y) + "-" + std::to_string(m) + "-" +
                                    std::to_string(d));
    return Date{ymd};
}

inline std::string format_date(Date d) {
    const std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
}

// Parses YYYY-MM-DD.
inline Date parse_date(std::string_view text) {
    auto fail = [&] { return SchemaError("not an ISO-8601 date: '" + std::string(text) + "'"); };
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') throw fail();
    int y = 0;
    unsigned m = 0, d = 0;
    if (std::from_chars(text.data(), text.data() + 4, y).ec != std::errc{} ||
        std::from_chars(text.data() + 5, text.data() + 7, m).ec != std::errc{} ||
        std::from_chars(text.data() + 8, text.data() + 10, d).ec != std::errc{})
        throw fail();
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) throw fail();
    return Date{ymd};
}

inline int calendar_year(Date d) { return static_cast<int>(std::chrono::year_month_day{d}.year()); }

// Sunday on or before `d`.
inline Date week_sunday(Date d) { return d - std::chrono::days{std::chrono::weekday{d}.c_encoding()}; }

// Epidemiological week, Sunday through Saturday.
struct MmwrWeek {
    int year = 0;
    int week = 0;
    Date start{};

    Date end() const { return start + std::chrono::days{6}; }
    MmwrWeek next() const;

    friend bool operator==(const MmwrWeek& a, const MmwrWeek& b) { return a.start == b.start; }
    friend auto operator<=>(const MmwrWeek& a, const MmwrWeek& b) { return a.start <=> b.start; }
};

// Start (a Sunday) of week 1 of MMWR year `year`: the first week holding at
// least four days of January, i.e. the week containing January 4.
inline Date mmwr_year_start(int year) { return week_sunday(make_date(year, 1, 4)); }

inline constexpr int kMinYear = 1990;
inline constexpr int kMaxYear = 2100;

inline MmwrWeek mmwr_week_of(Date date) {
    const int y = calendar_year(date);
    if (y < kMinYear || y > kMaxYear)
        throw RangeError("date " + format_date(date) + " outside supported range " + std::to_string(kMinYear) + "-" +
                         std::to_string(kMaxYear));
    const Date sunday = week_sunday(date);
    int mmwr_year = y;
    if (sunday >= mmwr_year_start(y + 1))
        mmwr_year = y + 1;
    else if (sunday < mmwr_year_start(y))
        mmwr_year = y - 1;
    const auto offset = (sunday - mmwr_year_start(mmwr_year)).count();
    return MmwrWeek{mmwr_year, static_cast<int>(offset / 7) + 1, sunday};
}

inline int weeks_in_mmwr_year(int year) {
    return static_cast<int>((mmwr_year_start(year + 1) - mmwr_year_start(year)).count() / 7);
}

inline MmwrWeek mmwr_week(int year, int week) {
    if (year < kMinYear - 1 || year > kMaxYear + 1) throw RangeError("MMWR year out of range: " + std::to_string(year));
    if (week < 1 || week > weeks_in_mmwr_year(year))
        throw RangeError("MMWR " + std::to_string(year) + " has no week " + std::to_string(week));
    return MmwrWeek{year, week, mmwr_year_start(year) + std::chrono::days{7 * (week - 1)}};
}

inline MmwrWeek MmwrWeek::next() const {
    const Date s = start + std::chrono::days{7};
    if (week < weeks_in_mmwr_year(year)) return MmwrWeek{year, week + 1, s};
    return MmwrWeek{year + 1, 1, s};
}

}  // namespace epigraph::data
