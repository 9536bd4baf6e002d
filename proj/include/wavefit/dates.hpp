#ifndef WAVEFIT_DATES_HPP
#define WAVEFIT_DATES_HPP

#include <chrono>
#include <cstdio>
#include <string>
#include <string_view>

#include "wavefit/errors.hpp"

namespace wavefit {

using Date = std::chrono::sys_days;

namespace detail {

inline bool parse_fixed_int(std::string_view s, int& out) {
    if (s.empty()) return false;
    int v = 0;
    for (char ch : s) {
        if (ch < '0' || ch > '9') return false;
        v = v * 10 + (ch - '0');
    }
    out = v;
    return true;
}

} // namespace detail

/// Parses an ISO-8601 calendar date (YYYY-MM-DD). A trailing time part
/// ("T..." or " ...") is ignored, which covers timestamped exports.
inline Date parse_date(std::string_view text) {
    if (auto cut = text.find_first_of("T "); cut != std::string_view::npos) text = text.substr(0, cut);
    int y = 0, m = 0, d = 0;
    if (text.size() != 10 || text[4] != '-' || text[7] != '-' ||
        !detail::parse_fixed_int(text.substr(0, 4), y) ||
        !detail::parse_fixed_int(text.substr(5, 2), m) ||
        !detail::parse_fixed_int(text.substr(8, 2), d)) {
        throw DataError("invalid ISO date '" + std::string(text) + "'");
    }
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                                          std::chrono::day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) throw DataError("invalid calendar date '" + std::string(text) + "'");
    return Date{ymd};
}

inline std::string format_date(Date date) {
    const std::chrono::year_month_day ymd{date};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

/// Signed number of days from `from` to `to`.
inline long days_between(Date from, Date to) { return static_cast<long>((to - from).count()); }

inline Date add_days(Date date, long days) { return date + std::chrono::days{days}; }

} // namespace wavefit

#endif // WAVEFIT_DATES_HPP
