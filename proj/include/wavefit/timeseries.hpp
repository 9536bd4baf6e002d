#ifndef WAVEFIT_TIMESERIES_HPP
#define WAVEFIT_TIMESERIES_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "wavefit/dates.hpp"
#include "wavefit/errors.hpp"

namespace wavefit {

enum class Metric { cases, deaths };

inline std::string_view to_string(Metric m) { return m == Metric::cases ? "cases" : "deaths"; }

inline Metric parse_metric(std::string_view s) {
    if (s == "cases") return Metric::cases;
    if (s == "deaths") return Metric::deaths;
    throw DataError("unknown metric '" + std::string(s) + "'");
}

struct DailyCount {
    Date date;
    double count = 0.0;
};

struct RawDailySeries {
    std::string region;
    Metric metric = Metric::cases;
    std::vector<DailyCount> entries;
};

/// One epidemiological week: mean day on the region axis, mean daily count
/// and its standard error.
struct WeeklyPoint {
    double t = 0.0;
    double y = 0.0;
    double sigma = 0.0;
    int n_days = 0;
};

struct WeeklySeries {
    std::string region;
    Metric metric = Metric::cases;
    Date origin_date; // day index 0
    std::vector<WeeklyPoint> points;
};

enum class NegativePolicy { reject, clamp_to_zero };

inline constexpr long kDeathsOffsetDays = 14;

/// First day of the deaths window for a region whose cases window starts at `cases_start`.
inline Date deaths_window(Date cases_start) { return add_days(cases_start, kDeathsOffsetDays); }

/// Standard error assigned to a week whose daily values are all equal.
inline double zero_variance_sigma(double mean) { return std::max(1.0, 0.01 * std::abs(mean)); }

/// Averages daily counts over consecutive 7-day blocks anchored at `start`.
/// `cutoff` is the last day that may be used (inclusive); a trailing partial
/// week is dropped. Week k sits at t = 7k + 3 relative to `start`.
inline WeeklySeries aggregate_weekly(const RawDailySeries& raw, Date start, Date cutoff) {
    const long span = days_between(start, cutoff) + 1;
    if (span < 7) {
        throw DataError("empty range for " + raw.region + "/" + std::string(to_string(raw.metric)) + ": " +
                        format_date(start) + ".." + format_date(cutoff) + " is shorter than one week");
    }

    std::vector<DailyCount> sorted = raw.entries;
    std::sort(sorted.begin(), sorted.end(), [](const DailyCount& a, const DailyCount& b) { return a.date < b.date; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i].date == sorted[i - 1].date) {
            throw DataError("duplicate date " + format_date(sorted[i].date) + " in " + raw.region + "/" +
                            std::string(to_string(raw.metric)));
        }
    }

    const long n_weeks = span / 7;
    std::vector<double> daily(static_cast<std::size_t>(n_weeks * 7), std::nan(""));
    for (const auto& e : sorted) {
        const long offset = days_between(start, e.date);
        if (offset < 0 || offset >= n_weeks * 7) continue;
        if (!std::isfinite(e.count) || e.count < 0.0) {
            throw DataError("invalid count " + std::to_string(e.count) + " on " + format_date(e.date) + " in " +
                            raw.region + "/" + std::string(to_string(raw.metric)));
        }
        daily[static_cast<std::size_t>(offset)] = e.count;
    }

    WeeklySeries out{raw.region, raw.metric, start, {}};
    out.points.reserve(static_cast<std::size_t>(n_weeks));
    for (long k = 0; k < n_weeks; ++k) {
        const auto first = daily.begin() + k * 7;
        const auto last = first + 7;
        if (auto gap = std::find_if(first, last, [](double v) { return std::isnan(v); }); gap != last) {
            const Date missing = add_days(start, k * 7 + (gap - first));
            throw DataError("missing daily value for " + raw.region + "/" + std::string(to_string(raw.metric)) +
                            " on " + format_date(missing) + " (week starting " + format_date(add_days(start, k * 7)) +
                            ")");
        }
        const double mean = std::accumulate(first, last, 0.0) / 7.0;
        double ss = 0.0;
        for (auto it = first; it != last; ++it) ss += (*it - mean) * (*it - mean);
        const double sd = std::sqrt(ss / 6.0);
        const double sigma = ss == 0.0 ? zero_variance_sigma(mean) : sd / std::sqrt(7.0);
        out.points.push_back({static_cast<double>(7 * k + 3), mean, sigma, 7});
    }
    return out;
}

/// Moves the series onto another day-index origin, shifting every t.
inline WeeklySeries rebase(WeeklySeries series, Date new_origin) {
    const double shift = static_cast<double>(days_between(new_origin, series.origin_date));
    for (auto& p : series.points) p.t += shift;
    series.origin_date = new_origin;
    return series;
}

/// Adds fraction * peak_height in quadrature to every standard error.
inline WeeklySeries inflate_errors(WeeklySeries series, double fraction, double peak_height) {
    if (!(fraction >= 0.0)) throw std::invalid_argument("inflation fraction must be >= 0");
    if (!(peak_height > 0.0)) throw std::invalid_argument("peak height must be > 0");
    if (fraction == 0.0) return series;
    const double extra = fraction * peak_height;
    for (auto& p : series.points) p.sigma = std::sqrt(p.sigma * p.sigma + extra * extra);
    return series;
}

// ---------------------------------------------------------------------------
// Delimited-text input

/// Header names of the daily data file. The defaults match the project's
/// canonical layout; `who_columns()` covers WHO global-data exports.
struct ColumnMapping {
    std::string date = "date";
    std::string region = "region";
    std::string cases = "new_cases";
    std::string deaths = "new_deaths";
    char delimiter = ',';
};

inline ColumnMapping who_columns() { return {"Date_reported", "Country_code", "New_cases", "New_deaths", ','}; }

struct RegionDaily {
    RawDailySeries cases;
    RawDailySeries deaths;
};

namespace detail {

inline std::vector<std::string> split_delimited(std::string_view line, char delim) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == delim) {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline bool parse_real(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    std::string buf(s);
    char* end = nullptr;
    out = std::strtod(buf.c_str(), &end);
    return end == buf.c_str() + buf.size();
}

} // namespace detail

/// Reads one row per (date, region). Empty count cells are treated as
/// missing (the aggregation step reports them if they fall inside a window).
inline std::map<std::string, RegionDaily> read_daily_csv(std::istream& in, const ColumnMapping& columns = {},
                                                          NegativePolicy negatives = NegativePolicy::reject) {
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw DataError("empty data file: missing header row");
    ++line_no;
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3); // UTF-8 BOM

    const auto header = detail::split_delimited(line, columns.delimiter);
    auto column_of = [&](const std::string& name) -> std::size_t {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (detail::trim(header[i]) == name) return i;
        throw DataError("data header has no column '" + name + "'");
    };
    const std::size_t c_date = column_of(columns.date);
    const std::size_t c_region = column_of(columns.region);
    const std::size_t c_cases = column_of(columns.cases);
    const std::size_t c_deaths = column_of(columns.deaths);
    const std::size_t needed = std::max({c_date, c_region, c_cases, c_deaths}) + 1;

    std::map<std::string, RegionDaily> out;
    std::vector<std::string> errors;
    auto record = [&](RawDailySeries& series, Date date, std::string_view cell, const char* what) {
        if (detail::trim(cell).empty()) return;
        double v = 0.0;
        if (!detail::parse_real(cell, v) || !std::isfinite(v)) {
            errors.push_back("line " + std::to_string(line_no) + ": unparseable " + what + " '" + std::string(cell) +
                             "'");
            return;
        }
        if (v < 0.0) {
            if (negatives == NegativePolicy::reject) {
                errors.push_back("line " + std::to_string(line_no) + ": negative " + what + " " + std::string(cell));
                return;
            }
            v = 0.0;
        }
        series.entries.push_back({date, v});
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_delimited(line, columns.delimiter);
        if (fields.size() < needed) {
            errors.push_back("line " + std::to_string(line_no) + ": expected at least " + std::to_string(needed) +
                             " fields, got " + std::to_string(fields.size()));
            continue;
        }
        Date date;
        try {
            date = parse_date(detail::trim(fields[c_date]));
        } catch (const DataError& e) {
            errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
            continue;
        }
        const std::string region(detail::trim(fields[c_region]));
        auto& slot = out[region];
        slot.cases.region = slot.deaths.region = region;
        slot.cases.metric = Metric::cases;
        slot.deaths.metric = Metric::deaths;
        record(slot.cases, date, fields[c_cases], "cases");
        record(slot.deaths, date, fields[c_deaths], "deaths");
    }
    if (line_no == 1) throw DataError("data file has a header but no rows");
    if (!errors.empty()) {
        std::string msg = std::to_string(errors.size()) + " bad row(s) in data file";
        for (std::size_t i = 0; i < errors.size() && i < 20; ++i) msg += "\n  " + errors[i];
        throw DataError(msg);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Canonical weekly serialization: a metadata comment line, a header, then
// one row per week with round-trip precision.

inline void write_weekly(std::ostream& os, const WeeklySeries& s) {
    os << "# region=" << s.region << " metric=" << to_string(s.metric) << " origin=" << format_date(s.origin_date)
       << "\n";
    os << "t,y,sigma,n_days\n";
    char buf[128];
    for (const auto& p : s.points) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%d\n", p.t, p.y, p.sigma, p.n_days);
        os << buf;
    }
}

inline WeeklySeries read_weekly(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("# ", 0) != 0) throw DataError("weekly file: missing metadata line");
    WeeklySeries s;
    std::istringstream meta(line.substr(2));
    std::string kv;
    bool have_origin = false;
    while (meta >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const auto key = kv.substr(0, eq);
        const auto val = kv.substr(eq + 1);
        if (key == "region") s.region = val;
        else if (key == "metric") s.metric = parse_metric(val);
        else if (key == "origin") {
            s.origin_date = parse_date(val);
            have_origin = true;
        }
    }
    if (!have_origin) throw DataError("weekly file: missing origin");
    if (!std::getline(is, line)) throw DataError("weekly file: missing header");
    while (std::getline(is, line)) {
        if (detail::trim(line).empty()) continue;
        const auto f = detail::split_delimited(line, ',');
        WeeklyPoint p;
        double n = 0.0;
        if (f.size() != 4 || !detail::parse_real(f[0], p.t) || !detail::parse_real(f[1], p.y) ||
            !detail::parse_real(f[2], p.sigma) || !detail::parse_real(f[3], n)) {
            throw DataError("weekly file: bad row '" + line + "'");
        }
        p.n_days = static_cast<int>(n);
        s.points.push_back(p);
    }
    return s;
}

} // namespace wavefit

#endif // WAVEFIT_TIMESERIES_HPP
