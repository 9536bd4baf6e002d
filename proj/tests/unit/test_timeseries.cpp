#include <algorithm>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "wavefit/timeseries.hpp"

using namespace wavefit;

namespace {

RawDailySeries daily(const std::string& start, const std::vector<double>& counts, Metric m = Metric::cases) {
    RawDailySeries s;
    s.region = "X";
    s.metric = m;
    const Date d0 = parse_date(start);
    for (std::size_t i = 0; i < counts.size(); ++i) s.entries.push_back({add_days(d0, static_cast<long>(i)), counts[i]});
    return s;
}

std::vector<double> constant(std::size_t n, double v) { return std::vector<double>(n, v); }

} // namespace

TEST(Dates, RoundTripAndArithmetic) {
    const Date d = parse_date("2021-11-23");
    EXPECT_EQ(format_date(d), "2021-11-23");
    EXPECT_EQ(days_between(d, parse_date("2022-04-25")), 153);
    EXPECT_EQ(format_date(add_days(d, 14)), "2021-12-07");
    EXPECT_EQ(format_date(parse_date("2022-01-03T00:00:00Z")), "2022-01-03");
    EXPECT_THROW(parse_date("2022-13-01"), DataError);
    EXPECT_THROW(parse_date("2022-02-30"), DataError);
    EXPECT_THROW(parse_date("yesterday"), DataError);
}

TEST(Aggregate, ConstantSeriesGivesFlooredSigma) {
    const auto w = aggregate_weekly(daily("2022-01-01", constant(14, 70.0)), parse_date("2022-01-01"),
                                    parse_date("2022-01-14"));
    ASSERT_EQ(w.points.size(), 2u);
    EXPECT_DOUBLE_EQ(w.points[0].t, 3.0);
    EXPECT_DOUBLE_EQ(w.points[1].t, 10.0);
    for (const auto& p : w.points) {
        EXPECT_DOUBLE_EQ(p.y, 70.0);
        EXPECT_DOUBLE_EQ(p.sigma, 1.0);
        EXPECT_EQ(p.n_days, 7);
    }
}

TEST(Aggregate, LargeConstantUsesRelativeFloor) {
    const auto w = aggregate_weekly(daily("2022-01-01", constant(7, 5000.0)), parse_date("2022-01-01"),
                                    parse_date("2022-01-07"));
    ASSERT_EQ(w.points.size(), 1u);
    EXPECT_DOUBLE_EQ(w.points[0].sigma, 50.0);
}

TEST(Aggregate, OneToSevenWeek) {
    const auto w = aggregate_weekly(daily("2022-01-01", {1, 2, 3, 4, 5, 6, 7}), parse_date("2022-01-01"),
                                    parse_date("2022-01-07"));
    ASSERT_EQ(w.points.size(), 1u);
    EXPECT_DOUBLE_EQ(w.points[0].y, 4.0);
    EXPECT_NEAR(w.points[0].sigma * std::sqrt(7.0), 2.160247, 1e-6);
    EXPECT_NEAR(w.points[0].sigma, 0.816497, 1e-6);
}

TEST(Aggregate, TrailingPartialWeekIsDropped) {
    const auto w = aggregate_weekly(daily("2022-01-01", constant(20, 3.0)), parse_date("2022-01-01"),
                                    parse_date("2022-01-20"));
    EXPECT_EQ(w.points.size(), 2u);
}

TEST(Aggregate, TwentyOneDayToy) {
    const auto w = aggregate_weekly(daily("2022-03-01", constant(21, 10.0)), parse_date("2022-03-01"),
                                    parse_date("2022-03-21"));
    ASSERT_EQ(w.points.size(), 3u);
    EXPECT_DOUBLE_EQ(w.points[2].t, 17.0);
}

TEST(Aggregate, SixCountryWindowsGiveTheStatedWeekCounts) {
    struct W {
        const char* start;
        const char* cutoff;
        int cases;
        int deaths;
    };
    const W windows[] = {{"2021-11-23", "2022-04-25", 22, 20}, {"2021-12-07", "2022-04-25", 20, 18},
                         {"2021-11-30", "2022-04-25", 21, 19}, {"2021-11-30", "2022-04-25", 21, 19},
                         {"2021-12-07", "2022-04-25", 20, 18}, {"2021-11-30", "2022-04-25", 21, 19}};
    int total_cases = 0, total_deaths = 0;
    for (const auto& w : windows) {
        const Date start = parse_date(w.start), cutoff = parse_date(w.cutoff);
        const auto n = static_cast<std::size_t>(days_between(start, cutoff) + 40);
        const auto c = aggregate_weekly(daily(w.start, constant(n, 100.0)), start, cutoff);
        const auto d = aggregate_weekly(daily(w.start, constant(n, 100.0), Metric::deaths), deaths_window(start), cutoff);
        EXPECT_EQ(static_cast<int>(c.points.size()), w.cases) << w.start;
        EXPECT_EQ(static_cast<int>(d.points.size()), w.deaths) << w.start;
        total_cases += static_cast<int>(c.points.size());
        total_deaths += static_cast<int>(d.points.size());
    }
    EXPECT_EQ(total_cases, 125);
    EXPECT_EQ(total_deaths, 113);
}

TEST(Aggregate, MissingDayIsNamed) {
    auto s = daily("2022-01-01", constant(14, 5.0));
    s.entries.erase(s.entries.begin() + 9);
    try {
        aggregate_weekly(s, parse_date("2022-01-01"), parse_date("2022-01-14"));
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("2022-01-10"), std::string::npos) << e.what();
    }
}

TEST(Aggregate, RangeShorterThanAWeekIsAnError) {
    EXPECT_THROW(aggregate_weekly(daily("2022-01-01", constant(14, 5.0)), parse_date("2022-01-05"),
                                  parse_date("2022-01-10")),
                 DataError);
    EXPECT_THROW(aggregate_weekly(daily("2022-01-01", constant(14, 5.0)), parse_date("2022-01-10"),
                                  parse_date("2022-01-01")),
                 DataError);
}

TEST(Aggregate, DuplicateDateIsAnError) {
    auto s = daily("2022-01-01", constant(7, 5.0));
    s.entries.push_back(s.entries[3]);
    EXPECT_THROW(aggregate_weekly(s, parse_date("2022-01-01"), parse_date("2022-01-07")), DataError);
}

TEST(Aggregate, MeanPreservingAndOrderIndependent) {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> u(0.0, 1e5);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> counts(7 * (1 + rep % 6));
        for (auto& c : counts) c = std::floor(u(gen));
        auto s = daily("2021-06-01", counts);
        const Date start = parse_date("2021-06-01");
        const Date cutoff = add_days(start, static_cast<long>(counts.size()) - 1);
        const auto w = aggregate_weekly(s, start, cutoff);
        double total = 0.0;
        for (double c : counts) total += c;
        double weekly_total = 0.0;
        for (const auto& p : w.points) weekly_total += 7.0 * p.y;
        EXPECT_NEAR(weekly_total, total, 1e-9 * total);

        std::shuffle(s.entries.begin(), s.entries.end(), gen);
        const auto w2 = aggregate_weekly(s, start, cutoff);
        ASSERT_EQ(w2.points.size(), w.points.size());
        for (std::size_t k = 0; k < w.points.size(); ++k) {
            EXPECT_EQ(w2.points[k].y, w.points[k].y);
            EXPECT_EQ(w2.points[k].sigma, w.points[k].sigma);
        }
    }
}

TEST(Windows, DeathsStartTwoWeeksLater) {
    EXPECT_EQ(format_date(deaths_window(parse_date("2021-11-23"))), "2021-12-07");
    EXPECT_EQ(format_date(deaths_window(parse_date("2021-12-25"))), "2022-01-08");
}

TEST(Windows, RebaseShiftsTimes) {
    const Date start = parse_date("2021-11-23");
    auto d = aggregate_weekly(daily("2021-11-23", constant(60, 9.0), Metric::deaths), deaths_window(start),
                              parse_date("2022-01-20"));
    EXPECT_DOUBLE_EQ(d.points.front().t, 3.0);
    d = rebase(d, start);
    EXPECT_DOUBLE_EQ(d.points.front().t, 17.0);
    EXPECT_EQ(d.origin_date, start);
}

TEST(Inflate, ZeroIsIdentity) {
    auto w = aggregate_weekly(daily("2022-01-01", {1, 2, 3, 4, 5, 6, 7}), parse_date("2022-01-01"),
                              parse_date("2022-01-07"));
    const auto same = inflate_errors(w, 0.0, 1e6);
    EXPECT_EQ(same.points[0].sigma, w.points[0].sigma);
}

TEST(Inflate, AddsInQuadrature) {
    WeeklySeries w;
    w.points = {{3.0, 10.0, 3.0, 7}, {10.0, 20.0, 0.5, 7}};
    const auto out = inflate_errors(w, 0.01, 400.0);
    EXPECT_DOUBLE_EQ(out.points[0].sigma, 5.0);
    EXPECT_NEAR(out.points[1].sigma, std::sqrt(16.25), 1e-12);
}

TEST(Inflate, MonotoneInFraction) {
    WeeklySeries w;
    w.points = {{3.0, 10.0, 2.0, 7}, {10.0, 20.0, 7.0, 7}};
    double prev = 0.0;
    for (double f : {0.0, 0.001, 0.01, 0.02, 0.1}) {
        const auto out = inflate_errors(w, f, 1000.0);
        for (std::size_t k = 0; k < w.points.size(); ++k) EXPECT_GE(out.points[k].sigma, w.points[k].sigma);
        EXPECT_GE(out.points[0].sigma, prev);
        prev = out.points[0].sigma;
    }
}

TEST(Inflate, RejectsBadArguments) {
    WeeklySeries w;
    w.points = {{3.0, 10.0, 2.0, 7}};
    EXPECT_THROW(inflate_errors(w, -0.01, 10.0), std::invalid_argument);
    EXPECT_THROW(inflate_errors(w, 0.01, 0.0), std::invalid_argument);
}

TEST(Csv, ReadsWhoLayoutWithQuotesAndBom) {
    std::istringstream in(
        "\xEF\xBB\xBF"
        "Date_reported,Country_code,Country,WHO_region,New_cases,Cumulative_cases,New_deaths,Cumulative_deaths\n"
        "2022-01-01,US,\"United States of America\",AMRO,100,1000,3,30\n"
        "2022-01-02,US,\"United States of America\",AMRO,110,1110,,33\n"
        "2022-01-01,FR,France,EURO,50,500,1,10\n");
    const auto data = read_daily_csv(in, who_columns());
    ASSERT_EQ(data.size(), 2u);
    EXPECT_EQ(data.at("US").cases.entries.size(), 2u);
    EXPECT_EQ(data.at("US").deaths.entries.size(), 1u);
    EXPECT_DOUBLE_EQ(data.at("FR").cases.entries[0].count, 50.0);
}

TEST(Csv, EmptyAndHeaderOnlyFilesAreErrors) {
    std::istringstream empty("");
    EXPECT_THROW(read_daily_csv(empty), DataError);
    std::istringstream header("date,region,new_cases,new_deaths\n");
    EXPECT_THROW(read_daily_csv(header), DataError);
}

TEST(Csv, BadRowsAreReportedWithLineNumbers) {
    std::istringstream in("date,region,new_cases,new_deaths\n"
                          "2022-01-01,A,10,1\n"
                          "2022-01-02,A,abc,1\n"
                          "2022-01-03,A,-4,1\n");
    try {
        read_daily_csv(in);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
        EXPECT_NE(msg.find("line 4"), std::string::npos) << msg;
    }
}

TEST(Csv, NegativeCountsCanBeClamped) {
    std::istringstream in("date,region,new_cases,new_deaths\n2022-01-01,A,-4,1\n");
    const auto data = read_daily_csv(in, {}, NegativePolicy::clamp_to_zero);
    EXPECT_DOUBLE_EQ(data.at("A").cases.entries[0].count, 0.0);
}

TEST(Csv, MissingColumnIsNamed) {
    std::istringstream in("date,region,cases\n2022-01-01,A,4\n");
    try {
        read_daily_csv(in);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("new_cases"), std::string::npos);
    }
}

TEST(WeeklyFile, RoundTripIsExact) {
    WeeklySeries w;
    w.region = "Germany";
    w.metric = Metric::deaths;
    w.origin_date = parse_date("2021-11-29");
    w.points = {{17.0, 123.456789012345, 0.1 + 0.2, 7}, {24.0, 1.0 / 3.0, 2.0 / 7.0, 7}};
    std::stringstream ss;
    write_weekly(ss, w);
    const auto back = read_weekly(ss);
    EXPECT_EQ(back.region, w.region);
    EXPECT_EQ(back.metric, w.metric);
    EXPECT_EQ(back.origin_date, w.origin_date);
    ASSERT_EQ(back.points.size(), 2u);
    for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_EQ(back.points[k].t, w.points[k].t);
        EXPECT_EQ(back.points[k].y, w.points[k].y);
        EXPECT_EQ(back.points[k].sigma, w.points[k].sigma);
    }
}
