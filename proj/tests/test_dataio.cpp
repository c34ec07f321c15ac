#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "callcast/dataio.hpp"
#include "test_support.hpp"

using namespace callcast;
using callcast::testing::error_code_of;
using callcast::testing::TempDir;
using callcast::testing::ymd;

namespace {

// 2004-01-04 is a Sunday, 2004-01-05 a Monday.
const std::string kTwoDay = "date,period,count\n2004-01-04,1,3\n2004-01-04,2,5\n2004-01-05,1,4\n2004-01-05,2,6\n";

PeriodSeries series_from_counts(const std::vector<std::vector<std::int64_t>>& rows, int period_minutes = 15) {
    PeriodSeries s;
    s.K = static_cast<int>(rows.front().size());
    s.period_minutes = period_minutes;
    s.days = callcast::testing::open_days(ymd(2004, 1, 4), rows.size());
    s.counts = Grid<std::int64_t>(rows.size(), rows.front().size());
    for (std::size_t d = 0; d < rows.size(); ++d)
        for (std::size_t k = 0; k < rows[d].size(); ++k) s.counts(d, k) = rows[d][k];
    return s;
}

}  // namespace

TEST(DateArithmetic, WeekdayIndexSkipsSaturday) {
    EXPECT_EQ(weekday_index(ymd(2004, 1, 4)), 1);  // Sunday
    EXPECT_EQ(weekday_index(ymd(2004, 1, 9)), 6);  // Friday
    EXPECT_EQ(weekday_index(ymd(2004, 1, 10)), 0); // Saturday
}

TEST(DateArithmetic, ParseAndFormatRoundTrip) {
    const auto d = parse_date("2004-02-29");
    ASSERT_TRUE(d);
    EXPECT_EQ(format_date(*d), "2004-02-29");
    EXPECT_FALSE(parse_date("2003-02-29"));
    EXPECT_FALSE(parse_date("yesterday"));
}

TEST(TrueDateGap, Examples) {
    EXPECT_EQ(true_date_gap(make_day(ymd(2004, 1, 9)), make_day(ymd(2004, 1, 11))), 2);
    EXPECT_EQ(true_date_gap(make_day(ymd(2004, 1, 9)), make_day(ymd(2004, 1, 9))), 0);
    EXPECT_EQ(true_date_gap(make_day(ymd(2004, 4, 11)), make_day(ymd(2004, 4, 18))), 7);
}

TEST(TrueDateGap, IsAMetricOnOpenDays) {
    const auto days = callcast::testing::open_days(ymd(2004, 3, 1), 30);
    for (const auto& a : days)
        for (const auto& b : days) {
            EXPECT_EQ(true_date_gap(a, b), true_date_gap(b, a));
            EXPECT_EQ(true_date_gap(a, b) == 0, a.date == b.date);
            for (std::size_t c = 0; c < days.size(); c += 7)
                EXPECT_LE(true_date_gap(a, b), true_date_gap(a, days[c]) + true_date_gap(days[c], b));
        }
}

TEST(LoadPeriodSeries, TwoDayFile) {
    TempDir tmp;
    const auto s = load_period_series(tmp.write("a.csv", kTwoDay));
    ASSERT_EQ(s.num_days(), 2u);
    EXPECT_EQ(s.K, 2);
    EXPECT_EQ(s.counts(0, 0), 3);
    EXPECT_EQ(s.counts(0, 1), 5);
    EXPECT_EQ(s.counts(1, 0), 4);
    EXPECT_EQ(s.counts(1, 1), 6);
    EXPECT_EQ(s.days[0].weekday, 1);
    EXPECT_EQ(s.days[1].weekday, 2);
}

TEST(LoadPeriodSeries, RowOrderDoesNotMatter) {
    TempDir tmp;
    const auto a = load_period_series(tmp.write("a.csv", kTwoDay));
    const auto b = load_period_series(
        tmp.write("b.csv", "date,period,count\n2004-01-05,2,6\n2004-01-04,2,5\n2004-01-05,1,4\n2004-01-04,1,3\n"));
    EXPECT_EQ(a, b);
}

TEST(LoadPeriodSeries, Errors) {
    TempDir tmp;
    EXPECT_EQ(error_code_of([&] { load_period_series(tmp.write("sat.csv", "date,period,count\n2004-01-10,1,3\n")); }),
              ErrorCode::MalformedRow);
    EXPECT_EQ(error_code_of([&] {
                  load_period_series(tmp.write("dup.csv", "date,period,count\n2004-01-04,1,3\n2004-01-04,1,4\n"));
              }),
              ErrorCode::DuplicateCell);
    EXPECT_EQ(error_code_of([&] {
                  load_period_series(
                      tmp.write("rag.csv", "date,period,count\n2004-01-04,1,3\n2004-01-04,2,3\n2004-01-05,1,4\n"));
              }),
              ErrorCode::RaggedDay);
    EXPECT_EQ(error_code_of([&] { load_period_series(tmp.file("absent.csv")); }), ErrorCode::MissingFile);
    EXPECT_EQ(error_code_of([&] { load_period_series(tmp.write("neg.csv", "date,period,count\n2004-01-04,1,-3\n")); }),
              ErrorCode::MalformedRow);
    EXPECT_EQ(error_code_of([&] { load_period_series(tmp.write("txt.csv", "date,period,count\n2004-01-04,1,many\n")); }),
              ErrorCode::MalformedRow);
}

TEST(LoadPeriodSeries, MissingFileMessageNamesPath) {
    TempDir tmp;
    try {
        load_period_series(tmp.file("nowhere.csv"));
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("nowhere.csv"), std::string::npos);
    }
}

TEST(Calendar, AttachCopiesFlags) {
    TempDir tmp;
    auto s = load_period_series(tmp.write("a.csv", kTwoDay));
    const auto cal = load_calendar(tmp.write(
        "c.csv",
        "date,is_outlier,delivery_1,delivery_7,delivery_14,delivery_21,billing_1,billing_7,billing_14,billing_21\n"
        "2004-01-05,1,0,1,0,0,0,0,1,0\n"));
    attach_calendar(s, cal);
    EXPECT_FALSE(s.days[0].is_outlier);
    EXPECT_TRUE(s.days[1].is_outlier);
    EXPECT_TRUE(s.days[1].delivery[1]);
    EXPECT_TRUE(s.days[1].billing[2]);
}

TEST(Calendar, WriteThenLoadRoundTrip) {
    TempDir tmp;
    auto days = callcast::testing::open_days(ymd(2004, 1, 4), 10);
    days[3].is_outlier = true;
    days[4].billing[3] = true;
    days[5].delivery[0] = true;
    write_calendar(days, tmp.file("c.csv"));
    const auto cal = load_calendar(tmp.file("c.csv"));
    ASSERT_EQ(cal.size(), days.size());
    for (const auto& d : days) EXPECT_EQ(cal.at(day_serial(d.date)), d);
}

TEST(PeriodSeriesIo, WriteThenLoadRoundTrip) {
    TempDir tmp;
    const auto s = series_from_counts({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}}, 30);
    write_period_series(s, tmp.file("s.csv"));
    EXPECT_EQ(load_period_series(tmp.file("s.csv")), s);
}

TEST(ServiceSeriesIo, LoadRequiresPositiveTimes) {
    TempDir tmp;
    EXPECT_EQ(error_code_of([&] {
                  load_service_series(
                      tmp.write("s.csv", "date,period,mean_service_minutes,n_calls\n2004-01-04,1,0,3\n"));
              }),
              ErrorCode::MalformedRow);
    const auto s = load_service_series(
        tmp.write("t.csv", "date,period,mean_service_minutes,n_calls\n2004-01-04,1,3.5,3\n2004-01-04,2,2.5,4\n"));
    EXPECT_EQ(s.K, 2);
    EXPECT_DOUBLE_EQ(s.mean_service(0, 1), 2.5);
    EXPECT_EQ(s.n_calls(0, 1), 4);
}

TEST(AggregateResolution, Examples) {
    const auto s = series_from_counts({{1, 2, 3, 4}});
    const auto a = aggregate_resolution(s, 2);
    EXPECT_EQ(a.K, 2);
    EXPECT_EQ(a.period_minutes, 30);
    EXPECT_EQ(a.counts(0, 0), 3);
    EXPECT_EQ(a.counts(0, 1), 7);
    EXPECT_EQ(aggregate_resolution(s, 1), s);
    const auto s24 = series_from_counts({std::vector<std::int64_t>(24, 1)});
    EXPECT_EQ(error_code_of([&] { aggregate_resolution(s24, 5); }), ErrorCode::NonDivisor);
}

TEST(DisaggregateForecast, Examples) {
    EXPECT_EQ(disaggregate_forecast(120.0, 2), (std::vector<double>{60.0, 60.0}));
    EXPECT_EQ(disaggregate_forecast(100.0, 4), (std::vector<double>{25.0, 25.0, 25.0, 25.0}));
    EXPECT_EQ(disaggregate_forecast(7.5, 1), (std::vector<double>{7.5}));
}

TEST(AggregateResolution, DisaggregatedTruthKeepsDayTotals) {
    std::mt19937_64 gen(11);
    std::poisson_distribution<int> pois(40.0);
    std::vector<std::vector<std::int64_t>> rows(8, std::vector<std::int64_t>(48));
    for (auto& r : rows)
        for (auto& v : r) v = pois(gen);
    const auto s = series_from_counts(rows);
    for (int f : {1, 2, 4, 16}) {
        const auto a = aggregate_resolution(s, f);
        for (std::size_t d = 0; d < s.num_days(); ++d) {
            double total = 0.0;
            for (int k = 0; k < a.K; ++k) {
                const auto parts = disaggregate_forecast(static_cast<double>(a.counts(d, static_cast<std::size_t>(k))), f);
                total += std::accumulate(parts.begin(), parts.end(), 0.0);
            }
            EXPECT_DOUBLE_EQ(total, static_cast<double>(s.day_total(d)));
        }
    }
}

TEST(SelectDays, KeepsDatesAndRows) {
    auto s = series_from_counts({{1, 1}, {2, 2}, {3, 3}});
    s.days[1].is_outlier = true;
    const auto r = select_days(s, [](const CalendarDay& d) { return !d.is_outlier; });
    ASSERT_EQ(r.num_days(), 2u);
    EXPECT_EQ(r.days[1].date, s.days[2].date);
    EXPECT_EQ(r.counts(1, 0), 3);
}
