#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "callcast/csv.hpp"
#include "callcast/error.hpp"

namespace callcast {

using Date = std::chrono::year_month_day;

inline std::int64_t day_serial(Date d) {
    return std::chrono::sys_days(d).time_since_epoch().count();
}

inline Date date_from_serial(std::int64_t serial) {
    return Date(std::chrono::sys_days(std::chrono::days(serial)));
}

inline Date add_days(Date d, std::int64_t n) { return date_from_serial(day_serial(d) + n); }

inline std::optional<Date> parse_date(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    auto y = csv::parse_int(s.substr(0, 4));
    auto m = csv::parse_int(s.substr(5, 2));
    auto d = csv::parse_int(s.substr(8, 2));
    if (!y || !m || !d) return std::nullopt;
    Date out{std::chrono::year(static_cast<int>(*y)), std::chrono::month(static_cast<unsigned>(*m)),
             std::chrono::day(static_cast<unsigned>(*d))};
    if (!out.ok()) return std::nullopt;
    return out;
}

inline std::string format_date(Date d) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                  static_cast<unsigned>(d.day()));
    return buf;
}

/// Sunday=1 .. Friday=6; Saturday has no index (returns 0).
inline int weekday_index(Date d) {
    const unsigned c = std::chrono::weekday(std::chrono::sys_days(d)).c_encoding();  // Sunday=0
    return c == 6 ? 0 : static_cast<int>(c) + 1;
}

inline constexpr std::array<const char*, 6> kWeekdayNames = {"Sunday",   "Monday", "Tuesday",
                                                             "Wednesday", "Thursday", "Friday"};
inline constexpr std::array<int, 4> kCycles = {1, 7, 14, 21};

/// Row-major dense grid with value semantics.
template <class T>
class Grid {
public:
    Grid() = default;
    Grid(std::size_t rows, std::size_t cols, T fill = T{}) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    const std::vector<T>& values() const noexcept { return data_; }

    bool operator==(const Grid&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

struct CalendarDay {
    Date date{};
    int weekday = 0;
    bool is_outlier = false;
    std::array<bool, 4> delivery{};  // cycles 1, 7, 14, 21
    std::array<bool, 4> billing{};

    bool operator==(const CalendarDay&) const = default;
};

inline CalendarDay make_day(Date d) {
    CalendarDay day;
    day.date = d;
    day.weekday = weekday_index(d);
    return day;
}

/// Calendar gap in days, counting days absent from any series.
inline std::int64_t true_date_gap(const CalendarDay& a, const CalendarDay& b) {
    const auto g = day_serial(b.date) - day_serial(a.date);
    return g < 0 ? -g : g;
}

namespace detail {

inline void validate_days(std::span<const CalendarDay> days, std::size_t rows, const char* what) {
    if (days.size() != rows) throw Error(ErrorCode::DimensionMismatch, std::string(what) + ": row count mismatch");
    for (std::size_t i = 0; i < days.size(); ++i) {
        if (!days[i].date.ok()) throw Error(ErrorCode::MalformedRow, std::string(what) + ": invalid date");
        if (days[i].weekday != weekday_index(days[i].date) || days[i].weekday == 0)
            throw Error(ErrorCode::MalformedRow, std::string(what) + ": bad weekday for " + format_date(days[i].date));
        if (i > 0 && !(days[i - 1].date < days[i].date))
            throw Error(ErrorCode::MalformedRow, std::string(what) + ": days not strictly increasing");
    }
}

}  // namespace detail

/// Per-day, per-period arrival counts. A closed day is absent, never zero-filled.
struct PeriodSeries {
    std::vector<CalendarDay> days;
    int K = 0;
    int period_minutes = 30;
    Grid<std::int64_t> counts;

    std::size_t num_days() const noexcept { return days.size(); }

    void validate() const {
        if (K <= 0) throw Error(ErrorCode::MalformedRow, "periods per day must be positive");
        if (period_minutes <= 0) throw Error(ErrorCode::MalformedRow, "period length must be positive");
        if (counts.cols() != static_cast<std::size_t>(K) && !days.empty())
            throw Error(ErrorCode::RaggedDay, "count grid has wrong number of periods");
        detail::validate_days(days, counts.rows(), "PeriodSeries");
        for (auto v : counts.values())
            if (v < 0) throw Error(ErrorCode::MalformedRow, "negative count");
    }

    std::optional<std::size_t> find(Date d) const {
        auto it = std::lower_bound(days.begin(), days.end(), d,
                                   [](const CalendarDay& c, Date x) { return c.date < x; });
        if (it == days.end() || it->date != d) return std::nullopt;
        return static_cast<std::size_t>(it - days.begin());
    }

    std::int64_t day_total(std::size_t d) const {
        std::int64_t s = 0;
        for (auto v : counts.row(d)) s += v;
        return s;
    }

    bool operator==(const PeriodSeries&) const = default;
};

struct ServiceSeries {
    std::vector<CalendarDay> days;
    int K = 0;
    int period_minutes = 30;
    Grid<double> mean_service;  // minutes
    Grid<std::int64_t> n_calls;

    std::size_t num_days() const noexcept { return days.size(); }

    void validate() const {
        if (K <= 0) throw Error(ErrorCode::MalformedRow, "periods per day must be positive");
        detail::validate_days(days, mean_service.rows(), "ServiceSeries");
        if (!days.empty() && mean_service.cols() != static_cast<std::size_t>(K))
            throw Error(ErrorCode::RaggedDay, "service grid has wrong number of periods");
        for (auto v : mean_service.values())
            if (!(v > 0.0)) throw Error(ErrorCode::MalformedRow, "mean service time must be positive");
    }

    std::optional<std::size_t> find(Date d) const {
        auto it = std::lower_bound(days.begin(), days.end(), d,
                                   [](const CalendarDay& c, Date x) { return c.date < x; });
        if (it == days.end() || it->date != d) return std::nullopt;
        return static_cast<std::size_t>(it - days.begin());
    }
};

struct ColumnSchema {
    std::string date = "date";
    std::string period = "period";
    std::string value = "count";
};

namespace detail {

inline Date require_date(const csv::Table& t, std::size_t row, std::size_t col) {
    auto d = parse_date(t.rows[row][col]);
    const auto where = t.path + ":" + std::to_string(t.line_numbers[row]);
    if (!d) throw Error(ErrorCode::MalformedRow, where + ": bad date '" + t.rows[row][col] + "'");
    if (weekday_index(*d) == 0) throw Error(ErrorCode::MalformedRow, where + ": Saturday rows are not allowed");
    return *d;
}

/// Groups (date, period) keyed cells into a day-major layout and checks completeness.
template <class V>
struct CellCollector {
    std::map<std::int64_t, std::map<int, V>> cells;

    void add(const csv::Table& t, std::size_t row, Date d, std::int64_t period, V value) {
        const auto where = t.path + ":" + std::to_string(t.line_numbers[row]);
        if (period < 1) throw Error(ErrorCode::MalformedRow, where + ": period must be >= 1");
        auto& day = cells[day_serial(d)];
        if (!day.emplace(static_cast<int>(period), value).second)
            throw Error(ErrorCode::DuplicateCell, where + ": duplicate cell " + format_date(d) + " period " +
                                                      std::to_string(period));
    }

    int infer_k(std::optional<int> expected) const {
        int k = expected.value_or(0);
        if (!expected)
            for (auto& [_, day] : cells)
                if (!day.empty()) k = std::max(k, day.rbegin()->first);
        for (auto& [serial, day] : cells) {
            if (static_cast<int>(day.size()) != k || day.rbegin()->first != k)
                throw Error(ErrorCode::RaggedDay, format_date(date_from_serial(serial)) + " has " +
                                                      std::to_string(day.size()) + " periods, expected " +
                                                      std::to_string(k));
        }
        return k;
    }
};

}  // namespace detail

inline PeriodSeries load_period_series(const std::string& path, const ColumnSchema& schema = {},
                                       int period_minutes = 30, std::optional<int> expected_k = std::nullopt) {
    const auto t = csv::read_table(path);
    const auto cd = t.require_column(schema.date);
    const auto cp = t.require_column(schema.period);
    const auto cv = t.require_column(schema.value);
    detail::CellCollector<std::int64_t> col;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto where = t.path + ":" + std::to_string(t.line_numbers[r]);
        const Date d = detail::require_date(t, r, cd);
        auto p = csv::parse_int(t.rows[r][cp]);
        auto v = csv::parse_int(t.rows[r][cv]);
        if (!p) throw Error(ErrorCode::MalformedRow, where + ": bad period");
        if (!v || *v < 0) throw Error(ErrorCode::MalformedRow, where + ": bad count '" + t.rows[r][cv] + "'");
        col.add(t, r, d, *p, *v);
    }
    PeriodSeries s;
    s.period_minutes = period_minutes;
    s.K = col.infer_k(expected_k);
    s.counts = Grid<std::int64_t>(col.cells.size(), static_cast<std::size_t>(s.K));
    std::size_t i = 0;
    for (auto& [serial, day] : col.cells) {
        s.days.push_back(make_day(date_from_serial(serial)));
        for (auto& [k, v] : day) s.counts(i, static_cast<std::size_t>(k - 1)) = v;
        ++i;
    }
    if (s.K <= 0) s.K = expected_k.value_or(1);
    s.validate();
    return s;
}

inline ServiceSeries load_service_series(const std::string& path, int period_minutes = 30,
                                         std::optional<int> expected_k = std::nullopt) {
    const auto t = csv::read_table(path);
    const auto cd = t.require_column("date");
    const auto cp = t.require_column("period");
    const auto cm = t.require_column("mean_service_minutes");
    const auto cn = t.column("n_calls");
    detail::CellCollector<std::pair<double, std::int64_t>> col;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto where = t.path + ":" + std::to_string(t.line_numbers[r]);
        const Date d = detail::require_date(t, r, cd);
        auto p = csv::parse_int(t.rows[r][cp]);
        auto m = csv::parse_double(t.rows[r][cm]);
        std::optional<std::int64_t> n = std::int64_t{0};
        if (cn) n = csv::parse_int(t.rows[r][*cn]);
        if (!p) throw Error(ErrorCode::MalformedRow, where + ": bad period");
        if (!m || !(*m > 0.0)) throw Error(ErrorCode::MalformedRow, where + ": bad mean service time");
        if (!n || *n < 0) throw Error(ErrorCode::MalformedRow, where + ": bad n_calls");
        col.add(t, r, d, *p, {*m, *n});
    }
    ServiceSeries s;
    s.period_minutes = period_minutes;
    s.K = col.infer_k(expected_k);
    s.mean_service = Grid<double>(col.cells.size(), static_cast<std::size_t>(s.K));
    s.n_calls = Grid<std::int64_t>(col.cells.size(), static_cast<std::size_t>(s.K));
    std::size_t i = 0;
    for (auto& [serial, day] : col.cells) {
        s.days.push_back(make_day(date_from_serial(serial)));
        for (auto& [k, v] : day) {
            s.mean_service(i, static_cast<std::size_t>(k - 1)) = v.first;
            s.n_calls(i, static_cast<std::size_t>(k - 1)) = v.second;
        }
        ++i;
    }
    if (s.K <= 0) s.K = expected_k.value_or(1);
    s.validate();
    return s;
}

using CalendarTable = std::map<std::int64_t, CalendarDay>;

inline CalendarTable load_calendar(const std::string& path) {
    const auto t = csv::read_table(path);
    const auto cd = t.require_column("date");
    const auto co = t.require_column("is_outlier");
    std::array<std::size_t, 4> cdel{}, cbil{};
    for (std::size_t j = 0; j < 4; ++j) {
        cdel[j] = t.require_column("delivery_" + std::to_string(kCycles[j]));
        cbil[j] = t.require_column("billing_" + std::to_string(kCycles[j]));
    }
    auto flag = [&](std::size_t r, std::size_t c) {
        const auto& f = t.rows[r][c];
        if (f == "1" || f == "true") return true;
        if (f == "0" || f == "false") return false;
        throw Error(ErrorCode::MalformedRow,
                    t.path + ":" + std::to_string(t.line_numbers[r]) + ": bad flag '" + f + "'");
    };
    CalendarTable out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        CalendarDay day = make_day(detail::require_date(t, r, cd));
        day.is_outlier = flag(r, co);
        for (std::size_t j = 0; j < 4; ++j) {
            day.delivery[j] = flag(r, cdel[j]);
            day.billing[j] = flag(r, cbil[j]);
        }
        if (!out.emplace(day_serial(day.date), day).second)
            throw Error(ErrorCode::DuplicateCell, t.path + ": duplicate calendar date " + format_date(day.date));
    }
    return out;
}

/// Copies outlier and billing-cycle annotations onto the series days. Days absent from
/// the calendar keep default (regular, no flags) annotations.
template <class Series>
void attach_calendar(Series& s, const CalendarTable& cal) {
    for (auto& day : s.days) {
        auto it = cal.find(day_serial(day.date));
        if (it != cal.end()) {
            day.is_outlier = it->second.is_outlier;
            day.delivery = it->second.delivery;
            day.billing = it->second.billing;
        }
    }
}

inline void write_period_series(const PeriodSeries& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path);
    out << "date,period,count\n";
    for (std::size_t d = 0; d < s.days.size(); ++d)
        for (int k = 0; k < s.K; ++k)
            out << format_date(s.days[d].date) << ',' << (k + 1) << ',' << s.counts(d, static_cast<std::size_t>(k))
                << '\n';
}

inline void write_service_series(const ServiceSeries& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path);
    out << "date,period,mean_service_minutes,n_calls\n";
    for (std::size_t d = 0; d < s.days.size(); ++d)
        for (int k = 0; k < s.K; ++k) {
            const auto kk = static_cast<std::size_t>(k);
            out << format_date(s.days[d].date) << ',' << (k + 1) << ',' << csv::format_double(s.mean_service(d, kk))
                << ',' << s.n_calls(d, kk) << '\n';
        }
}

inline void write_calendar(std::span<const CalendarDay> days, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path);
    out << "date,is_outlier,delivery_1,delivery_7,delivery_14,delivery_21,billing_1,billing_7,billing_14,billing_21\n";
    for (const auto& d : days) {
        out << format_date(d.date) << ',' << int(d.is_outlier);
        for (bool f : d.delivery) out << ',' << int(f);
        for (bool f : d.billing) out << ',' << int(f);
        out << '\n';
    }
}

/// Sums consecutive blocks of `factor` periods.
inline PeriodSeries aggregate_resolution(const PeriodSeries& s, int factor) {
    if (factor <= 0 || s.K % factor != 0)
        throw Error(ErrorCode::NonDivisor,
                    std::to_string(factor) + " does not divide " + std::to_string(s.K) + " periods");
    PeriodSeries out;
    out.days = s.days;
    out.K = s.K / factor;
    out.period_minutes = s.period_minutes * factor;
    out.counts = Grid<std::int64_t>(s.days.size(), static_cast<std::size_t>(out.K));
    for (std::size_t d = 0; d < s.days.size(); ++d)
        for (int k = 0; k < s.K; ++k)
            out.counts(d, static_cast<std::size_t>(k / factor)) += s.counts(d, static_cast<std::size_t>(k));
    return out;
}

/// Equal split of a coarse-period value over its `factor` fine periods.
inline std::vector<double> disaggregate_forecast(double value, int factor) {
    if (factor < 1) throw Error(ErrorCode::NonDivisor, "factor must be >= 1");
    return std::vector<double>(static_cast<std::size_t>(factor), value / factor);
}

/// Days (and their rows) selected by a predicate; keeps the true-date structure intact.
template <class Pred>
PeriodSeries select_days(const PeriodSeries& s, Pred keep) {
    PeriodSeries out;
    out.K = s.K;
    out.period_minutes = s.period_minutes;
    std::vector<std::size_t> idx;
    for (std::size_t d = 0; d < s.days.size(); ++d)
        if (keep(s.days[d])) idx.push_back(d);
    out.counts = Grid<std::int64_t>(idx.size(), static_cast<std::size_t>(s.K));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.days.push_back(s.days[idx[i]]);
        auto src = s.counts.row(idx[i]);
        std::copy(src.begin(), src.end(), out.counts.row(i).begin());
    }
    return out;
}

template <class Pred>
ServiceSeries select_days(const ServiceSeries& s, Pred keep) {
    ServiceSeries out;
    out.K = s.K;
    out.period_minutes = s.period_minutes;
    std::vector<std::size_t> idx;
    for (std::size_t d = 0; d < s.days.size(); ++d)
        if (keep(s.days[d])) idx.push_back(d);
    out.mean_service = Grid<double>(idx.size(), static_cast<std::size_t>(s.K));
    out.n_calls = Grid<std::int64_t>(idx.size(), static_cast<std::size_t>(s.K));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.days.push_back(s.days[idx[i]]);
        for (int k = 0; k < s.K; ++k) {
            const auto kk = static_cast<std::size_t>(k);
            out.mean_service(i, kk) = s.mean_service(idx[i], kk);
            out.n_calls(i, kk) = s.n_calls(idx[i], kk);
        }
    }
    return out;
}

}  // namespace callcast
