#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "callcast/dataio.hpp"
#include "callcast/error.hpp"
#include "callcast/forecaster.hpp"
#include "callcast/gausslik.hpp"
#include "callcast/parallel.hpp"

namespace callcast {

struct DayScore {
    double rmse = 0.0;
    double ape = 0.0;  // percent; NaN when every cell has zero truth
    double cover = 0.0;
    double width = 0.0;
    int zero_truth_cells = 0;  // excluded from APE
};

/**
 * @brief Daily accuracy measures for one day's K forecast cells, ordered by period.
 */
inline DayScore score_day(std::span<const ForecastRow> pred, std::span<const std::int64_t> truth) {
    if (pred.size() != truth.size() || pred.empty())
        throw Error(ErrorCode::DimensionMismatch, "forecast and truth must cover the same periods");
    DayScore s;
    double se = 0.0, re = 0.0;
    int re_n = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const double n = static_cast<double>(truth[k]);
        const double e = pred[k].point - n;
        se += e * e;
        if (truth[k] == 0) {
            ++s.zero_truth_cells;
        } else {
            re += 100.0 * std::abs(e) / n;
            ++re_n;
        }
        s.cover += (pred[k].lower <= n && n <= pred[k].upper) ? 1.0 : 0.0;
        s.width += pred[k].upper - pred[k].lower;
    }
    const double K = static_cast<double>(pred.size());
    s.rmse = std::sqrt(se / K);
    s.ape = re_n ? re / re_n : std::numeric_limits<double>::quiet_NaN();
    s.cover /= K;
    s.width /= K;
    return s;
}

struct Quartiles {
    std::size_t n = 0;
    double min = 0.0, q1 = 0.0, median = 0.0, mean = 0.0, q3 = 0.0, max = 0.0;
};

/// Sample quantile with linear interpolation between order statistics (R type 7).
inline double quantile_type7(std::vector<double> v, double p) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Summary of the finite values in `v`.
inline Quartiles summarize(const std::vector<double>& v) {
    std::vector<double> x;
    for (double a : v)
        if (std::isfinite(a)) x.push_back(a);
    Quartiles q;
    q.n = x.size();
    if (x.empty()) {
        q.min = q.q1 = q.median = q.mean = q.q3 = q.max = std::numeric_limits<double>::quiet_NaN();
        return q;
    }
    q.min = *std::min_element(x.begin(), x.end());
    q.max = *std::max_element(x.begin(), x.end());
    double sum = 0.0;
    for (double a : x) sum += a;
    q.mean = sum / static_cast<double>(x.size());
    q.q1 = quantile_type7(x, 0.25);
    q.median = quantile_type7(x, 0.5);
    q.q3 = quantile_type7(x, 0.75);
    return q;
}

struct NamedSpec {
    std::string label;
    ModelSpec spec;
};

struct EvalRecord {
    std::string model;
    int lead = 0;
    int resolution = 0;  // minutes per forecast period
    Date origin{};
    Date date{};
    int weekday = 0;
    DayScore score;
};

struct EvalFailure {
    std::string model;
    int lead = 0;
    int resolution = 0;
    Date origin{};
    std::string message;
};

struct EvalResult {
    std::vector<EvalRecord> records;
    std::vector<EvalFailure> failures;
    std::size_t attempted = 0;  // (spec, origin) pipeline runs
};

/// Regular days whose full learning window lies inside the data.
inline std::vector<Date> eligible_origins(const PeriodSeries& data, const ModelSpec& spec) {
    std::vector<Date> out;
    if (data.days.empty()) return out;
    const auto first = day_serial(data.days.front().date);
    for (const auto& d : data.days)
        if (!d.is_outlier && day_serial(d.date) - spec.lead_time_days - spec.learn_window_days >= first - 1)
            out.push_back(d.date);
    return out;
}

namespace detail {

/// Equal split of each coarse forecast row over its `factor` fine periods.
inline ForecastSet disaggregate_set(const ForecastSet& coarse, int factor) {
    ForecastSet fine;
    for (const auto& r : coarse.rows)
        for (int j = 0; j < factor; ++j) {
            ForecastRow f = r;
            f.period = (r.period - 1) * factor + j + 1;
            f.point = r.point / factor;
            f.lower = r.lower / factor;
            f.upper = r.upper / factor;
            f.point_transformed = root_transform(f.point);
            f.sd_transformed = 0.0;
            fine.rows.push_back(f);
        }
    return fine;
}

struct EvalTask {
    std::size_t spec = 0;
    Date origin{};
};

/**
 * Runs every (spec, origin) pair on `fit_data` and scores regular forecast days against
 * `truth` after splitting each forecast period into `factor` truth periods.
 */
inline EvalResult evaluate_tasks(const std::vector<NamedSpec>& specs, const PeriodSeries& fit_data,
                                 const PeriodSeries& truth, int factor, const std::vector<Date>& origins,
                                 TaskRunner& runner, const CalendarTable* calendar) {
    std::vector<EvalTask> tasks;
    for (std::size_t s = 0; s < specs.size(); ++s)
        for (const auto& o : origins) tasks.push_back({s, o});
    std::vector<std::vector<EvalRecord>> recs(tasks.size());
    std::vector<std::optional<EvalFailure>> fails(tasks.size());
    const int resolution = fit_data.period_minutes;

    runner.run(tasks.size(), [&](std::size_t i) {
        const auto& t = tasks[i];
        const auto& ns = specs[t.spec];
        try {
            auto fs = run_pipeline(ns.spec, fit_data, t.origin, calendar);
            if (factor > 1) fs = disaggregate_set(fs, factor);
            std::map<std::int64_t, std::vector<ForecastRow>> by_day;
            for (const auto& r : fs.rows) by_day[day_serial(r.date)].push_back(r);
            for (auto& [serial, rows] : by_day) {
                const auto idx = truth.find(date_from_serial(serial));
                if (!idx || truth.days[*idx].is_outlier) continue;
                std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.period < b.period; });
                EvalRecord rec{ns.label, ns.spec.lead_time_days, resolution, t.origin,
                               truth.days[*idx].date, truth.days[*idx].weekday,
                               score_day(rows, truth.counts.row(*idx))};
                recs[i].push_back(rec);
            }
        } catch (const std::exception& e) {
            fails[i] = EvalFailure{ns.label, ns.spec.lead_time_days, resolution, t.origin, e.what()};
        }
    });

    EvalResult out;
    out.attempted = tasks.size();
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        out.records.insert(out.records.end(), recs[i].begin(), recs[i].end());
        if (fails[i]) out.failures.push_back(*fails[i]);
    }
    return out;
}

inline void append(EvalResult& into, EvalResult&& from) {
    into.records.insert(into.records.end(), from.records.begin(), from.records.end());
    into.failures.insert(into.failures.end(), from.failures.begin(), from.failures.end());
    into.attempted += from.attempted;
}

}  // namespace detail

/**
 * @brief Rolling-origin evaluation. Failures are recorded per (spec, origin) and do not stop
 * the run; output order is (spec, origin) regardless of completion order.
 */
inline EvalResult rolling_eval(const std::vector<NamedSpec>& specs, const PeriodSeries& data,
                               const std::vector<Date>& origins, TaskRunner& runner,
                               const CalendarTable* calendar = nullptr) {
    return detail::evaluate_tasks(specs, data, data, 1, origins, runner, calendar);
}

/// Rolling evaluation repeated for each lead time; model labels are kept and `lead` differs.
inline EvalResult lead_time_sweep(const NamedSpec& spec, const std::vector<int>& leads, const PeriodSeries& data,
                                  const std::vector<Date>& origins, TaskRunner& runner,
                                  const CalendarTable* calendar = nullptr) {
    EvalResult out;
    for (int lead : leads) {
        NamedSpec s = spec;
        s.spec.lead_time_days = lead;
        detail::append(out, rolling_eval({s}, data, origins, runner, calendar));
    }
    return out;
}

/**
 * @brief For each factor: aggregate the base series, forecast at the coarse grain, split each
 * forecast equally over its base periods, and score at the base grain.
 */
inline EvalResult resolution_sweep(const NamedSpec& spec, const std::vector<int>& factors, const PeriodSeries& base,
                                   const std::vector<Date>& origins, TaskRunner& runner,
                                   const CalendarTable* calendar = nullptr) {
    EvalResult out;
    for (int f : factors) {
        const auto coarse = aggregate_resolution(base, f);
        detail::append(out, detail::evaluate_tasks({spec}, coarse, base, f, origins, runner, calendar));
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Summaries and output
// ---------------------------------------------------------------------------------------------

inline constexpr std::array<const char*, 4> kMeasureNames = {"RMSE", "APE", "Cover", "Width"};

inline double measure_value(const DayScore& s, std::size_t m) {
    switch (m) {
        case 0: return s.rmse;
        case 1: return s.ape;
        case 2: return s.cover;
        default: return s.width;
    }
}

struct GroupKey {
    std::string model;
    int lead = 0;
    int resolution = 0;
    int weekday = 0;  // 0 when not grouped by weekday

    auto operator<=>(const GroupKey&) const = default;
};

struct GroupSummary {
    GroupKey key;
    std::size_t scored_days = 0;
    std::size_t zero_truth_cells = 0;
    std::array<Quartiles, 4> measures;
};

struct EvalSummary {
    std::vector<GroupSummary> groups;
    std::size_t attempted = 0;
    std::size_t failures = 0;
};

inline EvalSummary summarize_eval(const EvalResult& r, bool by_weekday = false) {
    std::map<GroupKey, std::vector<const EvalRecord*>> groups;
    for (const auto& rec : r.records) groups[{rec.model, rec.lead, rec.resolution, by_weekday ? rec.weekday : 0}].push_back(&rec);
    EvalSummary out;
    out.attempted = r.attempted;
    out.failures = r.failures.size();
    for (const auto& [key, recs] : groups) {
        GroupSummary g;
        g.key = key;
        g.scored_days = recs.size();
        for (std::size_t m = 0; m < 4; ++m) {
            std::vector<double> v;
            for (const auto* rec : recs) v.push_back(measure_value(rec->score, m));
            g.measures[m] = summarize(v);
        }
        for (const auto* rec : recs) g.zero_truth_cells += static_cast<std::size_t>(rec->score.zero_truth_cells);
        out.groups.push_back(g);
    }
    return out;
}

inline std::string format_value(double v) { return std::isfinite(v) ? csv::format_double(v) : std::string("nan"); }

/// Long format: model,lead,resolution,date,measure,value.
inline void write_eval_records_csv(const EvalResult& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path);
    out << "model,lead,resolution,date,measure,value\n";
    for (const auto& rec : r.records)
        for (std::size_t m = 0; m < 4; ++m)
            out << rec.model << ',' << rec.lead << ',' << rec.resolution << ',' << format_date(rec.date) << ','
                << kMeasureNames[m] << ',' << format_value(measure_value(rec.score, m)) << '\n';
}

/// Four summary rows (Q1, median, mean, Q3) per measure and group.
inline void write_eval_summary_csv(const EvalSummary& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path);
    out << "model,lead,resolution,weekday,measure,statistic,value\n";
    for (const auto& g : s.groups)
        for (std::size_t m = 0; m < 4; ++m) {
            const auto& q = g.measures[m];
            const std::pair<const char*, double> stats[] = {{"Q1", q.q1}, {"median", q.median}, {"mean", q.mean}, {"Q3", q.q3}};
            for (const auto& [name, v] : stats)
                out << g.key.model << ',' << g.key.lead << ',' << g.key.resolution << ','
                    << (g.key.weekday ? kWeekdayNames[static_cast<std::size_t>(g.key.weekday - 1)] : "all") << ','
                    << kMeasureNames[m] << ',' << name << ',' << format_value(v) << '\n';
        }
}

inline void write_eval_failures_csv(const EvalResult& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path);
    out << "model,lead,resolution,origin,message\n";
    for (const auto& f : r.failures) {
        std::string msg = f.message;
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        out << f.model << ',' << f.lead << ',' << f.resolution << ',' << format_date(f.origin) << ',' << msg << '\n';
    }
}

}  // namespace callcast
