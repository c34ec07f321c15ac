#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <boost/math/special_functions/erf.hpp>

#include "callcast/dataio.hpp"
#include "callcast/error.hpp"
#include "callcast/gausslik.hpp"

namespace callcast {

/// Offered load in servers: arrivals per period times mean service over period length.
inline double offered_load(double lambda_count, double mean_service_min, double period_minutes) {
    if (!(lambda_count > 0.0) || !(mean_service_min > 0.0) || !(period_minutes > 0.0))
        throw Error(ErrorCode::NonPositiveInput, "offered load needs positive arrivals, service time and period length");
    return lambda_count * mean_service_min / period_minutes;
}

/// A service-time cdf tabulated at non-decreasing times (a repeated time encodes a jump).
struct TabulatedCdf {
    std::vector<double> t;
    std::vector<double> p;

    void validate() const {
        if (t.size() != p.size() || t.size() < 2) throw Error(ErrorCode::InvalidCdf, "cdf needs at least two points");
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (!(p[i] >= 0.0 && p[i] <= 1.0) || !std::isfinite(t[i]) || t[i] < 0.0)
                throw Error(ErrorCode::InvalidCdf, "cdf values must lie in [0, 1] at non-negative times");
            if (i > 0 && (t[i] < t[i - 1] || p[i] < p[i - 1]))
                throw Error(ErrorCode::InvalidCdf, "cdf must be non-decreasing");
        }
    }
};

/// Samples `cdf` on n+1 equally spaced points in [0, t_max].
template <class F>
TabulatedCdf tabulate_cdf(F&& cdf, double t_max, int n) {
    TabulatedCdf out;
    for (int i = 0; i <= n; ++i) {
        const double t = t_max * i / n;
        out.t.push_back(t);
        out.p.push_back(cdf(t));
    }
    return out;
}

/**
 * @brief Stationary-excess cdf (1/E S) * integral_0^t (1 - G(u)) du by the trapezoid rule
 * on the tabulated points, with G held at its last value beyond the table.
 */
inline double stationary_excess_cdf(const TabulatedCdf& G, double mean_service, double t) {
    G.validate();
    if (!(mean_service > 0.0)) throw Error(ErrorCode::InvalidCdf, "mean service must be positive");
    if (t <= 0.0) return 0.0;
    double area = 0.0;
    double prev_t = 0.0, prev_s = 1.0 - (G.t.front() <= 0.0 ? G.p.front() : 0.0);
    for (std::size_t i = 0; i < G.t.size(); ++i) {
        const double ti = G.t[i], si = 1.0 - G.p[i];
        if (ti >= t) {
            const double frac = ti > prev_t ? (t - prev_t) / (ti - prev_t) : 0.0;
            const double st = prev_s + frac * (si - prev_s);
            area += 0.5 * (prev_s + st) * (t - prev_t);
            return std::clamp(area / mean_service, 0.0, 1.0);
        }
        area += 0.5 * (prev_s + si) * (ti - prev_t);
        prev_t = ti;
        prev_s = si;
    }
    area += prev_s * (t - prev_t);
    return std::clamp(area / mean_service, 0.0, 1.0);
}

/// Square-root staffing ceil(R + beta sqrt(R)), at least one agent.
inline int sqrt_staff(double R, double beta) {
    if (!(R > 0.0)) throw Error(ErrorCode::NonPositiveInput, "offered load must be positive");
    const double x = R + beta * std::sqrt(R);
    return std::max(1, static_cast<int>(std::ceil(x - 1e-9)));
}

/// Standardised load error (R_pred - R_true) / sqrt(R_true).
inline double delta_beta(double R_pred, double R_true) {
    if (!(R_pred > 0.0) || !(R_true > 0.0)) throw Error(ErrorCode::NonPositiveInput, "loads must be positive");
    return (R_pred - R_true) / std::sqrt(R_true);
}

/// Quality parameter realised under the true load when staffing from the predicted load.
inline double beta_adjusted(double R_pred, double R_true, double beta_u) {
    return (static_cast<double>(sqrt_staff(R_pred, beta_u)) - R_true) / std::sqrt(R_true);
}

struct DeltaN {
    double approx = 0.0;  // R_pred - R_true
    int exact = 0;        // sqrt_staff(R_pred) - sqrt_staff(R_true)
};

inline DeltaN delta_N(double R_pred, double R_true, double beta) {
    if (!(R_pred > 0.0) || !(R_true > 0.0)) throw Error(ErrorCode::NonPositiveInput, "loads must be positive");
    return {R_pred - R_true, sqrt_staff(R_pred, beta) - sqrt_staff(R_true, beta)};
}

/// Standard normal hazard phi(x) / (1 - Phi(x)).
inline double normal_hazard(double x) {
    if (x > 30.0) return x + 1.0 / x - 2.0 / (x * x * x);
    const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    const double tail = 0.5 * boost::math::erfc(x / std::numbers::sqrt2);
    return phi / tail;
}

/// QED-asymptotic delay probability for staffing parameter beta and service/patience ratio mu/theta.
inline double garnett_delay(double beta, double mu_over_theta) {
    if (!(mu_over_theta > 0.0)) throw Error(ErrorCode::NonPositiveInput, "mu/theta must be positive");
    const double r = std::sqrt(mu_over_theta);
    return 1.0 / (1.0 + (1.0 / r) * normal_hazard(beta * r) / normal_hazard(-beta));
}

struct ErlangAResult {
    double p_wait = 0.0;
    double p_abandon = 0.0;
    double e_wait = 0.0;  // minutes, over all arrivals
    double e_queue = 0.0;
    std::size_t states = 0;
};

/**
 * @brief Steady state of the M/M/N+M birth-death chain, computed in log space.
 *
 * The state space is truncated at the first J >= N whose geometric tail bound falls below
 * `tail_tol` of the accumulated mass.
 */
inline ErlangAResult erlang_a_exact(double lambda, double mu, double theta, int N, std::size_t cap = 1'000'000,
                                    double tail_tol = 1e-12) {
    if (!(lambda > 0.0) || !(mu > 0.0) || !(theta > 0.0) || N < 1)
        throw Error(ErrorCode::NonPositiveInput, "Erlang-A rates and server count must be positive");
    auto death = [&](std::size_t j) {
        const double jj = static_cast<double>(j);
        return std::min(jj, static_cast<double>(N)) * mu + std::max(jj - N, 0.0) * theta;
    };
    std::vector<double> logp{0.0};
    double max_log = 0.0;
    double mass = 1.0;  // sum of exp(logp - max_log)
    for (std::size_t j = 1;; ++j) {
        if (j > cap) throw Error(ErrorCode::TruncationOverflow, "Erlang-A state space exceeds the cap");
        const double lp = logp.back() + std::log(lambda) - std::log(death(j));
        logp.push_back(lp);
        if (lp > max_log) {
            mass = mass * std::exp(max_log - lp) + 1.0;
            max_log = lp;
        } else {
            mass += std::exp(lp - max_log);
        }
        if (j >= static_cast<std::size_t>(N)) {
            const double q = lambda / death(j + 1);
            if (q < 1.0) {
                const double tail = std::exp(lp - max_log) * q / (1.0 - q);
                if (tail < tail_tol * mass) break;
            }
        }
    }
    ErlangAResult res;
    res.states = logp.size();
    double total = 0.0, wait = 0.0, queue = 0.0;
    for (std::size_t j = 0; j < logp.size(); ++j) {
        const double p = std::exp(logp[j] - max_log);
        total += p;
        if (j >= static_cast<std::size_t>(N)) {
            wait += p;
            queue += static_cast<double>(j - static_cast<std::size_t>(N)) * p;
        }
    }
    res.p_wait = wait / total;
    res.e_queue = queue / total;
    res.p_abandon = std::min(theta * res.e_queue / lambda, 1.0);
    res.e_wait = res.e_queue / lambda;
    return res;
}

/// Arrival rate placing N servers in the QED regime: lambda = N mu - beta sqrt(N mu) mu.
inline double qed_arrival_rate(int N, double beta, double mu) {
    const double nm = static_cast<double>(N) * mu;
    return nm - beta * std::sqrt(nm) * mu;
}

// ---------------------------------------------------------------------------------------------
// Staffing report
// ---------------------------------------------------------------------------------------------

struct PerformanceTriple {
    double p_wait = 0.0;
    double p_abandon = 0.0;
    double e_wait_sec = 0.0;
};

struct StaffingRow {
    Date date{};
    int period = 0;
    double beta_u = 0.0;
    double mu_over_theta = 1.0;
    double R_true = 0.0;
    double R_pred = 0.0;
    int N_user = 0;     // staffing from the true load
    int N_staffed = 0;  // staffing from the predicted load
    double beta_a = 0.0;
    double delta_beta = 0.0;
    double delta_N_approx = 0.0;
    int delta_N_exact = 0;
    double asym_user_p_wait = 0.0;
    double asym_adjusted_p_wait = 0.0;  // at beta_u + delta_beta
    PerformanceTriple perf_user;
    PerformanceTriple perf_adjusted;
};

struct PeriodAggregate {
    double beta_u = 0.0;
    double mu_over_theta = 1.0;
    int period = 0;
    std::size_t n = 0;
    double mean_delta_beta = 0.0;
    double mean_delta_N_approx = 0.0;
    double mean_delta_N_exact = 0.0;
    double ratio_asym_p_wait = 0.0;
    double ratio_p_wait = 0.0;
    double ratio_p_abandon = 0.0;
    double ratio_e_wait = 0.0;
};

struct StaffingReport {
    std::vector<StaffingRow> rows;
    std::vector<PeriodAggregate> per_period;
    std::size_t skipped_cells = 0;  // zero predicted or realised load
};

struct StaffingInputs {
    const ForecastSet* forecasts = nullptr;
    const PeriodSeries* actual_counts = nullptr;
    const ServiceSeries* predicted_service = nullptr;
    const ServiceSeries* actual_service = nullptr;
    std::vector<double> beta_grid = {-1.0, 0.0, 1.0};
    std::vector<double> ratio_grid = {0.1, 1.0, 2.0};
};

namespace detail {

inline double safe_ratio(double num, double den) {
    if (den == 0.0) return num == 0.0 ? 1.0 : std::numeric_limits<double>::quiet_NaN();
    return num / den;
}

}  // namespace detail

/**
 * @brief Staffs every forecast cell from the predicted load and evaluates the realised
 * performance under the true load, against staffing from the true load itself.
 */
inline StaffingReport performance_ratio_report(const StaffingInputs& in) {
    if (!in.forecasts || !in.actual_counts || !in.predicted_service || !in.actual_service)
        throw Error(ErrorCode::AlignmentError, "staffing needs forecasts, actual counts and both service series");
    const double T = in.actual_counts->period_minutes;
    StaffingReport rep;
    for (const auto& f : in.forecasts->rows) {
        const auto where = format_date(f.date) + " period " + std::to_string(f.period);
        const auto ia = in.actual_counts->find(f.date);
        const auto ip = in.predicted_service->find(f.date);
        const auto is = in.actual_service->find(f.date);
        if (!ia || !ip || !is || f.period < 1 || f.period > in.actual_counts->K || f.period > in.predicted_service->K ||
            f.period > in.actual_service->K)
            throw Error(ErrorCode::AlignmentError, "no actual or service data for " + where);
        const auto k = static_cast<std::size_t>(f.period - 1);
        const double n_true = static_cast<double>(in.actual_counts->counts(*ia, k));
        const double s_true = in.actual_service->mean_service(*is, k);
        const double s_pred = in.predicted_service->mean_service(*ip, k);
        if (!(n_true > 0.0) || !(f.point > 0.0)) {
            ++rep.skipped_cells;
            continue;
        }
        const double R_true = offered_load(n_true, s_true, T);
        const double R_pred = offered_load(f.point, s_pred, T);
        const double mu = 1.0 / s_true;
        const double lambda = n_true / T;
        for (double beta : in.beta_grid)
            for (double ratio : in.ratio_grid) {
                StaffingRow r;
                r.date = f.date;
                r.period = f.period;
                r.beta_u = beta;
                r.mu_over_theta = ratio;
                r.R_true = R_true;
                r.R_pred = R_pred;
                r.N_user = sqrt_staff(R_true, beta);
                r.N_staffed = sqrt_staff(R_pred, beta);
                r.beta_a = beta_adjusted(R_pred, R_true, beta);
                r.delta_beta = delta_beta(R_pred, R_true);
                const auto dn = delta_N(R_pred, R_true, beta);
                r.delta_N_approx = dn.approx;
                r.delta_N_exact = dn.exact;
                r.asym_user_p_wait = garnett_delay(beta, ratio);
                r.asym_adjusted_p_wait = garnett_delay(beta + r.delta_beta, ratio);
                const double theta = mu / ratio;
                const auto eu = erlang_a_exact(lambda, mu, theta, r.N_user);
                const auto ea = erlang_a_exact(lambda, mu, theta, r.N_staffed);
                r.perf_user = {eu.p_wait, eu.p_abandon, 60.0 * eu.e_wait};
                r.perf_adjusted = {ea.p_wait, ea.p_abandon, 60.0 * ea.e_wait};
                rep.rows.push_back(r);
            }
    }

    // Per-period means over days for every (beta_u, ratio) pair; ratios are of means.
    struct Acc {
        std::size_t n = 0;
        double db = 0, dna = 0, dne = 0, au = 0, aa = 0, pu = 0, pa = 0, bu = 0, ba = 0, wu = 0, wa = 0;
    };
    std::map<std::tuple<double, double, int>, Acc> acc;
    for (const auto& r : rep.rows) {
        auto& a = acc[{r.beta_u, r.mu_over_theta, r.period}];
        ++a.n;
        a.db += r.delta_beta;
        a.dna += r.delta_N_approx;
        a.dne += r.delta_N_exact;
        a.au += r.asym_user_p_wait;
        a.aa += r.asym_adjusted_p_wait;
        a.pu += r.perf_user.p_wait;
        a.pa += r.perf_adjusted.p_wait;
        a.bu += r.perf_user.p_abandon;
        a.ba += r.perf_adjusted.p_abandon;
        a.wu += r.perf_user.e_wait_sec;
        a.wa += r.perf_adjusted.e_wait_sec;
    }
    for (const auto& [key, a] : acc) {
        PeriodAggregate p;
        std::tie(p.beta_u, p.mu_over_theta, p.period) = key;
        p.n = a.n;
        const double n = static_cast<double>(a.n);
        p.mean_delta_beta = a.db / n;
        p.mean_delta_N_approx = a.dna / n;
        p.mean_delta_N_exact = a.dne / n;
        p.ratio_asym_p_wait = detail::safe_ratio(a.aa, a.au);
        p.ratio_p_wait = detail::safe_ratio(a.pa, a.pu);
        p.ratio_p_abandon = detail::safe_ratio(a.ba, a.bu);
        p.ratio_e_wait = detail::safe_ratio(a.wa, a.wu);
        rep.per_period.push_back(p);
    }
    return rep;
}

inline void write_staffing_csv(const StaffingReport& rep, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path);
    out << "date,period,beta_u,mu_over_theta,R_true,R_pred,N_user,N_staffed,beta_a,delta_beta,delta_N_approx,"
           "delta_N_exact,asym_p_wait_user,asym_p_wait_adjusted,p_wait_user,p_abandon_user,e_wait_sec_user,"
           "p_wait_adjusted,p_abandon_adjusted,e_wait_sec_adjusted\n";
    using csv::format_double;
    for (const auto& r : rep.rows)
        out << format_date(r.date) << ',' << r.period << ',' << format_double(r.beta_u) << ','
            << format_double(r.mu_over_theta) << ',' << format_double(r.R_true) << ',' << format_double(r.R_pred) << ','
            << r.N_user << ',' << r.N_staffed << ',' << format_double(r.beta_a) << ',' << format_double(r.delta_beta)
            << ',' << format_double(r.delta_N_approx) << ',' << r.delta_N_exact << ','
            << format_double(r.asym_user_p_wait) << ',' << format_double(r.asym_adjusted_p_wait) << ','
            << format_double(r.perf_user.p_wait) << ',' << format_double(r.perf_user.p_abandon) << ','
            << format_double(r.perf_user.e_wait_sec) << ',' << format_double(r.perf_adjusted.p_wait) << ','
            << format_double(r.perf_adjusted.p_abandon) << ',' << format_double(r.perf_adjusted.e_wait_sec) << '\n';
}

/// Long-format plot series: one row per (series, beta_u, ratio, period).
inline void write_staffing_series_csv(const StaffingReport& rep, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path);
    out << "series,beta_u,mu_over_theta,period,value\n";
    using csv::format_double;
    auto emit = [&](const char* name, const PeriodAggregate& p, double v) {
        out << name << ',' << format_double(p.beta_u) << ',' << format_double(p.mu_over_theta) << ',' << p.period
            << ',' << (std::isfinite(v) ? format_double(v) : std::string("nan")) << '\n';
    };
    for (const auto& p : rep.per_period) {
        emit("delta_beta", p, p.mean_delta_beta);
        emit("delta_N_approx", p, p.mean_delta_N_approx);
        emit("delta_N_exact", p, p.mean_delta_N_exact);
        emit("ratio_asym_p_wait", p, p.ratio_asym_p_wait);
        emit("ratio_p_wait", p, p.ratio_p_wait);
        emit("ratio_p_abandon", p, p.ratio_p_abandon);
        emit("ratio_e_wait", p, p.ratio_e_wait);
    }
}

}  // namespace callcast
