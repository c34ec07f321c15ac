#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <numbers>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "callcast/dataio.hpp"
#include "callcast/designspace.hpp"
#include "callcast/error.hpp"

namespace callcast {

/**
 * @brief Seeded random source. The engine is the standard 64-bit Mersenne Twister; the
 * distributions are written out here so that draws are identical across standard libraries.
 */
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1).
    double uniform_open() {
        double u;
        do u = uniform();
        while (u == 0.0);
        return u;
    }

    /// Box-Muller, caching the second variate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double r = std::sqrt(-2.0 * std::log(uniform_open()));
        const double a = 2.0 * std::numbers::pi * uniform();
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double exponential(double rate) { return -std::log(uniform_open()) / rate; }

    /// Inversion for small means, Hormann's transformed rejection (PTRS) otherwise.
    std::int64_t poisson(double lambda) {
        if (lambda <= 0.0) return 0;
        if (lambda < 10.0) {
            const double u = uniform();
            double p = std::exp(-lambda), F = p;
            std::int64_t k = 0;
            while (u > F && k < 1000) {
                ++k;
                p *= lambda / static_cast<double>(k);
                F += p;
            }
            return k;
        }
        const double slam = std::sqrt(lambda), loglam = std::log(lambda);
        const double b = 0.931 + 2.53 * slam;
        const double a = -0.059 + 0.02483 * b;
        const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        const double vr = 0.9277 - 3.6224 / (b - 2.0);
        for (;;) {
            const double U = uniform() - 0.5;
            const double V = uniform();
            const double us = 0.5 - std::abs(U);
            const double k = std::floor((2.0 * a / us + b) * U + lambda + 0.43);
            if (us >= 0.07 && V <= vr) return static_cast<std::int64_t>(k);
            if (k < 0.0 || (us < 0.013 && V > us)) continue;
            if (std::log(V) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
                -lambda + k * loglam - std::lgamma(k + 1.0))
                return static_cast<std::int64_t>(k);
        }
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------------------------
// Arrival-count generator
// ---------------------------------------------------------------------------------------------

struct GeneratorConfig {
    int D = 60;  // regular days (Saturdays are skipped)
    int K = 24;
    int period_minutes = 30;
    Date start = Date{std::chrono::year{2004}, std::chrono::month{1}, std::chrono::day{4}};
    /// 6 x K transformed-scale means (row = weekday index - 1). Empty selects default_profiles(K).
    Eigen::MatrixXd profiles;
    std::map<std::string, double> exogenous_effects;  // transformed scale
    double sigma_G2 = 1.0;
    double rho_G = 0.6;
    IntraStructure intra = IntraStructure::AR1;
    double sigma_R2 = 0.8;
    double rho_R = 0.5;
    double delta = 0.5;  // ARMA(1,1) only
    double outlier_fraction = 0.0;
    double outlier_shift = 3.0;  // transformed-scale shift on outlier days
    std::uint64_t seed = 1;

    void validate() const {
        if (D <= 0 || K <= 0 || period_minutes <= 0) throw Error(ErrorCode::InvalidConfig, "D, K and period length must be positive");
        if (profiles.size() && (profiles.rows() != 6 || profiles.cols() != K))
            throw Error(ErrorCode::InvalidConfig, "profiles must be 6 x K");
        if (sigma_G2 < 0.0 || sigma_R2 < 0.0) throw Error(ErrorCode::InvalidConfig, "variances must be non-negative");
        if (!(rho_G > -1.0 && rho_G < 1.0) || !(rho_R > -1.0 && rho_R < 1.0))
            throw Error(ErrorCode::InvalidConfig, "correlations must lie in (-1, 1)");
        if (outlier_fraction < 0.0 || outlier_fraction >= 1.0) throw Error(ErrorCode::InvalidConfig, "outlier fraction must be in [0, 1)");
        if (weekday_index(start) == 0) throw Error(ErrorCode::InvalidConfig, "start date is a Saturday");
        for (const auto& [name, v] : exogenous_effects)
            if (!is_known_exogenous(name)) throw Error(ErrorCode::InvalidConfig, "unknown exogenous column '" + name + "'");
    }
};

/// Weekday level plus a half-sine intra-day shape; levels place counts near 400-500 per period.
inline Eigen::MatrixXd default_profiles(int K) {
    const double level[6] = {19.0, 21.5, 21.0, 21.0, 20.5, 18.0};
    Eigen::MatrixXd P(6, K);
    for (int q = 0; q < 6; ++q)
        for (int k = 0; k < K; ++k)
            P(q, k) = level[q] + 3.0 * std::sin(std::numbers::pi * (k + 0.5) / K) - 1.5;
    return P;
}

/**
 * @brief Synthetic billing calendar: billing cycle c flags the first open day on or after
 * day-of-month c, delivery cycle c the first open day on or after day c + 3. The eight
 * indicators never coincide, so none is aliased with another.
 */
inline void annotate_billing_calendar(std::vector<CalendarDay>& days) {
    for (std::size_t j = 0; j < kCycles.size(); ++j) {
        for (int which = 0; which < 2; ++which) {
            const unsigned target = static_cast<unsigned>(kCycles[j] + (which == 0 ? 3 : 0));
            int last_month = -1;
            for (auto& d : days) {
                const int ym = static_cast<int>(d.date.year()) * 12 + static_cast<int>(static_cast<unsigned>(d.date.month()));
                if (ym == last_month || static_cast<unsigned>(d.date.day()) < target) continue;
                // a target date before the series start belongs to an unobserved open day
                if (add_days(d.date, -static_cast<std::int64_t>(static_cast<unsigned>(d.date.day()) - target)) < days.front().date) continue;
                (which == 0 ? d.delivery : d.billing)[j] = true;
                last_month = ym;
            }
        }
    }
}

struct GeneratedCounts {
    PeriodSeries series;
    Eigen::VectorXd gamma;    // day effects
    Eigen::MatrixXd epsilon;  // D x K intra-day effects
    Eigen::MatrixXd mean;     // D x K fixed part
    Eigen::MatrixXd lambda;   // D x K Poisson rates
};

/**
 * @brief Draws sqrt(lambda) = fixed + gamma_d + eps_dk (clamped at 0.1) and Poisson counts.
 * gamma is AR(1) over true calendar gaps; eps follows the configured intra-day structure.
 */
inline GeneratedCounts generate_counts(const GeneratorConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const Eigen::MatrixXd P = cfg.profiles.size() ? cfg.profiles : default_profiles(cfg.K);

    std::vector<CalendarDay> days;
    for (Date d = cfg.start; static_cast<int>(days.size()) < cfg.D; d = add_days(d, 1))
        if (weekday_index(d) != 0) days.push_back(make_day(d));
    annotate_billing_calendar(days);

    const Eigen::Index D = cfg.D, K = cfg.K;
    GeneratedCounts out;
    out.gamma = Eigen::VectorXd::Zero(D);
    out.epsilon = Eigen::MatrixXd::Zero(D, K);
    out.mean = Eigen::MatrixXd::Zero(D, K);
    out.lambda = Eigen::MatrixXd::Zero(D, K);

    const double sg = std::sqrt(cfg.sigma_G2);
    for (Eigen::Index d = 0; d < D; ++d) {
        const double z = rng.normal();
        if (d == 0) {
            out.gamma(d) = sg * z;
        } else {
            const double phi = std::pow(cfg.rho_G, static_cast<double>(true_date_gap(days[static_cast<std::size_t>(d - 1)],
                                                                                     days[static_cast<std::size_t>(d)])));
            out.gamma(d) = phi * out.gamma(d - 1) + sg * std::sqrt(1.0 - phi * phi) * z;
        }
    }

    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(K, K);
    if (cfg.sigma_R2 > 0.0) {
        Eigen::MatrixXd R;
        switch (cfg.intra) {
            case IntraStructure::AR1: R = ar1_kernel(cfg.sigma_R2, cfg.rho_R, unit_gaps(K)); break;
            case IntraStructure::ARMA11: R = arma11_kernel(cfg.sigma_R2, cfg.delta, cfg.rho_R, K); break;
            case IntraStructure::Independent: R = cfg.sigma_R2 * Eigen::MatrixXd::Identity(K, K); break;
        }
        L = R.llt().matrixL();
    }
    Eigen::VectorXd z(K);
    for (Eigen::Index d = 0; d < D; ++d) {
        for (Eigen::Index k = 0; k < K; ++k) z(k) = rng.normal();
        out.epsilon.row(d) = (L * z).transpose();
    }

    for (Eigen::Index d = 0; d < D; ++d) {
        auto& day = days[static_cast<std::size_t>(d)];
        day.is_outlier = cfg.outlier_fraction > 0.0 && rng.uniform() < cfg.outlier_fraction;
        double exo = 0.0;
        for (const auto& [name, v] : cfg.exogenous_effects) exo += v * exogenous_value(day, name);
        if (day.is_outlier) exo += cfg.outlier_shift;
        for (Eigen::Index k = 0; k < K; ++k) {
            out.mean(d, k) = P(day.weekday - 1, k) + exo;
            const double root = std::max(out.mean(d, k) + out.gamma(d) + out.epsilon(d, k), 0.1);
            out.lambda(d, k) = root * root;
        }
    }

    PeriodSeries& s = out.series;
    s.days = days;
    s.K = cfg.K;
    s.period_minutes = cfg.period_minutes;
    s.counts = Grid<std::int64_t>(static_cast<std::size_t>(D), static_cast<std::size_t>(K));
    for (Eigen::Index d = 0; d < D; ++d)
        for (Eigen::Index k = 0; k < K; ++k)
            s.counts(static_cast<std::size_t>(d), static_cast<std::size_t>(k)) = rng.poisson(out.lambda(d, k));
    s.validate();
    return out;
}

// ---------------------------------------------------------------------------------------------
// Service-time generator
// ---------------------------------------------------------------------------------------------

/// Coefficients follow service Model 1; leave gamma1 at zero to generate from Model 3.
struct ServiceGeneratorConfig {
    std::array<double, 6> alpha = {3.4, 3.0, 3.0, 3.0, 3.05, 3.2};
    double beta1 = 0.002;
    double beta2 = -0.05;
    std::array<double, 6> gamma1 = {0, 0, 0, 0, 0, 0};
    std::array<double, 6> gamma2 = {0.01, 0, 0, 0, 0.005, 0.01};
    double phi = 0.001;
    double noise_sd = 0.2;
    std::uint64_t seed = 1;
};

inline double service_mean(const ServiceGeneratorConfig& c, int weekday, int k, double trend) {
    const auto q = static_cast<std::size_t>(weekday - 1);
    const double kk = k;
    return c.alpha[q] + (c.beta1 + c.gamma1[q]) * kk * kk + (c.beta2 + c.gamma2[q]) * kk + c.phi * trend;
}

/// Service means for the days of `counts` (1-based trend ordinal); call counts are copied.
inline ServiceSeries generate_services(const ServiceGeneratorConfig& cfg, const PeriodSeries& counts) {
    Rng rng(cfg.seed);
    ServiceSeries s;
    s.days = counts.days;
    s.K = counts.K;
    s.period_minutes = counts.period_minutes;
    s.mean_service = Grid<double>(counts.num_days(), static_cast<std::size_t>(counts.K));
    s.n_calls = Grid<std::int64_t>(counts.num_days(), static_cast<std::size_t>(counts.K));
    for (std::size_t d = 0; d < counts.num_days(); ++d)
        for (int k = 1; k <= counts.K; ++k) {
            const auto kk = static_cast<std::size_t>(k - 1);
            const double m = service_mean(cfg, counts.days[d].weekday, k, static_cast<double>(d + 1));
            s.mean_service(d, kk) = std::max(m + cfg.noise_sd * rng.normal(), 0.1);
            s.n_calls(d, kk) = counts.counts(d, kk);
        }
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------------------------
// Erlang-A discrete-event simulator
// ---------------------------------------------------------------------------------------------

struct SimulationResult {
    double p_wait = 0.0, p_wait_se = 0.0;
    double p_abandon = 0.0, p_abandon_se = 0.0;
    double e_wait = 0.0, e_wait_se = 0.0;  // minutes, all resolved arrivals
    std::int64_t arrivals = 0;             // post-warmup
    std::int64_t served = 0;               // completed service
    std::int64_t abandoned = 0;
    std::int64_t in_system_at_end = 0;
};

/**
 * @brief Event-driven M/M/N+M simulation with FCFS queueing.
 *
 * Statistics cover arrivals in [warmup, horizon); standard errors come from `batches`
 * equal-count batch means. `served` counts completed services; customers still waiting or in
 * service at the horizon are counted in `in_system_at_end`. Customers still waiting at the
 * horizon are left out of the abandonment and wait averages.
 */
inline SimulationResult simulate_erlang_a(double lambda, double mu, double theta, int N, double horizon_minutes,
                                          double warmup_minutes, std::uint64_t seed, int batches = 20) {
    if (!(lambda > 0.0) || !(mu > 0.0) || !(theta > 0.0) || N < 1)
        throw Error(ErrorCode::InvalidConfig, "simulation rates and server count must be positive");
    if (!(horizon_minutes > warmup_minutes) || warmup_minutes < 0.0)
        throw Error(ErrorCode::InvalidConfig, "horizon must exceed a non-negative warmup");
    if (batches < 2) throw Error(ErrorCode::InvalidConfig, "need at least two batches");

    Rng rng(seed);
    struct Customer {
        double arrival = 0.0;
        bool tracked = false;
        bool waited = false;
        int outcome = 0;  // 0 pending, 1 served, 2 abandoned, 3 in service
        double wait = 0.0;
    };
    std::vector<Customer> cust;
    enum Kind { Arrival = 0, Departure = 1, Abandon = 2 };
    struct Event {
        double t;
        int kind;
        std::size_t id;
        bool operator>(const Event& o) const { return t > o.t || (t == o.t && kind > o.kind); }
    };
    std::priority_queue<Event, std::vector<Event>, std::greater<>> events;
    std::deque<std::size_t> queue;
    int busy = 0;

    auto start_service = [&](std::size_t id, double now) {
        auto& c = cust[id];
        c.outcome = 3;
        c.wait = now - c.arrival;
        ++busy;
        events.push({now + rng.exponential(mu), Departure, id});
    };

    events.push({rng.exponential(lambda), Arrival, 0});
    while (!events.empty()) {
        const Event e = events.top();
        events.pop();
        if (e.t >= horizon_minutes) break;
        if (e.kind == Arrival) {
            const std::size_t id = cust.size();
            Customer c;
            c.arrival = e.t;
            c.tracked = e.t >= warmup_minutes;
            cust.push_back(c);
            if (busy < N) {
                start_service(id, e.t);
            } else {
                cust[id].waited = true;
                queue.push_back(id);
                events.push({e.t + rng.exponential(theta), Abandon, id});
            }
            events.push({e.t + rng.exponential(lambda), Arrival, 0});
        } else if (e.kind == Departure) {
            cust[e.id].outcome = 1;
            --busy;
            while (!queue.empty() && cust[queue.front()].outcome != 0) queue.pop_front();
            if (!queue.empty()) {
                const auto next = queue.front();
                queue.pop_front();
                start_service(next, e.t);
            }
        } else if (cust[e.id].outcome == 0) {
            cust[e.id].outcome = 2;
            cust[e.id].wait = e.t - cust[e.id].arrival;
        }
    }

    SimulationResult res;
    std::vector<const Customer*> tracked;
    for (const auto& c : cust)
        if (c.tracked) tracked.push_back(&c);
    res.arrivals = static_cast<std::int64_t>(tracked.size());
    for (const auto* c : tracked) {
        if (c->outcome == 1) ++res.served;
        if (c->outcome == 2) ++res.abandoned;
        if (c->outcome == 0 || c->outcome == 3) ++res.in_system_at_end;
    }
    if (tracked.size() < static_cast<std::size_t>(batches)) return res;

    const std::size_t per = tracked.size() / static_cast<std::size_t>(batches);
    std::vector<double> bw, ba, be;
    for (int b = 0; b < batches; ++b) {
        double w = 0, a = 0, ew = 0;
        std::size_t n = 0, resolved = 0;
        for (std::size_t i = static_cast<std::size_t>(b) * per; i < static_cast<std::size_t>(b + 1) * per; ++i) {
            const auto* c = tracked[i];
            ++n;
            w += c->waited ? 1.0 : 0.0;
            if (c->outcome != 0) {
                ++resolved;
                a += c->outcome == 2 ? 1.0 : 0.0;
                ew += c->wait;
            }
        }
        bw.push_back(w / static_cast<double>(n));
        ba.push_back(resolved ? a / static_cast<double>(resolved) : 0.0);
        be.push_back(resolved ? ew / static_cast<double>(resolved) : 0.0);
    }
    auto mean_se = [&](const std::vector<double>& v, double& m, double& se) {
        m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    };
    mean_se(bw, res.p_wait, res.p_wait_se);
    mean_se(ba, res.p_abandon, res.p_abandon_se);
    mean_se(be, res.e_wait, res.e_wait_se);
    return res;
}

}  // namespace callcast
