#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "callcast/staffing.hpp"
#include "test_support.hpp"

using namespace callcast;
using callcast::testing::error_code_of;
using callcast::testing::open_days;
using callcast::testing::ymd;

namespace {

/// Birth-death stationary distribution by direct product, normalised in plain arithmetic.
std::vector<double> brute_force_pi(double lambda, double mu, double theta, int N, int J) {
    std::vector<double> p(static_cast<std::size_t>(J) + 1, 0.0);
    p[0] = 1.0;
    for (int j = 1; j <= J; ++j) {
        const double death = std::min(j, N) * mu + std::max(j - N, 0) * theta;
        p[static_cast<std::size_t>(j)] = p[static_cast<std::size_t>(j - 1)] * lambda / death;
    }
    double total = 0.0;
    for (double v : p) total += v;
    for (double& v : p) v /= total;
    return p;
}

struct StaffingFixture {
    PeriodSeries counts;
    ServiceSeries pred_service;
    ServiceSeries true_service;
    ForecastSet forecasts;
};

StaffingFixture make_fixture(double point_scale, std::size_t n_days = 5, int K = 4) {
    StaffingFixture f;
    f.counts.K = K;
    f.counts.period_minutes = 30;
    f.counts.days = open_days(ymd(2004, 3, 7), n_days);
    f.counts.counts = Grid<std::int64_t>(n_days, static_cast<std::size_t>(K));
    f.true_service.K = K;
    f.true_service.days = f.counts.days;
    f.true_service.mean_service = Grid<double>(n_days, static_cast<std::size_t>(K));
    f.true_service.n_calls = Grid<std::int64_t>(n_days, static_cast<std::size_t>(K));
    for (std::size_t d = 0; d < n_days; ++d)
        for (std::size_t k = 0; k < static_cast<std::size_t>(K); ++k) {
            f.counts.counts(d, k) = static_cast<std::int64_t>(300 + 40 * k + 7 * d);
            f.true_service.mean_service(d, k) = 3.0 + 0.1 * static_cast<double>(k);
            f.true_service.n_calls(d, k) = f.counts.counts(d, k);
            f.forecasts.rows.push_back({f.counts.days[d].date, static_cast<int>(k) + 1,
                                        point_scale * static_cast<double>(f.counts.counts(d, k)), 0.0, 0.0, 0.0, 0.0});
        }
    f.pred_service = f.true_service;
    return f;
}

StaffingInputs inputs_for(const StaffingFixture& f) {
    StaffingInputs in;
    in.forecasts = &f.forecasts;
    in.actual_counts = &f.counts;
    in.predicted_service = &f.pred_service;
    in.actual_service = &f.true_service;
    return in;
}

}  // namespace

TEST(OfferedLoad, Examples) {
    EXPECT_DOUBLE_EQ(offered_load(600, 3.0, 30), 60.0);
    EXPECT_DOUBLE_EQ(offered_load(500, 3.6, 30), 60.0);
    EXPECT_DOUBLE_EQ(offered_load(300, 7.2, 30), offered_load(600, 3.6, 30));
    EXPECT_EQ(error_code_of([] { offered_load(0, 3.0, 30); }), ErrorCode::NonPositiveInput);
    EXPECT_EQ(error_code_of([] { offered_load(10, -1.0, 30); }), ErrorCode::NonPositiveInput);
}

TEST(StationaryExcess, ExponentialIsMemoryless) {
    const double mu = 0.5;
    const auto G = tabulate_cdf([&](double t) { return 1.0 - std::exp(-mu * t); }, 60.0, 60000);
    for (double t : {0.3, 1.0, 2.5, 6.0}) EXPECT_NEAR(stationary_excess_cdf(G, 1.0 / mu, t), 1.0 - std::exp(-mu * t), 1e-6);
    EXPECT_EQ(stationary_excess_cdf(G, 2.0, 0.0), 0.0);
}

TEST(StationaryExcess, DeterministicServiceGivesUniform) {
    const double m = 4.0;
    TabulatedCdf G{{0.0, m, m, 10.0}, {0.0, 0.0, 1.0, 1.0}};
    EXPECT_NEAR(stationary_excess_cdf(G, m, m / 2), 0.5, 1e-12);
    EXPECT_NEAR(stationary_excess_cdf(G, m, m / 4), 0.25, 1e-12);
    EXPECT_NEAR(stationary_excess_cdf(G, m, 2 * m), 1.0, 1e-12);
}

TEST(StationaryExcess, RejectsInvalidCdf) {
    TabulatedCdf bad{{0.0, 1.0}, {0.5, 0.2}};
    EXPECT_EQ(error_code_of([&] { stationary_excess_cdf(bad, 1.0, 0.5); }), ErrorCode::InvalidCdf);
    TabulatedCdf ok{{0.0, 1.0}, {0.0, 1.0}};
    EXPECT_EQ(error_code_of([&] { stationary_excess_cdf(ok, 0.0, 0.5); }), ErrorCode::InvalidCdf);
}

TEST(SqrtStaff, Examples) {
    EXPECT_EQ(sqrt_staff(100, 1), 110);
    EXPECT_EQ(sqrt_staff(100, 0), 100);
    EXPECT_EQ(sqrt_staff(90.5, -1), 81);
    EXPECT_EQ(sqrt_staff(0.2, -3), 1);
}

TEST(DeltaBeta, Examples) {
    EXPECT_EQ(delta_beta(100, 100), 0.0);
    EXPECT_DOUBLE_EQ(delta_beta(121, 100), 2.1);
    EXPECT_DOUBLE_EQ(delta_beta(81, 100), -1.9);
    EXPECT_DOUBLE_EQ(beta_adjusted(100, 100, 1.0), 1.0);
}

TEST(DeltaN, Examples) {
    EXPECT_EQ(delta_N(100, 100, 1.0).exact, 0);
    const auto d = delta_N(110, 100, 0.0);
    EXPECT_DOUBLE_EQ(d.approx, 10.0);
    EXPECT_EQ(d.exact, 10);
    // delta_beta = -0.5 at R_true = 64
    EXPECT_DOUBLE_EQ(delta_N(64 - 0.5 * 8, 64, 0.0).approx, -4.0);
}

TEST(DeltaN, CeilingSlackBound) {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> load(0.5, 400.0), beta(-2.0, 2.0);
    for (int i = 0; i < 2000; ++i) {
        const double rp = load(gen), rt = load(gen), b = beta(gen);
        const auto d = delta_N(rp, rt, b);
        // The floor at one agent adds slack when R + beta sqrt(R) drops below 1.
        const double floor_slack = std::max(0.0, 1.0 - (rp + b * std::sqrt(rp))) + std::max(0.0, 1.0 - (rt + b * std::sqrt(rt)));
        EXPECT_LE(std::abs(d.exact - d.approx), 1.0 + std::abs(b) * std::abs(std::sqrt(rp) - std::sqrt(rt)) + floor_slack + 1e-9);
    }
}

TEST(Garnett, TableNineUserRows) {
    const std::array<std::tuple<double, double, double>, 9> table = {{{-1, 0.1, 0.442},
                                                                      {-1, 1, 0.841},
                                                                      {-1, 2, 0.931},
                                                                      {0, 0.1, 0.240},
                                                                      {0, 1, 0.500},
                                                                      {0, 2, 0.586},
                                                                      {1, 0.1, 0.083},
                                                                      {1, 1, 0.159},
                                                                      {1, 2, 0.179}}};
    for (const auto& [b, r, v] : table) EXPECT_NEAR(garnett_delay(b, r), v, 0.001) << b << " " << r;
    EXPECT_EQ(garnett_delay(0.0, 1.0), 0.5);
}

TEST(Garnett, DecreasingInBeta) {
    for (double r : {0.1, 0.5, 1.0, 2.0, 5.0}) {
        double prev = 1.0;
        for (double b = -3.0; b <= 3.0; b += 0.25) {
            const double p = garnett_delay(b, r);
            EXPECT_LT(p, prev);
            EXPECT_GT(p, 0.0);
            prev = p;
        }
    }
}

TEST(Garnett, UnitRatioIsNormalTail) {
    // With theta = mu the system is M/M/infinity and P(W>0) -> 1 - Phi(beta).
    for (double b : {-1.5, -0.5, 0.0, 0.7, 2.0}) {
        const double tail = 0.5 * std::erfc(b / std::sqrt(2.0));
        EXPECT_NEAR(garnett_delay(b, 1.0), tail, 1e-12);
    }
}

TEST(ErlangA, SingleServerClosedForm) {
    const auto r = erlang_a_exact(1.0, 1.0, 1.0, 1);
    EXPECT_NEAR(r.p_wait, 1.0 - std::exp(-1.0), 1e-9);
    EXPECT_NEAR(r.p_abandon, std::exp(-1.0), 1e-9);
}

TEST(ErlangA, MatchesBruteForceDistribution) {
    const std::array<std::tuple<double, double, double, int>, 4> grid = {
        {{5.0, 1.0, 0.5, 4}, {20.0, 0.25, 2.5, 70}, {3.0, 1.0, 1.0, 3}, {0.5, 0.2, 0.1, 2}}};
    for (const auto& [lambda, mu, theta, N] : grid) {
        const auto p = brute_force_pi(lambda, mu, theta, N, N + 2000);
        double wait = 0.0, queue = 0.0, total = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) {
            total += p[j];
            if (static_cast<int>(j) >= N) {
                wait += p[j];
                queue += static_cast<double>(static_cast<int>(j) - N) * p[j];
            }
        }
        EXPECT_NEAR(total, 1.0, 1e-10);
        const auto r = erlang_a_exact(lambda, mu, theta, N);
        EXPECT_NEAR(r.p_wait, wait, 1e-10);
        EXPECT_NEAR(r.e_queue, queue, 1e-9);
        EXPECT_NEAR(r.p_abandon, theta * queue / lambda, 1e-10);
        EXPECT_NEAR(r.e_wait, queue / lambda, 1e-10);
    }
}

TEST(ErlangA, AbandonNeverExceedsWait) {
    std::mt19937_64 gen(12);
    std::uniform_real_distribution<double> u(0.05, 5.0);
    std::uniform_int_distribution<int> n(1, 80);
    for (int i = 0; i < 300; ++i) {
        const double mu = u(gen);
        const int N = n(gen);
        const double lambda = N * mu * u(gen) / 2.0;
        const auto r = erlang_a_exact(lambda, mu, u(gen), N);
        EXPECT_LE(r.p_abandon, r.p_wait + 1e-12);
        EXPECT_GE(r.p_wait, 0.0);
        EXPECT_LE(r.p_wait, 1.0);
        EXPECT_GE(r.e_wait, 0.0);
    }
}

TEST(ErlangA, EmptySystemLimit) {
    const auto r = erlang_a_exact(1e-9, 1.0, 1.0, 3);
    EXPECT_LT(r.p_wait, 1e-20);
    EXPECT_LT(r.p_abandon, 1e-20);
}

TEST(ErlangA, CapIsEnforced) {
    EXPECT_EQ(error_code_of([] { erlang_a_exact(1000.0, 1.0, 1e-3, 1, 1000); }), ErrorCode::TruncationOverflow);
    EXPECT_EQ(error_code_of([] { erlang_a_exact(1.0, 1.0, 1.0, 0); }), ErrorCode::NonPositiveInput);
}

TEST(ErlangA, QedConvergenceAtUnitRatio) {
    // At mu = theta the gap to the asymptotic delay shrinks as N grows.
    for (double beta : {-1.0, 0.0, 1.0}) {
        double prev_gap = 1.0;
        for (int N : {25, 100, 400}) {
            const double lambda = qed_arrival_rate(N, beta, 1.0);
            const double gap = std::abs(erlang_a_exact(lambda, 1.0, 1.0, N).p_wait - garnett_delay(beta, 1.0));
            EXPECT_LT(gap, prev_gap) << beta << " " << N;
            prev_gap = gap;
        }
        EXPECT_LT(prev_gap, 0.01);
    }
}

TEST(PerformanceRatioReport, PerfectForecastGivesUnitRatios) {
    const auto f = make_fixture(1.0);
    const auto rep = performance_ratio_report(inputs_for(f));
    EXPECT_EQ(rep.rows.size(), 5u * 4u * 9u);
    EXPECT_EQ(rep.per_period.size(), 4u * 9u);
    for (const auto& r : rep.rows) {
        EXPECT_EQ(r.delta_beta, 0.0);
        EXPECT_EQ(r.N_staffed, r.N_user);
        EXPECT_EQ(r.delta_N_exact, 0);
        if (r.beta_u == 0.0 && r.mu_over_theta == 1.0) EXPECT_EQ(r.asym_user_p_wait, 0.5);
    }
    for (const auto& p : rep.per_period) {
        EXPECT_EQ(p.ratio_asym_p_wait, 1.0);
        EXPECT_EQ(p.ratio_p_wait, 1.0);
        EXPECT_EQ(p.ratio_p_abandon, 1.0);
        EXPECT_EQ(p.ratio_e_wait, 1.0);
    }
}

TEST(PerformanceRatioReport, RowsMatchDirectRecomputation) {
    const auto f = make_fixture(0.93);
    const auto rep = performance_ratio_report(inputs_for(f));
    for (const auto& r : rep.rows) {
        const auto d = *f.counts.find(r.date);
        const auto k = static_cast<std::size_t>(r.period - 1);
        const double n = static_cast<double>(f.counts.counts(d, k));
        const double s = f.true_service.mean_service(d, k);
        EXPECT_DOUBLE_EQ(r.R_true, n * s / 30.0);
        EXPECT_DOUBLE_EQ(r.R_pred, 0.93 * n * s / 30.0);
        EXPECT_NEAR(r.delta_beta, (r.R_pred - r.R_true) / std::sqrt(r.R_true), 1e-12);
        EXPECT_NEAR(r.beta_a, (std::ceil(r.R_pred + r.beta_u * std::sqrt(r.R_pred) - 1e-9) - r.R_true) / std::sqrt(r.R_true),
                    1e-12);
        EXPECT_LT(r.delta_beta, 0.0);
        EXPECT_LE(r.N_staffed, r.N_user);
        const auto ea = erlang_a_exact(n / 30.0, 1.0 / s, (1.0 / s) / r.mu_over_theta, r.N_staffed);
        EXPECT_DOUBLE_EQ(r.perf_adjusted.p_wait, ea.p_wait);
        EXPECT_DOUBLE_EQ(r.perf_adjusted.e_wait_sec, 60.0 * ea.e_wait);
        EXPECT_GE(r.perf_adjusted.p_wait, r.perf_user.p_wait);
    }
    for (const auto& p : rep.per_period) EXPECT_GE(p.ratio_p_wait, 1.0);
}

TEST(PerformanceRatioReport, MissingDataIsAlignmentError) {
    auto f = make_fixture(1.0);
    f.forecasts.rows.push_back({ymd(2005, 1, 3), 1, 100.0, 0, 0, 0, 0});
    EXPECT_EQ(error_code_of([&] { performance_ratio_report(inputs_for(f)); }), ErrorCode::AlignmentError);
    StaffingInputs none;
    EXPECT_EQ(error_code_of([&] { performance_ratio_report(none); }), ErrorCode::AlignmentError);
}

TEST(PerformanceRatioReport, ZeroLoadCellsAreSkipped) {
    auto f = make_fixture(1.0);
    f.counts.counts(0, 0) = 0;
    const auto rep = performance_ratio_report(inputs_for(f));
    EXPECT_EQ(rep.skipped_cells, 1u);
    EXPECT_EQ(rep.rows.size(), (5u * 4u - 1u) * 9u);
}
