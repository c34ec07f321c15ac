#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "callcast/poisscreen.hpp"
#include "callcast/synthlab.hpp"
#include "test_support.hpp"

using namespace callcast;
using callcast::testing::error_code_of;
using callcast::testing::open_days;
using callcast::testing::ymd;

namespace {

/// Daily totals drawn from weekday-only Poisson rates over an annotated calendar.
PeriodSeries weekday_only_series(std::uint64_t seed, std::size_t n_days) {
    std::mt19937_64 gen(seed);
    const std::array<double, 6> rate = {3000, 5200, 5000, 4900, 4800, 4100};
    PeriodSeries s;
    s.K = 1;
    s.days = open_days(ymd(2004, 1, 4), n_days);
    annotate_billing_calendar(s.days);
    s.counts = Grid<std::int64_t>(n_days, 1);
    for (std::size_t d = 0; d < n_days; ++d) {
        std::poisson_distribution<std::int64_t> p(rate[static_cast<std::size_t>(s.days[d].weekday - 1)]);
        s.counts(d, 0) = p(gen);
    }
    return s;
}

}  // namespace

TEST(ChiSquare, UpperTail) {
    EXPECT_NEAR(chi_square_upper(3.841458820694124, 1), 0.05, 1e-12);
    EXPECT_NEAR(chi_square_upper(0.0, 4), 1.0, 1e-15);
    EXPECT_NEAR(chi_square_upper(2.0, 2), std::exp(-1.0), 1e-12);
}

TEST(PoissonGlm, InterceptOnlyIsLogMean) {
    const Eigen::Vector3d y(3, 5, 4);
    const auto fit = fit_poisson_loglinear(y, Eigen::MatrixXd::Ones(3, 1), {"one"});
    EXPECT_NEAR(fit.beta(0), std::log(4.0), 1e-12);
    // Fisher information n * mean gives the standard error
    EXPECT_NEAR(fit.coefficients[0].std_error, 1.0 / std::sqrt(12.0), 1e-10);
    EXPECT_NEAR(fit.coefficients[0].chi_square, std::pow(std::log(4.0) * std::sqrt(12.0), 2), 1e-8);
}

TEST(PoissonGlm, DisjointGroupsGiveLogCellMeans) {
    Eigen::VectorXd y(6);
    y << 2, 3, 4, 7, 8, 9;
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(6, 2);
    X.block(0, 0, 3, 1).setOnes();
    X.block(3, 1, 3, 1).setOnes();
    const auto fit = fit_poisson_loglinear(y, X, {"a", "b"});
    EXPECT_NEAR(fit.beta(0), std::log(3.0), 1e-12);
    EXPECT_NEAR(fit.beta(1), std::log(8.0), 1e-12);
}

TEST(PoissonGlm, ScoreEquationsHoldAtFit) {
    std::mt19937_64 gen(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = 300;
    Eigen::MatrixXd X(n, 3);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = u(gen);
        X(i, 2) = u(gen) < 0.3 ? 1.0 : 0.0;
        std::poisson_distribution<int> p(std::exp(2.0 + 0.5 * X(i, 1) - 0.3 * X(i, 2)));
        y(i) = p(gen);
    }
    const auto fit = fit_poisson_loglinear(y, X, {"one", "x", "flag"});
    const Eigen::VectorXd score = X.transpose() * (y - fit.fitted);
    const Eigen::VectorXd scale = X.cwiseAbs().transpose() * y;
    for (Eigen::Index j = 0; j < 3; ++j) EXPECT_LE(std::abs(score(j)) / scale(j), 1e-8);
}

TEST(PoissonGlm, DevianceNeverIncreasesWithColumns) {
    const auto s = weekday_only_series(3, 120);
    double prev = std::numeric_limits<double>::infinity();
    std::vector<std::string> cols;
    for (const auto& c : all_indicator_columns()) {
        cols.push_back(c);
        const auto fit = fit_daily_model(s, cols);
        EXPECT_LE(fit.deviance, prev + 1e-9);
        prev = fit.deviance;
    }
}

TEST(PoissonGlm, AliasedColumnsAreDropped) {
    Eigen::MatrixXd X(4, 3);
    X << 1, 0, 1, 1, 0, 1, 0, 1, 1, 0, 1, 1;
    const auto fit = fit_poisson_loglinear(Eigen::Vector4d(3, 4, 5, 6), X, {"a", "b", "one"});
    EXPECT_EQ(fit.dropped, std::vector<std::string>{"one"});
    EXPECT_EQ(fit.n_coef(), 2);
}

TEST(PoissonGlm, SeparationIsReported) {
    Eigen::MatrixXd X(4, 2);
    X << 1, 0, 1, 0, 1, 1, 1, 1;
    EXPECT_EQ(error_code_of([&] { fit_poisson_loglinear(Eigen::Vector4d(5, 6, 0, 0), X, {"one", "z"}); }),
              ErrorCode::Separation);
}

TEST(LrContrast, IdenticalModelsGiveZero) {
    const auto s = weekday_only_series(4, 60);
    const auto fit = fit_daily_model(s, {"billing_14"});
    const auto c = lr_contrast(fit, fit, 60);
    EXPECT_EQ(c.statistic, 0.0);
    EXPECT_EQ(c.df, 0);
    EXPECT_EQ(c.p_value, 1.0);
}

TEST(LrContrast, StatisticIsDevianceDifference) {
    const auto s = weekday_only_series(5, 100);
    const auto full = fit_daily_model(s, {"billing_14", "delivery_7"});
    const auto reduced = fit_daily_model(s, {"billing_14"});
    const auto c = lr_contrast(full, reduced, 100);
    EXPECT_NEAR(c.statistic, reduced.deviance - full.deviance, 1e-12);
    EXPECT_EQ(c.df, 1);
    EXPECT_NEAR(c.p_value, chi_square_upper(c.statistic, 1), 1e-15);
    EXPECT_EQ(c.df_denominator, 100 - 8);
    EXPECT_NEAR(c.f_statistic, c.statistic, 1e-12);
}

TEST(LrContrast, NonNestedIsRejected) {
    const auto s = weekday_only_series(6, 100);
    const auto a = fit_daily_model(s, {"billing_14"});
    const auto b = fit_daily_model(s, {"delivery_7"});
    EXPECT_EQ(error_code_of([&] { lr_contrast(a, b, 100); }), ErrorCode::NotNested);
    EXPECT_FALSE(lr_contrast(a, b, 100, false).nested);
}

TEST(LrContrast, NullColumnRejectionRateIsCalibrated) {
    std::mt19937_64 gen(77);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int reps = 200, n = 150;
    int rejected = 0;
    for (int r = 0; r < reps; ++r) {
        Eigen::MatrixXd X(n, 2);
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) {
            X(i, 0) = 1.0;
            X(i, 1) = u(gen) < 0.5 ? 1.0 : 0.0;
            std::poisson_distribution<int> p(20.0);
            y(i) = p(gen);
        }
        const auto full = fit_poisson_loglinear(y, X, {"one", "null"});
        const auto reduced = fit_poisson_loglinear(y, X.leftCols(1), {"one"});
        if (lr_contrast(full, reduced, n).p_value < 0.05) ++rejected;
    }
    const double rate = static_cast<double>(rejected) / reps;
    EXPECT_GE(rate, 0.02);
    EXPECT_LE(rate, 0.09);
}

TEST(Screening, ReportListsEveryIndicator) {
    const auto s = weekday_only_series(9, 150);
    const auto rep = run_screening(s);
    EXPECT_EQ(rep.columns.size(), 8u);
    EXPECT_EQ(rep.contrasts.size(), 2u);
    EXPECT_EQ(rep.initial.coefficients.size() + rep.initial.dropped.size(), 14u);
    EXPECT_NE(format_screening_table(rep).find("billing_14"), std::string::npos);
}

TEST(Screening, OutlierDaysAreExcluded) {
    auto s = weekday_only_series(10, 150);
    const auto base = run_screening(s);
    s.days[5].is_outlier = true;
    s.counts(5, 0) *= 10;
    const auto rep = run_screening(s);
    EXPECT_EQ(rep.initial.n_obs(), base.initial.n_obs() - 1);
}

TEST(Screening, NullIndicatorsAreMostlyDroppable) {
    // Weekday-only data: each indicator is flagged droppable in at least 90% of runs.
    const int runs = 50;
    std::map<std::string, int> droppable;
    for (int r = 0; r < runs; ++r) {
        const auto rep = run_screening(weekday_only_series(1000 + static_cast<std::uint64_t>(r), 250));
        for (const auto& c : rep.columns) droppable[c.column] += c.droppable ? 1 : 0;
    }
    for (const auto& [col, n] : droppable) EXPECT_GE(static_cast<double>(n) / runs, 0.90) << col;
}
