#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "callcast/gausslik.hpp"
#include "callcast/optimize.hpp"
#include "test_support.hpp"

using namespace callcast;
using callcast::testing::error_code_of;
using callcast::testing::open_days;
using callcast::testing::TempDir;
using callcast::testing::ymd;

namespace {

Eigen::MatrixXd random_spd(Eigen::Index n, std::mt19937_64& gen) {
    std::normal_distribution<double> z;
    Eigen::MatrixXd A(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) A(i, j) = z(gen);
    return A * A.transpose() + static_cast<double>(n) * Eigen::MatrixXd::Identity(n, n);
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& gen) {
    std::normal_distribution<double> z;
    Eigen::MatrixXd A(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) A(i, j) = z(gen);
    return A;
}

}  // namespace

TEST(Transform, Examples) {
    EXPECT_DOUBLE_EQ(root_transform(0.0), 0.5);
    EXPECT_DOUBLE_EQ(root_transform(2.0), 1.5);
    EXPECT_NEAR(root_transform(500.0), 22.366269, 1e-6);
    EXPECT_DOUBLE_EQ(inverse_transform(1.5), 2.0);
    EXPECT_DOUBLE_EQ(inverse_transform(0.4), 0.0);
    EXPECT_NEAR(inverse_transform(root_transform(500.0)), 500.0, 1e-9);
}

TEST(Transform, VarianceNearQuarterForLargeRates) {
    std::mt19937_64 gen(5);
    for (double lambda : {100.0, 500.0}) {
        std::poisson_distribution<int> p(lambda);
        double s = 0.0, ss = 0.0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) {
            const double y = root_transform(p(gen));
            s += y;
            ss += y * y;
        }
        const double var = (ss - s * s / n) / (n - 1);
        EXPECT_GE(var, 0.24);
        EXPECT_LE(var, 0.26);
    }
}

TEST(DayBlockCovariance, MatchesDenseSolveAndLogDet) {
    std::mt19937_64 gen(1);
    const auto days = open_days(ymd(2004, 1, 4), 7);
    for (double rho_g : {0.0, 0.6, -0.4}) {
        const Eigen::MatrixXd G = rho_g == 0.0 ? Eigen::MatrixXd(Eigen::MatrixXd::Zero(7, 7))
                                                : ar1_kernel(1.3, rho_g, gap_matrix(days));
        Eigen::MatrixXd Rs = ar1_kernel(0.8, 0.5, unit_gaps(5));
        Rs.diagonal().array() += 0.25;
        DayBlockCovariance block(G, Rs);
        DenseCovariance dense(assemble_V(G, Rs, 0.0));
        const Eigen::MatrixXd b = random_matrix(35, 3, gen);
        EXPECT_TRUE(block.solve(b).isApprox(dense.solve(b), 1e-10));
        EXPECT_NEAR(block.log_det(), dense.log_det(), 1e-9);
    }
}

TEST(DenseCovariance, RejectsIndefinite) {
    Eigen::MatrixXd V(2, 2);
    V << 1, 2, 2, 1;
    EXPECT_EQ(error_code_of([&] { DenseCovariance c(V); }), ErrorCode::NotPositiveDefinite);
}

TEST(EvaluateGls, KnownWhiteNoiseGivesOls) {
    std::mt19937_64 gen(2);
    const Eigen::MatrixXd X = random_matrix(40, 3, gen);
    const Eigen::VectorXd y = random_matrix(40, 1, gen);
    const auto ev = evaluate_gls(DenseCovariance(0.7 * Eigen::MatrixXd::Identity(40, 40)), y, X, Objective::ML, 0.0);
    const Eigen::VectorXd ols = (X.transpose() * X).ldlt().solve(X.transpose() * y);
    EXPECT_TRUE(ev.beta.isApprox(ols, 1e-12));
    // ML log-likelihood of N(Xb, 0.7 I) evaluated directly
    const double rss = (y - X * ols).squaredNorm();
    const double direct = -0.5 * (40 * std::log(2 * std::numbers::pi * 0.7) + rss / 0.7);
    EXPECT_NEAR(ev.objective, direct, 1e-9);
}

TEST(EvaluateGls, RemlInvariantToReparameterisation) {
    std::mt19937_64 gen(4);
    const Eigen::MatrixXd X = random_matrix(30, 4, gen);
    const Eigen::VectorXd y = random_matrix(30, 1, gen);
    const DenseCovariance V(random_spd(30, gen));
    for (int rep = 0; rep < 5; ++rep) {
        const Eigen::MatrixXd A = random_matrix(4, 4, gen) + 3.0 * Eigen::MatrixXd::Identity(4, 4);
        const Eigen::MatrixXd XA = X * A;
        const double a = evaluate_gls(V, y, X, Objective::REML, design_log_det(X)).objective;
        const double b = evaluate_gls(V, y, XA, Objective::REML, design_log_det(XA)).objective;
        EXPECT_NEAR(a, b, 1e-6);
    }
}

TEST(FitGls, BalancedOneWayRemlMatchesAnova) {
    // y_dk = mu + a_d + e_dk, D groups of K replicates
    const int D = 12, K = 6;
    std::mt19937_64 gen(9);
    std::normal_distribution<double> z;
    Eigen::VectorXd y(D * K);
    for (int d = 0; d < D; ++d) {
        const double a = 1.5 * z(gen);
        for (int k = 0; k < K; ++k) y(d * K + k) = 4.0 + a + 0.8 * z(gen);
    }
    // independent ANOVA oracle
    double grand = y.mean(), ssb = 0.0, ssw = 0.0;
    for (int d = 0; d < D; ++d) {
        const double m = y.segment(d * K, K).mean();
        ssb += K * (m - grand) * (m - grand);
        ssw += (y.segment(d * K, K).array() - m).square().sum();
    }
    const double msw = ssw / (D * (K - 1)), msb = ssb / (D - 1);
    const double sigma_e = msw, sigma_a = (msb - msw) / K;
    ASSERT_GT(sigma_a, 0.0);

    const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(D * K, 1);
    auto build = [&](const Eigen::VectorXd& t) {
        Eigen::MatrixXd G = t(0) * Eigen::MatrixXd::Identity(D, D);
        Eigen::MatrixXd Rs = t(1) * Eigen::MatrixXd::Identity(K, K);
        return DayBlockCovariance(G, Rs);
    };
    const std::vector<ParamInfo> params{{"sigma_a", ParamKind::Variance}, {"sigma_e", ParamKind::Variance}};
    const auto fit = fit_gls(y, X, build, params, {Eigen::Vector2d(1.0, 1.0)});
    EXPECT_TRUE(fit.converged);
    EXPECT_NEAR(fit.theta(0) / sigma_a, 1.0, 1e-3);
    EXPECT_NEAR(fit.theta(1) / sigma_e, 1.0, 1e-3);
    EXPECT_NEAR(fit.beta(0), grand, 1e-8);
}

TEST(FitGls, CorrelationParametersStayInside) {
    std::mt19937_64 gen(12);
    std::normal_distribution<double> z;
    const int n = 200;
    Eigen::VectorXd y(n);
    double e = 0.0;
    for (int i = 0; i < n; ++i) {
        e = 0.7 * e + z(gen);
        y(i) = e;
    }
    const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(n, 1);
    auto build = [&](const Eigen::VectorXd& t) { return DenseCovariance(ar1_kernel(t(0), t(1), unit_gaps(n))); };
    const std::vector<ParamInfo> params{{"s2", ParamKind::Variance}, {"rho", ParamKind::Correlation}};
    const auto fit = fit_gls(y, X, build, params, {Eigen::Vector2d(1.0, 0.0)});
    EXPECT_GT(fit.theta(1), 0.55);
    EXPECT_LT(fit.theta(1), 0.85);
    EXPECT_TRUE(fit.warnings.empty());
}

TEST(NelderMead, MinimisesQuadratic) {
    auto f = [](const Eigen::VectorXd& x) { return (x(0) - 1) * (x(0) - 1) + 10 * (x(1) + 2) * (x(1) + 2); };
    const auto r = nelder_mead(f, Eigen::Vector2d(0, 0));
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.x(0), 1.0, 1e-3);
    EXPECT_NEAR(r.x(1), -2.0, 1e-3);
}

TEST(ConditionalPredict, MatchesHandCodedThreeVariableConditioning) {
    // Joint covariance of (y1, y2, y3); predict y3 from y1, y2 with a known mean.
    Eigen::Matrix3d S;
    S << 2.0, 0.6, 0.3, 0.6, 1.5, 0.5, 0.3, 0.5, 1.8;
    const double m1 = 1.0, m2 = -0.5, m3 = 2.0, y1 = 1.7, y2 = -1.1;
    const double det = S(0, 0) * S(1, 1) - S(0, 1) * S(1, 0);
    const double i00 = S(1, 1) / det, i11 = S(0, 0) / det, i01 = -S(0, 1) / det;
    const double w1 = S(2, 0) * i00 + S(2, 1) * i01, w2 = S(2, 0) * i01 + S(2, 1) * i11;
    const double mean = m3 + w1 * (y1 - m1) + w2 * (y2 - m2);
    const double var = S(2, 2) - (w1 * S(0, 2) + w2 * S(1, 2));

    Eigen::MatrixXd X(2, 3), Xf(1, 3);
    X << 1, 0, 0, 0, 1, 0;
    Xf << 0, 0, 1;
    const Eigen::Vector3d beta(m1, m2, m3);
    const auto pred = conditional_predict(DenseCovariance(S.topLeftCorner(2, 2)), X, Eigen::Vector2d(y1, y2), beta,
                                          Eigen::MatrixXd::Zero(3, 3), S.block(2, 0, 1, 2), S.block(2, 2, 1, 1), Xf);
    EXPECT_NEAR(pred.mean(0), mean, 1e-12);
    EXPECT_NEAR(pred.cov(0, 0), var, 1e-12);
}

namespace {

/// Fitted model for K=1 days with the given parameters and a unit-variance beta cov.
FittedMixedModel toy_model(const PeriodSeries& past, double sigma_G2, double rho_G, const Eigen::MatrixXd& cov_beta) {
    FixedEffectsSpec fx;
    fx.pattern = PatternMode::MultiPattern;
    const auto b = build_designs(past.days, past.K, fx);
    FittedMixedModel m;
    m.fx = fx;
    m.layout = b.layout;
    m.cov.intra = IntraStructure::Independent;
    m.theta.sigma_G2 = sigma_G2;
    m.theta.rho_G = rho_G;
    m.theta.sigma_R2 = 0.5;
    m.theta.sigma2 = 0.25;
    m.beta = Eigen::VectorXd::LinSpaced(b.rank(), 10.0, 11.0);
    m.cov_beta = cov_beta;
    return m;
}

PeriodSeries toy_series(const std::vector<CalendarDay>& days, const std::vector<std::int64_t>& counts) {
    PeriodSeries s;
    s.K = 1;
    s.days = days;
    s.counts = Grid<std::int64_t>(days.size(), 1);
    for (std::size_t d = 0; d < days.size(); ++d) s.counts(d, 0) = counts[d];
    return s;
}

}  // namespace

TEST(PredictBlup, TwoPastDaysOneFutureDayMatchesDirectConditioning) {
    // Monday and Tuesday observed, next Monday predicted.
    const auto past_days = open_days(ymd(2004, 1, 5), 2);
    const auto past = toy_series(past_days, {140, 95});
    const std::vector<CalendarDay> future{make_day(ymd(2004, 1, 12))};
    Eigen::MatrixXd cb(2, 2);
    cb << 0.04, 0.01, 0.01, 0.03;
    const auto fit = toy_model(past, 1.2, 0.6, cb);

    // direct oracle: joint covariance of (y_mon, y_tue, y_next_mon)
    const double g = 1.2, r = 0.6, n = 0.5 + 0.25;
    Eigen::Matrix3d S;
    S << g + n, g * r, g * std::pow(r, 7), g * r, g + n, g * std::pow(r, 6), g * std::pow(r, 7), g * std::pow(r, 6), g + n;
    const Eigen::Vector2d y(root_transform(140), root_transform(95));
    const Eigen::Vector2d mu = fit.beta;
    const double mu_f = fit.beta(0);
    const Eigen::Matrix2d Spp = S.topLeftCorner(2, 2);
    const Eigen::RowVector2d c = S.block(2, 0, 1, 2);
    const Eigen::RowVector2d w = c * Spp.inverse();
    const double mean = mu_f + w.dot(y - mu);
    // fixed-effect term: b = x_f - X' Spp^{-1} c'
    const Eigen::Vector2d bvec = Eigen::Vector2d(1.0, 0.0) - Spp.inverse() * c.transpose();
    const double var = S(2, 2) - w.dot(c) + bvec.dot(cb * bvec);

    const auto fs = predict_blup(fit, past, future, 0.9);
    ASSERT_EQ(fs.rows.size(), 1u);
    EXPECT_NEAR(fs.rows[0].point_transformed, mean, 1e-12);
    EXPECT_NEAR(fs.rows[0].sd_transformed, std::sqrt(var), 1e-12);
    const double z = 1.6448536269514722;
    EXPECT_NEAR(fs.rows[0].lower, inverse_transform(mean - z * std::sqrt(var)), 1e-9);
    EXPECT_NEAR(fs.rows[0].upper, inverse_transform(mean + z * std::sqrt(var)), 1e-9);
    EXPECT_NEAR(fs.rows[0].point, inverse_transform(mean), 1e-9);
}

TEST(PredictBlup, ZeroCorrelationGivesFixedEffectsForecast) {
    const auto past_days = open_days(ymd(2004, 1, 4), 6);
    const auto past = toy_series(past_days, {120, 80, 95, 101, 77, 130});
    const std::vector<CalendarDay> future{make_day(ymd(2004, 1, 13))};
    auto fit = toy_model(past, 1.0, 0.0, Eigen::MatrixXd::Zero(6, 6));
    fit.theta.sigma_G2 = 0.0;
    const auto fs = predict_blup(fit, past, future);
    EXPECT_NEAR(fs.rows[0].point_transformed, fit.beta(2), 1e-12);  // Tuesday column
}

TEST(PredictBlup, DayEffectWeightDecaysWithLead) {
    const auto past_days = open_days(ymd(2004, 1, 5), 1);
    const auto past = toy_series(past_days, {150});
    auto fit = toy_model(past, 1.0, 0.6, Eigen::MatrixXd::Zero(1, 1));
    const double resid = root_transform(150) - fit.beta(0);
    auto weight = [&](int lead) {
        const std::vector<CalendarDay> f{make_day(add_days(past_days[0].date, lead))};
        // Monday plus 1 or 7 days: Tuesday has no fixed column, Monday does.
        const double fixed = lead == 7 ? fit.beta(0) : 0.0;
        return (predict_blup(fit, past, f).rows[0].point_transformed - fixed) / resid;
    };
    const double v = 1.0 + 0.5 + 0.25;
    EXPECT_NEAR(weight(1), 0.6 / v, 1e-12);
    EXPECT_NEAR(weight(7), std::pow(0.6, 7) / v, 1e-12);
    EXPECT_NEAR(weight(7) / weight(1), std::pow(0.6, 6), 1e-12);
}

TEST(ForecastSet, IntervalEndpointsMapThroughInverse) {
    const auto days = open_days(ymd(2004, 1, 4), 1);
    Eigen::VectorXd mean(2), sd(2);
    mean << 10.0, 0.3;
    sd << 0.5, 0.5;
    const auto fs = make_forecast_set(days, 2, mean, sd, 0.95);
    const double z = normal_quantile_two_sided(0.95);
    EXPECT_NEAR(z, 1.959963984540054, 1e-12);
    EXPECT_DOUBLE_EQ(fs.rows[0].lower, inverse_transform(10.0 - z * 0.5));
    EXPECT_DOUBLE_EQ(fs.rows[0].upper, inverse_transform(10.0 + z * 0.5));
    EXPECT_DOUBLE_EQ(fs.rows[1].lower, 0.0);
    EXPECT_LE(fs.rows[1].lower, fs.rows[1].point);
    EXPECT_EQ(error_code_of([&] { normal_quantile_two_sided(1.0); }), ErrorCode::LevelOutOfRange);
}

TEST(ForecastSet, CsvRoundTrip) {
    TempDir tmp;
    const auto days = open_days(ymd(2004, 1, 4), 2);
    Eigen::VectorXd mean = Eigen::VectorXd::LinSpaced(6, 5.0, 12.0), sd = Eigen::VectorXd::Constant(6, 0.6);
    const auto fs = make_forecast_set(days, 3, mean, sd, 0.95);
    write_forecast_csv(fs, tmp.file("f.csv"));
    const auto back = read_forecast_csv(tmp.file("f.csv"));
    ASSERT_EQ(back.rows.size(), fs.rows.size());
    for (std::size_t i = 0; i < fs.rows.size(); ++i) {
        EXPECT_EQ(back.rows[i].date, fs.rows[i].date);
        EXPECT_EQ(back.rows[i].period, fs.rows[i].period);
        EXPECT_DOUBLE_EQ(back.rows[i].point, fs.rows[i].point);
        EXPECT_DOUBLE_EQ(back.rows[i].lower, fs.rows[i].lower);
        EXPECT_DOUBLE_EQ(back.rows[i].upper, fs.rows[i].upper);
    }
}
