#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include "callcast/dataio.hpp"
#include "callcast/designspace.hpp"
#include "callcast/error.hpp"
#include "callcast/gausslik.hpp"

namespace callcast {

enum class Pipeline { TwoStageMixed, Benchmark1, Benchmark2, Industry };

inline const char* to_string(Pipeline p) {
    switch (p) {
        case Pipeline::TwoStageMixed: return "mixed";
        case Pipeline::Benchmark1: return "benchmark1";
        case Pipeline::Benchmark2: return "benchmark2";
        case Pipeline::Industry: return "industry";
    }
    return "unknown";
}

struct ModelSpec {
    FixedEffectsSpec fx;
    CovarianceSpec cov;
    Pipeline pipeline = Pipeline::TwoStageMixed;
    int learn_window_days = 42;
    int lead_time_days = 7;
    int horizon_days = 1;
    double level = 0.95;

    void validate() const {
        if (learn_window_days < 14) throw Error(ErrorCode::InvalidConfig, "learning window must be at least 14 days");
        if (lead_time_days < 1) throw Error(ErrorCode::InvalidConfig, "lead time must be at least 1 day");
        if (horizon_days < 1) throw Error(ErrorCode::InvalidConfig, "horizon must be at least 1 day");
        normal_quantile_two_sided(level);
        for (const auto& e : fx.exogenous)
            if (!is_known_exogenous(e)) throw Error(ErrorCode::InvalidConfig, "unknown exogenous column '" + e + "'");
    }
};

inline std::size_t distinct_weekdays(std::span<const CalendarDay> days) {
    std::set<int> w;
    for (const auto& d : days) w.insert(d.weekday);
    return w.size();
}

// ---------------------------------------------------------------------------------------------
// Two-stage mixed model
// ---------------------------------------------------------------------------------------------

/// Per-day means of the transformed counts.
inline Eigen::VectorXd daily_means(const PeriodSeries& s) {
    const Eigen::VectorXd y = transformed_vector(s);
    Eigen::Map<const Eigen::MatrixXd> grid(y.data(), s.K, static_cast<Eigen::Index>(s.num_days()));
    return grid.colwise().mean().transpose();
}

inline double ols_residual_variance(const Eigen::VectorXd& y, const Eigen::MatrixXd& X) {
    const Eigen::VectorXd b = X.colPivHouseholderQr().solve(y);
    const Eigen::Index dof = std::max<Eigen::Index>(y.size() - X.cols(), 1);
    return std::max((y - X * b).squaredNorm() / static_cast<double>(dof), 1e-6);
}

struct Stage1Result {
    Eigen::MatrixXd G;  // over the window's true-date gaps
    double sigma_G2 = 0.0;
    double rho_G = 0.0;
    std::optional<double> u;
    GlsFit day_fit;
};

/**
 * @brief Fits the daily-average model: My = [W, F_D] b + M Z g + M e with var = G + u I.
 *
 * The period profile columns average to weekday-group indicators, which the weekday columns
 * already span, so the day-level design is [W, F_D] restricted to identifiable columns.
 */
inline Stage1Result fit_stage1(const PeriodSeries& window, const DesignLayout& layout, const CovarianceSpec& cov,
                               const GlsFitOptions& opt = {}) {
    if (distinct_weekdays(window.days) < 3)
        throw Error(ErrorCode::InsufficientHistory, "stage 1 needs at least three distinct weekdays");
    Stage1Result out;
    const auto D = static_cast<Eigen::Index>(window.num_days());
    out.G = Eigen::MatrixXd::Zero(D, D);
    if (cov.inter == InterStructure::None) return out;

    const Eigen::VectorXd my = daily_means(window);
    const Eigen::MatrixXd full = day_level_design(layout, window.days);
    const auto cols = independent_columns(full);
    Eigen::MatrixXd X(D, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) X.col(static_cast<Eigen::Index>(j)) = full.col(cols[j]);
    if (X.cols() >= D) throw Error(ErrorCode::InsufficientHistory, "too few days for the day-level model");

    const Eigen::MatrixXd gaps = gap_matrix(window.days);
    auto build = [&](const Eigen::VectorXd& t) {
        Eigen::MatrixXd V = ar1_kernel(t(0), t(1), gaps);
        V.diagonal().array() += t(2);
        return DenseCovariance(V);
    };
    const std::vector<ParamInfo> params = {
        {"sigma_G2", ParamKind::Variance}, {"rho_G", ParamKind::Correlation}, {"u", ParamKind::Variance}};
    const double s2 = ols_residual_variance(my, X);
    std::vector<Eigen::VectorXd> starts(3, Eigen::VectorXd(3));
    starts[0] << 0.7 * s2, 0.6, 0.3 * s2;
    starts[1] << 0.3 * s2, 0.2, 0.7 * s2;
    starts[2] << 0.9 * s2, 0.9, 0.1 * s2;
    out.day_fit = fit_gls(my, X, build, params, starts, Objective::REML, opt);
    out.sigma_G2 = out.day_fit.theta(0);
    out.rho_G = out.day_fit.theta(1);
    out.u = out.day_fit.theta(2);
    out.G = ar1_kernel(out.sigma_G2, out.rho_G, gaps);
    return out;
}

struct Stage2Params {
    std::vector<ParamInfo> params;
    std::vector<Eigen::VectorXd> starts;
};

inline Stage2Params stage2_parameters(const CovarianceSpec& cov, double within_var) {
    Stage2Params sp;
    const double base = std::max(within_var - (cov.sigma2_mode == Sigma2Mode::Fixed ? cov.sigma2_fixed : 0.0),
                                 0.1 * within_var);
    sp.params.push_back({"sigma_R2", ParamKind::Variance});
    if (cov.intra != IntraStructure::Independent) sp.params.push_back({"rho_R", ParamKind::Correlation});
    if (cov.intra == IntraStructure::ARMA11) sp.params.push_back({"delta", ParamKind::Real});
    if (cov.sigma2_mode == Sigma2Mode::Estimated) sp.params.push_back({"sigma2", ParamKind::Variance});
    const double scale[3] = {1.0, 0.5, 2.0};
    const double rho[3] = {0.5, 0.2, 0.8};
    for (int s = 0; s < 3; ++s) {
        Eigen::VectorXd t(static_cast<Eigen::Index>(sp.params.size()));
        Eigen::Index i = 0;
        t(i++) = scale[s] * base;
        if (cov.intra != IntraStructure::Independent) t(i++) = rho[s];
        if (cov.intra == IntraStructure::ARMA11) t(i++) = rho[s];
        if (cov.sigma2_mode == Sigma2Mode::Estimated) t(i++) = kTheoreticalSigma2;
        sp.starts.push_back(t);
    }
    return sp;
}

/// Unpacks a stage-2 parameter vector into the covariance parameter record.
inline void apply_stage2_theta(const CovarianceSpec& cov, const Eigen::VectorXd& t, CovarianceParams& p) {
    Eigen::Index i = 0;
    p.sigma_R2 = t(i++);
    p.rho_R = cov.intra != IntraStructure::Independent ? t(i++) : 0.0;
    if (cov.intra == IntraStructure::ARMA11)
        p.delta = t(i++);
    else
        p.delta.reset();
    p.sigma2 = cov.sigma2_mode == Sigma2Mode::Estimated ? t(i++) : cov.sigma2_fixed;
}

/**
 * @brief Stage 2: REML over the intra-day parameters with the day covariance frozen.
 */
inline FittedMixedModel fit_stage2(const Eigen::VectorXd& y, const DesignBundle& designs, const Eigen::MatrixXd& G_fixed,
                                   const CovarianceSpec& cov, const GlsFitOptions& opt = {}) {
    const Eigen::MatrixXd X = designs.X();
    const Eigen::Index K = designs.layout.K;
    if (G_fixed.rows() * K != y.size()) throw Error(ErrorCode::DimensionMismatch, "G does not match the window");

    // Within-day residual spread seeds the variance starts.
    const Eigen::VectorXd b = X.colPivHouseholderQr().solve(y);
    Eigen::VectorXd r = y - X * b;
    Eigen::Map<Eigen::MatrixXd> rg(r.data(), K, G_fixed.rows());
    rg.rowwise() -= rg.colwise().mean();
    const double within = std::max(r.squaredNorm() / static_cast<double>(std::max<Eigen::Index>(y.size() - X.cols(), 1)), 1e-4);

    const auto sp = stage2_parameters(cov, within);
    auto build = [&](const Eigen::VectorXd& t) {
        CovarianceParams p;
        apply_stage2_theta(cov, t, p);
        Eigen::MatrixXd Rs = intra_day_covariance(cov, p, K);
        if (p.sigma2 > 0.0) check_variance(p.sigma2, "sigma2");
        Rs.diagonal().array() += p.sigma2;
        return DayBlockCovariance(G_fixed, Rs);
    };
    const auto gf = fit_gls(y, X, build, sp.params, sp.starts, Objective::REML, opt);

    FittedMixedModel fit;
    fit.beta = gf.beta;
    fit.cov_beta = gf.cov_beta;
    apply_stage2_theta(cov, gf.theta, fit.theta);
    fit.loglik = gf.loglik;
    fit.objective = gf.objective;
    fit.cov = cov;
    fit.fx = designs.layout.fx;
    fit.layout = designs.layout;
    fit.converged = gf.converged;
    fit.n_iter = gf.n_iter;
    fit.warnings = gf.warnings;
    return fit;
}

/// Stage 1 followed by stage 2 on one learning window (outliers already removed).
inline FittedMixedModel fit_two_stage(const PeriodSeries& window, const FixedEffectsSpec& fx, const CovarianceSpec& cov,
                                      const GlsFitOptions& opt = {}) {
    const auto designs = build_designs(window, fx);
    const auto s1 = fit_stage1(window, designs.layout, cov, opt);
    auto fit = fit_stage2(transformed_vector(window), designs, s1.G, cov, opt);
    fit.theta.sigma_G2 = s1.sigma_G2;
    fit.theta.rho_G = s1.rho_G;
    fit.theta.u = s1.u;
    fit.converged = fit.converged && (cov.inter == InterStructure::None || s1.day_fit.converged);
    fit.n_iter += s1.day_fit.n_iter;
    fit.warnings.insert(fit.warnings.begin(), s1.day_fit.warnings.begin(), s1.day_fit.warnings.end());
    return fit;
}

// ---------------------------------------------------------------------------------------------
// Industry model and regression benchmarks
// ---------------------------------------------------------------------------------------------

/// Mean count at `period` (1-based) over history days sharing the target's weekday.
inline double forecast_industry(const PeriodSeries& history, const CalendarDay& target, int period) {
    if (period < 1 || period > history.K) throw Error(ErrorCode::DimensionMismatch, "period out of range");
    double sum = 0.0;
    int n = 0;
    for (std::size_t d = 0; d < history.num_days(); ++d)
        if (history.days[d].weekday == target.weekday && history.days[d].date < target.date) {
            sum += static_cast<double>(history.counts(d, static_cast<std::size_t>(period - 1)));
            ++n;
        }
    if (n == 0) throw Error(ErrorCode::NoComparableDays, "no earlier " + std::string(kWeekdayNames[static_cast<std::size_t>(target.weekday - 1)]) + " in history");
    return sum / n;
}

inline double forecast_industry(const PeriodSeries& history, Date target, int period) {
    return forecast_industry(history, make_day(target), period);
}

/// Same-weekday mean of transformed counts.
inline double forecast_industry_transformed(const PeriodSeries& history, const CalendarDay& target, int period) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t d = 0; d < history.num_days(); ++d)
        if (history.days[d].weekday == target.weekday && history.days[d].date < target.date) {
            sum += root_transform(static_cast<double>(history.counts(d, static_cast<std::size_t>(period - 1))));
            ++n;
        }
    if (n == 0) throw Error(ErrorCode::NoComparableDays, "no comparable days in history");
    return sum / n;
}

/// Industry forecasts are point-only: lower = upper = point.
inline ForecastSet forecast_industry_set(const PeriodSeries& history, std::span<const CalendarDay> targets) {
    ForecastSet fs;
    for (const auto& t : targets)
        for (int k = 1; k <= history.K; ++k) {
            ForecastRow r;
            r.date = t.date;
            r.period = k;
            r.point = r.lower = r.upper = forecast_industry(history, t, k);
            r.point_transformed = root_transform(r.point);
            fs.rows.push_back(r);
        }
    return fs;
}

struct BenchmarkFit {
    int which = 1;
    DesignLayout layout;
    Eigen::VectorXd beta;
    Eigen::MatrixXd xtx_inv;
    Eigen::VectorXd fitted;  // transformed scale, day-major
    double s2 = 0.0;         // RSS / (n - p), estimates sigma_R2 + sigma2
    Eigen::Index n_obs = 0;
};

/// Benchmark 1 uses weekday-by-period cell means; Benchmark 2 uses the supplied fixed effects.
inline FixedEffectsSpec benchmark_effects(int which, const FixedEffectsSpec& fx) {
    if (which == 1) return FixedEffectsSpec{PatternMode::MultiPattern, {}, true};
    return fx;
}

/**
 * @brief Ordinary least squares on the transformed scale with i.i.d. errors.
 */
inline BenchmarkFit fit_benchmark(int which, const PeriodSeries& window, const FixedEffectsSpec& fx) {
    if (which != 1 && which != 2) throw Error(ErrorCode::InvalidConfig, "benchmark must be 1 or 2");
    if (window.num_days() == 0) throw Error(ErrorCode::EmptySeries, "empty learning window");
    const auto designs = build_designs(window, benchmark_effects(which, fx));
    const Eigen::MatrixXd X = designs.X();
    const Eigen::VectorXd y = transformed_vector(window);
    BenchmarkFit bf;
    bf.which = which;
    bf.layout = designs.layout;
    bf.n_obs = y.size();
    Eigen::LLT<Eigen::MatrixXd> llt(X.transpose() * X);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularDesign, "benchmark design is singular");
    bf.beta = llt.solve(X.transpose() * y);
    bf.xtx_inv = llt.solve(Eigen::MatrixXd::Identity(X.cols(), X.cols()));
    bf.fitted = X * bf.beta;
    const Eigen::Index dof = y.size() - X.cols();
    if (dof <= 0) throw Error(ErrorCode::InsufficientHistory, "benchmark has no residual degrees of freedom");
    bf.s2 = (y - bf.fitted).squaredNorm() / static_cast<double>(dof);
    return bf;
}

inline ForecastSet predict_benchmark(const BenchmarkFit& bf, std::span<const CalendarDay> targets, double level) {
    const Eigen::MatrixXd Xf = design_for_days(bf.layout, targets);
    const Eigen::VectorXd mean = Xf * bf.beta;
    Eigen::VectorXd sd(mean.size());
    for (Eigen::Index i = 0; i < mean.size(); ++i)
        sd(i) = std::sqrt(bf.s2 * (1.0 + Xf.row(i).dot(bf.xtx_inv * Xf.row(i).transpose())));
    return make_forecast_set(targets, bf.layout.K, mean, sd, level);
}

inline ForecastSet forecast_benchmark(int which, const PeriodSeries& window, const FixedEffectsSpec& fx,
                                      std::span<const CalendarDay> targets, double level = 0.95) {
    return predict_benchmark(fit_benchmark(which, window, fx), targets, level);
}

// ---------------------------------------------------------------------------------------------
// Rolling pipeline
// ---------------------------------------------------------------------------------------------

/// Regular days in the calendar-day window (origin - lead - learn, origin - lead].
inline PeriodSeries learning_window(const PeriodSeries& data, Date origin, int learn_days, int lead_days) {
    const auto end = day_serial(origin) - lead_days;
    const auto begin = end - learn_days;
    return select_days(data, [&](const CalendarDay& d) {
        const auto s = day_serial(d.date);
        return !d.is_outlier && s > begin && s <= end;
    });
}

/// Non-Saturday dates in [origin, origin + horizon), annotated from the series or calendar.
inline std::vector<CalendarDay> target_days(const PeriodSeries& data, const CalendarTable* calendar, Date origin,
                                            int horizon_days) {
    std::vector<CalendarDay> out;
    for (int h = 0; h < horizon_days; ++h) {
        const Date d = add_days(origin, h);
        if (weekday_index(d) == 0) continue;
        if (auto i = data.find(d)) {
            out.push_back(data.days[*i]);
        } else if (calendar && calendar->count(day_serial(d))) {
            out.push_back(calendar->at(day_serial(d)));
        } else {
            out.push_back(make_day(d));
        }
    }
    return out;
}

struct PipelineOutput {
    ForecastSet forecasts;
    std::optional<FittedMixedModel> mixed;
    std::optional<BenchmarkFit> benchmark;
    std::size_t window_days = 0;
    std::vector<std::string> warnings;
};

/**
 * @brief Fits the requested pipeline on the learning window ending `lead` days before
 * `origin` and forecasts the horizon days starting at `origin`.
 */
inline PipelineOutput run_pipeline_detailed(const ModelSpec& spec, const PeriodSeries& data, Date origin,
                                            const CalendarTable* calendar = nullptr, const GlsFitOptions& opt = {}) {
    spec.validate();
    const auto window = learning_window(data, origin, spec.learn_window_days, spec.lead_time_days);
    const auto targets = target_days(data, calendar, origin, spec.horizon_days);
    PipelineOutput out;
    out.window_days = window.num_days();
    if (window.num_days() == 0)
        throw Error(ErrorCode::InsufficientHistory, "no usable days before " + format_date(origin));
    if (targets.empty()) return out;

    if (spec.pipeline == Pipeline::Industry) {
        out.forecasts = forecast_industry_set(window, targets);
        return out;
    }
    std::set<int> seen;
    for (const auto& d : window.days) seen.insert(d.weekday);
    for (const auto& t : targets)
        if (!seen.count(t.weekday))
            throw Error(ErrorCode::InsufficientHistory,
                        "no " + std::string(kWeekdayNames[static_cast<std::size_t>(t.weekday - 1)]) + " in the learning window");

    if (spec.pipeline == Pipeline::TwoStageMixed) {
        if (distinct_weekdays(window.days) < 3)
            throw Error(ErrorCode::InsufficientHistory, "learning window spans fewer than three weekdays");
        auto fit = fit_two_stage(window, spec.fx, spec.cov, opt);
        out.forecasts = predict_blup(fit, window, targets, spec.level);
        out.warnings = fit.warnings;
        out.mixed = std::move(fit);
        return out;
    }
    const int which = spec.pipeline == Pipeline::Benchmark1 ? 1 : 2;
    auto bf = fit_benchmark(which, window, spec.fx);
    out.forecasts = predict_benchmark(bf, targets, spec.level);
    out.benchmark = std::move(bf);
    return out;
}

inline ForecastSet run_pipeline(const ModelSpec& spec, const PeriodSeries& data, Date origin,
                                const CalendarTable* calendar = nullptr) {
    return run_pipeline_detailed(spec, data, origin, calendar).forecasts;
}

// ---------------------------------------------------------------------------------------------
// Service-time regressions
// ---------------------------------------------------------------------------------------------

struct ServiceModelFit {
    int model_id = 1;
    int K = 0;
    std::vector<std::string> names;  // identifiable coefficients
    Eigen::VectorXd coefficients;
    std::vector<std::string> dropped;
    double error_ss = 0.0;
    int n_params = 0;  // rank - 1 (model degrees of freedom)
    Eigen::Index n_obs = 0;
    std::vector<int> weekdays;  // seen in training
    bool weighted = false;
    Eigen::MatrixXd design;  // training design, kept columns
    Eigen::VectorXd response;
};

namespace detail {

inline std::vector<std::string> service_column_names(int model_id, int K) {
    std::vector<std::string> n;
    if (model_id == 2) {
        for (auto* w : kWeekdayNames)
            for (int k = 1; k <= K; ++k) n.push_back(std::string("rho_") + w + "_" + std::to_string(k));
    } else {
        for (auto* w : kWeekdayNames) n.push_back(std::string("alpha_") + w);
        n.push_back("beta1");
        n.push_back("beta2");
        if (model_id == 1)
            for (auto* w : kWeekdayNames) n.push_back(std::string("gamma1_") + w);
        for (auto* w : kWeekdayNames) n.push_back(std::string("gamma2_") + w);
    }
    n.push_back("phi");
    return n;
}

inline Eigen::RowVectorXd service_row(int model_id, int K, int weekday, int period, double trend) {
    const auto names = service_column_names(model_id, K);
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(names.size()));
    const double k = period, k2 = k * k;
    const int q = weekday - 1;
    if (model_id == 2) {
        r(q * K + period - 1) = 1.0;
    } else {
        r(q) = 1.0;
        r(6) = k2;
        r(7) = k;
        Eigen::Index c = 8;
        if (model_id == 1) {
            r(c + q) = k2;
            c += 6;
        }
        r(c + q) = k;
    }
    r(r.size() - 1) = trend;
    return r;
}

}  // namespace detail

struct ServiceTarget {
    CalendarDay day;
    int period = 1;      // 1-based
    double trend = 0.0;  // day ordinal on the training scale
};

/**
 * @brief OLS fit of service-time Model 1 (weekday quadratic profiles), 2 (weekday x period
 * cell means) or 3 (Model 1 without weekday x k^2), each with a linear day trend.
 *
 * The trend covariate is the 1-based ordinal of the day within the training series.
 */
inline ServiceModelFit fit_service_model(int model_id, const ServiceSeries& s, bool weighted = false) {
    if (model_id < 1 || model_id > 3) throw Error(ErrorCode::InvalidConfig, "service model must be 1, 2 or 3");
    if (distinct_weekdays(s.days) < 2) throw Error(ErrorCode::RankDeficient, "service fit needs two weekdays");
    const int K = s.K;
    const auto names = detail::service_column_names(model_id, K);
    const auto n = static_cast<Eigen::Index>(s.num_days()) * K;
    Eigen::MatrixXd full(n, static_cast<Eigen::Index>(names.size()));
    Eigen::VectorXd y(n), w = Eigen::VectorXd::Ones(n);
    for (std::size_t d = 0; d < s.num_days(); ++d)
        for (int k = 1; k <= K; ++k) {
            const auto i = static_cast<Eigen::Index>(d) * K + k - 1;
            full.row(i) = detail::service_row(model_id, K, s.days[d].weekday, k, static_cast<double>(d + 1));
            y(i) = s.mean_service(d, static_cast<std::size_t>(k - 1));
            if (weighted) w(i) = static_cast<double>(std::max<std::int64_t>(s.n_calls(d, static_cast<std::size_t>(k - 1)), 0));
        }
    const auto kept = independent_columns(full);
    ServiceModelFit fit;
    fit.model_id = model_id;
    fit.K = K;
    fit.weighted = weighted;
    fit.n_obs = n;
    std::vector<bool> keep(names.size(), false);
    Eigen::MatrixXd X(n, static_cast<Eigen::Index>(kept.size()));
    for (std::size_t j = 0; j < kept.size(); ++j) {
        keep[static_cast<std::size_t>(kept[j])] = true;
        X.col(static_cast<Eigen::Index>(j)) = full.col(kept[j]);
        fit.names.push_back(names[static_cast<std::size_t>(kept[j])]);
    }
    for (std::size_t j = 0; j < names.size(); ++j)
        if (!keep[j]) fit.dropped.push_back(names[j]);
    if (X.cols() >= n) throw Error(ErrorCode::RankDeficient, "more coefficients than observations");

    const Eigen::VectorXd sw = w.cwiseSqrt();
    const Eigen::MatrixXd Xw = sw.asDiagonal() * X;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
    if (qr.rank() < X.cols()) throw Error(ErrorCode::RankDeficient, "service design is rank deficient");
    fit.coefficients = qr.solve(Eigen::VectorXd(sw.cwiseProduct(y)));
    fit.error_ss = (sw.cwiseProduct(y - X * fit.coefficients)).squaredNorm();
    fit.n_params = static_cast<int>(X.cols()) - 1;
    std::set<int> wd;
    for (const auto& d : s.days) wd.insert(d.weekday);
    fit.weekdays.assign(wd.begin(), wd.end());
    fit.design = std::move(X);
    fit.response = std::move(y);
    return fit;
}

struct ServiceComparison {
    double statistic = 0.0;  // error_ss(a) - error_ss(b)
    int df = 0;
    double p_value = 1.0;
    double scaled_statistic = 0.0;  // statistic / residual variance of b
    double scaled_p_value = 1.0;
};

/// Compares `a` nested in `b`. The raw statistic is the error-SS difference.
inline ServiceComparison compare_service_models(const ServiceModelFit& a, const ServiceModelFit& b) {
    if (a.response.size() != b.response.size() || a.response != b.response || !span_contains(b.design, a.design, 1e-7))
        throw Error(ErrorCode::NotNested, "model " + std::to_string(a.model_id) + " is not nested in model " +
                                              std::to_string(b.model_id));
    ServiceComparison c;
    c.statistic = std::max(a.error_ss - b.error_ss, 0.0);
    c.df = b.n_params - a.n_params;
    auto upper = [](double stat, int df) {
        if (df <= 0 || stat <= 0.0) return 1.0;
        return boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), stat));
    };
    c.p_value = upper(c.statistic, c.df);
    const auto dof = b.n_obs - b.design.cols();
    if (dof > 0 && b.error_ss > 0.0) {
        c.scaled_statistic = c.statistic / (b.error_ss / static_cast<double>(dof));
        c.scaled_p_value = upper(c.scaled_statistic, c.df);
    }
    return c;
}

inline double predict_service(const ServiceModelFit& fit, const ServiceTarget& t, double floor = 0.1) {
    if (!std::binary_search(fit.weekdays.begin(), fit.weekdays.end(), t.day.weekday))
        throw Error(ErrorCode::UnseenWeekday,
                    std::string(kWeekdayNames[static_cast<std::size_t>(std::max(t.day.weekday, 1) - 1)]) + " not in training data");
    if (t.period < 1 || t.period > fit.K) throw Error(ErrorCode::DimensionMismatch, "period out of range");
    const auto full = detail::service_row(fit.model_id, fit.K, t.day.weekday, t.period, t.trend);
    const auto names = detail::service_column_names(fit.model_id, fit.K);
    double v = 0.0;
    std::size_t j = 0;
    for (std::size_t c = 0; c < names.size() && j < fit.names.size(); ++c)
        if (names[c] == fit.names[j]) v += full(static_cast<Eigen::Index>(c)) * fit.coefficients(static_cast<Eigen::Index>(j++));
    return std::max(v, floor);
}

/// Predictions for every period of `days`; the first day gets trend ordinal `first_ordinal`.
inline Grid<double> predict_service_days(const ServiceModelFit& fit, std::span<const CalendarDay> days,
                                         double first_ordinal, double floor = 0.1) {
    Grid<double> out(days.size(), static_cast<std::size_t>(fit.K));
    for (std::size_t d = 0; d < days.size(); ++d)
        for (int k = 1; k <= fit.K; ++k)
            out(d, static_cast<std::size_t>(k - 1)) =
                predict_service(fit, {days[d], k, first_ordinal + static_cast<double>(d)}, floor);
    return out;
}

/// Mean absolute percentage error of in-sample predictions.
inline double service_ape_in_sample(const ServiceModelFit& fit, const ServiceSeries& s, double floor = 0.1) {
    const auto pred = predict_service_days(fit, s.days, 1.0, floor);
    double sum = 0.0;
    for (std::size_t d = 0; d < s.num_days(); ++d)
        for (std::size_t k = 0; k < static_cast<std::size_t>(s.K); ++k)
            sum += 100.0 * std::abs(pred(d, k) - s.mean_service(d, k)) / s.mean_service(d, k);
    return sum / static_cast<double>(s.num_days() * static_cast<std::size_t>(s.K));
}

/**
 * Rolling-origin APE: for every day with enough history, fit on the regular days in the
 * learning window ending `lead_days` before it and score that day's periods.
 */
inline double service_ape_rolling(int model_id, const ServiceSeries& s, int learn_days, int lead_days,
                                  double floor = 0.1) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < s.num_days(); ++t) {
        if (s.days[t].is_outlier) continue;
        const auto end = day_serial(s.days[t].date) - lead_days;
        const auto begin = end - learn_days;
        const auto window = select_days(s, [&](const CalendarDay& d) {
            const auto x = day_serial(d.date);
            return !d.is_outlier && x > begin && x <= end;
        });
        try {
            const auto fit = fit_service_model(model_id, window);
            // The trend ordinal continues past the window by the number of series days skipped.
            const auto last = *s.find(window.days.back().date);
            const double ord = static_cast<double>(window.num_days() + (t - last));
            for (int k = 1; k <= s.K; ++k) {
                const double p = predict_service(fit, {s.days[t], k, ord}, floor);
                const double a = s.mean_service(t, static_cast<std::size_t>(k - 1));
                sum += 100.0 * std::abs(p - a) / a;
                ++n;
            }
        } catch (const Error&) {
            continue;
        }
    }
    if (n == 0) throw Error(ErrorCode::InsufficientHistory, "no day has enough service history");
    return sum / static_cast<double>(n);
}

}  // namespace callcast
