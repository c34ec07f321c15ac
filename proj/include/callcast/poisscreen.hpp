#pragma once

#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>

#include "callcast/dataio.hpp"
#include "callcast/designspace.hpp"
#include "callcast/error.hpp"

namespace callcast {

struct GlmCoefficient {
    std::string name;
    double estimate = 0.0;
    double std_error = 0.0;
    double chi_square = 0.0;  // Wald, (estimate / se)^2
    double p_value = 1.0;
};

struct GlmFit {
    std::vector<GlmCoefficient> coefficients;
    std::vector<std::string> dropped;  // aliased columns
    Eigen::VectorXd beta;
    Eigen::MatrixXd cov;
    Eigen::MatrixXd design;  // kept columns only
    Eigen::VectorXd y;
    Eigen::VectorXd fitted;
    double deviance = 0.0;
    int iterations = 0;

    Eigen::Index n_obs() const { return y.size(); }
    Eigen::Index n_coef() const { return beta.size(); }
};

inline double chi_square_upper(double stat, double df) {
    if (df <= 0.0) return 1.0;
    if (stat <= 0.0) return 1.0;
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), stat));
}

inline double poisson_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
    double dev = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double term = y(i) > 0.0 ? y(i) * std::log(y(i) / mu(i)) : 0.0;
        dev += 2.0 * (term - (y(i) - mu(i)));
    }
    return std::max(dev, 0.0);
}

struct IrlsOptions {
    int max_iter = 100;
    double tol = 1e-12;
};

/**
 * @brief Poisson log-linear regression by iteratively reweighted least squares.
 *
 * Starts from a constant linear predictor log(mean + 0.5) and halves steps that increase
 * the deviance. Aliased columns are dropped left to right before fitting.
 */
inline GlmFit fit_poisson_loglinear(const Eigen::VectorXd& y, const Eigen::MatrixXd& X_all,
                                    const std::vector<std::string>& names, const IrlsOptions& opt = {}) {
    if (X_all.rows() != y.size() || static_cast<std::size_t>(X_all.cols()) != names.size())
        throw Error(ErrorCode::DimensionMismatch, "design, response and names disagree");
    if (y.size() == 0) throw Error(ErrorCode::EmptySeries, "no observations");
    if ((y.array() < 0.0).any()) throw Error(ErrorCode::DomainError, "counts must be non-negative");

    GlmFit fit;
    const auto kept = independent_columns(X_all);
    if (kept.empty()) throw Error(ErrorCode::AllAliased, "no identifiable coefficients");
    std::vector<bool> keep(static_cast<std::size_t>(X_all.cols()), false);
    for (auto j : kept) keep[static_cast<std::size_t>(j)] = true;
    Eigen::MatrixXd X(X_all.rows(), static_cast<Eigen::Index>(kept.size()));
    std::vector<std::string> kept_names;
    for (std::size_t j = 0; j < kept.size(); ++j) {
        X.col(static_cast<Eigen::Index>(j)) = X_all.col(kept[j]);
        kept_names.push_back(names[static_cast<std::size_t>(kept[j])]);
    }
    for (std::size_t j = 0; j < keep.size(); ++j)
        if (!keep[j]) fit.dropped.push_back(names[j]);

    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        if ((X.col(j).array() < 0.0).any()) continue;
        if (X.col(j).dot(y) == 0.0)
            throw Error(ErrorCode::Separation, "column '" + kept_names[static_cast<std::size_t>(j)] +
                                                   "' only covers zero counts");
    }

    const Eigen::Index p = X.cols();
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(y.size(), std::log(y.mean() + 0.5));
    Eigen::VectorXd mu = eta.array().exp();
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    double dev = poisson_deviance(y, mu);
    bool converged = false;
    bool have_beta = false;
    for (int it = 0; it < opt.max_iter; ++it) {
        fit.iterations = it + 1;
        const Eigen::VectorXd z = eta.array() + (y - mu).array() / mu.array();
        const Eigen::MatrixXd xtw = X.transpose() * mu.asDiagonal();
        Eigen::LLT<Eigen::MatrixXd> llt(xtw * X);
        if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularDesign, "X'WX is singular");
        Eigen::VectorXd b_new = llt.solve(xtw * z);
        Eigen::VectorXd eta_new = X * b_new;
        Eigen::VectorXd mu_new = eta_new.array().exp();
        double dev_new = poisson_deviance(y, mu_new);
        // Increases below the rounding level of the deviance are not treated as overshoot.
        const double slack = 1e-10 * (std::abs(dev) + 1.0);
        for (int h = 0; have_beta && (dev_new > dev + slack || !std::isfinite(dev_new)) && h < 30; ++h) {
            b_new = 0.5 * (b_new + beta);
            eta_new = X * b_new;
            mu_new = eta_new.array().exp();
            dev_new = poisson_deviance(y, mu_new);
        }
        const double change = std::abs(dev_new - dev) / (std::abs(dev_new) + 0.1);
        // Newton steps converge quadratically, so a step of sqrt(tol) leaves an error near tol.
        const double step = have_beta ? (b_new - beta).cwiseAbs().maxCoeff() : 1.0;
        const bool small_step = step <= std::sqrt(opt.tol) * (1.0 + b_new.cwiseAbs().maxCoeff());
        beta = b_new;
        eta = eta_new;
        mu = mu_new;
        dev = dev_new;
        if (have_beta && change < opt.tol && small_step) {
            converged = true;
            break;
        }
        have_beta = true;
    }
    if (!converged) throw Error(ErrorCode::NonConvergence, "IRLS did not converge");
    if ((beta.array() < -30.0).any()) throw Error(ErrorCode::Separation, "a coefficient diverged");

    const Eigen::MatrixXd info = X.transpose() * mu.asDiagonal() * X;
    fit.cov = info.llt().solve(Eigen::MatrixXd::Identity(p, p));
    fit.beta = beta;
    fit.design = X;
    fit.y = y;
    fit.fitted = mu;
    fit.deviance = dev;
    for (Eigen::Index j = 0; j < p; ++j) {
        GlmCoefficient c;
        c.name = kept_names[static_cast<std::size_t>(j)];
        c.estimate = beta(j);
        c.std_error = std::sqrt(fit.cov(j, j));
        c.chi_square = (c.estimate / c.std_error) * (c.estimate / c.std_error);
        c.p_value = chi_square_upper(c.chi_square, 1.0);
        fit.coefficients.push_back(c);
    }
    return fit;
}

struct ContrastResult {
    double statistic = 0.0;
    int df = 0;
    double p_value = 1.0;
    double f_statistic = 0.0;  // statistic / df
    int df_denominator = 0;    // n_obs - full-model coefficients
    double f_p_value = 1.0;
    bool nested = true;
};

/**
 * Likelihood-ratio contrast between nested Poisson fits on the same counts, with the
 * chi-square p-value and an F-scaled variant (statistic/df against F(df, n_obs - p_full)).
 */
inline ContrastResult lr_contrast(const GlmFit& full, const GlmFit& reduced, Eigen::Index n_obs,
                                  bool check_nesting = true) {
    ContrastResult out;
    out.nested = full.y.size() == reduced.y.size() && full.y == reduced.y &&
                 span_contains(full.design, reduced.design) && full.n_coef() >= reduced.n_coef();
    if (check_nesting && !out.nested) throw Error(ErrorCode::NotNested, "reduced model is not nested in full model");
    out.statistic = std::max(reduced.deviance - full.deviance, 0.0);
    out.df = static_cast<int>(full.n_coef() - reduced.n_coef());
    out.p_value = out.df > 0 ? chi_square_upper(out.statistic, out.df) : 1.0;
    out.df_denominator = static_cast<int>(n_obs - full.n_coef());
    if (out.df > 0 && out.df_denominator > 0) {
        out.f_statistic = out.statistic / out.df;
        out.f_p_value = boost::math::cdf(boost::math::complement(
            boost::math::fisher_f(out.df, out.df_denominator), out.f_statistic));
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Day-level screening workflow
// ---------------------------------------------------------------------------------------------

inline const std::vector<std::string>& all_indicator_columns() {
    static const std::vector<std::string> cols = {"delivery_1", "delivery_7", "delivery_14", "delivery_21",
                                                  "billing_1",  "billing_7",  "billing_14",  "billing_21"};
    return cols;
}

/// Six weekday indicators followed by the named day-level indicators.
inline Eigen::MatrixXd screening_design(std::span<const CalendarDay> days, const std::vector<std::string>& exogenous,
                                        std::vector<std::string>& names) {
    names.clear();
    for (auto* w : kWeekdayNames) names.push_back(w);
    for (const auto& e : exogenous) names.push_back(e);
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(days.size()), static_cast<Eigen::Index>(names.size()));
    for (std::size_t d = 0; d < days.size(); ++d) {
        const auto i = static_cast<Eigen::Index>(d);
        X(i, days[d].weekday - 1) = 1.0;
        for (std::size_t j = 0; j < exogenous.size(); ++j)
            X(i, static_cast<Eigen::Index>(6 + j)) = exogenous_value(days[d], exogenous[j]);
    }
    return X;
}

inline Eigen::VectorXd daily_totals(const PeriodSeries& s) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(s.num_days()));
    for (std::size_t d = 0; d < s.num_days(); ++d) y(static_cast<Eigen::Index>(d)) = static_cast<double>(s.day_total(d));
    return y;
}

inline GlmFit fit_daily_model(const PeriodSeries& s, const std::vector<std::string>& exogenous) {
    std::vector<std::string> names;
    const auto X = screening_design(s.days, exogenous, names);
    return fit_poisson_loglinear(daily_totals(s), X, names);
}

struct NamedContrast {
    std::string label;
    std::vector<std::string> reduced_columns;
    ContrastResult result;
};

struct ColumnScreen {
    std::string column;
    ContrastResult drop_contrast;
    bool droppable = false;  // drop-one contrast p > threshold
};

struct ScreeningReport {
    GlmFit initial;
    std::vector<NamedContrast> contrasts;
    std::vector<ColumnScreen> columns;
    double threshold = 0.05;
};

/**
 * @brief Runs the screening ladder on non-outlier days: the full indicator model, the two
 * reduced alternatives (global delivery + billing 14; four delivery + billing 14), and a
 * drop-one contrast per indicator. Droppable columns are flagged, never removed.
 */
inline ScreeningReport run_screening(const PeriodSeries& series, double threshold = 0.05) {
    const auto regular = select_days(series, [](const CalendarDay& d) { return !d.is_outlier; });
    ScreeningReport rep;
    rep.threshold = threshold;
    const auto& cols = all_indicator_columns();
    rep.initial = fit_daily_model(regular, cols);
    const auto n = static_cast<Eigen::Index>(regular.num_days());

    auto contrast = [&](const std::string& label, const std::vector<std::string>& reduced_cols) {
        const auto reduced = fit_daily_model(regular, reduced_cols);
        NamedContrast c{label, reduced_cols, lr_contrast(rep.initial, reduced, n, false)};
        return c;
    };
    rep.contrasts.push_back(contrast("weekday + billing_14 + global_delivery", {"billing_14", "global_delivery"}));
    rep.contrasts.push_back(contrast("weekday + billing_14 + four delivery",
                                     {"delivery_1", "delivery_7", "delivery_14", "delivery_21", "billing_14"}));
    for (const auto& c : cols) {
        std::vector<std::string> rest;
        for (const auto& o : cols)
            if (o != c) rest.push_back(o);
        ColumnScreen cs;
        cs.column = c;
        cs.drop_contrast = contrast("drop " + c, rest).result;
        cs.droppable = cs.drop_contrast.p_value > threshold;
        rep.columns.push_back(cs);
    }
    return rep;
}

inline std::string format_screening_table(const ScreeningReport& rep) {
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-18s %12s %14s %12s\n", "Parameter", "Estimate", "Chi-square", "Pr>ChiSq");
    out += buf;
    for (const auto& c : rep.initial.coefficients) {
        std::snprintf(buf, sizeof(buf), "%-18s %12.4f %14.2f %12.4f\n", c.name.c_str(), c.estimate, c.chi_square,
                      c.p_value);
        out += buf;
    }
    out += "\nContrasts against the initial model\n";
    std::snprintf(buf, sizeof(buf), "%-42s %6s %6s %10s %10s %10s\n", "Alternative", "df", "ddf", "Chi-square", "F",
                  "Pr>F");
    out += buf;
    for (const auto& c : rep.contrasts) {
        std::snprintf(buf, sizeof(buf), "%-42s %6d %6d %10.3f %10.3f %10.4f%s\n", c.label.c_str(), c.result.df,
                      c.result.df_denominator, c.result.statistic, c.result.f_statistic, c.result.f_p_value,
                      c.result.nested ? "" : "  (not nested)");
        out += buf;
    }
    out += "\nDrop-one screening\n";
    for (const auto& c : rep.columns) {
        std::snprintf(buf, sizeof(buf), "%-18s chi2=%8.3f p=%8.4f %s\n", c.column.c_str(), c.drop_contrast.statistic,
                      c.drop_contrast.p_value, c.droppable ? "droppable" : "keep");
        out += buf;
    }
    return out;
}

}  // namespace callcast
