#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "callcast/dataio.hpp"
#include "callcast/designspace.hpp"
#include "callcast/error.hpp"
#include "callcast/optimize.hpp"

namespace callcast {

/// Variance-stabilising root transform for Poisson counts.
inline double root_transform(double n) { return std::sqrt(n + 0.25); }

inline double inverse_transform(double y) { return std::max(y * y - 0.25, 0.0); }

// ---------------------------------------------------------------------------------------------
// Covariance operators
// ---------------------------------------------------------------------------------------------

template <class Op>
concept CovarianceOperator = requires(const Op& op, const Eigen::MatrixXd& b) {
    { op.solve(b) } -> std::convertible_to<Eigen::MatrixXd>;
    { op.log_det() } -> std::convertible_to<double>;
    { op.dim() } -> std::convertible_to<Eigen::Index>;
};

/// Any symmetric positive-definite matrix, factorised once.
class DenseCovariance {
public:
    explicit DenseCovariance(const Eigen::MatrixXd& V) : llt_(V) {
        if (V.rows() != V.cols()) throw Error(ErrorCode::DimensionMismatch, "covariance must be square");
        if (llt_.info() != Eigen::Success) throw Error(ErrorCode::NotPositiveDefinite, "covariance is not PD");
        const auto& L = llt_.matrixLLT();
        log_det_ = 2.0 * L.diagonal().array().log().sum();
        if (!std::isfinite(log_det_)) throw Error(ErrorCode::NotPositiveDefinite, "covariance is singular");
    }

    Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const { return llt_.solve(b); }
    double log_det() const { return log_det_; }
    Eigen::Index dim() const { return llt_.matrixLLT().rows(); }

private:
    Eigen::LLT<Eigen::MatrixXd> llt_;
    double log_det_ = 0.0;
};

/**
 * @brief V = G (x) J_K + I_D (x) R* for day-major, period-minor observation vectors.
 *
 * Solves use the Woodbury identity with A = I_D (x) R*^{-1} and Z = I_D (x) 1_K:
 * V^{-1} = A - A Z G (I + cG)^{-1} Z'A with c = 1'R*^{-1}1, and
 * log|V| = D log|R*| + log|I + cG|. G only needs to be positive semidefinite.
 */
class DayBlockCovariance {
public:
    DayBlockCovariance(Eigen::MatrixXd G, Eigen::MatrixXd r_star) : G_(std::move(G)), Rs_(std::move(r_star)) {
        if (G_.rows() != G_.cols() || Rs_.rows() != Rs_.cols())
            throw Error(ErrorCode::DimensionMismatch, "G and R* must be square");
        Eigen::LLT<Eigen::MatrixXd> rllt(Rs_);
        if (rllt.info() != Eigen::Success) throw Error(ErrorCode::NotPositiveDefinite, "R* is not PD");
        const Eigen::Index K = Rs_.rows(), D = G_.rows();
        Rinv_ = rllt.solve(Eigen::MatrixXd::Identity(K, K));
        w_ = Rinv_.rowwise().sum();
        c_ = w_.sum();
        Eigen::MatrixXd H = Eigen::MatrixXd::Identity(D, D) + c_ * G_;
        hllt_.compute(H);
        if (hllt_.info() != Eigen::Success) throw Error(ErrorCode::NotPositiveDefinite, "I + cG is not PD");
        log_det_ = static_cast<double>(D) * 2.0 * rllt.matrixLLT().diagonal().array().log().sum() +
                   2.0 * hllt_.matrixLLT().diagonal().array().log().sum();
        if (!std::isfinite(log_det_)) throw Error(ErrorCode::NotPositiveDefinite, "covariance is singular");
    }

    Eigen::Index days() const { return G_.rows(); }
    Eigen::Index periods() const { return Rs_.rows(); }
    Eigen::Index dim() const { return G_.rows() * Rs_.rows(); }
    double log_det() const { return log_det_; }
    const Eigen::MatrixXd& G() const { return G_; }
    const Eigen::MatrixXd& r_star() const { return Rs_; }

    Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const {
        const Eigen::Index K = periods(), D = days(), m = b.cols();
        if (b.rows() != D * K) throw Error(ErrorCode::DimensionMismatch, "right-hand side has wrong length");
        // Column-major storage lets every K-block of every column be viewed as one K x (D m) matrix.
        Eigen::MatrixXd out(D * K, m);
        Eigen::Map<const Eigen::MatrixXd> bv(b.data(), K, D * m);
        Eigen::Map<Eigen::MatrixXd> tv(out.data(), K, D * m);
        tv.noalias() = Rinv_ * bv;
        const Eigen::RowVectorXd sums = tv.colwise().sum();
        Eigen::Map<const Eigen::MatrixXd> S(sums.data(), D, m);
        const Eigen::MatrixXd corr = G_ * hllt_.solve(S);
        Eigen::Map<const Eigen::RowVectorXd> cflat(corr.data(), D * m);
        tv.noalias() -= w_ * cflat;
        return out;
    }

private:
    Eigen::MatrixXd G_, Rs_, Rinv_;
    Eigen::VectorXd w_;
    double c_ = 0.0;
    Eigen::LLT<Eigen::MatrixXd> hllt_;
    double log_det_ = 0.0;
};

// ---------------------------------------------------------------------------------------------
// Generalised least squares and (restricted) likelihood
// ---------------------------------------------------------------------------------------------

enum class Objective { REML, ML };

enum class ParamKind { Variance, Correlation, Real };

struct ParamInfo {
    std::string name;
    ParamKind kind = ParamKind::Real;
};

inline double to_search(ParamKind kind, double v) {
    switch (kind) {
        case ParamKind::Variance: return std::log(v);
        case ParamKind::Correlation: return std::atanh(std::clamp(v, -0.999999, 0.999999));
        case ParamKind::Real: return v;
    }
    return v;
}

inline double from_search(ParamKind kind, double s) {
    switch (kind) {
        case ParamKind::Variance: return std::exp(std::clamp(s, -40.0, 40.0));
        case ParamKind::Correlation: return std::tanh(s);
        case ParamKind::Real: return s;
    }
    return s;
}

struct GlsEvaluation {
    double objective = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd beta;
    Eigen::MatrixXd cov_beta;  // (X' V^-1 X)^-1
};

/// Log|X'X| for the design, or SingularDesign when X lacks full column rank.
inline double design_log_det(const Eigen::MatrixXd& X) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < X.cols()) throw Error(ErrorCode::SingularDesign, "fixed-effect design is rank deficient");
    return 2.0 * qr.matrixQR().diagonal().head(X.cols()).array().abs().log().sum();
}

/**
 * Profiled Gaussian log-likelihood at fixed covariance. REML includes +1/2 log|X'X|, which
 * makes the objective invariant to full-rank reparameterisations of X.
 */
template <CovarianceOperator Op>
GlsEvaluation evaluate_gls(const Op& V, const Eigen::VectorXd& y, const Eigen::MatrixXd& X, Objective obj,
                           double log_det_xtx) {
    const Eigen::Index n = y.size(), p = X.cols();
    Eigen::MatrixXd rhs(n, p + 1);
    rhs << X, y;
    const Eigen::MatrixXd sol = V.solve(rhs);
    const Eigen::MatrixXd xtvx = X.transpose() * sol.leftCols(p);
    const Eigen::VectorXd xtvy = X.transpose() * sol.col(p);
    const double ytvy = y.dot(sol.col(p));
    GlsEvaluation ev;
    Eigen::LLT<Eigen::MatrixXd> llt(xtvx);
    if (llt.info() != Eigen::Success) return ev;
    ev.beta = llt.solve(xtvy);
    ev.cov_beta = llt.solve(Eigen::MatrixXd::Identity(p, p));
    const double rvr = ytvy - ev.beta.dot(xtvy);
    const double log2pi = std::log(2.0 * std::numbers::pi);
    if (obj == Objective::REML) {
        const double ld_xtvx = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        ev.objective = -0.5 * (static_cast<double>(n - p) * log2pi + V.log_det() + ld_xtvx - log_det_xtx + rvr);
    } else {
        ev.objective = -0.5 * (static_cast<double>(n) * log2pi + V.log_det() + rvr);
    }
    return ev;
}

struct GlsFitOptions {
    int max_iter = 500;
    double rel_tol = 1e-8;
    double xtol = 1e-4;
    double boundary_tol = 1e-3;
};

struct GlsFit {
    Eigen::VectorXd beta;
    Eigen::MatrixXd cov_beta;
    Eigen::VectorXd theta;  // natural scale, ordered as `params`
    std::vector<ParamInfo> params;
    double loglik = -std::numeric_limits<double>::infinity();
    Objective objective = Objective::REML;
    bool converged = false;
    int n_iter = 0;
    std::vector<std::string> warnings;
};

/**
 * @brief Maximises the (restricted) likelihood over covariance parameters.
 *
 * `build` maps a natural-scale parameter vector to a covariance operator and may throw
 * callcast::Error for infeasible points, which the search then rejects. Each start is run
 * through a Nelder-Mead search in log / atanh coordinates and the best optimum is kept.
 * If every start hits the iteration cap the best iterate is returned with
 * converged = false, unless its objective was still moving by more than the tolerance,
 * in which case NonConvergence is thrown.
 */
template <class Builder>
GlsFit fit_gls(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, Builder&& build,
               const std::vector<ParamInfo>& params, const std::vector<Eigen::VectorXd>& starts,
               Objective obj = Objective::REML, const GlsFitOptions& opt = {}) {
    if (X.rows() != y.size()) throw Error(ErrorCode::DimensionMismatch, "design rows must match observations");
    const double ld_xtx = design_log_det(X);
    const auto np = static_cast<Eigen::Index>(params.size());

    auto natural = [&](const Eigen::VectorXd& s) {
        Eigen::VectorXd t(np);
        for (Eigen::Index i = 0; i < np; ++i) t(i) = from_search(params[static_cast<std::size_t>(i)].kind, s(i));
        return t;
    };
    auto objective = [&](const Eigen::VectorXd& s) {
        try {
            const auto op = build(natural(s));
            return -evaluate_gls(op, y, X, obj, ld_xtx).objective;
        } catch (const Error&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    NelderMeadOptions nm;
    nm.max_iter = opt.max_iter;
    nm.ftol = opt.rel_tol;
    nm.xtol = opt.xtol;

    std::optional<NelderMeadResult> best;
    int total_iter = 0;
    bool any_converged = false;
    const std::vector<Eigen::VectorXd> start_list = starts.empty() ? std::vector<Eigen::VectorXd>{Eigen::VectorXd()} : starts;
    for (const auto& t0 : start_list) {
        if (t0.size() != np) throw Error(ErrorCode::DimensionMismatch, "start vector has wrong length");
        Eigen::VectorXd s0(np);
        for (Eigen::Index i = 0; i < np; ++i) s0(i) = to_search(params[static_cast<std::size_t>(i)].kind, t0(i));
        auto r = nelder_mead(objective, s0, nm);
        total_iter += r.iterations;
        // A fresh simplex at the best point escapes slow crawls along flat ridges.
        if (!r.converged && std::isfinite(r.f)) {
            auto again = nelder_mead(objective, r.x, nm);
            total_iter += again.iterations;
            if (std::isfinite(again.f) && again.f <= r.f) r = again;
        }
        if (!std::isfinite(r.f)) continue;
        if (!best || r.f < best->f) best = r;
        any_converged = any_converged || r.converged;
    }
    if (!best) throw Error(ErrorCode::NotPositiveDefinite, "no feasible starting point");

    GlsFit fit;
    fit.params = params;
    fit.theta = natural(best->x);
    fit.objective = obj;
    fit.n_iter = total_iter;
    fit.converged = best->converged;
    if (!fit.converged && !any_converged && best->recent_change > opt.rel_tol)
        throw Error(ErrorCode::NonConvergence, "iteration cap reached while the objective was still improving");
    const auto op = build(fit.theta);
    const auto ev = evaluate_gls(op, y, X, obj, ld_xtx);
    if (!ev.beta.size()) throw Error(ErrorCode::SingularDesign, "X' V^-1 X is singular at the optimum");
    fit.beta = ev.beta;
    fit.cov_beta = ev.cov_beta;
    fit.loglik = ev.objective;
    for (Eigen::Index i = 0; i < np; ++i)
        if (params[static_cast<std::size_t>(i)].kind == ParamKind::Correlation &&
            1.0 - std::abs(fit.theta(i)) < opt.boundary_tol)
            fit.warnings.push_back("BoundaryWarning: " + params[static_cast<std::size_t>(i)].name + " = " +
                                   std::to_string(fit.theta(i)));
    return fit;
}

// ---------------------------------------------------------------------------------------------
// Conditional Gaussian prediction
// ---------------------------------------------------------------------------------------------

struct ConditionalPrediction {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/**
 * Universal-kriging style prediction of future observations y_f given past y:
 * mean = X_f b + C V^{-1} (y - X b),
 * cov  = S_ff - C V^{-1} C' + B' cov(b) B  with  B = X_f' - X' V^{-1} C'.
 * `C` is cov(y_f, y) and `S_ff` is var(y_f).
 */
template <CovarianceOperator Op>
ConditionalPrediction conditional_predict(const Op& V, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                          const Eigen::VectorXd& beta, const Eigen::MatrixXd& cov_beta,
                                          const Eigen::MatrixXd& C, const Eigen::MatrixXd& S_ff,
                                          const Eigen::MatrixXd& X_f, bool include_fixed_effect_variance = true) {
    const Eigen::MatrixXd vic = V.solve(C.transpose());
    const Eigen::VectorXd resid = y - X * beta;
    ConditionalPrediction out;
    out.mean = X_f * beta + vic.transpose() * resid;
    out.cov = S_ff - C * vic;
    if (include_fixed_effect_variance) {
        const Eigen::MatrixXd B = X_f.transpose() - X.transpose() * vic;
        out.cov += B.transpose() * cov_beta * B;
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Mixed-model parameters, fits, and forecasts
// ---------------------------------------------------------------------------------------------

struct CovarianceParams {
    double sigma_G2 = 0.0;
    double rho_G = 0.0;
    double sigma_R2 = 0.0;
    double rho_R = 0.0;
    std::optional<double> delta;
    double sigma2 = kTheoreticalSigma2;
    std::optional<double> u;
};

struct FittedMixedModel {
    Eigen::VectorXd beta;
    Eigen::MatrixXd cov_beta;
    CovarianceParams theta;
    double loglik = 0.0;
    Objective objective = Objective::REML;
    FixedEffectsSpec fx;
    CovarianceSpec cov;
    DesignLayout layout;
    bool converged = false;
    int n_iter = 0;
    std::vector<std::string> warnings;
};

/// Within-day covariance R (without the sigma2 nugget).
inline Eigen::MatrixXd intra_day_covariance(const CovarianceSpec& spec, const CovarianceParams& p, Eigen::Index K) {
    switch (spec.intra) {
        case IntraStructure::AR1: return ar1_kernel(p.sigma_R2, p.rho_R, unit_gaps(K));
        case IntraStructure::ARMA11: return arma11_kernel(p.sigma_R2, p.delta.value_or(p.rho_R), p.rho_R, K);
        case IntraStructure::Independent:
            return p.sigma_R2 > 0.0 ? Eigen::MatrixXd(p.sigma_R2 * Eigen::MatrixXd::Identity(K, K))
                                    : Eigen::MatrixXd(Eigen::MatrixXd::Zero(K, K));
    }
    return Eigen::MatrixXd::Zero(K, K);
}

/// Between-day covariance over true calendar gaps; zero when there is no day effect.
inline Eigen::MatrixXd inter_day_covariance(const CovarianceSpec& spec, const CovarianceParams& p,
                                            std::span<const CalendarDay> days) {
    const auto n = static_cast<Eigen::Index>(days.size());
    if (spec.inter == InterStructure::None || p.sigma_G2 <= 0.0) return Eigen::MatrixXd::Zero(n, n);
    return ar1_kernel(p.sigma_G2, p.rho_G, gap_matrix(days));
}

/// Cross-covariance of day effects between `a` days (rows) and `b` days (columns).
inline Eigen::MatrixXd inter_day_cross(const CovarianceSpec& spec, const CovarianceParams& p,
                                       std::span<const CalendarDay> a, std::span<const CalendarDay> b) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
    if (spec.inter == InterStructure::None || p.sigma_G2 <= 0.0) return out;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                p.sigma_G2 * std::pow(p.rho_G, static_cast<double>(true_date_gap(a[i], b[j])));
    return out;
}

struct ForecastRow {
    Date date{};
    int period = 0;  // 1-based
    double point = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double point_transformed = 0.0;
    double sd_transformed = 0.0;

    bool operator==(const ForecastRow&) const = default;
};

struct ForecastSet {
    std::vector<ForecastRow> rows;

    std::vector<ForecastRow> for_day(Date d) const {
        std::vector<ForecastRow> out;
        for (const auto& r : rows)
            if (r.date == d) out.push_back(r);
        return out;
    }
};

inline double normal_quantile_two_sided(double level) {
    if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::LevelOutOfRange, "coverage level must lie in (0, 1)");
    return boost::math::quantile(boost::math::normal(), 0.5 + 0.5 * level);
}

/// Maps transformed-scale means and standard deviations to count-scale points and intervals.
inline ForecastSet make_forecast_set(std::span<const CalendarDay> days, int K, const Eigen::VectorXd& mean,
                                     const Eigen::VectorXd& sd, double level) {
    const double z = normal_quantile_two_sided(level);
    ForecastSet fs;
    for (std::size_t d = 0; d < days.size(); ++d)
        for (int k = 0; k < K; ++k) {
            const auto i = static_cast<Eigen::Index>(d) * K + k;
            ForecastRow r;
            r.date = days[d].date;
            r.period = k + 1;
            r.point_transformed = mean(i);
            r.sd_transformed = sd(i);
            r.point = inverse_transform(mean(i));
            const double lo = mean(i) - z * sd(i), hi = mean(i) + z * sd(i);
            // The inverse transform is increasing only on [0, inf).
            r.lower = lo <= 0.0 ? 0.0 : inverse_transform(lo);
            r.upper = inverse_transform(hi);
            r.lower = std::min(r.lower, r.point);
            r.upper = std::max(r.upper, r.point);
            fs.rows.push_back(r);
        }
    return fs;
}

/// Transformed observations, day-major.
inline Eigen::VectorXd transformed_vector(const PeriodSeries& s) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(s.num_days()) * s.K);
    for (std::size_t d = 0; d < s.num_days(); ++d)
        for (int k = 0; k < s.K; ++k)
            y(static_cast<Eigen::Index>(d) * s.K + k) =
                root_transform(static_cast<double>(s.counts(d, static_cast<std::size_t>(k))));
    return y;
}

/**
 * @brief Conditional-mean (BLUP) forecasts for future days from a fitted mixed model.
 *
 * Past and future days share one covariance built from the fitted parameters with true-date
 * gaps; prediction variance includes the fixed-effect estimation term.
 */
inline ForecastSet predict_blup(const FittedMixedModel& fit, const PeriodSeries& past,
                                std::span<const CalendarDay> future, double level = 0.95) {
    const int K = past.K;
    const Eigen::MatrixXd X = design_for_days(fit.layout, past.days);
    const Eigen::MatrixXd X_f = design_for_days(fit.layout, future);
    const Eigen::VectorXd y = transformed_vector(past);
    normal_quantile_two_sided(level);

    Eigen::MatrixXd R_star;
    std::optional<DayBlockCovariance> op;
    try {
        R_star = intra_day_covariance(fit.cov, fit.theta, K);
        R_star.diagonal().array() += fit.theta.sigma2;
        op.emplace(inter_day_covariance(fit.cov, fit.theta, past.days), R_star);
    } catch (const Error& e) {
        throw Error(ErrorCode::CovarianceNotPD, e.what());
    }
    const Eigen::MatrixXd g_fp = inter_day_cross(fit.cov, fit.theta, future, past.days);
    const Eigen::MatrixXd g_ff = inter_day_cross(fit.cov, fit.theta, future, future);
    const Eigen::Index F = static_cast<Eigen::Index>(future.size()), D = static_cast<Eigen::Index>(past.num_days());
    Eigen::MatrixXd C(F * K, D * K), S(F * K, F * K);
    for (Eigen::Index f = 0; f < F; ++f) {
        for (Eigen::Index d = 0; d < D; ++d) C.block(f * K, d * K, K, K).setConstant(g_fp(f, d));
        for (Eigen::Index e = 0; e < F; ++e) {
            S.block(f * K, e * K, K, K).setConstant(g_ff(f, e));
            if (e == f) S.block(f * K, e * K, K, K) += R_star;
        }
    }
    const auto pred = conditional_predict(*op, X, y, fit.beta, fit.cov_beta, C, S, X_f);
    const Eigen::VectorXd sd = pred.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    return make_forecast_set(future, K, pred.mean, sd, level);
}

inline void write_forecast_csv(const ForecastSet& fs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path);
    out << "date,period,point,lower,upper\n";
    for (const auto& r : fs.rows)
        out << format_date(r.date) << ',' << r.period << ',' << csv::format_double(r.point) << ','
            << csv::format_double(r.lower) << ',' << csv::format_double(r.upper) << '\n';
}

inline ForecastSet read_forecast_csv(const std::string& path) {
    const auto t = csv::read_table(path);
    const auto cd = t.require_column("date"), cp = t.require_column("period"), cpt = t.require_column("point"),
               cl = t.require_column("lower"), cu = t.require_column("upper");
    ForecastSet fs;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto where = t.path + ":" + std::to_string(t.line_numbers[r]);
        auto d = parse_date(t.rows[r][cd]);
        auto p = csv::parse_int(t.rows[r][cp]);
        auto pt = csv::parse_double(t.rows[r][cpt]);
        auto lo = csv::parse_double(t.rows[r][cl]);
        auto hi = csv::parse_double(t.rows[r][cu]);
        if (!d || !p || !pt || !lo || !hi) throw Error(ErrorCode::MalformedRow, where + ": bad forecast row");
        ForecastRow row;
        row.date = *d;
        row.period = static_cast<int>(*p);
        row.point = *pt;
        row.lower = *lo;
        row.upper = *hi;
        row.point_transformed = root_transform(*pt);
        fs.rows.push_back(row);
    }
    return fs;
}

}  // namespace callcast
