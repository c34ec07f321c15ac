#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "callcast/dataio.hpp"
#include "callcast/error.hpp"

namespace callcast {

enum class PatternMode { ThreePattern, MultiPattern };
enum class IntraStructure { AR1, ARMA11, Independent };
enum class InterStructure { AR1, None };
enum class Sigma2Mode { Fixed, Estimated };

inline constexpr double kTheoreticalSigma2 = 0.25;

/**
 * @brief Which fixed effects enter the regression.
 *
 * ThreePattern shares intra-day profiles across weekday groups {Sun}, {Mon..Thu}, {Fri};
 * MultiPattern gives each weekday its own profile. Exogenous columns are named
 * `delivery_<c>`, `billing_<c>` for c in {1,7,14,21}, or `global_delivery`
 * (the OR of the four delivery flags).
 */
struct FixedEffectsSpec {
    PatternMode pattern = PatternMode::ThreePattern;
    std::vector<std::string> exogenous;
    bool include_weekday_levels = true;
};

struct CovarianceSpec {
    IntraStructure intra = IntraStructure::AR1;
    InterStructure inter = InterStructure::AR1;
    Sigma2Mode sigma2_mode = Sigma2Mode::Fixed;
    double sigma2_fixed = kTheoreticalSigma2;
};

inline int pattern_count(PatternMode mode) { return mode == PatternMode::ThreePattern ? 3 : 6; }

inline int pattern_group(PatternMode mode, int weekday) {
    if (mode == PatternMode::MultiPattern) return weekday - 1;
    if (weekday == 1) return 0;
    if (weekday == 6) return 2;
    return 1;
}

inline bool is_known_exogenous(std::string_view name) {
    if (name == "global_delivery") return true;
    for (int c : kCycles)
        if (name == "delivery_" + std::to_string(c) || name == "billing_" + std::to_string(c)) return true;
    return false;
}

inline double exogenous_value(const CalendarDay& day, std::string_view name) {
    if (name == "global_delivery") {
        for (bool f : day.delivery)
            if (f) return 1.0;
        return 0.0;
    }
    for (std::size_t j = 0; j < kCycles.size(); ++j) {
        if (name == "delivery_" + std::to_string(kCycles[j])) return day.delivery[j] ? 1.0 : 0.0;
        if (name == "billing_" + std::to_string(kCycles[j])) return day.billing[j] ? 1.0 : 0.0;
    }
    throw Error(ErrorCode::InvalidConfig, "unknown exogenous column '" + std::string(name) + "'");
}

/**
 * Greedy left-to-right rank selection: a column is kept iff it is not in the span of
 * the columns kept before it. Later-listed columns are therefore dropped first.
 */
inline std::vector<Eigen::Index> independent_columns(const Eigen::MatrixXd& M, double tol = 1e-8) {
    std::vector<Eigen::Index> kept;
    Eigen::MatrixXd basis(M.rows(), 0);
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
        Eigen::VectorXd v = M.col(j);
        const double norm0 = v.norm();
        if (norm0 == 0.0) continue;
        for (int pass = 0; pass < 2; ++pass)
            for (Eigen::Index b = 0; b < basis.cols(); ++b) v -= basis.col(b).dot(v) * basis.col(b);
        const double nr = v.norm();
        if (nr > tol * norm0) {
            basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
            basis.col(basis.cols() - 1) = v / nr;
            kept.push_back(j);
        }
    }
    return kept;
}

/// True when every column of `inner` lies in the column span of `outer`.
inline bool span_contains(const Eigen::MatrixXd& outer, const Eigen::MatrixXd& inner, double tol = 1e-8) {
    if (outer.rows() != inner.rows()) return false;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(outer);
    for (Eigen::Index j = 0; j < inner.cols(); ++j) {
        const Eigen::VectorXd v = inner.col(j);
        const Eigen::VectorXd fit = outer * qr.solve(v);
        if ((v - fit).norm() > tol * std::max(1.0, v.norm())) return false;
    }
    return true;
}

/// Column bookkeeping shared by the learning window and any future days.
struct DesignLayout {
    FixedEffectsSpec fx;
    int K = 0;
    std::vector<std::string> day_columns;     // all candidate day-level columns
    std::vector<std::string> period_columns;  // all candidate period-level columns
    std::vector<Eigen::Index> kept_day;
    std::vector<Eigen::Index> kept_period;
    std::vector<std::string> dropped;

    Eigen::Index num_kept() const { return static_cast<Eigen::Index>(kept_day.size() + kept_period.size()); }

    std::vector<std::string> kept_names() const {
        std::vector<std::string> out;
        for (auto j : kept_day) out.push_back(day_columns[static_cast<std::size_t>(j)]);
        for (auto j : kept_period) out.push_back(period_columns[static_cast<std::size_t>(j)]);
        return out;
    }
};

struct DesignBundle {
    Eigen::MatrixXd X_D;  // DK x (day-level kept columns)
    Eigen::MatrixXd X_P;  // DK x (period-level kept columns)
    Eigen::MatrixXd Z;    // DK x D, I_D (x) 1_K
    std::vector<std::pair<int, int>> row_index;  // row -> (day, period), zero-based
    DesignLayout layout;

    Eigen::MatrixXd X() const {
        Eigen::MatrixXd out(X_D.rows(), X_D.cols() + X_P.cols());
        out << X_D, X_P;
        return out;
    }
    Eigen::Index rank() const { return X_D.cols() + X_P.cols(); }
};

namespace detail {

inline DesignLayout make_layout(const FixedEffectsSpec& fx, int K) {
    DesignLayout L;
    L.fx = fx;
    L.K = K;
    if (fx.include_weekday_levels)
        for (auto* name : kWeekdayNames) L.day_columns.emplace_back(std::string("W_") + name);
    for (const auto& e : fx.exogenous) {
        if (!is_known_exogenous(e)) throw Error(ErrorCode::InvalidConfig, "unknown exogenous column '" + e + "'");
        L.day_columns.push_back(e);
    }
    const int groups = pattern_count(fx.pattern);
    static constexpr std::array<const char*, 3> three = {"Sun", "MonThu", "Fri"};
    for (int g = 0; g < groups; ++g)
        for (int k = 0; k < K; ++k) {
            std::string gname = fx.pattern == PatternMode::ThreePattern ? three[static_cast<std::size_t>(g)]
                                                                         : kWeekdayNames[static_cast<std::size_t>(g)];
            L.period_columns.push_back("P_" + gname + "_" + std::to_string(k + 1));
        }
    return L;
}

inline Eigen::RowVectorXd full_day_row(const DesignLayout& L, const CalendarDay& day) {
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(L.day_columns.size()));
    Eigen::Index c = 0;
    if (L.fx.include_weekday_levels) {
        r(day.weekday - 1) = 1.0;
        c = 6;
    }
    for (const auto& e : L.fx.exogenous) r(c++) = exogenous_value(day, e);
    return r;
}

}  // namespace detail

/// Day-level rows [W, F_D] restricted to the layout's kept day columns (one row per day).
inline Eigen::MatrixXd day_level_design(const DesignLayout& L, std::span<const CalendarDay> days) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(days.size()), static_cast<Eigen::Index>(L.kept_day.size()));
    for (std::size_t d = 0; d < days.size(); ++d) {
        const auto full = detail::full_day_row(L, days[d]);
        for (std::size_t j = 0; j < L.kept_day.size(); ++j)
            out(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(j)) = full(L.kept_day[j]);
    }
    return out;
}

/// Combined [X_D | X_P] rows (day-major, period-minor) for arbitrary days under a fixed layout.
inline Eigen::MatrixXd design_for_days(const DesignLayout& L, std::span<const CalendarDay> days) {
    const Eigen::Index K = L.K;
    const Eigen::Index nd = static_cast<Eigen::Index>(L.kept_day.size());
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(days.size()) * K, L.num_kept());
    std::vector<Eigen::Index> period_pos(L.period_columns.size(), -1);
    for (std::size_t j = 0; j < L.kept_period.size(); ++j)
        period_pos[static_cast<std::size_t>(L.kept_period[j])] = nd + static_cast<Eigen::Index>(j);
    for (std::size_t d = 0; d < days.size(); ++d) {
        const auto full = detail::full_day_row(L, days[d]);
        const int g = pattern_group(L.fx.pattern, days[d].weekday);
        for (Eigen::Index k = 0; k < K; ++k) {
            const Eigen::Index row = static_cast<Eigen::Index>(d) * K + k;
            for (Eigen::Index j = 0; j < nd; ++j) X(row, j) = full(L.kept_day[static_cast<std::size_t>(j)]);
            const auto pcol = period_pos[static_cast<std::size_t>(g * K + k)];
            if (pcol >= 0) X(row, pcol) = 1.0;
        }
    }
    return X;
}

/**
 * @brief Builds X_D = [W, F_D] (x) 1_K, X_P (pattern profiles) and Z = I_D (x) 1_K.
 *
 * Aliased columns are detected on the combined [X_D | X_P] matrix and dropped by the
 * greedy left-to-right rule; the drops are recorded in the layout.
 */
inline DesignBundle build_designs(std::span<const CalendarDay> days, int K, const FixedEffectsSpec& fx) {
    if (days.empty() || K <= 0) throw Error(ErrorCode::EmptySeries, "cannot build designs for an empty series");
    DesignLayout L = detail::make_layout(fx, K);
    const Eigen::Index D = static_cast<Eigen::Index>(days.size());
    const Eigen::Index nday = static_cast<Eigen::Index>(L.day_columns.size());
    const Eigen::Index nper = static_cast<Eigen::Index>(L.period_columns.size());

    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(D * K, nday + nper);
    for (Eigen::Index d = 0; d < D; ++d) {
        const auto& day = days[static_cast<std::size_t>(d)];
        const auto r = detail::full_day_row(L, day);
        const int g = pattern_group(fx.pattern, day.weekday);
        for (Eigen::Index k = 0; k < K; ++k) {
            full.block(d * K + k, 0, 1, nday) = r;
            full(d * K + k, nday + g * K + k) = 1.0;
        }
    }
    const auto kept = independent_columns(full);
    if (kept.empty()) throw Error(ErrorCode::AllAliased, "no identifiable fixed effects");
    std::vector<bool> is_kept(static_cast<std::size_t>(nday + nper), false);
    for (auto j : kept) {
        is_kept[static_cast<std::size_t>(j)] = true;
        if (j < nday)
            L.kept_day.push_back(j);
        else
            L.kept_period.push_back(j - nday);
    }
    for (Eigen::Index j = 0; j < nday + nper; ++j)
        if (!is_kept[static_cast<std::size_t>(j)])
            L.dropped.push_back(j < nday ? L.day_columns[static_cast<std::size_t>(j)]
                                         : L.period_columns[static_cast<std::size_t>(j - nday)]);

    DesignBundle b;
    b.X_D.resize(D * K, static_cast<Eigen::Index>(L.kept_day.size()));
    b.X_P.resize(D * K, static_cast<Eigen::Index>(L.kept_period.size()));
    for (std::size_t j = 0; j < L.kept_day.size(); ++j) b.X_D.col(static_cast<Eigen::Index>(j)) = full.col(L.kept_day[j]);
    for (std::size_t j = 0; j < L.kept_period.size(); ++j)
        b.X_P.col(static_cast<Eigen::Index>(j)) = full.col(nday + L.kept_period[j]);
    b.Z = Eigen::MatrixXd::Zero(D * K, D);
    for (Eigen::Index d = 0; d < D; ++d) {
        b.Z.block(d * K, d, K, 1).setOnes();
        for (Eigen::Index k = 0; k < K; ++k) b.row_index.emplace_back(static_cast<int>(d), static_cast<int>(k));
    }
    b.layout = std::move(L);
    return b;
}

inline DesignBundle build_designs(const PeriodSeries& series, const FixedEffectsSpec& fx) {
    return build_designs(std::span<const CalendarDay>(series.days), series.K, fx);
}

/// Pairwise true calendar-day distances.
inline Eigen::MatrixXd gap_matrix(std::span<const CalendarDay> days) {
    const Eigen::Index n = static_cast<Eigen::Index>(days.size());
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            g(i, j) = static_cast<double>(
                true_date_gap(days[static_cast<std::size_t>(i)], days[static_cast<std::size_t>(j)]));
    return g;
}

/// |i - j| for i, j in 0..K-1.
inline Eigen::MatrixXd unit_gaps(Eigen::Index K) {
    Eigen::MatrixXd g(K, K);
    for (Eigen::Index i = 0; i < K; ++i)
        for (Eigen::Index j = 0; j < K; ++j) g(i, j) = static_cast<double>(i > j ? i - j : j - i);
    return g;
}

inline void check_variance(double sigma2, const char* what) {
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
        throw Error(ErrorCode::DomainError, std::string(what) + " must be positive");
}

inline void check_correlation(double rho, const char* what) {
    if (!(rho > -1.0 && rho < 1.0)) throw Error(ErrorCode::DomainError, std::string(what) + " must lie in (-1, 1)");
}

/// sigma2 * rho^gap(i,j). Gaps are integer distances (unit periods or true calendar days).
inline Eigen::MatrixXd ar1_kernel(double sigma2, double rho, const Eigen::MatrixXd& gaps) {
    check_variance(sigma2, "AR(1) variance");
    check_correlation(rho, "AR(1) correlation");
    if (gaps.rows() != gaps.cols()) throw Error(ErrorCode::DimensionMismatch, "gap grid must be square");
    Eigen::MatrixXd out(gaps.rows(), gaps.cols());
    for (Eigen::Index i = 0; i < gaps.rows(); ++i)
        for (Eigen::Index j = 0; j < gaps.cols(); ++j) out(i, j) = sigma2 * std::pow(rho, gaps(i, j));
    return out;
}

/// Diagonal sigma2; lag h >= 1 covariance sigma2 * delta * rho^(h-1). Positive definiteness is
/// verified by Cholesky factorisation.
inline Eigen::MatrixXd arma11_kernel(double sigma2, double delta, double rho, Eigen::Index K) {
    check_variance(sigma2, "ARMA(1,1) variance");
    check_correlation(rho, "ARMA(1,1) correlation");
    Eigen::MatrixXd out(K, K);
    for (Eigen::Index i = 0; i < K; ++i)
        for (Eigen::Index j = 0; j < K; ++j) {
            const Eigen::Index h = i > j ? i - j : j - i;
            out(i, j) = h == 0 ? sigma2 : sigma2 * delta * std::pow(rho, static_cast<double>(h - 1));
        }
    Eigen::LLT<Eigen::MatrixXd> llt(out);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::NotPositiveDefinite, "ARMA(1,1) kernel is not PD");
    return out;
}

/// V = G (x) J_K + I_D (x) R + sigma2 I.
inline Eigen::MatrixXd assemble_V(const Eigen::MatrixXd& G, const Eigen::MatrixXd& R, double sigma2) {
    if (G.rows() != G.cols() || R.rows() != R.cols())
        throw Error(ErrorCode::DimensionMismatch, "G and R must be square");
    const Eigen::Index D = G.rows(), K = R.rows();
    Eigen::MatrixXd V(D * K, D * K);
    for (Eigen::Index d = 0; d < D; ++d)
        for (Eigen::Index e = 0; e < D; ++e) {
            auto block = V.block(d * K, e * K, K, K);
            block.setConstant(G(d, e));
            if (d == e) {
                block += R;
                block.diagonal().array() += sigma2;
            }
        }
    return V;
}

/// Variance of a day's period-average noise: (1/K) * ((1/K) 1'R1 + sigma2).
inline double aggregate_noise(const Eigen::MatrixXd& R, double sigma2) {
    const double K = static_cast<double>(R.rows());
    return (R.sum() / K + sigma2) / K;
}

}  // namespace callcast
