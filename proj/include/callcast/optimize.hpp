#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace callcast {

struct NelderMeadOptions {
    int max_iter = 500;
    double ftol = 1e-8;     // relative spread of objective values over the simplex
    double xtol = 1e-4;     // simplex diameter in the search coordinates
    double initial_step = 0.5;
    int progress_window = 50;
};

struct NelderMeadResult {
    Eigen::VectorXd x;
    double f = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
    /// Relative improvement of the best value over the last `progress_window` iterations.
    double recent_change = 0.0;
};

/// Minimises `f` with the standard simplex moves (reflect 1, expand 2, contract 1/2, shrink 1/2).
/// Non-finite values are treated as +inf, so infeasible points are simply rejected.
template <class F>
NelderMeadResult nelder_mead(F&& f, const Eigen::VectorXd& x0, const NelderMeadOptions& opt = {}) {
    const Eigen::Index n = x0.size();
    auto eval = [&](const Eigen::VectorXd& x) {
        const double v = f(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };
    NelderMeadResult res;
    if (n == 0) {
        res.x = x0;
        res.f = eval(x0);
        res.converged = std::isfinite(res.f);
        return res;
    }

    std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(n + 1), x0);
    std::vector<double> fv(static_cast<std::size_t>(n + 1));
    for (Eigen::Index i = 0; i < n; ++i) pts[static_cast<std::size_t>(i + 1)](i) += opt.initial_step;
    for (std::size_t i = 0; i < pts.size(); ++i) fv[i] = eval(pts[i]);

    std::vector<std::size_t> order(pts.size());
    std::vector<double> best_history;
    for (int it = 0; it < opt.max_iter; ++it) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return fv[a] < fv[b]; });
        const auto lo = order.front(), hi = order.back(), second = order[order.size() - 2];
        best_history.push_back(fv[lo]);
        res.iterations = it;

        double diameter = 0.0;
        for (const auto& p : pts) diameter = std::max(diameter, (p - pts[lo]).cwiseAbs().maxCoeff());
        const double spread = fv[hi] - fv[lo];
        if (std::isfinite(fv[hi]) && spread <= opt.ftol * (std::abs(fv[lo]) + 1e-12) && diameter <= opt.xtol) {
            res.converged = true;
            break;
        }

        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (auto i : order)
            if (i != hi) centroid += pts[i];
        centroid /= static_cast<double>(n);

        const Eigen::VectorXd xr = centroid + (centroid - pts[hi]);
        const double fr = eval(xr);
        if (fr < fv[lo]) {
            const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[hi]);
            const double fe = eval(xe);
            if (fe < fr) {
                pts[hi] = xe;
                fv[hi] = fe;
            } else {
                pts[hi] = xr;
                fv[hi] = fr;
            }
            continue;
        }
        if (fr < fv[second]) {
            pts[hi] = xr;
            fv[hi] = fr;
            continue;
        }
        const bool outside = fr < fv[hi];
        const Eigen::VectorXd xc =
            outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid)) : Eigen::VectorXd(centroid + 0.5 * (pts[hi] - centroid));
        const double fc = eval(xc);
        if (fc < (outside ? fr : fv[hi])) {
            pts[hi] = xc;
            fv[hi] = fc;
            continue;
        }
        for (auto i : order) {
            if (i == lo) continue;
            pts[i] = pts[lo] + 0.5 * (pts[i] - pts[lo]);
            fv[i] = eval(pts[i]);
        }
    }
    const auto best = static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin());
    res.x = pts[best];
    res.f = fv[best];
    if (!res.converged && best_history.size() > static_cast<std::size_t>(opt.progress_window)) {
        const double then = best_history[best_history.size() - 1 - static_cast<std::size_t>(opt.progress_window)];
        res.recent_change = std::isfinite(then) ? std::abs(then - res.f) / (std::abs(res.f) + 1e-12)
                                                : std::numeric_limits<double>::infinity();
    } else if (!res.converged) {
        res.recent_change = std::numeric_limits<double>::infinity();
    }
    return res;
}

}  // namespace callcast
