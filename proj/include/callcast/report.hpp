#pragma once

#include <cmath>
#include <fstream>
#include <string>

#include "json.hpp"

#include "callcast/forecaster.hpp"
#include "callcast/gausslik.hpp"
#include "callcast/harness.hpp"
#include "callcast/poisscreen.hpp"
#include "callcast/staffing.hpp"

namespace callcast {

using Json = nlohmann::ordered_json;

/// NaN and infinities become null.
inline Json json_number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json to_json(const ContrastResult& c) {
    return Json{{"statistic", c.statistic},
                {"df", c.df},
                {"p_value", c.p_value},
                {"f_statistic", c.f_statistic},
                {"df_denominator", c.df_denominator},
                {"f_p_value", c.f_p_value},
                {"nested", c.nested}};
}

inline Json to_json(const GlmFit& fit) {
    Json coefs = Json::array();
    for (const auto& c : fit.coefficients)
        coefs.push_back({{"name", c.name},
                         {"estimate", c.estimate},
                         {"std_error", c.std_error},
                         {"chi_square", c.chi_square},
                         {"p_value", c.p_value}});
    return Json{{"coefficients", coefs},
                {"dropped", fit.dropped},
                {"deviance", fit.deviance},
                {"n_obs", fit.n_obs()},
                {"iterations", fit.iterations}};
}

inline Json to_json(const ScreeningReport& rep) {
    Json contrasts = Json::array();
    for (const auto& c : rep.contrasts) {
        Json j = to_json(c.result);
        j["alternative"] = c.label;
        j["reduced_columns"] = c.reduced_columns;
        contrasts.push_back(j);
    }
    Json cols = Json::array();
    for (const auto& c : rep.columns) {
        Json j = to_json(c.drop_contrast);
        j["column"] = c.column;
        j["droppable"] = c.droppable;
        cols.push_back(j);
    }
    return Json{{"threshold", rep.threshold}, {"initial_model", to_json(rep.initial)}, {"contrasts", contrasts}, {"columns", cols}};
}

inline Json to_json(const CovarianceParams& p) {
    Json j{{"sigma_G2", p.sigma_G2}, {"rho_G", p.rho_G}, {"sigma_R2", p.sigma_R2}, {"rho_R", p.rho_R}};
    j["delta"] = p.delta ? Json(*p.delta) : Json(nullptr);
    j["sigma2"] = p.sigma2;
    j["u"] = p.u ? Json(*p.u) : Json(nullptr);
    return j;
}

inline const char* to_string(PatternMode m) { return m == PatternMode::ThreePattern ? "three" : "multi"; }
inline const char* to_string(IntraStructure s) {
    switch (s) {
        case IntraStructure::AR1: return "ar1";
        case IntraStructure::ARMA11: return "arma11";
        case IntraStructure::Independent: return "indep";
    }
    return "unknown";
}
inline const char* to_string(InterStructure s) { return s == InterStructure::AR1 ? "ar1" : "none"; }
inline const char* to_string(Sigma2Mode m) { return m == Sigma2Mode::Fixed ? "fixed" : "estimate"; }

inline Json to_json(const ModelSpec& s) {
    return Json{{"model", to_string(s.pipeline)},
                {"pattern", to_string(s.fx.pattern)},
                {"exogenous", s.fx.exogenous},
                {"intra", to_string(s.cov.intra)},
                {"inter", to_string(s.cov.inter)},
                {"sigma2", to_string(s.cov.sigma2_mode)},
                {"learn_days", s.learn_window_days},
                {"lead", s.lead_time_days},
                {"horizon", s.horizon_days},
                {"level", s.level}};
}

inline Json to_json(const FittedMixedModel& fit) {
    Json beta = Json::object();
    const auto names = fit.layout.kept_names();
    for (std::size_t j = 0; j < names.size(); ++j) {
        Json b{{"estimate", fit.beta(static_cast<Eigen::Index>(j))},
               {"std_error", std::sqrt(fit.cov_beta(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)))}};
        beta[names[j]] = b;
    }
    return Json{{"theta", to_json(fit.theta)},
                {"loglik", fit.loglik},
                {"objective", fit.objective == Objective::REML ? "REML" : "ML"},
                {"converged", fit.converged},
                {"n_iter", fit.n_iter},
                {"warnings", fit.warnings},
                {"dropped_columns", fit.layout.dropped},
                {"beta", beta}};
}

inline Json to_json(const BenchmarkFit& bf) {
    Json beta = Json::object();
    const auto names = bf.layout.kept_names();
    for (std::size_t j = 0; j < names.size(); ++j) beta[names[j]] = bf.beta(static_cast<Eigen::Index>(j));
    return Json{{"benchmark", bf.which}, {"residual_variance", bf.s2}, {"n_obs", bf.n_obs}, {"dropped_columns", bf.layout.dropped}, {"beta", beta}};
}

inline Json to_json(const ServiceModelFit& f) {
    Json coefs = Json::object();
    for (std::size_t j = 0; j < f.names.size(); ++j) coefs[f.names[j]] = f.coefficients(static_cast<Eigen::Index>(j));
    return Json{{"model_id", f.model_id},
                {"n_params", f.n_params},
                {"error_ss", f.error_ss},
                {"n_obs", f.n_obs},
                {"weighted", f.weighted},
                {"dropped", f.dropped},
                {"coefficients", coefs}};
}

inline Json to_json(const ServiceComparison& c) {
    return Json{{"statistic", c.statistic},
                {"df", c.df},
                {"p_value", c.p_value},
                {"scaled_statistic", c.scaled_statistic},
                {"scaled_p_value", c.scaled_p_value}};
}

inline Json to_json(const StaffingReport& rep) {
    Json periods = Json::array();
    for (const auto& p : rep.per_period)
        periods.push_back({{"beta_u", p.beta_u},
                           {"mu_over_theta", p.mu_over_theta},
                           {"period", p.period},
                           {"n", p.n},
                           {"mean_delta_beta", json_number(p.mean_delta_beta)},
                           {"mean_delta_N_approx", json_number(p.mean_delta_N_approx)},
                           {"mean_delta_N_exact", json_number(p.mean_delta_N_exact)},
                           {"ratio_asym_p_wait", json_number(p.ratio_asym_p_wait)},
                           {"ratio_p_wait", json_number(p.ratio_p_wait)},
                           {"ratio_p_abandon", json_number(p.ratio_p_abandon)},
                           {"ratio_e_wait", json_number(p.ratio_e_wait)}});
    return Json{{"cells", rep.rows.size()}, {"skipped_cells", rep.skipped_cells}, {"per_period", periods}};
}

inline Json to_json(const Quartiles& q) {
    return Json{{"n", q.n},
                {"min", json_number(q.min)},
                {"Q1", json_number(q.q1)},
                {"median", json_number(q.median)},
                {"mean", json_number(q.mean)},
                {"Q3", json_number(q.q3)},
                {"max", json_number(q.max)}};
}

inline Json to_json(const EvalSummary& s) {
    Json groups = Json::array();
    for (const auto& g : s.groups) {
        Json m = Json::object();
        for (std::size_t i = 0; i < 4; ++i) m[kMeasureNames[i]] = to_json(g.measures[i]);
        groups.push_back({{"model", g.key.model},
                          {"lead", g.key.lead},
                          {"resolution", g.key.resolution},
                          {"weekday", g.key.weekday ? kWeekdayNames[static_cast<std::size_t>(g.key.weekday - 1)] : "all"},
                          {"scored_days", g.scored_days},
                          {"zero_truth_cells", g.zero_truth_cells},
                          {"measures", m}});
    }
    return Json{{"attempted", s.attempted}, {"failures", s.failures}, {"groups", groups}};
}

inline void write_json(const Json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path);
    out << j.dump(2) << '\n';
}

}  // namespace callcast
