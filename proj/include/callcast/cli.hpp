#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "callcast/dataio.hpp"
#include "callcast/error.hpp"
#include "callcast/forecaster.hpp"
#include "callcast/harness.hpp"
#include "callcast/parallel.hpp"
#include "callcast/poisscreen.hpp"
#include "callcast/report.hpp"
#include "callcast/staffing.hpp"
#include "callcast/synthlab.hpp"

namespace callcast::cli {

/// Process exit codes.
enum ExitCode : int { kSuccess = 0, kRuntimeFailure = 1, kValidationFailure = 2 };

struct RunOptions {
    // inputs
    std::string arrivals, services, predicted_services, calendar, forecast;
    int period_minutes = 30;
    // model
    std::vector<std::string> models = {"mixed"};
    std::string pattern = "three", intra = "ar1", inter = "ar1", sigma2 = "fixed";
    std::vector<std::string> exogenous;
    int learn_days = 42, lead = 7, horizon = 1;
    double level = 0.95;
    std::string origin, origin_from, origin_to;
    int max_origins = 0;
    // screening
    double threshold = 0.05;
    // staffing
    std::vector<double> betas = {-1.0, 0.0, 1.0};
    std::vector<double> ratios = {0.1, 1.0, 2.0};
    // sweeps
    std::vector<int> leads = {1, 2, 3, 4, 5, 6, 7};
    std::vector<int> factors = {1, 2, 4, 16};
    // generator
    int days = 120, periods = 24;
    std::string start = "2004-01-04";
    double sigma_g2 = 1.0, rho_g = 0.6, sigma_r2 = 0.8, rho_r = 0.5, delta = 0.5, outlier_fraction = 0.0;
    std::string gen_intra = "ar1";
    std::vector<std::string> exogenous_effects;
    // simulator
    double lambda = 1.0, mu = 1.0, theta = 1.0, sim_horizon = 200000.0, warmup = 1000.0;
    int servers = 1;
    // common
    std::string out = "out";
    std::uint64_t seed = 1;
    int workers = 1;
    bool verbose = false;
};

namespace detail {

inline Error invalid(const std::string& what) { return Error(ErrorCode::InvalidConfig, what); }

inline Pipeline parse_pipeline(const std::string& s) {
    if (s == "mixed") return Pipeline::TwoStageMixed;
    if (s == "benchmark1") return Pipeline::Benchmark1;
    if (s == "benchmark2") return Pipeline::Benchmark2;
    if (s == "industry") return Pipeline::Industry;
    throw invalid("unknown model '" + s + "'");
}

inline IntraStructure parse_intra(const std::string& s) {
    if (s == "ar1") return IntraStructure::AR1;
    if (s == "arma11") return IntraStructure::ARMA11;
    if (s == "indep") return IntraStructure::Independent;
    throw invalid("unknown intra-day structure '" + s + "'");
}

inline ModelSpec model_spec(const RunOptions& o, const std::string& model) {
    ModelSpec m;
    m.pipeline = parse_pipeline(model);
    if (o.pattern == "three")
        m.fx.pattern = PatternMode::ThreePattern;
    else if (o.pattern == "multi")
        m.fx.pattern = PatternMode::MultiPattern;
    else
        throw invalid("unknown pattern '" + o.pattern + "'");
    m.fx.exogenous = o.exogenous;
    m.cov.intra = parse_intra(o.intra);
    if (o.inter == "ar1")
        m.cov.inter = InterStructure::AR1;
    else if (o.inter == "none")
        m.cov.inter = InterStructure::None;
    else
        throw invalid("unknown inter-day structure '" + o.inter + "'");
    if (o.sigma2 == "fixed")
        m.cov.sigma2_mode = Sigma2Mode::Fixed;
    else if (o.sigma2 == "estimate")
        m.cov.sigma2_mode = Sigma2Mode::Estimated;
    else
        throw invalid("unknown sigma2 mode '" + o.sigma2 + "'");
    m.learn_window_days = o.learn_days;
    m.lead_time_days = o.lead;
    m.horizon_days = o.horizon;
    m.level = o.level;
    m.validate();
    return m;
}

inline Date require_date_option(const std::string& s, const char* name) {
    auto d = parse_date(s);
    if (!d) throw invalid(std::string("--") + name + " must be an ISO date, got '" + s + "'");
    return *d;
}

inline void require_path(const std::string& p, const char* name) {
    if (p.empty()) throw invalid(std::string("--") + name + " is required");
}

struct Inputs {
    PeriodSeries arrivals;
    std::optional<CalendarTable> calendar;
};

inline Inputs load_inputs(const RunOptions& o, bool need_calendar) {
    require_path(o.arrivals, "arrivals");
    if (need_calendar) require_path(o.calendar, "calendar");
    Inputs in;
    in.arrivals = load_period_series(o.arrivals, {}, o.period_minutes);
    if (!o.calendar.empty()) {
        in.calendar = load_calendar(o.calendar);
        attach_calendar(in.arrivals, *in.calendar);
    }
    return in;
}

inline std::vector<Date> select_origins(const RunOptions& o, const PeriodSeries& data, const ModelSpec& spec) {
    auto all = eligible_origins(data, spec);
    std::vector<Date> out;
    const auto from = o.origin_from.empty() ? std::optional<Date>{} : std::optional<Date>{require_date_option(o.origin_from, "origin-from")};
    const auto to = o.origin_to.empty() ? std::optional<Date>{} : std::optional<Date>{require_date_option(o.origin_to, "origin-to")};
    for (const auto& d : all) {
        if (from && d < *from) continue;
        if (to && *to < d) continue;
        out.push_back(d);
        if (o.max_origins > 0 && static_cast<int>(out.size()) >= o.max_origins) break;
    }
    if (out.empty()) throw Error(ErrorCode::InsufficientHistory, "no origin has a complete learning window");
    return out;
}

inline std::string path_in(const RunOptions& o, const std::string& name) {
    return (std::filesystem::path(o.out) / name).string();
}

/// Config-file keys become tokens for options the command line does not already set.
inline std::vector<std::string> config_tokens(const CLI::App& sub, const Json& cfg, const std::vector<std::string>& argv_rest) {
    if (!cfg.is_object()) throw invalid("config file must hold a JSON object");
    std::vector<std::string> tokens;
    for (const auto& [key, value] : cfg.items()) {
        if (key == "config") throw invalid("config files cannot nest --config");
        const CLI::Option* opt = sub.get_option_no_throw("--" + key);
        if (!opt) throw invalid("unknown config key '" + key + "'");
        bool on_cli = false;
        for (const auto& a : argv_rest)
            if (a == "--" + key || a.rfind("--" + key + "=", 0) == 0) on_cli = true;
        if (on_cli) continue;
        auto scalar = [&](const Json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
        if (value.is_boolean()) {
            if (opt->get_expected_min() != 0) throw invalid("config key '" + key + "' expects a value");
            if (value.get<bool>()) tokens.push_back("--" + key);
        } else if (value.is_array()) {
            tokens.push_back("--" + key);
            for (const auto& v : value) tokens.push_back(scalar(v));
        } else if (value.is_null() || value.is_object()) {
            throw invalid("config key '" + key + "' has an unsupported value");
        } else {
            tokens.push_back("--" + key);
            tokens.push_back(scalar(value));
        }
    }
    return tokens;
}

/// Every option of the subcommand with its resolved value.
inline Json resolved_config(const CLI::App& sub) {
    Json cfg = Json::object();
    for (const CLI::Option* opt : sub.get_options()) {
        const auto name = opt->get_single_name();
        if (name == "help" || name == "config" || name.empty()) continue;
        const auto& res = opt->results();
        if (opt->get_expected_min() == 0) {
            cfg[name] = opt->count() > 0;
        } else if (!res.empty()) {
            cfg[name] = res.size() == 1 ? Json(res.front()) : Json(res);
        } else {
            cfg[name] = opt->get_default_str();
        }
    }
    return cfg;
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------------------------

inline int cmd_screen(const RunOptions& o, std::ostream& log) {
    const auto in = detail::load_inputs(o, true);
    const auto rep = run_screening(in.arrivals, o.threshold);
    write_json(to_json(rep), detail::path_in(o, "screening.json"));
    std::ofstream txt(detail::path_in(o, "screening.txt"));
    txt << format_screening_table(rep);
    if (o.verbose) log << format_screening_table(rep);
    return kSuccess;
}

inline Json service_model_report(const ServiceSeries& s, const RunOptions& o) {
    const auto regular = select_days(s, [](const CalendarDay& d) { return !d.is_outlier; });
    Json models = Json::array();
    std::map<int, ServiceModelFit> fits;
    for (int id : {1, 2, 3}) {
        fits.emplace(id, fit_service_model(id, regular));
        Json j = to_json(fits.at(id));
        j["ape_in_sample"] = service_ape_in_sample(fits.at(id), regular);
        try {
            j["ape_rolling"] = service_ape_rolling(id, s, o.learn_days, o.lead);
        } catch (const Error&) {
            j["ape_rolling"] = nullptr;
        }
        models.push_back(j);
    }
    Json cmp = Json::array();
    for (auto [a, b] : {std::pair{3, 1}, std::pair{1, 2}, std::pair{3, 2}}) {
        Json j = to_json(compare_service_models(fits.at(a), fits.at(b)));
        j["reduced"] = a;
        j["full"] = b;
        cmp.push_back(j);
    }
    return Json{{"models", models}, {"comparisons", cmp}};
}

inline int cmd_fit(const RunOptions& o, std::ostream&) {
    if (o.arrivals.empty() && o.services.empty()) throw detail::invalid("--arrivals or --services is required");
    if (!o.arrivals.empty()) {
        const auto in = detail::load_inputs(o, false);
        const auto spec = detail::model_spec(o, o.models.front());
        PeriodSeries window;
        if (!o.origin.empty()) {
            window = learning_window(in.arrivals, detail::require_date_option(o.origin, "origin"), spec.learn_window_days,
                                     spec.lead_time_days);
        } else {
            window = select_days(in.arrivals, [](const CalendarDay& d) { return !d.is_outlier; });
        }
        if (window.num_days() == 0) throw Error(ErrorCode::InsufficientHistory, "no usable days to fit");
        Json j{{"spec", to_json(spec)}, {"window_days", window.num_days()}};
        switch (spec.pipeline) {
            case Pipeline::TwoStageMixed: j["fit"] = to_json(fit_two_stage(window, spec.fx, spec.cov)); break;
            case Pipeline::Benchmark1: j["fit"] = to_json(fit_benchmark(1, window, spec.fx)); break;
            case Pipeline::Benchmark2: j["fit"] = to_json(fit_benchmark(2, window, spec.fx)); break;
            case Pipeline::Industry: throw detail::invalid("the industry model has no fitted parameters");
        }
        write_json(j, detail::path_in(o, "fit.json"));
    }
    if (!o.services.empty()) {
        auto s = load_service_series(o.services, o.period_minutes);
        if (!o.calendar.empty()) attach_calendar(s, load_calendar(o.calendar));
        write_json(service_model_report(s, o), detail::path_in(o, "service_models.json"));
    }
    return kSuccess;
}

inline int cmd_forecast(const RunOptions& o, std::ostream&) {
    detail::require_path(o.origin, "origin");
    const auto in = detail::load_inputs(o, false);
    const auto spec = detail::model_spec(o, o.models.front());
    const auto origin = detail::require_date_option(o.origin, "origin");
    const auto res = run_pipeline_detailed(spec, in.arrivals, origin, in.calendar ? &*in.calendar : nullptr);
    write_forecast_csv(res.forecasts, detail::path_in(o, "forecast.csv"));
    if (res.mixed) write_json(Json{{"spec", to_json(spec)}, {"fit", to_json(*res.mixed)}}, detail::path_in(o, "fit.json"));
    return kSuccess;
}

inline int cmd_staff(const RunOptions& o, std::ostream&) {
    detail::require_path(o.forecast, "forecast");
    detail::require_path(o.arrivals, "arrivals");
    detail::require_path(o.services, "services");
    const auto fs = read_forecast_csv(o.forecast);
    const auto actual = load_period_series(o.arrivals, {}, o.period_minutes);
    const auto services = load_service_series(o.services, o.period_minutes);
    const auto predicted = o.predicted_services.empty() ? services : load_service_series(o.predicted_services, o.period_minutes);
    StaffingInputs si{&fs, &actual, &predicted, &services, o.betas, o.ratios};
    const auto rep = performance_ratio_report(si);
    write_staffing_csv(rep, detail::path_in(o, "staffing.csv"));
    write_staffing_series_csv(rep, detail::path_in(o, "staffing_series.csv"));
    write_json(to_json(rep), detail::path_in(o, "staffing_periods.json"));
    return kSuccess;
}

inline int write_eval_outputs(const RunOptions& o, const EvalResult& r, bool by_weekday) {
    write_eval_records_csv(r, detail::path_in(o, "eval_records.csv"));
    const auto summary = summarize_eval(r, by_weekday);
    write_eval_summary_csv(summary, detail::path_in(o, "eval_summary.csv"));
    write_json(to_json(summary), detail::path_in(o, "eval_summary.json"));
    write_eval_failures_csv(r, detail::path_in(o, "eval_failures.csv"));
    return r.records.empty() ? kRuntimeFailure : kSuccess;
}

inline int cmd_evaluate(const RunOptions& o, TaskRunner& runner, std::ostream& log) {
    const auto in = detail::load_inputs(o, false);
    std::vector<NamedSpec> specs;
    for (const auto& m : o.models) specs.push_back({m, detail::model_spec(o, m)});
    const auto origins = detail::select_origins(o, in.arrivals, specs.front().spec);
    const auto r = rolling_eval(specs, in.arrivals, origins, runner, in.calendar ? &*in.calendar : nullptr);
    if (o.verbose) log << r.records.size() << " days scored, " << r.failures.size() << " failures\n";
    return write_eval_outputs(o, r, false);
}

inline int cmd_sweep_lead(const RunOptions& o, TaskRunner& runner, std::ostream&) {
    const auto in = detail::load_inputs(o, false);
    const auto spec = detail::model_spec(o, o.models.front());
    auto longest = spec;
    for (int l : o.leads) longest.lead_time_days = std::max(longest.lead_time_days, l);
    const auto origins = detail::select_origins(o, in.arrivals, longest);
    const auto r = lead_time_sweep({o.models.front(), spec}, o.leads, in.arrivals, origins, runner,
                                   in.calendar ? &*in.calendar : nullptr);
    return write_eval_outputs(o, r, true);
}

inline int cmd_sweep_resolution(const RunOptions& o, TaskRunner& runner, std::ostream&) {
    const auto in = detail::load_inputs(o, false);
    const auto spec = detail::model_spec(o, o.models.front());
    const auto origins = detail::select_origins(o, in.arrivals, spec);
    const auto r = resolution_sweep({o.models.front(), spec}, o.factors, in.arrivals, origins, runner,
                                    in.calendar ? &*in.calendar : nullptr);
    return write_eval_outputs(o, r, false);
}

inline int cmd_generate(const RunOptions& o, std::ostream&) {
    GeneratorConfig cfg;
    cfg.D = o.days;
    cfg.K = o.periods;
    cfg.period_minutes = o.period_minutes;
    cfg.start = detail::require_date_option(o.start, "start");
    cfg.sigma_G2 = o.sigma_g2;
    cfg.rho_G = o.rho_g;
    cfg.sigma_R2 = o.sigma_r2;
    cfg.rho_R = o.rho_r;
    cfg.delta = o.delta;
    cfg.intra = detail::parse_intra(o.gen_intra);
    cfg.outlier_fraction = o.outlier_fraction;
    cfg.seed = o.seed;
    for (const auto& e : o.exogenous_effects) {
        const auto eq = e.find('=');
        const auto v = eq == std::string::npos ? std::nullopt : csv::parse_double(e.substr(eq + 1));
        if (!v) throw detail::invalid("--exogenous-effect expects name=value, got '" + e + "'");
        cfg.exogenous_effects[e.substr(0, eq)] = *v;
    }
    const auto g = generate_counts(cfg);
    ServiceGeneratorConfig sc;
    sc.seed = o.seed + 1;
    const auto services = generate_services(sc, g.series);
    write_period_series(g.series, detail::path_in(o, "arrivals.csv"));
    write_calendar(g.series.days, detail::path_in(o, "calendar.csv"));
    write_service_series(services, detail::path_in(o, "services.csv"));
    return kSuccess;
}

inline int cmd_simulate(const RunOptions& o, std::ostream&) {
    const auto sim = simulate_erlang_a(o.lambda, o.mu, o.theta, o.servers, o.sim_horizon, o.warmup, o.seed);
    const auto exact = erlang_a_exact(o.lambda, o.mu, o.theta, o.servers);
    Json j{{"simulation",
            {{"p_wait", sim.p_wait}, {"p_wait_se", sim.p_wait_se}, {"p_abandon", sim.p_abandon},
             {"p_abandon_se", sim.p_abandon_se}, {"e_wait_minutes", sim.e_wait}, {"e_wait_se", sim.e_wait_se},
             {"arrivals", sim.arrivals}, {"served", sim.served}, {"abandoned", sim.abandoned},
             {"in_system_at_end", sim.in_system_at_end}}},
           {"exact", {{"p_wait", exact.p_wait}, {"p_abandon", exact.p_abandon}, {"e_wait_minutes", exact.e_wait}}}};
    write_json(j, detail::path_in(o, "simulation.json"));
    return kSuccess;
}

// ---------------------------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------------------------

inline void add_common(CLI::App& sub, RunOptions& o) {
    sub.add_option("--config", "JSON file of option values (command-line flags take precedence)");
    sub.add_option("--out", o.out, "Output directory");
    sub.add_option("--seed", o.seed, "Random seed");
    sub.add_option("--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber);
    sub.add_flag("--verbose", o.verbose, "Print progress to stderr");
}

inline void add_data(CLI::App& sub, RunOptions& o) {
    sub.add_option("--arrivals", o.arrivals, "Arrival counts CSV (date,period,count)");
    sub.add_option("--calendar", o.calendar, "Calendar CSV with outlier and billing flags");
    sub.add_option("--period-minutes", o.period_minutes, "Minutes per period")->check(CLI::PositiveNumber);
}

inline void add_model(CLI::App& sub, RunOptions& o, bool many_models) {
    auto* m = sub.add_option("--model", o.models, "mixed | benchmark1 | benchmark2 | industry")
                  ->check(CLI::IsMember({"mixed", "benchmark1", "benchmark2", "industry"}));
    if (!many_models) m->expected(1);
    m->delimiter(',');
    sub.add_option("--pattern", o.pattern, "three | multi")->check(CLI::IsMember({"three", "multi"}));
    sub.add_option("--intra", o.intra, "ar1 | arma11 | indep")->check(CLI::IsMember({"ar1", "arma11", "indep"}));
    sub.add_option("--inter", o.inter, "ar1 | none")->check(CLI::IsMember({"ar1", "none"}));
    sub.add_option("--sigma2", o.sigma2, "fixed | estimate")->check(CLI::IsMember({"fixed", "estimate"}));
    sub.add_option("--exogenous", o.exogenous, "Day-level indicator columns")->delimiter(',');
    sub.add_option("--learn-days", o.learn_days, "Learning window in calendar days");
    sub.add_option("--lead", o.lead, "Lead time in days");
    sub.add_option("--horizon", o.horizon, "Forecast horizon in days");
    sub.add_option("--level", o.level, "Interval coverage level");
}

inline void add_origins(CLI::App& sub, RunOptions& o) {
    sub.add_option("--origin-from", o.origin_from, "First origin date");
    sub.add_option("--origin-to", o.origin_to, "Last origin date");
    sub.add_option("--max-origins", o.max_origins, "Cap on the number of origins (0 = all)");
}

/**
 * @brief Parses arguments, runs one command, and returns the process exit code
 * (0 success, 1 runtime failure, 2 validation failure).
 */
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    RunOptions o;
    CLI::App app{"Call-center arrival forecasting and staffing toolkit", "callcast"};
    app.set_version_flag("--version", CALLCAST_VERSION);
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    auto* screen = app.add_subcommand("screen", "Poisson screening of billing and delivery indicators");
    add_common(*screen, o);
    add_data(*screen, o);
    screen->add_option("--threshold", o.threshold, "p-value above which a column is flagged droppable");

    auto* fit = app.add_subcommand("fit", "Fit an arrival model and/or the service-time models");
    add_common(*fit, o);
    add_data(*fit, o);
    add_model(*fit, o, false);
    fit->add_option("--services", o.services, "Service times CSV");
    fit->add_option("--origin", o.origin, "Fit the learning window for this origin date");

    auto* forecast = app.add_subcommand("forecast", "Forecast the horizon starting at an origin date");
    add_common(*forecast, o);
    add_data(*forecast, o);
    add_model(*forecast, o, false);
    forecast->add_option("--origin", o.origin, "First forecast date");

    auto* staff = app.add_subcommand("staff", "Offered load, staffing and Erlang-A performance");
    add_common(*staff, o);
    staff->add_option("--forecast", o.forecast, "Forecast CSV (date,period,point,lower,upper)");
    staff->add_option("--arrivals", o.arrivals, "Realised arrival counts CSV");
    staff->add_option("--services", o.services, "Realised service times CSV");
    staff->add_option("--predicted-services", o.predicted_services, "Predicted service times CSV (default: realised)");
    staff->add_option("--period-minutes", o.period_minutes, "Minutes per period")->check(CLI::PositiveNumber);
    staff->add_option("--beta", o.betas, "Quality parameters")->delimiter(',');
    staff->add_option("--ratio", o.ratios, "mu/theta ratios")->delimiter(',')->check(CLI::PositiveNumber);

    auto* evaluate = app.add_subcommand("evaluate", "Rolling-origin evaluation");
    add_common(*evaluate, o);
    add_data(*evaluate, o);
    add_model(*evaluate, o, true);
    add_origins(*evaluate, o);

    auto* sweep_lead = app.add_subcommand("sweep-lead", "Rolling evaluation over lead times");
    add_common(*sweep_lead, o);
    add_data(*sweep_lead, o);
    add_model(*sweep_lead, o, false);
    add_origins(*sweep_lead, o);
    sweep_lead->add_option("--leads", o.leads, "Lead times")->delimiter(',');

    auto* sweep_res = app.add_subcommand("sweep-resolution", "Rolling evaluation over interval resolutions");
    add_common(*sweep_res, o);
    add_data(*sweep_res, o);
    add_model(*sweep_res, o, false);
    add_origins(*sweep_res, o);
    sweep_res->add_option("--factors", o.factors, "Aggregation factors of the base period")->delimiter(',');

    auto* generate = app.add_subcommand("generate", "Write a synthetic dataset");
    add_common(*generate, o);
    generate->add_option("--days", o.days, "Open days");
    generate->add_option("--periods", o.periods, "Periods per day");
    generate->add_option("--period-minutes", o.period_minutes, "Minutes per period");
    generate->add_option("--start", o.start, "First date");
    generate->add_option("--sigma-g2", o.sigma_g2, "Day-effect variance");
    generate->add_option("--rho-g", o.rho_g, "Day-effect correlation per calendar day");
    generate->add_option("--sigma-r2", o.sigma_r2, "Intra-day variance");
    generate->add_option("--rho-r", o.rho_r, "Intra-day correlation");
    generate->add_option("--delta", o.delta, "ARMA(1,1) lag-one factor");
    generate->add_option("--intra", o.gen_intra, "ar1 | arma11 | indep")->check(CLI::IsMember({"ar1", "arma11", "indep"}));
    generate->add_option("--outlier-fraction", o.outlier_fraction, "Fraction of days marked as outliers");
    generate->add_option("--exogenous-effect", o.exogenous_effects, "name=value effects on the root scale")->delimiter(',');

    auto* simulate = app.add_subcommand("simulate", "Discrete-event Erlang-A simulation");
    add_common(*simulate, o);
    simulate->add_option("--lambda", o.lambda, "Arrival rate per minute")->check(CLI::PositiveNumber);
    simulate->add_option("--mu", o.mu, "Service rate per minute")->check(CLI::PositiveNumber);
    simulate->add_option("--theta", o.theta, "Abandonment rate per minute")->check(CLI::PositiveNumber);
    simulate->add_option("--servers", o.servers, "Number of agents")->check(CLI::PositiveNumber);
    simulate->add_option("--horizon-minutes", o.sim_horizon, "Simulated minutes");
    simulate->add_option("--warmup-minutes", o.warmup, "Discarded initial minutes");

    const auto t0 = std::chrono::steady_clock::now();
    CLI::App* active = nullptr;
    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        // The config file is read before parsing so that its values sit behind explicit flags.
        if (!args.empty()) {
            if (auto* sub = app.get_subcommand_no_throw(args.front())) {
                std::string cfg_path;
                for (std::size_t i = 1; i < args.size(); ++i) {
                    if (args[i] == "--config" && i + 1 < args.size()) cfg_path = args[i + 1];
                    if (args[i].rfind("--config=", 0) == 0) cfg_path = args[i].substr(9);
                }
                if (!cfg_path.empty()) {
                    std::ifstream f(cfg_path);
                    if (!f) throw Error(ErrorCode::MissingFile, "cannot open config file " + cfg_path);
                    Json cfg;
                    try {
                        cfg = Json::parse(f);
                    } catch (const nlohmann::json::exception& e) {
                        throw detail::invalid("config file " + cfg_path + " is not valid JSON: " + e.what());
                    }
                    const std::vector<std::string> rest(args.begin() + 1, args.end());
                    auto tokens = detail::config_tokens(*sub, cfg, rest);
                    args.insert(args.begin() + 1, tokens.begin(), tokens.end());
                }
            }
        }
        std::reverse(args.begin(), args.end());
        app.parse(args);
        for (auto* sub : app.get_subcommands()) active = sub;

        std::filesystem::create_directories(o.out);
        std::unique_ptr<TaskRunner> runner;
        if (o.workers > 1)
            runner = std::make_unique<ThreadPoolRunner>(static_cast<std::size_t>(o.workers));
        else
            runner = std::make_unique<SequentialRunner>();

        const std::string name = active->get_name();
        Json manifest{{"command", name}, {"version", CALLCAST_VERSION}, {"seed", o.seed}, {"config", detail::resolved_config(*active)}};
        write_json(manifest, detail::path_in(o, "manifest.json"));

        int code = kSuccess;
        if (name == "screen") code = cmd_screen(o, err);
        else if (name == "fit") code = cmd_fit(o, err);
        else if (name == "forecast") code = cmd_forecast(o, err);
        else if (name == "staff") code = cmd_staff(o, err);
        else if (name == "evaluate") code = cmd_evaluate(o, *runner, err);
        else if (name == "sweep-lead") code = cmd_sweep_lead(o, *runner, err);
        else if (name == "sweep-resolution") code = cmd_sweep_resolution(o, *runner, err);
        else if (name == "generate") code = cmd_generate(o, err);
        else if (name == "simulate") code = cmd_simulate(o, err);

        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const auto stamp = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        write_json(Json{{"wall_seconds", secs}, {"finished_unix", static_cast<std::int64_t>(stamp)}}, detail::path_in(o, "timing.json"));
        if (o.verbose) out << name << " finished in " << secs << " s\n";
        return code;
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? kSuccess : kValidationFailure;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return is_validation_error(e.code()) ? kValidationFailure : kRuntimeFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeFailure;
    }
}

}  // namespace callcast::cli
