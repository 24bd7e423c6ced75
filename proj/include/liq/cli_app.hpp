#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "liq/calibrate.hpp"
#include "liq/config.hpp"
#include "liq/event_log.hpp"
#include "liq/hjb.hpp"
#include "liq/io.hpp"
#include "liq/model.hpp"
#include "liq/simulator.hpp"

namespace liq::cli {

constexpr const char* kVersion = "0.1.0";

namespace detail {

struct RunContext {
    Config cfg;
    ModelSpec spec;
    std::filesystem::path out;
    Manifest manifest;

    std::string path(const std::string& name) const { return (out / name).string(); }
};

inline RunContext open_run(const std::string& command, const std::string& config_path,
                           const std::string& out_dir) {
    RunContext ctx{Config::parse_file(config_path), {}, out_dir, {}};
    ctx.spec = model_from_config(ctx.cfg);
    for (const std::string& w : validate(ctx.spec)) std::cerr << "warning: " << w << "\n";
    std::filesystem::create_directories(ctx.out);
    ctx.manifest.set("command", command);
    ctx.manifest.set("tool_version", kVersion);
    ctx.manifest.set("config", config_path);
    ctx.manifest.set_hex("config_hash", fnv1a(ctx.cfg.raw_text()));
    return ctx;
}

inline Grid grid_from(const RunContext& ctx, int nt, int nw, int npi) {
    Grid g;
    g.nt = nt > 0 ? nt : static_cast<int>(ctx.cfg.integer_or("grid", "nt", 100));
    g.nw = nw > 0 ? nw : static_cast<int>(ctx.cfg.integer_or("grid", "nw", 100));
    g.npi = npi > 0 ? npi : static_cast<int>(ctx.cfg.integer_or("grid", "npi", 20));
    return g;
}

inline McOptions mc_from(const RunContext& ctx, long paths, long seed, double dt, int workers) {
    McOptions mc;
    mc.paths = paths > 0 ? paths : ctx.cfg.integer_or("mc", "paths", 10000);
    mc.seed = static_cast<std::uint64_t>(seed >= 0 ? seed : ctx.cfg.integer_or("mc", "seed", 1));
    mc.dt_target = dt > 0 ? dt : ctx.cfg.number_or("mc", "dt_target", 5e-4);
    mc.workers = workers;
    return mc;
}

inline void note_grid(Manifest& m, const Grid& g) {
    m.set("grid_nt", g.nt);
    m.set("grid_nw", g.nw);
    m.set("grid_npi", g.npi);
}

inline void note_mc(Manifest& m, const McOptions& mc) {
    m.set("mc_paths", mc.paths);
    m.set("mc_seed", static_cast<long>(mc.seed));
    m.set("mc_dt_target", mc.dt_target);
    m.set("mc_workers", mc.workers);
}

inline ValueField solve_any(const ModelSpec& spec, const Grid& grid) {
    return spec.chain.states == 1 ? solve_deterministic(spec, grid) : solve(spec, grid);
}

inline Policy policy_from_arg(const std::string& arg) {
    if (arg.rfind("constant:", 0) == 0) return Policy::constant(std::stod(arg.substr(9)));
    return make_policy(read_field_cache(arg).field);
}

} // namespace detail

inline int cmd_solve(const std::string& config_path, const std::string& out_dir, int nt, int nw,
                     int npi) {
    auto ctx = detail::open_run("solve", config_path, out_dir);
    const Grid grid = detail::grid_from(ctx, nt, nw, npi);
    detail::note_grid(ctx.manifest, grid);

    if (ctx.cfg.has("experiment", "numax_multiples")) {
        // Sweep of the rate cap, value recorded at (t=0, w0, initial belief).
        const std::vector<double> multiples = ctx.cfg.numbers("experiment", "numax_multiples");
        const std::string csv_path = ctx.path("numax_sweep.csv");
        std::ofstream csv(csv_path);
        csv << "nu_max,value\n";
        const double base = ctx.spec.w0 / ctx.spec.horizon;
        for (double m : multiples) {
            ModelSpec swept = ctx.spec;
            // the cap must strictly exceed w0/T for feasibility
            swept.nu_max = std::max(m * base, base * (1.0 + 1e-12));
            const ValueField field = detail::solve_any(swept, grid);
            const double pi0 = swept.chain.states > 1 ? swept.chain.initial[0] : 0.0;
            csv << format_number(swept.nu_max) << ','
                << format_number(field.value_at(0.0, swept.w0, pi0)) << '\n';
        }
        ctx.manifest.add_output(csv_path);
        ctx.manifest.write_file(ctx.path("manifest.txt"));
        std::cout << "wrote " << csv_path << "\n";
        return 0;
    }

    const ValueField field = detail::solve_any(ctx.spec, grid);
    ctx.manifest.set("effective_dt", field.effective_dt);
    ctx.manifest.set("min_self_weight", field.min_self_weight);
    const double pi0 = ctx.spec.chain.states > 1 ? ctx.spec.chain.initial[0] : 0.0;
    ctx.manifest.set("value_at_start", field.value_at(0.0, ctx.spec.w0, pi0));
    ctx.manifest.set("value_upper_bound", value_upper_bound(ctx.spec) / ctx.spec.s0);

    const std::string csv_path = ctx.path("field.csv");
    {
        std::ofstream csv(csv_path);
        write_field_csv(csv, field);
    }
    const std::string bin_path = ctx.path("field.bin");
    write_field_cache(bin_path, field, spec_grid_digest(ctx.spec, grid));
    ctx.manifest.add_output(csv_path);
    ctx.manifest.add_output(bin_path);

    if (ctx.cfg.flag_or("experiment", "compare_oracle", false)) {
        const double err = oracle_error(ctx.spec, field);
        ctx.manifest.set("oracle_sup_relative_error", err);
        std::cout << "oracle sup relative error: " << format_number(err) << "\n";
    }
    ctx.manifest.write_file(ctx.path("manifest.txt"));
    std::cout << "wrote " << csv_path << " and " << bin_path << "\n";
    return 0;
}

inline int cmd_simulate(const std::string& config_path, const std::string& out_dir, long paths,
                        long seed, double dt, int workers, const std::string& policy_arg,
                        const std::string& events_out) {
    auto ctx = detail::open_run("simulate", config_path, out_dir);
    const McOptions mc = detail::mc_from(ctx, paths, seed, dt, workers);
    detail::note_mc(ctx.manifest, mc);
    const Policy policy =
        policy_arg.empty() ? Policy::constant(ctx.cfg.number_or("mc", "rate", 0.0))
                           : detail::policy_from_arg(policy_arg);
    ctx.manifest.set("policy", policy_arg.empty() ? "constant (from config)" : policy_arg);

    std::vector<PathRecord> records(mc.paths);
    SimOptions sim{mc.dt_target, false};
    liq::detail::parallel_paths(mc.paths, mc.workers, [&](long i) {
        std::uint64_t s = mc.seed;
        const std::uint64_t path_seed = splitmix64(s) ^ (0x9e3779b97f4a7c15ull * (i + 1));
        records[i] = simulate_path(ctx.spec, policy, path_seed, sim);
    });

    const std::string csv_path = ctx.path("paths.csv");
    {
        std::ofstream csv(csv_path);
        csv << "seed,revenue,tau,n_events,terminal_payment\n";
        for (long i = 0; i < mc.paths; ++i) {
            const PathRecord& r = records[i];
            csv << i << ',' << format_number(r.revenue) << ',' << format_number(r.tau) << ','
                << (r.n_price_jumps + r.n_chain_switches) << ','
                << format_number(r.terminal_payment) << '\n';
        }
    }
    ctx.manifest.add_output(csv_path);
    {
        std::vector<double> totals(mc.paths);
        for (long i = 0; i < mc.paths; ++i) totals[i] = records[i].total();
        const McResult agg = liq::detail::summarize(totals);
        ctx.manifest.set("mean_proceeds", agg.mean);
        ctx.manifest.set("std_error", agg.std_error);
    }

    if (!events_out.empty()) {
        SimOptions rec_opt{mc.dt_target, true};
        const PathRecord rec = simulate_path(ctx.spec, policy, mc.seed, rec_opt);
        EventLog log;
        for (const PathEvent& ev : rec.events)
            if (ev.price_jump) {
                log.t.push_back(ev.t);
                log.mark.push_back(ev.index);
            }
        std::ofstream ev_csv(events_out);
        write_event_log(ev_csv, log);
        ctx.manifest.add_output(events_out);
        std::cout << "wrote " << events_out << " (" << log.size() << " events)\n";
    }
    ctx.manifest.write_file(ctx.path("manifest.txt"));
    std::cout << "wrote " << csv_path << "\n";
    return 0;
}

inline int cmd_evaluate(const std::string& config_path, const std::string& out_dir, long paths,
                        long seed, double dt, int workers, const std::string& policy_arg) {
    auto ctx = detail::open_run("evaluate", config_path, out_dir);
    const McOptions mc = detail::mc_from(ctx, paths, seed, dt, workers);
    detail::note_mc(ctx.manifest, mc);
    if (policy_arg.empty()) throw std::runtime_error("evaluate needs --policy (cache file or constant:X)");
    const Policy policy = detail::policy_from_arg(policy_arg);
    ctx.manifest.set("policy", policy_arg);

    const McResult res = mc_evaluate(ctx.spec, policy, mc);
    const double bound = value_upper_bound(ctx.spec);
    const std::string csv_path = ctx.path("evaluate.csv");
    {
        std::ofstream csv(csv_path);
        csv << "mean,std_error,paths,seed,upper_bound\n";
        csv << format_number(res.mean) << ',' << format_number(res.std_error) << ',' << res.paths
            << ',' << mc.seed << ',' << format_number(bound) << '\n';
    }
    ctx.manifest.add_output(csv_path);
    ctx.manifest.set("mean_proceeds", res.mean);
    ctx.manifest.set("std_error", res.std_error);
    ctx.manifest.set("value_upper_bound", bound);
    ctx.manifest.write_file(ctx.path("manifest.txt"));
    std::cout << "mean proceeds " << format_number(res.mean) << " +- "
              << format_number(res.std_error) << " (" << res.paths << " paths)\n";
    if (res.mean > bound + 3.0 * res.std_error)
        throw std::runtime_error("estimated proceeds exceed the admissible upper bound");
    return 0;
}

inline int cmd_compare(const std::string& config_path, const std::string& out_dir, long paths,
                       long seed, double dt, int workers, int nt, int nw, int npi,
                       const std::string& policy_a_arg, const std::string& policy_b_arg) {
    auto ctx = detail::open_run("compare", config_path, out_dir);
    const McOptions mc = detail::mc_from(ctx, paths, seed, dt, workers);
    const Grid grid = detail::grid_from(ctx, nt, nw, npi);
    detail::note_mc(ctx.manifest, mc);
    detail::note_grid(ctx.manifest, grid);

    Policy policy_a = Policy::constant(0.0), policy_b = Policy::constant(0.0);
    if (!policy_a_arg.empty() && !policy_b_arg.empty()) {
        policy_a = detail::policy_from_arg(policy_a_arg);
        policy_b = detail::policy_from_arg(policy_b_arg);
        ctx.manifest.set("policy_a", policy_a_arg);
        ctx.manifest.set("policy_b", policy_b_arg);
    } else if (policy_a_arg.empty() && policy_b_arg.empty()) {
        // Filtering policy against the benchmark that averages the regimes
        // under the stationary law and ignores switching.
        policy_a = make_policy(solve(ctx.spec, grid));
        policy_b = make_policy(solve_deterministic(deterministic_benchmark(ctx.spec), grid));
        ctx.manifest.set("policy_a", "filtering (solved from config)");
        ctx.manifest.set("policy_b", "deterministic benchmark (stationary mix)");
    } else {
        throw std::runtime_error("give both --policy-a and --policy-b, or neither");
    }

    const CompareResult res = compare_policies(ctx.spec, policy_a, policy_b, mc);
    const std::string csv_path = ctx.path("compare.csv");
    {
        std::ofstream csv(csv_path);
        csv << "gain,half_width,mean_a,se_a,mean_b,se_b,paths,seed\n";
        csv << format_number(res.gain) << ',' << format_number(res.half_width) << ','
            << format_number(res.a.mean) << ',' << format_number(res.a.std_error) << ','
            << format_number(res.b.mean) << ',' << format_number(res.b.std_error) << ','
            << mc.paths << ',' << mc.seed << '\n';
    }
    ctx.manifest.add_output(csv_path);
    ctx.manifest.set("gain", res.gain);
    ctx.manifest.set("gain_half_width", res.half_width);
    ctx.manifest.write_file(ctx.path("manifest.txt"));
    std::cout << "gain " << format_number(res.gain) << " +- " << format_number(res.half_width)
              << "\n";
    return 0;
}

inline int cmd_calibrate(const std::string& config_path, const std::string& log_path,
                         const std::string& out_dir) {
    auto ctx = detail::open_run("calibrate", config_path, out_dir);
    const std::string events =
        log_path.empty() ? ctx.cfg.text("calibration", "log") : log_path;
    const EventLog log = read_event_log_file(events, ctx.spec.jumps);
    ctx.manifest.set("event_log", events);
    ctx.manifest.set("events", static_cast<long>(log.size()));

    EmConfig em;
    em.states = ctx.spec.chain.states;
    em.max_iters = static_cast<int>(ctx.cfg.integer_or("em", "max_iters", 200));
    em.tol = ctx.cfg.number_or("em", "tol", 1e-9);
    em.fit_generator = ctx.cfg.flag_or("em", "fit_generator", true);
    em.moment_spread = ctx.cfg.number_or("em", "moment_spread", 0.1);
    em.switch_rate = ctx.cfg.number_or("em", "switch_rate", 4.0);
    if (ctx.cfg.text_or("em", "init", "moment") == "config") {
        em.init_chain = ctx.spec.chain;
        em.init_rates = ctx.spec.jumps.rates;
    }
    ctx.manifest.set("em_max_iters", em.max_iters);
    ctx.manifest.set("em_tol", em.tol);
    ctx.manifest.set("em_fit_generator", em.fit_generator ? "true" : "false");

    const double horizon = ctx.cfg.number_or("calibration", "horizon", ctx.spec.horizon);
    const EmResult fit = em_fit(log, horizon, ctx.spec.jumps.marks, em);
    for (const std::string& w : fit.warnings) std::cerr << "warning: " << w << "\n";

    const std::string params_path = ctx.path("estimates.cfg");
    {
        std::ofstream out(params_path);
        out << "# fitted parameters (" << fit.iterations << " EM iterations, "
            << (fit.converged ? "converged" : "iteration limit") << ")\n";
        write_model_fragment(out, fit.chain, ctx.spec.jumps.marks, fit.rates);
    }
    const std::string yhat_path = ctx.path("y_hat.csv");
    {
        std::ofstream out(yhat_path);
        out << "t,y_hat\n";
        for (std::size_t n = 0; n < log.size(); ++n)
            out << format_number(log.t[n]) << ',' << format_number(fit.y_hat[n]) << '\n';
    }
    const std::string trace_path = ctx.path("em_trace.csv");
    {
        std::ofstream out(trace_path);
        out << "iteration,loglik\n";
        for (std::size_t i = 0; i < fit.loglik_trace.size(); ++i)
            out << i << ',' << format_number(fit.loglik_trace[i]) << '\n';
    }
    ctx.manifest.add_output(params_path);
    ctx.manifest.add_output(yhat_path);
    ctx.manifest.add_output(trace_path);
    ctx.manifest.set("em_iterations", fit.iterations);
    ctx.manifest.set("em_converged", fit.converged ? "true" : "false");
    ctx.manifest.set("final_loglik", fit.loglik_trace.back());
    ctx.manifest.write_file(ctx.path("manifest.txt"));
    std::cout << "wrote " << params_path << "\n";
    return 0;
}

inline int cmd_oracle_check(const std::string& config_path, const std::string& out_dir, int nt,
                            int nw, int npi) {
    auto ctx = detail::open_run("oracle-check", config_path, out_dir);
    const Grid grid = detail::grid_from(ctx, nt, nw, npi);
    detail::note_grid(ctx.manifest, grid);
    const OracleParams p = counterexample_params(ctx.spec);
    const ValueField field = detail::solve_any(ctx.spec, grid);
    const double err = oracle_error(ctx.spec, field);

    const std::string csv_path = ctx.path("oracle.csv");
    {
        std::ofstream csv(csv_path);
        csv << "t,w,oracle,solved\n";
        for (int i = 0; i <= field.nt; ++i)
            for (int j = 0; j <= field.nw; ++j) {
                const double t = field.t_node(i), w = field.w_node(j);
                csv << format_number(t) << ',' << format_number(w) << ','
                    << format_number(closed_form_oracle(p.theta, p.c_up, p.c_down, p.a,
                                                        ctx.spec.nu_max, ctx.spec.horizon, t, w))
                    << ',' << format_number(field.at(i, j, 0)) << '\n';
            }
    }
    ctx.manifest.add_output(csv_path);
    ctx.manifest.set("oracle_sup_relative_error", err);
    ctx.manifest.set("effective_dt", field.effective_dt);
    ctx.manifest.write_file(ctx.path("manifest.txt"));
    std::cout << "oracle sup relative error: " << format_number(err) << "\n";
    return 0;
}

inline int run(int argc, char** argv) {
    CLI::App app{"optimal liquidation under partial information: HJB solver, PDMP simulator, "
                 "filter and EM calibration"};
    app.require_subcommand(1);

    std::string config, out, policy, policy_a, policy_b, events_out, log_path;
    long paths = 0, seed = -1;
    double dt = 0.0;
    int workers = 0, nt = 0, nw = 0, npi = 0;

    auto add_common = [&](CLI::App* cmd, const char* default_out) {
        cmd->add_option("--config", config, "model/experiment configuration file")->required();
        cmd->add_option("--out", out, "output directory")->default_val(default_out);
    };
    auto add_grid = [&](CLI::App* cmd) {
        cmd->add_option("--nt", nt, "stored time layers (default from config)");
        cmd->add_option("--nw", nw, "inventory intervals");
        cmd->add_option("--npi", npi, "belief intervals");
    };
    auto add_mc = [&](CLI::App* cmd) {
        cmd->add_option("--paths", paths, "Monte Carlo paths");
        cmd->add_option("--seed", seed, "master seed");
        cmd->add_option("--dt", dt, "knot spacing in days");
        cmd->add_option("--workers", workers, "worker threads (0 = all cores)");
    };

    auto* solve_cmd = app.add_subcommand("solve", "solve the dynamic programming equation");
    add_common(solve_cmd, "out_solve");
    add_grid(solve_cmd);

    auto* sim_cmd = app.add_subcommand("simulate", "simulate controlled trajectories");
    add_common(sim_cmd, "out_simulate");
    add_mc(sim_cmd);
    sim_cmd->add_option("--policy", policy, "policy: field cache file or constant:X");
    sim_cmd->add_option("--events-out", events_out, "also write one path's jump log as CSV");

    auto* eval_cmd = app.add_subcommand("evaluate", "Monte Carlo value of a policy");
    add_common(eval_cmd, "out_evaluate");
    add_mc(eval_cmd);
    eval_cmd->add_option("--policy", policy, "policy: field cache file or constant:X");

    auto* cmp_cmd = app.add_subcommand("compare", "paired comparison of two policies");
    add_common(cmp_cmd, "out_compare");
    add_mc(cmp_cmd);
    add_grid(cmp_cmd);
    cmp_cmd->add_option("--policy-a", policy_a, "first policy (field cache)");
    cmp_cmd->add_option("--policy-b", policy_b, "second policy (field cache)");

    auto* cal_cmd = app.add_subcommand("calibrate", "EM fit of rates and generator from event data");
    add_common(cal_cmd, "out_calibrate");
    cal_cmd->add_option("--log", log_path, "event log CSV (default from config [calibration] log)");

    auto* orc_cmd = app.add_subcommand("oracle-check", "solve and compare against the closed form");
    add_common(orc_cmd, "out_oracle");
    add_grid(orc_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (solve_cmd->parsed()) return cmd_solve(config, out, nt, nw, npi);
        if (sim_cmd->parsed())
            return cmd_simulate(config, out, paths, seed, dt, workers, policy, events_out);
        if (eval_cmd->parsed()) return cmd_evaluate(config, out, paths, seed, dt, workers, policy);
        if (cmp_cmd->parsed())
            return cmd_compare(config, out, paths, seed, dt, workers, nt, nw, npi, policy_a, policy_b);
        if (cal_cmd->parsed()) return cmd_calibrate(config, log_path, out);
        if (orc_cmd->parsed()) return cmd_oracle_check(config, out, nt, nw, npi);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

} // namespace liq::cli
