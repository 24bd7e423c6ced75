#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

#include "liq/filter.hpp"
#include "liq/model.hpp"
#include "liq/policy.hpp"
#include "liq/rng.hpp"

namespace liq {

struct SimOptions {
    double dt_target = 5e-4; // knot spacing for policy refresh and the belief ODE, days
    bool record_events = false;
};

struct PathEvent {
    double t = 0.0;
    bool price_jump = false; // false: chain switch (invisible to the filter)
    int index = 0;           // mark index or new chain state
    double price_pre = 0.0, price_post = 0.0;
    double inventory = 0.0;
    std::vector<double> pi_pre, pi_post;
};

struct PathRecord {
    double revenue = 0.0;          // discounted proceeds from continuous selling
    double terminal_payment = 0.0; // e^{-rho tau} S_tau h(W_tau)
    double tau = 0.0;              // liquidation stopping time
    long n_price_jumps = 0;
    long n_chain_switches = 0;
    double final_price = 0.0;
    double final_inventory = 0.0;
    std::vector<double> final_belief;
    std::vector<PathEvent> events; // populated when record_events is set

    double total() const { return revenue + terminal_payment; }
};

namespace detail {

// Discounted proceeds of selling at constant rate nu against constant price
// s over [t0, t1].
inline double discounted_flow(double rho, double s, double nu, double f_nu, double t0, double t1) {
    if (nu <= 0.0 || t1 <= t0) return 0.0;
    const double gross = nu * s * (1.0 - f_nu);
    if (rho == 0.0) return gross * (t1 - t0);
    return gross * (std::exp(-rho * t0) - std::exp(-rho * t1)) / rho;
}

} // namespace detail

// Simulates one trajectory of the controlled process (hidden chain, price,
// inventory, belief) under the feedback policy. The chain moves by
// exponential holding times; price jumps are generated by thinning against
// the global intensity bound; between events the belief follows its ODE and
// the policy is held piecewise constant on knots of length dt_target.
// Identical (spec, policy, seed) produce bit-identical paths.
inline PathRecord simulate_path(const ModelSpec& spec, const Policy& policy, std::uint64_t seed,
                                const SimOptions& opt = {}) {
    const int K = spec.chain.states;
    const int J = spec.jumps.n_marks();
    const double T = spec.horizon;
    const double lambda_bound = max_total_intensity(spec);

    Rng chain_rng = derive_stream(seed, 0, 0);
    Rng candidate_rng = derive_stream(seed, 0, 1);
    Rng accept_rng = derive_stream(seed, 0, 2);
    Rng mark_rng = derive_stream(seed, 0, 3);

    PathRecord rec;
    double t = 0.0;
    double price = spec.s0;
    double inventory = spec.w0;
    std::vector<double> pi = spec.chain.initial;
    BeliefPropagator prop(K);

    // Initial hidden state from the initial distribution.
    int y = K - 1;
    {
        const double u = chain_rng.next_double();
        double acc = 0.0;
        for (int k = 0; k < K; ++k) {
            acc += spec.chain.initial[k];
            if (u < acc) { y = k; break; }
        }
    }
    auto draw_switch_time = [&](double from) {
        return from + chain_rng.exponential(-spec.chain.q(y, y));
    };
    double next_switch = draw_switch_time(0.0);
    double next_candidate = t + candidate_rng.exponential(lambda_bound);

    std::vector<double> weights(J);
    bool done = false;
    while (!done) {
        double nu = std::clamp(policy(t, inventory, pi.empty() ? 1.0 : pi[0]), 0.0, spec.nu_max);
        if (inventory <= 0.0) nu = 0.0;
        const double knot_end = t + opt.dt_target;
        double t_next = std::min(std::min(next_switch, next_candidate), std::min(knot_end, T));

        enum class Stop { none, liquidated, horizon } stop = Stop::none;
        if (nu > 0.0) {
            const double t_empty = t + inventory / nu;
            if (t_empty <= t_next) {
                t_next = t_empty;
                stop = Stop::liquidated;
            }
        }
        if (stop == Stop::none && t_next >= T) {
            t_next = T;
            stop = Stop::horizon;
        }

        const double t_prev = t;
        rec.revenue += detail::discounted_flow(spec.rho, price, nu,
                                               temporary_impact(spec.impact, nu), t_prev, t_next);
        if (t_next > t_prev) prop.step(spec, t, pi, nu, t_next - t_prev);
        t = t_next;
        inventory = (stop == Stop::liquidated)
                        ? 0.0
                        : std::max(0.0, inventory - nu * (t_next - t_prev));
        if (stop != Stop::none) {
            rec.tau = t;
            break;
        }

        if (t == next_switch) {
            // Chain switch: redraw the hidden state; the filter sees nothing.
            const double total = -spec.chain.q(y, y);
            double u = chain_rng.next_double() * total;
            int dest = y;
            for (int k = 0; k < K; ++k) {
                if (k == y) continue;
                u -= spec.chain.q(y, k);
                if (u < 0.0) { dest = k; break; }
            }
            if (opt.record_events) {
                PathEvent ev;
                ev.t = t;
                ev.price_jump = false;
                ev.index = dest;
                ev.price_pre = ev.price_post = price;
                ev.inventory = inventory;
                ev.pi_pre = ev.pi_post = pi;
                rec.events.push_back(std::move(ev));
            }
            y = dest;
            ++rec.n_chain_switches;
            next_switch = draw_switch_time(t);
        } else if (t == next_candidate) {
            // Candidate price jump; accept with probability total/bound.
            // Both uniforms are always consumed so that paired runs stay on
            // common random numbers.
            const double u_accept = accept_rng.next_double();
            const double u_mark = mark_rng.next_double();
            const double season = spec.jumps.season(t);
            double total = 0.0;
            for (int j = 0; j < J; ++j) {
                weights[j] = season * spec.jumps.rate(y, j) * (1.0 + spec.jumps.impact[j] * nu);
                total += weights[j];
            }
            if (total > lambda_bound * (1.0 + 1e-12))
                throw std::logic_error("thinning bound violated: intensity exceeds its precomputed maximum");
            if (u_accept * lambda_bound < total) {
                double u = u_mark * total;
                int mark = J - 1;
                for (int j = 0; j < J; ++j) {
                    u -= weights[j];
                    if (u < 0.0) { mark = j; break; }
                }
                PathEvent ev;
                if (opt.record_events) {
                    ev.t = t;
                    ev.price_jump = true;
                    ev.index = mark;
                    ev.price_pre = price;
                    ev.inventory = inventory;
                    ev.pi_pre = pi;
                }
                price *= 1.0 + spec.jumps.marks[mark];
                liq::detail::bayes_update_in_place(spec, pi, mark);
                ++rec.n_price_jumps;
                if (opt.record_events) {
                    ev.price_post = price;
                    ev.pi_post = pi;
                    rec.events.push_back(std::move(ev));
                }
            }
            next_candidate = t + candidate_rng.exponential(lambda_bound);
        }
        // Knot boundaries need no action: the policy refreshes on loop entry.
    }

    rec.terminal_payment = std::exp(-spec.rho * rec.tau) * price *
                           terminal_value(spec.terminal, inventory);
    rec.final_price = price;
    rec.final_inventory = inventory;
    rec.final_belief = std::move(pi);
    return rec;
}

struct McOptions {
    long paths = 10000;
    std::uint64_t seed = 1;
    double dt_target = 5e-4;
    int workers = 0; // 0: hardware concurrency
};

struct McResult {
    double mean = 0.0;
    double std_error = 0.0;
    long paths = 0;
};

namespace detail {

// Runs fn(path_index) over [0, n) on `workers` threads with a static
// partition. Results must be written to per-index slots, which keeps the
// outcome independent of the worker count.
template <class Fn>
void parallel_paths(long n, int workers, Fn&& fn) {
    if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
    workers = static_cast<int>(std::max<long>(1, std::min<long>(workers, n)));
    if (workers == 1) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<long> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto body = [&] {
        constexpr long kBlock = 64;
        for (;;) {
            const long begin = next.fetch_add(kBlock);
            if (begin >= n) return;
            const long end = std::min(n, begin + kBlock);
            try {
                for (long i = begin; i < end; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

inline McResult summarize(const std::vector<double>& values) {
    const long n = static_cast<long>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double variance = n > 1 ? ss / (n - 1) : 0.0;
    return McResult{mean, std::sqrt(variance / n), n};
}

} // namespace detail

// Monte Carlo estimate of the expected discounted proceeds of a policy.
// Per-path seeds derive deterministically from the master seed, so the
// estimate does not depend on the worker count.
inline McResult mc_evaluate(const ModelSpec& spec, const Policy& policy, const McOptions& opt) {
    if (opt.paths < 1) throw std::domain_error("need at least one path");
    std::vector<double> values(opt.paths);
    SimOptions sim{opt.dt_target, false};
    detail::parallel_paths(opt.paths, opt.workers, [&](long i) {
        std::uint64_t s = opt.seed;
        const std::uint64_t path_seed = splitmix64(s) ^ (0x9e3779b97f4a7c15ull * (i + 1));
        values[i] = simulate_path(spec, policy, path_seed, sim).total();
    });
    return detail::summarize(values);
}

struct CompareResult {
    double gain = 0.0;       // mean of paired differences, a - b
    double half_width = 0.0; // 1.96 standard errors of the paired mean
    McResult a, b;
};

// Paired-path comparison with common random numbers: the same derived
// streams drive both policies' chains and candidate event skeletons.
inline CompareResult compare_policies(const ModelSpec& spec, const Policy& a, const Policy& b,
                                      const McOptions& opt) {
    if (opt.paths < 1) throw std::domain_error("need at least one path");
    std::vector<double> va(opt.paths), vb(opt.paths);
    SimOptions sim{opt.dt_target, false};
    detail::parallel_paths(opt.paths, opt.workers, [&](long i) {
        std::uint64_t s = opt.seed;
        const std::uint64_t path_seed = splitmix64(s) ^ (0x9e3779b97f4a7c15ull * (i + 1));
        va[i] = simulate_path(spec, a, path_seed, sim).total();
        vb[i] = simulate_path(spec, b, path_seed, sim).total();
    });
    std::vector<double> diff(opt.paths);
    for (long i = 0; i < opt.paths; ++i) diff[i] = va[i] - vb[i];
    const McResult d = detail::summarize(diff);
    CompareResult out;
    out.gain = d.mean;
    out.half_width = 1.96 * d.std_error;
    out.a = detail::summarize(va);
    out.b = detail::summarize(vb);
    return out;
}

} // namespace liq
