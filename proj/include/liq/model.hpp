#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace liq {

// Hidden regime chain: generator Q (row-major, rows sum to zero) and the
// initial distribution on the K states.
struct ChainSpec {
    int states = 1;
    std::vector<double> generator; // states x states, per day
    std::vector<double> initial;   // length states

    double q(int i, int j) const { return generator[static_cast<std::size_t>(i) * states + j]; }
};

// Optional deterministic intra-day seasonality multiplier on all jump rates.
// `lo`/`hi` must bound the factor over the horizon; they enter the intensity
// bound used for thinning and for the scheme's CFL estimate.
struct SeasonalProfile {
    std::function<double(double)> factor; // empty => identically one
    double lo = 1.0;
    double hi = 1.0;

    double operator()(double t) const { return factor ? factor(t) : 1.0; }
    bool flat() const { return !factor; }
};

// Marked jump measure of the bid-price return: finite support `marks`
// (relative price moves, each > -1), per-state base rates (events per day)
// and a per-mark permanent-impact coefficient a_j, entering as a factor
// (1 + a_j * nu) on the rate of mark j.
struct JumpSpec {
    std::vector<double> marks;   // length J, distinct, each > -1
    std::vector<double> rates;   // states x J, row-major, >= 0
    std::vector<double> impact;  // length J, a_j >= 0 (days per share)
    SeasonalProfile season;

    int n_marks() const { return static_cast<int>(marks.size()); }
    double rate(int state, int mark) const {
        return rates[static_cast<std::size_t>(state) * marks.size() + mark];
    }
};

// Temporary impact f(nu): execution discount on proceeds. Power form
// c_f * nu^exponent unless `custom` overrides it.
struct ImpactSpec {
    double c_f = 0.0;
    double exponent = 0.6;
    std::function<double(double)> custom;
};

// Terminal inventory valuation h(w).
struct TerminalSpec {
    enum class Form { zero, saturating, custom };
    Form form = Form::zero;
    double saturation = 0.0; // h(w) = w / (1 + saturation * w)
    std::function<double(double)> custom;
};

struct ModelSpec {
    ChainSpec chain;
    JumpSpec jumps;
    ImpactSpec impact;
    TerminalSpec terminal;
    double rho = 0.0;     // discount rate, per day
    double horizon = 1.0; // T, days
    double w0 = 1.0;      // initial inventory, shares
    double s0 = 1.0;      // initial bid price
    double nu_max = 2.0;  // liquidation rate cap, shares per day
};

inline double temporary_impact(const ImpactSpec& impact, double nu) {
    if (impact.custom) return impact.custom(nu);
    if (impact.c_f == 0.0 || nu <= 0.0) return 0.0;
    return impact.c_f * std::pow(nu, impact.exponent);
}

inline double terminal_value(const TerminalSpec& terminal, double w) {
    switch (terminal.form) {
        case TerminalSpec::Form::zero: return 0.0;
        case TerminalSpec::Form::saturating: return w / (1.0 + terminal.saturation * w);
        case TerminalSpec::Form::custom: return terminal.custom(w);
    }
    return 0.0;
}

namespace detail {

inline void check_time_rate(const ModelSpec& spec, double t, double nu) {
    if (!(t >= 0.0) || !(t <= spec.horizon))
        throw std::domain_error("time outside [0, horizon]");
    if (!(nu >= 0.0) || !(nu <= spec.nu_max))
        throw std::domain_error("liquidation rate outside [0, nu_max]");
}

inline void check_state_index(const ModelSpec& spec, int state) {
    if (state < 0 || state >= spec.chain.states)
        throw std::domain_error("state index out of range");
}

} // namespace detail

// Rate of mark `mark` events in regime `state` under liquidation rate `nu`:
// season(t) * lambda_{k,j} * (1 + a_j * nu).
inline double intensity(const ModelSpec& spec, double t, int state, double nu, int mark) {
    detail::check_time_rate(spec, t, nu);
    detail::check_state_index(spec, state);
    if (mark < 0 || mark >= spec.jumps.n_marks())
        throw std::domain_error("mark index out of range");
    return spec.jumps.season(t) * spec.jumps.rate(state, mark) * (1.0 + spec.jumps.impact[mark] * nu);
}

inline double total_intensity(const ModelSpec& spec, double t, int state, double nu) {
    detail::check_time_rate(spec, t, nu);
    detail::check_state_index(spec, state);
    double sum = 0.0;
    for (int j = 0; j < spec.jumps.n_marks(); ++j)
        sum += spec.jumps.rate(state, j) * (1.0 + spec.jumps.impact[j] * nu);
    return spec.jumps.season(t) * sum;
}

// Mean return rate of the bid price in a given regime,
// sum_j z_j * intensity(t, state, nu, j).
inline double mean_return_rate(const ModelSpec& spec, double t, int state, double nu) {
    detail::check_time_rate(spec, t, nu);
    detail::check_state_index(spec, state);
    double sum = 0.0;
    for (int j = 0; j < spec.jumps.n_marks(); ++j)
        sum += spec.jumps.marks[j] * spec.jumps.rate(state, j) * (1.0 + spec.jumps.impact[j] * nu);
    return spec.jumps.season(t) * sum;
}

// Finite bound on the total jump intensity over all (t, state, nu). Used as
// the thinning envelope in simulation and in the scheme's CFL bound.
inline double max_total_intensity(const ModelSpec& spec) {
    double worst = 0.0;
    for (int k = 0; k < spec.chain.states; ++k) {
        double sum = 0.0;
        for (int j = 0; j < spec.jumps.n_marks(); ++j)
            sum += spec.jumps.rate(k, j) * (1.0 + spec.jumps.impact[j] * spec.nu_max);
        worst = std::max(worst, sum);
    }
    return spec.jumps.season.hi * worst;
}

// Upper bound on the attainable liquidation value: w0 * s0 * exp(eta_bar * T)
// with eta_bar = max(0, sup_{t,state} mean_return_rate(t, state, 0) - rho).
// No solver or Monte Carlo value may exceed it.
inline double value_upper_bound(const ModelSpec& spec) {
    double sup_drift = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < spec.chain.states; ++k) {
        double base = 0.0;
        for (int j = 0; j < spec.jumps.n_marks(); ++j)
            base += spec.jumps.marks[j] * spec.jumps.rate(k, j);
        // season factor is positive, so the sup over t depends on the sign
        sup_drift = std::max(sup_drift, base >= 0.0 ? base * spec.jumps.season.hi
                                                    : base * spec.jumps.season.lo);
    }
    const double eta_bar = std::max(0.0, sup_drift - spec.rho);
    return spec.w0 * spec.s0 * std::exp(eta_bar * spec.horizon);
}

// Stationary distribution of the chain (pi Q = 0, pi >= 0, sum pi = 1),
// by Gaussian elimination on the small transposed system.
inline std::vector<double> stationary_distribution(const ChainSpec& chain) {
    const int n = chain.states;
    if (n == 1) return {1.0};
    // Solve Q^T pi = 0 with the normalization row appended.
    std::vector<double> a(static_cast<std::size_t>(n) * (n + 1), 0.0);
    auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * (n + 1) + j]; };
    for (int i = 0; i < n - 1; ++i)
        for (int j = 0; j < n; ++j) at(i, j) = chain.q(j, i);
    for (int j = 0; j < n; ++j) at(n - 1, j) = 1.0;
    at(n - 1, n) = 1.0;
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(at(r, col)) > std::abs(at(pivot, col))) pivot = r;
        if (std::abs(at(pivot, col)) < 1e-14)
            throw std::runtime_error("chain generator is degenerate; no unique stationary law");
        if (pivot != col)
            for (int j = 0; j <= n; ++j) std::swap(at(pivot, j), at(col, j));
        for (int r = 0; r < n; ++r) {
            if (r == col) continue;
            const double m = at(r, col) / at(col, col);
            for (int j = col; j <= n; ++j) at(r, j) -= m * at(col, j);
        }
    }
    std::vector<double> pi(n);
    for (int i = 0; i < n; ++i) pi[i] = at(i, n) / at(i, i);
    for (double& p : pi) p = std::max(p, 0.0);
    double sum = 0.0;
    for (double p : pi) sum += p;
    for (double& p : pi) p /= sum;
    return pi;
}

// Validates the standing assumptions. Hard violations throw
// std::invalid_argument; soft ones (negative proceeds possible) are returned
// as warnings.
inline std::vector<std::string> validate(const ModelSpec& spec) {
    std::vector<std::string> warnings;
    const int K = spec.chain.states;
    const int J = spec.jumps.n_marks();

    if (K < 1) throw std::invalid_argument("chain must have at least one state");
    if (spec.chain.generator.size() != static_cast<std::size_t>(K) * K)
        throw std::invalid_argument("generator must be states x states");
    if (spec.chain.initial.size() != static_cast<std::size_t>(K))
        throw std::invalid_argument("initial distribution must have one entry per state");
    for (int i = 0; i < K; ++i) {
        double row = 0.0;
        for (int j = 0; j < K; ++j) {
            const double q = spec.chain.q(i, j);
            if (i != j && q < 0.0)
                throw std::invalid_argument("generator off-diagonal entries must be nonnegative");
            row += q;
        }
        if (std::abs(row) > 1e-12)
            throw std::invalid_argument("generator rows must sum to zero");
    }
    {
        double sum = 0.0;
        for (double p : spec.chain.initial) {
            if (p < 0.0) throw std::invalid_argument("initial distribution entries must be nonnegative");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw std::invalid_argument("initial distribution must sum to one");
    }

    if (J < 1) throw std::invalid_argument("jump measure needs at least one mark");
    if (spec.jumps.rates.size() != static_cast<std::size_t>(K) * J)
        throw std::invalid_argument("jump rates must be states x marks");
    if (spec.jumps.impact.size() != static_cast<std::size_t>(J))
        throw std::invalid_argument("one impact coefficient per mark required");
    for (int j = 0; j < J; ++j) {
        if (!(spec.jumps.marks[j] > -1.0))
            throw std::invalid_argument("every mark must exceed -1 (price positivity)");
        if (spec.jumps.impact[j] < 0.0)
            throw std::invalid_argument("impact coefficients must be nonnegative");
        for (int l = j + 1; l < J; ++l)
            if (spec.jumps.marks[j] == spec.jumps.marks[l])
                throw std::invalid_argument("marks must be distinct");
        // Equivalence across states: a mark is either active in every state
        // or in none, otherwise the Bayes update can hit a zero likelihood.
        bool any_zero = false, any_pos = false;
        for (int k = 0; k < K; ++k) {
            if (spec.jumps.rate(k, j) < 0.0)
                throw std::invalid_argument("jump rates must be nonnegative");
            (spec.jumps.rate(k, j) > 0.0 ? any_pos : any_zero) = true;
        }
        if (any_zero && any_pos)
            throw std::invalid_argument("mark " + std::to_string(j) +
                                        " must have positive rate in all states or in none");
    }
    if (!(spec.jumps.season.lo > 0.0) || spec.jumps.season.hi < spec.jumps.season.lo)
        throw std::invalid_argument("seasonality bounds must satisfy 0 < lo <= hi");

    if (spec.impact.c_f < 0.0) throw std::invalid_argument("temporary impact scale must be nonnegative");
    if (!(spec.impact.exponent > 0.0)) throw std::invalid_argument("temporary impact exponent must be positive");
    if (spec.terminal.form == TerminalSpec::Form::custom && !spec.terminal.custom)
        throw std::invalid_argument("custom terminal form requires a function");
    if (spec.terminal.form == TerminalSpec::Form::saturating && spec.terminal.saturation < 0.0)
        throw std::invalid_argument("saturation parameter must be nonnegative");

    if (!(spec.rho >= 0.0)) throw std::invalid_argument("discount rate must be nonnegative");
    if (!(spec.horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
    if (!(spec.w0 > 0.0)) throw std::invalid_argument("initial inventory must be positive");
    if (!(spec.s0 > 0.0)) throw std::invalid_argument("initial price must be positive");
    if (!(spec.nu_max > spec.w0 / spec.horizon))
        throw std::invalid_argument("nu_max must exceed w0 / horizon so full liquidation is feasible");

    // Numeric checks on the temporary impact and terminal value over the
    // admissible range.
    {
        double prev = temporary_impact(spec.impact, 0.0);
        if (std::abs(prev) > 1e-12)
            throw std::invalid_argument("temporary impact must vanish at nu = 0");
        const int samples = 64;
        for (int i = 1; i <= samples; ++i) {
            const double nu = spec.nu_max * i / samples;
            const double f = temporary_impact(spec.impact, nu);
            if (f < prev - 1e-12)
                throw std::invalid_argument("temporary impact must be nondecreasing");
            prev = f;
        }
        if (prev >= 1.0)
            warnings.push_back("temporary impact reaches f(nu) >= 1; proceeds can be negative");
    }
    {
        if (std::abs(terminal_value(spec.terminal, 0.0)) > 1e-12)
            throw std::invalid_argument("terminal value must vanish at w = 0");
        const int samples = 64;
        double prev = 0.0, prev_slope = std::numeric_limits<double>::infinity();
        for (int i = 1; i <= samples; ++i) {
            const double w = spec.w0 * i / samples;
            const double h = terminal_value(spec.terminal, w);
            if (h > w + 1e-9 * std::max(1.0, w))
                throw std::invalid_argument("terminal value may not exceed book value");
            if (h < prev - 1e-12)
                throw std::invalid_argument("terminal value must be nondecreasing");
            const double slope = (h - prev) / (spec.w0 / samples);
            if (slope > prev_slope + 1e-9)
                throw std::invalid_argument("terminal value must be concave");
            prev_slope = slope;
            prev = h;
        }
    }
    return warnings;
}

// Single-regime benchmark with the chain averaged out under its stationary
// law; the model a trader who ignores regime switching would use.
inline ModelSpec deterministic_benchmark(const ModelSpec& spec) {
    const std::vector<double> st = stationary_distribution(spec.chain);
    ModelSpec det = spec;
    det.chain.states = 1;
    det.chain.generator = {0.0};
    det.chain.initial = {1.0};
    det.jumps.rates.assign(spec.jumps.marks.size(), 0.0);
    for (int j = 0; j < spec.jumps.n_marks(); ++j) {
        double mixed = 0.0;
        for (int k = 0; k < spec.chain.states; ++k) mixed += st[k] * spec.jumps.rate(k, j);
        det.jumps.rates[j] = mixed;
    }
    return det;
}

} // namespace liq
