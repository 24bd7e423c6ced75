#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "liq/event_log.hpp"
#include "liq/model.hpp"

namespace liq {

// Belief about the hidden regime: probability vector on the K-simplex.
struct FilterState {
    std::vector<double> pi;
    double t = 0.0;
};

// Unnormalized conditional masses evolved by the Zakai recursion. Mass
// rescalings are recorded in log_scale rather than treated as errors.
struct UnnormalizedState {
    std::vector<double> p;
    double t = 0.0;
    double log_scale = 0.0;
    int rescales = 0;
};

namespace detail {

inline void check_simplex(const std::vector<double>& pi, int states) {
    if (static_cast<int>(pi.size()) != states)
        throw std::domain_error("belief vector has wrong length");
    double sum = 0.0;
    for (double p : pi) {
        if (p < -1e-10) throw std::domain_error("belief entry is negative");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-8)
        throw std::domain_error("belief vector is off the simplex");
}

// Between-jump drift of the belief, written directly from the filter
// equation: d_k = (Q^T pi)_k + pi_k (lambda_bar - lambda_k). No allocation;
// used inside the ODE integrator.
inline void drift_into(const ModelSpec& spec, double t, const double* pi, double nu, double* out) {
    const int K = spec.chain.states;
    const int J = spec.jumps.n_marks();
    const double season = spec.jumps.season(t);
    double lambda_bar = 0.0;
    for (int k = 0; k < K; ++k) {
        double lam = 0.0;
        const double* row = spec.jumps.rates.data() + static_cast<std::size_t>(k) * J;
        for (int j = 0; j < J; ++j) lam += row[j] * (1.0 + spec.jumps.impact[j] * nu);
        lam *= season;
        out[k] = -pi[k] * lam; // stash -pi_k lambda_k; lambda_bar added below
        lambda_bar += pi[k] * lam;
    }
    for (int k = 0; k < K; ++k) {
        double gen = 0.0;
        for (int j = 0; j < K; ++j) gen += spec.chain.q(j, k) * pi[j];
        out[k] += gen + pi[k] * lambda_bar;
    }
}

} // namespace detail

// Drift of the belief between price jumps. Computes the equation's summed
// form over the jump measure as well as the compensated form
// (Q^T pi)_k + pi_k (lambda_bar - lambda_k) and cross-checks that the two
// routes agree before returning the latter.
inline std::vector<double> belief_drift(const ModelSpec& spec, double t,
                                        const std::vector<double>& pi, double nu) {
    detail::check_time_rate(spec, t, nu);
    detail::check_simplex(pi, spec.chain.states);
    const int K = spec.chain.states;
    const int J = spec.jumps.n_marks();
    const double season = spec.jumps.season(t);

    std::vector<double> via_compensator(K);
    detail::drift_into(spec, t, pi.data(), nu, via_compensator.data());

    // Independent route: generator term minus pi_k * sum_m u_k(z_m) *
    // (mark frequency), with u_k the Bayes-gain function of the filter
    // equation.
    std::vector<double> mark_freq(J, 0.0);
    for (int j = 0; j < J; ++j) {
        const double factor = season * (1.0 + spec.jumps.impact[j] * nu);
        double freq = 0.0;
        for (int k = 0; k < K; ++k) freq += pi[k] * spec.jumps.rate(k, j);
        mark_freq[j] = freq * factor;
    }
    double scale = 1.0;
    for (int k = 0; k < K; ++k) {
        double gen = 0.0;
        for (int j = 0; j < K; ++j) gen += spec.chain.q(j, k) * pi[j];
        double gain = 0.0;
        for (int j = 0; j < J; ++j) {
            if (mark_freq[j] <= 0.0) continue;
            const double lam_kj = season * spec.jumps.rate(k, j) * (1.0 + spec.jumps.impact[j] * nu);
            const double u = lam_kj / mark_freq[j] - 1.0;
            gain += u * mark_freq[j];
        }
        const double via_sum = gen - pi[k] * gain;
        scale = std::max({scale, std::abs(via_sum), std::abs(via_compensator[k])});
        if (std::abs(via_sum - via_compensator[k]) > 1e-12 * scale)
            throw std::logic_error("belief drift: the two algebraic forms disagree");
    }
    return via_compensator;
}

namespace detail {

// Bayes reweighting by the observed mark's base rates, in place.
inline void bayes_update_in_place(const ModelSpec& spec, std::vector<double>& pi, int mark) {
    const int K = spec.chain.states;
    double denom = 0.0;
    for (int k = 0; k < K; ++k) {
        pi[k] *= spec.jumps.rate(k, mark);
        denom += pi[k];
    }
    if (!(denom > 0.0))
        throw std::runtime_error(
            "impossible observation: mark has zero intensity under the current belief");
    for (double& p : pi) p /= denom;
}

} // namespace detail

// Bayes update of the belief at an observed jump of mark `mark`:
// pi_k <- pi_k lambda_{k,mark} / sum_l pi_l lambda_{l,mark}. The seasonality
// and permanent-impact factors are common to all states for a given mark and
// cancel, so the update is computed from the base rates; invariance in nu is
// exact.
inline std::vector<double> jump_update(const ModelSpec& spec, double t,
                                       const std::vector<double>& pi, double nu, int mark) {
    detail::check_time_rate(spec, t, nu);
    detail::check_simplex(pi, spec.chain.states);
    if (mark < 0 || mark >= spec.jumps.n_marks())
        throw std::domain_error("mark index out of range");
    std::vector<double> post(pi);
    detail::bayes_update_in_place(spec, post, mark);
    return post;
}

// Fixed-step classical fourth-order integrator for the belief ODE with
// post-step renormalization onto the simplex. Reusable scratch buffers keep
// the per-step cost allocation-free.
class BeliefPropagator {
public:
    explicit BeliefPropagator(int states)
        : k1_(states), k2_(states), k3_(states), k4_(states), tmp_(states) {}

    // One RK4 step of size h with the liquidation rate frozen at `nu`.
    void step(const ModelSpec& spec, double& t, std::vector<double>& pi, double nu, double h) {
        const int K = static_cast<int>(pi.size());
        detail::drift_into(spec, t, pi.data(), nu, k1_.data());
        axpy(pi, k1_, 0.5 * h);
        detail::drift_into(spec, t + 0.5 * h, tmp_.data(), nu, k2_.data());
        axpy(pi, k2_, 0.5 * h);
        detail::drift_into(spec, t + 0.5 * h, tmp_.data(), nu, k3_.data());
        axpy(pi, k3_, h);
        detail::drift_into(spec, t + h, tmp_.data(), nu, k4_.data());
        double sum = 0.0;
        for (int k = 0; k < K; ++k) {
            double v = pi[k] + h / 6.0 * (k1_[k] + 2.0 * k2_[k] + 2.0 * k3_[k] + k4_[k]);
            if (v < 0.0) v = 0.0; // clip roundoff undershoot
            pi[k] = v;
            sum += v;
        }
        if (!(sum > 0.0)) throw std::logic_error("belief collapsed to zero mass");
        for (double& p : pi) p /= sum;
        t += h;
    }

    template <class NuPath>
    void advance(const ModelSpec& spec, double& t, std::vector<double>& pi, NuPath&& nu_at,
                 double dt_target, double duration) {
        if (duration <= 0.0) return;
        const int steps = std::max(1, static_cast<int>(std::ceil(duration / dt_target)));
        const double h = duration / steps;
        for (int s = 0; s < steps; ++s) step(spec, t, pi, nu_at(t), h);
    }

private:
    void axpy(const std::vector<double>& base, const std::vector<double>& k, double c) {
        for (std::size_t i = 0; i < base.size(); ++i) tmp_[i] = base[i] + c * k[i];
    }

    std::vector<double> k1_, k2_, k3_, k4_, tmp_;
};

// Integrates the belief ODE over `duration` with steps at most dt_target,
// the liquidation rate read from `nu_at` (a callable of absolute time).
template <class NuPath>
FilterState propagate(const ModelSpec& spec, FilterState state, NuPath&& nu_at,
                      double dt_target, double duration) {
    if (duration < 0.0) throw std::domain_error("propagation duration must be nonnegative");
    detail::check_simplex(state.pi, spec.chain.states);
    if (!(dt_target > 0.0)) throw std::domain_error("dt_target must be positive");
    BeliefPropagator prop(spec.chain.states);
    prop.advance(spec, state.t, state.pi, nu_at, dt_target, duration);
    return state;
}

// --- Unnormalized (Zakai) recursion ------------------------------------
//
// Reference intensity per mark: the markwise supremum of the per-state
// rates over (t, nu), which keeps every density ratio in (0, 1].

inline double reference_intensity(const ModelSpec& spec, int mark) {
    double peak = 0.0;
    for (int k = 0; k < spec.chain.states; ++k) peak = std::max(peak, spec.jumps.rate(k, mark));
    return spec.jumps.season.hi * (1.0 + spec.jumps.impact[mark] * spec.nu_max) * peak;
}

inline UnnormalizedState make_unnormalized(const ModelSpec& spec) {
    return UnnormalizedState{spec.chain.initial, 0.0, 0.0, 0};
}

namespace detail {

inline void zakai_rescale(UnnormalizedState& state) {
    double mass = 0.0;
    for (double v : state.p) mass += v;
    if (!(mass > 0.0)) throw std::runtime_error("unnormalized filter lost all mass");
    if (mass < 1e-120 || mass > 1e120) {
        for (double& v : state.p) v /= mass;
        state.log_scale += std::log(mass);
        ++state.rescales;
    }
}

} // namespace detail

// Between-jump Zakai dynamics: dp_k = (Q^T p)_k - p_k (lambda_k(t,nu) -
// q_tot), with q_tot the total reference intensity. Linear, integrated with
// the same fixed-step fourth-order rule as the normalized filter.
template <class NuPath>
UnnormalizedState zakai_propagate(const ModelSpec& spec, UnnormalizedState state, NuPath&& nu_at,
                                  double dt_target, double duration) {
    if (duration < 0.0) throw std::domain_error("propagation duration must be nonnegative");
    if (duration == 0.0) return state;
    const int K = spec.chain.states;
    const int J = spec.jumps.n_marks();
    double q_tot = 0.0;
    for (int j = 0; j < J; ++j) q_tot += reference_intensity(spec, j);

    auto rhs = [&](double t, const std::vector<double>& p, double nu, std::vector<double>& out) {
        const double season = spec.jumps.season(t);
        for (int k = 0; k < K; ++k) {
            double lam = 0.0;
            for (int j = 0; j < J; ++j)
                lam += spec.jumps.rate(k, j) * (1.0 + spec.jumps.impact[j] * nu);
            lam *= season;
            double gen = 0.0;
            for (int i = 0; i < K; ++i) gen += spec.chain.q(i, k) * p[i];
            out[k] = gen - p[k] * (lam - q_tot);
        }
    };

    const int steps = std::max(1, static_cast<int>(std::ceil(duration / dt_target)));
    const double h = duration / steps;
    std::vector<double> k1(K), k2(K), k3(K), k4(K), tmp(K);
    for (int s = 0; s < steps; ++s) {
        const double nu = nu_at(state.t);
        rhs(state.t, state.p, nu, k1);
        for (int k = 0; k < K; ++k) tmp[k] = state.p[k] + 0.5 * h * k1[k];
        rhs(state.t + 0.5 * h, tmp, nu, k2);
        for (int k = 0; k < K; ++k) tmp[k] = state.p[k] + 0.5 * h * k2[k];
        rhs(state.t + 0.5 * h, tmp, nu, k3);
        for (int k = 0; k < K; ++k) tmp[k] = state.p[k] + h * k3[k];
        rhs(state.t + h, tmp, nu, k4);
        for (int k = 0; k < K; ++k) {
            state.p[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
            if (state.p[k] < 0.0) state.p[k] = 0.0;
        }
        state.t += h;
        detail::zakai_rescale(state);
    }
    return state;
}

// Multiplicative density update at an observed jump: p_k <- p_k *
// lambda_{k,mark}(t,nu) / reference_intensity(mark).
inline UnnormalizedState zakai_jump_update(const ModelSpec& spec, UnnormalizedState state,
                                           double nu, int mark) {
    if (mark < 0 || mark >= spec.jumps.n_marks())
        throw std::domain_error("mark index out of range");
    const double ref = reference_intensity(spec, mark);
    if (!(ref > 0.0))
        throw std::runtime_error("impossible observation: mark has zero reference intensity");
    const double season = spec.jumps.season(state.t);
    double mass = 0.0;
    for (int k = 0; k < spec.chain.states; ++k) {
        state.p[k] *= season * spec.jumps.rate(k, mark) * (1.0 + spec.jumps.impact[mark] * nu) / ref;
        mass += state.p[k];
    }
    if (!(mass > 0.0))
        throw std::runtime_error("impossible observation: mark has zero intensity under the current belief");
    detail::zakai_rescale(state);
    return state;
}

inline std::vector<double> normalize(const UnnormalizedState& state) {
    double mass = 0.0;
    for (double v : state.p) mass += v;
    if (!(mass > 0.0)) throw std::runtime_error("cannot normalize zero mass");
    std::vector<double> pi(state.p);
    for (double& v : pi) v /= mass;
    return pi;
}

// --- Replaying an observed event log ------------------------------------

struct BeliefPathPoint {
    double t = 0.0;
    std::vector<double> pre;  // belief just before the event
    std::vector<double> post; // belief just after
};

// Runs the filter over an observed event log under an exogenous rate path
// (evaluated at left limits between events). Records pre- and post-jump
// beliefs per event plus a terminal point at the horizon.
template <class NuPath>
std::vector<BeliefPathPoint> filter_event_log(const ModelSpec& spec, const EventLog& log,
                                              NuPath&& nu_at, double dt_target, double horizon) {
    check_sorted(log, horizon);
    FilterState state{spec.chain.initial, 0.0};
    std::vector<BeliefPathPoint> path;
    path.reserve(log.size() + 1);
    BeliefPropagator prop(spec.chain.states);
    for (std::size_t i = 0; i < log.size(); ++i) {
        prop.advance(spec, state.t, state.pi, nu_at, dt_target, log.t[i] - state.t);
        state.t = log.t[i];
        BeliefPathPoint point;
        point.t = state.t;
        point.pre = state.pi;
        state.pi = jump_update(spec, state.t, state.pi, nu_at(state.t), log.mark[i]);
        point.post = state.pi;
        path.push_back(std::move(point));
    }
    prop.advance(spec, state.t, state.pi, nu_at, dt_target, horizon - state.t);
    path.push_back(BeliefPathPoint{horizon, state.pi, state.pi});
    return path;
}

} // namespace liq
