#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "liq/model.hpp"
#include "liq/policy.hpp"

namespace liq {

// Requested resolution: interval counts per axis (nodes = n + 1). The time
// axis is the *stored* resolution; the sweep substeps internally whenever
// the CFL bound demands a smaller step. dt_cap, when positive, forces the
// internal step below the given value (used for refinement studies).
struct Grid {
    int nt = 100;
    int nw = 100;
    int npi = 20;
    double dt_cap = 0.0;
};

// Discretized value function V'(t, w, pi) (value per unit of initial price),
// the optimal-rate field extracted on the same nodes, and the marginal-cost
// diagnostic. npi == 0 marks a single-regime field without a belief axis.
struct ValueField {
    double horizon = 0.0;
    double w_max = 0.0;
    int nt = 0, nw = 0, npi = 0;
    std::vector<double> value, rate, cost;
    double effective_dt = 0.0;    // internal step actually used
    double min_self_weight = 1.0; // smallest explicit self-coefficient seen

    int pi_nodes() const { return npi + 1; }
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * (nw + 1) + j) * pi_nodes() + k;
    }
    double t_node(int i) const { return horizon * i / nt; }
    double w_node(int j) const { return w_max * j / nw; }
    double pi_node(int k) const { return npi == 0 ? 0.0 : static_cast<double>(k) / npi; }

    double at(int i, int j, int k) const { return value[index(i, j, k)]; }

    // Trilinear interpolation of one of the stored fields.
    double interpolate(const std::vector<double>& field, double t, double w, double pi) const {
        auto locate = [](double x, double hi, int n) {
            const double u = std::clamp(hi > 0 ? x / hi : 0.0, 0.0, 1.0) * n;
            int i = static_cast<int>(u);
            if (i >= n) i = n - 1;
            return std::pair<int, double>(i, u - i);
        };
        const auto [it, ft] = locate(t, horizon, nt);
        const auto [iw, fw] = locate(w, w_max, nw);
        const auto [ip, fp] = npi == 0 ? std::pair<int, double>(0, 0.0) : locate(pi, 1.0, npi);
        double v = 0.0;
        for (int a = 0; a <= 1; ++a)
            for (int b = 0; b <= 1; ++b)
                for (int c = 0; c <= (npi == 0 ? 0 : 1); ++c)
                    v += field[index(it + a, iw + b, ip + c)] *
                         (a ? ft : 1 - ft) * (b ? fw : 1 - fw) * (c ? fp : 1 - fp);
        return v;
    }

    double value_at(double t, double w, double pi) const { return interpolate(value, t, w, pi); }
    double rate_at(double t, double w, double pi) const { return interpolate(rate, t, w, pi); }
};

// Optimal liquidation rate given the marginal cost C of selling: zero when
// the cost exceeds the unit marginal benefit, the cap when there is no
// temporary impact, otherwise the root of 1 - c_f (exponent+1) nu^exponent
// = C capped at nu_max. The C = 1 tie resolves to waiting.
inline double optimal_rate(const ModelSpec& spec, double cost) {
    const double nu_max = spec.nu_max;
    if (spec.impact.custom) {
        // Golden-section maximization of nu (1 - f(nu)) - nu C.
        auto g = [&](double nu) { return nu * (1.0 - temporary_impact(spec.impact, nu)) - nu * cost; };
        const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
        double lo = 0.0, hi = nu_max;
        double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
        double g1 = g(x1), g2 = g(x2);
        for (int it = 0; it < 200 && hi - lo > 1e-12 * nu_max; ++it) {
            if (g1 < g2) {
                lo = x1; x1 = x2; g1 = g2;
                x2 = lo + inv_phi * (hi - lo); g2 = g(x2);
            } else {
                hi = x2; x2 = x1; g2 = g1;
                x1 = hi - inv_phi * (hi - lo); g1 = g(x1);
            }
        }
        const double nu = 0.5 * (lo + hi);
        return g(nu) > 0.0 ? nu : 0.0;
    }
    if (cost >= 1.0) return 0.0;
    if (spec.impact.c_f == 0.0) return nu_max;
    const double root = std::pow((1.0 - cost) / (spec.impact.c_f * (spec.impact.exponent + 1.0)),
                                 1.0 / spec.impact.exponent);
    return std::min(root, nu_max);
}

namespace detail {

// Everything the node update needs that does not change across layers.
// Specialized to two regimes; the belief is the scalar pi = P(state 0).
struct SchemeContext {
    const ModelSpec* spec = nullptr;
    int nw = 0, npi = 0, J = 0;
    double dw = 0.0, dpi = 0.0;
    double nu_max = 0.0, rho = 0.0, c_f = 0.0, exponent = 1.0;
    bool custom_f = false;
    double f_at_numax = 0.0;  // f(nu_max)
    double interior_threshold = 0.0; // c_f (exponent+1) nu_max^exponent
    double d0 = 0.0, d1 = 0.0; // sum (b1-b2), sum a (b1-b2) over marks
    std::vector<double> one_plus_z, a;
    std::vector<double> gen1, wpi;           // per pi node
    std::vector<double> base;                // J x (npi+1): pi-mixed base rate
    std::vector<int> post_lo;                // J x (npi+1)
    std::vector<double> post_frac;           // J x (npi+1)

    double f_of(double nu) const {
        if (nu <= 0.0) return 0.0;
        if (custom_f) return temporary_impact(spec->impact, nu);
        if (c_f == 0.0) return 0.0;
        if (nu == nu_max) return f_at_numax;
        return c_f * std::pow(nu, exponent);
    }

    // argmax over one sign-segment: clamp the unconstrained maximizer.
    double segment_rate(double cost, double lo, double hi) const {
        double nu;
        if (custom_f) {
            nu = optimal_rate(*spec, cost);
        } else if (cost >= 1.0) {
            nu = 0.0;
        } else if (c_f == 0.0) {
            nu = nu_max;
        } else {
            const double margin = 1.0 - cost;
            nu = margin >= interior_threshold
                     ? nu_max
                     : std::pow(margin / (c_f * (exponent + 1.0)), 1.0 / exponent);
        }
        return std::clamp(nu, lo, hi);
    }
};

inline SchemeContext make_context(const ModelSpec& spec, int nw, int npi) {
    SchemeContext ctx;
    ctx.spec = &spec;
    ctx.nw = nw;
    ctx.npi = npi;
    ctx.J = spec.jumps.n_marks();
    ctx.dw = spec.w0 / nw;
    ctx.dpi = 1.0 / npi;
    ctx.nu_max = spec.nu_max;
    ctx.rho = spec.rho;
    ctx.c_f = spec.impact.c_f;
    ctx.exponent = spec.impact.exponent;
    ctx.custom_f = static_cast<bool>(spec.impact.custom);
    ctx.f_at_numax = temporary_impact(spec.impact, spec.nu_max);
    ctx.interior_threshold = ctx.custom_f ? 0.0
                                          : ctx.c_f * (ctx.exponent + 1.0) * std::pow(ctx.nu_max, ctx.exponent);
    ctx.one_plus_z.resize(ctx.J);
    ctx.a = spec.jumps.impact;
    for (int j = 0; j < ctx.J; ++j) {
        ctx.one_plus_z[j] = 1.0 + spec.jumps.marks[j];
        const double diff = spec.jumps.rate(0, j) - spec.jumps.rate(1, j);
        ctx.d0 += diff;
        ctx.d1 += ctx.a[j] * diff;
    }
    const int np1 = npi + 1;
    ctx.gen1.resize(np1);
    ctx.wpi.resize(np1);
    ctx.base.resize(static_cast<std::size_t>(ctx.J) * np1);
    ctx.post_lo.resize(ctx.base.size());
    ctx.post_frac.resize(ctx.base.size());
    for (int k = 0; k < np1; ++k) {
        const double pi = static_cast<double>(k) / npi;
        ctx.gen1[k] = spec.chain.q(0, 0) * pi + spec.chain.q(1, 0) * (1.0 - pi);
        ctx.wpi[k] = pi * (1.0 - pi);
        for (int j = 0; j < ctx.J; ++j) {
            const double b1 = spec.jumps.rate(0, j), b2 = spec.jumps.rate(1, j);
            const double mix = pi * b1 + (1.0 - pi) * b2;
            double post = mix > 0.0 ? pi * b1 / mix : pi; // Bayes posterior, nu-free
            post = std::clamp(post, 0.0, 1.0);
            const double u = post * npi;
            int lo = static_cast<int>(u);
            if (lo >= npi) lo = npi - 1;
            ctx.base[static_cast<std::size_t>(j) * np1 + k] = mix;
            ctx.post_lo[static_cast<std::size_t>(j) * np1 + k] = lo;
            ctx.post_frac[static_cast<std::size_t>(j) * np1 + k] = u - lo;
        }
    }
    return ctx;
}

// Self-node interpolation weight of mark m's posterior at belief node k.
inline double posterior_self_weight(const SchemeContext& ctx, int m, int k) {
    const std::size_t q = static_cast<std::size_t>(m) * (ctx.npi + 1) + k;
    if (ctx.post_lo[q] == k) return 1.0 - ctx.post_frac[q];
    if (ctx.post_lo[q] + 1 == k) return ctx.post_frac[q];
    return 0.0;
}

// One explicit step of the two-regime scheme applied to the layer at time
// t_src, writing the layer at t_src - dt. When dst is null only the
// optimal-rate and marginal-cost extraction runs. Throws on a stability
// violation, naming the offending node.
inline void step_layer_two_state(const SchemeContext& ctx, const double* src, double t_src,
                                 double dt, double* dst, double* rate_out, double* cost_out,
                                 double& min_self) {
    const int np1 = ctx.npi + 1;
    const double mt = ctx.spec->jumps.season(t_src);
    const double inv_dw = 1.0 / ctx.dw, inv_dpi = 1.0 / ctx.dpi;

    // w = 0 row: absorbing boundary, value pinned at zero, nothing to sell.
    for (int k = 0; k < np1; ++k) {
        if (dst) dst[k] = 0.0;
        if (rate_out) rate_out[k] = 0.0;
        if (cost_out) cost_out[k] = (src[np1 + k] - src[k]) * inv_dw; // one-sided, diagnostic only
    }

    std::vector<double> lam0(ctx.J), gterm(ctx.J), postv(ctx.J);
    for (int j = 1; j <= ctx.nw; ++j) {
        const double* row = src + static_cast<std::size_t>(j) * np1;
        const double* row_wm = row - np1;
        double* drow = dst ? dst + static_cast<std::size_t>(j) * np1 : nullptr;
        for (int k = 0; k < np1; ++k) {
            const double v = row[k];
            const double dvw = (v - row_wm[k]) * inv_dw;
            const double fwd = k < ctx.npi ? (row[k + 1] - v) * inv_dpi : 0.0;
            const double bwd = k > 0 ? (v - row[k - 1]) * inv_dpi : 0.0;

            // nu-affine pieces: belief drift zeta(nu) = A + B nu, jump sums
            // J(nu) = J0 + nu J1, total frequency Lam(nu) = L0 + nu L1.
            const double A = ctx.gen1[k] - ctx.wpi[k] * mt * ctx.d0;
            const double B = -ctx.wpi[k] * mt * ctx.d1;
            double J0 = 0.0, J1 = 0.0, L0 = 0.0, L1 = 0.0;
            for (int m = 0; m < ctx.J; ++m) {
                const std::size_t q = static_cast<std::size_t>(m) * np1 + k;
                const double lam = mt * ctx.base[q];
                const int lo = ctx.post_lo[q];
                const double fr = ctx.post_frac[q];
                const double pv = row[lo] + fr * (row[lo + 1] - row[lo]);
                const double g = ctx.one_plus_z[m] * pv - v;
                lam0[m] = lam;
                postv[m] = pv;
                gterm[m] = g;
                J0 += lam * g;
                J1 += lam * ctx.a[m] * g;
                L0 += lam;
                L1 += lam * ctx.a[m];
            }

            auto hamiltonian = [&](double nu) {
                const double zeta = A + B * nu;
                const double piterm = zeta > 0.0 ? zeta * fwd : (zeta < 0.0 ? zeta * bwd : 0.0);
                return -ctx.rho * v + nu * (1.0 - ctx.f_of(nu)) - nu * dvw + piterm + J0 + nu * J1;
            };
            auto cost_for = [&](double dpi_side) { return dvw - B * dpi_side - J1; };

            // Candidates: the segment-wise unconstrained maximizers, the
            // upwind kink where zeta changes sign, and the endpoints.
            double cand[5];
            int n_cand = 0;
            cand[n_cand++] = 0.0;
            cand[n_cand++] = ctx.nu_max;
            const double kink = (B != 0.0) ? -A / B : -1.0;
            const bool has_kink = B != 0.0 && kink > 0.0 && kink < ctx.nu_max;
            if (has_kink) {
                cand[n_cand++] = kink;
                const double side1 = (A > 0.0) ? fwd : bwd; // sign of zeta on [0, kink)
                const double side2 = (B > 0.0) ? fwd : bwd; // sign of zeta on (kink, nu_max]
                cand[n_cand++] = ctx.segment_rate(cost_for(side1), 0.0, kink);
                cand[n_cand++] = ctx.segment_rate(cost_for(side2), kink, ctx.nu_max);
            } else {
                const double zmid = A + B * (0.5 * ctx.nu_max);
                const double side = zmid > 0.0 ? fwd : (zmid < 0.0 ? bwd : 0.0);
                cand[n_cand++] = ctx.segment_rate(cost_for(side), 0.0, ctx.nu_max);
            }
            std::sort(cand, cand + n_cand);
            double best_nu = cand[0], best_h = hamiltonian(cand[0]);
            for (int c = 1; c < n_cand; ++c) {
                if (cand[c] == cand[c - 1]) continue;
                const double h = hamiltonian(cand[c]);
                if (h > best_h) { best_h = h; best_nu = cand[c]; }
            }

            if (rate_out) rate_out[static_cast<std::size_t>(j) * np1 + k] = best_nu;
            if (cost_out) {
                // side of the upwind pi-difference at the chosen rate; when
                // the drift vanishes exactly, its slope in nu decides
                const double zstar = A + B * best_nu;
                const double side =
                    (zstar > 0.0 || (zstar == 0.0 && B > 0.0))
                        ? fwd
                        : ((zstar < 0.0 || (zstar == 0.0 && B < 0.0)) ? bwd : 0.0);
                cost_out[static_cast<std::size_t>(j) * np1 + k] = cost_for(side);
            }

            if (drow) {
                const double zstar = A + B * best_nu;
                const double lam_tot = L0 + best_nu * L1;
                const double self = 1.0 - dt * (ctx.rho + best_nu * inv_dw +
                                                std::abs(zstar) * inv_dpi + lam_tot);
                // The posterior interpolation returns weight to the node
                // itself; the summed coefficient is the monotonicity-relevant
                // one.
                double feedback = 0.0;
                for (int m = 0; m < ctx.J; ++m)
                    feedback += lam0[m] * (1.0 + ctx.a[m] * best_nu) * ctx.one_plus_z[m] *
                                posterior_self_weight(ctx, m, k);
                const double self_total = self + dt * feedback;
                if (self_total < -1e-12)
                    throw std::runtime_error(
                        "explicit step violates the stability bound at node (t=" +
                        std::to_string(t_src) + ", w_index=" + std::to_string(j) +
                        ", pi_index=" + std::to_string(k) + "); reduce dt");
                min_self = std::min(min_self, self_total);
                double acc = self * v + dt * best_nu * ((1.0 - ctx.f_of(best_nu)) + inv_dw * row_wm[k]);
                if (zstar > 0.0)
                    acc += dt * zstar * inv_dpi * row[k + 1];
                else if (zstar < 0.0)
                    acc += dt * (-zstar) * inv_dpi * row[k - 1];
                for (int m = 0; m < ctx.J; ++m)
                    acc += dt * lam0[m] * (1.0 + ctx.a[m] * best_nu) * ctx.one_plus_z[m] * postv[m];
                drow[k] = acc;
            }
        }
    }
}

// Largest step keeping every summed stencil coefficient nonnegative. The
// jump term (1+z) V(pi_post) feeds weight back onto the node itself, which
// offsets the -lambda drain; accounting for that keeps the transport CFL
// close to one instead of being throttled by the event intensity. The
// bracket is affine in nu, so its endpoints bound it.
inline double stable_dt_two_state(const SchemeContext& ctx) {
    const ModelSpec& spec = *ctx.spec;
    const double lo = spec.jumps.season.lo, hi = spec.jumps.season.hi;
    double worst = 0.0;
    for (int k = 0; k <= ctx.npi; ++k) {
        for (double nu : {0.0, ctx.nu_max}) {
            const double zeta_abs =
                std::max(std::abs(ctx.gen1[k] - ctx.wpi[k] * lo * (ctx.d0 + nu * ctx.d1)),
                         std::abs(ctx.gen1[k] - ctx.wpi[k] * hi * (ctx.d0 + nu * ctx.d1)));
            double jump_drain = 0.0;
            for (int m = 0; m < ctx.J; ++m) {
                const std::size_t q = static_cast<std::size_t>(m) * (ctx.npi + 1) + k;
                const double coef = ctx.base[q] * (1.0 + ctx.a[m] * nu) *
                                    (1.0 - ctx.one_plus_z[m] * posterior_self_weight(ctx, m, k));
                jump_drain += coef * (coef > 0.0 ? hi : lo);
            }
            worst = std::max(worst, spec.rho + nu / ctx.dw + zeta_abs / ctx.dpi + jump_drain);
        }
    }
    // hair below the exact limit so roundoff cannot push a self-coefficient
    // negative
    return (1.0 - 1e-9) / worst;
}

} // namespace detail

// Marginal cost of raising the liquidation rate at one grid node: the upwind
// w-difference plus the belief-drift and jump-measure sensitivities, with
// posterior values linearly interpolated in pi. The pi-difference side
// follows the sign of the belief drift at nu = 0 (the scheme resolves the
// nu-dependent side change internally when maximizing).
inline double marginal_cost(const ModelSpec& spec, const Grid& grid,
                            const std::vector<double>& layer, double t, int w_index, int pi_index) {
    if (spec.chain.states != 2) throw std::invalid_argument("marginal_cost needs a two-regime model");
    detail::SchemeContext ctx = detail::make_context(spec, grid.nw, grid.npi);
    const int np1 = grid.npi + 1;
    if (layer.size() != static_cast<std::size_t>(grid.nw + 1) * np1)
        throw std::invalid_argument("layer size does not match the grid");
    if (w_index < 1 || w_index > grid.nw || pi_index < 0 || pi_index > grid.npi)
        throw std::domain_error("node index out of range");
    const double mt = spec.jumps.season(t);
    const double* row = layer.data() + static_cast<std::size_t>(w_index) * np1;
    const double* row_wm = row - np1;
    const double v = row[pi_index];
    const double dvw = (v - row_wm[pi_index]) / ctx.dw;
    const double fwd = pi_index < grid.npi ? (row[pi_index + 1] - v) / ctx.dpi : 0.0;
    const double bwd = pi_index > 0 ? (v - row[pi_index - 1]) / ctx.dpi : 0.0;
    const double A = ctx.gen1[pi_index] - ctx.wpi[pi_index] * mt * ctx.d0;
    const double B = -ctx.wpi[pi_index] * mt * ctx.d1;
    double J1 = 0.0;
    for (int m = 0; m < ctx.J; ++m) {
        const std::size_t q = static_cast<std::size_t>(m) * np1 + pi_index;
        const double pv = row[ctx.post_lo[q]] +
                          ctx.post_frac[q] * (row[ctx.post_lo[q] + 1] - row[ctx.post_lo[q]]);
        J1 += mt * ctx.base[q] * ctx.a[m] * (ctx.one_plus_z[m] * pv - v);
    }
    const double side = (A > 0.0 || (A == 0.0 && B > 0.0))
                            ? fwd
                            : ((A < 0.0 || (A == 0.0 && B < 0.0)) ? bwd : 0.0);
    return dvw - B * side - J1;
}

struct StepResult {
    std::vector<double> value; // layer at t - dt
    std::vector<double> rate;  // maximizers used for the update
    std::vector<double> cost;
    double min_self_weight = 1.0;
};

// Single explicit step of the two-regime scheme from the layer at time
// t_node(t_index) to the previous time node.
inline StepResult step(const ModelSpec& spec, const Grid& grid, const std::vector<double>& layer,
                       int t_index) {
    if (spec.chain.states != 2) throw std::invalid_argument("step needs a two-regime model");
    const double dt = spec.horizon / grid.nt;
    detail::SchemeContext ctx = detail::make_context(spec, grid.nw, grid.npi);
    StepResult out;
    out.value.assign(layer.size(), 0.0);
    out.rate.assign(layer.size(), 0.0);
    out.cost.assign(layer.size(), 0.0);
    detail::step_layer_two_state(ctx, layer.data(), spec.horizon * t_index / grid.nt, dt,
                                 out.value.data(), out.rate.data(), out.cost.data(),
                                 out.min_self_weight);
    return out;
}

// Solves the dynamic-programming equation for the two-regime model by the
// explicit monotone upwind scheme, sweeping backward from the terminal
// condition V(T, w, pi) = h(w). The internal time step obeys the CFL bound
// (the stored resolution is refined automatically and reported in
// effective_dt).
inline ValueField solve(const ModelSpec& spec, const Grid& grid) {
    if (spec.chain.states != 2)
        throw std::invalid_argument(
            "solve handles exactly two regimes; use solve_deterministic for one");
    if (grid.nt < 1 || grid.nw < 1 || grid.npi < 1)
        throw std::invalid_argument("grid needs at least one interval per axis");
    validate(spec);

    detail::SchemeContext ctx = detail::make_context(spec, grid.nw, grid.npi);
    const double dt_store = spec.horizon / grid.nt;
    double dt_limit = detail::stable_dt_two_state(ctx);
    if (grid.dt_cap > 0.0) dt_limit = std::min(dt_limit, grid.dt_cap);
    // Substep greedily: full steps at the stability limit plus one remainder
    // per stored interval. Steps near the limit keep the transport CFL close
    // to one, which is where the upwind scheme is sharpest.
    const double dt_eff = std::min(dt_store, dt_limit);
    const int n_full = std::max(0, static_cast<int>(std::floor(dt_store / dt_limit - 1e-12)));
    const double dt_rem = dt_store - n_full * dt_limit;

    ValueField field;
    field.horizon = spec.horizon;
    field.w_max = spec.w0;
    field.nt = grid.nt;
    field.nw = grid.nw;
    field.npi = grid.npi;
    field.effective_dt = dt_eff;
    const std::size_t layer_size = static_cast<std::size_t>(grid.nw + 1) * (grid.npi + 1);
    field.value.resize(layer_size * (grid.nt + 1));
    field.rate.resize(field.value.size());
    field.cost.resize(field.value.size());

    std::vector<double> cur(layer_size), next(layer_size);
    for (int j = 0; j <= grid.nw; ++j) {
        const double h = terminal_value(spec.terminal, field.w_node(j));
        for (int k = 0; k <= grid.npi; ++k) cur[static_cast<std::size_t>(j) * (grid.npi + 1) + k] = h;
    }
    double min_self = 1.0;
    auto store = [&](int i) {
        double* v = field.value.data() + field.index(i, 0, 0);
        std::copy(cur.begin(), cur.end(), v);
        detail::step_layer_two_state(ctx, cur.data(), field.t_node(i), 0.0, nullptr,
                                     field.rate.data() + field.index(i, 0, 0),
                                     field.cost.data() + field.index(i, 0, 0), min_self);
    };
    store(grid.nt);
    for (int i = grid.nt - 1; i >= 0; --i) {
        double elapsed = 0.0;
        for (int s = 0; s < n_full + 1; ++s) {
            const double h = s < n_full ? dt_limit : dt_rem;
            if (h < 1e-12 * dt_store) break;
            detail::step_layer_two_state(ctx, cur.data(), field.t_node(i + 1) - elapsed, h,
                                         next.data(), nullptr, nullptr, min_self);
            cur.swap(next);
            elapsed += h;
        }
        store(i);
    }
    field.min_self_weight = min_self;
    return field;
}

// Single-regime benchmark solver for the equation
// dV/dt - rho V + sup_nu { nu (1 - f(nu)) - nu dV/dw + eta(nu) V } = 0,
// backward from h. The belief axis is absent.
inline ValueField solve_deterministic(const ModelSpec& spec, const Grid& grid) {
    if (spec.chain.states != 1)
        throw std::invalid_argument("solve_deterministic needs a single-regime model");
    if (grid.nt < 1 || grid.nw < 1)
        throw std::invalid_argument("grid needs at least one interval per axis");
    validate(spec);

    const int J = spec.jumps.n_marks();
    const double dw = spec.w0 / grid.nw;
    double sum_b = 0.0, sum_ab = 0.0, e0 = 0.0, e1 = 0.0, s0m = 0.0, s1m = 0.0;
    for (int j = 0; j < J; ++j) {
        const double b = spec.jumps.rate(0, j), a = spec.jumps.impact[j], z = spec.jumps.marks[j];
        sum_b += b;
        sum_ab += a * b;
        e0 += b * z;
        e1 += a * b * z;
        s0m += b * (1.0 + z);
        s1m += a * b * (1.0 + z);
    }
    // Summed-coefficient CFL bound: the jump term returns (1+z) V weight to
    // the same node, so only the net drain -eta(nu) constrains the step.
    double worst = 0.0;
    for (double nu : {0.0, spec.nu_max})
        for (double mt : {spec.jumps.season.lo, spec.jumps.season.hi})
            worst = std::max(worst, spec.rho + nu / dw - mt * (e0 + nu * e1));
    double dt_limit = (1.0 - 1e-9) / worst;
    if (grid.dt_cap > 0.0) dt_limit = std::min(dt_limit, grid.dt_cap);
    const double dt_store = spec.horizon / grid.nt;
    const double dt = std::min(dt_store, dt_limit);
    const int n_full = std::max(0, static_cast<int>(std::floor(dt_store / dt_limit - 1e-12)));
    const double dt_rem = dt_store - n_full * dt_limit;

    ValueField field;
    field.horizon = spec.horizon;
    field.w_max = spec.w0;
    field.nt = grid.nt;
    field.nw = grid.nw;
    field.npi = 0;
    field.effective_dt = dt;
    field.value.resize(static_cast<std::size_t>(grid.nt + 1) * (grid.nw + 1));
    field.rate.resize(field.value.size());
    field.cost.resize(field.value.size());

    std::vector<double> cur(grid.nw + 1), next(grid.nw + 1);
    for (int j = 0; j <= grid.nw; ++j) cur[j] = terminal_value(spec.terminal, field.w_node(j));

    double min_self = 1.0;
    auto extract = [&](double t, const std::vector<double>& layer, double* rate_out,
                       double* cost_out) {
        const double mt = spec.jumps.season(t);
        rate_out[0] = 0.0;
        cost_out[0] = (layer[1] - layer[0]) / dw;
        for (int j = 1; j <= grid.nw; ++j) {
            const double c = (layer[j] - layer[j - 1]) / dw - mt * e1 * layer[j];
            rate_out[j] = optimal_rate(spec, c);
            cost_out[j] = c;
        }
    };
    auto sweep_step = [&](double t_src, double h, const std::vector<double>& src,
                          std::vector<double>& dst) {
        const double mt = spec.jumps.season(t_src);
        dst[0] = 0.0;
        for (int j = 1; j <= grid.nw; ++j) {
            const double v = src[j];
            const double c = (v - src[j - 1]) / dw - mt * e1 * v;
            const double nu = optimal_rate(spec, c);
            const double lam_tot = mt * (sum_b + nu * sum_ab);
            const double self = 1.0 - h * (spec.rho + nu / dw + lam_tot);
            const double self_total = self + h * mt * (s0m + nu * s1m);
            if (self_total < -1e-12)
                throw std::runtime_error("explicit step violates the stability bound at node (t=" +
                                         std::to_string(t_src) + ", w_index=" + std::to_string(j) +
                                         "); reduce dt");
            min_self = std::min(min_self, self_total);
            dst[j] = self * v +
                     h * (nu * (1.0 - temporary_impact(spec.impact, nu)) + (nu / dw) * src[j - 1] +
                          mt * (s0m + nu * s1m) * v);
        }
    };

    auto store = [&](int i) {
        std::copy(cur.begin(), cur.end(), field.value.begin() + field.index(i, 0, 0));
        extract(field.t_node(i), cur, field.rate.data() + field.index(i, 0, 0),
                field.cost.data() + field.index(i, 0, 0));
    };
    store(grid.nt);
    for (int i = grid.nt - 1; i >= 0; --i) {
        double elapsed = 0.0;
        for (int s = 0; s < n_full + 1; ++s) {
            const double h = s < n_full ? dt_limit : dt_rem;
            if (h < 1e-12 * dt_store) break;
            sweep_step(field.t_node(i + 1) - elapsed, h, cur, next);
            cur.swap(next);
            elapsed += h;
        }
        store(i);
    }
    field.min_self_weight = min_self;
    return field;
}

// Closed-form value of the single-regime configuration with downward-trending
// price, no temporary impact, no discounting and zero terminal value:
// (nu_max / eta) (exp(eta min(w/nu_max, T - t)) - 1) with
// eta = theta (c_up - c_down (1 + a nu_max)) < 0.
inline double closed_form_oracle(double theta, double c_up, double c_down, double a,
                                 double nu_max, double T, double t, double w) {
    if (!(theta > 0.0)) throw std::domain_error("theta must be positive");
    if (!(c_up < c_down)) throw std::domain_error("oracle requires c_up < c_down");
    if (a < 0.0 || !(nu_max > 0.0)) throw std::domain_error("invalid impact or rate cap");
    if (t < 0.0 || t > T) throw std::domain_error("t outside [0, T]");
    if (w < 0.0) throw std::domain_error("negative inventory");
    const double eta = theta * (c_up - c_down * (1.0 + a * nu_max));
    const double span = std::min(w / nu_max, T - t);
    return nu_max / eta * std::expm1(eta * span);
}

// Wraps a solved field as a simulation policy: feedback in (t, w, pi) for
// two-regime fields, deterministic in (t, w) for single-regime ones.
inline Policy make_policy(const ValueField& field) {
    if (field.npi == 0)
        return Policy::deterministic(field.horizon, field.w_max, field.nt, field.nw, field.rate);
    return Policy::feedback(field.horizon, field.w_max, field.nt, field.nw, field.npi, field.rate);
}

// Parameters of the closed-form configuration extracted from a ModelSpec
// whose jump measure is state-independent with one up and one down mark.
struct OracleParams {
    double theta = 0.0, c_up = 0.0, c_down = 0.0, a = 0.0;
};

inline OracleParams counterexample_params(const ModelSpec& spec) {
    OracleParams p;
    if (spec.jumps.n_marks() != 2)
        throw std::invalid_argument("oracle configuration needs exactly two marks");
    int up = spec.jumps.marks[0] > 0.0 ? 0 : 1;
    int down = 1 - up;
    if (!(spec.jumps.marks[up] > 0.0) || !(spec.jumps.marks[down] < 0.0) ||
        std::abs(spec.jumps.marks[up] + spec.jumps.marks[down]) > 1e-15)
        throw std::invalid_argument("oracle configuration needs marks +theta/-theta");
    for (int k = 1; k < spec.chain.states; ++k)
        for (int j = 0; j < 2; ++j)
            if (spec.jumps.rate(k, j) != spec.jumps.rate(0, j))
                throw std::invalid_argument("oracle configuration needs state-independent rates");
    if (spec.jumps.impact[up] != 0.0)
        throw std::invalid_argument("oracle configuration allows impact on the down mark only");
    if (spec.rho != 0.0 || spec.impact.c_f != 0.0 || spec.impact.custom ||
        spec.terminal.form != TerminalSpec::Form::zero)
        throw std::invalid_argument("oracle configuration needs rho = 0, f = 0, h = 0");
    p.theta = spec.jumps.marks[up];
    p.c_up = spec.jumps.rate(0, up);
    p.c_down = spec.jumps.rate(0, down);
    p.a = spec.jumps.impact[down];
    if (!(p.c_up < p.c_down))
        throw std::invalid_argument("oracle configuration requires c_up < c_down");
    return p;
}

// Normalized sup-norm error of a solved field against the closed form:
// max |V - oracle| / max |oracle| over all stored nodes.
inline double oracle_error(const ModelSpec& spec, const ValueField& field) {
    const OracleParams p = counterexample_params(spec);
    double worst = 0.0, scale = 0.0;
    for (int i = 0; i <= field.nt; ++i)
        for (int j = 0; j <= field.nw; ++j) {
            const double ref = closed_form_oracle(p.theta, p.c_up, p.c_down, p.a, spec.nu_max,
                                                  spec.horizon, field.t_node(i), field.w_node(j));
            scale = std::max(scale, std::abs(ref));
            for (int k = 0; k <= field.npi; ++k)
                worst = std::max(worst, std::abs(field.at(i, j, k) - ref));
        }
    return worst / scale;
}

} // namespace liq
