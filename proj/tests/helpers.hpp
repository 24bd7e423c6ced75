#pragma once

#include "liq/model.hpp"

namespace liq::testing {

// Baseline two-regime market: good state 0 (up 1000, down 900), bad state 1
// (up 900, down 1000), symmetric generator 4/day, tick 0.001, permanent
// impact 7e-6 on the down mark.
inline ModelSpec baseline_two_state() {
    ModelSpec spec;
    spec.chain.states = 2;
    spec.chain.generator = {-4.0, 4.0, 4.0, -4.0};
    spec.chain.initial = {0.5, 0.5};
    spec.jumps.marks = {0.001, -0.001};
    spec.jumps.rates = {1000.0, 900.0, 900.0, 1000.0};
    spec.jumps.impact = {0.0, 7e-6};
    spec.impact.c_f = 5e-11;
    spec.impact.exponent = 0.6;
    spec.rho = 0.00005;
    spec.horizon = 2.0;
    spec.w0 = 6000.0;
    spec.s0 = 1.0;
    spec.nu_max = 9000.0;
    return spec;
}

// Single-regime falling market with a closed-form value function:
// c_up = 900 < c_down = 1000, impact on the down mark, no friction.
inline ModelSpec falling_market_single() {
    ModelSpec spec;
    spec.chain.states = 1;
    spec.chain.generator = {0.0};
    spec.chain.initial = {1.0};
    spec.jumps.marks = {0.001, -0.001};
    spec.jumps.rates = {900.0, 1000.0};
    spec.jumps.impact = {0.0, 7e-6};
    spec.impact.c_f = 0.0;
    spec.rho = 0.0;
    spec.horizon = 2.0;
    spec.w0 = 6000.0;
    spec.s0 = 1.0;
    spec.nu_max = 9000.0;
    return spec;
}

// The same market written as two identical regimes with a frozen chain, so
// the full two-regime solver runs on it.
inline ModelSpec falling_market_twin() {
    ModelSpec spec = falling_market_single();
    spec.chain.states = 2;
    spec.chain.generator = {0.0, 0.0, 0.0, 0.0};
    spec.chain.initial = {0.5, 0.5};
    spec.jumps.rates = {900.0, 1000.0, 900.0, 1000.0};
    return spec;
}

// Single regime, single zero-rate mark: a market where nothing ever happens.
inline ModelSpec quiet_single_state(double nu_max_mult = 2.0) {
    ModelSpec spec;
    spec.chain.states = 1;
    spec.chain.generator = {0.0};
    spec.chain.initial = {1.0};
    spec.jumps.marks = {0.001};
    spec.jumps.rates = {0.0};
    spec.jumps.impact = {0.0};
    spec.impact.c_f = 0.0;
    spec.rho = 0.0;
    spec.horizon = 1.0;
    spec.w0 = 1000.0;
    spec.s0 = 1.0;
    spec.nu_max = nu_max_mult * 1000.0;
    return spec;
}

} // namespace liq::testing
