#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "liq/model.hpp"
#include "liq/rng.hpp"

using namespace liq;
using liq::testing::baseline_two_state;

TEST_CASE("intensity matches the baseline parameter table") {
    const ModelSpec spec = baseline_two_state();
    // good state, down mark, no selling
    CHECK(intensity(spec, 0.0, 0, 0.0, 1) == doctest::Approx(900.0));
    // bad state, down mark, selling at 9000: 1000 * (1 + 7e-6 * 9000)
    CHECK(intensity(spec, 1.0, 1, 9000.0, 1) == doctest::Approx(1000.0 * 1.063).epsilon(1e-12));
    // marks without impact coefficient are rate-independent
    CHECK(intensity(spec, 0.5, 0, 7000.0, 0) == intensity(spec, 0.5, 0, 0.0, 0));
}

TEST_CASE("intensity is affine and nondecreasing in the liquidation rate") {
    const ModelSpec spec = baseline_two_state();
    Rng rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        const double t = rng.next_double() * spec.horizon;
        const int k = static_cast<int>(rng.next_u64() % 2);
        const int j = static_cast<int>(rng.next_u64() % 2);
        const double n1 = rng.next_double() * spec.nu_max;
        const double n2 = rng.next_double() * spec.nu_max;
        const double i0 = intensity(spec, t, k, 0.0, j);
        const double slope = intensity(spec, t, k, 1.0, j) - i0;
        CHECK(slope >= 0.0);
        CHECK(intensity(spec, t, k, n1, j) == doctest::Approx(i0 + slope * n1).epsilon(1e-9));
        if (n2 >= n1) CHECK(intensity(spec, t, k, n2, j) >= intensity(spec, t, k, n1, j));
    }
}

TEST_CASE("intensity rejects out-of-range arguments") {
    const ModelSpec spec = baseline_two_state();
    CHECK_THROWS_AS(intensity(spec, -0.1, 0, 0.0, 0), std::domain_error);
    CHECK_THROWS_AS(intensity(spec, 3.0, 0, 0.0, 0), std::domain_error);
    CHECK_THROWS_AS(intensity(spec, 0.0, 0, 9001.0, 0), std::domain_error);
    CHECK_THROWS_AS(intensity(spec, 0.0, 0, -1.0, 0), std::domain_error);
    CHECK_THROWS_AS(intensity(spec, 0.0, 2, 0.0, 0), std::domain_error);
    CHECK_THROWS_AS(intensity(spec, 0.0, 0, 0.0, 5), std::domain_error);
}

TEST_CASE("mean return rate") {
    const ModelSpec spec = baseline_two_state();
    // good state, no selling: 0.001 * (1000 - 900)
    CHECK(mean_return_rate(spec, 0.0, 0, 0.0) == doctest::Approx(0.1).epsilon(1e-12));
    // bad state mirrors it
    CHECK(mean_return_rate(spec, 0.0, 1, 0.0) == doctest::Approx(-0.1).epsilon(1e-12));

    SUBCASE("symmetric marks with equal rates cancel") {
        ModelSpec sym = spec;
        sym.jumps.rates = {700.0, 700.0, 800.0, 800.0};
        sym.jumps.impact = {0.0, 0.0};
        CHECK(mean_return_rate(sym, 0.0, 0, 5000.0) == doctest::Approx(0.0));
    }

    SUBCASE("linear impact form of the one-regime example") {
        // eta(nu) = theta (c_up - c_down (1 + a nu))
        const ModelSpec one = liq::testing::falling_market_single();
        const double theta = 0.001, c_up = 900.0, c_down = 1000.0, a = 7e-6;
        for (double nu : {0.0, 1000.0, 4500.0, 9000.0})
            CHECK(mean_return_rate(one, 0.3, 0, nu) ==
                  doctest::Approx(theta * (c_up - c_down * (1.0 + a * nu))).epsilon(1e-12));
    }

    SUBCASE("nonincreasing in nu when impact sits on negative marks") {
        Rng rng(7);
        for (int trial = 0; trial < 50; ++trial) {
            ModelSpec random = spec;
            random.jumps.rates = {500 + 1000 * rng.next_double(), 500 + 1000 * rng.next_double(),
                                  500 + 1000 * rng.next_double(), 500 + 1000 * rng.next_double()};
            random.jumps.impact = {0.0, 1e-5 * rng.next_double()};
            double prev = mean_return_rate(random, 0.0, 0, 0.0);
            for (double nu = 1000; nu <= 9000; nu += 1000) {
                const double cur = mean_return_rate(random, 0.0, 0, nu);
                CHECK(cur <= prev + 1e-12);
                prev = cur;
            }
        }
    }
}

TEST_CASE("value upper bound") {
    const ModelSpec spec = baseline_two_state();
    const double eta_bar = 0.1 - 0.00005;
    const double expected = 6000.0 * std::exp(eta_bar * 2.0);
    CHECK(value_upper_bound(spec) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(value_upper_bound(spec) == doctest::Approx(7327.8).epsilon(2e-5));

    SUBCASE("drift below the discount rate gives the book value") {
        ModelSpec flat = spec;
        flat.rho = 0.2; // above the 0.1/day best drift
        CHECK(value_upper_bound(flat) == doctest::Approx(6000.0));
    }
    SUBCASE("linear in the initial price") {
        ModelSpec doubled = spec;
        doubled.s0 = 2.0;
        CHECK(value_upper_bound(doubled) == doctest::Approx(2.0 * value_upper_bound(spec)));
    }
    SUBCASE("nondecreasing in inventory, price, horizon") {
        ModelSpec m = spec;
        const double base = value_upper_bound(spec);
        m.w0 = 7000;
        CHECK(value_upper_bound(m) >= base);
        m = spec;
        m.s0 = 1.5;
        CHECK(value_upper_bound(m) >= base);
        m = spec;
        m.horizon = 3.0;
        CHECK(value_upper_bound(m) >= base);
    }
}

TEST_CASE("validation catches broken specifications") {
    using Catch = std::invalid_argument;
    ModelSpec good = baseline_two_state();
    CHECK(validate(good).empty());

    SUBCASE("generator rows must sum to zero") {
        ModelSpec bad = good;
        bad.chain.generator = {-4.0, 4.5, 4.0, -4.0};
        CHECK_THROWS_AS(validate(bad), Catch);
    }
    SUBCASE("off-diagonal entries nonnegative") {
        ModelSpec bad = good;
        bad.chain.generator = {4.0, -4.0, 4.0, -4.0};
        CHECK_THROWS_AS(validate(bad), Catch);
    }
    SUBCASE("initial law on the simplex") {
        ModelSpec bad = good;
        bad.chain.initial = {0.7, 0.4};
        CHECK_THROWS_AS(validate(bad), Catch);
    }
    SUBCASE("marks must keep the price positive") {
        ModelSpec bad = good;
        bad.jumps.marks = {0.001, -1.0};
        CHECK_THROWS_AS(validate(bad), Catch);
    }
    SUBCASE("marks active in one state only break the filter") {
        ModelSpec bad = good;
        bad.jumps.rates = {1000.0, 900.0, 0.0, 1000.0};
        CHECK_THROWS_AS(validate(bad), Catch);
    }
    SUBCASE("rate cap must allow full liquidation") {
        ModelSpec bad = good;
        bad.nu_max = 2999.0;
        CHECK_THROWS_AS(validate(bad), Catch);
        bad.nu_max = 3000.0; // w0 / horizon exactly is still infeasible
        CHECK_THROWS_AS(validate(bad), Catch);
    }
    SUBCASE("excessive temporary impact is a warning, not an error") {
        ModelSpec warned = good;
        warned.impact.c_f = 1.0;
        const auto warnings = validate(warned);
        REQUIRE(!warnings.empty());
        CHECK(warnings.front().find("negative") != std::string::npos);
    }
    SUBCASE("terminal value above book is rejected") {
        ModelSpec bad = good;
        bad.terminal.form = TerminalSpec::Form::custom;
        bad.terminal.custom = [](double w) { return 1.5 * w; };
        CHECK_THROWS_AS(validate(bad), Catch);
    }
    SUBCASE("saturating terminal form passes") {
        ModelSpec sat = good;
        sat.terminal.form = TerminalSpec::Form::saturating;
        sat.terminal.saturation = 0.001;
        CHECK(validate(sat).empty());
        CHECK(terminal_value(sat.terminal, 0.0) == 0.0);
        CHECK(terminal_value(sat.terminal, 1000.0) == doctest::Approx(1000.0 / 2.0));
    }
}

TEST_CASE("stationary distribution and the averaged benchmark") {
    const ModelSpec spec = baseline_two_state();
    const auto st = stationary_distribution(spec.chain);
    CHECK(st[0] == doctest::Approx(0.5));
    CHECK(st[1] == doctest::Approx(0.5));

    ChainSpec skew;
    skew.states = 2;
    skew.generator = {-2.0, 2.0, 6.0, -6.0};
    skew.initial = {0.5, 0.5};
    const auto st2 = stationary_distribution(skew);
    CHECK(st2[0] == doctest::Approx(0.75));
    CHECK(st2[1] == doctest::Approx(0.25));

    const ModelSpec det = deterministic_benchmark(spec);
    CHECK(det.chain.states == 1);
    CHECK(det.jumps.rates[0] == doctest::Approx(950.0));
    CHECK(det.jumps.rates[1] == doctest::Approx(950.0));
    CHECK(validate(det).empty());
}

TEST_CASE("maximum total intensity bounds every state and rate") {
    const ModelSpec spec = baseline_two_state();
    const double bound = max_total_intensity(spec);
    CHECK(bound == doctest::Approx(900.0 + 1000.0 * 1.063));
    for (double nu : {0.0, 4500.0, 9000.0})
        for (int k = 0; k < 2; ++k) CHECK(total_intensity(spec, 0.7, k, nu) <= bound + 1e-9);
}
