#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace liq {

namespace detail {

// Uniform axis over [0, hi] with n intervals; returns (index, fraction) for
// clamped linear interpolation.
struct UniformAxis {
    double hi = 1.0;
    int n = 1;

    std::pair<int, double> locate(double x) const {
        if (n == 0) return {0, 0.0};
        const double u = std::clamp(x / hi, 0.0, 1.0) * n;
        int i = static_cast<int>(u);
        if (i >= n) i = n - 1;
        return {i, u - i};
    }
};

} // namespace detail

// Liquidation policy: a measurable feedback map (t, w, pi) -> rate in
// [0, nu_max]. Tabular kinds interpolate multilinearly on uniform grids and
// clamp continuous coordinates to the table range.
class Policy {
public:
    enum class Kind { constant, deterministic, feedback, bang_bang };

    static Policy constant(double rate) {
        Policy p;
        p.kind_ = Kind::constant;
        p.cap_ = std::max(0.0, rate);
        return p;
    }

    // Sell at full speed while the belief in the good regime is at or below
    // the threshold, otherwise wait.
    static Policy bang_bang(double pi_threshold, double rate) {
        Policy p;
        p.kind_ = Kind::bang_bang;
        p.threshold_ = pi_threshold;
        p.cap_ = std::max(0.0, rate);
        return p;
    }

    // Rate table over (t, w), t-major. nt/nw are interval counts; the table
    // holds (nt+1)*(nw+1) nodes.
    static Policy deterministic(double horizon, double w_max, int nt, int nw,
                                std::vector<double> table) {
        Policy p;
        p.kind_ = Kind::deterministic;
        p.t_axis_ = {horizon, nt};
        p.w_axis_ = {w_max, nw};
        p.table_ = std::move(table);
        p.check_table((nt + 1) * (nw + 1));
        return p;
    }

    // Rate table over (t, w, pi), t-major then w then pi.
    static Policy feedback(double horizon, double w_max, int nt, int nw, int npi,
                           std::vector<double> table) {
        Policy p;
        p.kind_ = Kind::feedback;
        p.t_axis_ = {horizon, nt};
        p.w_axis_ = {w_max, nw};
        p.pi_axis_ = {1.0, npi};
        p.table_ = std::move(table);
        p.check_table((nt + 1) * (nw + 1) * (npi + 1));
        return p;
    }

    Kind kind() const { return kind_; }

    double operator()(double t, double w, double pi) const {
        switch (kind_) {
            case Kind::constant:
                return cap_;
            case Kind::bang_bang:
                return pi <= threshold_ ? cap_ : 0.0;
            case Kind::deterministic: {
                const auto [it, ft] = t_axis_.locate(t);
                const auto [iw, fw] = w_axis_.locate(w);
                const int nw1 = w_axis_.n + 1;
                auto at = [&](int a, int b) { return table_[static_cast<std::size_t>(a) * nw1 + b]; };
                const double lo = at(it, iw) * (1 - fw) + at(it, iw + 1) * fw;
                const double hi = at(it + 1, iw) * (1 - fw) + at(it + 1, iw + 1) * fw;
                return std::clamp(lo * (1 - ft) + hi * ft, 0.0, cap_);
            }
            case Kind::feedback: {
                const auto [it, ft] = t_axis_.locate(t);
                const auto [iw, fw] = w_axis_.locate(w);
                const auto [ip, fp] = pi_axis_.locate(pi);
                const int np1 = pi_axis_.n + 1;
                const int nw1 = w_axis_.n + 1;
                auto at = [&](int a, int b, int c) {
                    return table_[(static_cast<std::size_t>(a) * nw1 + b) * np1 + c];
                };
                double v = 0.0;
                for (int dt_ = 0; dt_ <= 1; ++dt_)
                    for (int dw_ = 0; dw_ <= 1; ++dw_)
                        for (int dp_ = 0; dp_ <= 1; ++dp_)
                            v += at(it + dt_, iw + dw_, ip + dp_) *
                                 (dt_ ? ft : 1 - ft) * (dw_ ? fw : 1 - fw) * (dp_ ? fp : 1 - fp);
                return std::clamp(v, 0.0, cap_);
            }
        }
        return 0.0;
    }

private:
    void check_table(std::size_t expected) {
        if (table_.size() != expected)
            throw std::invalid_argument("policy table size does not match its grid");
        cap_ = 0.0;
        for (double v : table_) {
            if (v < 0.0) throw std::invalid_argument("policy rates must be nonnegative");
            cap_ = std::max(cap_, v);
        }
    }

    Kind kind_ = Kind::constant;
    double cap_ = 0.0;
    double threshold_ = 0.0;
    detail::UniformAxis t_axis_, w_axis_, pi_axis_;
    std::vector<double> table_;
};

} // namespace liq
