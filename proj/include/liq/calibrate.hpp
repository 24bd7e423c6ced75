#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "liq/event_log.hpp"
#include "liq/model.hpp"

namespace liq {

struct EmConfig {
    int states = 2;
    int max_iters = 200;
    double tol = 1e-9; // relative log-likelihood improvement
    bool fit_generator = true;
    // "moment" auto-initialization: pooled per-mark MLE rates split by
    // +-moment_spread across states (breaking the label symmetry
    // deterministically) and a symmetric generator with the given rate.
    double moment_spread = 0.1;
    double switch_rate = 4.0;
    std::optional<ChainSpec> init_chain;
    std::optional<std::vector<double>> init_rates; // states x marks
};

struct EmResult {
    ChainSpec chain;                  // estimated generator, initial law as used
    std::vector<double> rates;        // states x marks intensity estimates
    std::vector<double> loglik_trace; // per-iteration log-likelihood
    std::vector<std::vector<double>> smoothed; // per-event smoothed state probabilities
    std::vector<double> y_hat;        // filtered regime estimate at event times
    std::vector<std::string> warnings;
    int iterations = 0;
    bool converged = false;
};

namespace detail {

struct MmppModel {
    Eigen::MatrixXd generator; // K x K
    Eigen::MatrixXd rates;     // K x J
    Eigen::VectorXd initial;   // K

    int states() const { return static_cast<int>(generator.rows()); }

    // Interjump propagation generator of the unnormalized filter,
    // A = Q^T - diag(total rate).
    Eigen::MatrixXd propagation() const {
        Eigen::VectorXd total = rates.rowwise().sum();
        Eigen::MatrixXd a = generator.transpose();
        a.diagonal() -= total;
        return a;
    }
};

// One propagation segment: a stretch with no interior event, ended either by
// the event with the given mark or by nothing (mark < 0). Long gaps are
// chopped into chunks so the matrix exponential cannot underflow.
struct Segment {
    double dt = 0.0;
    int mark = -1;
};

inline std::vector<Segment> make_segments(const EventLog& log, double horizon,
                                          double lambda_scale) {
    const double max_chunk = 50.0 / std::max(lambda_scale, 1e-12);
    std::vector<Segment> segments;
    segments.reserve(log.size() + 8);
    double prev = 0.0;
    auto emit = [&](double until, int mark) {
        double gap = until - prev;
        while (gap > max_chunk) {
            segments.push_back({max_chunk, -1});
            gap -= max_chunk;
        }
        segments.push_back({gap, mark});
        prev = until;
    };
    for (std::size_t i = 0; i < log.size(); ++i) emit(log.t[i], log.mark[i]);
    emit(horizon, -1);
    return segments;
}

struct ForwardPass {
    std::vector<Eigen::VectorXd> alpha; // normalized filter at each segment start
    std::vector<Eigen::MatrixXd> prop;  // expm(A * dt) per segment
    double loglik = 0.0;
};

inline ForwardPass forward_filter(const MmppModel& model, const std::vector<Segment>& segments) {
    const int K = model.states();
    const Eigen::MatrixXd A = model.propagation();
    ForwardPass fp;
    fp.alpha.reserve(segments.size());
    fp.prop.reserve(segments.size());
    Eigen::VectorXd a = model.initial;
    for (const Segment& seg : segments) {
        fp.alpha.push_back(a);
        Eigen::MatrixXd P = (A * seg.dt).exp();
        fp.prop.push_back(P);
        Eigen::VectorXd v = P * a;
        if (seg.mark >= 0)
            for (int k = 0; k < K; ++k) v[k] *= model.rates(k, seg.mark);
        const double c = v.sum();
        if (!(c > 0.0))
            throw std::runtime_error("calibration filter lost all mass (check marks and rates)");
        fp.loglik += std::log(c);
        a = v / c;
    }
    return fp;
}

struct SufficientStats {
    Eigen::VectorXd occupation;   // expected time per state
    Eigen::MatrixXd transitions;  // expected i -> j switch counts
    Eigen::MatrixXd mark_counts;  // expected events per (state, mark)
    std::vector<Eigen::VectorXd> smoothed_pre; // at each event, P(Y_{t-} = k | data)
};

// Exact E-step: the joint integrals int alpha_i(s) beta_j(s) ds per segment
// come out of one block matrix exponential (Van Loan construction), so the
// log-likelihood ascent property holds to machine precision.
inline SufficientStats estep(const MmppModel& model, const std::vector<Segment>& segments,
                             const ForwardPass& fp, std::size_t n_events) {
    const int K = model.states();
    const Eigen::MatrixXd A = model.propagation();
    SufficientStats st;
    st.occupation = Eigen::VectorXd::Zero(K);
    st.transitions = Eigen::MatrixXd::Zero(K, K);
    st.mark_counts = Eigen::MatrixXd::Zero(K, model.rates.cols());
    st.smoothed_pre.resize(n_events);

    std::size_t event_index = n_events;
    Eigen::VectorXd beta_end = Eigen::VectorXd::Ones(K);
    Eigen::MatrixXd block(2 * K, 2 * K);
    for (long i = static_cast<long>(segments.size()) - 1; i >= 0; --i) {
        const Eigen::VectorXd& a_in = fp.alpha[i];
        block.setZero();
        block.topLeftCorner(K, K) = A * segments[i].dt;
        block.bottomRightCorner(K, K) = A * segments[i].dt;
        block.topRightCorner(K, K) = (a_in * beta_end.transpose()) * segments[i].dt;
        const Eigen::MatrixXd big = block.exp();
        const Eigen::MatrixXd F = big.topRightCorner(K, K); // int alpha beta^T
        const Eigen::VectorXd a_end = fp.prop[i] * a_in;
        const double denom = a_end.dot(beta_end);
        if (!(denom > 0.0)) throw std::runtime_error("degenerate smoothing weight");
        st.occupation += F.diagonal() / denom;
        for (int r = 0; r < K; ++r)
            for (int c = 0; c < K; ++c)
                if (r != c) st.transitions(r, c) += model.generator(r, c) * F(r, c) / denom;

        if (i > 0) {
            // Absorb whatever ends the previous segment into beta.
            Eigen::VectorXd beta_start = fp.prop[i].transpose() * beta_end;
            const int mark = segments[i - 1].mark;
            if (mark >= 0) {
                Eigen::VectorXd beta_pre = beta_start;
                for (int k = 0; k < K; ++k) beta_pre[k] *= model.rates(k, mark);
                const Eigen::VectorXd a_pre = fp.prop[i - 1] * fp.alpha[i - 1];
                Eigen::VectorXd sm = a_pre.cwiseProduct(beta_pre);
                const double tot = sm.sum();
                if (!(tot > 0.0)) throw std::runtime_error("degenerate smoothing weight");
                sm /= tot;
                st.smoothed_pre[--event_index] = sm;
                for (int k = 0; k < K; ++k) st.mark_counts(k, mark) += sm[k];
                beta_end = beta_pre / beta_pre.maxCoeff();
            } else {
                beta_end = beta_start / beta_start.maxCoeff();
            }
        }
    }
    return st;
}

inline MmppModel moment_init(const EventLog& log, double horizon, int J, const EmConfig& cfg,
                             const std::vector<double>& marks) {
    const int K = cfg.states;
    MmppModel model;
    model.generator = Eigen::MatrixXd::Zero(K, K);
    if (K > 1) {
        const double off = cfg.switch_rate / (K - 1);
        model.generator.setConstant(off);
        model.generator.diagonal().setConstant(-cfg.switch_rate);
    }
    model.initial = Eigen::VectorXd::Constant(K, 1.0 / K);
    Eigen::VectorXd pooled = Eigen::VectorXd::Zero(J);
    for (int m : log.mark) pooled[m] += 1.0;
    pooled /= horizon;
    model.rates.resize(K, J);
    for (int k = 0; k < K; ++k) {
        const double tilt = K > 1 ? cfg.moment_spread * (1.0 - 2.0 * k / (K - 1)) : 0.0;
        for (int j = 0; j < J; ++j) {
            double factor = 1.0;
            if (marks[j] > 0.0) factor = 1.0 + tilt;
            else if (marks[j] < 0.0) factor = 1.0 - tilt;
            model.rates(k, j) = pooled[j] * factor;
        }
    }
    return model;
}

} // namespace detail

// Fits per-state jump intensities (and optionally the chain generator) to an
// event log observed with no selling, by expectation-maximization on the
// Markov-modulated point process. States are reported sorted by their
// up-move intensity, descending.
inline EmResult em_fit(const EventLog& log, double horizon, const std::vector<double>& marks,
                       const EmConfig& cfg = {}) {
    if (log.empty()) throw std::invalid_argument("cannot calibrate from an empty event log");
    if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
    check_sorted(log, horizon);
    const int J = static_cast<int>(marks.size());
    for (int m : log.mark)
        if (m < 0 || m >= J) throw std::invalid_argument("event log mark index out of range");
    if (cfg.states < 1) throw std::invalid_argument("need at least one state");

    detail::MmppModel model;
    if (cfg.init_chain || cfg.init_rates) {
        if (!cfg.init_chain || !cfg.init_rates)
            throw std::invalid_argument("explicit initialization needs both chain and rates");
        const ChainSpec& ch = *cfg.init_chain;
        const int K = ch.states;
        model.generator.resize(K, K);
        for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j) model.generator(i, j) = ch.q(i, j);
        model.initial.resize(K);
        for (int i = 0; i < K; ++i) model.initial[i] = ch.initial[i];
        if (cfg.init_rates->size() != static_cast<std::size_t>(K) * J)
            throw std::invalid_argument("initial rates must be states x marks");
        model.rates.resize(K, J);
        for (int k = 0; k < K; ++k)
            for (int j = 0; j < J; ++j) model.rates(k, j) = (*cfg.init_rates)[k * J + j];
    } else {
        model = detail::moment_init(log, horizon, J, cfg, marks);
    }
    const int K = model.states();
    const Eigen::MatrixXd init_rates = model.rates;
    auto segments_for = [&](const detail::MmppModel& m) {
        double scale = 0.0;
        for (int k = 0; k < K; ++k)
            scale = std::max(scale, m.rates.row(k).sum() + std::abs(m.generator(k, k)));
        return detail::make_segments(log, horizon, scale);
    };

    EmResult result;
    double prev_ll = -std::numeric_limits<double>::infinity();
    int iter = 0;
    for (; iter < cfg.max_iters; ++iter) {
        const std::vector<detail::Segment> segments = segments_for(model);
        detail::ForwardPass fp = detail::forward_filter(model, segments);
        result.loglik_trace.push_back(fp.loglik);
        if (fp.loglik - prev_ll < cfg.tol * std::max(1.0, std::abs(fp.loglik)) && iter > 0) {
            result.converged = true;
            break;
        }
        prev_ll = fp.loglik;
        detail::SufficientStats st = detail::estep(model, segments, fp, log.size());
        for (int k = 0; k < K; ++k) {
            if (st.occupation[k] < 1e-10 * horizon) {
                result.warnings.push_back("state " + std::to_string(k) +
                                          " has vanishing expected occupation; its rates stay at "
                                          "their initial values");
                model.rates.row(k) = init_rates.row(k);
                continue;
            }
            for (int j = 0; j < J; ++j)
                model.rates(k, j) = st.mark_counts(k, j) / st.occupation[k];
        }
        if (cfg.fit_generator && K > 1) {
            for (int r = 0; r < K; ++r) {
                if (st.occupation[r] < 1e-10 * horizon) continue;
                double row = 0.0;
                for (int c = 0; c < K; ++c) {
                    if (r == c) continue;
                    model.generator(r, c) = st.transitions(r, c) / st.occupation[r];
                    row += model.generator(r, c);
                }
                model.generator(r, r) = -row;
            }
        }
    }
    result.iterations = iter;

    // Label states by up-move intensity, descending.
    std::vector<int> order(K);
    std::iota(order.begin(), order.end(), 0);
    Eigen::VectorXd up_rate = Eigen::VectorXd::Zero(K);
    for (int k = 0; k < K; ++k)
        for (int j = 0; j < J; ++j)
            if (marks[j] > 0.0) up_rate[k] += model.rates(k, j);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return up_rate[a] > up_rate[b]; });
    detail::MmppModel sorted = model;
    for (int k = 0; k < K; ++k) {
        sorted.rates.row(k) = model.rates.row(order[k]);
        sorted.initial[k] = model.initial[order[k]];
        for (int c = 0; c < K; ++c) sorted.generator(k, c) = model.generator(order[k], order[c]);
    }
    model = sorted;

    // Final pass at the sorted estimates: closing log-likelihood, smoothed
    // per-event laws, filtered regime estimate.
    const std::vector<detail::Segment> segments = segments_for(model);
    detail::ForwardPass fp = detail::forward_filter(model, segments);
    result.loglik_trace.push_back(fp.loglik);
    detail::SufficientStats st = detail::estep(model, segments, fp, log.size());
    result.smoothed.resize(log.size());
    result.y_hat.resize(log.size());
    for (std::size_t i = 0, n = 0; i < segments.size(); ++i) {
        if (segments[i].mark < 0) continue;
        result.smoothed[n].assign(st.smoothed_pre[n].data(), st.smoothed_pre[n].data() + K);
        const Eigen::VectorXd& a = fp.alpha[i + 1]; // post-event filter
        double y = 0.0;
        for (int k = 0; k < K; ++k) y += a[k] * (k + 1);
        result.y_hat[n] = y;
        ++n;
    }

    result.chain.states = K;
    result.chain.generator.resize(static_cast<std::size_t>(K) * K);
    result.chain.initial.resize(K);
    for (int i = 0; i < K; ++i) {
        result.chain.initial[i] = model.initial[i];
        for (int j = 0; j < K; ++j)
            result.chain.generator[static_cast<std::size_t>(i) * K + j] = model.generator(i, j);
    }
    result.rates.resize(static_cast<std::size_t>(K) * J);
    for (int k = 0; k < K; ++k)
        for (int j = 0; j < J; ++j) result.rates[static_cast<std::size_t>(k) * J + j] = model.rates(k, j);
    return result;
}

// Filtered regime estimate Y_hat = sum_k pi_k (k+1) sampled just after each
// event, under the fitted parameters.
inline std::vector<double> y_hat_path(const EmResult& fit, const EventLog& log, double horizon) {
    const int K = fit.chain.states;
    const int J = static_cast<int>(fit.rates.size()) / std::max(1, K);
    detail::MmppModel model;
    model.generator.resize(K, K);
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) model.generator(i, j) = fit.chain.q(i, j);
    model.initial.resize(K);
    for (int i = 0; i < K; ++i) model.initial[i] = fit.chain.initial[i];
    model.rates.resize(K, J);
    for (int k = 0; k < K; ++k)
        for (int j = 0; j < J; ++j) model.rates(k, j) = fit.rates[static_cast<std::size_t>(k) * J + j];
    double scale = 0.0;
    for (int k = 0; k < K; ++k)
        scale = std::max(scale, model.rates.row(k).sum() + std::abs(model.generator(k, k)));
    const std::vector<detail::Segment> segments = detail::make_segments(log, horizon, scale);
    detail::ForwardPass fp = detail::forward_filter(model, segments);
    std::vector<double> out(log.size());
    for (std::size_t i = 0, n = 0; i < segments.size(); ++i) {
        if (segments[i].mark < 0) continue;
        double y = 0.0;
        for (int k = 0; k < K; ++k) y += fp.alpha[i + 1][k] * (k + 1);
        out[n++] = y;
    }
    return out;
}

} // namespace liq
