#pragma once

// Independent oracles: brute-force enumeration, Monte-Carlo expectations and
// central finite differences. Shared by `blindeq selftest`, the unit tests and
// the acceptance binary.

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "baselines.hpp"
#include "eval.hpp"
#include "ldpc.hpp"
#include "nonlinear.hpp"
#include "vae_loss.hpp"

namespace blindeq::oracle {

struct Check {
    std::string name;
    bool pass = false;
    double value = 0.0;      // measured worst-case error
    double tolerance = 0.0;
};

inline Check make_check(std::string name, double value, double tol)
{
    return {std::move(name), value < tol, value, tol};
}

// ---------------------------------------------------------------------------
// BCJR against enumeration.

/// P(X_n = +1 | y) and log p(y) by summing over the M-1 unknown prefix
/// symbols and all 2^N blocks.
struct BruteForce {
    Vec p_plus;
    double log_likelihood = 0.0;
};

inline BruteForce brute_force_posterior(const Vec& y, const TrellisSpec& spec, const Vec* prior_llr = nullptr)
{
    const std::size_t n = y.size(), m = spec.h.size(), total = n + m - 1;
    require(total <= 24, "brute_force_posterior: instance too large");
    const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi * spec.sigma2);
    Vec lp(n, -std::numeric_limits<double>::infinity());
    double logz = -std::numeric_limits<double>::infinity();
    Vec x(total);
    for (std::size_t pattern = 0; pattern < (std::size_t{1} << total); ++pattern) {
        for (std::size_t i = 0; i < total; ++i) x[i] = (pattern >> i) & 1u ? -1.0 : 1.0;
        double lw = -static_cast<double>(m - 1) * std::log(2.0);
        for (std::size_t t = 0; t < n; ++t) {
            const double xt = x[t + m - 1];
            if (prior_llr) {
                const double l = (*prior_llr)[t];
                lw += xt > 0 ? -std::log1p(std::exp(-l)) : -std::log1p(std::exp(l));
            } else {
                lw -= std::log(2.0);
            }
            double a = 0.0;
            for (std::size_t k = 0; k < m; ++k) a += spec.h[k] * x[t + m - 1 - k];
            const double r = y[t] - spec.g(a);
            lw += log_norm - r * r / (2.0 * spec.sigma2);
        }
        logz = log_sum_exp(logz, lw);
        for (std::size_t t = 0; t < n; ++t)
            if (x[t + m - 1] > 0) lp[t] = log_sum_exp(lp[t], lw);
    }
    BruteForce b;
    b.log_likelihood = logz;
    b.p_plus.resize(n);
    for (std::size_t t = 0; t < n; ++t) b.p_plus[t] = std::exp(lp[t] - logz);
    return b;
}

/// Worst |p_bcjr - p_brute| over random instances (half with priors, some
/// through a nonlinearity); log-likelihood differences are included.
inline Check bcjr_vs_brute_force(std::size_t instances = 50, std::size_t n = 8, std::size_t m = 3,
                                 std::uint64_t seed = 101)
{
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t k = 0; k < instances; ++k) {
        TrellisSpec spec;
        spec.h.resize(m);
        for (auto& v : spec.h) v = rng.normal();
        spec.sigma2 = rng.uniform(0.2, 1.5);
        if (k % 5 == 4) spec.g = builtin_nonlinearity("g1");
        Vec y(n);
        for (auto& v : y) v = rng.normal() * 1.5;
        Vec prior(n);
        for (auto& v : prior) v = rng.normal() * 2.0;
        const Vec* pp = k % 2 ? &prior : nullptr;
        const auto fast = bcjr(y, spec, pp);
        const auto slow = brute_force_posterior(y, spec, pp);
        for (std::size_t t = 0; t < n; ++t) worst = std::max(worst, std::abs(fast.p_plus[t] - slow.p_plus[t]));
        worst = std::max(worst, std::abs(fast.log_likelihood - slow.log_likelihood) /
                                    std::max(1.0, std::abs(slow.log_likelihood)));
    }
    return make_check("bcjr vs brute-force posterior", worst, 1e-9);
}

// ---------------------------------------------------------------------------
// BP against exact marginals on cycle-free codes.

/// Random tree-shaped Tanner graph: each new check joins one existing
/// variable to 1-3 new ones.
inline LdpcCode random_tree_code(std::size_t n_vars, Rng& rng)
{
    require(n_vars >= 2, "random_tree_code: need at least two variables");
    LdpcCode c;
    c.n_vars = n_vars;
    c.var_neighbors.resize(n_vars);
    std::size_t placed = 1;
    while (placed < n_vars) {
        const std::size_t anchor = rng.below(placed);
        const std::size_t fresh = std::min<std::size_t>(1 + rng.below(3), n_vars - placed);
        std::vector<std::size_t> check{anchor};
        for (std::size_t k = 0; k < fresh; ++k) check.push_back(placed++);
        std::sort(check.begin(), check.end());
        for (auto v : check) c.var_neighbors[v].push_back(c.check_neighbors.size());
        c.check_neighbors.push_back(check);
    }
    c.n_checks = c.check_neighbors.size();
    c.validate();
    return c;
}

/// Exact posterior LLRs log P(c_i=0|llr)/P(c_i=1|llr) over all codewords.
inline Vec exact_marginal_llr(const LdpcCode& code, const Vec& llr)
{
    const std::size_t n = code.n_vars;
    require(n <= 20, "exact_marginal_llr: code too long");
    const double ninf = -std::numeric_limits<double>::infinity();
    Vec l0(n, ninf), l1(n, ninf);
    Bits word(n);
    for (std::size_t pattern = 0; pattern < (std::size_t{1} << n); ++pattern) {
        for (std::size_t i = 0; i < n; ++i) word[i] = static_cast<int>((pattern >> i) & 1u);
        if (syndrome_weight(code, word) != 0) continue;
        double lw = 0.0;
        for (std::size_t i = 0; i < n; ++i) lw += (word[i] ? -0.5 : 0.5) * llr[i];
        for (std::size_t i = 0; i < n; ++i) (word[i] ? l1[i] : l0[i]) = log_sum_exp(word[i] ? l1[i] : l0[i], lw);
    }
    Vec out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = l0[i] - l1[i];
    return out;
}

inline Check bp_vs_exact(std::size_t instances = 40, std::uint64_t seed = 202)
{
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t k = 0; k < instances; ++k) {
        const std::size_t n = 4 + rng.below(9);  // 4..12
        const LdpcCode code = random_tree_code(n, rng);
        Vec llr(n);
        for (auto& v : llr) v = rng.normal() * 1.5;
        const auto bp = bp_decode(code, llr, {2 * n + 2, false});
        const Vec exact = exact_marginal_llr(code, llr);
        for (std::size_t i = 0; i < n; ++i)
            worst = std::max(worst, std::abs(prob_from_llr(bp.full_llr[i]) - prob_from_llr(exact[i])));
    }
    return make_check("bp vs exact marginals (trees)", worst, 1e-9);
}

// ---------------------------------------------------------------------------
// Gallager parity probability against enumeration.

inline double parity_prob_enumerated(const Vec& q)
{
    const std::size_t d = q.size();
    double even = 0.0;
    for (std::size_t pattern = 0; pattern < (std::size_t{1} << d); ++pattern) {
        double p = 1.0;
        for (std::size_t i = 0; i < d; ++i) p *= (pattern >> i) & 1u ? 1.0 - q[i] : q[i];
        if (std::popcount(pattern) % 2 == 0) even += p;
    }
    return even;
}

inline Check gallager_vs_enumeration(std::uint64_t seed = 303)
{
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t d = 1; d <= 10; ++d)
        for (int rep = 0; rep < 20; ++rep) {
            Vec q(d);
            for (auto& v : q) v = rng.uniform();
            worst = std::max(worst, std::abs(gallager_parity_prob(q) - parity_prob_enumerated(q)));
        }
    return make_check("gallager parity vs enumeration", worst, 1e-12);
}

// ---------------------------------------------------------------------------
// Closed-form C against Monte-Carlo.

inline double mc_c_bpsk(const Vec& y, const Vec& h, const Vec& q, Padding padding, std::size_t samples, Rng& rng)
{
    const auto off = channel_offset(padding, h.size());
    double acc = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        const Vec x = bernoulli_sample(q, rng);
        const Vec mu = ad::conv1d_values(x, h, off);
        for (std::size_t n = 0; n < y.size(); ++n) acc += (y[n] - mu[n]) * (y[n] - mu[n]);
    }
    return acc / static_cast<double>(samples);
}

inline double mc_c_qpsk(const Observation& y, const Taps& h, const Posterior& q, Padding padding,
                        std::size_t samples, Rng& rng)
{
    const auto off = channel_offset(padding, h.size());
    double acc = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        const Vec xr = bernoulli_sample(q.q, rng), xi = bernoulli_sample(q.q_q, rng);
        // (xr + j xi) * (hr + j hi)
        const Vec rr = ad::conv1d_values(xr, h.re, off), ii = ad::conv1d_values(xi, h.im, off);
        const Vec ri = ad::conv1d_values(xr, h.im, off), ir = ad::conv1d_values(xi, h.re, off);
        for (std::size_t n = 0; n < y.size(); ++n) {
            const double er = y.re[n] - (rr[n] - ii[n]), ei = y.im[n] - (ri[n] + ir[n]);
            acc += er * er + ei * ei;
        }
    }
    return acc / static_cast<double>(samples);
}

inline Check closed_form_c_vs_mc(std::size_t samples = 100000, std::uint64_t seed = 404)
{
    Rng rng(seed);
    double worst = 0.0;
    for (Padding pad : {Padding::centered, Padding::causal}) {
        const std::size_t n = 16, m = 3;
        Vec y(n), h(m), q(n);
        for (auto& v : y) v = rng.normal();
        for (auto& v : h) v = rng.normal();
        for (auto& v : q) v = rng.uniform(0.05, 0.95);
        const double exact = c_term_bpsk(y, h, q, pad);
        worst = std::max(worst, std::abs(mc_c_bpsk(y, h, q, pad, samples, rng) - exact) / exact);

        Observation yq{Vec(n), Vec(n)};
        for (auto& v : yq.re) v = rng.normal();
        for (auto& v : yq.im) v = rng.normal();
        Taps hq{Vec(m), Vec(m)};
        for (auto& v : hq.re) v = rng.normal();
        for (auto& v : hq.im) v = rng.normal();
        Posterior pq{Modulation::qpsk, Vec(n), Vec(n)};
        for (auto& v : pq.q) v = rng.uniform(0.05, 0.95);
        for (auto& v : pq.q_q) v = rng.uniform(0.05, 0.95);
        const double exact_q = c_term_qpsk(yq, hq, pq, pad);
        worst = std::max(worst, std::abs(mc_c_qpsk(yq, hq, pq, pad, samples, rng) - exact_q) / exact_q);
    }
    return make_check("closed-form C vs Monte-Carlo (relative)", worst, 0.01);
}

// ---------------------------------------------------------------------------
// Gradients against central differences.

using ScalarFn = std::function<double(const ad::ParamStore&, ad::GradMap*)>;

/// Worst |fd - ad| / max(|fd|, |ad|, 1e-3 * max|ad|) over every parameter.
inline double gradient_error(const ad::ParamStore& store, const ScalarFn& f, double step = 1e-6)
{
    ad::GradMap g;
    f(store, &g);
    double gmax = 0.0;
    for (const auto& [name, v] : g)
        for (double e : v) gmax = std::max(gmax, std::abs(e));
    double worst = 0.0;
    for (const auto& name : store.names()) {
        const Vec& analytic = g.at(name);
        for (std::size_t i = 0; i < store.value(name).size(); ++i) {
            ad::ParamStore plus = store, minus = store;
            plus.value(name)[i] += step;
            minus.value(name)[i] -= step;
            const double fd = (f(plus, nullptr) - f(minus, nullptr)) / (2.0 * step);
            const double scale = std::max({std::abs(fd), std::abs(analytic[i]), 1e-3 * gmax, 1e-12});
            worst = std::max(worst, std::abs(fd - analytic[i]) / scale);
        }
    }
    return worst;
}

/// Small regular code on 16 variables for the Gallager-term gradient.
inline LdpcCode small_code16(Rng& rng)
{
    LdpcCode c;
    c.n_vars = 16;
    c.n_checks = 8;
    c.check_neighbors.resize(8);
    c.var_neighbors.resize(16);
    for (std::size_t v = 0; v < 16; ++v) {
        const std::size_t a = rng.below(8);
        std::size_t b = rng.below(7);
        if (b >= a) ++b;
        for (auto j : {a, b}) {
            c.var_neighbors[v].push_back(j);
            c.check_neighbors[j].push_back(v);
        }
    }
    for (auto& n : c.check_neighbors) std::sort(n.begin(), n.end());
    for (auto& n : c.var_neighbors) std::sort(n.begin(), n.end());
    c.validate();
    return c;
}

inline std::vector<Check> gradient_checks(std::uint64_t seed = 505, double tol = 1e-4)
{
    Rng rng(seed);
    const std::size_t n = 16;
    std::vector<Check> out;

    Vec y(n);
    for (auto& v : y) v = rng.normal();
    ad::ParamStore bp;
    bp.add(param_names::h, {0.3, 1.0, -0.4});
    add_encoder(bp, init_encoder(Modulation::bpsk, {4, 3}, rng));
    for (auto name : {encoder_names::k1, encoder_names::k2})
        for (auto& v : bp.value(name)) v *= 5.0;  // move q away from 1/2
    const auto off = channel_offset(Padding::centered, 3);

    auto bpsk_loss = [&](const LossOptions& opt) -> ScalarFn {
        return [&, opt](const ad::ParamStore& s, ad::GradMap* g) {
            ad::Tape t;
            ad::Var yv = t.constant(y);
            ad::Var q = encode_bpsk(yv, encoder_vars(t, s, Modulation::bpsk));
            auto nodes = loss_linear_bpsk(yv, t.param(s, param_names::h), q, off, opt);
            if (g) *g = t.backward(nodes.total, s);
            return nodes.total.scalar();
        };
    };
    out.push_back(make_check("grad L_BPSK", gradient_error(bp, bpsk_loss({})), tol));

    PriorVector prior;
    for (std::size_t i = 0; i < n; ++i) prior.p_plus.push_back(rng.uniform(0.2, 0.8));
    LossOptions with_prior;
    with_prior.prior = &prior;
    out.push_back(make_check("grad prior-corrected L_BPSK", gradient_error(bp, bpsk_loss(with_prior)), tol));

    const LdpcCode code = small_code16(rng);
    LossOptions blended;
    blended.code = &code;
    blended.lambda = 0.7;
    blended.prior = &prior;
    out.push_back(make_check("grad blended loss", gradient_error(bp, bpsk_loss(blended)), tol));

    ad::ParamStore enc;
    add_encoder(enc, init_encoder(Modulation::bpsk, {4, 3}, rng));
    for (auto name : {encoder_names::k1, encoder_names::k2})
        for (auto& v : enc.value(name)) v *= 5.0;
    const ScalarFn gallager = [&](const ad::ParamStore& s, ad::GradMap* g) {
        ad::Tape t;
        ad::Var q = encode_bpsk(t.constant(y), encoder_vars(t, s, Modulation::bpsk));
        ad::Var l = gallager_loss(code, q);
        if (g) *g = t.backward(l, s);
        return l.scalar();
    };
    out.push_back(make_check("grad L_G", gradient_error(enc, gallager), tol));

    const ScalarFn entropy = [&](const ad::ParamStore& s, ad::GradMap* g) {
        ad::Tape t;
        ad::Var q = encode_bpsk(t.constant(y), encoder_vars(t, s, Modulation::bpsk));
        ad::Var l = entropy_bernoulli(q);
        if (g) *g = t.backward(l, s);
        return l.scalar();
    };
    out.push_back(make_check("grad entropy", gradient_error(enc, entropy), tol));

    Observation yq{Vec(n), Vec(n)};
    for (auto& v : yq.re) v = rng.normal();
    for (auto& v : yq.im) v = rng.normal();
    ad::ParamStore qp;
    qp.add(param_names::h, {0.2, 0.9, -0.3});
    qp.add(param_names::h_im, {0.1, -0.2, 0.3});
    add_encoder(qp, init_encoder(Modulation::qpsk, {4, 2}, rng));
    for (auto name : {encoder_names::k1, encoder_names::k1_im, encoder_names::k2, encoder_names::k2_im})
        for (auto& v : qp.value(name)) v *= 5.0;
    const ScalarFn qpsk = [&](const ad::ParamStore& s, ad::GradMap* g) {
        ad::Tape t;
        ad::CVar yv{t.constant(yq.re), t.constant(yq.im)};
        ad::CVar q = encode_qpsk(yv, encoder_vars(t, s, Modulation::qpsk));
        ad::CVar h{t.param(s, param_names::h), t.param(s, param_names::h_im)};
        auto nodes = loss_linear_qpsk(yv, h, q, off);
        if (g) *g = t.backward(nodes.total, s);
        return nodes.total.scalar();
    };
    out.push_back(make_check("grad L_QPSK", gradient_error(qp, qpsk), tol));

    // Phi-pathwise term through the Gumbel relaxation and the decoder MLP.
    ad::ParamStore nl;
    add_decoder(nl, init_decoder(3, Padding::causal, MlpInit::random, rng));
    add_encoder(nl, init_encoder(Modulation::bpsk, {4, 3}, rng));
    const Vec diff = gumbel_differences(n, rng);
    const ScalarFn pathwise = [&](const ad::ParamStore& s, ad::GradMap* g) {
        ad::Tape t;
        const DecoderVars th = decoder_vars(t, s);
        ad::Var yv = t.constant(y);
        ad::Var q = encode_bpsk(yv, encoder_vars(t, s, Modulation::bpsk));
        ad::Var c = gumbel_softmax(q, diff, th.tau_raw);
        ad::Var gx = decoder_forward(2.0 * c - 1.0, th, 0, DropoutMasks{});
        ad::Var l = 0.5 * static_cast<double>(n) * ad::log(ad::sum(ad::square(yv - gx))) - entropy_bernoulli(q);
        if (g) *g = t.backward(l, s);
        return l.scalar();
    };
    out.push_back(make_check("grad Gumbel pathwise term", gradient_error(nl, pathwise), tol));
    return out;
}

// ---------------------------------------------------------------------------
// Gumbel-softmax at low temperature against Bernoulli(q).

inline Check gumbel_tv(double tau = 0.05, std::size_t draws = 10000, std::uint64_t seed = 606)
{
    Rng rng(seed);
    double worst = 0.0;
    for (double q : {0.1, 0.3, 0.5, 0.9}) {
        std::size_t plus = 0;
        const Vec qv(draws, q);
        const auto s = gumbel_softmax_sample(qv, tau, rng);
        for (double c : s.c_hat) plus += c > 0.5;
        // Two-point distributions: TV = |p_hat - q|.
        worst = std::max(worst, std::abs(static_cast<double>(plus) / static_cast<double>(draws) - q));
    }
    return make_check("gumbel-softmax tau=0.05 vs Bernoulli (TV)", worst, 0.02);
}

// ---------------------------------------------------------------------------
// Shannon thresholds.

struct ThresholdRow {
    std::string channel;
    double threshold_db = 0.0;
    double expected_db = 0.0;
};

inline std::vector<ThresholdRow> paper_thresholds()
{
    std::vector<ThresholdRow> rows{{"ht1", 0.0, 2.84}, {"ht2", 0.0, 2.95}, {"ht3", 0.0, 3.0}};
    for (auto& r : rows) r.threshold_db = shannon_threshold(builtin_channel(r.channel).re, 0.75);
    return rows;
}

/// Everything above, in one list.
inline std::vector<Check> run_all()
{
    std::vector<Check> out{bcjr_vs_brute_force(), bp_vs_exact(), gallager_vs_enumeration(), closed_form_c_vs_mc()};
    for (auto& c : gradient_checks()) out.push_back(c);
    out.push_back(gumbel_tv());
    double worst = 0.0;
    for (const auto& r : paper_thresholds()) worst = std::max(worst, std::abs(r.threshold_db - r.expected_db));
    out.push_back(make_check("shannon thresholds ht1..ht3 (dB)", worst, 0.05));
    out.push_back(make_check("shannon threshold flat channel (dB)",
                             std::abs(shannon_threshold({1.0}, 0.75) - 10.0 * std::log10(std::pow(2.0, 1.5) - 1.0)),
                             1e-6));
    return out;
}

} // namespace blindeq::oracle
