#pragma once

// Closed-form variational losses for linear ISI channels and the training
// loop that fits the channel taps and the equalizer jointly.
//
// With the noise variance eliminated at its optimum sigma^2 = C/N, where
// C = E_q ||y - x*h||^2, the losses are (additive constants dropped)
//
//   BPSK:  L = (N/2) log C - H[q]
//   QPSK:  L =  N    log C - H[q]
//
// A non-uniform symbol prior adds -sum_i sum_x q_i(x) log(2 p_i(x)); the
// factor 2 removes the constant so a uniform prior contributes exactly 0.
// With a code, the total becomes lambda * L + (1 - lambda) * L_G.

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "encoder.hpp"
#include "ldpc.hpp"
#include "rng.hpp"
#include "signal.hpp"

namespace blindeq {

/// Per-symbol prior p_i(+1); p_i(-1) = 1 - p_i(+1).
struct PriorVector {
    Vec p_plus;

    static PriorVector uniform(std::size_t n) { return {Vec(n, 0.5)}; }
};

struct LossBreakdown {
    double total = 0.0;
    double entropy = 0.0;
    double c_term = 0.0;
    std::optional<double> gallager;
    std::optional<double> prior_term;
    double sigma2_opt = 0.0;
};

/// -sum [q log q + (1-q) log(1-q)], natural log, fused for speed.
inline ad::Var entropy_bernoulli(ad::Var q)
{
    const Vec& v = q.value();
    double h = 0.0;
    for (double p : v) h -= p * std::log(p) + (1.0 - p) * std::log(1.0 - p);
    const auto iq = q.id();
    return q.tape()->record(ad::Vec{h}, {q}, [iq](ad::Tape& t, const ad::Vec& g) {
        const Vec& v = t.value(iq);
        Vec d(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) d[i] = g[0] * std::log((1.0 - v[i]) / v[i]);
        t.accumulate(iq, d);
    });
}

/// Sums over both I and Q for QPSK.
inline double entropy_bernoulli(const Posterior& q)
{
    double h = 0.0;
    auto add = [&](const Vec& v) {
        for (double p : v) h -= p * std::log(p) + (1.0 - p) * std::log(1.0 - p);
    };
    add(q.q);
    add(q.q_q);
    return h;
}

/// Alignment of the channel kernel inside the loss for a padding convention.
inline std::ptrdiff_t channel_offset(Padding padding, std::size_t taps)
{
    if (padding == Padding::centered) return ad::conv_offset(taps, ad::ConvMode::centered);
    return 0;
}

/// C = sum_n { y_n^2 - 2 y_n mu_n + mu_n^2 + sum_k h_{n-k}^2 (4 q_k - 4 q_k^2) },
/// mu = (2q - 1) * h.
inline ad::Var c_term_bpsk(ad::Var y, ad::Var h, ad::Var q, std::ptrdiff_t offset)
{
    using namespace ad;
    require(y.size() == q.size(), "c_term_bpsk: observation and posterior lengths differ");
    Var m = q * 2.0 - 1.0;
    Var mu = conv1d(m, h, offset);
    Var var = (q - square(q)) * 4.0;
    Var spread = sum(conv1d(var, square(h), offset));
    return sum(square(y)) - 2.0 * dot(y, mu) + sum(square(mu)) + spread;
}

/// C = sum_n [ |y_n|^2 - 2 alpha_n + beta_n ] with
///   alpha_n = yI * Re(E{x} * h) + yQ * Im(E{x} * h)
///   beta_n  = |E{x} * h|^2 + sum_k |h_{n-k}|^2 (4qQ + 4qI - 4qI^2 - 4qQ^2),
/// E{x_k} = (2 qI_k - 1) + j (2 qQ_k - 1).
inline ad::Var c_term_qpsk(ad::CVar y, ad::CVar h, ad::CVar q, std::ptrdiff_t offset)
{
    using namespace ad;
    require(y.re.size() == q.re.size() && y.im.size() == q.im.size(), "c_term_qpsk: shape mismatch");
    CVar mean{q.re * 2.0 - 1.0, q.im * 2.0 - 1.0};
    CVar mu = complex_conv1d(mean, h, offset);
    Var alpha = y.re * mu.re + y.im * mu.im;
    Var var = (q.re - square(q.re) + q.im - square(q.im)) * 4.0;
    Var beta = square(mu.re) + square(mu.im) + conv1d(var, square(h.re) + square(h.im), offset);
    return sum(square(y.re) + square(y.im)) - 2.0 * sum(alpha) + sum(beta);
}

/// -sum_i [ q_i log(2 p_i) + (1 - q_i) log(2 (1 - p_i)) ].
inline ad::Var prior_term(ad::Var q, const PriorVector& prior)
{
    require(prior.p_plus.size() == q.size(), "prior_term: prior length does not match the posterior");
    Vec lp(q.size()), lm(q.size());
    double constant = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double p = prior.p_plus[i];
        require(p > 0.0 && p < 1.0, "prior_term: prior entries must lie in (0, 1)");
        lp[i] = std::log(2.0 * p);
        lm[i] = std::log(2.0 * (1.0 - p));
        constant += lm[i];
    }
    // q lp + (1 - q) lm = q (lp - lm) + lm
    Vec diff(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) diff[i] = lp[i] - lm[i];
    return -1.0 * (ad::dot_const(q, diff) + constant);
}

struct LossOptions {
    const PriorVector* prior = nullptr;  // nullptr: uniform
    const LdpcCode* code = nullptr;      // adds the Gallager term
    double lambda = 1.0;
};

struct LossNodes {
    ad::Var total;
    LossBreakdown values;
};

inline void check_lambda(const LossOptions& opt)
{
    if (opt.code) require(opt.lambda > 0.0 && opt.lambda <= 1.0, "loss: lambda must lie in (0, 1] with a Gallager term");
}

/// Assembles a blended loss from a distortion term C (BPSK scaling) and the
/// posterior; shared by the linear and nonlinear paths.
inline LossNodes compose_bpsk_loss(ad::Var c, ad::Var q, std::size_t n, const LossOptions& opt,
                                   double log_floor = 0.0)
{
    using namespace ad;
    check_lambda(opt);
    Var ent = entropy_bernoulli(q);
    Var logc = log_floor > 0.0 ? ad::log_floor(c, log_floor) : ad::log(c);
    Var plain = 0.5 * static_cast<double>(n) * logc - ent;
    LossNodes out;
    out.values.entropy = ent.scalar();
    out.values.c_term = c.scalar();
    out.values.sigma2_opt = c.scalar() / static_cast<double>(n);
    if (opt.prior) {
        Var pt = prior_term(q, *opt.prior);
        out.values.prior_term = pt.scalar();
        plain = plain + pt;
    }
    Var total = plain;
    if (opt.code) {
        Var lg = gallager_loss(*opt.code, q);
        out.values.gallager = lg.scalar();
        total = opt.lambda * plain + (1.0 - opt.lambda) * lg;
    }
    out.total = total;
    out.values.total = total.scalar();
    return out;
}

inline LossNodes loss_linear_bpsk(ad::Var y, ad::Var h, ad::Var q, std::ptrdiff_t offset, const LossOptions& opt = {})
{
    return compose_bpsk_loss(c_term_bpsk(y, h, q, offset), q, y.size(), opt);
}

inline LossNodes loss_linear_qpsk(ad::CVar y, ad::CVar h, ad::CVar q, std::ptrdiff_t offset)
{
    using namespace ad;
    Var c = c_term_qpsk(y, h, q, offset);
    Var ent = entropy_bernoulli(q.re) + entropy_bernoulli(q.im);
    const double n = static_cast<double>(y.re.size());
    Var total = n * ad::log(c) - ent;
    LossNodes out;
    out.total = total;
    out.values.total = total.scalar();
    out.values.entropy = ent.scalar();
    out.values.c_term = c.scalar();
    out.values.sigma2_opt = c.scalar() / n;
    return out;
}

// ---------------------------------------------------------------------------
// Plain-value entry points.

inline double c_term_bpsk(const Vec& y, const Vec& h, const Vec& q, Padding padding)
{
    ad::Tape t;
    return c_term_bpsk(t.constant(y), t.constant(h), t.constant(q), channel_offset(padding, h.size())).scalar();
}

inline double c_term_qpsk(const Observation& y, const Taps& h, const Posterior& q, Padding padding)
{
    ad::Tape t;
    const Vec him = h.complex() ? h.im : Vec(h.size(), 0.0);
    return c_term_qpsk({t.constant(y.re), t.constant(y.im)}, {t.constant(h.re), t.constant(him)},
                       {t.constant(q.q), t.constant(q.q_q)}, channel_offset(padding, h.size()))
        .scalar();
}

// ---------------------------------------------------------------------------
// Training.

struct LinearTrainConfig {
    std::size_t iterations = 2000;
    double lr = 0.01;
    std::size_t subseq_len = 128;     // 0: always use the full block
    std::optional<EncoderShape> shape;  // default depends on the modulation
    Padding padding = Padding::centered;
    std::size_t lead = 0;  // causal modes: index of the initial impulse
    // Loss-plateau stopping: stop once the best total loss over the last
    // `patience` steps has not improved on the earlier best by `plateau_tol`.
    bool plateau_stop = false;
    std::size_t patience = 200;
    double plateau_tol = 1e-4;
};

namespace param_names {
inline const std::string h = "h";
inline const std::string h_im = "h_im";
} // namespace param_names

/// Unit impulse at the kernel center (centered) or at index `lead` (causal).
inline Vec impulse_init(std::size_t m, Padding padding, std::size_t lead = 0)
{
    require(m >= 1, "impulse_init: empty tap vector");
    require(padding == Padding::centered || lead < m, "impulse_init: impulse position outside the tap vector");
    Vec h(m, 0.0);
    h[padding == Padding::centered ? (m - 1) / 2 : lead] = 1.0;
    return h;
}

/// Channel taps plus equalizer network, trained by AMSGrad on the closed-form
/// loss. One instance per received block; not shared between threads.
class LinearVaee {
public:
    LinearVaee(Modulation scheme, std::size_t taps, Padding padding, EncoderShape shape, Rng& rng,
               std::size_t lead = 0)
        : scheme_(scheme), padding_(padding)
    {
        require(taps >= 1, "LinearVaee: need at least one channel tap");
        if (padding == Padding::centered) require(taps % 2 == 1, "LinearVaee: centered padding needs an odd tap count");
        store_.add(param_names::h, impulse_init(taps, padding, lead));
        if (scheme == Modulation::qpsk) store_.add(param_names::h_im, Vec(taps, 0.0));
        add_encoder(store_, init_encoder(scheme, shape, rng));
    }

    Modulation scheme() const { return scheme_; }
    Padding padding() const { return padding_; }
    ad::ParamStore& params() { return store_; }
    const ad::ParamStore& params() const { return store_; }

    Taps taps() const
    {
        return {store_.value(param_names::h), scheme_ == Modulation::qpsk ? store_.value(param_names::h_im) : Vec{}};
    }
    EncoderParams encoder() const { return encoder_from(store_, scheme_); }
    Posterior posterior(const Observation& y) const { return encode(y, encoder()); }

    /// Loss and gradients on one observation segment.
    std::pair<LossBreakdown, ad::GradMap> evaluate(const Observation& y, const LossOptions& opt = {}) const
    {
        ad::Tape tape;
        const EncoderVars ev = encoder_vars(tape, store_, scheme_);
        const auto m = store_.value(param_names::h).size();
        LossNodes nodes;
        if (scheme_ == Modulation::bpsk) {
            require(!y.complex(), "LinearVaee: complex observation for BPSK");
            ad::Var yv = tape.constant(y.re);
            ad::Var q = encode_bpsk(yv, ev);
            nodes = loss_linear_bpsk(yv, tape.param(store_, param_names::h), q, channel_offset(padding_, m), opt);
        } else {
            require(!opt.prior && !opt.code, "LinearVaee: priors and codes are BPSK-only");
            ad::CVar yv{tape.constant(y.re), tape.constant(y.im)};
            ad::CVar q = encode_qpsk(yv, ev);
            ad::CVar h{tape.param(store_, param_names::h), tape.param(store_, param_names::h_im)};
            nodes = loss_linear_qpsk(yv, h, q, channel_offset(padding_, m));
        }
        if (!std::isfinite(nodes.values.total))
            throw NumericError("VAEE loss is not finite (C=" + std::to_string(nodes.values.c_term) +
                               ", H=" + std::to_string(nodes.values.entropy) + ")");
        auto grads = tape.backward(nodes.total, store_);
        return {nodes.values, std::move(grads)};
    }

    /// One AMSGrad step; returns the loss before the update.
    LossBreakdown step(const Observation& y, double lr, const LossOptions& opt = {})
    {
        auto [values, grads] = evaluate(y, opt);
        ad::amsgrad_step(store_, grads, lr);
        return values;
    }

private:
    Modulation scheme_;
    Padding padding_;
    ad::ParamStore store_;
};

inline Observation segment(const Observation& y, std::size_t begin, std::size_t len)
{
    Observation s;
    s.re.assign(y.re.begin() + static_cast<std::ptrdiff_t>(begin), y.re.begin() + static_cast<std::ptrdiff_t>(begin + len));
    if (y.complex())
        s.im.assign(y.im.begin() + static_cast<std::ptrdiff_t>(begin), y.im.begin() + static_cast<std::ptrdiff_t>(begin + len));
    return s;
}

struct LinearTrainResult {
    Taps h;
    double sigma2 = 0.0;
    Posterior posterior;
    EncoderParams encoder;
    std::vector<LossBreakdown> trace;
};

/// Stops once the best loss of the trailing window fails to beat the best
/// loss seen before it by `tol` (relative).
inline bool plateaued(const std::vector<LossBreakdown>& trace, std::size_t patience, double tol)
{
    if (trace.size() < 2 * patience) return false;
    const std::size_t split = trace.size() - patience;
    double before = std::numeric_limits<double>::infinity(), recent = before;
    for (std::size_t k = 0; k < split; ++k) before = std::min(before, trace[k].total);
    for (std::size_t k = split; k < trace.size(); ++k) recent = std::min(recent, trace[k].total);
    return recent > before - tol * std::abs(before);
}

inline LinearTrainResult train_vaee_linear(const Observation& y, Modulation scheme, std::size_t taps,
                                           const LinearTrainConfig& cfg, Rng& rng)
{
    require(y.size() >= 1, "train_vaee_linear: empty observation");
    LinearVaee model(scheme, taps, cfg.padding, cfg.shape.value_or(EncoderShape::defaults(scheme)), rng, cfg.lead);
    const std::size_t len = cfg.subseq_len == 0 ? y.size() : std::min(cfg.subseq_len, y.size());
    LinearTrainResult res;
    res.trace.reserve(cfg.iterations);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const std::size_t start = len == y.size() ? 0 : static_cast<std::size_t>(rng.below(y.size() - len + 1));
        res.trace.push_back(model.step(len == y.size() ? y : segment(y, start, len), cfg.lr));
        if (cfg.plateau_stop && plateaued(res.trace, cfg.patience, cfg.plateau_tol)) break;
    }
    res.h = model.taps();
    res.encoder = model.encoder();
    res.posterior = model.posterior(y);
    res.sigma2 = model.evaluate(y).first.sigma2_opt;
    return res;
}

inline void write_trace_csv(std::ostream& out, const std::vector<LossBreakdown>& trace)
{
    out << "step,total,entropy,c_term,sigma2_opt\n";
    out.precision(12);
    for (std::size_t k = 0; k < trace.size(); ++k)
        out << k << ',' << trace[k].total << ',' << trace[k].entropy << ',' << trace[k].c_term << ','
            << trace[k].sigma2_opt << '\n';
}

} // namespace blindeq
