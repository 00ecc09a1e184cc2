#pragma once

// Nonlinear-channel VAE: decoder G(x, theta) = A(x * h), with A a per-sample
// MLP 1 -> 5 (ReLU) -> dropout -> 5 (ReLU) -> dropout -> 1 (linear), trained
// jointly with the BPSK encoder on
//   L_NL = (N/2) log C_NL - H[q],   C_NL = E_q || y - G(x, theta) ||^2.
// C_NL has no closed form; each step uses one hard Bernoulli sample for the
// theta gradient and one Gumbel-softmax relaxed sample for the Phi gradient.

#include <array>
#include <cmath>
#include <string>

#include "autodiff.hpp"
#include "encoder.hpp"
#include "vae_loss.hpp"

namespace blindeq {

inline constexpr std::size_t kMlpWidth = 5;
inline constexpr double kResidualFloor = 1e-12;

struct DecoderParams {
    Vec h;
    Vec w1, b1;  // 5, 5
    Vec w2, b2;  // 25 (row = output unit), 5
    Vec w3, b3;  // 5, 1
    double tau_raw = std::log(5.0);

    double tau() const { return std::exp(tau_raw); }
};

namespace decoder_names {
inline const std::string h = "dec.h";
inline const std::string w1 = "dec.w1";
inline const std::string b1 = "dec.b1";
inline const std::string w2 = "dec.w2";
inline const std::string b2 = "dec.b2";
inline const std::string w3 = "dec.w3";
inline const std::string b3 = "dec.b3";
inline const std::string tau_raw = "dec.tau_raw";
} // namespace decoder_names

enum class MlpInit {
    identity,  // A(a) = a via relu(a) - relu(-a), spare units small random
    random,    // Glorot-uniform weights, zero biases
};

/// A with A(a) = a exactly: unit 0 carries relu(a), unit 1 relu(-a).
inline DecoderParams identity_decoder(Vec h)
{
    DecoderParams p;
    p.h = std::move(h);
    p.w1.assign(kMlpWidth, 0.0);
    p.b1.assign(kMlpWidth, 0.0);
    p.w2.assign(kMlpWidth * kMlpWidth, 0.0);
    p.b2.assign(kMlpWidth, 0.0);
    p.w3.assign(kMlpWidth, 0.0);
    p.b3.assign(1, 0.0);
    p.w1[0] = 1.0;
    p.w1[1] = -1.0;
    p.w2[0 * kMlpWidth + 0] = 1.0;
    p.w2[1 * kMlpWidth + 1] = 1.0;
    p.w3[0] = 1.0;
    p.w3[1] = -1.0;
    return p;
}

inline DecoderParams init_decoder(std::size_t taps, Padding padding, MlpInit init, Rng& rng, std::size_t lead = 0)
{
    require(taps >= 1, "init_decoder: need at least one channel tap");
    DecoderParams p = identity_decoder(impulse_init(taps, padding, lead));
    if (init == MlpInit::identity) {
        for (std::size_t i = 2; i < kMlpWidth; ++i) {
            p.w1[i] = rng.uniform(-0.1, 0.1);
            for (std::size_t j = 0; j < kMlpWidth; ++j) p.w2[i * kMlpWidth + j] = rng.uniform(-0.1, 0.1);
            p.w3[i] = rng.uniform(-0.1, 0.1);
        }
        return p;
    }
    auto glorot = [&](Vec& w, double fan_in, double fan_out) {
        const double r = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& v : w) v = rng.uniform(-r, r);
    };
    glorot(p.w1, 1, kMlpWidth);
    glorot(p.w2, kMlpWidth, kMlpWidth);
    glorot(p.w3, kMlpWidth, 1);
    return p;
}

inline void add_decoder(ad::ParamStore& store, const DecoderParams& p)
{
    store.add(decoder_names::h, p.h);
    store.add(decoder_names::w1, p.w1);
    store.add(decoder_names::b1, p.b1);
    store.add(decoder_names::w2, p.w2);
    store.add(decoder_names::b2, p.b2);
    store.add(decoder_names::w3, p.w3);
    store.add(decoder_names::b3, p.b3);
    store.add(decoder_names::tau_raw, Vec{p.tau_raw});
}

inline DecoderParams decoder_from(const ad::ParamStore& store)
{
    DecoderParams p;
    p.h = store.value(decoder_names::h);
    p.w1 = store.value(decoder_names::w1);
    p.b1 = store.value(decoder_names::b1);
    p.w2 = store.value(decoder_names::w2);
    p.b2 = store.value(decoder_names::b2);
    p.w3 = store.value(decoder_names::w3);
    p.b3 = store.value(decoder_names::b3);
    p.tau_raw = store.value(decoder_names::tau_raw)[0];
    return p;
}

struct DecoderVars {
    ad::Var h, w1, b1, w2, b2, w3, b3, tau_raw;
};

inline DecoderVars decoder_vars(ad::Tape& tape, const ad::ParamStore& store)
{
    using namespace decoder_names;
    return {tape.param(store, h),  tape.param(store, w1), tape.param(store, b1), tape.param(store, w2),
            tape.param(store, b2), tape.param(store, w3), tape.param(store, b3), tape.param(store, tau_raw)};
}

inline DecoderVars decoder_consts(ad::Tape& tape, const DecoderParams& p)
{
    return {tape.constant(p.h),  tape.constant(p.w1), tape.constant(p.b1), tape.constant(p.w2),
            tape.constant(p.b2), tape.constant(p.w3), tape.constant(p.b3), tape.constant(p.tau_raw)};
}

/// Inverted-dropout multipliers for the two hidden layers (0 or 1/(1-p)),
/// one row of kMlpWidth per sample. Empty means inference mode.
struct DropoutMasks {
    Vec m1, m2;

    bool active() const { return !m1.empty(); }

    static DropoutMasks draw(std::size_t n, double p, Rng& rng)
    {
        require(p >= 0.0 && p < 1.0, "dropout probability must lie in [0, 1)");
        DropoutMasks d;
        d.m1.resize(n * kMlpWidth);
        d.m2.resize(n * kMlpWidth);
        const double keep = 1.0 / (1.0 - p);
        for (auto& v : d.m1) v = rng.uniform() < p ? 0.0 : keep;
        for (auto& v : d.m2) v = rng.uniform() < p ? 0.0 : keep;
        return d;
    }
};

/// Network A applied to every sample of `a`, as one fused tape node.
inline ad::Var mlp_a(ad::Var a, const DecoderVars& v, const DropoutMasks& masks)
{
    using ad::Tape;
    constexpr std::size_t W = kMlpWidth;
    const std::size_t n = a.size();
    require(!masks.active() || masks.m1.size() == n * W, "mlp_a: dropout mask size mismatch");
    const Vec &w1 = v.w1.value(), &b1 = v.b1.value(), &w2 = v.w2.value(), &b2 = v.b2.value(),
              &w3 = v.w3.value(), &b3 = v.b3.value();
    require(w1.size() == W && b1.size() == W && w2.size() == W * W && b2.size() == W && w3.size() == W &&
                b3.size() == 1,
            "mlp_a: parameter shapes do not match the 1-5-5-1 layout");

    // Post-dropout activations of both hidden layers, kept for the backward pass.
    Vec h1(n * W), h2(n * W), out(n);
    const Vec& x = a.value();
    for (std::size_t t = 0; t < n; ++t) {
        double* r1 = &h1[t * W];
        double* r2 = &h2[t * W];
        for (std::size_t i = 0; i < W; ++i) {
            const double z = w1[i] * x[t] + b1[i];
            r1[i] = z > 0.0 ? z * (masks.active() ? masks.m1[t * W + i] : 1.0) : 0.0;
        }
        for (std::size_t i = 0; i < W; ++i) {
            double z = b2[i];
            for (std::size_t j = 0; j < W; ++j) z += w2[i * W + j] * r1[j];
            r2[i] = z > 0.0 ? z * (masks.active() ? masks.m2[t * W + i] : 1.0) : 0.0;
        }
        double o = b3[0];
        for (std::size_t i = 0; i < W; ++i) o += w3[i] * r2[i];
        out[t] = o;
    }
    const std::size_t ia = a.id(), iw1 = v.w1.id(), ib1 = v.b1.id(), iw2 = v.w2.id(), ib2 = v.b2.id(),
                      iw3 = v.w3.id(), ib3 = v.b3.id();
    const bool drop = masks.active();
    return a.tape()->record(
        std::move(out), {a, v.w1, v.b1, v.w2, v.b2, v.w3, v.b3},
        [=, m1 = masks.m1, m2 = masks.m2](Tape& tp, const Vec& g) {
            const Vec &xv = tp.value(ia), &w1v = tp.value(iw1), &w2v = tp.value(iw2), &w3v = tp.value(iw3);
            Vec ga(n, 0.0), gw1(W, 0.0), gb1(W, 0.0), gw2(W * W, 0.0), gb2(W, 0.0), gw3(W, 0.0), gb3(1, 0.0);
            for (std::size_t t = 0; t < n; ++t) {
                const double* r1 = &h1[t * W];
                const double* r2 = &h2[t * W];
                gb3[0] += g[t];
                std::array<double, W> d2{}, d1{};
                for (std::size_t i = 0; i < W; ++i) {
                    gw3[i] += g[t] * r2[i];
                    // r2 = relu(z) * mask; d r2/d z = mask where r2 > 0 (mask > 0 there)
                    if (r2[i] > 0.0) d2[i] = g[t] * w3v[i] * (drop ? m2[t * W + i] : 1.0);
                }
                for (std::size_t i = 0; i < W; ++i) {
                    gb2[i] += d2[i];
                    for (std::size_t j = 0; j < W; ++j) {
                        gw2[i * W + j] += d2[i] * r1[j];
                        d1[j] += d2[i] * w2v[i * W + j];
                    }
                }
                for (std::size_t j = 0; j < W; ++j) {
                    if (!(r1[j] > 0.0)) continue;
                    const double dz = d1[j] * (drop ? m1[t * W + j] : 1.0);
                    gb1[j] += dz;
                    gw1[j] += dz * xv[t];
                    ga[t] += dz * w1v[j];
                }
            }
            tp.accumulate(ia, ga);
            tp.accumulate(iw1, gw1);
            tp.accumulate(ib1, gb1);
            tp.accumulate(iw2, gw2);
            tp.accumulate(ib2, gb2);
            tp.accumulate(iw3, gw3);
            tp.accumulate(ib3, gb3);
        });
}

/// G(x, theta) = A(x * h) on the tape.
inline ad::Var decoder_forward(ad::Var x, const DecoderVars& v, std::ptrdiff_t offset, const DropoutMasks& masks)
{
    return mlp_a(ad::conv1d(x, v.h, offset), v, masks);
}

/// Plain-value decoder. Dropout is drawn from `rng` only in train mode.
inline Vec decoder_forward(const Vec& x, const DecoderParams& p, Padding padding, bool train_mode, Rng& rng,
                           double dropout = 0.3)
{
    ad::Tape tape;
    const DropoutMasks masks = train_mode ? DropoutMasks::draw(x.size(), dropout, rng) : DropoutMasks{};
    return decoder_forward(tape.constant(x), decoder_consts(tape, p), channel_offset(padding, p.h.size()), masks)
        .value();
}

// ---------------------------------------------------------------------------
// Sampling.

struct SoftSample {
    Vec c_hat;  // soft bits in (0, 1); c_hat -> 1 means symbol +1
    Vec x_hat;  // 2 c_hat - 1
};

/// Gumbel draws g_{j,1} - g_{j,2} for each symbol.
inline Vec gumbel_differences(std::size_t n, Rng& rng)
{
    Vec d(n);
    for (auto& v : d) {
        const double g1 = rng.gumbel();
        v = g1 - rng.gumbel();
    }
    return d;
}

/// c_hat_j = sigmoid((log q_j - log(1 - q_j) + g_{j,1} - g_{j,2}) / tau); the
/// two-way softmax written as a sigmoid.
inline ad::Var gumbel_softmax(ad::Var q, const Vec& gumbel_diff, ad::Var tau_raw)
{
    using namespace ad;
    require(gumbel_diff.size() == q.size(), "gumbel_softmax: draw count mismatch");
    Var logits = ad::log(q) - ad::log(1.0 - q);
    Var z = logits + q.tape()->constant(gumbel_diff);
    return sigmoid(scale(z, ad::exp(-1.0 * tau_raw)));
}

inline SoftSample gumbel_softmax_sample(const Vec& q, double tau, const Vec& gumbel_diff)
{
    require(tau > 0.0, "gumbel_softmax_sample: temperature must be positive");
    require(gumbel_diff.size() == q.size(), "gumbel_softmax_sample: draw count mismatch");
    SoftSample s;
    s.c_hat.resize(q.size());
    s.x_hat.resize(q.size());
    for (std::size_t j = 0; j < q.size(); ++j) {
        const double z = (std::log(q[j]) - std::log1p(-q[j]) + gumbel_diff[j]) / tau;
        s.c_hat[j] = ad::sigmoid_value(z);
        s.x_hat[j] = 2.0 * s.c_hat[j] - 1.0;
    }
    return s;
}

inline SoftSample gumbel_softmax_sample(const Vec& q, double tau, Rng& rng)
{
    return gumbel_softmax_sample(q, tau, gumbel_differences(q.size(), rng));
}

/// x_j = +1 with probability q_j, else -1.
inline Vec bernoulli_sample(const Vec& q, Rng& rng)
{
    Vec x(q.size());
    for (std::size_t j = 0; j < q.size(); ++j) x[j] = rng.uniform() < q[j] ? 1.0 : -1.0;
    return x;
}

// ---------------------------------------------------------------------------

struct NonlinearTrainConfig {
    std::size_t iterations = 3000;
    double lr = 0.01;
    std::size_t subseq_len = 128;  // 0: whole block every step
    std::optional<EncoderShape> shape;
    Padding padding = Padding::causal;
    std::size_t lead = 0;  // index of the initial impulse
    MlpInit init = MlpInit::identity;
    double dropout = 0.3;
    double tau_init = 5.0;
    bool train_tau = true;
    std::size_t linear_warmup = 0;  // closed-form linear VAEE steps that seed h and Phi
    bool plateau_stop = false;
    std::size_t patience = 300;
    double plateau_tol = 1e-4;
};

/// Encoder + decoder parameters with the two-sample gradient estimator.
class NonlinearVaee {
public:
    NonlinearVaee(std::size_t taps, Padding padding, EncoderShape shape, MlpInit init, double dropout, Rng& rng,
                  double tau_init = 5.0, std::size_t lead = 0)
        : padding_(padding), dropout_(dropout)
    {
        if (padding == Padding::centered) require(taps % 2 == 1, "NonlinearVaee: centered padding needs an odd tap count");
        require(tau_init > 0.0, "NonlinearVaee: initial temperature must be positive");
        add_encoder(store_, init_encoder(Modulation::bpsk, shape, rng));
        DecoderParams dec = init_decoder(taps, padding, init, rng, lead);
        dec.tau_raw = std::log(tau_init);
        add_decoder(store_, dec);
    }

    /// Copies channel taps and encoder kernels from a trained linear model;
    /// optimizer state starts fresh.
    void seed_from(const LinearVaee& lin)
    {
        require(lin.scheme() == Modulation::bpsk, "seed_from: BPSK models only");
        require(lin.taps().size() == store_.value(decoder_names::h).size(), "seed_from: tap count mismatch");
        store_.value(decoder_names::h) = lin.taps().re;
        for (const auto* name : {&encoder_names::k1, &encoder_names::k2}) {
            require(lin.params().value(*name).size() == store_.value(*name).size(), "seed_from: encoder shape mismatch");
            store_.value(*name) = lin.params().value(*name);
        }
    }

    ad::ParamStore& params() { return store_; }
    const ad::ParamStore& params() const { return store_; }
    Padding padding() const { return padding_; }
    double dropout() const { return dropout_; }
    DecoderParams decoder() const { return decoder_from(store_); }
    EncoderParams encoder() const { return encoder_from(store_, Modulation::bpsk); }
    Posterior posterior(const Observation& y) const { return encode(y, encoder()); }

    /// One stochastic loss estimate and its gradients.
    ///   theta pass: x ~ Bernoulli(q) held fixed, G through trainable theta.
    ///   Phi pass:   Gumbel-relaxed x from q and tau, G with theta frozen,
    ///               plus the analytic entropy (and prior / Gallager terms).
    /// Reported values come from the Phi pass.
    std::pair<LossBreakdown, ad::GradMap> evaluate(const Observation& y, Rng& rng, const LossOptions& opt = {}) const
    {
        require(!y.complex(), "NonlinearVaee: BPSK observations only");
        check_lambda(opt);
        ad::Tape tape;
        const std::size_t n = y.size();
        const double half_n = 0.5 * static_cast<double>(n);
        ad::Var yv = tape.constant(y.re);
        ad::Var q = encode_bpsk(yv, encoder_vars(tape, store_, Modulation::bpsk));
        const DecoderVars theta = decoder_vars(tape, store_);
        const auto offset = channel_offset(padding_, theta.h.size());

        ad::Var x_hard = tape.constant(bernoulli_sample(q.value(), rng));
        ad::Var g1 = decoder_forward(x_hard, theta, offset, DropoutMasks::draw(n, dropout_, rng));
        ad::Var c_theta = ad::sum(ad::square(yv - g1));
        ad::Var theta_term = half_n * ad::log_floor(c_theta, kResidualFloor);

        DecoderVars frozen = decoder_consts(tape, decoder_from(store_));
        frozen.tau_raw = theta.tau_raw;
        ad::Var c_soft = gumbel_softmax(q, gumbel_differences(n, rng), theta.tau_raw);
        ad::Var g2 = decoder_forward(2.0 * c_soft - 1.0, frozen, offset, DropoutMasks{});
        ad::Var c_phi = ad::sum(ad::square(yv - g2));
        LossNodes phi = compose_bpsk_loss(c_phi, q, n, opt, kResidualFloor);

        const double weight = opt.code ? opt.lambda : 1.0;
        ad::Var total = phi.total + weight * theta_term;
        if (!std::isfinite(total.scalar()))
            throw NumericError("nonlinear VAEE loss is not finite (C_NL=" + std::to_string(c_phi.scalar()) + ")");
        auto grads = tape.backward(total, store_);
        return {phi.values, std::move(grads)};
    }

    void set_train_tau(bool on) { train_tau_ = on; }

    LossBreakdown step(const Observation& y, double lr, Rng& rng, const LossOptions& opt = {})
    {
        auto [values, grads] = evaluate(y, rng, opt);
        if (!train_tau_) grads.erase(decoder_names::tau_raw);
        ad::amsgrad_step(store_, grads, lr);
        return values;
    }

    /// Noise variance implied by the hard decisions: ||y - G(x_hat)||^2 / N.
    double residual_sigma2(const Observation& y) const
    {
        Rng unused(0);
        const Posterior q = posterior(y);
        const Vec x = hard_decision(q).re;
        const Vec g = decoder_forward(x, decoder(), padding_, false, unused);
        double acc = 0.0;
        for (std::size_t t = 0; t < y.size(); ++t) acc += (y.re[t] - g[t]) * (y.re[t] - g[t]);
        return acc / static_cast<double>(y.size());
    }

private:
    Padding padding_;
    double dropout_;
    bool train_tau_ = true;
    ad::ParamStore store_;
};

struct NonlinearTrainResult {
    DecoderParams theta;
    EncoderParams encoder;
    Posterior posterior;
    double sigma2 = 0.0;
    std::vector<LossBreakdown> trace;
};

inline NonlinearTrainResult train_vaee_nl(const Observation& y, std::size_t taps, const NonlinearTrainConfig& cfg,
                                          Rng& rng)
{
    require(y.size() >= 1, "train_vaee_nl: empty observation");
    const EncoderShape shape = cfg.shape.value_or(EncoderShape::defaults(Modulation::bpsk));
    NonlinearVaee model(taps, cfg.padding, shape, cfg.init, cfg.dropout, rng, cfg.tau_init, cfg.lead);
    model.set_train_tau(cfg.train_tau);
    const std::size_t len = cfg.subseq_len == 0 ? y.size() : std::min(cfg.subseq_len, y.size());
    auto pick = [&] {
        const std::size_t start = len == y.size() ? 0 : static_cast<std::size_t>(rng.below(y.size() - len + 1));
        return len == y.size() ? y : segment(y, start, len);
    };
    if (cfg.linear_warmup > 0) {
        LinearVaee lin(Modulation::bpsk, taps, cfg.padding, shape, rng, cfg.lead);
        for (std::size_t it = 0; it < cfg.linear_warmup; ++it) lin.step(pick(), cfg.lr);
        model.seed_from(lin);
    }
    NonlinearTrainResult res;
    res.trace.reserve(cfg.iterations);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        res.trace.push_back(model.step(pick(), cfg.lr, rng));
        if (cfg.plateau_stop && plateaued(res.trace, cfg.patience, cfg.plateau_tol)) break;
    }
    res.theta = model.decoder();
    res.encoder = model.encoder();
    res.posterior = model.posterior(y);
    res.sigma2 = model.residual_sigma2(y);
    return res;
}

} // namespace blindeq
