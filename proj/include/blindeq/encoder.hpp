#pragma once

// The equalizer network q(x|y): two single-filter 1D convolution layers with
// a residual connection from the input, ending in a sigmoid that yields
// per-symbol Bernoulli probabilities P(X_j = +1 | y).
//
//   BPSK:  q = sigmoid(conv2(tanh(conv1(y))) + y)
//   QPSK:  (qI, qQ) = sigmoid(cconv2(softsign(cconv1(y))) + y), complex convs
//
// Layers use "same" output length with the kernel aligned at offset K/2, so
// the output at j sees y_{j-K+1+K/2} .. y_{j+K/2}. No bias terms.

#include <algorithm>
#include <string>

#include "autodiff.hpp"
#include "rng.hpp"
#include "signal.hpp"

namespace blindeq {

inline constexpr double kProbClip = 1e-7;

struct Posterior {
    Modulation scheme = Modulation::bpsk;
    Vec q;    // P(X^I_j = +1 | y) (the only component for BPSK)
    Vec q_q;  // P(X^Q_j = +1 | y), QPSK only

    std::size_t size() const { return q.size(); }
};

struct EncoderParams {
    Modulation scheme = Modulation::bpsk;
    Vec k1, k2;        // real parts (BPSK: the kernels)
    Vec k1_im, k2_im;  // QPSK only

    std::size_t count() const { return k1.size() + k2.size() + k1_im.size() + k2_im.size(); }
};

struct EncoderShape {
    std::size_t layer1 = 10;
    std::size_t layer2 = 5;

    static EncoderShape defaults(Modulation m) { return m == Modulation::bpsk ? EncoderShape{10, 5} : EncoderShape{5, 2}; }
};

/// Kernels i.i.d. uniform on [-0.1, 0.1].
inline EncoderParams init_encoder(Modulation scheme, EncoderShape shape, Rng& rng)
{
    require(shape.layer1 > 0 && shape.layer2 > 0, "init_encoder: kernel sizes must be positive");
    auto draw = [&](std::size_t n) {
        Vec v(n);
        for (auto& e : v) e = rng.uniform(-0.1, 0.1);
        return v;
    };
    EncoderParams p;
    p.scheme = scheme;
    p.k1 = draw(shape.layer1);
    if (scheme == Modulation::qpsk) p.k1_im = draw(shape.layer1);
    p.k2 = draw(shape.layer2);
    if (scheme == Modulation::qpsk) p.k2_im = draw(shape.layer2);
    return p;
}

namespace encoder_names {
inline const std::string k1 = "enc.k1";
inline const std::string k2 = "enc.k2";
inline const std::string k1_im = "enc.k1_im";
inline const std::string k2_im = "enc.k2_im";
} // namespace encoder_names

inline void add_encoder(ad::ParamStore& store, const EncoderParams& p)
{
    store.add(encoder_names::k1, p.k1);
    store.add(encoder_names::k2, p.k2);
    if (p.scheme == Modulation::qpsk) {
        store.add(encoder_names::k1_im, p.k1_im);
        store.add(encoder_names::k2_im, p.k2_im);
    }
}

inline EncoderParams encoder_from(const ad::ParamStore& store, Modulation scheme)
{
    EncoderParams p;
    p.scheme = scheme;
    p.k1 = store.value(encoder_names::k1);
    p.k2 = store.value(encoder_names::k2);
    if (scheme == Modulation::qpsk) {
        p.k1_im = store.value(encoder_names::k1_im);
        p.k2_im = store.value(encoder_names::k2_im);
    }
    return p;
}

inline std::ptrdiff_t encoder_offset(std::size_t kernel_len) { return static_cast<std::ptrdiff_t>(kernel_len / 2); }

/// Tape nodes of the encoder kernels.
struct EncoderVars {
    ad::Var k1, k2, k1_im, k2_im;
};

inline EncoderVars encoder_vars(ad::Tape& tape, const ad::ParamStore& store, Modulation scheme)
{
    EncoderVars v;
    v.k1 = tape.param(store, encoder_names::k1);
    v.k2 = tape.param(store, encoder_names::k2);
    if (scheme == Modulation::qpsk) {
        v.k1_im = tape.param(store, encoder_names::k1_im);
        v.k2_im = tape.param(store, encoder_names::k2_im);
    }
    return v;
}

inline EncoderVars encoder_consts(ad::Tape& tape, const EncoderParams& p)
{
    EncoderVars v;
    v.k1 = tape.constant(p.k1);
    v.k2 = tape.constant(p.k2);
    if (p.scheme == Modulation::qpsk) {
        v.k1_im = tape.constant(p.k1_im);
        v.k2_im = tape.constant(p.k2_im);
    }
    return v;
}

/// BPSK forward pass on the tape; returns clipped q.
inline ad::Var encode_bpsk(ad::Var y, const EncoderVars& k)
{
    using namespace ad;
    Var h1 = tanh(conv1d(y, k.k1, encoder_offset(k.k1.size())));
    Var h2 = conv1d(h1, k.k2, encoder_offset(k.k2.size()));
    return clamp(sigmoid(h2 + y), kProbClip, 1.0 - kProbClip);
}

/// QPSK forward pass on the tape; returns clipped (qI, qQ).
inline ad::CVar encode_qpsk(ad::CVar y, const EncoderVars& k)
{
    using namespace ad;
    CVar c1 = complex_conv1d(y, {k.k1, k.k1_im}, encoder_offset(k.k1.size()));
    CVar a1{softsign(c1.re), softsign(c1.im)};
    CVar c2 = complex_conv1d(a1, {k.k2, k.k2_im}, encoder_offset(k.k2.size()));
    return {clamp(sigmoid(c2.re + y.re), kProbClip, 1.0 - kProbClip),
            clamp(sigmoid(c2.im + y.im), kProbClip, 1.0 - kProbClip)};
}

inline Posterior encode_bpsk(const Observation& y, const EncoderParams& p)
{
    require(p.scheme == Modulation::bpsk, "encode_bpsk: parameters are not BPSK");
    require(!y.complex(), "encode_bpsk: complex observation");
    ad::Tape tape;
    auto q = encode_bpsk(tape.constant(y.re), encoder_consts(tape, p));
    return {Modulation::bpsk, q.value(), {}};
}

inline Posterior encode_qpsk(const Observation& y, const EncoderParams& p)
{
    require(p.scheme == Modulation::qpsk, "encode_qpsk: parameters are not QPSK");
    require(y.complex() && y.im.size() == y.re.size(), "encode_qpsk: observation needs matching I/Q parts");
    ad::Tape tape;
    auto q = encode_qpsk({tape.constant(y.re), tape.constant(y.im)}, encoder_consts(tape, p));
    return {Modulation::qpsk, q.re.value(), q.im.value()};
}

inline Posterior encode(const Observation& y, const EncoderParams& p)
{
    return p.scheme == Modulation::bpsk ? encode_bpsk(y, p) : encode_qpsk(y, p);
}

/// Most likely symbols under the posterior (q >= 0.5 -> +1).
inline SymbolSequence hard_decision(const Posterior& q)
{
    SymbolSequence s;
    s.scheme = q.scheme;
    for (double v : q.q) s.re.push_back(v >= 0.5 ? 1.0 : -1.0);
    for (double v : q.q_q) s.im.push_back(v >= 0.5 ? 1.0 : -1.0);
    return s;
}

} // namespace blindeq
