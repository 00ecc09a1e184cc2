#pragma once

// Transmit symbols and the noisy (non)linear ISI channel y = g(x * h) + w.

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace blindeq {

using Vec = std::vector<double>;
using Bits = std::vector<int>;

enum class Modulation { bpsk, qpsk };

inline std::string to_string(Modulation m) { return m == Modulation::bpsk ? "bpsk" : "qpsk"; }

/// BPSK uses `re` only; QPSK stores the I and Q components. Every component
/// is exactly +1 or -1.
struct SymbolSequence {
    Modulation scheme = Modulation::bpsk;
    Vec re;
    Vec im;

    std::size_t size() const { return re.size(); }
};

/// Received samples; `im` is empty for BPSK.
struct Observation {
    Vec re;
    Vec im;

    std::size_t size() const { return re.size(); }
    bool complex() const { return !im.empty(); }
};

/// Complex (or real, with empty `im`) impulse response.
struct Taps {
    Vec re;
    Vec im;

    std::size_t size() const { return re.size(); }
    bool complex() const { return !im.empty(); }
};

/// How the transmitted block sits inside the channel's memory.
enum class Padding {
    centered,       // zero-padded on both sides, h indexed around 0
    causal,         // zero-padded on the left, h_0 .. h_{M-1}
    random_prefix,  // causal, preceded by M-1 unknown random symbols
};

enum class NonlinearityKind { identity, g1, g2, g3, custom };

struct Nonlinearity {
    NonlinearityKind kind = NonlinearityKind::identity;
    std::function<double(double)> custom;

    double operator()(double a) const
    {
        switch (kind) {
        case NonlinearityKind::identity: return a;
        case NonlinearityKind::g1: return std::tanh(a);
        case NonlinearityKind::g2: return a + 0.2 * a * a - 0.1 * a * a * a;
        case NonlinearityKind::g3:
            return a + 0.2 * a * a - 0.1 * a * a * a + 0.5 * std::cos(std::numbers::pi * a);
        case NonlinearityKind::custom: return custom(a);
        }
        return a;
    }

    bool is_identity() const { return kind == NonlinearityKind::identity; }
};

inline std::string to_string(NonlinearityKind k)
{
    switch (k) {
    case NonlinearityKind::identity: return "identity";
    case NonlinearityKind::g1: return "g1";
    case NonlinearityKind::g2: return "g2";
    case NonlinearityKind::g3: return "g3";
    case NonlinearityKind::custom: return "custom";
    }
    return "?";
}

struct ChannelSpec {
    Taps h;
    Padding padding = Padding::centered;
    Nonlinearity g;
    double sigma_w2 = 0.0;  // BPSK: per-sample variance; QPSK: total complex variance
};

// ---------------------------------------------------------------------------

inline Bits random_bits(std::size_t n, Rng& rng)
{
    Bits b(n);
    for (auto& v : b) v = rng.bit();
    return b;
}

/// Bit c maps to (-1)^c. QPSK takes bit pairs: even index -> I, odd -> Q.
inline SymbolSequence modulate(const Bits& bits, Modulation scheme)
{
    SymbolSequence s;
    s.scheme = scheme;
    auto sym = [](int c) {
        require(c == 0 || c == 1, "modulate: bits must be 0 or 1");
        return c == 0 ? 1.0 : -1.0;
    };
    if (scheme == Modulation::bpsk) {
        s.re.reserve(bits.size());
        for (int c : bits) s.re.push_back(sym(c));
        return s;
    }
    require(bits.size() % 2 == 0, "modulate: QPSK needs an even number of bits");
    for (std::size_t k = 0; k < bits.size(); k += 2) {
        s.re.push_back(sym(bits[k]));
        s.im.push_back(sym(bits[k + 1]));
    }
    return s;
}

inline SymbolSequence random_symbols(std::size_t n, Modulation scheme, Rng& rng)
{
    return modulate(random_bits(scheme == Modulation::bpsk ? n : 2 * n, rng), scheme);
}

/// Hard bit decisions from BPSK symbols or soft values: +1 (or >= 0) -> 0.
inline Bits hard_bits(const Vec& x)
{
    Bits b(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) b[i] = x[i] >= 0.0 ? 0 : 1;
    return b;
}

// ---------------------------------------------------------------------------
// Built-in channels and nonlinearities.

inline bool is_builtin_channel(const std::string& name)
{
    return name == "h1" || name == "h2" || name == "ht1" || name == "ht2" || name == "ht3";
}

inline bool is_builtin_nonlinearity(const std::string& name)
{
    return name == "identity" || name == "g1" || name == "g2" || name == "g3";
}

/// h1, h2: complex QPSK channels (used centered); ht1..ht3: real causal.
inline Taps builtin_channel(const std::string& name)
{
    if (name == "h1")
        return {{0.0545, 0.2832, -0.7676, -0.0641, 0.0466}, {0.05, -0.11971, 0.2788, -0.0576, -0.02275}};
    if (name == "h2") return {{0.0554, -1.3449, 1.0067, 0.3476}, {0.0165, -0.4523, 1.1524, 0.3153}};
    if (name == "ht1") return {{0.2, 0.9, 0.3}, {}};
    if (name == "ht2") return {{0.2, 0.9, 0.3, 1.0}, {}};
    if (name == "ht3") return {{0.16, 0.545, -0.672, 0.256, 0.095, -0.389}, {}};
    throw ContractError("unknown built-in channel '" + name + "'");
}

inline Nonlinearity builtin_nonlinearity(const std::string& name)
{
    if (name == "identity") return {NonlinearityKind::identity, {}};
    if (name == "g1") return {NonlinearityKind::g1, {}};
    if (name == "g2") return {NonlinearityKind::g2, {}};
    if (name == "g3") return {NonlinearityKind::g3, {}};
    throw ContractError("unknown built-in nonlinearity '" + name + "'");
}

// ---------------------------------------------------------------------------

/// Centered indexing needs an odd tap count; even-length responses get a
/// trailing zero tap.
inline Taps centered_taps(Taps h)
{
    if (h.size() % 2 == 0) {
        h.re.push_back(0.0);
        if (h.complex()) h.im.push_back(0.0);
    }
    return h;
}

namespace detail {

/// Linear convolution of the block, respecting the padding convention.
/// `prefix` holds the M-1 symbols preceding the block (random_prefix only).
inline Vec convolve_block(const Vec& x, const Vec& h, Padding padding, const Vec& prefix)
{
    const std::size_t n = x.size();
    const std::size_t m = h.size();
    if (padding == Padding::centered) return ad::conv1d_values(x, h, static_cast<std::ptrdiff_t>((m - 1) / 2));
    if (padding == Padding::causal) return ad::conv1d_values(x, h, 0);
    Vec ext(prefix);
    ext.insert(ext.end(), x.begin(), x.end());
    Vec full = ad::conv1d_values(ext, h, 0);
    return Vec(full.begin() + static_cast<std::ptrdiff_t>(prefix.size()), full.begin() + static_cast<std::ptrdiff_t>(prefix.size() + n));
}

} // namespace detail

/// Noiseless output g(x * h). Draws the random prefix from `rng` when the
/// padding asks for one.
inline Observation clean_output(const SymbolSequence& x, const ChannelSpec& spec, Rng& rng)
{
    require(x.size() >= 1, "apply_channel: empty symbol sequence");
    require(spec.h.size() >= 1, "apply_channel: empty impulse response");
    const bool cplx = x.scheme == Modulation::qpsk;
    require(!cplx || spec.g.is_identity(), "apply_channel: nonlinearities are supported for BPSK only");
    require(spec.sigma_w2 >= 0.0, "apply_channel: negative noise variance");

    const Taps h = spec.padding == Padding::centered ? centered_taps(spec.h) : spec.h;
    const std::size_t m = h.size();
    Vec pre_re, pre_im;
    if (spec.padding == Padding::random_prefix) {
        for (std::size_t k = 0; k + 1 < m; ++k) pre_re.push_back(rng.bit() ? -1.0 : 1.0);
        if (cplx)
            for (std::size_t k = 0; k + 1 < m; ++k) pre_im.push_back(rng.bit() ? -1.0 : 1.0);
    }

    Observation out;
    if (!cplx) {
        require(!h.complex(), "apply_channel: complex taps with BPSK symbols");
        out.re = detail::convolve_block(x.re, h.re, spec.padding, pre_re);
        for (auto& v : out.re) v = spec.g(v);
        return out;
    }
    Vec him = h.complex() ? h.im : Vec(m, 0.0);
    const Vec rr = detail::convolve_block(x.re, h.re, spec.padding, pre_re);
    const Vec ii = detail::convolve_block(x.im, him, spec.padding, pre_im);
    const Vec ri = detail::convolve_block(x.re, him, spec.padding, pre_re);
    const Vec ir = detail::convolve_block(x.im, h.re, spec.padding, pre_im);
    out.re.resize(x.size());
    out.im.resize(x.size());
    for (std::size_t n = 0; n < x.size(); ++n) {
        out.re[n] = rr[n] - ii[n];
        out.im[n] = ri[n] + ir[n];
    }
    return out;
}

/// Adds white Gaussian noise: variance sigma_w2 per real sample (BPSK) or
/// sigma_w2/2 per component (QPSK).
inline void add_noise(Observation& y, double sigma_w2, Rng& rng)
{
    if (sigma_w2 <= 0.0) return;
    const double sd = std::sqrt(y.complex() ? sigma_w2 / 2.0 : sigma_w2);
    for (auto& v : y.re) v += sd * rng.normal();
    for (auto& v : y.im) v += sd * rng.normal();
}

inline Observation apply_channel(const SymbolSequence& x, const ChannelSpec& spec, Rng& rng)
{
    Observation y = clean_output(x, spec, rng);
    add_noise(y, spec.sigma_w2, rng);
    return y;
}

inline double energy(const Observation& y)
{
    double e = 0.0;
    for (double v : y.re) e += v * v;
    for (double v : y.im) e += v * v;
    return e;
}

/// Noise variance for which E||w||^2 = ||clean||^2 * 10^(-snr_db/10).
/// Both schemes use sigma_w2 = E||w||^2 / N (total complex variance for QPSK).
inline double sigma_for_snr(const Observation& clean, double snr_db)
{
    const double e = energy(clean);
    if (!(e > 0.0)) throw NumericError("sigma_for_snr: clean signal has zero energy");
    return e / (static_cast<double>(clean.size()) * std::pow(10.0, snr_db / 10.0));
}

/// Realized SNR 20 log10(||clean|| / ||noise||).
inline double empirical_snr_db(const Observation& clean, const Observation& noisy)
{
    double en = 0.0;
    for (std::size_t n = 0; n < clean.re.size(); ++n) en += (noisy.re[n] - clean.re[n]) * (noisy.re[n] - clean.re[n]);
    for (std::size_t n = 0; n < clean.im.size(); ++n) en += (noisy.im[n] - clean.im[n]) * (noisy.im[n] - clean.im[n]);
    return 10.0 * std::log10(energy(clean) / en);
}

} // namespace blindeq
