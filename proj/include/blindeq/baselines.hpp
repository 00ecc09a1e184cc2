#pragma once

// Reference equalizers and decoders used for comparison:
//   - Godard/CMA blind FIR equalizer (p = 2)
//   - non-blind LMS linear MMSE equalizer with decision-delay search
//   - BCJR forward-backward detector for BPSK over a (non)linear ISI trellis
//   - channel-informed turbo equalization (BCJR <-> BP)
//   - EM channel estimation under the product approximation
//     E[x_i x_j | y] ~ E[x_i | y] E[x_j | y], and its coded two-stage variant
//     with the six sign/shift candidates.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <vector>

#include "errors.hpp"
#include "ldpc.hpp"
#include "signal.hpp"

namespace blindeq {

using cplx = std::complex<double>;

inline std::vector<cplx> to_complex(const Vec& re, const Vec& im)
{
    std::vector<cplx> out(re.size());
    for (std::size_t n = 0; n < re.size(); ++n) out[n] = {re[n], im.empty() ? 0.0 : im[n]};
    return out;
}

/// Godard dispersion constant R2 = E|x|^4 / E|x|^2 over the constellation.
inline double cma_dispersion(Modulation m)
{
    std::vector<cplx> pts = m == Modulation::bpsk ? std::vector<cplx>{{1, 0}, {-1, 0}}
                                                  : std::vector<cplx>{{1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
    double m4 = 0.0, m2 = 0.0;
    for (auto p : pts) {
        m4 += std::norm(p) * std::norm(p);
        m2 += std::norm(p);
    }
    return m4 / m2;
}

/// FIR taps with a designated reference alignment: z_n = sum_k w_k y_{n+delay-k}.
struct FirEqualizer {
    std::vector<cplx> taps;
    std::ptrdiff_t delay = 0;
    double mu = 0.0;

    std::vector<cplx> apply(const std::vector<cplx>& y) const
    {
        const auto n = static_cast<std::ptrdiff_t>(y.size());
        std::vector<cplx> z(y.size());
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            cplx acc{};
            for (std::size_t k = 0; k < taps.size(); ++k) {
                const auto j = i + delay - static_cast<std::ptrdiff_t>(k);
                if (j >= 0 && j < n) acc += taps[k] * y[static_cast<std::size_t>(j)];
            }
            z[static_cast<std::size_t>(i)] = acc;
        }
        return z;
    }
};

inline SymbolSequence slice_symbols(const std::vector<cplx>& z, Modulation m)
{
    SymbolSequence s;
    s.scheme = m;
    for (auto v : z) {
        s.re.push_back(v.real() >= 0 ? 1.0 : -1.0);
        if (m == Modulation::qpsk) s.im.push_back(v.imag() >= 0 ? 1.0 : -1.0);
    }
    return s;
}

struct CmaResult {
    FirEqualizer eq;
    std::vector<cplx> output;
    SymbolSequence decisions;
    std::vector<double> cost_per_epoch;  // mean (|z|^2 - R2)^2 over each epoch
    bool diverged = false;
};

/// Multi-epoch stochastic-gradient CMA with center-spike initialization.
inline CmaResult cma_equalize(const Observation& obs, Modulation m, std::size_t taps_len, double mu, std::size_t epochs)
{
    require(taps_len % 2 == 1, "cma_equalize: taps length must be odd");
    require(obs.size() >= 1, "cma_equalize: empty observation");
    const auto y = to_complex(obs.re, obs.im);
    const double r2 = cma_dispersion(m);
    CmaResult res;
    res.eq.taps.assign(taps_len, cplx{});
    res.eq.taps[taps_len / 2] = 1.0;
    res.eq.delay = static_cast<std::ptrdiff_t>(taps_len / 2);
    res.eq.mu = mu;
    const auto n = static_cast<std::ptrdiff_t>(y.size());
    auto& w = res.eq.taps;
    for (std::size_t ep = 0; ep < epochs && !res.diverged; ++ep) {
        double cost = 0.0;
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            cplx z{};
            for (std::size_t k = 0; k < taps_len; ++k) {
                const auto j = i + res.eq.delay - static_cast<std::ptrdiff_t>(k);
                if (j >= 0 && j < n) z += w[k] * y[static_cast<std::size_t>(j)];
            }
            if (m == Modulation::bpsk) z = {z.real(), 0.0};
            if (std::abs(z) > 1e3 || !std::isfinite(std::abs(z))) {
                res.diverged = true;
                break;
            }
            const double e = std::norm(z) - r2;
            cost += e * e;
            for (std::size_t k = 0; k < taps_len; ++k) {
                const auto j = i + res.eq.delay - static_cast<std::ptrdiff_t>(k);
                if (j >= 0 && j < n) w[k] -= mu * e * z * std::conj(y[static_cast<std::size_t>(j)]);
            }
        }
        res.cost_per_epoch.push_back(cost / static_cast<double>(n));
    }
    res.output = res.eq.apply(y);
    res.decisions = slice_symbols(res.output, m);
    return res;
}

struct LmsResult {
    FirEqualizer eq;
    std::vector<cplx> output;  // z_n estimates x_n (delay already compensated)
    SymbolSequence decisions;
    double training_mse = 0.0;
};

namespace detail {

/// Causal-window LMS toward x_{n-d}; returns (taps, final-epoch MSE).
inline std::pair<std::vector<cplx>, double> lms_run(const std::vector<cplx>& y, const std::vector<cplx>& x,
                                                    std::size_t taps_len, std::size_t d, double mu,
                                                    std::size_t epochs)
{
    std::vector<cplx> w(taps_len, cplx{});
    const auto n = static_cast<std::ptrdiff_t>(y.size());
    double mse = 0.0;
    for (std::size_t ep = 0; ep < epochs; ++ep) {
        mse = 0.0;
        std::size_t cnt = 0;
        for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(d); i < n; ++i) {
            cplx z{};
            for (std::size_t k = 0; k < taps_len; ++k) {
                const auto j = i - static_cast<std::ptrdiff_t>(k);
                if (j >= 0) z += w[k] * y[static_cast<std::size_t>(j)];
            }
            const cplx e = x[static_cast<std::size_t>(i - static_cast<std::ptrdiff_t>(d))] - z;
            mse += std::norm(e);
            ++cnt;
            for (std::size_t k = 0; k < taps_len; ++k) {
                const auto j = i - static_cast<std::ptrdiff_t>(k);
                if (j >= 0) w[k] += mu * e * std::conj(y[static_cast<std::size_t>(j)]);
            }
        }
        mse /= static_cast<double>(std::max<std::size_t>(cnt, 1));
    }
    return {w, mse};
}

} // namespace detail

/// Non-blind LMS equalizer trained on the known symbols. The decision delay
/// d in [0, taps_len) with the lowest final-epoch training MSE is kept.
inline LmsResult lms_mmse_equalize(const Observation& obs, const SymbolSequence& known, std::size_t taps_len,
                                   double mu, std::size_t epochs)
{
    require(obs.size() == known.size(), "lms_mmse_equalize: training symbols and observation lengths differ");
    require(taps_len >= 1, "lms_mmse_equalize: empty tap vector");
    const auto y = to_complex(obs.re, obs.im);
    const auto x = to_complex(known.re, known.im);
    LmsResult best;
    best.training_mse = std::numeric_limits<double>::infinity();
    for (std::size_t d = 0; d < taps_len; ++d) {
        auto [w, mse] = detail::lms_run(y, x, taps_len, d, mu, epochs);
        if (!(mse < best.training_mse)) continue;
        best.training_mse = mse;
        best.eq.taps = std::move(w);
        best.eq.delay = static_cast<std::ptrdiff_t>(d);
        best.eq.mu = mu;
    }
    if (!std::isfinite(best.training_mse)) {  // every delay diverged or mu = 0 with no data
        best.eq.taps.assign(taps_len, cplx{});
        best.eq.delay = 0;
    }
    best.output = best.eq.apply(y);
    best.decisions = slice_symbols(best.output, known.scheme);
    return best;
}

// ---------------------------------------------------------------------------
// BCJR over the ISI trellis (BPSK). State = the previous M-1 symbols; the
// block is preceded by unknown symbols (uniform initial state) and the final
// state is free.

inline constexpr std::size_t kMaxTrellisTaps = 12;

struct TrellisSpec {
    Vec h;  // h_0 .. h_{M-1}
    double sigma2 = 1.0;
    Nonlinearity g;
};

struct BcjrResult {
    Vec p_plus;      // P(X_n = +1 | y)
    Vec mean;        // E[X_n | y]
    Vec llr;         // posterior LLR (includes the prior)
    double log_likelihood = 0.0;
};

inline double log_sum_exp(double a, double b)
{
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

inline BcjrResult bcjr(const Vec& y, const TrellisSpec& spec, const Vec* prior_llr = nullptr)
{
    const std::size_t m = spec.h.size();
    require(m >= 1, "bcjr: empty impulse response");
    require(m <= kMaxTrellisTaps, "bcjr: trellis too large (more than 12 taps)");
    require(spec.sigma2 > 0.0, "bcjr: noise variance must be positive");
    require(!prior_llr || prior_llr->size() == y.size(), "bcjr: prior length mismatch");
    const std::size_t n = y.size();
    const std::size_t states = std::size_t{1} << (m - 1);
    const double ninf = -std::numeric_limits<double>::infinity();

    // Branch means g(a) for state s and input bit b (bit 1 <=> symbol -1).
    std::vector<double> mean(states * 2);
    auto sym = [](std::size_t bitv) { return bitv ? -1.0 : 1.0; };
    for (std::size_t s = 0; s < states; ++s)
        for (std::size_t b = 0; b < 2; ++b) {
            double a = spec.h[0] * sym(b);
            for (std::size_t k = 1; k < m; ++k) a += spec.h[k] * sym((s >> (k - 1)) & 1u);
            mean[s * 2 + b] = spec.g(a);
        }
    auto next_state = [&](std::size_t s, std::size_t b) { return ((s << 1) | b) & (states - 1); };

    const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi * spec.sigma2);
    auto log_prior = [&](std::size_t t, std::size_t b) {
        if (!prior_llr) return -std::log(2.0);
        const double l = (*prior_llr)[t];
        // log P(+1) = -log(1+e^{-l}), log P(-1) = -log(1+e^{l})
        const double v = b == 0 ? -l : l;
        return v > 0 ? -(v + std::log1p(std::exp(-v))) : -std::log1p(std::exp(v));
    };
    auto gamma = [&](std::size_t t, std::size_t s, std::size_t b) {
        const double r = y[t] - mean[s * 2 + b];
        return log_norm - r * r / (2.0 * spec.sigma2) + log_prior(t, b);
    };

    std::vector<double> alpha((n + 1) * states, ninf), beta((n + 1) * states, ninf);
    for (std::size_t s = 0; s < states; ++s) alpha[s] = -std::log(static_cast<double>(states));
    double loglik = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        double* next = &alpha[(t + 1) * states];
        const double* cur = &alpha[t * states];
        for (std::size_t s = 0; s < states; ++s) {
            if (cur[s] == ninf) continue;
            for (std::size_t b = 0; b < 2; ++b) {
                const auto s2 = next_state(s, b);
                next[s2] = log_sum_exp(next[s2], cur[s] + gamma(t, s, b));
            }
        }
        double z = ninf;
        for (std::size_t s = 0; s < states; ++s) z = log_sum_exp(z, next[s]);
        for (std::size_t s = 0; s < states; ++s) next[s] -= z;
        loglik += z;
    }
    for (std::size_t s = 0; s < states; ++s) beta[n * states + s] = 0.0;
    for (std::size_t t = n; t-- > 0;) {
        double* cur = &beta[t * states];
        const double* nxt = &beta[(t + 1) * states];
        for (std::size_t s = 0; s < states; ++s)
            for (std::size_t b = 0; b < 2; ++b) cur[s] = log_sum_exp(cur[s], gamma(t, s, b) + nxt[next_state(s, b)]);
        double z = ninf;
        for (std::size_t s = 0; s < states; ++s) z = log_sum_exp(z, cur[s]);
        for (std::size_t s = 0; s < states; ++s) cur[s] -= z;
    }

    BcjrResult r;
    r.log_likelihood = loglik;
    r.p_plus.resize(n);
    r.mean.resize(n);
    r.llr.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        double lp = ninf, lm = ninf;
        for (std::size_t s = 0; s < states; ++s) {
            const double a = alpha[t * states + s];
            if (a == ninf) continue;
            lp = log_sum_exp(lp, a + gamma(t, s, 0) + beta[(t + 1) * states + next_state(s, 0)]);
            lm = log_sum_exp(lm, a + gamma(t, s, 1) + beta[(t + 1) * states + next_state(s, 1)]);
        }
        r.llr[t] = lp - lm;
        r.p_plus[t] = prob_from_llr(r.llr[t]);
        r.mean[t] = std::tanh(0.5 * r.llr[t]);
    }
    return r;
}

// ---------------------------------------------------------------------------

struct TurboEqResult {
    Bits bits;
    Vec full_llr;
    bool zero_syndrome = false;
    std::size_t outer_iterations = 0;
};

/// One BCJR <-> BP exchange loop with known channel parameters. Extrinsic
/// information is exchanged in both directions; the final hard decision comes
/// from the BP full posterior (or the BCJR posterior when bp_iters == 0).
inline TurboEqResult turbo_equalize(const Vec& y, const TrellisSpec& spec, const LdpcCode& code,
                                    std::size_t outer_iters, std::size_t bp_iters)
{
    require(y.size() == code.n_vars, "turbo_equalize: block length does not match the code");
    require(outer_iters >= 1, "turbo_equalize: need at least one outer iteration");
    Vec prior(y.size(), 0.0);
    TurboEqResult res;
    for (std::size_t it = 0; it < outer_iters; ++it) {
        const BcjrResult det = bcjr(y, spec, &prior);
        Vec ext(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) ext[i] = clip_llr(det.llr[i] - prior[i]);
        res.outer_iterations = it + 1;
        if (bp_iters == 0) {
            res.full_llr = det.llr;
            res.bits = hard_bits(det.llr);
            res.zero_syndrome = syndrome_weight(code, res.bits) == 0;
            continue;
        }
        const BpResult dec = bp_decode(code, ext, {bp_iters, true});
        prior = dec.extrinsic_llr;
        res.full_llr = dec.full_llr;
        res.bits = dec.hard;
        res.zero_syndrome = dec.zero_syndrome;
        if (res.zero_syndrome) break;
    }
    return res;
}

// ---------------------------------------------------------------------------
// EM channel estimation.

struct EmResult {
    Vec h;
    double sigma2 = 0.0;
    Vec posterior_mean;              // E[x_n | y] from the last E-step
    std::vector<double> likelihood;  // log p(y) at each E-step
    bool ridge_used = false;
};

/// Solves A x = b by Gaussian elimination with partial pivoting. Adds a
/// 1e-8 ridge and sets `ridge` when a pivot collapses.
inline Vec solve_normal_equations(std::vector<Vec> a, Vec b, bool& ridge)
{
    const std::size_t n = b.size();
    auto attempt = [&](std::vector<Vec> m, Vec v, Vec& x) {
        for (std::size_t c = 0; c < n; ++c) {
            std::size_t p = c;
            for (std::size_t r = c + 1; r < n; ++r)
                if (std::abs(m[r][c]) > std::abs(m[p][c])) p = r;
            if (std::abs(m[p][c]) < 1e-12) return false;
            std::swap(m[p], m[c]);
            std::swap(v[p], v[c]);
            for (std::size_t r = c + 1; r < n; ++r) {
                const double f = m[r][c] / m[c][c];
                for (std::size_t k = c; k < n; ++k) m[r][k] -= f * m[c][k];
                v[r] -= f * v[c];
            }
        }
        x.assign(n, 0.0);
        for (std::size_t c = n; c-- > 0;) {
            double s = v[c];
            for (std::size_t k = c + 1; k < n; ++k) s -= m[c][k] * x[k];
            x[c] = s / m[c][c];
        }
        return true;
    };
    Vec x;
    if (attempt(a, b, x)) return x;
    ridge = true;
    for (std::size_t i = 0; i < n; ++i) a[i][i] += 1e-8;
    if (!attempt(a, b, x)) throw NumericError("EM M-step: singular normal matrix even with ridge");
    return x;
}

/// M-step under the product approximation. With u_n = (s_n, ..., s_{n-M+1})
/// (s = 0 before the block) and V_n = u_n u_n^T with unit diagonal:
///   h      = (sum V_n)^{-1} sum u_n y_n
///   sigma2 = (1/N) sum (y_n^2 - 2 y_n u_n^T h + h^T V_n h)
inline std::pair<Vec, double> em_m_step(const Vec& y, const Vec& s, std::size_t m, bool& ridge)
{
    const std::size_t n = y.size();
    auto at = [&](std::size_t t, std::size_t k) { return t >= k ? s[t - k] : 0.0; };
    std::vector<Vec> a(m, Vec(m, 0.0));
    Vec b(m, 0.0);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t i = 0; i < m; ++i) {
            const double ui = at(t, i);
            b[i] += ui * y[t];
            for (std::size_t j = 0; j < m; ++j) a[i][j] += i == j ? 1.0 : ui * at(t, j);
        }
    Vec h = solve_normal_equations(a, b, ridge);
    double acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        double uh = 0.0, spread = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            const double u = at(t, k);
            uh += u * h[k];
            spread += h[k] * h[k] * (1.0 - u * u);
        }
        acc += y[t] * y[t] - 2.0 * y[t] * uh + uh * uh + spread;
    }
    return {h, acc / static_cast<double>(n)};
}

struct EmInit {
    Vec h;                         // empty: unit impulse at index 0
    std::optional<double> sigma2;  // default: sample variance of y
};

inline double sample_variance(const Vec& y)
{
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    return var / static_cast<double>(y.size());
}

inline EmResult em_estimate(const Vec& y, std::size_t m, std::size_t iters, const EmInit& init = {},
                            const Vec* prior_llr = nullptr)
{
    require(m >= 1 && m <= kMaxTrellisTaps, "em_estimate: tap count out of range");
    require(y.size() > m, "em_estimate: block shorter than the channel");
    EmResult r;
    r.h = init.h.empty() ? Vec(m, 0.0) : init.h;
    if (init.h.empty()) r.h[0] = 1.0;
    require(r.h.size() == m, "em_estimate: initial taps have the wrong length");
    r.sigma2 = init.sigma2.value_or(sample_variance(y));
    for (std::size_t it = 0; it < iters; ++it) {
        const BcjrResult e = bcjr(y, {r.h, std::max(r.sigma2, 1e-12), {}}, prior_llr);
        r.likelihood.push_back(e.log_likelihood);
        r.posterior_mean = e.mean;
        auto [h, s2] = em_m_step(y, e.mean, m, r.ridge_used);
        r.h = std::move(h);
        r.sigma2 = s2;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Two-stage coded EM.

enum class Selection { genie, syndrome };

struct TurboEmConfig {
    std::size_t stage1_iters = 30;
    std::size_t outer_iters = 30;  // stage-2 rounds, each one EM step plus BP
    std::size_t bp_iters = 15;
};

struct TurboEmCandidate {
    int sign = 1;
    int shift = 0;  // +1: taps moved one index later
    Vec h;
    double sigma2 = 0.0;
    Bits bits;
    std::size_t syndrome_weight = 0;
    std::optional<double> ber;  // genie mode only
};

struct TurboEmResult {
    Bits bits;
    std::size_t chosen = 0;
    std::vector<TurboEmCandidate> candidates;
    Selection selection = Selection::genie;
    bool genie = false;
};

/// The six starting points: both polarities times shifts {-1, 0, +1}.
inline std::vector<TurboEmCandidate> turbo_em_candidates(const Vec& h)
{
    std::vector<TurboEmCandidate> out;
    const auto m = static_cast<std::ptrdiff_t>(h.size());
    for (int sign : {1, -1})
        for (int shift : {-1, 0, 1}) {
            TurboEmCandidate c;
            c.sign = sign;
            c.shift = shift;
            c.h.assign(h.size(), 0.0);
            for (std::ptrdiff_t k = 0; k < m; ++k) {
                const auto src = k - shift;
                if (src >= 0 && src < m) c.h[static_cast<std::size_t>(k)] = sign * h[static_cast<std::size_t>(src)];
            }
            out.push_back(std::move(c));
        }
    return out;
}

/// Stage 1 runs EM without the code; stage 2 restarts EM from each of the six
/// candidates with BP extrinsics as BCJR priors. Genie selection needs the
/// transmitted bits and is therefore not a deployable receiver.
inline TurboEmResult turbo_em(const Vec& y, const LdpcCode& code, std::size_t m, const TurboEmConfig& cfg,
                              Selection mode, const Bits* true_bits = nullptr)
{
    require(y.size() == code.n_vars, "turbo_em: block length does not match the code");
    require(mode != Selection::genie || (true_bits && true_bits->size() == y.size()),
            "turbo_em: genie selection needs the transmitted bits");
    const EmResult stage1 = em_estimate(y, m, cfg.stage1_iters);

    TurboEmResult res;
    res.selection = mode;
    res.genie = mode == Selection::genie;
    res.candidates = turbo_em_candidates(stage1.h);
    for (auto& c : res.candidates) {
        Vec h = c.h;
        double s2 = std::max(stage1.sigma2, 1e-6);
        Vec prior(y.size(), 0.0);
        BpResult dec;
        for (std::size_t it = 0; it < cfg.outer_iters; ++it) {
            const BcjrResult e = bcjr(y, {h, s2, {}}, &prior);
            bool ridge = false;
            auto [nh, ns2] = em_m_step(y, e.mean, m, ridge);
            Vec ext(y.size());
            for (std::size_t i = 0; i < y.size(); ++i) ext[i] = clip_llr(e.llr[i] - prior[i]);
            dec = bp_decode(code, ext, {cfg.bp_iters, true});
            prior = dec.extrinsic_llr;
            h = std::move(nh);
            s2 = std::max(ns2, 1e-6);
            if (dec.zero_syndrome) break;
        }
        c.h = h;
        c.sigma2 = s2;
        c.bits = dec.hard;
        c.syndrome_weight = syndrome_weight(code, c.bits);
        if (true_bits) {
            std::size_t errs = 0;
            for (std::size_t i = 0; i < y.size(); ++i) errs += c.bits[i] != (*true_bits)[i];
            c.ber = static_cast<double>(errs) / static_cast<double>(y.size());
        }
    }
    auto score = [&](const TurboEmCandidate& c) {
        return mode == Selection::genie ? *c.ber : static_cast<double>(c.syndrome_weight);
    };
    for (std::size_t k = 1; k < res.candidates.size(); ++k)
        if (score(res.candidates[k]) < score(res.candidates[res.chosen])) res.chosen = k;
    res.bits = res.candidates[res.chosen].bits;
    return res;
}

} // namespace blindeq
