#pragma once

// Turbo VAEE: I warm-up steps on the Gallager-blended loss, then T - I rounds
// of { one VAEE step with the current prior, attenuated LLRs into B BP
// iterations, BP extrinsics pulled toward 1/2 become the next prior }.
//
// LLR convention: log P(X=+1)/P(X=-1), i.e. log P(c=0)/P(c=1).

#include <optional>
#include <variant>

#include "ldpc.hpp"
#include "nonlinear.hpp"
#include "vae_loss.hpp"

namespace blindeq {

struct TurboConfig {
    std::size_t T = 80;  // total VAEE iterations
    std::size_t I = 50;  // iterations before turbo mode
    std::size_t B = 15;  // BP iterations per turbo round
    double lr = 0.1;
    double lambda = 0.7;
    double eta = 0.1;
    double alpha = 0.2;

    std::size_t turbo_rounds() const { return T - I; }

    void validate() const
    {
        if (!(I <= T)) throw ConfigError("turbo: I must not exceed T");
        if (!(B >= 1)) throw ConfigError("turbo: B must be at least 1");
        if (!(lr > 0.0)) throw ConfigError("turbo: lr must be positive");
        if (!(lambda > 0.0 && lambda <= 1.0)) throw ConfigError("turbo: lambda must lie in (0, 1]");
        if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("turbo: eta must lie in (0, 1]");
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("turbo: alpha must lie in [0, 1]");
    }
};

/// eta * log(q / (1 - q)), clipped.
inline Vec llr_from_posterior(const Vec& q, double eta)
{
    Vec l(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) l[i] = clip_llr(eta * (std::log(q[i]) - std::log1p(-q[i])));
    return l;
}

/// p_i(+1) = alpha * pbar_i(+1) + (1 - alpha) / 2.
inline PriorVector prior_update(const Vec& p_bar, double alpha)
{
    require(alpha >= 0.0 && alpha <= 1.0, "prior_update: alpha must lie in [0, 1]");
    PriorVector p;
    p.p_plus.resize(p_bar.size());
    for (std::size_t i = 0; i < p_bar.size(); ++i) {
        require(p_bar[i] >= 0.0 && p_bar[i] <= 1.0, "prior_update: probabilities must lie in [0, 1]");
        p.p_plus[i] = alpha * p_bar[i] + (1.0 - alpha) * 0.5;
    }
    return p;
}

enum class ChannelKind { linear, nonlinear };

/// Model shape used inside the turbo loop.
struct TurboModel {
    std::size_t taps = 0;  // 0: use M
    std::size_t lead = 0;
    EncoderShape shape = EncoderShape::defaults(Modulation::bpsk);
    NonlinearTrainConfig nonlinear;  // dropout, temperature, MLP init
};

struct BpRound {
    std::size_t round = 0;  // VAEE iteration index (0-based, >= I)
    std::size_t syndrome_weight = 0;
    bool zero_syndrome = false;
    std::size_t bp_iterations = 0;
    std::optional<double> ber;  // only with genie bits supplied for analysis
};

struct TurboDiagnostics {
    std::vector<LossBreakdown> losses;  // one per VAEE iteration
    std::vector<BpRound> bp_rounds;     // one per turbo round
};

struct TurboResult {
    Bits bits;
    Vec h_est;
    Posterior posterior;
    bool zero_syndrome = false;
    bool early_exit = false;
    TurboDiagnostics diagnostics;
};

namespace detail {

/// Uniform wrapper over the linear and nonlinear models.
class TurboDetector {
public:
    TurboDetector(ChannelKind kind, std::size_t taps, const TurboModel& m, Rng& rng)
    {
        if (kind == ChannelKind::linear)
            model_.emplace<LinearVaee>(Modulation::bpsk, taps, Padding::causal, m.shape, rng, m.lead);
        else {
            auto& nl = model_.emplace<NonlinearVaee>(taps, Padding::causal, m.shape, m.nonlinear.init,
                                                     m.nonlinear.dropout, rng, m.nonlinear.tau_init, m.lead);
            nl.set_train_tau(m.nonlinear.train_tau);
        }
    }

    LossBreakdown step(const Observation& y, double lr, const LossOptions& opt, Rng& rng)
    {
        if (auto* lin = std::get_if<LinearVaee>(&model_)) return lin->step(y, lr, opt);
        return std::get<NonlinearVaee>(model_).step(y, lr, rng, opt);
    }

    Posterior posterior(const Observation& y) const
    {
        if (const auto* lin = std::get_if<LinearVaee>(&model_)) return lin->posterior(y);
        return std::get<NonlinearVaee>(model_).posterior(y);
    }

    Vec taps() const
    {
        if (const auto* lin = std::get_if<LinearVaee>(&model_)) return lin->taps().re;
        return std::get<NonlinearVaee>(model_).decoder().h;
    }

private:
    std::variant<std::monostate, LinearVaee, NonlinearVaee> model_;
};

inline double bit_error_rate(const Bits& a, const Bits& b)
{
    require(a.size() == b.size(), "bit_error_rate: length mismatch");
    std::size_t e = 0;
    for (std::size_t i = 0; i < a.size(); ++i) e += a[i] != b[i];
    return a.empty() ? 0.0 : static_cast<double>(e) / static_cast<double>(a.size());
}

} // namespace detail

/// Full-block turbo VAEE on one received codeword. `genie_bits`, when given,
/// is used only to annotate the diagnostics.
inline TurboResult turbo_vaee(const Observation& y, const LdpcCode& code, std::size_t m, const TurboConfig& cfg,
                              ChannelKind kind, Rng& rng, const TurboModel& model = {},
                              const Bits* genie_bits = nullptr)
{
    cfg.validate();
    require(!y.complex(), "turbo_vaee: BPSK observations only");
    require(y.size() == code.n_vars, "turbo_vaee: block length does not match the code");
    require(!genie_bits || genie_bits->size() == y.size(), "turbo_vaee: genie bits have the wrong length");
    detail::TurboDetector det(kind, model.taps == 0 ? m : model.taps, model, rng);

    TurboResult res;
    LossOptions opt;
    opt.code = &code;
    opt.lambda = cfg.lambda;
    for (std::size_t it = 0; it < cfg.I; ++it) res.diagnostics.losses.push_back(det.step(y, cfg.lr, opt, rng));

    PriorVector prior = PriorVector::uniform(y.size());
    BpResult last;
    bool have_bp = false;
    for (std::size_t it = cfg.I; it < cfg.T; ++it) {
        opt.prior = &prior;
        res.diagnostics.losses.push_back(det.step(y, cfg.lr, opt, rng));
        const Posterior q = det.posterior(y);
        last = bp_decode(code, llr_from_posterior(q.q, cfg.eta), {cfg.B, true});
        have_bp = true;
        BpRound r;
        r.round = it;
        r.syndrome_weight = syndrome_weight(code, last.hard);
        r.zero_syndrome = last.zero_syndrome;
        r.bp_iterations = last.iterations_run;
        if (genie_bits) r.ber = detail::bit_error_rate(last.hard, *genie_bits);
        res.diagnostics.bp_rounds.push_back(r);
        if (last.zero_syndrome) {
            res.early_exit = it + 1 < cfg.T;
            break;
        }
        prior = prior_update(last.extrinsic_p, cfg.alpha);
    }
    res.posterior = det.posterior(y);
    if (!have_bp) last = bp_decode(code, llr_from_posterior(res.posterior.q, cfg.eta), {cfg.B, true});
    res.bits = last.hard;
    res.zero_syndrome = syndrome_weight(code, res.bits) == 0;
    res.h_est = det.taps();
    return res;
}

struct StandaloneResult {
    Bits bits;  // hard decisions of q, no BP
    Vec h_est;
    Posterior posterior;
    std::vector<LossBreakdown> trace;
};

/// VAEE with the Gallager term only: T full-block steps, decisions from q.
inline StandaloneResult standalone_vaee(const Observation& y, const LdpcCode& code, std::size_t m,
                                        const TurboConfig& cfg, ChannelKind kind, Rng& rng,
                                        const TurboModel& model = {})
{
    cfg.validate();
    require(y.size() == code.n_vars, "standalone_vaee: block length does not match the code");
    detail::TurboDetector det(kind, model.taps == 0 ? m : model.taps, model, rng);
    LossOptions opt;
    opt.code = &code;
    opt.lambda = cfg.lambda;
    StandaloneResult res;
    for (std::size_t it = 0; it < cfg.T; ++it) res.trace.push_back(det.step(y, cfg.lr, opt, rng));
    res.posterior = det.posterior(y);
    res.bits.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) res.bits[i] = res.posterior.q[i] >= 0.5 ? 0 : 1;
    res.h_est = det.taps();
    return res;
}

} // namespace blindeq
