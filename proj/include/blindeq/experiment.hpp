#pragma once

// Trial runners for every mode/algorithm pair and the config-level sweep.
//
// Seeding: trial t at SNR index s draws its data from
// derive_seed(derive_seed(master, s), t), so every algorithm sees the same
// symbols and noise. Each algorithm's own randomness comes from
// derive_seed(data_seed, algorithm_stream(id)).

#include <atomic>
#include <fstream>
#include <memory>
#include <sstream>

#include "baselines.hpp"
#include "config.hpp"
#include "eval.hpp"
#include "ldpc.hpp"
#include "nonlinear.hpp"
#include "turbo.hpp"
#include "vae_loss.hpp"

namespace blindeq {

inline LdpcCode load_code(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open code file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_alist(ss.str());
}

/// Fixed per-algorithm stream index; stable when algorithms are added.
inline std::uint64_t algorithm_stream(const std::string& id)
{
    static const std::vector<std::string> ids = {"vaee",     "cma",      "lms",      "vaee-nl",
                                                 "turbo-vaee", "vaee-gallager", "turbo-eq", "turbo-em",
                                                 "turbo-em-syndrome", "turbo-vaee-nl"};
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == id) return 1000 + i;
    throw ConfigError("unknown algorithm '" + id + "'");
}

inline std::uint64_t trial_seed(std::uint64_t master, std::size_t snr_index, std::size_t trial)
{
    return derive_seed(derive_seed(master, snr_index), trial);
}

/// Everything a trial needs besides its job; shared read-only by workers.
class Experiment {
public:
    explicit Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg))
    {
        validate(cfg_);
        if (is_coded(cfg_.mode)) {
            code_ = std::make_unique<LdpcCode>(load_code(cfg_.code));
            sampler_ = std::make_unique<CodewordSampler>(*code_);
        }
    }

    const ExperimentConfig& config() const { return cfg_; }
    const LdpcCode* code() const { return code_.get(); }

    std::vector<SweepJob> jobs() const
    {
        std::vector<SweepJob> out;
        for (std::size_t s = 0; s < cfg_.snr_db.size(); ++s)
            for (const auto& algo : cfg_.algorithms)
                for (std::size_t t = 0; t < cfg_.trials; ++t)
                    out.push_back({algo, cfg_.channel, cfg_.nonlinearity, cfg_.snr_db[s], t,
                                   trial_seed(cfg_.seed, s, t)});
        return out;
    }

    TrialResult run(const SweepJob& job) const
    {
        switch (cfg_.mode) {
        case Mode::uncoded_linear: return run_uncoded(job);
        case Mode::uncoded_nonlinear_smoke: return run_smoke(job);
        case Mode::coded_linear:
        case Mode::coded_nonlinear: return run_coded(job);
        }
        throw ConfigError("unknown mode");
    }

private:
    static Vec flatten(const Taps& h)
    {
        Vec v = h.re;
        v.insert(v.end(), h.im.begin(), h.im.end());
        return v;
    }

    static void fill_uncoded(TrialResult& r, const SymbolSequence& x_hat, const SymbolSequence& x_true,
                             std::size_t max_delay)
    {
        const Resolution res = ser_resolved(x_hat, x_true, max_delay);
        r.ser = res.ser;
        r.ber = ber_resolved(x_hat, x_true, res);
        r.delay = res.delay;
        r.rotation = res.rotation;
    }

    NonlinearTrainConfig nonlinear_config() const
    {
        NonlinearTrainConfig nl;
        nl.iterations = cfg_.nl_iterations;
        nl.lr = cfg_.nl_lr;
        nl.subseq_len = cfg_.N;
        nl.shape = EncoderShape{cfg_.nl_layer1, cfg_.nl_layer2};
        nl.padding = Padding::causal;
        nl.lead = cfg_.lead;
        nl.dropout = cfg_.nl_dropout;
        nl.tau_init = cfg_.nl_tau;
        nl.train_tau = cfg_.nl_train_tau;
        nl.linear_warmup = cfg_.nl_warmup;
        return nl;
    }

    /// Train on L symbols, test on K fresh symbols through the same channel.
    TrialResult run_uncoded(const SweepJob& job) const
    {
        Rng data(job.seed);
        ChannelSpec spec;
        spec.h = centered_taps(cfg_.channel_taps());
        spec.padding = Padding::centered;
        const auto x = random_symbols(cfg_.L, cfg_.modulation, data);
        Observation y = clean_output(x, spec, data);
        const double s2 = sigma_for_snr(y, job.snr_db);
        add_noise(y, s2, data);
        const auto xt = random_symbols(cfg_.K, cfg_.modulation, data);
        Observation yt = clean_output(xt, spec, data);
        add_noise(yt, s2, data);

        Rng rng(derive_seed(job.seed, algorithm_stream(job.algorithm)));
        TrialResult r;
        if (job.algorithm == "vaee") {
            LinearTrainConfig lc;
            lc.iterations = cfg_.iterations;
            lc.lr = cfg_.lr;
            lc.subseq_len = cfg_.N;
            lc.padding = Padding::centered;
            std::size_t taps = cfg_.estimated_taps();
            if (taps % 2 == 0) ++taps;
            const auto tr = train_vaee_linear(y, cfg_.modulation, taps, lc, rng);
            fill_uncoded(r, hard_decision(encode(yt, tr.encoder)), xt, cfg_.delay_range());
            r.h_est = flatten(tr.h);
        } else if (job.algorithm == "cma") {
            const auto c = cma_equalize(y, cfg_.modulation, cfg_.cma_taps, cfg_.cma_mu, cfg_.cma_epochs);
            fill_uncoded(r, slice_symbols(c.eq.apply(to_complex(yt.re, yt.im)), cfg_.modulation), xt,
                         cfg_.delay_range());
        } else if (job.algorithm == "lms") {
            const auto l = lms_mmse_equalize(y, x, cfg_.lms_taps, cfg_.lms_mu, cfg_.lms_epochs);
            fill_uncoded(r, slice_symbols(l.eq.apply(to_complex(yt.re, yt.im)), cfg_.modulation), xt,
                         cfg_.delay_range());
            r.genie = true;
        } else {
            throw ConfigError("algorithm '" + job.algorithm + "' is not an uncoded algorithm");
        }
        return r;
    }

    /// One BPSK block of L symbols after a random prefix; errors are counted
    /// on the block the model was trained on.
    TrialResult run_smoke(const SweepJob& job) const
    {
        Rng data(job.seed);
        ChannelSpec spec;
        spec.h = cfg_.channel_taps();
        spec.g = builtin_nonlinearity(cfg_.nonlinearity);
        spec.padding = Padding::random_prefix;
        const auto x = random_symbols(cfg_.L, Modulation::bpsk, data);
        Observation y = clean_output(x, spec, data);
        add_noise(y, sigma_for_snr(y, job.snr_db), data);

        Rng rng(derive_seed(job.seed, algorithm_stream(job.algorithm)));
        TrialResult r;
        const std::size_t taps = cfg_.estimated_taps();
        if (job.algorithm == "vaee-nl") {
            const auto tr = train_vaee_nl(y, taps, nonlinear_config(), rng);
            fill_uncoded(r, hard_decision(tr.posterior), x, cfg_.delay_range());
            r.h_est = tr.theta.h;
        } else if (job.algorithm == "vaee") {
            LinearTrainConfig lc;
            lc.iterations = cfg_.iterations;
            lc.lr = cfg_.lr;
            lc.subseq_len = cfg_.N;
            lc.padding = Padding::causal;
            lc.lead = cfg_.lead;
            const auto tr = train_vaee_linear(y, Modulation::bpsk, taps, lc, rng);
            fill_uncoded(r, hard_decision(tr.posterior), x, cfg_.delay_range());
            r.h_est = tr.h.re;
        } else {
            throw ConfigError("algorithm '" + job.algorithm + "' is not available in smoke mode");
        }
        return r;
    }

    TrialResult run_coded(const SweepJob& job) const
    {
        Rng data(job.seed);
        const Bits c = sampler_->sample(data);
        const auto x = modulate(c, Modulation::bpsk);
        ChannelSpec spec;
        spec.h = cfg_.channel_taps();
        spec.g = builtin_nonlinearity(cfg_.nonlinearity);
        spec.padding = Padding::random_prefix;
        Observation y = clean_output(x, spec, data);
        const double s2 = sigma_for_snr(y, job.snr_db);
        add_noise(y, s2, data);

        Rng rng(derive_seed(job.seed, algorithm_stream(job.algorithm)));
        const std::size_t m = spec.h.size();
        TurboModel model;
        model.taps = cfg_.model_taps;
        model.lead = cfg_.lead;
        model.shape = EncoderShape{cfg_.nl_layer1, cfg_.nl_layer2};
        model.nonlinear = nonlinear_config();

        TrialResult r;
        auto finish = [&](const Bits& bits) {
            r.ber = ber_coded(bits, c);
            r.ser = r.ber;  // BPSK: one bit per symbol
            r.zero_syndrome = syndrome_weight(*code_, bits) == 0;
        };
        const std::string& a = job.algorithm;
        if (a == "turbo-vaee" || a == "turbo-vaee-nl") {
            const auto kind = a == "turbo-vaee" ? ChannelKind::linear : ChannelKind::nonlinear;
            const auto tr = turbo_vaee(y, *code_, m, cfg_.turbo, kind, rng, model);
            finish(tr.bits);
            r.h_est = tr.h_est;
        } else if (a == "vaee-gallager") {
            const auto tr = standalone_vaee(y, *code_, m, cfg_.turbo, ChannelKind::linear, rng, model);
            finish(tr.bits);
            r.h_est = tr.h_est;
        } else if (a == "turbo-eq") {
            const auto tr = turbo_equalize(y.re, {spec.h.re, s2, spec.g}, *code_, cfg_.te_outer, cfg_.te_bp);
            finish(tr.bits);
            r.h_est = spec.h.re;
            r.genie = true;
        } else if (a == "turbo-em" || a == "turbo-em-syndrome") {
            const bool genie = a == "turbo-em";
            const TurboEmConfig ec{cfg_.em_stage1, cfg_.em_outer, cfg_.em_bp};
            const auto tr = turbo_em(y.re, *code_, m, ec, genie ? Selection::genie : Selection::syndrome,
                                     genie ? &c : nullptr);
            finish(tr.bits);
            r.h_est = tr.candidates.at(tr.chosen).h;
            r.genie = genie;
        } else {
            throw ConfigError("algorithm '" + a + "' is not a coded algorithm");
        }
        return r;
    }

    ExperimentConfig cfg_;
    std::unique_ptr<LdpcCode> code_;
    std::unique_ptr<CodewordSampler> sampler_;
};

/// Full sweep for a validated config; see run_jobs for the stop semantics.
inline SweepOutcome run_sweep(const Experiment& exp, std::size_t workers, const std::atomic<bool>* stop = nullptr)
{
    return run_jobs(exp.jobs(), [&exp](const SweepJob& j) { return exp.run(j); }, workers, stop);
}

} // namespace blindeq
