#include <gtest/gtest.h>

#include <cmath>

#include "blindeq/eval.hpp"
#include "blindeq/nonlinear.hpp"
#include "test_util.hpp"

using namespace blindeq;
using testutil::fd_error;
using testutil::random_vec;
using testutil::uniform_vec;

namespace {

// Layer-by-layer evaluation of A with dropout off.
double mlp_oracle(double a, const DecoderParams& p)
{
    Vec h1(kMlpWidth), h2(kMlpWidth);
    for (std::size_t i = 0; i < kMlpWidth; ++i) h1[i] = std::max(0.0, p.w1[i] * a + p.b1[i]);
    for (std::size_t i = 0; i < kMlpWidth; ++i) {
        double z = p.b2[i];
        for (std::size_t j = 0; j < kMlpWidth; ++j) z += p.w2[i * kMlpWidth + j] * h1[j];
        h2[i] = std::max(0.0, z);
    }
    double o = p.b3[0];
    for (std::size_t i = 0; i < kMlpWidth; ++i) o += p.w3[i] * h2[i];
    return o;
}

DecoderParams random_decoder(Rng& rng)
{
    DecoderParams p = init_decoder(3, Padding::causal, MlpInit::random, rng);
    p.h = random_vec(3, rng);
    p.b1 = uniform_vec(kMlpWidth, rng, -0.5, 0.5);
    p.b2 = uniform_vec(kMlpWidth, rng, -0.5, 0.5);
    p.b3 = {0.3};
    return p;
}

} // namespace

TEST(Decoder, IdentityMlpIsLinearChannel)
{
    Rng rng(1);
    const Vec x = random_vec(20, rng), h{0.2, 0.9, 0.3};
    const Vec g = decoder_forward(x, identity_decoder(h), Padding::causal, false, rng);
    const Vec ref = ad::conv1d_values(x, h, 0);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(g[i], ref[i], 1e-14);
}

TEST(Decoder, InferenceIsDeterministic)
{
    Rng rng(2);
    const auto p = random_decoder(rng);
    const Vec x = random_vec(30, rng);
    Rng a(5), b(6);
    EXPECT_EQ(decoder_forward(x, p, Padding::causal, false, a), decoder_forward(x, p, Padding::causal, false, b));
}

TEST(Decoder, MatchesLayerByLayerOracle)
{
    Rng rng(3);
    const auto p = random_decoder(rng);
    const Vec x = random_vec(25, rng);
    const Vec g = decoder_forward(x, p, Padding::causal, false, rng);
    const Vec a = ad::conv1d_values(x, p.h, 0);
    for (std::size_t i = 0; i < 25; ++i) EXPECT_NEAR(g[i], mlp_oracle(a[i], p), 1e-13);
}

TEST(Decoder, InvertedDropoutPreservesMean)
{
    Rng rng(4);
    const auto p = identity_decoder({0.5, -1.2, 0.4});
    const Vec x = random_vec(6, rng);
    const Vec ref = decoder_forward(x, p, Padding::causal, false, rng);
    Vec mean(6, 0.0), sq(6, 0.0);
    const int draws = 10000;
    for (int d = 0; d < draws; ++d) {
        const Vec g = decoder_forward(x, p, Padding::causal, true, rng, 0.3);
        for (std::size_t i = 0; i < 6; ++i) {
            mean[i] += g[i] / draws;
            sq[i] += g[i] * g[i] / draws;
        }
    }
    for (std::size_t i = 0; i < 6; ++i) {
        const double se = std::sqrt((sq[i] - mean[i] * mean[i]) / draws);
        EXPECT_NEAR(mean[i], ref[i], 4 * se + 1e-12);
    }
}

TEST(Decoder, GradientsMatchFiniteDifferences)
{
    Rng rng(5);
    ad::ParamStore s;
    add_decoder(s, random_decoder(rng));
    const Vec x = random_vec(16, rng), y = random_vec(16, rng);
    auto build = [&](const ad::ParamStore& st, ad::Tape& t) {
        const auto v = decoder_vars(t, st);
        return ad::sum(ad::square(t.constant(y) - decoder_forward(t.constant(x), v, 0, DropoutMasks{})));
    };
    EXPECT_LT(fd_error(s, build), 1e-5);
}

TEST(Gumbel, SymmetricCaseIsHalf)
{
    for (double tau : {0.01, 1.0, 50.0}) EXPECT_DOUBLE_EQ(gumbel_softmax_sample({0.5}, tau, Vec{0.0}).c_hat[0], 0.5);
}

TEST(Gumbel, ZeroTemperatureLimitIsHardMax)
{
    Rng rng(6);
    const Vec q = uniform_vec(200, rng, 0.05, 0.95), d = gumbel_differences(200, rng);
    const auto s = gumbel_softmax_sample(q, 1e-4, d);
    for (std::size_t j = 0; j < q.size(); ++j) {
        const double z = std::log(q[j] / (1 - q[j])) + d[j];
        if (std::abs(z) < 1e-2) continue;
        EXPECT_NEAR(s.c_hat[j], z > 0 ? 1.0 : 0.0, 1e-12);
        EXPECT_DOUBLE_EQ(s.x_hat[j], 2 * s.c_hat[j] - 1);
    }
}

TEST(Gumbel, RoundedMeanMatchesProbability)
{
    Rng rng(7);
    const int n = 10000;
    double hits = 0.0;
    for (int k = 0; k < n; ++k) hits += gumbel_softmax_sample({0.3}, 0.1, rng).c_hat[0] > 0.5;
    EXPECT_NEAR(hits / n, 0.3, 3 * std::sqrt(0.3 * 0.7 / n));
}

TEST(Gumbel, TwoWaySoftmaxShiftInvariance)
{
    Rng rng(8);
    for (int rep = 0; rep < 50; ++rep) {
        const double q = rng.uniform(0.01, 0.99), tau = rng.uniform(0.05, 5.0), shift = rng.normal() * 10;
        const double g1 = rng.gumbel(), g2 = rng.gumbel();
        const double a = (std::log(q) + shift + g1) / tau, b = (std::log(1 - q) + shift + g2) / tau;
        const double softmax = std::exp(a - std::max(a, b)) / (std::exp(a - std::max(a, b)) + std::exp(b - std::max(a, b)));
        EXPECT_NEAR(gumbel_softmax_sample({q}, tau, Vec{g1 - g2}).c_hat[0], softmax, 1e-12);
    }
}

TEST(Gumbel, LowTemperatureTotalVariation)
{
    const auto c = oracle::gumbel_tv(0.05, 10000, 99);
    EXPECT_TRUE(c.pass) << c.value;
}

TEST(Gumbel, NonPositiveTemperatureRejected)
{
    EXPECT_THROW(gumbel_softmax_sample({0.5}, 0.0, Vec{0.0}), ContractError);
}

TEST(Gumbel, PathwiseGradientAtFixedDraws)
{
    Rng rng(9);
    ad::ParamStore s;
    s.add("q", uniform_vec(16, rng, 0.1, 0.9));
    s.add("tau", {std::log(0.7)});
    const Vec d = gumbel_differences(16, rng), y = random_vec(16, rng);
    const auto frozen = random_decoder(rng);
    auto build = [&](const ad::ParamStore& st, ad::Tape& t) {
        const auto x = 2.0 * gumbel_softmax(t.param(st, "q"), d, t.param(st, "tau")) - 1.0;
        const auto g = decoder_forward(x, decoder_consts(t, frozen), 0, DropoutMasks{});
        return ad::sum(ad::square(t.constant(y) - g));
    };
    EXPECT_LT(fd_error(s, build), 1e-4);
}

TEST(Bernoulli, DegenerateAndFair)
{
    Rng rng(10);
    for (double v : bernoulli_sample(Vec(50, 1.0), rng)) EXPECT_EQ(v, 1.0);
    for (double v : bernoulli_sample(Vec(50, 0.0), rng)) EXPECT_EQ(v, -1.0);
    const Vec x = bernoulli_sample(Vec(10000, 0.5), rng);
    double mean = 0.0;
    for (double v : x) mean += v / x.size();
    EXPECT_NEAR(mean, 0.0, 3.0 / std::sqrt(10000.0));
}

TEST(NlLoss, ZeroResidualStaysFinite)
{
    Rng rng(11);
    const auto x = random_symbols(64, Modulation::bpsk, rng);
    Observation y{x.re, {}};
    for (auto& v : y.re) v *= 40.0;
    NonlinearVaee model(1, Padding::causal, {3, 3}, MlpInit::identity, 0.0, rng, 1e-3);
    model.params().value(decoder_names::h) = {40.0};
    for (const auto& name : {encoder_names::k1, encoder_names::k2})
        for (auto& v : model.params().value(name)) v = 0.0;
    for (const auto& name : {decoder_names::w1, decoder_names::w2, decoder_names::w3}) {
        const auto ident = identity_decoder({40.0});
        model.params().value(name) = name == decoder_names::w1 ? ident.w1 : name == decoder_names::w2 ? ident.w2 : ident.w3;
    }
    const auto [values, grads] = model.evaluate(y, rng);
    EXPECT_TRUE(std::isfinite(values.total));
    EXPECT_LT(values.c_term, 1e-6);
    for (const auto& [name, g] : grads)
        for (double v : g) EXPECT_TRUE(std::isfinite(v)) << name;
}

TEST(NlLoss, EntropyGradientMatchesFiniteDifferences)
{
    Rng rng(12);
    ad::ParamStore s;
    auto p = init_encoder(Modulation::bpsk, {4, 3}, rng);
    for (auto& v : p.k1) v *= 10;
    add_encoder(s, p);
    const Vec y = random_vec(16, rng);
    auto build = [&](const ad::ParamStore& st, ad::Tape& t) {
        return entropy_bernoulli(encode_bpsk(t.constant(y), encoder_vars(t, st, Modulation::bpsk)));
    };
    EXPECT_LT(fd_error(s, build), 1e-4);
}

TEST(NlLoss, ThetaGradientConcentrates)
{
    Rng rng(13);
    const auto x = random_symbols(128, Modulation::bpsk, rng);
    ChannelSpec spec;
    spec.h = builtin_channel("ht1");
    spec.g = builtin_nonlinearity("g1");
    spec.padding = Padding::causal;
    Observation y = clean_output(x, spec, rng);
    add_noise(y, sigma_for_snr(y, 15.0), rng);
    NonlinearVaee model(3, Padding::causal, {10, 5}, MlpInit::identity, 0.3, rng);
    // two independent Monte Carlo estimates agree within their standard errors
    const int draws = 1000;
    auto estimate = [&](Vec& mean, Vec& se) {
        Vec sq(3, 0.0);
        mean.assign(3, 0.0);
        for (int d = 0; d < draws; ++d) {
            const auto g = model.evaluate(y, rng).second.at(decoder_names::h);
            for (std::size_t k = 0; k < 3; ++k) {
                mean[k] += g[k] / draws;
                sq[k] += g[k] * g[k] / draws;
            }
        }
        se.resize(3);
        for (std::size_t k = 0; k < 3; ++k) se[k] = std::sqrt((sq[k] - mean[k] * mean[k]) / draws);
    };
    Vec m1, s1, m2, s2;
    estimate(m1, s1);
    estimate(m2, s2);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_TRUE(std::isfinite(m1[k]));
        EXPECT_LT(std::abs(m1[k] - m2[k]), 4.0 * std::hypot(s1[k], s2[k])) << "tap " << k;
    }
}

TEST(TrainNl, IdentityChannelTracksLinearModel)
{
    // Same blocks, same encoder shape; the nonlinear model starts from a
    // short linear warm-up and must stay within 2x of the linear SER.
    double ser_nl = 0.0, ser_lin = 0.0;
    for (int t = 0; t < 4; ++t) {
        Rng data(100 + t);
        const auto x = random_symbols(576, Modulation::bpsk, data);
        ChannelSpec spec;
        spec.h = builtin_channel("ht1");
        spec.padding = Padding::random_prefix;
        Observation y = clean_output(x, spec, data);
        add_noise(y, sigma_for_snr(y, 10.0), data);

        NonlinearTrainConfig c;
        c.lead = 1;
        c.shape = EncoderShape{21, 11};
        c.linear_warmup = 2000;
        c.dropout = 0.0;
        c.tau_init = 0.1;
        c.train_tau = false;
        Rng rng(7 + t);
        const auto nl = train_vaee_nl(y, 5, c, rng);
        LinearTrainConfig lc;
        lc.padding = Padding::causal;
        lc.lead = 1;
        lc.shape = c.shape;
        Rng rng2(7 + t);
        const auto lin = train_vaee_linear(y, Modulation::bpsk, 5, lc, rng2);
        ser_nl += ser_resolved(hard_decision(nl.posterior), x, 5).ser / 4;
        ser_lin += ser_resolved(hard_decision(lin.posterior), x, 5).ser / 4;
    }
    EXPECT_LE(ser_nl, 2.0 * ser_lin) << "nonlinear " << ser_nl << " linear " << ser_lin;
}

TEST(TrainNl, TemperatureStaysPositive)
{
    Rng rng(14);
    const auto x = random_symbols(256, Modulation::bpsk, rng);
    ChannelSpec spec;
    spec.h = builtin_channel("ht1");
    spec.g = builtin_nonlinearity("g1");
    spec.padding = Padding::random_prefix;
    Observation y = clean_output(x, spec, rng);
    add_noise(y, sigma_for_snr(y, 20.0), rng);
    NonlinearTrainConfig c;
    c.iterations = 300;
    const auto r = train_vaee_nl(y, 3, c, rng);
    EXPECT_GT(r.theta.tau(), 0.0);
    EXPECT_TRUE(std::isfinite(r.theta.tau()));
    EXPECT_NE(r.theta.tau_raw, std::log(5.0));
    EXPECT_EQ(r.trace.size(), 300u);
    for (const auto& l : r.trace) EXPECT_TRUE(std::isfinite(l.total));
}

TEST(TrainNl, FixedTemperatureIsNotTrained)
{
    Rng rng(15);
    const Observation y{random_vec(64, rng), {}};
    NonlinearTrainConfig c;
    c.iterations = 20;
    c.train_tau = false;
    c.tau_init = 0.7;
    EXPECT_DOUBLE_EQ(train_vaee_nl(y, 2, c, rng).theta.tau(), 0.7);
}
