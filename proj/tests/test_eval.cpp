#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <sstream>

#include "blindeq/config.hpp"
#include "blindeq/eval.hpp"
#include "blindeq/experiment.hpp"
#include "test_util.hpp"

using namespace blindeq;

namespace {

using C = std::complex<double>;

SymbolSequence rotate(const SymbolSequence& s, int quarter)
{
    SymbolSequence r = s;
    for (std::size_t i = 0; i < s.size(); ++i) {
        C v(s.re[i], s.im[i]);
        for (int k = 0; k < quarter; ++k) v *= C(0, 1);
        r.re[i] = v.real();
        r.im[i] = v.imag();
    }
    return r;
}

SymbolSequence delayed(const SymbolSequence& s, std::size_t d, Rng& rng)
{
    SymbolSequence r = random_symbols(s.size(), s.scheme, rng);
    for (std::size_t i = 0; i + d < s.size(); ++i) {
        r.re[i + d] = s.re[i];
        if (!s.im.empty()) r.im[i + d] = s.im[i];
    }
    return r;
}

// Direct enumeration with the documented tie rule.
double enumerate_min_ser(const SymbolSequence& a, const SymbolSequence& b, int md)
{
    const int n = static_cast<int>(b.size());
    const bool q = b.scheme == Modulation::qpsk;
    double best = 2.0;
    int best_abs = 0;
    for (int d = -md; d <= md; ++d)
        for (int r = 0; r < 4; r += q ? 1 : 2) {
            int err = 0, cnt = 0;
            for (int i = 0; i < n; ++i) {
                if (i + d < 0 || i + d >= n) continue;
                C v(a.re[i + d], q ? a.im[i + d] : 0.0);
                for (int k = 0; k < r; ++k) v *= C(0, 1);
                err += (v.real() >= 0) != (b.re[i] >= 0) || (q && (v.imag() >= 0) != (b.im[i] >= 0));
                ++cnt;
            }
            const double ser = static_cast<double>(err) / cnt;
            if (ser < best || (ser == best && std::abs(d) < best_abs)) {
                best = ser;
                best_abs = std::abs(d);
            }
        }
    return best;
}

ExperimentConfig small_config(const std::string& extra = "")
{
    return parse_config("mode = uncoded-linear\nalgo = cma,lms\nsnr = 6,8,10\ntrials = 5\nL = 200\nK = 400\n"
                        "cma.epochs = 2\nlms.epochs = 2\n" +
                        extra);
}

std::string sweep_csv(const ExperimentConfig& c, std::size_t workers)
{
    const Experiment exp(c);
    std::ostringstream out;
    write_results_csv(out, run_sweep(exp, workers).results, false);
    return out.str();
}

} // namespace

TEST(SerResolved, RotationAndDelay)
{
    Rng rng(1);
    const auto x = random_symbols(500, Modulation::qpsk, rng);
    for (int q = 1; q < 4; ++q) {
        const auto r = ser_resolved(rotate(x, q), x, 3);
        EXPECT_EQ(r.ser, 0.0);
        EXPECT_EQ((r.rotation + q) % 4, 0);
    }
    const auto d = ser_resolved(delayed(x, 2, rng), x, 3);
    EXPECT_EQ(d.ser, 0.0);
    EXPECT_EQ(d.delay, 2);
    SymbolSequence neg = x;
    for (auto& v : neg.re) v = -v;
    for (auto& v : neg.im) v = -v;
    EXPECT_EQ(ser_resolved(neg, x, 0).rotation, 2);
}

TEST(SerResolved, BpskSignResolution)
{
    Rng rng(2);
    const auto x = random_symbols(300, Modulation::bpsk, rng);
    SymbolSequence neg = x;
    for (auto& v : neg.re) v = -v;
    const auto r = ser_resolved(neg, x, 2);
    EXPECT_EQ(r.ser, 0.0);
    EXPECT_EQ(r.rotation, 2);
    EXPECT_EQ(r.delay, 0);
}

TEST(SerResolved, MatchesEnumerationOnRandomSequences)
{
    Rng rng(3);
    for (auto m : {Modulation::bpsk, Modulation::qpsk}) {
        const auto a = random_symbols(10000, m, rng), b = random_symbols(10000, m, rng);
        const auto r = ser_resolved(a, b, 3);
        EXPECT_EQ(r.ser, enumerate_min_ser(a, b, 3));
        EXPECT_LT(r.ser, m == Modulation::bpsk ? 0.5 : 0.75);
        EXPECT_GT(r.ser, m == Modulation::bpsk ? 0.48 : 0.73);
    }
}

TEST(SerResolved, NeverWorseThanPlain)
{
    Rng rng(4);
    for (int rep = 0; rep < 30; ++rep) {
        const auto a = random_symbols(64, Modulation::qpsk, rng), b = random_symbols(64, Modulation::qpsk, rng);
        EXPECT_LE(ser_resolved(a, b, 4).ser, ser_plain(a, b));
    }
}

TEST(SerResolved, EmptyWindowRejected)
{
    Rng rng(5);
    const auto x = random_symbols(4, Modulation::bpsk, rng);
    EXPECT_THROW(ser_resolved(x, x, 4), ContractError);
}

TEST(BerCoded, Examples)
{
    Bits a(576, 0), b(576, 1);
    EXPECT_EQ(ber_coded(a, a), 0.0);
    EXPECT_EQ(ber_coded(a, b), 1.0);
    b = a;
    b[100] = 1;
    EXPECT_DOUBLE_EQ(ber_coded(a, b), 1.0 / 576.0);
    EXPECT_THROW(ber_coded(a, Bits(575, 0)), ContractError);
}

TEST(Threshold, PublishedChannels)
{
    EXPECT_NEAR(shannon_threshold(builtin_channel("ht1").re, 0.75), 2.84, 0.05);
    EXPECT_NEAR(shannon_threshold(builtin_channel("ht2").re, 0.75), 2.95, 0.05);
    EXPECT_NEAR(shannon_threshold(builtin_channel("ht3").re, 0.75), 3.0, 0.05);
}

TEST(Threshold, FlatChannelClosedForm)
{
    EXPECT_NEAR(shannon_threshold({1.0}, 0.75), 10.0 * std::log10(std::pow(2.0, 1.5) - 1.0), 1e-6);
    EXPECT_NEAR(capacity_waterfill({1.0}, 10.0), 0.5 * std::log2(11.0), 1e-9);
}

TEST(Threshold, GridConvergence)
{
    for (const char* ch : {"ht1", "ht2", "ht3"}) {
        const Vec h = builtin_channel(ch).re;
        EXPECT_LT(std::abs(shannon_threshold(h, 0.75, kCapacityGrid) - shannon_threshold(h, 0.75, 2 * kCapacityGrid)),
                  0.01)
            << ch;
    }
}

TEST(Threshold, CapacityScaleInvariant)
{
    const Vec h = builtin_channel("ht3").re;
    Vec h3 = h;
    for (auto& v : h3) v *= 3.7;
    for (double snr : {0.0, 3.0, 10.0}) EXPECT_NEAR(capacity_waterfill(h3, snr), capacity_waterfill(h, snr), 1e-9);
}

TEST(Threshold, UnbracketedRateIsNumericError)
{
    EXPECT_THROW(shannon_threshold({1.0}, 20.0), NumericError);
}

TEST(Harness, Cardinality)
{
    const auto c = small_config();
    const auto jobs = Experiment(c).jobs();
    EXPECT_EQ(jobs.size(), 30u);
    const auto out = run_jobs(jobs, [](const SweepJob&) { return TrialResult{}; }, 3);
    EXPECT_EQ(out.results.size(), 30u);
    EXPECT_FALSE(out.truncated);
    for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(out.results[i].seed, jobs[i].seed);
}

TEST(Harness, SeedsFollowDerivation)
{
    const auto jobs = Experiment(small_config("seed = 42\n")).jobs();
    EXPECT_EQ(jobs[0].seed, trial_seed(42, 0, 0));
    EXPECT_EQ(jobs[29].seed, trial_seed(42, 2, 4));
    EXPECT_EQ(jobs[4].seed, jobs[9].seed);  // same data for every algorithm
    EXPECT_NE(jobs[0].seed, jobs[1].seed);
}

TEST(Harness, DeterministicAcrossRunsAndWorkers)
{
    const auto c = small_config();
    const std::string a = sweep_csv(c, 1);
    EXPECT_EQ(a, sweep_csv(c, 1));
    EXPECT_EQ(a, sweep_csv(c, 3));
    EXPECT_EQ(a.substr(0, a.find('\n')), kResultsHeader);
}

TEST(Harness, EmbeddedConfigReproducesCsv)
{
    const auto c = small_config();
    EXPECT_EQ(sweep_csv(parse_config(to_config_text(c)), 2), sweep_csv(c, 1));
}

TEST(Harness, ExceptionsBecomeAbortedTrials)
{
    std::vector<SweepJob> jobs(4);
    const auto out = run_jobs(jobs, [](const SweepJob&) -> TrialResult { throw NumericError("boom"); }, 2);
    ASSERT_EQ(out.results.size(), 4u);
    for (const auto& r : out.results) EXPECT_EQ(r.error, "boom");
    EXPECT_EQ(aggregate(out.results)[0].aborted, 4u);
}

TEST(Harness, StopFlagTruncates)
{
    std::vector<SweepJob> jobs(10);
    std::atomic<bool> stop{false};
    const auto out = run_jobs(
        jobs,
        [&](const SweepJob&) {
            stop = true;
            return TrialResult{};
        },
        1, &stop);
    EXPECT_EQ(out.results.size(), 1u);
    EXPECT_TRUE(out.truncated);
}

TEST(Aggregate, MeanAndStandardError)
{
    std::vector<TrialResult> rs(4);
    const Vec ser{0.1, 0.2, 0.3, 0.6};
    for (std::size_t i = 0; i < 4; ++i) {
        rs[i].algorithm = "vaee";
        rs[i].ser = ser[i];
        rs[i].ber = ser[i] / 2;
    }
    rs.push_back(rs[0]);
    rs.back().algorithm = "cma";
    const auto a = aggregate(rs);
    ASSERT_EQ(a.size(), 2u);
    EXPECT_EQ(a[0].algorithm, "vaee");
    EXPECT_EQ(a[0].trials, 4u);
    EXPECT_DOUBLE_EQ(a[0].ser_mean, 0.3);
    EXPECT_DOUBLE_EQ(a[0].ber_mean, 0.15);
    EXPECT_NEAR(a[0].ser_se, std::sqrt((0.04 + 0.01 + 0.0 + 0.09) / 3.0 / 4.0), 1e-15);
    EXPECT_EQ(a[1].trials, 1u);
    EXPECT_EQ(a[1].ser_se, 0.0);
}

TEST(Csv, FormattingAndNan)
{
    EXPECT_EQ(format_double(0.1), "0.1");
    EXPECT_EQ(format_double(std::nan("")), "nan");
    TrialResult r;
    r.algorithm = "lms";
    r.channel = "h1";
    r.nonlinearity = "identity";
    r.snr_db = 8;
    r.seed = 7;
    r.ser = 0.25;
    r.ber = 0.125;
    r.genie = true;
    r.wall_ms = 12.5;
    std::ostringstream a, b;
    write_results_csv(a, {r}, false);
    write_results_csv(b, {r}, true);
    EXPECT_EQ(a.str(), std::string(kResultsHeader) + "\nlms,h1,identity,8,0,7,0.25,0.125,0,0,1,0\n");
    EXPECT_EQ(b.str(), std::string(kResultsHeader) + "\nlms,h1,identity,8,0,7,0.25,0.125,0,0,1,12.5\n");
}

TEST(Config, ModeDefaults)
{
    const auto c = parse_config("", {{"mode", "uncoded-linear"}});
    EXPECT_EQ(c.modulation, Modulation::qpsk);
    EXPECT_EQ(c.L, 2000u);
    EXPECT_EQ(c.N, 128u);
    EXPECT_EQ(c.K, 10000u);
    EXPECT_EQ(c.turbo.T, 80u);
    EXPECT_EQ(c.turbo.I, 50u);
    EXPECT_EQ(c.turbo.B, 15u);
    EXPECT_DOUBLE_EQ(c.turbo.lr, 0.1);
    EXPECT_DOUBLE_EQ(c.turbo.lambda, 0.7);
    EXPECT_DOUBLE_EQ(c.turbo.eta, 0.1);
    EXPECT_DOUBLE_EQ(c.turbo.alpha, 0.2);
}

TEST(Config, UnknownKeyNamed)
{
    try {
        parse_config("foo = 1\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("foo"), std::string::npos);
        EXPECT_EQ(e.exit_code(), 2);
    }
    EXPECT_THROW(parse_config("", {{"bar", "1"}}), ConfigError);
}

TEST(Config, OverridesWin)
{
    const auto c = parse_config("snr = 0:1:10\n", {{"snr", "4,6"}});
    EXPECT_EQ(c.snr_db, (std::vector<double>{4.0, 6.0}));
    EXPECT_EQ(parse_config("snr = 0:1:10\n").snr_db.size(), 11u);
}

TEST(Config, InvalidCombinationsRejected)
{
    EXPECT_THROW(parse_config("modulation = qpsk\nnonlinearity = g1\n"), ConfigError);
    EXPECT_THROW(parse_config("mode = coded-linear\n"), ConfigError);  // no code file
    EXPECT_THROW(parse_config("mode = uncoded-linear\nalgo = turbo-em\n"), ConfigError);
    EXPECT_THROW(parse_config("mode = coded-linear\ncode = x\nturbo.lambda = 0\n"), ConfigError);
    EXPECT_THROW(parse_config("trials = many\n"), ConfigError);
    EXPECT_THROW(parse_config("just words\n"), ConfigError);
}

TEST(Config, RoundTrip)
{
    const auto c = parse_config("mode = coded-linear\ncode = tests/x.alist\nsnr = 5.5,6\nturbo.eta = 0.25\n"
                                "algo = turbo-eq,turbo-em\nseed = 99\n");
    const std::string text = to_config_text(c);
    EXPECT_EQ(to_config_text(parse_config(text)), text);
    EXPECT_NE(text.find("turbo.eta = 0.25"), std::string::npos);
}
