#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "blindeq/ldpc.hpp"
#include "test_util.hpp"

using namespace blindeq;

namespace {

const std::vector<std::vector<int>> kChain{{1, 1, 0}, {0, 1, 1}};

std::string read(const std::string& path)
{
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool is_codeword(const LdpcCode& c, const Bits& w) { return syndrome_weight(c, w) == 0; }

// P(bit i = 0) by enumerating every codeword weighted by the channel likelihood.
Vec exact_marginals(const LdpcCode& c, const Vec& llr)
{
    const std::size_t n = c.n_vars;
    Vec p0(n, 0.0);
    double z = 0.0;
    for (unsigned m = 0; m < (1u << n); ++m) {
        Bits w(n);
        for (std::size_t i = 0; i < n; ++i) w[i] = (m >> i) & 1u;
        if (!is_codeword(c, w)) continue;
        double weight = 1.0;
        for (std::size_t i = 0; i < n; ++i) weight *= w[i] ? prob_from_llr(-llr[i]) : prob_from_llr(llr[i]);
        z += weight;
        for (std::size_t i = 0; i < n; ++i)
            if (!w[i]) p0[i] += weight;
    }
    for (auto& v : p0) v /= z;
    return p0;
}

// Tree-shaped code on 7 variables.
LdpcCode tree_code()
{
    return LdpcCode::from_dense({{1, 1, 1, 0, 0, 0, 0}, {0, 0, 1, 1, 1, 0, 0}, {0, 0, 0, 0, 1, 1, 1}});
}

} // namespace

TEST(Alist, RoundTrip)
{
    const auto c = LdpcCode::from_dense(kChain);
    const auto back = parse_alist(to_alist(c));
    EXPECT_EQ(back.dense(), kChain);
    EXPECT_EQ(back.var_neighbors, c.var_neighbors);
    EXPECT_NO_THROW(back.validate());
}

TEST(Alist, ZeroIndexRejectedWithLine)
{
    const std::string bad = "3 2\n2 2\n1 2 1\n2 2\n1 0\n0 2\n2 0\n1 2\n2 3\n";
    try {
        parse_alist(bad);
        FAIL() << "expected an error";
    } catch (const AlistError& e) {
        EXPECT_EQ(e.line, 6u);
    }
}

TEST(Alist, InconsistentAdjacencyRejected)
{
    EXPECT_THROW(parse_alist("3 2\n2 2\n1 2 1\n2 2\n1 0\n1 2\n2 0\n1 2\n1 3\n"), Error);
    EXPECT_THROW(parse_alist("3 2\n2 2\n"), AlistError);
}

TEST(Alist, BlockLength576Code)
{
    const auto c = parse_alist(read(std::string(BLINDEQ_TEST_DATA) + "/peg_576_r34.alist"));
    EXPECT_EQ(c.n_vars, 576u);
    EXPECT_EQ(c.n_checks, 144u);
    EXPECT_EQ(CodewordSampler(c).dimension(), 432u);
}

TEST(Syndrome, ZeroWordAndSingleFlip)
{
    const auto c = parse_alist(read(std::string(BLINDEQ_TEST_DATA) + "/peg_96_r12.alist"));
    EXPECT_EQ(syndrome_weight(c, Bits(96, 0)), 0u);
    Rng rng(1);
    const Bits w = CodewordSampler(c).sample(rng);
    ASSERT_TRUE(is_codeword(c, w));
    for (std::size_t i : {0u, 17u, 95u}) {
        Bits f = w;
        f[i] ^= 1;
        const Bits s = syndrome(c, f);
        for (std::size_t j = 0; j < c.n_checks; ++j) {
            const bool in = std::count(c.var_neighbors[i].begin(), c.var_neighbors[i].end(), j) > 0;
            EXPECT_EQ(s[j], in ? 1 : 0);
        }
    }
}

TEST(Syndrome, MatchesDenseProduct)
{
    const auto c = parse_alist(read(std::string(BLINDEQ_TEST_DATA) + "/peg_96_r12.alist"));
    const auto h = c.dense();
    Rng rng(2);
    for (int rep = 0; rep < 20; ++rep) {
        Bits w(96);
        for (auto& b : w) b = rng.bit();
        const Bits s = syndrome(c, w);
        for (std::size_t j = 0; j < h.size(); ++j) {
            int acc = 0;
            for (std::size_t i = 0; i < 96; ++i) acc += h[j][i] * w[i];
            EXPECT_EQ(s[j], acc % 2);
        }
    }
    EXPECT_THROW(syndrome(c, Bits(95, 0)), ContractError);
}

TEST(Gallager, ParityProbabilityExamples)
{
    EXPECT_DOUBLE_EQ(gallager_parity_prob({1.0, 1.0, 1.0}), 1.0);
    EXPECT_DOUBLE_EQ(gallager_parity_prob({0.9, 0.5, 0.2}), 0.5);
    EXPECT_NEAR(gallager_parity_prob({0.9, 0.8}), 0.74, 1e-15);
}

TEST(Gallager, ParityProbabilityMatchesEnumeration)
{
    Rng rng(3);
    for (std::size_t m = 1; m <= 10; ++m) {
        const Vec q = testutil::uniform_vec(m, rng, 0.0, 1.0);
        double even = 0.0;
        for (unsigned mask = 0; mask < (1u << m); ++mask) {
            double p = 1.0;
            for (std::size_t i = 0; i < m; ++i) p *= (mask >> i & 1u) ? 1 - q[i] : q[i];
            if (std::popcount(mask) % 2 == 0) even += p;
        }
        EXPECT_NEAR(gallager_parity_prob(q), even, 1e-12) << m;
    }
}

TEST(Gallager, LossExamples)
{
    const auto c = parse_alist(read(std::string(BLINDEQ_TEST_DATA) + "/peg_96_r12.alist"));
    EXPECT_NEAR(gallager_loss(c, Vec(96, 0.5)), 48 * std::log(2.0), 1e-12);
    Rng rng(4);
    const Bits w = CodewordSampler(c).sample(rng);
    Vec q(96);
    for (std::size_t i = 0; i < 96; ++i) q[i] = w[i] ? 1e-7 : 1 - 1e-7;
    EXPECT_LT(gallager_loss(c, q), 48 * 10 * 1e-7);
}

TEST(Gallager, GradientMatchesFiniteDifferences)
{
    const auto c = LdpcCode::from_dense({{1, 1, 0, 1, 0, 0}, {0, 1, 1, 0, 1, 0}, {1, 0, 0, 0, 1, 1}});
    Rng rng(5);
    ad::ParamStore s;
    s.add("q", testutil::uniform_vec(6, rng, 0.05, 0.95));
    auto build = [&](const ad::ParamStore& st, ad::Tape& t) { return gallager_loss(c, t.param(st, "q")); };
    EXPECT_LT(testutil::fd_error(s, build), 1e-6);
}

TEST(Bp, CycleFreeMatchesEnumeration)
{
    Rng rng(6);
    for (const auto& c : {LdpcCode::from_dense(kChain), tree_code()}) {
        for (int rep = 0; rep < 10; ++rep) {
            const Vec llr = testutil::random_vec(c.n_vars, rng, 2.0);
            const auto r = bp_decode(c, llr, {10, false});
            const Vec p = exact_marginals(c, llr);
            for (std::size_t i = 0; i < c.n_vars; ++i) EXPECT_NEAR(prob_from_llr(r.full_llr[i]), p[i], 1e-9);
        }
    }
}

TEST(Bp, StrongEvidenceGivesCodewordInOneIteration)
{
    const auto c = parse_alist(read(std::string(BLINDEQ_TEST_DATA) + "/peg_96_r12.alist"));
    Rng rng(7);
    const Bits w = CodewordSampler(c).sample(rng);
    Vec llr(96);
    for (std::size_t i = 0; i < 96; ++i) llr[i] = w[i] ? -20.0 : 20.0;
    const auto r = bp_decode(c, llr, {15, true});
    EXPECT_EQ(r.hard, w);
    EXPECT_TRUE(r.zero_syndrome);
    EXPECT_EQ(r.iterations_run, 1u);
}

TEST(Bp, ZeroEvidenceIsUninformative)
{
    const auto c = parse_alist(read(std::string(BLINDEQ_TEST_DATA) + "/peg_96_r12.alist"));
    const auto r = bp_decode(c, Vec(96, 0.0), {5, false});
    for (std::size_t i = 0; i < 96; ++i) {
        EXPECT_EQ(r.extrinsic_llr[i], 0.0);
        EXPECT_EQ(r.extrinsic_p[i], 0.5);
    }
}

TEST(Bp, FullMinusChannelIsExtrinsic)
{
    const auto c = parse_alist(read(std::string(BLINDEQ_TEST_DATA) + "/peg_96_r12.alist"));
    Rng rng(8);
    const Vec llr = testutil::random_vec(96, rng, 1.5);
    const auto r = bp_decode(c, llr, {8, false});
    for (std::size_t i = 0; i < 96; ++i) {
        EXPECT_NEAR(r.full_llr[i] - llr[i], r.extrinsic_llr[i], 1e-12);
        EXPECT_NEAR(r.extrinsic_p[i], 1.0 / (1.0 + std::exp(-r.extrinsic_llr[i])), 1e-15);
    }
}

TEST(Bp, InvariantUnderVariableReindexing)
{
    const auto c = parse_alist(read(std::string(BLINDEQ_TEST_DATA) + "/peg_96_r12.alist"));
    Rng rng(9);
    std::vector<std::size_t> perm(96);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 95; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    auto h = c.dense(), hp = h;
    for (std::size_t j = 0; j < h.size(); ++j)
        for (std::size_t i = 0; i < 96; ++i) hp[j][perm[i]] = h[j][i];
    const auto cp = LdpcCode::from_dense(hp);
    const Vec llr = testutil::random_vec(96, rng, 1.5);
    Vec llrp(96);
    for (std::size_t i = 0; i < 96; ++i) llrp[perm[i]] = llr[i];
    const auto a = bp_decode(c, llr, {6, false}), b = bp_decode(cp, llrp, {6, false});
    for (std::size_t i = 0; i < 96; ++i) EXPECT_NEAR(a.full_llr[i], b.full_llr[perm[i]], 1e-12);
}

TEST(Bp, ClipsChannelInput)
{
    const auto c = LdpcCode::from_dense(kChain);
    const auto r = bp_decode(c, {1e6, 1e6, -1e6}, {1, false});
    for (double v : r.full_llr) EXPECT_TRUE(std::isfinite(v));
    EXPECT_THROW(bp_decode(c, {0, 0, 0}, {0, false}), ContractError);
}

TEST(Sampler, ProducesCodewords)
{
    const auto c = parse_alist(read(std::string(BLINDEQ_TEST_DATA) + "/peg_576_r34.alist"));
    const CodewordSampler s(c);
    Rng rng(10);
    for (int rep = 0; rep < 10; ++rep) EXPECT_TRUE(is_codeword(c, s.sample(rng)));
}
