#pragma once

// LDPC codes as Tanner graphs: alist I/O, syndromes, the Gallager parity
// loss, and flooding sum-product decoding in the LLR domain.
//
// LLR convention used throughout: LLR = log P(X=+1)/P(X=-1) = log P(c=0)/P(c=1).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "signal.hpp"

namespace blindeq {

inline constexpr double kLlrClip = 30.0;
inline constexpr double kTanhGuard = 1.0 - 1e-12;
inline constexpr double kParityFloor = 1e-7;

struct LdpcCode {
    std::size_t n_vars = 0;
    std::size_t n_checks = 0;
    std::vector<std::vector<std::size_t>> check_neighbors;  // N_j
    std::vector<std::vector<std::size_t>> var_neighbors;    // N_i

    std::size_t edges() const
    {
        std::size_t e = 0;
        for (const auto& c : check_neighbors) e += c.size();
        return e;
    }

    /// Checks symmetry of the adjacency and the absence of duplicate edges.
    void validate() const
    {
        require(check_neighbors.size() == n_checks && var_neighbors.size() == n_vars, "LdpcCode: adjacency size mismatch");
        std::set<std::pair<std::size_t, std::size_t>> from_checks, from_vars;
        for (std::size_t j = 0; j < n_checks; ++j)
            for (auto i : check_neighbors[j]) {
                require(i < n_vars, "LdpcCode: variable index out of range");
                require(from_checks.emplace(j, i).second, "LdpcCode: duplicate edge");
            }
        for (std::size_t i = 0; i < n_vars; ++i)
            for (auto j : var_neighbors[i]) {
                require(j < n_checks, "LdpcCode: check index out of range");
                require(from_vars.emplace(j, i).second, "LdpcCode: duplicate edge");
            }
        require(from_checks == from_vars, "LdpcCode: check and variable adjacency disagree");
    }

    static LdpcCode from_dense(const std::vector<std::vector<int>>& h)
    {
        LdpcCode c;
        c.n_checks = h.size();
        c.n_vars = h.empty() ? 0 : h[0].size();
        c.check_neighbors.resize(c.n_checks);
        c.var_neighbors.resize(c.n_vars);
        for (std::size_t j = 0; j < c.n_checks; ++j) {
            require(h[j].size() == c.n_vars, "from_dense: ragged matrix");
            for (std::size_t i = 0; i < c.n_vars; ++i)
                if (h[j][i]) {
                    c.check_neighbors[j].push_back(i);
                    c.var_neighbors[i].push_back(j);
                }
        }
        return c;
    }

    std::vector<std::vector<int>> dense() const
    {
        std::vector<std::vector<int>> h(n_checks, std::vector<int>(n_vars, 0));
        for (std::size_t j = 0; j < n_checks; ++j)
            for (auto i : check_neighbors[j]) h[j][i] = 1;
        return h;
    }
};

// ---------------------------------------------------------------------------
// alist format:
//   N J
//   max_var_degree max_check_degree
//   N variable degrees
//   J check degrees
//   N lines: 1-based check indices of each variable (zero padded)
//   J lines: 1-based variable indices of each check (zero padded)

struct AlistError : IoError {
    AlistError(std::size_t line, const std::string& what)
        : IoError("alist line " + std::to_string(line) + ": " + what), line(line) {}
    std::size_t line;
};

inline LdpcCode parse_alist(const std::string& text)
{
    struct Line {
        std::size_t number;
        std::vector<long> values;
    };
    std::vector<Line> lines;
    {
        std::istringstream in(text);
        std::string raw;
        std::size_t no = 0;
        while (std::getline(in, raw)) {
            ++no;
            std::istringstream ls(raw);
            Line l{no, {}};
            std::string tok;
            while (ls >> tok) {
                try {
                    std::size_t used = 0;
                    long v = std::stol(tok, &used);
                    if (used != tok.size()) throw std::invalid_argument(tok);
                    l.values.push_back(v);
                } catch (const std::exception&) {
                    throw AlistError(no, "not an integer: '" + tok + "'");
                }
            }
            if (!l.values.empty()) lines.push_back(std::move(l));
        }
    }
    std::size_t cursor = 0;
    auto next = [&](std::size_t expected_min, const char* what) -> const Line& {
        if (cursor >= lines.size())
            throw AlistError(lines.empty() ? 0 : lines.back().number, std::string("unexpected end of file, expected ") + what);
        const Line& l = lines[cursor++];
        if (l.values.size() < expected_min)
            throw AlistError(l.number, std::string("too few entries for ") + what);
        return l;
    };

    const Line& dims = next(2, "dimensions");
    if (dims.values[0] <= 0 || dims.values[1] <= 0) throw AlistError(dims.number, "dimensions must be positive");
    const auto n = static_cast<std::size_t>(dims.values[0]);
    const auto j = static_cast<std::size_t>(dims.values[1]);
    const Line& maxd = next(2, "maximum degrees");
    const auto max_vd = maxd.values[0], max_cd = maxd.values[1];
    const Line& vdeg = next(n, "variable degrees");
    const Line& cdeg = next(j, "check degrees");
    if (vdeg.values.size() != n) throw AlistError(vdeg.number, "expected " + std::to_string(n) + " variable degrees");
    if (cdeg.values.size() != j) throw AlistError(cdeg.number, "expected " + std::to_string(j) + " check degrees");

    LdpcCode code;
    code.n_vars = n;
    code.n_checks = j;
    code.var_neighbors.resize(n);
    code.check_neighbors.resize(j);

    auto read_lists = [&](std::size_t count, const Line& degs, long max_deg, std::size_t range,
                          std::vector<std::vector<std::size_t>>& dst, const char* what) {
        for (std::size_t k = 0; k < count; ++k) {
            const Line& l = next(1, what);
            const long deg = degs.values[k];
            if (deg < 0 || deg > max_deg) throw AlistError(degs.number, std::string("degree out of range in ") + what);
            std::set<std::size_t> seen;
            for (long v : l.values) {
                if (v == 0) continue;
                if (v < 0 || static_cast<std::size_t>(v) > range)
                    throw AlistError(l.number, "index " + std::to_string(v) + " out of range");
                if (!seen.insert(static_cast<std::size_t>(v - 1)).second)
                    throw AlistError(l.number, "duplicate index " + std::to_string(v));
                dst[k].push_back(static_cast<std::size_t>(v - 1));
            }
            if (static_cast<long>(dst[k].size()) != deg)
                throw AlistError(l.number, "expected " + std::to_string(deg) + " indices, found " + std::to_string(dst[k].size()));
        }
    };
    read_lists(n, vdeg, max_vd, j, code.var_neighbors, "variable adjacency");
    read_lists(j, cdeg, max_cd, n, code.check_neighbors, "check adjacency");

    try {
        code.validate();
    } catch (const ContractError& e) {
        throw AlistError(lines.back().number, e.what());
    }
    return code;
}

inline std::string to_alist(const LdpcCode& code)
{
    std::size_t max_vd = 0, max_cd = 0;
    for (const auto& v : code.var_neighbors) max_vd = std::max(max_vd, v.size());
    for (const auto& c : code.check_neighbors) max_cd = std::max(max_cd, c.size());
    std::ostringstream out;
    out << code.n_vars << ' ' << code.n_checks << '\n' << max_vd << ' ' << max_cd << '\n';
    for (std::size_t i = 0; i < code.n_vars; ++i) out << (i ? " " : "") << code.var_neighbors[i].size();
    out << '\n';
    for (std::size_t j = 0; j < code.n_checks; ++j) out << (j ? " " : "") << code.check_neighbors[j].size();
    out << '\n';
    auto emit = [&](const std::vector<std::size_t>& list, std::size_t width) {
        for (std::size_t k = 0; k < width; ++k) out << (k ? " " : "") << (k < list.size() ? list[k] + 1 : 0);
        out << '\n';
    };
    for (const auto& v : code.var_neighbors) emit(v, max_vd);
    for (const auto& c : code.check_neighbors) emit(c, max_cd);
    return out.str();
}

// ---------------------------------------------------------------------------

inline Bits syndrome(const LdpcCode& code, const Bits& word)
{
    require(word.size() == code.n_vars, "syndrome: word length does not match the code");
    Bits s(code.n_checks, 0);
    for (std::size_t j = 0; j < code.n_checks; ++j) {
        int acc = 0;
        for (auto i : code.check_neighbors[j]) acc ^= (word[i] & 1);
        s[j] = acc;
    }
    return s;
}

inline std::size_t syndrome_weight(const LdpcCode& code, const Bits& word)
{
    const Bits s = syndrome(code, word);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), 1));
}

/// Probability that a check is satisfied when bit i is 0 with probability
/// q_i independently: (1 + prod(2 q_i - 1)) / 2.
inline double gallager_parity_prob(const Vec& q)
{
    double prod = 1.0;
    for (double v : q) prod *= 2.0 * v - 1.0;
    return 0.5 * (1.0 + prod);
}

/// -sum_j log max((1 + prod_{i in N_j}(2 q_i - 1)) / 2, floor) on the tape.
inline ad::Var gallager_loss(const LdpcCode& code, ad::Var q)
{
    require(q.size() == code.n_vars, "gallager_loss: posterior length does not match the code");
    const Vec& qv = q.value();
    double loss = 0.0;
    for (const auto& nbrs : code.check_neighbors) {
        double prod = 1.0;
        for (auto i : nbrs) prod *= 2.0 * qv[i] - 1.0;
        loss -= std::log(std::max(0.5 * (1.0 + prod), kParityFloor));
    }
    const auto iq = q.id();
    const LdpcCode* cp = &code;
    return q.tape()->record(ad::Vec{loss}, {q}, [iq, cp](ad::Tape& t, const ad::Vec& g) {
        const Vec& qv = t.value(iq);
        Vec d(qv.size(), 0.0);
        Vec prefix, suffix;
        for (const auto& nbrs : cp->check_neighbors) {
            const std::size_t m = nbrs.size();
            prefix.assign(m + 1, 1.0);
            suffix.assign(m + 1, 1.0);
            for (std::size_t k = 0; k < m; ++k) prefix[k + 1] = prefix[k] * (2.0 * qv[nbrs[k]] - 1.0);
            for (std::size_t k = m; k-- > 0;) suffix[k] = suffix[k + 1] * (2.0 * qv[nbrs[k]] - 1.0);
            const double p = 0.5 * (1.0 + prefix[m]);
            if (p <= kParityFloor) continue;
            // d/dq_i [-log((1+P)/2)] = -(2 * prod_{others}) / (1 + P)
            for (std::size_t k = 0; k < m; ++k) d[nbrs[k]] -= g[0] * 2.0 * prefix[k] * suffix[k + 1] / (1.0 + prefix[m]);
        }
        t.accumulate(iq, d);
    });
}

inline double gallager_loss(const LdpcCode& code, const Vec& q)
{
    ad::Tape tape;
    return gallager_loss(code, tape.constant(q)).scalar();
}

// ---------------------------------------------------------------------------

struct BpOptions {
    std::size_t iterations = 15;
    bool early_exit = true;  // stop once the hard decision has zero syndrome
};

struct BpResult {
    Vec extrinsic_llr;  // sum of incoming check messages only
    Vec extrinsic_p;    // P(X=+1) from the extrinsic LLR
    Vec full_llr;       // channel + extrinsic
    Bits hard;          // bit decisions from full_llr
    std::size_t iterations_run = 0;
    bool zero_syndrome = false;
};

inline double clip_llr(double v) { return std::clamp(v, -kLlrClip, kLlrClip); }

inline double prob_from_llr(double llr) { return 1.0 / (1.0 + std::exp(-llr)); }

/// Flooding sum-product decoder (tanh rule at checks, sums at variables).
inline BpResult bp_decode(const LdpcCode& code, const Vec& channel_llr, BpOptions opt = {})
{
    require(channel_llr.size() == code.n_vars, "bp_decode: LLR length does not match the code");
    require(opt.iterations >= 1, "bp_decode: at least one iteration is required");

    // Edge-indexed message storage in check order.
    std::vector<std::size_t> edge_var;
    std::vector<std::size_t> check_start(code.n_checks + 1, 0);
    for (std::size_t j = 0; j < code.n_checks; ++j) {
        check_start[j + 1] = check_start[j] + code.check_neighbors[j].size();
        for (auto i : code.check_neighbors[j]) edge_var.push_back(i);
    }
    const std::size_t e_count = edge_var.size();
    std::vector<std::vector<std::size_t>> var_edges(code.n_vars);
    for (std::size_t e = 0; e < e_count; ++e) var_edges[edge_var[e]].push_back(e);

    Vec llr(channel_llr.size());
    for (std::size_t i = 0; i < llr.size(); ++i) llr[i] = clip_llr(channel_llr[i]);

    Vec v2c(e_count), c2v(e_count, 0.0);
    for (std::size_t e = 0; e < e_count; ++e) v2c[e] = llr[edge_var[e]];

    BpResult r;
    r.extrinsic_llr.assign(code.n_vars, 0.0);
    r.full_llr = llr;
    Vec tanhs, prefix, suffix;
    for (std::size_t it = 0; it < opt.iterations; ++it) {
        for (std::size_t j = 0; j < code.n_checks; ++j) {
            const std::size_t b = check_start[j], m = check_start[j + 1] - b;
            tanhs.resize(m);
            prefix.assign(m + 1, 1.0);
            suffix.assign(m + 1, 1.0);
            for (std::size_t k = 0; k < m; ++k) tanhs[k] = std::tanh(0.5 * v2c[b + k]);
            for (std::size_t k = 0; k < m; ++k) prefix[k + 1] = prefix[k] * tanhs[k];
            for (std::size_t k = m; k-- > 0;) suffix[k] = suffix[k + 1] * tanhs[k];
            for (std::size_t k = 0; k < m; ++k) {
                const double t = std::clamp(prefix[k] * suffix[k + 1], -kTanhGuard, kTanhGuard);
                c2v[b + k] = clip_llr(2.0 * std::atanh(t));
            }
        }
        for (std::size_t i = 0; i < code.n_vars; ++i) {
            double ext = 0.0;
            for (auto e : var_edges[i]) ext += c2v[e];
            r.extrinsic_llr[i] = ext;
            r.full_llr[i] = llr[i] + ext;
            for (auto e : var_edges[i]) v2c[e] = clip_llr(r.full_llr[i] - c2v[e]);
        }
        r.iterations_run = it + 1;
        r.hard = hard_bits(r.full_llr);
        r.zero_syndrome = syndrome_weight(code, r.hard) == 0;
        if (opt.early_exit && r.zero_syndrome) break;
    }
    r.extrinsic_p.resize(code.n_vars);
    for (std::size_t i = 0; i < code.n_vars; ++i) r.extrinsic_p[i] = prob_from_llr(r.extrinsic_llr[i]);
    return r;
}

// ---------------------------------------------------------------------------

/// Uniform sampling of codewords through a reduced row echelon form of H.
/// Works for any parity-check matrix, including externally supplied ones.
class CodewordSampler {
public:
    explicit CodewordSampler(const LdpcCode& code) : n_(code.n_vars)
    {
        words_ = (n_ + 63) / 64;
        std::vector<std::vector<std::uint64_t>> rows(code.n_checks, std::vector<std::uint64_t>(words_, 0));
        for (std::size_t j = 0; j < code.n_checks; ++j)
            for (auto i : code.check_neighbors[j]) rows[j][i / 64] ^= bit(i);

        std::size_t rank = 0;
        std::vector<bool> is_pivot(n_, false);
        for (std::size_t col = 0; col < n_ && rank < rows.size(); ++col) {
            std::size_t sel = rank;
            while (sel < rows.size() && !(rows[sel][col / 64] & bit(col))) ++sel;
            if (sel == rows.size()) continue;
            std::swap(rows[rank], rows[sel]);
            for (std::size_t r = 0; r < rows.size(); ++r)
                if (r != rank && (rows[r][col / 64] & bit(col)))
                    for (std::size_t w = 0; w < words_; ++w) rows[r][w] ^= rows[rank][w];
            pivots_.push_back(col);
            is_pivot[col] = true;
            ++rank;
        }
        rows.resize(rank);
        rref_ = std::move(rows);
        for (std::size_t c = 0; c < n_; ++c)
            if (!is_pivot[c]) free_.push_back(c);
    }

    std::size_t dimension() const { return free_.size(); }
    std::size_t rank() const { return pivots_.size(); }

    Bits sample(Rng& rng) const
    {
        std::vector<std::uint64_t> x(words_, 0);
        for (auto c : free_)
            if (rng.bit()) x[c / 64] |= bit(c);
        // Each reduced row reads pivot + sum(free entries) = 0.
        for (std::size_t r = 0; r < rref_.size(); ++r) {
            unsigned parity = 0;
            for (std::size_t w = 0; w < words_; ++w) parity ^= static_cast<unsigned>(std::popcount(rref_[r][w] & x[w]) & 1);
            if (parity) x[pivots_[r] / 64] |= bit(pivots_[r]);
        }
        Bits out(n_);
        for (std::size_t i = 0; i < n_; ++i) out[i] = (x[i / 64] >> (i % 64)) & 1u;
        return out;
    }

private:
    static std::uint64_t bit(std::size_t i) { return std::uint64_t{1} << (i % 64); }

    std::size_t n_;
    std::size_t words_;
    std::vector<std::vector<std::uint64_t>> rref_;
    std::vector<std::size_t> pivots_;
    std::vector<std::size_t> free_;
};

} // namespace blindeq
