// Progressive edge-growth construction of a column-regular LDPC parity-check
// matrix, written in alist format.
//
//   make_ldpc <n_vars> <n_checks> <column_weight> <seed> [out.alist]

#include <algorithm>
#include <fstream>
#include <iostream>
#include <limits>
#include <queue>
#include <string>

#include "blindeq/ldpc.hpp"
#include "blindeq/rng.hpp"

namespace {

using blindeq::LdpcCode;

/// Checks within BFS depth of variable `v` in the current graph.
std::vector<int> check_depths(const LdpcCode& g, std::size_t v)
{
    std::vector<int> depth(g.n_checks, -1);
    std::vector<char> seen_var(g.n_vars, 0);
    std::queue<std::pair<std::size_t, int>> frontier;  // variable, depth of its checks
    seen_var[v] = 1;
    frontier.emplace(v, 0);
    while (!frontier.empty()) {
        auto [u, d] = frontier.front();
        frontier.pop();
        for (auto c : g.var_neighbors[u]) {
            if (depth[c] >= 0) continue;
            depth[c] = d;
            for (auto w : g.check_neighbors[c])
                if (!seen_var[w]) {
                    seen_var[w] = 1;
                    frontier.emplace(w, d + 1);
                }
        }
    }
    return depth;
}

LdpcCode peg(std::size_t n, std::size_t m, std::size_t dv, blindeq::Rng& rng)
{
    LdpcCode g;
    g.n_vars = n;
    g.n_checks = m;
    g.check_neighbors.resize(m);
    g.var_neighbors.resize(n);
    auto connect = [&](std::size_t v, std::size_t c) {
        g.var_neighbors[v].push_back(c);
        g.check_neighbors[c].push_back(v);
    };
    // Among candidate checks pick the lowest degree, ties at random.
    auto pick = [&](const std::vector<std::size_t>& cand) {
        std::size_t best = std::numeric_limits<std::size_t>::max();
        std::vector<std::size_t> ties;
        for (auto c : cand) {
            const auto d = g.check_neighbors[c].size();
            if (d < best) {
                best = d;
                ties.clear();
            }
            if (d == best) ties.push_back(c);
        }
        return ties[rng.below(ties.size())];
    };
    for (std::size_t v = 0; v < n; ++v) {
        for (std::size_t k = 0; k < dv; ++k) {
            std::vector<std::size_t> cand;
            if (k == 0) {
                for (std::size_t c = 0; c < m; ++c) cand.push_back(c);
            } else {
                const auto depth = check_depths(g, v);
                for (std::size_t c = 0; c < m; ++c)
                    if (depth[c] < 0) cand.push_back(c);
                if (cand.empty()) {  // all reachable: take the farthest ones
                    const int far = *std::max_element(depth.begin(), depth.end());
                    for (std::size_t c = 0; c < m; ++c)
                        if (depth[c] == far) cand.push_back(c);
                }
            }
            connect(v, pick(cand));
        }
    }
    for (auto& c : g.check_neighbors) std::sort(c.begin(), c.end());
    for (auto& v : g.var_neighbors) std::sort(v.begin(), v.end());
    g.validate();
    return g;
}

} // namespace

int main(int argc, char** argv)
{
    if (argc < 5) {
        std::cerr << "usage: make_ldpc <n_vars> <n_checks> <column_weight> <seed> [out.alist]\n";
        return 2;
    }
    try {
        const auto n = std::stoul(argv[1]);
        const auto m = std::stoul(argv[2]);
        const auto dv = std::stoul(argv[3]);
        blindeq::Rng rng(std::stoull(argv[4]));
        if (m == 0 || n <= m || dv == 0 || dv > m) {
            std::cerr << "make_ldpc: need 0 < n_checks < n_vars and 0 < column_weight <= n_checks\n";
            return 2;
        }
        const LdpcCode code = peg(n, m, dv, rng);
        const blindeq::CodewordSampler sampler(code);
        std::cerr << "n=" << n << " checks=" << m << " rank=" << sampler.rank() << " dimension=" << sampler.dimension()
                  << "\n";
        if (argc > 5) {
            std::ofstream out(argv[5]);
            if (!out) {
                std::cerr << "make_ldpc: cannot write " << argv[5] << "\n";
                return 4;
            }
            out << blindeq::to_alist(code);
        } else {
            std::cout << blindeq::to_alist(code);
        }
    } catch (const std::exception& e) {
        std::cerr << "make_ldpc: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
