#pragma once

// Error rates with rotation/delay resolution, water-filling Shannon
// thresholds, and the Monte-Carlo trial harness.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <complex>
#include <charconv>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "errors.hpp"
#include "signal.hpp"

namespace blindeq {

// ---------------------------------------------------------------------------
// Error rates.

struct Resolution {
    double ser = 1.0;
    int rotation = 0;        // quarter turns applied to x_hat (BPSK: 0 or 2, i.e. sign)
    std::ptrdiff_t delay = 0;  // x_hat[n + delay] is compared with x_true[n]
};

namespace detail {

/// Symbol of x_hat at `n` after `quarter` counter-clockwise quarter turns.
inline std::pair<double, double> rotated(const SymbolSequence& s, std::size_t n, int quarter)
{
    double re = s.re[n], im = s.scheme == Modulation::qpsk ? s.im[n] : 0.0;
    for (int k = 0; k < quarter; ++k) {
        const double t = re;
        re = -im;
        im = t;
    }
    return {re, im};
}

inline std::size_t symbol_errors(const SymbolSequence& x_hat, const SymbolSequence& x_true, int quarter,
                                 std::ptrdiff_t delay, std::size_t& compared)
{
    const auto n = static_cast<std::ptrdiff_t>(x_true.size());
    const bool q = x_true.scheme == Modulation::qpsk;
    std::size_t errors = 0;
    compared = 0;
    for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(0, -delay); i < n && i + delay < n; ++i) {
        const auto [re, im] = rotated(x_hat, static_cast<std::size_t>(i + delay), quarter);
        const auto k = static_cast<std::size_t>(i);
        errors += (re >= 0.0) != (x_true.re[k] >= 0.0) || (q && (im >= 0.0) != (x_true.im[k] >= 0.0));
        ++compared;
    }
    return errors;
}

} // namespace detail

/// Minimum SER over rotations (QPSK: 4, BPSK: sign) and delays in
/// [-max_delay, max_delay]; ties go to the smallest |delay|, then the
/// smallest rotation.
inline Resolution ser_resolved(const SymbolSequence& x_hat, const SymbolSequence& x_true, std::size_t max_delay)
{
    require(x_hat.size() == x_true.size(), "ser_resolved: sequences differ in length");
    require(x_hat.scheme == x_true.scheme, "ser_resolved: modulations differ");
    require(max_delay < x_true.size(), "ser_resolved: max_delay leaves no overlapping window");
    if (x_true.scheme == Modulation::qpsk)
        require(x_hat.im.size() == x_hat.size() && x_true.im.size() == x_true.size(),
                "ser_resolved: QPSK sequences need both components");
    const std::vector<int> rotations =
        x_true.scheme == Modulation::qpsk ? std::vector<int>{0, 1, 2, 3} : std::vector<int>{0, 2};
    const auto md = static_cast<std::ptrdiff_t>(max_delay);
    Resolution best;
    bool have = false;
    // Visit 0, 1, -1, 2, -2, ... so that strict improvement implements the tie rule.
    for (std::ptrdiff_t step = 0; step <= 2 * md; ++step) {
        const std::ptrdiff_t d = step % 2 == 1 ? (step + 1) / 2 : -(step / 2);
        for (int r : rotations) {
            std::size_t compared = 0;
            const std::size_t e = detail::symbol_errors(x_hat, x_true, r, d, compared);
            const double ser = static_cast<double>(e) / static_cast<double>(compared);
            if (!have || ser < best.ser) {
                best = {ser, r, d};
                have = true;
            }
        }
    }
    return best;
}

/// Bit error rate at an already resolved rotation and delay (QPSK counts
/// both components).
inline double ber_resolved(const SymbolSequence& x_hat, const SymbolSequence& x_true, const Resolution& r)
{
    require(x_hat.size() == x_true.size(), "ber_resolved: sequences differ in length");
    const auto n = static_cast<std::ptrdiff_t>(x_true.size());
    const bool q = x_true.scheme == Modulation::qpsk;
    std::size_t errors = 0, bits = 0;
    for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(0, -r.delay); i < n && i + r.delay < n; ++i) {
        const auto [re, im] = detail::rotated(x_hat, static_cast<std::size_t>(i + r.delay), r.rotation);
        const auto k = static_cast<std::size_t>(i);
        errors += (re >= 0.0) != (x_true.re[k] >= 0.0);
        ++bits;
        if (q) {
            errors += (im >= 0.0) != (x_true.im[k] >= 0.0);
            ++bits;
        }
    }
    require(bits > 0, "ber_resolved: no overlapping window");
    return static_cast<double>(errors) / static_cast<double>(bits);
}

/// SER without any ambiguity resolution.
inline double ser_plain(const SymbolSequence& x_hat, const SymbolSequence& x_true)
{
    require(x_hat.size() == x_true.size() && !x_true.re.empty(), "ser_plain: bad lengths");
    std::size_t compared = 0;
    const std::size_t e = detail::symbol_errors(x_hat, x_true, 0, 0, compared);
    return static_cast<double>(e) / static_cast<double>(compared);
}

/// Hamming distance / N. No polarity or delay resolution.
inline double ber_coded(const Bits& decoded, const Bits& truth)
{
    require(decoded.size() == truth.size(), "ber_coded: length mismatch");
    require(!truth.empty(), "ber_coded: empty block");
    std::size_t e = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) e += decoded[i] != truth[i];
    return static_cast<double>(e) / static_cast<double>(truth.size());
}

// ---------------------------------------------------------------------------
// Capacity of the real Gaussian ISI channel.

constexpr std::size_t kCapacityGrid = 8192;

/// Water-filling capacity in bits per channel use with unit transmit power
/// and noise variance ||h||^2 / snr, so that a flat channel gives
/// 0.5 log2(1 + snr).
inline double capacity_waterfill(const Vec& h, double snr_db, std::size_t grid = kCapacityGrid)
{
    require(!h.empty(), "capacity_waterfill: empty impulse response");
    require(grid >= 16, "capacity_waterfill: grid too coarse");
    double energy = 0.0;
    for (double v : h) energy += v * v;
    require(energy > 0.0, "capacity_waterfill: impulse response is zero");
    const double sigma2 = energy / std::pow(10.0, snr_db / 10.0);

    // Noise-to-gain ratio per frequency bin.
    Vec inv(grid);
    for (std::size_t k = 0; k < grid; ++k) {
        const double w = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(grid);
        std::complex<double> H = 0.0;
        for (std::size_t t = 0; t < h.size(); ++t) H += h[t] * std::polar(1.0, -w * static_cast<double>(t));
        const double g = std::norm(H);
        inv[k] = g > 0.0 ? sigma2 / g : std::numeric_limits<double>::infinity();
    }
    // Water level: mean power over the grid equals 1.
    Vec sorted = inv;
    std::sort(sorted.begin(), sorted.end());
    double level = 0.0, prefix = 0.0;
    for (std::size_t k = 0; k < grid && std::isfinite(sorted[k]); ++k) {
        prefix += sorted[k];
        const double candidate = (static_cast<double>(grid) + prefix) / static_cast<double>(k + 1);
        if (k + 1 == grid || !(candidate > sorted[k + 1])) {
            level = candidate;
            break;
        }
        level = candidate;
    }
    double c = 0.0;
    for (double v : inv)
        if (v < level) c += 0.5 * std::log2(level / v);
    return c / static_cast<double>(grid);
}

/// SNR (dB) at which the water-filling capacity equals `rate`.
inline double shannon_threshold(const Vec& h, double rate, std::size_t grid = kCapacityGrid, double lo_db = -30.0,
                                double hi_db = 60.0)
{
    require(rate > 0.0, "shannon_threshold: rate must be positive");
    const double c_lo = capacity_waterfill(h, lo_db, grid), c_hi = capacity_waterfill(h, hi_db, grid);
    if (!(c_lo < rate && c_hi > rate))
        throw NumericError("shannon_threshold: rate " + std::to_string(rate) + " not bracketed by [" +
                           std::to_string(lo_db) + ", " + std::to_string(hi_db) + "] dB");
    for (int it = 0; it < 100 && hi_db - lo_db > 1e-9; ++it) {
        const double mid = 0.5 * (lo_db + hi_db);
        (capacity_waterfill(h, mid, grid) < rate ? lo_db : hi_db) = mid;
    }
    return 0.5 * (lo_db + hi_db);
}

// ---------------------------------------------------------------------------
// Trial harness.

struct TrialResult {
    std::string algorithm;
    std::string channel;
    std::string nonlinearity;
    double snr_db = 0.0;
    std::size_t trial = 0;
    std::uint64_t seed = 0;
    double ser = std::numeric_limits<double>::quiet_NaN();  // NaN when not measured
    double ber = std::numeric_limits<double>::quiet_NaN();
    std::ptrdiff_t delay = 0;
    int rotation = 0;
    bool genie = false;  // non-blind or genie-aided
    double wall_ms = 0.0;
    Vec h_est;
    std::optional<bool> zero_syndrome;  // coded trials
    std::string error;                  // non-empty: trial aborted

    bool aborted() const { return !error.empty(); }
};

/// One unit of work; `seed` already mixes master seed, SNR point and trial.
struct SweepJob {
    std::string algorithm;
    std::string channel;
    std::string nonlinearity;
    double snr_db = 0.0;
    std::size_t trial = 0;
    std::uint64_t seed = 0;
};

struct SweepOutcome {
    std::vector<TrialResult> results;  // completed jobs, in job order
    bool truncated = false;
};

using TrialFn = std::function<TrialResult(const SweepJob&)>;

/// Runs every job on `workers` threads. Jobs are claimed in order; once
/// `stop` is raised no new job starts and in-flight jobs finish. Exceptions
/// become aborted results. The output depends only on the jobs, never on
/// scheduling.
inline SweepOutcome run_jobs(const std::vector<SweepJob>& jobs, const TrialFn& fn, std::size_t workers,
                             const std::atomic<bool>* stop = nullptr)
{
    require(workers >= 1, "run_jobs: need at least one worker");
    std::vector<std::optional<TrialResult>> slots(jobs.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (;;) {
            if (stop && stop->load()) return;
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            const SweepJob& job = jobs[i];
            const auto t0 = std::chrono::steady_clock::now();
            TrialResult r;
            try {
                r = fn(job);
            } catch (const std::exception& e) {
                r = TrialResult{};
                r.error = e.what();
                if (r.error.empty()) r.error = "unknown error";
            }
            r.algorithm = job.algorithm;
            r.channel = job.channel;
            r.nonlinearity = job.nonlinearity;
            r.snr_db = job.snr_db;
            r.trial = job.trial;
            r.seed = job.seed;
            r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            slots[i] = std::move(r);
        }
    };
    const std::size_t n = std::min(workers, std::max<std::size_t>(jobs.size(), 1));
    if (n == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n);
        for (std::size_t k = 0; k < n; ++k) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    SweepOutcome out;
    for (auto& s : slots) {
        if (s) out.results.push_back(std::move(*s));
        else out.truncated = true;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation and export.

struct Aggregate {
    std::string algorithm;
    std::string channel;
    std::string nonlinearity;
    double snr_db = 0.0;
    std::size_t trials = 0;   // completed, not aborted
    std::size_t aborted = 0;
    double ser_mean = std::numeric_limits<double>::quiet_NaN();
    double ser_se = std::numeric_limits<double>::quiet_NaN();
    double ber_mean = std::numeric_limits<double>::quiet_NaN();
    double ber_se = std::numeric_limits<double>::quiet_NaN();
    std::size_t zero_syndrome = 0;
    double wall_ms = 0.0;
};

struct MeanSe {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double se = std::numeric_limits<double>::quiet_NaN();
};

/// Mean and standard error (sample standard deviation / sqrt(n)); NaNs skipped.
inline MeanSe mean_se(const Vec& v)
{
    Vec x;
    for (double e : v)
        if (!std::isnan(e)) x.push_back(e);
    MeanSe r;
    if (x.empty()) return r;
    double s = 0.0;
    for (double e : x) s += e;
    r.mean = s / static_cast<double>(x.size());
    if (x.size() < 2) {
        r.se = 0.0;
        return r;
    }
    double ss = 0.0;
    for (double e : x) ss += (e - r.mean) * (e - r.mean);
    r.se = std::sqrt(ss / static_cast<double>(x.size() - 1) / static_cast<double>(x.size()));
    return r;
}

/// Groups by (algorithm, channel, nonlinearity, snr) in first-seen order.
inline std::vector<Aggregate> aggregate(const std::vector<TrialResult>& results)
{
    using Key = std::tuple<std::string, std::string, std::string, double>;
    std::vector<Key> order;
    std::map<Key, std::vector<const TrialResult*>> groups;
    for (const auto& r : results) {
        Key k{r.algorithm, r.channel, r.nonlinearity, r.snr_db};
        if (!groups.count(k)) order.push_back(k);
        groups[k].push_back(&r);
    }
    std::vector<Aggregate> out;
    for (const auto& k : order) {
        Aggregate a;
        std::tie(a.algorithm, a.channel, a.nonlinearity, a.snr_db) = k;
        Vec ser, ber;
        for (const auto* r : groups[k]) {
            a.wall_ms += r->wall_ms;
            if (r->aborted()) {
                ++a.aborted;
                continue;
            }
            ++a.trials;
            ser.push_back(r->ser);
            ber.push_back(r->ber);
            a.zero_syndrome += r->zero_syndrome.value_or(false);
        }
        const auto s = mean_se(ser), b = mean_se(ber);
        a.ser_mean = s.mean;
        a.ser_se = s.se;
        a.ber_mean = b.mean;
        a.ber_se = b.se;
        out.push_back(a);
    }
    return out;
}

/// Shortest decimal that round-trips; "nan" for missing values.
inline std::string format_double(double v)
{
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline const char* kResultsHeader = "algorithm,channel,nonlinearity,snr_db,trial,seed,ser,ber,delay,rotation,genie,wall_ms";

/// Results CSV. With `timing` off the wall_ms column is written as 0 so that
/// equal seeds give byte-identical files.
inline void write_results_csv(std::ostream& out, const std::vector<TrialResult>& results, bool timing)
{
    out << kResultsHeader << "\n";
    for (const auto& r : results) {
        out << r.algorithm << ',' << r.channel << ',' << r.nonlinearity << ',' << format_double(r.snr_db) << ','
            << r.trial << ',' << r.seed << ',' << format_double(r.aborted() ? std::nan("") : r.ser) << ','
            << format_double(r.aborted() ? std::nan("") : r.ber) << ',' << r.delay << ',' << r.rotation << ','
            << (r.genie ? 1 : 0) << ',' << (timing ? format_double(std::round(r.wall_ms * 1000.0) / 1000.0) : "0")
            << "\n";
    }
}

} // namespace blindeq
