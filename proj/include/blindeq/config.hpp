#pragma once

// Experiment configuration: a flat `key = value` text format, one key per
// line, `#` starts a comment. Flags and `--set` overrides are applied on top
// of the file through the same key table, so unknown keys are rejected in
// both places.
//
//   mode          uncoded-linear | uncoded-nonlinear-smoke | coded-linear | coded-nonlinear
//   modulation    bpsk | qpsk               (default: qpsk uncoded-linear, else bpsk)
//   channel       h1 h2 ht1 ht2 ht3 | custom
//   taps          comma list, real taps of a custom channel
//   taps_im       comma list, imaginary taps of a custom channel (optional)
//   nonlinearity  identity | g1 | g2 | g3
//   snr           comma list of dB values, or lo:step:hi
//   L K           training / test symbols (uncoded)
//   N             training sub-sequence length
//   iterations lr VAEE training
//   model_taps    estimated response length, 0 means the true length M
//   lead          position of the initial impulse (causal models)
//   max_delay     delay search range for SER, 0 means M
//   code          alist file (coded modes)
//   algo          comma list of algorithm ids
//   trials seed out workers timing
//   turbo.T turbo.I turbo.B turbo.lr turbo.lambda turbo.eta turbo.alpha
//   nl.iterations nl.lr nl.dropout nl.tau nl.train_tau nl.warmup nl.layer1 nl.layer2
//   cma.mu cma.epochs cma.taps lms.mu lms.epochs lms.taps
//   em.stage1 em.outer em.bp te.outer te.bp

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "eval.hpp"
#include "signal.hpp"
#include "turbo.hpp"

namespace blindeq {

enum class Mode { uncoded_linear, uncoded_nonlinear_smoke, coded_linear, coded_nonlinear };

inline std::string to_string(Mode m)
{
    switch (m) {
    case Mode::uncoded_linear: return "uncoded-linear";
    case Mode::uncoded_nonlinear_smoke: return "uncoded-nonlinear-smoke";
    case Mode::coded_linear: return "coded-linear";
    case Mode::coded_nonlinear: return "coded-nonlinear";
    }
    return "?";
}

inline bool is_coded(Mode m) { return m == Mode::coded_linear || m == Mode::coded_nonlinear; }

/// Algorithm ids accepted per mode.
inline std::vector<std::string> algorithms_for(Mode m)
{
    switch (m) {
    case Mode::uncoded_linear: return {"vaee", "cma", "lms"};
    case Mode::uncoded_nonlinear_smoke: return {"vaee-nl", "vaee"};
    case Mode::coded_linear: return {"turbo-vaee", "vaee-gallager", "turbo-eq", "turbo-em", "turbo-em-syndrome"};
    case Mode::coded_nonlinear:
        return {"turbo-vaee-nl", "turbo-vaee", "turbo-eq", "turbo-em", "turbo-em-syndrome"};
    }
    return {};
}

struct ExperimentConfig {
    Mode mode = Mode::uncoded_linear;
    Modulation modulation = Modulation::qpsk;
    std::string channel = "h1";
    Taps custom_taps;  // channel == "custom"
    std::string nonlinearity = "identity";
    std::vector<double> snr_db{10.0};
    std::size_t L = 2000;
    std::size_t K = 10000;
    std::size_t N = 128;
    std::size_t iterations = 2000;
    double lr = 0.01;
    std::size_t model_taps = 0;
    std::size_t lead = 0;
    std::size_t max_delay = 0;
    std::string code;
    std::vector<std::string> algorithms;
    std::size_t trials = 20;
    std::uint64_t seed = 1;
    std::string out;
    std::size_t workers = 1;
    bool timing = false;

    TurboConfig turbo;

    std::size_t nl_iterations = 3000;
    double nl_lr = 0.01;
    double nl_dropout = 0.3;
    double nl_tau = 5.0;
    bool nl_train_tau = true;
    std::size_t nl_warmup = 0;
    std::size_t nl_layer1 = 10;
    std::size_t nl_layer2 = 5;

    double cma_mu = 1e-3;
    std::size_t cma_epochs = 10;
    std::size_t cma_taps = 11;
    double lms_mu = 1e-3;
    std::size_t lms_epochs = 10;
    std::size_t lms_taps = 11;

    std::size_t em_stage1 = 30;
    std::size_t em_outer = 30;
    std::size_t em_bp = 15;
    std::size_t te_outer = 30;
    std::size_t te_bp = 15;

    Taps channel_taps() const { return channel == "custom" ? custom_taps : builtin_channel(channel); }
    std::size_t span() const { return channel_taps().size(); }
    std::size_t estimated_taps() const { return model_taps == 0 ? span() : model_taps; }
    std::size_t delay_range() const { return max_delay == 0 ? span() : max_delay; }
};

// ---------------------------------------------------------------------------
// Value parsing.

namespace detail {

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(s);
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline double parse_real(const std::string& key, const std::string& v)
{
    double out = 0.0;
    const auto t = trim(v);
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    if (ec != std::errc() || p != t.data() + t.size() || !std::isfinite(out))
        throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v)
{
    std::uint64_t out = 0;
    const auto t = trim(v);
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty())
        throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v)
{
    const auto t = trim(v);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
}

inline Vec parse_reals(const std::string& key, const std::string& v)
{
    Vec out;
    for (const auto& s : split_list(v)) out.push_back(parse_real(key, s));
    return out;
}

/// "a,b,c" or "lo:step:hi" (inclusive, tolerant to rounding).
inline Vec parse_snr_list(const std::string& v)
{
    const auto t = trim(v);
    if (t.find(':') != std::string::npos) {
        std::vector<std::string> parts;
        std::string item;
        std::stringstream ss(t);
        while (std::getline(ss, item, ':')) parts.push_back(item);
        if (parts.size() != 3) throw ConfigError("config: 'snr' range must be lo:step:hi, got '" + v + "'");
        const double lo = parse_real("snr", parts[0]), step = parse_real("snr", parts[1]),
                     hi = parse_real("snr", parts[2]);
        if (!(step > 0.0) || hi < lo) throw ConfigError("config: 'snr' range needs step > 0 and lo <= hi");
        Vec out;
        const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
        if (n > 10000) throw ConfigError("config: 'snr' range has too many points");
        for (std::size_t k = 0; k <= n; ++k) out.push_back(lo + step * static_cast<double>(k));
        return out;
    }
    Vec out = parse_reals("snr", t);
    if (out.empty()) throw ConfigError("config: 'snr' is empty");
    return out;
}

inline std::string join_reals(const Vec& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
    return s;
}

inline std::string join(const std::vector<std::string>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
}

struct KeyHandler {
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

template <class T>
KeyHandler uint_key(T ExperimentConfig::*field, const char* name)
{
    return {[field, name](ExperimentConfig& c, const std::string& v) { c.*field = static_cast<T>(parse_uint(name, v)); },
            [field](const ExperimentConfig& c) { return std::to_string(c.*field); }};
}

inline KeyHandler real_key(double ExperimentConfig::*field, const char* name)
{
    return {[field, name](ExperimentConfig& c, const std::string& v) { c.*field = parse_real(name, v); },
            [field](const ExperimentConfig& c) { return format_double(c.*field); }};
}

inline KeyHandler bool_key(bool ExperimentConfig::*field, const char* name)
{
    return {[field, name](ExperimentConfig& c, const std::string& v) { c.*field = parse_bool(name, v); },
            [field](const ExperimentConfig& c) { return std::string(c.*field ? "true" : "false"); }};
}

inline KeyHandler string_key(std::string ExperimentConfig::*field)
{
    return {[field](ExperimentConfig& c, const std::string& v) { c.*field = trim(v); },
            [field](const ExperimentConfig& c) { return c.*field; }};
}

template <class T>
KeyHandler turbo_uint(T TurboConfig::*field, const char* name)
{
    return {[field, name](ExperimentConfig& c, const std::string& v) {
                c.turbo.*field = static_cast<T>(parse_uint(name, v));
            },
            [field](const ExperimentConfig& c) { return std::to_string(c.turbo.*field); }};
}

inline KeyHandler turbo_real(double TurboConfig::*field, const char* name)
{
    return {[field, name](ExperimentConfig& c, const std::string& v) { c.turbo.*field = parse_real(name, v); },
            [field](const ExperimentConfig& c) { return format_double(c.turbo.*field); }};
}

inline Mode parse_mode(const std::string& v)
{
    for (Mode m : {Mode::uncoded_linear, Mode::uncoded_nonlinear_smoke, Mode::coded_linear, Mode::coded_nonlinear})
        if (to_string(m) == v) return m;
    throw ConfigError("config: unknown mode '" + v + "'");
}

/// Ordered key table; the order is the serialization order.
inline const std::vector<std::pair<std::string, KeyHandler>>& key_table()
{
    using C = ExperimentConfig;
    static const std::vector<std::pair<std::string, KeyHandler>> table = {
        {"mode", {[](C& c, const std::string& v) { c.mode = parse_mode(trim(v)); },
                  [](const C& c) { return to_string(c.mode); }}},
        {"modulation", {[](C& c, const std::string& v) {
                            const auto t = trim(v);
                            if (t == "bpsk") c.modulation = Modulation::bpsk;
                            else if (t == "qpsk") c.modulation = Modulation::qpsk;
                            else throw ConfigError("config: unknown modulation '" + t + "'");
                        },
                        [](const C& c) { return to_string(c.modulation); }}},
        {"channel", string_key(&C::channel)},
        {"taps", {[](C& c, const std::string& v) { c.custom_taps.re = parse_reals("taps", v); },
                  [](const C& c) { return join_reals(c.custom_taps.re); }}},
        {"taps_im", {[](C& c, const std::string& v) { c.custom_taps.im = parse_reals("taps_im", v); },
                     [](const C& c) { return join_reals(c.custom_taps.im); }}},
        {"nonlinearity", string_key(&C::nonlinearity)},
        {"snr", {[](C& c, const std::string& v) { c.snr_db = parse_snr_list(v); },
                 [](const C& c) { return join_reals(c.snr_db); }}},
        {"L", uint_key(&C::L, "L")},
        {"K", uint_key(&C::K, "K")},
        {"N", uint_key(&C::N, "N")},
        {"iterations", uint_key(&C::iterations, "iterations")},
        {"lr", real_key(&C::lr, "lr")},
        {"model_taps", uint_key(&C::model_taps, "model_taps")},
        {"lead", uint_key(&C::lead, "lead")},
        {"max_delay", uint_key(&C::max_delay, "max_delay")},
        {"code", string_key(&C::code)},
        {"algo", {[](C& c, const std::string& v) { c.algorithms = split_list(v); },
                  [](const C& c) { return join(c.algorithms); }}},
        {"trials", uint_key(&C::trials, "trials")},
        {"seed", uint_key(&C::seed, "seed")},
        {"out", string_key(&C::out)},
        {"workers", uint_key(&C::workers, "workers")},
        {"timing", bool_key(&C::timing, "timing")},
        {"turbo.T", turbo_uint(&TurboConfig::T, "turbo.T")},
        {"turbo.I", turbo_uint(&TurboConfig::I, "turbo.I")},
        {"turbo.B", turbo_uint(&TurboConfig::B, "turbo.B")},
        {"turbo.lr", turbo_real(&TurboConfig::lr, "turbo.lr")},
        {"turbo.lambda", turbo_real(&TurboConfig::lambda, "turbo.lambda")},
        {"turbo.eta", turbo_real(&TurboConfig::eta, "turbo.eta")},
        {"turbo.alpha", turbo_real(&TurboConfig::alpha, "turbo.alpha")},
        {"nl.iterations", uint_key(&C::nl_iterations, "nl.iterations")},
        {"nl.lr", real_key(&C::nl_lr, "nl.lr")},
        {"nl.dropout", real_key(&C::nl_dropout, "nl.dropout")},
        {"nl.tau", real_key(&C::nl_tau, "nl.tau")},
        {"nl.train_tau", bool_key(&C::nl_train_tau, "nl.train_tau")},
        {"nl.warmup", uint_key(&C::nl_warmup, "nl.warmup")},
        {"nl.layer1", uint_key(&C::nl_layer1, "nl.layer1")},
        {"nl.layer2", uint_key(&C::nl_layer2, "nl.layer2")},
        {"cma.mu", real_key(&C::cma_mu, "cma.mu")},
        {"cma.epochs", uint_key(&C::cma_epochs, "cma.epochs")},
        {"cma.taps", uint_key(&C::cma_taps, "cma.taps")},
        {"lms.mu", real_key(&C::lms_mu, "lms.mu")},
        {"lms.epochs", uint_key(&C::lms_epochs, "lms.epochs")},
        {"lms.taps", uint_key(&C::lms_taps, "lms.taps")},
        {"em.stage1", uint_key(&C::em_stage1, "em.stage1")},
        {"em.outer", uint_key(&C::em_outer, "em.outer")},
        {"em.bp", uint_key(&C::em_bp, "em.bp")},
        {"te.outer", uint_key(&C::te_outer, "te.outer")},
        {"te.bp", uint_key(&C::te_bp, "te.bp")},
    };
    return table;
}

inline const KeyHandler* find_key(const std::string& key)
{
    for (const auto& [k, h] : key_table())
        if (k == key) return &h;
    return nullptr;
}

/// Mode-dependent defaults applied before the explicit values.
inline void apply_mode_defaults(ExperimentConfig& c)
{
    switch (c.mode) {
    case Mode::uncoded_linear:
        c.modulation = Modulation::qpsk;
        c.channel = "h1";
        c.snr_db = {10.0};
        c.algorithms = algorithms_for(c.mode);
        break;
    case Mode::uncoded_nonlinear_smoke:
        c.modulation = Modulation::bpsk;
        c.channel = "ht3";
        c.nonlinearity = "g1";
        c.snr_db = {20.0};
        c.L = 576;
        c.algorithms = {"vaee-nl"};
        break;
    case Mode::coded_linear:
        c.modulation = Modulation::bpsk;
        c.channel = "ht3";
        c.snr_db = {6.0};
        c.algorithms = algorithms_for(c.mode);
        break;
    case Mode::coded_nonlinear:
        c.modulation = Modulation::bpsk;
        c.channel = "ht3";
        c.nonlinearity = "g1";
        c.snr_db = {20.0};
        c.algorithms = algorithms_for(c.mode);
        break;
    }
}

} // namespace detail

using ConfigOverrides = std::vector<std::pair<std::string, std::string>>;

/// Throws ConfigError naming the first problem.
inline void validate(const ExperimentConfig& c)
{
    if (c.channel == "custom") {
        if (c.custom_taps.re.empty()) throw ConfigError("config: channel 'custom' needs 'taps'");
        if (!c.custom_taps.im.empty() && c.custom_taps.im.size() != c.custom_taps.re.size())
            throw ConfigError("config: 'taps_im' must match 'taps' in length");
    } else if (!is_builtin_channel(c.channel)) {
        throw ConfigError("config: unknown channel '" + c.channel + "'");
    }
    if (!is_builtin_nonlinearity(c.nonlinearity))
        throw ConfigError("config: unknown nonlinearity '" + c.nonlinearity + "'");
    const Taps h = c.channel_taps();
    if (c.modulation == Modulation::qpsk) {
        if (c.nonlinearity != "identity") throw ConfigError("config: QPSK cannot be combined with a nonlinearity");
        if (c.mode != Mode::uncoded_linear) throw ConfigError("config: QPSK is only available in uncoded-linear mode");
    } else if (h.complex()) {
        throw ConfigError("config: channel '" + c.channel + "' is complex and needs QPSK");
    }
    if ((c.mode == Mode::uncoded_linear || c.mode == Mode::coded_linear) && c.nonlinearity != "identity")
        throw ConfigError("config: mode " + to_string(c.mode) + " has no nonlinearity");
    if (is_coded(c.mode) && c.code.empty()) throw ConfigError("config: mode " + to_string(c.mode) + " needs 'code'");
    if (c.snr_db.empty()) throw ConfigError("config: 'snr' is empty");
    if (c.trials == 0) throw ConfigError("config: 'trials' must be positive");
    if (c.workers == 0) throw ConfigError("config: 'workers' must be positive");
    if (c.algorithms.empty()) throw ConfigError("config: 'algo' is empty");
    const auto allowed = algorithms_for(c.mode);
    for (const auto& a : c.algorithms)
        if (std::find(allowed.begin(), allowed.end(), a) == allowed.end())
            throw ConfigError("config: algorithm '" + a + "' is not available in mode " + to_string(c.mode));
    if (!is_coded(c.mode)) {
        if (c.L < 2) throw ConfigError("config: 'L' must be at least 2");
        if (c.mode == Mode::uncoded_linear && c.K < 2) throw ConfigError("config: 'K' must be at least 2");
        const std::size_t n_eval = c.mode == Mode::uncoded_linear ? c.K : c.L;
        if (c.delay_range() >= n_eval) throw ConfigError("config: 'max_delay' leaves no overlapping window");
    }
    if (c.N == 0) throw ConfigError("config: 'N' must be positive");
    if (!(c.lr > 0.0) || !(c.nl_lr > 0.0)) throw ConfigError("config: learning rates must be positive");
    if (c.lead >= c.estimated_taps()) throw ConfigError("config: 'lead' must be smaller than the model tap count");
    if (!(c.nl_dropout >= 0.0 && c.nl_dropout < 1.0)) throw ConfigError("config: 'nl.dropout' must lie in [0, 1)");
    if (!(c.nl_tau > 0.0)) throw ConfigError("config: 'nl.tau' must be positive");
    if (c.nl_layer1 == 0 || c.nl_layer2 == 0) throw ConfigError("config: encoder kernel sizes must be positive");
    if (!(c.cma_mu > 0.0) || !(c.lms_mu > 0.0)) throw ConfigError("config: step sizes must be positive");
    if (c.cma_taps % 2 == 0) throw ConfigError("config: 'cma.taps' must be odd");
    if (c.lms_taps == 0) throw ConfigError("config: 'lms.taps' must be positive");
    if (is_coded(c.mode)) c.turbo.validate();
}

/// File text first, then overrides in order. A `mode` given anywhere selects
/// the mode defaults before any other value is applied.
inline ExperimentConfig parse_config(const std::string& text, const ConfigOverrides& overrides = {})
{
    ConfigOverrides entries;
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value'");
        entries.emplace_back(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    entries.insert(entries.end(), overrides.begin(), overrides.end());

    ExperimentConfig c;
    for (const auto& [k, v] : entries) {
        if (!detail::find_key(k)) throw ConfigError("config: unknown key '" + k + "'");
        if (k == "mode") c.mode = detail::parse_mode(detail::trim(v));
    }
    detail::apply_mode_defaults(c);
    for (const auto& [k, v] : entries) detail::find_key(k)->set(c, v);
    validate(c);
    return c;
}

/// Every key, in table order; parse_config(to_config_text(c)) == c.
inline std::string to_config_text(const ExperimentConfig& c)
{
    std::string s;
    for (const auto& [k, h] : detail::key_table()) {
        const std::string v = h.get(c);
        if (v.empty()) continue;
        s += k + " = " + v + "\n";
    }
    return s;
}

/// Key/value pairs for the JSON summary.
inline std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& c)
{
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [k, h] : detail::key_table()) out.emplace_back(k, h.get(c));
    return out;
}

} // namespace blindeq
