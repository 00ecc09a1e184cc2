// blindeq: blind equalization experiments from the command line.
//
//   blindeq thresholds [ht1 ht2 ht3] [--rate 0.75]
//   blindeq equalize  --mode uncoded-linear --snr 10
//   blindeq decode    --code tests/data/peg_576_r34.alist --snr 6
//   blindeq sweep     --config exp.cfg --out results.csv
//   blindeq selftest
//
// Exit codes: 0 ok, 1 other failure, 2 configuration, 3 numeric, 4 I/O,
// 130 sweep interrupted (partial results written).

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "blindeq/config.hpp"
#include "blindeq/experiment.hpp"
#include "blindeq/selftest.hpp"

namespace {

using json = nlohmann::ordered_json;
using namespace blindeq;

std::atomic<bool> g_stop{false};
static_assert(std::atomic<bool>::is_always_lock_free);

extern "C" void on_sigint(int) { g_stop.store(true); }

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string read_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + path + "'");
}

/// Options shared by equalize, decode and sweep.
struct ExperimentFlags {
    std::string config_file;
    std::string summary;
    std::vector<std::string> sets;
    std::vector<std::pair<std::string, std::string>> named;  // filled by callbacks, in key order
    std::size_t trial = 0;

    void attach(CLI::App* app)
    {
        app->add_option("--config", config_file, "key = value config file");
        app->add_option("--set", sets, "override any config key (key=value), repeatable");
        for (const char* key : {"mode", "channel", "snr", "trials", "seed", "algo", "out", "workers", "code",
                                "turbo.T", "turbo.I", "turbo.B", "turbo.lr", "turbo.lambda", "turbo.eta",
                                "turbo.alpha"}) {
            const std::string k = key;
            app->add_option_function<std::string>(
                "--" + k, [this, k](const std::string& v) { named.emplace_back(k, v); }, "config key '" + k + "'");
        }
        app->add_flag_callback("--timing", [this] { named.emplace_back("timing", "true"); },
                               "record wall_ms in the CSV (breaks byte-identical output)");
    }

    /// BLINDEQ_WORKERS (only if nothing else sets workers), file, --set, named flags.
    ExperimentConfig resolve(const std::string& default_mode) const
    {
        const std::string text = config_file.empty() ? "" : read_file(config_file);
        ConfigOverrides o;
        auto file_has = [&text](const std::string& key) {
            std::istringstream lines(text);
            for (std::string line; std::getline(lines, line);) {
                const auto b = line.find_first_not_of(" \t");
                if (b != std::string::npos && line.compare(b, key.size(), key) == 0 &&
                    line.find_first_not_of(" \t", b + key.size()) == line.find('=', b))
                    return true;
            }
            return false;
        };
        bool mode_given = file_has("mode");
        bool workers_given = file_has("workers");
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
            o.emplace_back(s.substr(0, eq), s.substr(eq + 1));
        }
        o.insert(o.end(), named.begin(), named.end());
        for (const auto& [k, v] : o) {
            mode_given |= k == "mode";
            workers_given |= k == "workers";
        }
        if (!mode_given) o.insert(o.begin(), {"mode", default_mode});
        if (const char* env = std::getenv("BLINDEQ_WORKERS"); env && *env && !workers_given)
            o.insert(o.begin(), {"workers", env});
        return parse_config(text, o);
    }
};

json trial_json(const TrialResult& r)
{
    json j;
    j["algorithm"] = r.algorithm;
    j["channel"] = r.channel;
    j["nonlinearity"] = r.nonlinearity;
    j["snr_db"] = r.snr_db;
    j["trial"] = r.trial;
    j["seed"] = r.seed;
    j["ser"] = number_or_null(r.ser);
    j["ber"] = number_or_null(r.ber);
    j["delay"] = r.delay;
    j["rotation"] = r.rotation;
    j["genie"] = r.genie;
    j["wall_ms"] = r.wall_ms;
    j["h_est"] = r.h_est;
    if (r.zero_syndrome) j["zero_syndrome"] = *r.zero_syndrome;
    if (r.aborted()) j["error"] = r.error;
    return j;
}

json config_json(const ExperimentConfig& c)
{
    json j = json::object();
    for (const auto& [k, v] : config_entries(c)) j[k] = v;
    return j;
}

std::string results_csv(const std::vector<TrialResult>& rs, bool timing)
{
    std::ostringstream out;
    write_results_csv(out, rs, timing);
    return out.str();
}

/// equalize / decode: trial `trial` at the first SNR point, every algorithm.
int run_single(const ExperimentFlags& f, const std::string& default_mode, bool coded)
{
    ExperimentConfig cfg = f.resolve(default_mode);
    if (is_coded(cfg.mode) != coded)
        throw ConfigError(std::string(coded ? "decode" : "equalize") + " does not accept mode " + to_string(cfg.mode));
    cfg.snr_db.resize(1);
    if (f.trial >= cfg.trials) cfg.trials = f.trial + 1;
    const Experiment exp(cfg);
    std::vector<SweepJob> jobs;
    for (const auto& j : exp.jobs())
        if (j.trial == f.trial) jobs.push_back(j);
    const auto outcome = run_jobs(jobs, [&exp](const SweepJob& j) { return exp.run(j); }, cfg.workers);
    json doc;
    doc["config"] = config_json(cfg);
    doc["trials"] = json::array();
    for (const auto& r : outcome.results) doc["trials"].push_back(trial_json(r));
    std::cout << doc.dump(2) << "\n";
    if (!cfg.out.empty()) write_file(cfg.out, results_csv(outcome.results, cfg.timing));
    for (const auto& r : outcome.results)
        if (r.aborted()) return 3;
    return 0;
}

int run_sweep_cmd(const ExperimentFlags& f)
{
    const ExperimentConfig cfg = f.resolve("uncoded-linear");
    const Experiment exp(cfg);
    const auto planned = exp.jobs().size();
    std::signal(SIGINT, on_sigint);
    const auto outcome = run_sweep(exp, cfg.workers, &g_stop);
    std::signal(SIGINT, SIG_DFL);

    const std::string csv = results_csv(outcome.results, cfg.timing);
    if (cfg.out.empty()) std::cout << csv;
    else write_file(cfg.out, csv);

    json doc;
    doc["config"] = config_json(cfg);
    doc["config_text"] = to_config_text(cfg);
    doc["truncated"] = outcome.truncated;
    doc["planned"] = planned;
    doc["completed"] = outcome.results.size();
    doc["aggregates"] = json::array();
    for (const auto& a : aggregate(outcome.results)) {
        json j;
        j["algorithm"] = a.algorithm;
        j["channel"] = a.channel;
        j["nonlinearity"] = a.nonlinearity;
        j["snr_db"] = a.snr_db;
        j["trials"] = a.trials;
        j["aborted"] = a.aborted;
        j["ser_mean"] = number_or_null(a.ser_mean);
        j["ser_se"] = number_or_null(a.ser_se);
        j["ber_mean"] = number_or_null(a.ber_mean);
        j["ber_se"] = number_or_null(a.ber_se);
        if (is_coded(cfg.mode)) j["zero_syndrome"] = a.zero_syndrome;
        if (cfg.timing) j["wall_ms"] = a.wall_ms;
        doc["aggregates"].push_back(j);
    }
    doc["errors"] = json::array();
    for (const auto& r : outcome.results)
        if (r.aborted()) doc["errors"].push_back({{"algorithm", r.algorithm}, {"snr_db", r.snr_db}, {"trial", r.trial},
                                                  {"error", r.error}});
    const std::string summary = !f.summary.empty() ? f.summary : cfg.out.empty() ? "" : cfg.out + ".json";
    if (summary.empty()) std::cerr << doc.dump(2) << "\n";
    else write_file(summary, doc.dump(2) + "\n");

    if (outcome.truncated) {
        std::cerr << "blindeq: interrupted, wrote " << outcome.results.size() << " of " << planned << " trials\n";
        return 130;
    }
    return 0;
}

int run_thresholds(const std::vector<std::string>& names, const std::vector<double>& taps, double rate,
                   std::size_t grid)
{
    std::vector<std::pair<std::string, Vec>> rows;
    if (!taps.empty()) rows.emplace_back("custom", taps);
    for (const auto& n : names) {
        if (!is_builtin_channel(n)) throw ConfigError("unknown channel '" + n + "'");
        const Taps h = builtin_channel(n);
        if (h.complex()) throw ConfigError("channel '" + n + "' is complex; thresholds cover real channels");
        rows.emplace_back(n, h.re);
    }
    if (rows.empty())
        for (const char* n : {"ht1", "ht2", "ht3"}) rows.emplace_back(n, builtin_channel(n).re);
    std::cout << "channel,rate,threshold_db\n";
    for (const auto& [name, h] : rows)
        std::cout << name << ',' << format_double(rate) << ',' << std::fixed << std::setprecision(4)
                  << shannon_threshold(h, rate, grid) + 0.0 << std::defaultfloat << "\n";
    return 0;
}

int run_selftest()
{
    bool ok = true;
    for (const auto& c : oracle::run_all()) {
        ok &= c.pass;
        std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.value << " (tolerance " << c.tolerance << ")\n";
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Blind equalization and decoding experiments"};
    app.require_subcommand(1);

    ExperimentFlags eq_flags, dec_flags, sweep_flags;
    auto* eq = app.add_subcommand("equalize", "one uncoded trial with diagnostics (JSON on stdout)");
    eq_flags.attach(eq);
    eq->add_option("--trial", eq_flags.trial, "trial index");
    auto* dec = app.add_subcommand("decode", "one coded trial with diagnostics (JSON on stdout)");
    dec_flags.attach(dec);
    dec->add_option("--trial", dec_flags.trial, "trial index");
    auto* sweep = app.add_subcommand("sweep", "Monte-Carlo sweep: CSV results plus JSON summary");
    sweep_flags.attach(sweep);
    sweep->add_option("--summary", sweep_flags.summary, "JSON summary path (default: <out>.json)");

    std::vector<std::string> names;
    std::vector<double> taps;
    double rate = 0.75;
    std::size_t grid = kCapacityGrid;
    auto* thr = app.add_subcommand("thresholds", "water-filling Shannon thresholds of real channels");
    thr->add_option("channels", names, "built-in channel ids (default ht1 ht2 ht3)");
    thr->add_option("--taps", taps, "custom real impulse response")->delimiter(',');
    thr->add_option("--rate", rate, "code rate in bits per channel use");
    thr->add_option("--grid", grid, "frequency grid size");

    auto* self = app.add_subcommand("selftest", "oracle and invariant checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*eq) return run_single(eq_flags, "uncoded-linear", false);
        if (*dec) return run_single(dec_flags, "coded-linear", true);
        if (*sweep) return run_sweep_cmd(sweep_flags);
        if (*thr) return run_thresholds(names, taps, rate, grid);
        if (*self) return run_selftest();
    } catch (const Error& e) {
        std::cerr << "blindeq: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "blindeq: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
