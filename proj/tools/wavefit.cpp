// wavefit: ingest -> seed -> fit -> report for multi-region epidemic wave fits.

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "wavefit/pipeline.hpp"

namespace {

enum ExitCode : int {
    kOk = 0,
    kUnexpected = 1,
    kConfigError = 2,
    kDataError = 3,
    kNumericalError = 4,
};

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

Level log_level() {
    const char* env = std::getenv("WAVEFIT_LOG_LEVEL");
    if (!env) return Level::info;
    const std::string v = env;
    if (v == "error") return Level::error;
    if (v == "warn") return Level::warn;
    if (v == "debug") return Level::debug;
    return Level::info;
}

void log(Level level, const std::string& msg) {
    static const Level threshold = log_level();
    if (level > threshold) return;
    static constexpr const char* names[] = {"error", "warn", "info", "debug"};
    std::cerr << "[wavefit " << names[static_cast<int>(level)] << "] " << msg << "\n";
}

struct Options {
    std::string config;
    std::string out;
    long long seed = -1;
    bool fixed_kernel = false;
    std::string derivative_mode;
};

wavefit::RunConfig load(const Options& o, std::string& config_text) {
    auto cfg = wavefit::load_config(o.config);
    config_text = wavefit::read_file(o.config);
    if (!o.out.empty()) cfg.output_dir = o.out;
    if (o.seed >= 0) cfg.seed.rng_seed = static_cast<std::uint64_t>(o.seed);
    if (o.fixed_kernel) cfg.fit.fixed_kernel = true;
    if (o.derivative_mode == "paper") cfg.fit.alpha_mode = wavefit::AlphaDerivative::paper;
    else if (o.derivative_mode == "exact") cfg.fit.alpha_mode = wavefit::AlphaDerivative::exact;
    config_text += "\n--seed=" + std::to_string(cfg.seed.rng_seed) + " --fixed-kernel=" +
                   std::to_string(cfg.fit.fixed_kernel) + " --derivative-mode=" +
                   std::string(wavefit::to_string(cfg.fit.alpha_mode));
    return cfg;
}

void run_ingest(const wavefit::RunConfig& cfg) {
    const auto summary = wavefit::cmd_ingest(cfg);
    for (const auto& r : summary.at("regions"))
        log(Level::info, r.at("region").get<std::string>() + ": " + std::to_string(r.at("cases_weeks").get<int>()) +
                             " cases weeks, " + std::to_string(r.at("deaths_weeks").get<int>()) + " deaths weeks");
    std::cout << "cases weeks: " << summary.at("cases_weeks") << ", deaths weeks: " << summary.at("deaths_weeks")
              << "\n";
}

void run_seed(const wavefit::RunConfig& cfg) {
    const auto out = wavefit::cmd_seed(cfg);
    for (const auto& r : out.at("regions"))
        if (r.at("warning").get<bool>())
            log(Level::warn, r.at("region").get<std::string>() + ": no trial produced a finite chi2");
    std::cout << wavefit::read_file(cfg.output_dir / "seed_table.txt");
}

int run_fit(const wavefit::RunConfig& cfg) {
    const auto outcome = wavefit::cmd_fit(cfg);
    std::cout << outcome.report;
    if (!outcome.fit.converged) {
        std::string trace;
        for (double d : outcome.fit.delta_norm_trace) trace += " " + std::to_string(d);
        log(Level::error, "fit did not converge in " + std::to_string(outcome.fit.iterations) +
                              " iterations; max relative delta trace:" + trace);
        return kNumericalError;
    }
    log(Level::info, "converged after " + std::to_string(outcome.fit.iterations) + " iterations");
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-region Gompertz wave fits with a shared gamma delay kernel"};
    app.require_subcommand(1);
    Options opts;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", opts.out, "Output directory (overrides config)");
        sub->add_option("--seed", opts.seed, "RNG seed (overrides config)")->check(CLI::NonNegativeNumber);
        sub->add_flag("--fixed-kernel", opts.fixed_kernel, "Hold alpha and beta at their initial values");
        sub->add_option("--derivative-mode", opts.derivative_mode, "Alpha derivative: paper or exact")
            ->check(CLI::IsMember({"paper", "exact"}));
    };
    auto* ingest = app.add_subcommand("ingest", "Aggregate daily data into weekly series");
    auto* seed = app.add_subcommand("seed", "Monte Carlo stage-1 fit of the cases per region");
    auto* fit = app.add_subcommand("fit", "Global linearized fit, report and confidence bands");
    auto* report = app.add_subcommand("report", "Render the text report from a stored fit");
    auto* all = app.add_subcommand("run", "ingest, seed and fit in sequence");
    for (auto* sub : {ingest, seed, fit, report, all}) add_common(sub);

    CLI11_PARSE(app, argc, argv);

    const auto started = std::chrono::system_clock::now();
    try {
        std::string config_text;
        const auto cfg = load(opts, config_text);
        int code = kOk;
        std::string stage;
        if (ingest->parsed()) {
            stage = "ingest";
            run_ingest(cfg);
        } else if (seed->parsed()) {
            stage = "seed";
            run_seed(cfg);
        } else if (fit->parsed()) {
            stage = "fit";
            code = run_fit(cfg);
        } else if (report->parsed()) {
            stage = "report";
            std::cout << wavefit::cmd_report(cfg);
        } else {
            stage = "run";
            run_ingest(cfg);
            run_seed(cfg);
            code = run_fit(cfg);
        }
        wavefit::write_manifest(cfg, stage, config_text, started);
        return code;
    } catch (const wavefit::ConfigError& e) {
        log(Level::error, e.what());
        return kConfigError;
    } catch (const wavefit::DataError& e) {
        log(Level::error, e.what());
        return kDataError;
    } catch (const wavefit::NumericalError& e) {
        log(Level::error, e.what());
        return kNumericalError;
    } catch (const std::invalid_argument& e) {
        log(Level::error, e.what());
        return kConfigError;
    } catch (const std::exception& e) {
        log(Level::error, std::string("unexpected: ") + e.what());
        return kUnexpected;
    }
}
