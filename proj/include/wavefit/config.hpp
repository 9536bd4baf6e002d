#ifndef WAVEFIT_CONFIG_HPP
#define WAVEFIT_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavefit/dates.hpp"
#include "wavefit/errors.hpp"
#include "wavefit/seeder.hpp"
#include "wavefit/timeseries.hpp"
#include "wavefit/wave_model.hpp"

namespace wavefit {

using json = nlohmann::json;

/// Optional per-parameter overrides of the default search box. A missing
/// entry keeps the default range; a scalar pins the parameter.
struct BoxOverride {
    struct Peak {
        std::optional<ParamRange> n, lambda, t0;
    };
    std::vector<Peak> peaks;
    std::optional<ParamRange> c, s;
};

struct RegionConfig {
    std::string name;     // label used in outputs
    std::string data_key; // region code in the data file
    Date start;           // first day of the first cases week (day index 0)
    Date cutoff;          // last day used, inclusive
    int peaks = 1;
    std::vector<bool> dropped_death_peaks; // per case peak
    double inflate_cases = 0.0;
    double inflate_deaths = 0.0;
    BoxOverride box;
};

struct DataConfig {
    std::filesystem::path path;
    ColumnMapping columns;
    NegativePolicy negatives = NegativePolicy::reject;
};

struct SeedConfig {
    std::uint64_t trials = 1'000'000;
    std::uint64_t rng_seed = 1;
    std::string rng_algorithm = kRngAlgorithm;
    unsigned workers = 1;
    bool polish = false;
};

struct FitConfig {
    double tol = 1e-8;
    int max_iter = 100;
    GammaKernel kernel_init{4.938, 0.277};
    QuadratureGrid grid;
    AlphaDerivative alpha_mode = AlphaDerivative::paper;
    bool fixed_kernel = false;
    double confidence_level = 0.95;
    double band_step = 1.0;
};

struct RunConfig {
    DataConfig data;
    std::vector<RegionConfig> regions;
    SeedConfig seed;
    FitConfig fit;
    std::filesystem::path output_dir = "out";
};

namespace detail {

inline ParamRange parse_range(const json& j, const std::string& what) {
    if (j.is_number()) {
        const double v = j.get<double>();
        return {v, v};
    }
    if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number()) {
        ParamRange r{j[0].get<double>(), j[1].get<double>()};
        if (!(r.low <= r.high)) throw ConfigError(what + ": low > high");
        return r;
    }
    throw ConfigError(what + ": expected a number or [low, high]");
}

inline json range_to_json(const ParamRange& r) {
    if (r.low == r.high) return r.low;
    return json::array({r.low, r.high});
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

} // namespace detail

/// Parses the run configuration. Relative data paths resolve against
/// `base_dir` (normally the directory of the config file).
inline RunConfig parse_config(const json& j, const std::filesystem::path& base_dir = {}) {
    using detail::get_or;
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig cfg;

    const json data = j.value("data", json::object());
    if (!data.contains("path")) throw ConfigError("config: data.path is required");
    cfg.data.path = data.at("path").get<std::string>();
    if (cfg.data.path.is_relative() && !base_dir.empty()) cfg.data.path = base_dir / cfg.data.path;
    const auto preset = get_or<std::string>(data, "preset", "default");
    if (preset == "who") cfg.data.columns = who_columns();
    else if (preset != "default") throw ConfigError("config: unknown data.preset '" + preset + "'");
    if (data.contains("columns")) {
        const auto& c = data.at("columns");
        cfg.data.columns.date = get_or(c, "date", cfg.data.columns.date);
        cfg.data.columns.region = get_or(c, "region", cfg.data.columns.region);
        cfg.data.columns.cases = get_or(c, "cases", cfg.data.columns.cases);
        cfg.data.columns.deaths = get_or(c, "deaths", cfg.data.columns.deaths);
        const auto delim = get_or<std::string>(c, "delimiter", std::string(1, cfg.data.columns.delimiter));
        if (delim.size() != 1) throw ConfigError("config: data.columns.delimiter must be one character");
        cfg.data.columns.delimiter = delim[0];
    }
    const auto neg = get_or<std::string>(data, "negative_counts", "reject");
    if (neg == "reject") cfg.data.negatives = NegativePolicy::reject;
    else if (neg == "clamp") cfg.data.negatives = NegativePolicy::clamp_to_zero;
    else throw ConfigError("config: data.negative_counts must be 'reject' or 'clamp'");

    if (!j.contains("regions") || !j.at("regions").is_array() || j.at("regions").empty())
        throw ConfigError("config: at least one region is required");
    for (const auto& r : j.at("regions")) {
        RegionConfig rc;
        if (!r.contains("name")) throw ConfigError("config: region without name");
        rc.name = r.at("name").get<std::string>();
        rc.data_key = get_or(r, "code", rc.name);
        try {
            rc.start = parse_date(r.at("start").get<std::string>());
            rc.cutoff = parse_date(r.at("cutoff").get<std::string>());
        } catch (const std::exception& e) {
            throw ConfigError("config: region " + rc.name + " needs valid start/cutoff dates: " + e.what());
        }
        rc.peaks = get_or(r, "peaks", 1);
        if (rc.peaks < 1) throw ConfigError("config: region " + rc.name + " needs peaks >= 1");
        rc.dropped_death_peaks.assign(static_cast<std::size_t>(rc.peaks), false);
        for (int k : get_or(r, "dropped_death_peaks", std::vector<int>{})) {
            if (k < 1 || k > rc.peaks) throw ConfigError("config: region " + rc.name + ": dropped death peak out of range");
            rc.dropped_death_peaks[static_cast<std::size_t>(k - 1)] = true;
        }
        if (r.contains("inflation")) {
            rc.inflate_cases = get_or(r.at("inflation"), "cases", 0.0);
            rc.inflate_deaths = get_or(r.at("inflation"), "deaths", 0.0);
            if (rc.inflate_cases < 0.0 || rc.inflate_deaths < 0.0)
                throw ConfigError("config: region " + rc.name + ": inflation fractions must be >= 0");
        }
        if (r.contains("box")) {
            const auto& b = r.at("box");
            const std::string where = "config: region " + rc.name + " box";
            if (b.contains("peaks")) {
                if (b.at("peaks").size() != static_cast<std::size_t>(rc.peaks))
                    throw ConfigError(where + ": one entry per peak required");
                for (const auto& p : b.at("peaks")) {
                    BoxOverride::Peak pk;
                    if (p.contains("n")) pk.n = detail::parse_range(p.at("n"), where + ".n");
                    if (p.contains("lambda")) pk.lambda = detail::parse_range(p.at("lambda"), where + ".lambda");
                    if (p.contains("t0")) pk.t0 = detail::parse_range(p.at("t0"), where + ".t0");
                    rc.box.peaks.push_back(pk);
                }
            }
            if (b.contains("c")) rc.box.c = detail::parse_range(b.at("c"), where + ".c");
            if (b.contains("s")) rc.box.s = detail::parse_range(b.at("s"), where + ".s");
        }
        cfg.regions.push_back(std::move(rc));
    }

    if (j.contains("seed")) {
        const auto& s = j.at("seed");
        cfg.seed.trials = get_or<std::uint64_t>(s, "trials", cfg.seed.trials);
        cfg.seed.rng_seed = get_or<std::uint64_t>(s, "rng_seed", cfg.seed.rng_seed);
        cfg.seed.rng_algorithm = get_or(s, "rng_algorithm", cfg.seed.rng_algorithm);
        cfg.seed.workers = get_or(s, "workers", cfg.seed.workers);
        cfg.seed.polish = get_or(s, "polish", cfg.seed.polish);
        if (cfg.seed.trials < 1) throw ConfigError("config: seed.trials must be >= 1");
        if (cfg.seed.rng_algorithm != kRngAlgorithm)
            throw ConfigError("config: unsupported seed.rng_algorithm '" + cfg.seed.rng_algorithm + "' (supported: " +
                              kRngAlgorithm + ")");
    }

    if (j.contains("fit")) {
        const auto& f = j.at("fit");
        cfg.fit.tol = get_or(f, "tol", cfg.fit.tol);
        cfg.fit.max_iter = get_or(f, "max_iter", cfg.fit.max_iter);
        if (f.contains("kernel_init")) {
            cfg.fit.kernel_init.alpha = get_or(f.at("kernel_init"), "alpha", cfg.fit.kernel_init.alpha);
            cfg.fit.kernel_init.beta = get_or(f.at("kernel_init"), "beta", cfg.fit.kernel_init.beta);
        }
        cfg.fit.grid.step = get_or(f, "quadrature_step", cfg.fit.grid.step);
        cfg.fit.grid.lower = get_or(f, "convolution_lower", cfg.fit.grid.lower);
        const auto mode = get_or<std::string>(f, "derivative_mode", "paper");
        if (mode == "paper") cfg.fit.alpha_mode = AlphaDerivative::paper;
        else if (mode == "exact") cfg.fit.alpha_mode = AlphaDerivative::exact;
        else throw ConfigError("config: fit.derivative_mode must be 'paper' or 'exact'");
        cfg.fit.fixed_kernel = get_or(f, "fixed_kernel", cfg.fit.fixed_kernel);
        cfg.fit.confidence_level = get_or(f, "confidence_level", cfg.fit.confidence_level);
        cfg.fit.band_step = get_or(f, "band_step", cfg.fit.band_step);
        if (!(cfg.fit.tol > 0.0) || cfg.fit.max_iter < 1) throw ConfigError("config: fit.tol > 0 and fit.max_iter >= 1");
        if (!(cfg.fit.grid.step > 0.0)) throw ConfigError("config: fit.quadrature_step must be > 0");
        if (!(cfg.fit.kernel_init.alpha > 0.0) || !(cfg.fit.kernel_init.beta > 0.0))
            throw ConfigError("config: fit.kernel_init alpha and beta must be > 0");
        if (!(cfg.fit.confidence_level > 0.0 && cfg.fit.confidence_level < 1.0))
            throw ConfigError("config: fit.confidence_level must be in (0, 1)");
        if (!(cfg.fit.band_step > 0.0)) throw ConfigError("config: fit.band_step must be > 0");
    }

    cfg.output_dir = get_or<std::string>(j, "output_dir", cfg.output_dir.string());
    if (cfg.output_dir.is_relative() && !base_dir.empty()) cfg.output_dir = base_dir / cfg.output_dir;
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(j, path.parent_path());
}

/// Canonical JSON of the sections that determine ingest and seed outputs
/// (data mapping, regions, search settings). Paths are excluded; the data
/// file is identified by content hash instead.
inline json staging_json(const RunConfig& cfg) {
    json j;
    j["columns"] = {{"date", cfg.data.columns.date},
                    {"region", cfg.data.columns.region},
                    {"cases", cfg.data.columns.cases},
                    {"deaths", cfg.data.columns.deaths},
                    {"delimiter", std::string(1, cfg.data.columns.delimiter)}};
    j["negative_counts"] = cfg.data.negatives == NegativePolicy::reject ? "reject" : "clamp";
    json regions = json::array();
    for (const auto& r : cfg.regions) {
        json rj{{"name", r.name},
                {"code", r.data_key},
                {"start", format_date(r.start)},
                {"cutoff", format_date(r.cutoff)},
                {"peaks", r.peaks},
                {"dropped_death_peaks", r.dropped_death_peaks},
                {"inflation", {{"cases", r.inflate_cases}, {"deaths", r.inflate_deaths}}}};
        json peaks = json::array();
        for (const auto& p : r.box.peaks) {
            json pj = json::object();
            if (p.n) pj["n"] = detail::range_to_json(*p.n);
            if (p.lambda) pj["lambda"] = detail::range_to_json(*p.lambda);
            if (p.t0) pj["t0"] = detail::range_to_json(*p.t0);
            peaks.push_back(pj);
        }
        rj["box"] = {{"peaks", peaks}};
        if (r.box.c) rj["box"]["c"] = detail::range_to_json(*r.box.c);
        if (r.box.s) rj["box"]["s"] = detail::range_to_json(*r.box.s);
        regions.push_back(rj);
    }
    j["regions"] = regions;
    j["seed"] = {{"trials", cfg.seed.trials},
                 {"rng_seed", cfg.seed.rng_seed},
                 {"rng_algorithm", cfg.seed.rng_algorithm},
                 {"polish", cfg.seed.polish}};
    return j;
}

inline json fit_json(const FitConfig& f) {
    return {{"tol", f.tol},
            {"max_iter", f.max_iter},
            {"kernel_init", {{"alpha", f.kernel_init.alpha}, {"beta", f.kernel_init.beta}}},
            {"quadrature_step", f.grid.step},
            {"convolution_lower", f.grid.lower},
            {"derivative_mode", f.alpha_mode == AlphaDerivative::paper ? "paper" : "exact"},
            {"fixed_kernel", f.fixed_kernel},
            {"confidence_level", f.confidence_level},
            {"band_step", f.band_step}};
}

/// Search box for a region: defaults from the data, then config overrides.
inline SearchBox region_search_box(const RegionConfig& rc, const SeedConfig& sc, const WeeklySeries& cases) {
    SearchBox box = default_search_box(cases, static_cast<std::size_t>(rc.peaks), sc.trials, sc.rng_seed);
    for (std::size_t i = 0; i < rc.box.peaks.size() && i < box.peaks.size(); ++i) {
        const auto& o = rc.box.peaks[i];
        if (o.n) box.peaks[i].n = *o.n;
        if (o.lambda) box.peaks[i].lambda = *o.lambda;
        if (o.t0) box.peaks[i].t0 = *o.t0;
    }
    if (rc.box.c) box.c = *rc.box.c;
    if (rc.box.s) box.s = *rc.box.s;
    box.workers = sc.workers;
    box.polish = sc.polish;
    return box;
}

} // namespace wavefit

#endif // WAVEFIT_CONFIG_HPP
