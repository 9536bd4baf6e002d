#ifndef WAVEFIT_PIPELINE_HPP
#define WAVEFIT_PIPELINE_HPP

// Stage orchestration shared by the CLI and the integration tests.
// Requires OpenSSL (libcrypto) for content hashes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "wavefit/config.hpp"
#include "wavefit/gls.hpp"
#include "wavefit/report.hpp"
#include "wavefit/seeder.hpp"
#include "wavefit/timeseries.hpp"
#include "wavefit/uncertainty.hpp"

#ifndef WAVEFIT_VERSION
#define WAVEFIT_VERSION "0.0.0"
#endif

namespace wavefit {

namespace fs = std::filesystem;

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << content;
}

inline json read_json(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

/// Hash binding stage outputs to the inputs that produced them.
inline std::string inputs_hash(const RunConfig& cfg, const std::string& data_hash) {
    return sha256_hex(staging_json(cfg).dump() + "\n" + data_hash);
}

inline std::string data_hash(const RunConfig& cfg) { return sha256_hex(read_file(cfg.data.path)); }

struct StageError : ConfigError {
    using ConfigError::ConfigError;
};

// ---------------------------------------------------------------------------
// ingest

struct IngestResult {
    std::vector<RegionData> data; // config region order
    std::size_t case_weeks = 0;
    std::size_t death_weeks = 0;
};

/// Aggregates one region: cases from `start`, deaths from start + 14 days,
/// both on the cases day axis.
inline RegionData weekly_for_region(const RegionConfig& rc, const RegionDaily& daily) {
    RegionData d;
    d.cases = aggregate_weekly(daily.cases, rc.start, rc.cutoff);
    d.deaths = rebase(aggregate_weekly(daily.deaths, deaths_window(rc.start), rc.cutoff), rc.start);
    d.cases.region = d.deaths.region = rc.name;
    return d;
}

inline IngestResult ingest(const RunConfig& cfg) {
    std::ifstream in(cfg.data.path, std::ios::binary);
    if (!in) throw DataError("cannot open data file " + cfg.data.path.string());
    const auto daily = read_daily_csv(in, cfg.data.columns, cfg.data.negatives);
    IngestResult out;
    for (const auto& rc : cfg.regions) {
        const auto it = daily.find(rc.data_key);
        if (it == daily.end()) throw DataError("region '" + rc.data_key + "' does not appear in the data");
        out.data.push_back(weekly_for_region(rc, it->second));
        out.case_weeks += out.data.back().cases.points.size();
        out.death_weeks += out.data.back().deaths.points.size();
    }
    return out;
}

inline fs::path weekly_path(const fs::path& out_dir, const std::string& region, Metric m) {
    return out_dir / "weekly" / (region + "_" + std::string(to_string(m)) + ".csv");
}

inline json cmd_ingest(const RunConfig& cfg) {
    const auto dh = data_hash(cfg);
    const auto res = ingest(cfg);
    json regions = json::array();
    for (const auto& d : res.data) {
        for (const auto* s : {&d.cases, &d.deaths}) {
            std::ostringstream os;
            write_weekly(os, *s);
            write_file(weekly_path(cfg.output_dir, s->region, s->metric), os.str());
        }
        regions.push_back({{"region", d.cases.region},
                           {"cases_weeks", d.cases.points.size()},
                           {"deaths_weeks", d.deaths.points.size()}});
    }
    json summary{{"regions", regions},
                 {"cases_weeks", res.case_weeks},
                 {"deaths_weeks", res.death_weeks},
                 {"inputs_hash", inputs_hash(cfg, dh)}};
    write_file(cfg.output_dir / "ingest_summary.json", summary.dump(2) + "\n");
    return summary;
}

inline void require_stage(const fs::path& path, const std::string& expected_hash, const char* stage,
                          const char* earlier) {
    if (!fs::exists(path))
        throw StageError(std::string(stage) + ": missing " + path.string() + "; run '" + earlier + "' first");
    const auto j = read_json(path);
    if (j.value("inputs_hash", std::string{}) != expected_hash)
        throw StageError(std::string(stage) + ": " + path.string() +
                         " was produced from a different config or data file; rerun '" + earlier + "'");
}

inline std::vector<RegionData> load_weekly(const RunConfig& cfg) {
    std::vector<RegionData> out;
    for (const auto& rc : cfg.regions) {
        RegionData d;
        std::istringstream c(read_file(weekly_path(cfg.output_dir, rc.name, Metric::cases)));
        std::istringstream k(read_file(weekly_path(cfg.output_dir, rc.name, Metric::deaths)));
        d.cases = read_weekly(c);
        d.deaths = read_weekly(k);
        out.push_back(std::move(d));
    }
    return out;
}

// ---------------------------------------------------------------------------
// seed

inline std::vector<SeedResult> seed_regions(const RunConfig& cfg, const std::vector<RegionData>& data) {
    std::vector<SeedResult> out;
    for (std::size_t r = 0; r < cfg.regions.size(); ++r) {
        SearchBox box = region_search_box(cfg.regions[r], cfg.seed, data[r].cases);
        box.rng_seed = cfg.seed.rng_seed + r; // one stream family per region
        out.push_back(mc_search(box, data[r].cases));
    }
    return out;
}

inline json cmd_seed(const RunConfig& cfg) {
    const auto hash = inputs_hash(cfg, data_hash(cfg));
    require_stage(cfg.output_dir / "ingest_summary.json", hash, "seed", "ingest");
    const auto data = load_weekly(cfg);
    const auto seeds = seed_regions(cfg, data);
    json regions = json::array();
    std::vector<std::string> names;
    for (std::size_t r = 0; r < seeds.size(); ++r) {
        json sj = to_json(seeds[r]);
        sj["region"] = cfg.regions[r].name;
        regions.push_back(sj);
        names.push_back(cfg.regions[r].name);
    }
    json out{{"regions", regions}, {"inputs_hash", hash}};
    write_file(cfg.output_dir / "seed.json", out.dump(2) + "\n");
    std::ostringstream table;
    print_seed_table(table, names, seeds);
    write_file(cfg.output_dir / "seed_table.txt", table.str());
    return out;
}

// ---------------------------------------------------------------------------
// fit

/// Largest analytic peak height among the death peaks, scanned on a 0.5 day
/// grid over the deaths window.
inline double death_peak_height(const RegionModel& m, const GammaKernel& kernel, const WeeklySeries& deaths,
                                const QuadratureGrid& grid) {
    double best = 0.0;
    if (deaths.points.empty()) return best;
    const double lo = deaths.points.front().t - 3.0, hi = deaths.points.back().t + 4.0;
    for (std::size_t i = 0; i < m.case_peaks.size(); ++i) {
        if (!m.death_norms[i]) continue;
        const auto& p = m.case_peaks[i];
        for (double t = lo; t <= hi; t += 0.5)
            best = std::max(best, *m.death_norms[i] * death_shape(t, p.t0, p.lambda, kernel, grid));
    }
    return best;
}

struct PreparedFit {
    std::vector<RegionModel> models;
    std::vector<RegionData> data; // with error inflation applied
    FitOptions options;
};

/// Builds start models from seeds and applies the one-shot error inflation.
inline PreparedFit prepare_fit(const RunConfig& cfg, std::vector<RegionData> data,
                               const std::vector<SeedResult>& seeds) {
    PreparedFit p;
    p.options.tol = cfg.fit.tol;
    p.options.max_iter = cfg.fit.max_iter;
    p.options.model = {cfg.fit.grid, cfg.fit.alpha_mode};
    p.options.fixed_kernel = cfg.fit.fixed_kernel;
    for (std::size_t r = 0; r < cfg.regions.size(); ++r) {
        const auto& rc = cfg.regions[r];
        if (seeds[r].peaks.size() != static_cast<std::size_t>(rc.peaks))
            throw StageError("fit: seed for " + rc.name + " has a different peak count; rerun 'seed'");
        p.models.push_back(model_from_seed(rc.name, seeds[r], rc.dropped_death_peaks));
        if (rc.inflate_cases > 0.0) {
            double height = 0.0;
            for (const auto& pk : seeds[r].peaks) height = std::max(height, peak_height(pk));
            data[r].cases = inflate_errors(data[r].cases, rc.inflate_cases, height);
        }
    }
    bool any_deaths = false;
    for (const auto& rc : cfg.regions) any_deaths = any_deaths || rc.inflate_deaths > 0.0;
    if (any_deaths) {
        auto prelim = p.models;
        linear_solve(prelim, cfg.fit.kernel_init, data, p.options.model);
        for (std::size_t r = 0; r < cfg.regions.size(); ++r) {
            const double frac = cfg.regions[r].inflate_deaths;
            if (frac <= 0.0) continue;
            const double height = death_peak_height(prelim[r], cfg.fit.kernel_init, data[r].deaths, cfg.fit.grid);
            if (height > 0.0) data[r].deaths = inflate_errors(data[r].deaths, frac, height);
        }
    }
    p.data = std::move(data);
    return p;
}

inline std::vector<double> band_grid(const WeeklySeries& s, double step) {
    std::vector<double> grid;
    if (s.points.empty()) return grid;
    const double lo = s.points.front().t - 3.0, hi = s.points.back().t + 3.0;
    const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
    for (long i = 0; i <= n; ++i) grid.push_back(lo + static_cast<double>(i) * step);
    return grid;
}

inline std::string render_report(const FitResult& fit) {
    std::ostringstream os;
    print_fit_report(os, fit);
    return os.str();
}

struct FitOutcome {
    FitResult fit;
    std::string report;
};

inline FitOutcome cmd_fit(const RunConfig& cfg) {
    const auto hash = inputs_hash(cfg, data_hash(cfg));
    require_stage(cfg.output_dir / "seed.json", hash, "fit", "seed");
    const auto seed_json = read_json(cfg.output_dir / "seed.json");
    std::vector<SeedResult> seeds;
    for (const auto& sj : seed_json.at("regions")) seeds.push_back(seed_from_json(sj));
    if (seeds.size() != cfg.regions.size()) throw StageError("fit: seed.json region count differs from config");

    auto prepared = prepare_fit(cfg, load_weekly(cfg), seeds);
    FitOutcome out;
    out.fit = iterate_fit(prepared.models, prepared.data, cfg.fit.kernel_init, prepared.options);

    json fj = to_json(out.fit);
    fj["inputs_hash"] = hash;
    fj["fit_config"] = fit_json(cfg.fit);
    json series = json::array();
    for (const auto& d : prepared.data) {
        for (const auto* s : {&d.cases, &d.deaths}) {
            std::ostringstream os;
            write_weekly(os, *s);
            series.push_back({{"region", s->region}, {"metric", std::string(to_string(s->metric))}, {"weekly", os.str()}});
        }
    }
    fj["fitted_series"] = series;
    write_file(cfg.output_dir / "fit_result.json", fj.dump(2) + "\n");
    write_file(cfg.output_dir / "report.json", report_json(out.fit).dump(2) + "\n");
    out.report = render_report(out.fit);
    write_file(cfg.output_dir / "report.txt", out.report);

    for (std::size_t r = 0; r < prepared.data.size(); ++r) {
        for (const auto* s : {&prepared.data[r].cases, &prepared.data[r].deaths}) {
            const auto grid = band_grid(*s, cfg.fit.band_step);
            const auto band = curve_band(out.fit, static_cast<int>(r), s->metric, grid, cfg.fit.confidence_level);
            std::ostringstream os;
            write_band_csv(os, band);
            write_file(cfg.output_dir / "bands" / (s->region + "_" + std::string(to_string(s->metric)) + ".csv"),
                       os.str());
        }
    }
    if (!out.fit.layout.fixed_kernel()) {
        std::vector<double> grid;
        for (int i = 0; i <= 400; ++i) grid.push_back(0.1 * i);
        std::ostringstream os;
        write_band_csv(os, kernel_band(out.fit, grid, cfg.fit.confidence_level));
        write_file(cfg.output_dir / "bands" / "kernel.csv", os.str());
    }
    return out;
}

/// Re-renders the text report from a stored fit result.
inline std::string cmd_report(const RunConfig& cfg) {
    const auto path = cfg.output_dir / "fit_result.json";
    if (!fs::exists(path)) throw StageError("report: missing " + path.string() + "; run 'fit' first");
    const auto fit = fit_from_json(read_json(path));
    auto text = render_report(fit);
    write_file(cfg.output_dir / "report.txt", text);
    return text;
}

/// Run manifest; the only output carrying wall-clock timestamps.
inline void write_manifest(const RunConfig& cfg, const std::string& stage, const std::string& config_text,
                           std::chrono::system_clock::time_point started) {
    auto iso = [](std::chrono::system_clock::time_point tp) {
        const std::time_t tt = std::chrono::system_clock::to_time_t(tp);
        std::tm tm{};
        gmtime_r(&tt, &tm);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
        return std::string(buf);
    };
    const auto path = cfg.output_dir / "manifest.json";
    json m = fs::exists(path) ? read_json(path) : json::object();
    m["software_version"] = WAVEFIT_VERSION;
    m["config_hash"] = sha256_hex(config_text);
    m["data_hash"] = data_hash(cfg);
    m["inputs_hash"] = inputs_hash(cfg, m["data_hash"].get<std::string>());
    m["fit_config"] = fit_json(cfg.fit);
    m["rng"] = {{"algorithm", cfg.seed.rng_algorithm}, {"seed", cfg.seed.rng_seed}};
    m["stages"][stage] = {{"started", iso(started)}, {"finished", iso(std::chrono::system_clock::now())}};
    write_file(path, m.dump(2) + "\n");
}

} // namespace wavefit

#endif // WAVEFIT_PIPELINE_HPP
