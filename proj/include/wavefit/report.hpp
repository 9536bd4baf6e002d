#ifndef WAVEFIT_REPORT_HPP
#define WAVEFIT_REPORT_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavefit/gls.hpp"
#include "wavefit/seeder.hpp"
#include "wavefit/uncertainty.hpp"

namespace wavefit {

using json = nlohmann::json;

namespace detail {

inline std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", std::max(decimals, 0), v);
    std::string s = buf;
    if (s == "-0" || s.find_first_not_of("-0.") == std::string::npos) {
        if (!s.empty() && s[0] == '-') s.erase(0, 1);
    }
    return s;
}

inline std::string general(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

} // namespace detail

/// "value±sigma" with sigma rounded to two significant digits and the value
/// to the same decimal place. Large magnitudes get a common power-of-ten
/// factor, e.g. "(22.0±1.6)e6".
inline std::string format_uncertain(double value, double sigma) {
    if (!std::isfinite(value)) return "nan";
    if (!(sigma > 0.0) || !std::isfinite(sigma)) return detail::general(value, 6);
    const double big = std::max(std::abs(value), sigma);
    int exp3 = 0;
    if (big >= 1e4) exp3 = 3 * static_cast<int>(std::floor(std::log10(big) / 3.0));
    const double scale = std::pow(10.0, exp3);
    const double v = value / scale, s = sigma / scale;

    int e = static_cast<int>(std::floor(std::log10(s)));
    int decimals = 1 - e;
    const double rounded = std::round(s * std::pow(10.0, decimals)) / std::pow(10.0, decimals);
    if (rounded >= std::pow(10.0, e + 1)) decimals -= 1;
    std::string body;
    if (decimals >= 0) {
        body = detail::fixed(v, decimals) + "±" + detail::fixed(s, decimals);
    } else {
        const double unit = std::pow(10.0, -decimals);
        body = detail::fixed(std::round(v / unit) * unit, 0) + "±" + detail::fixed(std::round(s / unit) * unit, 0);
    }
    if (exp3 == 0) return body;
    return "(" + body + ")e" + std::to_string(exp3);
}

// ---------------------------------------------------------------------------
// Aligned text tables

class TextTable {
public:
    explicit TextTable(std::vector<std::string> header) : rows_{std::move(header)} {}

    void add(std::vector<std::string> row) {
        row.resize(rows_.front().size());
        rows_.push_back(std::move(row));
    }

    void rule() { rules_.push_back(rows_.size()); }

    void print(std::ostream& os) const {
        std::vector<std::size_t> width(rows_.front().size(), 0);
        for (const auto& r : rows_)
            for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], display_width(r[c]));
        std::size_t total = 0;
        for (auto w : width) total += w + 2;
        const std::string line(total, '-');
        os << line << "\n";
        for (std::size_t i = 0; i < rows_.size(); ++i) {
            if (std::find(rules_.begin(), rules_.end(), i) != rules_.end()) os << line << "\n";
            for (std::size_t c = 0; c < rows_[i].size(); ++c) {
                const auto& cell = rows_[i][c];
                const std::size_t pad = width[c] - display_width(cell);
                if (c == 0) os << cell << std::string(pad + 2, ' ');
                else os << std::string(pad, ' ') << cell << "  ";
            }
            os << "\n";
            if (i == 0) os << line << "\n";
        }
        os << line << "\n";
    }

private:
    // Counts code points, so "±" takes one column.
    static std::size_t display_width(const std::string& s) {
        std::size_t n = 0;
        for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
        return n;
    }

    std::vector<std::vector<std::string>> rows_;
    std::vector<std::size_t> rules_;
};

// ---------------------------------------------------------------------------
// Seed results

inline json to_json(const SeedResult& s) {
    json peaks = json::array();
    for (const auto& p : s.peaks) peaks.push_back({{"n", p.n}, {"lambda", p.lambda}, {"t0", p.t0}});
    return {{"peaks", peaks},
            {"c", s.bg.c},
            {"s", s.bg.s},
            {"chi2", s.chi2},
            {"ndf", s.ndf},
            {"prob", s.prob},
            {"rng_algorithm", s.rng_algorithm},
            {"rng_seed", s.rng_seed},
            {"trials", s.trials},
            {"warning", s.warning}};
}

inline SeedResult seed_from_json(const json& j) {
    SeedResult s;
    for (const auto& p : j.at("peaks"))
        s.peaks.push_back({p.at("n").get<double>(), p.at("lambda").get<double>(), p.at("t0").get<double>()});
    s.bg = {j.at("c").get<double>(), j.at("s").get<double>()};
    s.chi2 = j.at("chi2").get<double>();
    s.ndf = j.at("ndf").get<int>();
    s.prob = j.at("prob").get<double>();
    s.rng_algorithm = j.at("rng_algorithm").get<std::string>();
    s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    s.trials = j.at("trials").get<std::uint64_t>();
    s.warning = j.at("warning").get<bool>();
    return s;
}

/// Stage-1 table: one column per region.
inline void print_seed_table(std::ostream& os, const std::vector<std::string>& regions,
                             const std::vector<SeedResult>& seeds) {
    std::vector<std::string> header{"Parameter"};
    header.insert(header.end(), regions.begin(), regions.end());
    TextTable table(header);
    std::size_t max_peaks = 0;
    for (const auto& s : seeds) max_peaks = std::max(max_peaks, s.peaks.size());
    auto peak_rows = [&](const char* name, auto get) {
        for (std::size_t i = 0; i < max_peaks; ++i) {
            std::vector<std::string> row{i == 0 ? name : ""};
            for (const auto& s : seeds) row.push_back(i < s.peaks.size() ? detail::general(get(s.peaks[i]), 3) : "");
            table.add(row);
        }
    };
    peak_rows("N_c", [](const GompertzPeak& p) { return p.n; });
    peak_rows("lambda (1/d)", [](const GompertzPeak& p) { return p.lambda; });
    peak_rows("t0 (d)", [](const GompertzPeak& p) { return p.t0; });
    auto row = [&](const char* name, auto get) {
        std::vector<std::string> r{name};
        for (const auto& s : seeds) r.push_back(get(s));
        table.add(r);
    };
    row("C_c", [](const SeedResult& s) { return detail::general(s.bg.c, 3); });
    row("S_c (1/d)", [](const SeedResult& s) { return detail::general(s.bg.s, 3); });
    table.rule();
    row("chi2", [](const SeedResult& s) { return detail::general(s.chi2, 3); });
    row("N.D.F.", [](const SeedResult& s) { return std::to_string(s.ndf); });
    row("Prob (%)", [](const SeedResult& s) { return detail::general(100.0 * s.prob, 3); });
    table.print(os);
}

// ---------------------------------------------------------------------------
// Fit results

inline std::string_view to_string(AlphaDerivative m) { return m == AlphaDerivative::paper ? "paper" : "exact"; }

inline json models_json(const std::vector<RegionModel>& models) {
    json out = json::array();
    for (const auto& m : models) {
        json peaks = json::array();
        for (std::size_t i = 0; i < m.case_peaks.size(); ++i) {
            const auto& p = m.case_peaks[i];
            json pj{{"n_cases", p.n}, {"lambda", p.lambda}, {"t0", p.t0}};
            pj["n_deaths"] = m.death_norms[i] ? json(*m.death_norms[i]) : json(nullptr);
            peaks.push_back(pj);
        }
        out.push_back({{"region", m.region},
                       {"peaks", peaks},
                       {"bg_cases", {{"c", m.bg_cases.c}, {"s", m.bg_cases.s}}},
                       {"bg_deaths", {{"c", m.bg_deaths.c}, {"s", m.bg_deaths.s}}}});
    }
    return out;
}

inline std::vector<RegionModel> models_from_json(const json& j) {
    std::vector<RegionModel> out;
    for (const auto& mj : j) {
        RegionModel m;
        m.region = mj.at("region").get<std::string>();
        for (const auto& pj : mj.at("peaks")) {
            m.case_peaks.push_back(
                {pj.at("n_cases").get<double>(), pj.at("lambda").get<double>(), pj.at("t0").get<double>()});
            const auto& nd = pj.at("n_deaths");
            m.death_norms.push_back(nd.is_null() ? std::nullopt : std::optional<double>(nd.get<double>()));
        }
        m.bg_cases = {mj.at("bg_cases").at("c").get<double>(), mj.at("bg_cases").at("s").get<double>()};
        m.bg_deaths = {mj.at("bg_deaths").at("c").get<double>(), mj.at("bg_deaths").at("s").get<double>()};
        out.push_back(std::move(m));
    }
    return out;
}

/// Full machine-readable fit: ordering manifest, values, sigmas, dense
/// row-major covariance, goodness of fit and iteration trace.
inline json to_json(const FitResult& fit) {
    json params = json::array();
    for (std::size_t j = 0; j < fit.layout.size(); ++j) {
        const auto& s = fit.layout[j];
        params.push_back({{"index", j},
                          {"label", fit.layout.label(j)},
                          {"region", s.region >= 0 ? json(fit.layout.regions()[static_cast<std::size_t>(s.region)])
                                                   : json(nullptr)},
                          {"role", std::string(to_string(s.role))},
                          {"peak", s.peak >= 0 ? json(s.peak + 1) : json(nullptr)},
                          {"value", fit.values(static_cast<Eigen::Index>(j))},
                          {"sigma", fit.sigma(j)}});
    }
    std::vector<double> cov;
    cov.reserve(static_cast<std::size_t>(fit.covariance.size()));
    for (Eigen::Index r = 0; r < fit.covariance.rows(); ++r)
        for (Eigen::Index c = 0; c < fit.covariance.cols(); ++c) cov.push_back(fit.covariance(r, c));
    return {{"parameters", params},
            {"covariance", {{"order", "row-major"}, {"size", fit.layout.size()}, {"values", cov}}},
            {"models", models_json(fit.models)},
            {"kernel", {{"alpha", fit.kernel.alpha}, {"beta", fit.kernel.beta}}},
            {"fixed_kernel", fit.layout.fixed_kernel()},
            {"chi2", fit.chi2},
            {"ndf", fit.ndf},
            {"prob", fit.prob},
            {"iterations", fit.iterations},
            {"converged", fit.converged},
            {"delta_norm_trace", fit.delta_norm_trace},
            {"chi2_trace", fit.chi2_trace},
            {"settings",
             {{"quadrature_step", fit.settings.grid.step},
              {"convolution_lower", fit.settings.grid.lower},
              {"derivative_mode", std::string(to_string(fit.settings.alpha_mode))}}}};
}

inline FitResult fit_from_json(const json& j) {
    FitResult fit;
    fit.models = models_from_json(j.at("models"));
    fit.kernel = {j.at("kernel").at("alpha").get<double>(), j.at("kernel").at("beta").get<double>()};
    fit.layout = ParameterLayout(fit.models, j.at("fixed_kernel").get<bool>());
    const auto n = static_cast<Eigen::Index>(fit.layout.size());
    if (j.at("covariance").at("size").get<std::size_t>() != fit.layout.size())
        throw DataError("fit result: covariance size does not match the parameter layout");
    const auto cov = j.at("covariance").at("values").get<std::vector<double>>();
    if (cov.size() != static_cast<std::size_t>(n * n)) throw DataError("fit result: covariance has wrong length");
    fit.covariance.resize(n, n);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < n; ++c) fit.covariance(r, c) = cov[static_cast<std::size_t>(r * n + c)];
    fit.values = pack(fit.layout, fit.models, fit.kernel);
    fit.chi2 = j.at("chi2").get<double>();
    fit.ndf = j.at("ndf").get<int>();
    fit.prob = j.at("prob").get<double>();
    fit.iterations = j.at("iterations").get<int>();
    fit.converged = j.at("converged").get<bool>();
    fit.delta_norm_trace = j.at("delta_norm_trace").get<std::vector<double>>();
    fit.chi2_trace = j.at("chi2_trace").get<std::vector<double>>();
    const auto& st = j.at("settings");
    fit.settings.grid = {st.at("quadrature_step").get<double>(), st.at("convolution_lower").get<double>()};
    fit.settings.alpha_mode =
        st.at("derivative_mode").get<std::string>() == "exact" ? AlphaDerivative::exact : AlphaDerivative::paper;
    return fit;
}

inline json to_json(const CfrEstimate& e) {
    return {{"region", e.region},
            {"peak", e.peak ? json(*e.peak + 1) : json("combined")},
            {"value", e.value},
            {"sigma", e.sigma},
            {"indices", e.indices}};
}

inline json to_json(const KernelSummary& k) {
    return {{"alpha", k.alpha}, {"sigma_alpha", k.sigma_alpha}, {"beta", k.beta},   {"sigma_beta", k.sigma_beta},
            {"rho", k.rho},     {"mu", k.mu},                   {"sigma_mu", k.sigma_mu}, {"cv", k.cv},
            {"sigma_cv", k.sigma_cv}};
}

/// Death normalizations whose converged value is within z sigma of zero.
inline std::vector<std::string> zero_consistent_death_peaks(const FitResult& fit, double z = 1.96) {
    std::vector<std::string> out;
    for (std::size_t j = 0; j < fit.layout.size(); ++j) {
        if (fit.layout[j].role != Role::n_deaths) continue;
        if (std::abs(fit.values(static_cast<Eigen::Index>(j))) < z * fit.sigma(j)) out.push_back(fit.layout.label(j));
    }
    return out;
}

/// Structured report: parameters with sigmas, CFRs, kernel block, goodness of fit.
inline json report_json(const FitResult& fit) {
    json regions = json::array();
    for (std::size_t r = 0; r < fit.models.size(); ++r) {
        json params = json::array();
        for (std::size_t j = 0; j < fit.layout.size(); ++j) {
            if (fit.layout[j].region != static_cast<int>(r)) continue;
            params.push_back({{"label", fit.layout.label(j)},
                              {"value", fit.values(static_cast<Eigen::Index>(j))},
                              {"sigma", fit.sigma(j)}});
        }
        json cfrs = json::array();
        std::string cfr_error;
        try {
            for (const auto& e : region_cfrs(fit, static_cast<int>(r))) cfrs.push_back(to_json(e));
        } catch (const std::exception& e) {
            cfr_error = e.what();
        }
        json rj{{"region", fit.models[r].region}, {"parameters", params}, {"cfr", cfrs}};
        if (!cfr_error.empty()) rj["cfr_error"] = cfr_error;
        regions.push_back(rj);
    }
    json out{{"regions", regions},
             {"chi2", fit.chi2},
             {"ndf", fit.ndf},
             {"prob", fit.prob},
             {"iterations", fit.iterations},
             {"converged", fit.converged},
             {"death_peaks_consistent_with_zero", zero_consistent_death_peaks(fit)}};
    if (!fit.layout.fixed_kernel()) out["kernel"] = to_json(kernel_summary(fit));
    return out;
}

/// Human-readable fit report: one column per region, rows per parameter.
inline void print_fit_report(std::ostream& os, const FitResult& fit) {
    const auto& layout = fit.layout;
    std::vector<std::string> header{"Parameter"};
    for (const auto& m : fit.models) header.push_back(m.region);
    TextTable table(header);

    std::size_t max_peaks = 0;
    for (const auto& m : fit.models) max_peaks = std::max(max_peaks, m.case_peaks.size());
    auto cell = [&](int r, Role role, int peak) -> std::string {
        const auto j = layout.index_of(r, role, peak);
        if (!j) return "";
        return format_uncertain(fit.values(static_cast<Eigen::Index>(*j)), fit.sigma(*j));
    };
    auto peak_rows = [&](const char* name, Role role) {
        for (std::size_t i = 0; i < max_peaks; ++i) {
            std::vector<std::string> row{i == 0 ? name : ""};
            for (std::size_t r = 0; r < fit.models.size(); ++r)
                row.push_back(cell(static_cast<int>(r), role, static_cast<int>(i)));
            bool any = false;
            for (std::size_t c = 1; c < row.size(); ++c) any = any || !row[c].empty();
            if (any) table.add(row);
        }
    };
    auto region_row = [&](const char* name, Role role) {
        std::vector<std::string> row{name};
        for (std::size_t r = 0; r < fit.models.size(); ++r) row.push_back(cell(static_cast<int>(r), role, -1));
        table.add(row);
    };
    peak_rows("N_c", Role::n_cases);
    peak_rows("lambda (1/d)", Role::lambda);
    peak_rows("t0 (d)", Role::t0);
    region_row("C_c", Role::c_cases);
    region_row("S_c (1/d)", Role::s_cases);
    peak_rows("N_d", Role::n_deaths);
    region_row("C_d", Role::c_deaths);
    region_row("S_d (1/d)", Role::s_deaths);

    std::vector<std::vector<CfrEstimate>> cfrs(fit.models.size());
    std::vector<std::string> cfr_errors;
    std::size_t max_cfr = 0;
    for (std::size_t r = 0; r < fit.models.size(); ++r) {
        try {
            cfrs[r] = region_cfrs(fit, static_cast<int>(r));
        } catch (const std::exception& e) {
            cfr_errors.push_back(fit.models[r].region + ": " + e.what());
        }
        max_cfr = std::max(max_cfr, cfrs[r].size());
    }
    for (std::size_t i = 0; i < max_cfr; ++i) {
        std::vector<std::string> row{i == 0 ? "CFR (%)" : ""};
        for (const auto& list : cfrs) {
            if (i >= list.size()) {
                row.push_back("");
                continue;
            }
            const auto& e = list[i];
            row.push_back(format_uncertain(100.0 * e.value, 100.0 * e.sigma) + (e.peak ? "" : " comb."));
        }
        table.add(row);
    }

    table.rule();
    auto shared = [&](const char* name, const std::string& value) {
        std::vector<std::string> row{name, value};
        table.add(row);
    };
    if (!layout.fixed_kernel()) {
        const auto k = kernel_summary(fit);
        shared("alpha", format_uncertain(k.alpha, k.sigma_alpha));
        shared("beta (1/d)", format_uncertain(k.beta, k.sigma_beta));
        shared("mu (d)", format_uncertain(k.mu, k.sigma_mu));
        shared("CV", format_uncertain(k.cv, k.sigma_cv));
        shared("rho(alpha,beta)", detail::fixed(k.rho, 3));
    }
    shared("chi2", detail::fixed(fit.chi2, 1));
    shared("N.D.F.", std::to_string(fit.ndf));
    shared("Prob (%)", detail::fixed(100.0 * fit.prob, 1));
    table.print(os);

    os << "iterations: " << fit.iterations << (fit.converged ? " (converged)" : " (NOT converged)") << "\n";
    os << "derivative mode: " << to_string(fit.settings.alpha_mode) << ", quadrature step: "
       << detail::general(fit.settings.grid.step, 6) << " d\n";
    for (const auto& label : zero_consistent_death_peaks(fit)) os << "note: " << label << " is consistent with zero\n";
    for (const auto& err : cfr_errors) os << "CFR unavailable for " << err << "\n";
}

/// Band rows for external plotting: t, center, lower, upper.
inline void write_band_csv(std::ostream& os, const Band& band) {
    os << "t,center,lower,upper\n";
    char buf[160];
    for (std::size_t i = 0; i < band.t.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.10g\n", band.t[i], band.center[i],
                      band.center[i] - band.half_width[i], band.center[i] + band.half_width[i]);
        os << buf;
    }
}

} // namespace wavefit

#endif // WAVEFIT_REPORT_HPP
