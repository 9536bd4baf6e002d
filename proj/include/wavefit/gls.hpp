#ifndef WAVEFIT_GLS_HPP
#define WAVEFIT_GLS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "wavefit/errors.hpp"
#include "wavefit/seeder.hpp"
#include "wavefit/timeseries.hpp"
#include "wavefit/wave_model.hpp"

namespace wavefit {

// ---------------------------------------------------------------------------
// Parameter ordering

enum class Role { n_cases, c_cases, s_cases, n_deaths, c_deaths, s_deaths, t0, lambda, alpha, beta };

inline std::string_view to_string(Role r) {
    switch (r) {
    case Role::n_cases: return "N_c";
    case Role::c_cases: return "C_c";
    case Role::s_cases: return "S_c";
    case Role::n_deaths: return "N_d";
    case Role::c_deaths: return "C_d";
    case Role::s_deaths: return "S_d";
    case Role::t0: return "t0";
    case Role::lambda: return "lambda";
    case Role::alpha: return "alpha";
    case Role::beta: return "beta";
    }
    return "?";
}

/// Parameters whose column enters the linearized model as a Taylor delta.
inline bool is_nonlinear(Role r) { return r == Role::t0 || r == Role::lambda || r == Role::alpha || r == Role::beta; }

struct ParameterSlot {
    int region = -1; // -1 for the shared kernel
    Role role = Role::n_cases;
    int peak = -1;   // -1 for per-region and shared parameters
};

/// Ordering manifest. For each region, in order: N_c per peak, C_c, S_c,
/// N_d per retained death peak, C_d, S_d, then (t0, lambda) per peak;
/// finally the shared alpha, beta (omitted with a fixed kernel).
class ParameterLayout {
public:
    ParameterLayout() = default;

    ParameterLayout(std::span<const RegionModel> models, bool fixed_kernel) : fixed_kernel_(fixed_kernel) {
        for (std::size_t r = 0; r < models.size(); ++r) {
            validate(models[r]);
            const int ri = static_cast<int>(r);
            const int np = static_cast<int>(models[r].case_peaks.size());
            regions_.push_back(models[r].region);
            for (int i = 0; i < np; ++i) add({ri, Role::n_cases, i});
            add({ri, Role::c_cases, -1});
            add({ri, Role::s_cases, -1});
            for (int i = 0; i < np; ++i)
                if (models[r].death_norms[static_cast<std::size_t>(i)]) add({ri, Role::n_deaths, i});
            add({ri, Role::c_deaths, -1});
            add({ri, Role::s_deaths, -1});
            for (int i = 0; i < np; ++i) {
                add({ri, Role::t0, i});
                add({ri, Role::lambda, i});
            }
        }
        if (!fixed_kernel) {
            add({-1, Role::alpha, -1});
            add({-1, Role::beta, -1});
        }
    }

    std::size_t size() const { return slots_.size(); }
    const std::vector<ParameterSlot>& slots() const { return slots_; }
    const ParameterSlot& operator[](std::size_t j) const { return slots_[j]; }
    bool fixed_kernel() const { return fixed_kernel_; }
    const std::vector<std::string>& regions() const { return regions_; }

    std::optional<std::size_t> index_of(int region, Role role, int peak = -1) const {
        for (std::size_t j = 0; j < slots_.size(); ++j) {
            const auto& s = slots_[j];
            if (s.region == region && s.role == role && s.peak == peak) return j;
        }
        return std::nullopt;
    }

    std::size_t require(int region, Role role, int peak = -1) const {
        if (auto j = index_of(region, role, peak)) return *j;
        throw ConfigError("parameter " + std::string(to_string(role)) + " not present in layout");
    }

    std::string label(std::size_t j) const {
        const auto& s = slots_[j];
        std::string out = s.region >= 0 ? regions_[static_cast<std::size_t>(s.region)] + "." : std::string{};
        out += to_string(s.role);
        if (s.peak >= 0) out += "[" + std::to_string(s.peak + 1) + "]";
        return out;
    }

    std::vector<std::string> labels() const {
        std::vector<std::string> out;
        for (std::size_t j = 0; j < size(); ++j) out.push_back(label(j));
        return out;
    }

private:
    void add(ParameterSlot s) { slots_.push_back(s); }

    std::vector<ParameterSlot> slots_;
    std::vector<std::string> regions_;
    bool fixed_kernel_ = false;
};

/// Reads the current model values in layout order (nonlinear slots hold t0,
/// lambda, alpha, beta themselves).
inline Eigen::VectorXd pack(const ParameterLayout& layout, std::span<const RegionModel> models,
                            const GammaKernel& kernel) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(layout.size()));
    for (std::size_t j = 0; j < layout.size(); ++j) {
        const auto& s = layout[j];
        const auto idx = static_cast<Eigen::Index>(j);
        if (s.region < 0) {
            v(idx) = s.role == Role::alpha ? kernel.alpha : kernel.beta;
            continue;
        }
        const auto& m = models[static_cast<std::size_t>(s.region)];
        const auto pk = static_cast<std::size_t>(std::max(s.peak, 0));
        switch (s.role) {
        case Role::n_cases: v(idx) = m.case_peaks[pk].n; break;
        case Role::c_cases: v(idx) = m.bg_cases.c; break;
        case Role::s_cases: v(idx) = m.bg_cases.s; break;
        case Role::n_deaths: v(idx) = *m.death_norms[pk]; break;
        case Role::c_deaths: v(idx) = m.bg_deaths.c; break;
        case Role::s_deaths: v(idx) = m.bg_deaths.s; break;
        case Role::t0: v(idx) = m.case_peaks[pk].t0; break;
        case Role::lambda: v(idx) = m.case_peaks[pk].lambda; break;
        default: break;
        }
    }
    return v;
}

inline void unpack(const ParameterLayout& layout, const Eigen::VectorXd& v, std::vector<RegionModel>& models,
                   GammaKernel& kernel) {
    for (std::size_t j = 0; j < layout.size(); ++j) {
        const auto& s = layout[j];
        const double x = v(static_cast<Eigen::Index>(j));
        if (s.region < 0) {
            (s.role == Role::alpha ? kernel.alpha : kernel.beta) = x;
            continue;
        }
        auto& m = models[static_cast<std::size_t>(s.region)];
        const auto pk = static_cast<std::size_t>(std::max(s.peak, 0));
        switch (s.role) {
        case Role::n_cases: m.case_peaks[pk].n = x; break;
        case Role::c_cases: m.bg_cases.c = x; break;
        case Role::s_cases: m.bg_cases.s = x; break;
        case Role::n_deaths: m.death_norms[pk] = x; break;
        case Role::c_deaths: m.bg_deaths.c = x; break;
        case Role::s_deaths: m.bg_deaths.s = x; break;
        case Role::t0: m.case_peaks[pk].t0 = x; break;
        case Role::lambda: m.case_peaks[pk].lambda = x; break;
        default: break;
        }
    }
}

// ---------------------------------------------------------------------------
// Design matrix

/// Observed weekly series of one region, both on the region day axis.
struct RegionData {
    WeeklySeries cases;
    WeeklySeries deaths;
};

struct ModelSettings {
    QuadratureGrid grid;
    AlphaDerivative alpha_mode = AlphaDerivative::paper;
};

/// Writes d F / d P_j for one observation row into `row` (length = layout
/// size, assumed zeroed) and returns the model value F(t). Linear columns
/// hold basis functions; nonlinear columns hold the Taylor coefficient
/// functions multiplied by the current normalization.
inline double design_row(const ParameterLayout& layout, int region, const RegionModel& m,
                         const GammaKernel& kernel, Metric metric, double t, const ModelSettings& settings,
                         Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row) {
    auto put = [&](Role role, int peak, double value) {
        if (auto j = layout.index_of(region, role, peak)) row(static_cast<Eigen::Index>(*j)) += value;
    };
    auto put_shared = [&](Role role, double value) {
        if (auto j = layout.index_of(-1, role)) row(static_cast<Eigen::Index>(*j)) += value;
    };

    double value = 0.0;
    if (metric == Metric::cases) {
        value = m.bg_cases(t);
        put(Role::c_cases, -1, 1.0);
        put(Role::s_cases, -1, t);
        for (std::size_t i = 0; i < m.case_peaks.size(); ++i) {
            const auto& p = m.case_peaks[i];
            const int pi = static_cast<int>(i);
            const double f = gompertz_rate(t, p.t0, p.lambda);
            const auto d = partials_cases(t, p.t0, p.lambda);
            value += p.n * f;
            put(Role::n_cases, pi, f);
            put(Role::t0, pi, p.n * d.d_t0);
            put(Role::lambda, pi, p.n * d.d_lambda);
        }
        return value;
    }

    value = m.bg_deaths(t);
    put(Role::c_deaths, -1, 1.0);
    put(Role::s_deaths, -1, t);
    for (std::size_t i = 0; i < m.case_peaks.size(); ++i) {
        if (!m.death_norms[i]) continue;
        const auto& p = m.case_peaks[i];
        const int pi = static_cast<int>(i);
        const double nd = *m.death_norms[i];
        const auto d = partials_deaths(t, p.t0, p.lambda, kernel, settings.grid, settings.alpha_mode);
        value += nd * d.value;
        put(Role::n_deaths, pi, d.value);
        put(Role::t0, pi, nd * d.d_t0);
        put(Role::lambda, pi, nd * d.d_lambda);
        put_shared(Role::alpha, nd * d.d_alpha);
        put_shared(Role::beta, nd * d.d_beta);
    }
    return value;
}

/// Stacked linearized system: rows region by region, cases then deaths.
struct DesignSystem {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
    Eigen::VectorXd variance; // diagonal of V
    Eigen::VectorXd model;    // F at the current parameters
};

inline std::size_t count_rows(std::span<const RegionData> data) {
    std::size_t n = 0;
    for (const auto& d : data) n += d.cases.points.size() + d.deaths.points.size();
    return n;
}

inline DesignSystem build_design(const ParameterLayout& layout, std::span<const RegionModel> models,
                                 const GammaKernel& kernel, std::span<const RegionData> data,
                                 const ModelSettings& settings) {
    if (models.size() != data.size() || layout.regions().size() != models.size())
        throw ConfigError("design: " + std::to_string(models.size()) + " models, " + std::to_string(data.size()) +
                          " data blocks, layout for " + std::to_string(layout.regions().size()) + " regions");
    for (std::size_t r = 0; r < models.size(); ++r) {
        if (models[r].region != layout.regions()[r])
            throw ConfigError("design: region order differs from layout at " + models[r].region);
        const std::size_t expected_nd = models[r].retained_deaths();
        std::size_t nd_cols = 0;
        for (const auto& s : layout.slots()) nd_cols += (s.region == static_cast<int>(r) && s.role == Role::n_deaths);
        if (nd_cols != expected_nd) throw ConfigError("design: death peaks of " + models[r].region + " differ from layout");
    }

    const auto n = static_cast<Eigen::Index>(count_rows(data));
    const auto p = static_cast<Eigen::Index>(layout.size());
    DesignSystem sys{Eigen::MatrixXd::Zero(n, p), Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(n)};
    Eigen::Index row = 0;
    for (std::size_t r = 0; r < models.size(); ++r) {
        for (const auto* series : {&data[r].cases, &data[r].deaths}) {
            for (const auto& pt : series->points) {
                if (!(pt.sigma > 0.0)) throw DataError("non-positive sigma in " + series->region);
                sys.model(row) = design_row(layout, static_cast<int>(r), models[r], kernel, series->metric, pt.t,
                                            settings, sys.x.row(row));
                sys.y(row) = pt.y;
                sys.variance(row) = pt.sigma * pt.sigma;
                ++row;
            }
        }
    }
    return sys;
}

// ---------------------------------------------------------------------------
// Weighted least squares

struct GlsSolution {
    Eigen::VectorXd b;
    Eigen::MatrixXd cov;
    double chi2 = 0.0;
    double condition = 0.0;
};

inline constexpr double kMaxCondition = 1e12;

/// Minimizes (Y - X B)^T V^{-1} (Y - X B) for diagonal V. Columns are scaled
/// to unit weighted norm and factored by Householder QR; the condition
/// estimate is that of the scaled normal matrix.
inline GlsSolution solve_gls(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& variance,
                             const std::vector<std::string>& labels = {}) {
    const auto n = x.rows();
    const auto p = x.cols();
    if (y.size() != n || variance.size() != n) throw ConfigError("solve_gls: dimension mismatch");
    if (p == 0) throw ConfigError("solve_gls: no parameters");
    if (n < p) throw NumericalError("solve_gls: fewer observations than parameters");
    if ((variance.array() <= 0.0).any() || !variance.allFinite()) throw DataError("solve_gls: V must be strictly positive");

    const Eigen::VectorXd w = variance.cwiseSqrt().cwiseInverse();
    Eigen::MatrixXd xw = w.asDiagonal() * x;
    const Eigen::VectorXd yw = w.cwiseProduct(y);
    Eigen::VectorXd scale = xw.colwise().norm().transpose();

    auto name = [&](Eigen::Index j) {
        return j < static_cast<Eigen::Index>(labels.size()) ? labels[static_cast<std::size_t>(j)]
                                                            : "column " + std::to_string(j);
    };
    for (Eigen::Index j = 0; j < p; ++j) {
        if (!(scale(j) > 0.0) || !std::isfinite(scale(j)))
            throw NumericalError("solve_gls: column " + name(j) + " is identically zero or non-finite");
    }
    xw = xw * scale.cwiseInverse().asDiagonal();

    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(xw);
    const Eigen::MatrixXd r = qr.matrixQR().topRows(p).triangularView<Eigen::Upper>();
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(r);
    const auto& sv = svd.singularValues();
    const double cond = sv(p - 1) > 0.0 ? (sv(0) / sv(p - 1)) * (sv(0) / sv(p - 1))
                                        : std::numeric_limits<double>::infinity();
    if (!(cond <= kMaxCondition)) {
        const Eigen::MatrixXd corr = xw.transpose() * xw;
        Eigen::Index bi = 0, bj = 1;
        double best = -1.0;
        for (Eigen::Index i = 0; i < p; ++i)
            for (Eigen::Index j = i + 1; j < p; ++j)
                if (std::abs(corr(i, j)) > best) {
                    best = std::abs(corr(i, j));
                    bi = i;
                    bj = j;
                }
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.3g", cond);
        throw NumericalError(std::string("solve_gls: normal matrix ill-conditioned (condition ") + buf +
                             "); most collinear columns: " + name(bi) + " and " + name(bj));
    }

    const Eigen::VectorXd qty = (qr.householderQ().transpose() * yw).head(p);
    const auto tri = r.triangularView<Eigen::Upper>();
    const Eigen::VectorXd bs = tri.solve(qty);
    const Eigen::MatrixXd rinv = tri.solve(Eigen::MatrixXd::Identity(p, p));
    Eigen::MatrixXd cov_s = rinv * rinv.transpose();

    GlsSolution out;
    out.b = bs.cwiseQuotient(scale);
    out.cov = scale.cwiseInverse().asDiagonal() * cov_s * scale.cwiseInverse().asDiagonal();
    out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
    const Eigen::VectorXd resid = w.cwiseProduct(y - x * out.b);
    out.chi2 = resid.squaredNorm();
    out.condition = cond;
    return out;
}

// ---------------------------------------------------------------------------
// Iterated linearization

struct FitOptions {
    double tol = 1e-8;
    int max_iter = 100;
    ModelSettings model;
    bool fixed_kernel = false;
    int divergence_window = 5;
    int max_halvings = 20;
};

struct FitResult {
    ParameterLayout layout;
    std::vector<RegionModel> models;
    GammaKernel kernel;
    Eigen::VectorXd values;     // layout order; nonlinear slots hold t0, lambda, alpha, beta
    Eigen::MatrixXd covariance; // Vb from the last linearization
    double chi2 = 0.0;
    int ndf = 0;
    double prob = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> delta_norm_trace; // max relative delta per iteration
    std::vector<double> chi2_trace;       // nonlinear chi2 after each fold-in
    ModelSettings settings;

    double sigma(std::size_t j) const {
        return std::sqrt(std::max(0.0, covariance(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j))));
    }
};

/// chi2 of the nonlinear model at the given parameters.
inline double model_chi2(std::span<const RegionModel> models, const GammaKernel& kernel,
                         std::span<const RegionData> data, const ModelSettings& settings) {
    double chi2 = 0.0;
    for (std::size_t r = 0; r < models.size(); ++r) {
        for (const auto& p : data[r].cases.points) {
            const double z = (cases_curve(models[r], p.t) - p.y) / p.sigma;
            chi2 += z * z;
        }
        for (const auto& p : data[r].deaths.points) {
            const double z = (deaths_curve(models[r], kernel, p.t, settings.grid) - p.y) / p.sigma;
            chi2 += z * z;
        }
    }
    return chi2;
}

/// Solves for the linear parameters only (N_c, C_c, S_c, N_d, C_d, S_d)
/// with timing and kernel held fixed, and writes them into `models`.
inline GlsSolution linear_solve(std::vector<RegionModel>& models, const GammaKernel& kernel,
                                std::span<const RegionData> data, const ModelSettings& settings) {
    // Death normalizations must be non-zero placeholders while building the
    // layout; their values do not enter the linear columns.
    const ParameterLayout layout(models, true);
    const auto sys = build_design(layout, models, kernel, data, settings);
    std::vector<Eigen::Index> keep;
    std::vector<std::string> names;
    for (std::size_t j = 0; j < layout.size(); ++j) {
        if (!is_nonlinear(layout[j].role)) {
            keep.push_back(static_cast<Eigen::Index>(j));
            names.push_back(layout.label(j));
        }
    }
    Eigen::MatrixXd x(sys.x.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = sys.x.col(keep[k]);
    auto sol = solve_gls(x, sys.y, sys.variance, names);

    Eigen::VectorXd full = pack(layout, models, kernel);
    for (std::size_t k = 0; k < keep.size(); ++k) full(keep[k]) = sol.b(static_cast<Eigen::Index>(k));
    GammaKernel unused = kernel;
    unpack(layout, full, models, unused);
    return sol;
}

/// Seeds a region model from a stage-1 result: case peaks and backgrounds
/// from the seed, death normalizations set to 1 for retained peaks.
inline RegionModel model_from_seed(const std::string& region, const SeedResult& seed,
                                   const std::vector<bool>& dropped_deaths = {}) {
    RegionModel m;
    m.region = region;
    m.case_peaks = seed.peaks;
    m.bg_cases = seed.bg;
    for (std::size_t i = 0; i < seed.peaks.size(); ++i) {
        const bool dropped = i < dropped_deaths.size() && dropped_deaths[i];
        m.death_norms.push_back(dropped ? std::nullopt : std::optional<double>(1.0));
    }
    return m;
}

/// Gauss-Newton iteration of the stacked GLS problem. Each step re-solves
/// all linear parameters jointly with the Taylor deltas of (t0, lambda,
/// alpha, beta), folds the deltas in and rebuilds the design, until the
/// largest relative delta drops below `tol`.
inline FitResult iterate_fit(std::vector<RegionModel> models, std::span<const RegionData> data,
                             GammaKernel kernel, const FitOptions& options) {
    if (!(kernel.alpha > 0.0) || !(kernel.beta > 0.0)) throw ConfigError("kernel_init: alpha and beta must be positive");
    if (models.size() != data.size()) throw ConfigError("iterate_fit: models and data differ in length");
    for (const auto& m : models) validate(m);

    linear_solve(models, kernel, data, options.model);

    FitResult res;
    res.layout = ParameterLayout(models, options.fixed_kernel);
    res.settings = options.model;
    const auto labels = res.layout.labels();
    const auto n_rows = static_cast<int>(count_rows(data));
    res.ndf = n_rows - static_cast<int>(res.layout.size());

    double prev_chi2 = model_chi2(models, kernel, data, options.model);
    int increases = 0;
    for (int iter = 1; iter <= options.max_iter; ++iter) {
        const auto sys = build_design(res.layout, models, kernel, data, options.model);
        const auto sol = solve_gls(sys.x, sys.y, sys.variance, labels);
        const Eigen::VectorXd current = pack(res.layout, models, kernel);

        Eigen::VectorXd delta = Eigen::VectorXd::Zero(current.size());
        double max_rel = 0.0;
        for (std::size_t j = 0; j < res.layout.size(); ++j) {
            if (!is_nonlinear(res.layout[j].role)) continue;
            const auto idx = static_cast<Eigen::Index>(j);
            delta(idx) = sol.b(idx);
            max_rel = std::max(max_rel, std::abs(delta(idx)) / std::max(std::abs(current(idx)), 1e-12));
        }

        Eigen::VectorXd next = current;
        double step = 1.0;
        for (int halving = 0;; ++halving) {
            bool valid = true;
            for (std::size_t j = 0; j < res.layout.size(); ++j) {
                const auto idx = static_cast<Eigen::Index>(j);
                const Role role = res.layout[j].role;
                if (is_nonlinear(role)) {
                    next(idx) = current(idx) + step * delta(idx);
                    if (role != Role::t0 && !(next(idx) > 0.0)) valid = false;
                } else {
                    next(idx) = sol.b(idx);
                }
            }
            if (valid) break;
            if (halving >= options.max_halvings)
                throw NumericalError("iterate_fit: a rate or kernel parameter stays non-positive after " +
                                     std::to_string(options.max_halvings) + " step halvings (iteration " +
                                     std::to_string(iter) + ")");
            step *= 0.5;
        }
        unpack(res.layout, next, models, kernel);

        const double chi2 = model_chi2(models, kernel, data, options.model);
        res.delta_norm_trace.push_back(max_rel);
        res.chi2_trace.push_back(chi2);
        res.iterations = iter;
        res.covariance = sol.cov;

        if (max_rel < options.tol) {
            res.converged = true;
            break;
        }
        increases = chi2 > prev_chi2 ? increases + 1 : 0;
        if (increases >= options.divergence_window) {
            std::string trace;
            for (double c : res.chi2_trace) trace += " " + std::to_string(c);
            throw NumericalError("iterate_fit: chi2 increased " + std::to_string(increases) +
                                 " consecutive iterations; chi2 trace:" + trace);
        }
        prev_chi2 = chi2;
    }

    res.models = models;
    res.kernel = kernel;
    res.values = pack(res.layout, models, kernel);
    res.chi2 = model_chi2(models, kernel, data, options.model);
    res.prob = res.ndf >= 1 ? chi2_prob(res.chi2, res.ndf) : 0.0;
    return res;
}

} // namespace wavefit

#endif // WAVEFIT_GLS_HPP
