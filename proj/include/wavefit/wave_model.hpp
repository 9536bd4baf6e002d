#ifndef WAVEFIT_WAVE_MODEL_HPP
#define WAVEFIT_WAVE_MODEL_HPP

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>

namespace wavefit {

/// Exponent arguments below this are treated as exact underflow.
inline constexpr double kUnderflowExponent = -700.0;

/// One Gompertz-derivative wave: asymptotic total `n`, growth rate `lambda`
/// (1/day) and inflection day `t0` on the region axis.
struct GompertzPeak {
    double n = 0.0;
    double lambda = 0.0;
    double t0 = 0.0;
};

struct LinearBackground {
    double c = 0.0; // counts/day
    double s = 0.0; // counts/day^2

    double operator()(double t) const { return c + s * t; }
};

/// Gamma-distributed case-to-death delay; `beta` is a rate (1/day).
struct GammaKernel {
    double alpha = 0.0;
    double beta = 0.0;

    double mean() const { return alpha / beta; }
    double cv() const { return 1.0 / std::sqrt(alpha); }
};

/// Which derivative of the kernel w.r.t. its shape is used in the
/// linearized fit. `paper` uses ln(beta) - ln(alpha) + ln(u); `exact` uses
/// ln(beta) - digamma(alpha) + ln(u).
enum class AlphaDerivative { paper, exact };

/// Fixed-step composite trapezoid used for every convolution integral.
/// `lower` is the lower integration limit on the region day axis.
struct QuadratureGrid {
    double step = 0.25;
    double lower = -60.0;
};

/// Normalized Gompertz derivative lambda * exp(-e^{-x}) * e^{-x}, x = lambda (t - t0).
inline double gompertz_rate(double t, double t0, double lambda) {
    const double x = lambda * (t - t0);
    if (-x > -kUnderflowExponent) return 0.0;
    const double e = std::exp(-x);
    const double exponent = -x - e;
    return exponent < kUnderflowExponent ? 0.0 : lambda * std::exp(exponent);
}

/// Cumulative of gompertz_rate: exp(-e^{-lambda (t - t0)}).
inline double gompertz_cdf(double t, double t0, double lambda) {
    const double x = lambda * (t - t0);
    if (-x > -kUnderflowExponent) return 0.0;
    return std::exp(-std::exp(-x));
}

struct CasePartials {
    double d_t0 = 0.0;
    double d_lambda = 0.0;
};

/// Partial derivatives of gompertz_rate w.r.t. t0 and lambda:
/// f lambda h and f (1/lambda - (t - t0) h), with h = 1 - e^{-lambda (t - t0)}.
inline CasePartials partials_cases(double t, double t0, double lambda) {
    const double f = gompertz_rate(t, t0, lambda);
    if (f == 0.0) return {};
    const double h = -std::expm1(-lambda * (t - t0));
    return {f * lambda * h, f * (1.0 / lambda - (t - t0) * h)};
}

namespace detail {

struct GammaLogTerms {
    double log_norm; // alpha ln beta - lgamma(alpha)

    explicit GammaLogTerms(const GammaKernel& k) : log_norm(k.alpha * std::log(k.beta) - std::lgamma(k.alpha)) {}
};

inline double gamma_pdf_positive(double u, double log_u, const GammaKernel& k, const GammaLogTerms& terms) {
    const double exponent = terms.log_norm + (k.alpha - 1.0) * log_u - k.beta * u;
    return exponent < kUnderflowExponent ? 0.0 : std::exp(exponent);
}

} // namespace detail

/// Gamma density beta^alpha u^(alpha-1) e^(-beta u) / Gamma(alpha).
inline double gamma_pdf(double u, const GammaKernel& k) {
    if (u < 0.0) throw std::domain_error("gamma_pdf: negative delay");
    if (!(k.alpha > 0.0) || !(k.beta > 0.0)) throw std::domain_error("gamma_pdf: alpha and beta must be positive");
    if (u == 0.0) {
        if (k.alpha > 1.0) return 0.0;
        if (k.alpha == 1.0) return k.beta;
        return HUGE_VAL;
    }
    return detail::gamma_pdf_positive(u, std::log(u), k, detail::GammaLogTerms{k});
}

/// Value and first derivatives of a convolved (death) peak shape.
struct DeathPartials {
    double value = 0.0;
    double d_t0 = 0.0;
    double d_lambda = 0.0;
    double d_alpha = 0.0;
    double d_beta = 0.0;
};

namespace detail {

/// Visits the trapezoid nodes of integral_{lower}^{t} g(tau) dtau in the
/// delay variable u = t - tau, calling fn(u, tau, weight). The node at u = 0
/// is always included; a shorter final panel closes the interval exactly.
template <typename Fn>
void for_each_delay_node(double t, const QuadratureGrid& grid, Fn&& fn) {
    const double width = t - grid.lower;
    if (!(width > 0.0)) return;
    const double h = grid.step;
    const auto full = static_cast<long>(std::floor(width / h + 1e-9));
    const double rest = width - static_cast<double>(full) * h;
    const bool partial = rest > 1e-9 * h;
    for (long k = 0; k <= full; ++k) {
        const double u = static_cast<double>(k) * h;
        double w = h;
        if (k == 0) w = 0.5 * h;
        if (k == full) w = partial ? 0.5 * (h + rest) : 0.5 * h;
        if (full == 0) w = partial ? 0.5 * rest : 0.0;
        fn(u, t - u, w);
    }
    if (partial) fn(width, grid.lower, 0.5 * rest);
}

} // namespace detail

/// Convolution of gompertz_rate(., t0, lambda) with the delay kernel, evaluated at t.
inline double death_shape(double t, double t0, double lambda, const GammaKernel& kernel,
                          const QuadratureGrid& grid = {}) {
    const detail::GammaLogTerms terms{kernel};
    double sum = 0.0;
    detail::for_each_delay_node(t, grid, [&](double u, double tau, double w) {
        if (u == 0.0) {
            if (kernel.alpha != 1.0) return; // G(0) = 0 for alpha > 1; integrable singularity otherwise
            sum += w * gompertz_rate(tau, t0, lambda) * kernel.beta;
            return;
        }
        const double f = gompertz_rate(tau, t0, lambda);
        if (f == 0.0) return;
        sum += w * f * detail::gamma_pdf_positive(u, std::log(u), kernel, terms);
    });
    return sum;
}

/// The convolution and its four parameter derivatives, all on the same
/// trapezoid nodes as death_shape. The alpha-derivative integrand at u = 0
/// is taken as 0 (removable for alpha > 1).
inline DeathPartials partials_deaths(double t, double t0, double lambda, const GammaKernel& kernel,
                                     const QuadratureGrid& grid = {},
                                     AlphaDerivative mode = AlphaDerivative::paper) {
    const detail::GammaLogTerms terms{kernel};
    const double log_beta = std::log(kernel.beta);
    const double shape_term = mode == AlphaDerivative::exact ? boost::math::digamma(kernel.alpha)
                                                             : std::log(kernel.alpha);
    const double mean = kernel.alpha / kernel.beta;
    DeathPartials out;
    detail::for_each_delay_node(t, grid, [&](double u, double tau, double w) {
        const double f = gompertz_rate(tau, t0, lambda);
        if (f == 0.0) return;
        if (u == 0.0) {
            if (kernel.alpha != 1.0) return;
            const double g = kernel.beta;
            const double h = -std::expm1(-lambda * (tau - t0));
            out.value += w * f * g;
            out.d_t0 += w * f * lambda * h * g;
            out.d_lambda += w * f * (1.0 / lambda - (tau - t0) * h) * g;
            out.d_beta += w * f * mean * g;
            return;
        }
        const double log_u = std::log(u);
        const double g = detail::gamma_pdf_positive(u, log_u, kernel, terms);
        if (g == 0.0) return;
        const double h = -std::expm1(-lambda * (tau - t0));
        const double fg = w * f * g;
        out.value += fg;
        out.d_t0 += fg * lambda * h;
        out.d_lambda += fg * (1.0 / lambda - (tau - t0) * h);
        out.d_alpha += fg * (log_beta - shape_term + log_u);
        out.d_beta += fg * (mean - u);
    });
    return out;
}

/// Per-region model: case peaks, one optional death normalization per case
/// peak (nullopt = peak dropped from the deaths curve), and two backgrounds.
/// Death peak i reuses t0 and lambda of case peak i. The delay kernel is
/// shared across regions and passed separately.
struct RegionModel {
    std::string region;
    std::vector<GompertzPeak> case_peaks;
    std::vector<std::optional<double>> death_norms;
    LinearBackground bg_cases;
    LinearBackground bg_deaths;

    std::size_t retained_deaths() const {
        std::size_t n = 0;
        for (const auto& d : death_norms) n += d.has_value();
        return n;
    }
};

inline void validate(const RegionModel& m) {
    if (m.case_peaks.empty()) throw std::invalid_argument(m.region + ": at least one case peak is required");
    if (m.death_norms.size() != m.case_peaks.size())
        throw std::invalid_argument(m.region + ": one death normalization slot per case peak is required");
    for (const auto& p : m.case_peaks) {
        if (!(p.lambda > 0.0) || !std::isfinite(p.t0) || !std::isfinite(p.n))
            throw std::invalid_argument(m.region + ": invalid case peak");
    }
}

inline double cases_curve(const RegionModel& m, double t) {
    double sum = m.bg_cases(t);
    for (const auto& p : m.case_peaks) sum += p.n * gompertz_rate(t, p.t0, p.lambda);
    return sum;
}

inline double deaths_curve(const RegionModel& m, const GammaKernel& kernel, double t,
                           const QuadratureGrid& grid = {}) {
    double sum = m.bg_deaths(t);
    for (std::size_t i = 0; i < m.case_peaks.size(); ++i) {
        if (!m.death_norms[i]) continue;
        const auto& p = m.case_peaks[i];
        sum += *m.death_norms[i] * death_shape(t, p.t0, p.lambda, kernel, grid);
    }
    return sum;
}

/// Analytic maximum of N * gompertz_rate, reached at t = t0.
inline double peak_height(const GompertzPeak& p) { return p.n * p.lambda / std::exp(1.0); }

} // namespace wavefit

#endif // WAVEFIT_WAVE_MODEL_HPP
