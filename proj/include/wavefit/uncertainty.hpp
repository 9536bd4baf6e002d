#ifndef WAVEFIT_UNCERTAINTY_HPP
#define WAVEFIT_UNCERTAINTY_HPP

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "wavefit/errors.hpp"
#include "wavefit/gls.hpp"

namespace wavefit {

/// Two-sided normal quantile for a confidence level (0.95 -> 1.959964).
inline double z_for_level(double level) {
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("confidence level must be in (0, 1)");
    return boost::math::quantile(boost::math::normal_distribution<>{}, 0.5 * (1.0 + level));
}

struct Band {
    std::vector<double> t;
    std::vector<double> center;
    std::vector<double> half_width;
    double z = 0.0;
};

/// sigma(t)^2 = g^T Vb g, where g is the design row of the curve at t.
inline double propagated_variance(const Eigen::RowVectorXd& g, const Eigen::MatrixXd& cov) {
    return std::max(0.0, (g * cov * g.transpose())(0, 0));
}

/// Confidence band for a fitted curve of `region` on the given grid.
inline Band curve_band(const FitResult& fit, int region, Metric metric, std::span<const double> grid,
                       double level = 0.95) {
    if (region < 0 || region >= static_cast<int>(fit.models.size())) throw std::out_of_range("curve_band: region");
    Band band;
    band.z = z_for_level(level);
    const auto p = static_cast<Eigen::Index>(fit.layout.size());
    Eigen::RowVectorXd g(p);
    for (double t : grid) {
        g.setZero();
        const double value = design_row(fit.layout, region, fit.models[static_cast<std::size_t>(region)], fit.kernel,
                                        metric, t, fit.settings, g);
        band.t.push_back(t);
        band.center.push_back(value);
        band.half_width.push_back(band.z * std::sqrt(propagated_variance(g, fit.covariance)));
    }
    return band;
}

/// Band of the delay kernel density itself, propagated through (alpha, beta).
inline Band kernel_band(const FitResult& fit, std::span<const double> grid, double level = 0.95) {
    Band band;
    band.z = z_for_level(level);
    const auto ia = fit.layout.index_of(-1, Role::alpha);
    const auto ib = fit.layout.index_of(-1, Role::beta);
    const double a = fit.kernel.alpha, b = fit.kernel.beta;
    for (double t : grid) {
        const double g = gamma_pdf(t, fit.kernel);
        double var = 0.0;
        if (ia && ib && t > 0.0) {
            Eigen::Vector2d d{g * (std::log(b) - boost::math::digamma(a) + std::log(t)), g * (a / b - t)};
            Eigen::Matrix2d c;
            const auto ja = static_cast<Eigen::Index>(*ia), jb = static_cast<Eigen::Index>(*ib);
            c << fit.covariance(ja, ja), fit.covariance(ja, jb), fit.covariance(jb, ja), fit.covariance(jb, jb);
            var = std::max(0.0, d.dot(c * d));
        }
        band.t.push_back(t);
        band.center.push_back(g);
        band.half_width.push_back(band.z * std::sqrt(var));
    }
    return band;
}

struct KernelSummary {
    double alpha = 0.0, sigma_alpha = 0.0;
    double beta = 0.0, sigma_beta = 0.0;
    double rho = 0.0; // correlation of alpha and beta
    double mu = 0.0, sigma_mu = 0.0;
    double cv = 0.0, sigma_cv = 0.0;
};

/// Mean alpha/beta and CV alpha^{-1/2} with first-order errors, including
/// the alpha-beta covariance.
inline KernelSummary kernel_summary(double alpha, double beta, double var_alpha, double var_beta,
                                    double cov_alpha_beta) {
    if (!(alpha > 0.0) || !(beta > 0.0)) throw std::invalid_argument("kernel_summary: alpha, beta must be > 0");
    KernelSummary k;
    k.alpha = alpha;
    k.beta = beta;
    k.sigma_alpha = std::sqrt(std::max(0.0, var_alpha));
    k.sigma_beta = std::sqrt(std::max(0.0, var_beta));
    k.rho = (k.sigma_alpha > 0.0 && k.sigma_beta > 0.0) ? cov_alpha_beta / (k.sigma_alpha * k.sigma_beta) : 0.0;
    k.mu = alpha / beta;
    const double var_mu = var_alpha / (beta * beta) + (alpha * alpha) / (beta * beta * beta * beta) * var_beta -
                          2.0 * alpha / (beta * beta * beta) * cov_alpha_beta;
    k.sigma_mu = std::sqrt(std::max(0.0, var_mu));
    k.cv = 1.0 / std::sqrt(alpha);
    k.sigma_cv = k.sigma_alpha / (2.0 * std::pow(alpha, 1.5));
    return k;
}

inline KernelSummary kernel_summary(const FitResult& fit) {
    const auto ia = fit.layout.index_of(-1, Role::alpha);
    const auto ib = fit.layout.index_of(-1, Role::beta);
    if (!ia || !ib) return kernel_summary(fit.kernel.alpha, fit.kernel.beta, 0.0, 0.0, 0.0);
    const auto ja = static_cast<Eigen::Index>(*ia), jb = static_cast<Eigen::Index>(*ib);
    return kernel_summary(fit.kernel.alpha, fit.kernel.beta, fit.covariance(ja, ja), fit.covariance(jb, jb),
                          fit.covariance(ja, jb));
}

struct CfrEstimate {
    std::string region;
    std::optional<int> peak; // nullopt for a combined estimate
    double value = 0.0;
    double sigma = 0.0;
    std::vector<std::size_t> indices; // (N_d, N_c) layout indices, pairwise
};

/// Delta-method variance of a / b.
inline double ratio_variance(double a, double b, double var_a, double var_b, double cov_ab) {
    const double da = 1.0 / b;
    const double db = -a / (b * b);
    return da * da * var_a + db * db * var_b + 2.0 * da * db * cov_ab;
}

/// CFR of one peak: N_d / N_c with covariance-aware delta-method error.
inline CfrEstimate cfr_single(const FitResult& fit, int region, int peak) {
    const auto& layout = fit.layout;
    const auto jd = layout.index_of(region, Role::n_deaths, peak);
    const auto jc = layout.index_of(region, Role::n_cases, peak);
    if (!jc) throw std::out_of_range("cfr_single: no such case peak");
    if (!jd) throw ConfigError("cfr_single: death peak " + std::to_string(peak + 1) + " of " +
                               layout.regions()[static_cast<std::size_t>(region)] + " is dropped");
    const auto d = static_cast<Eigen::Index>(*jd), c = static_cast<Eigen::Index>(*jc);
    const double nd = fit.values(d), nc = fit.values(c);
    const double snc = std::sqrt(std::max(0.0, fit.covariance(c, c)));
    if (!(std::abs(nc) >= 3.0 * snc) || nc == 0.0)
        throw NumericalError("cfr_single: N_c of " + layout.regions()[static_cast<std::size_t>(region)] + " peak " +
                             std::to_string(peak + 1) + " is consistent with zero; ratio unstable");
    CfrEstimate e;
    e.region = layout.regions()[static_cast<std::size_t>(region)];
    e.peak = peak;
    e.value = nd / nc;
    e.sigma = std::sqrt(std::max(0.0, ratio_variance(nd, nc, fit.covariance(d, d), fit.covariance(c, c),
                                                     fit.covariance(d, c))));
    e.indices = {*jd, *jc};
    return e;
}

struct Combined {
    double value = 0.0;
    double sigma = 0.0;
};

/// GLS mean of correlated estimates y with covariance v (ones design).
inline Combined gls_mean(const Eigen::VectorXd& y, const Eigen::MatrixXd& v) {
    const auto n = y.size();
    if (v.rows() != n || v.cols() != n) throw std::invalid_argument("gls_mean: dimension mismatch");
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(v);
    const double scale = v.diagonal().cwiseAbs().maxCoeff();
    const auto& dvec = ldlt.vectorD();
    if (ldlt.info() != Eigen::Success || !(scale > 0.0) || !ldlt.isPositive() ||
        dvec.cwiseAbs().minCoeff() <= 1e-12 * scale)
        throw NumericalError("cfr_combine: covariance of the estimates is singular (perfectly correlated)");
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    const Eigen::VectorXd vinv_ones = ldlt.solve(ones);
    const double vf = 1.0 / ones.dot(vinv_ones);
    return {vf * vinv_ones.dot(y), std::sqrt(vf)};
}

/// Combines per-peak CFRs of one region: V12 = D Vabcd D^T from the fit
/// covariance, then the GLS mean.
inline CfrEstimate cfr_combine(std::span<const CfrEstimate> estimates, const FitResult& fit) {
    if (estimates.size() < 2) throw std::invalid_argument("cfr_combine: need at least two estimates");
    for (const auto& e : estimates) {
        if (e.region != estimates.front().region) throw std::invalid_argument("cfr_combine: mixed regions");
        if (e.indices.size() != 2) throw std::invalid_argument("cfr_combine: estimate lacks parameter indices");
    }
    const auto k = static_cast<Eigen::Index>(estimates.size());
    std::vector<std::size_t> idx;
    for (const auto& e : estimates) idx.insert(idx.end(), e.indices.begin(), e.indices.end());
    Eigen::MatrixXd vabcd(2 * k, 2 * k);
    for (Eigen::Index i = 0; i < 2 * k; ++i)
        for (Eigen::Index j = 0; j < 2 * k; ++j)
            vabcd(i, j) = fit.covariance(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]),
                                         static_cast<Eigen::Index>(idx[static_cast<std::size_t>(j)]));
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(k, 2 * k);
    Eigen::VectorXd y(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        const double a = fit.values(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(2 * i)]));
        const double b = fit.values(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(2 * i + 1)]));
        d(i, 2 * i) = 1.0 / b;
        d(i, 2 * i + 1) = -a / (b * b);
        y(i) = a / b;
    }
    const Eigen::MatrixXd v12 = d * vabcd * d.transpose();
    const auto c = gls_mean(y, 0.5 * (v12 + v12.transpose()));
    CfrEstimate out;
    out.region = estimates.front().region;
    out.value = c.value;
    out.sigma = c.sigma;
    out.indices = idx;
    return out;
}

/// All per-peak CFRs of a region, plus the combination when more than one
/// death peak is retained.
inline std::vector<CfrEstimate> region_cfrs(const FitResult& fit, int region) {
    std::vector<CfrEstimate> out;
    const auto& m = fit.models[static_cast<std::size_t>(region)];
    for (std::size_t i = 0; i < m.case_peaks.size(); ++i)
        if (m.death_norms[i]) out.push_back(cfr_single(fit, region, static_cast<int>(i)));
    if (out.size() >= 2) {
        const std::vector<CfrEstimate> singles = out;
        out.push_back(cfr_combine(singles, fit));
    }
    return out;
}

} // namespace wavefit

#endif // WAVEFIT_UNCERTAINTY_HPP
