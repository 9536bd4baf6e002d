#ifndef WAVEFIT_SEEDER_HPP
#define WAVEFIT_SEEDER_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "wavefit/timeseries.hpp"
#include "wavefit/wave_model.hpp"

namespace wavefit {

/// Upper-tail probability of the chi-square distribution, Q(ndf/2, chi2/2).
inline double chi2_prob(double chi2, int ndf) {
    if (!(chi2 >= 0.0)) throw std::invalid_argument("chi2_prob: chi2 must be >= 0");
    if (ndf < 1) throw std::invalid_argument("chi2_prob: ndf must be >= 1");
    if (chi2 == 0.0) return 1.0;
    return boost::math::gamma_q(0.5 * ndf, 0.5 * chi2);
}

/// Sum of squared standardized residuals of the cases curve at the weekly mean days.
inline double chi2_cases(const std::vector<GompertzPeak>& peaks, const LinearBackground& bg,
                         const WeeklySeries& series) {
    double chi2 = 0.0;
    for (const auto& p : series.points) {
        double f = bg(p.t);
        for (const auto& pk : peaks) f += pk.n * gompertz_rate(p.t, pk.t0, pk.lambda);
        const double r = (f - p.y) / p.sigma;
        chi2 += r * r;
    }
    return chi2;
}

// ---------------------------------------------------------------------------
// Random numbers

/// SplitMix64, used to expand seeds.
struct SplitMix64 {
    std::uint64_t state;

    std::uint64_t operator()() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
};

/// xoshiro256** (Blackman and Vigna). Output is identical on every platform.
class Xoshiro256 {
public:
    explicit Xoshiro256(std::uint64_t seed) {
        SplitMix64 sm{seed};
        for (auto& s : s_) s = sm();
    }

    std::uint64_t operator()() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform in [0, 1) from the top 53 bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::array<std::uint64_t, 4> s_{};
};

/// Trial i of a search draws from its own generator seeded by
/// (rng_seed, i), so results do not depend on how trials are partitioned.
inline constexpr const char* kRngAlgorithm = "xoshiro256**/splitmix64-per-trial";

inline Xoshiro256 trial_stream(std::uint64_t rng_seed, std::uint64_t trial) {
    SplitMix64 mix{rng_seed ^ (0xD1B54A32D192ED03ULL * (trial + 1))};
    return Xoshiro256{mix()};
}

// ---------------------------------------------------------------------------
// Search

struct ParamRange {
    double low = 0.0;
    double high = 0.0;

    double draw(double u) const { return low + u * (high - low); }
    double clamp(double v) const { return std::clamp(v, low, high); }
};

struct PeakBox {
    ParamRange n;
    ParamRange lambda;
    ParamRange t0;
};

struct SearchBox {
    std::vector<PeakBox> peaks;
    ParamRange c;
    ParamRange s;
    std::uint64_t trials = 1'000'000;
    std::uint64_t rng_seed = 0;
    unsigned workers = 1;
    bool polish = false;
    int polish_rounds = 300;
};

inline void validate(const SearchBox& box) {
    if (box.peaks.empty()) throw std::invalid_argument("search box: at least one peak");
    if (box.trials < 1) throw std::invalid_argument("search box: trials must be >= 1");
    auto check = [](const ParamRange& r, const char* what) {
        if (!(r.low <= r.high) || !std::isfinite(r.low) || !std::isfinite(r.high))
            throw std::invalid_argument(std::string("search box: invalid range for ") + what);
    };
    for (const auto& p : box.peaks) {
        check(p.n, "N");
        check(p.lambda, "lambda");
        check(p.t0, "t0");
        if (!(p.lambda.low > 0.0)) throw std::invalid_argument("search box: lambda must be positive");
    }
    check(box.c, "C");
    check(box.s, "S");
}

struct SeedResult {
    std::vector<GompertzPeak> peaks;
    LinearBackground bg;
    double chi2 = 0.0;
    int ndf = 0;
    double prob = 0.0;
    std::string rng_algorithm = kRngAlgorithm;
    std::uint64_t rng_seed = 0;
    std::uint64_t trials = 0;
    bool warning = false; // no trial produced a finite chi2
};

namespace detail {

struct Candidate {
    std::vector<GompertzPeak> peaks;
    LinearBackground bg;
    double chi2 = std::numeric_limits<double>::infinity();
    std::uint64_t trial = std::numeric_limits<std::uint64_t>::max();
};

inline bool better(const Candidate& a, const Candidate& b) {
    const bool fa = std::isfinite(a.chi2), fb = std::isfinite(b.chi2);
    if (fa != fb) return fa;
    if (fa && a.chi2 != b.chi2) return a.chi2 < b.chi2;
    return a.trial < b.trial;
}

inline void draw_trial(const SearchBox& box, std::uint64_t trial, Candidate& c) {
    auto rng = trial_stream(box.rng_seed, trial);
    c.peaks.resize(box.peaks.size());
    for (std::size_t i = 0; i < box.peaks.size(); ++i) {
        c.peaks[i].n = box.peaks[i].n.draw(rng.uniform());
        c.peaks[i].lambda = box.peaks[i].lambda.draw(rng.uniform());
        c.peaks[i].t0 = box.peaks[i].t0.draw(rng.uniform());
    }
    c.bg.c = box.c.draw(rng.uniform());
    c.bg.s = box.s.draw(rng.uniform());
    c.trial = trial;
}

inline Candidate search_range(const SearchBox& box, const WeeklySeries& series, std::uint64_t first,
                              std::uint64_t last) {
    Candidate best, cur;
    for (std::uint64_t i = first; i < last; ++i) {
        draw_trial(box, i, cur);
        cur.chi2 = chi2_cases(cur.peaks, cur.bg, series);
        if (better(cur, best)) best = cur;
    }
    return best;
}

/// Coordinate descent inside the box: try +-step on each parameter, accept
/// improvements, halve the steps when a full sweep makes no progress.
inline void polish(const SearchBox& box, const WeeklySeries& series, Candidate& c) {
    struct Coord {
        double* value;
        const ParamRange* range;
        double step;
    };
    std::vector<Coord> coords;
    for (std::size_t i = 0; i < c.peaks.size(); ++i) {
        coords.push_back({&c.peaks[i].n, &box.peaks[i].n, 0.1 * (box.peaks[i].n.high - box.peaks[i].n.low)});
        coords.push_back({&c.peaks[i].lambda, &box.peaks[i].lambda,
                          0.1 * (box.peaks[i].lambda.high - box.peaks[i].lambda.low)});
        coords.push_back({&c.peaks[i].t0, &box.peaks[i].t0, 0.1 * (box.peaks[i].t0.high - box.peaks[i].t0.low)});
    }
    coords.push_back({&c.bg.c, &box.c, 0.1 * (box.c.high - box.c.low)});
    coords.push_back({&c.bg.s, &box.s, 0.1 * (box.s.high - box.s.low)});

    for (int round = 0; round < box.polish_rounds; ++round) {
        bool improved = false;
        for (auto& k : coords) {
            if (k.step <= 0.0) continue;
            for (double dir : {1.0, -1.0}) {
                const double old = *k.value;
                *k.value = k.range->clamp(old + dir * k.step);
                const double chi2 = chi2_cases(c.peaks, c.bg, series);
                if (chi2 < c.chi2) {
                    c.chi2 = chi2;
                    improved = true;
                    break;
                }
                *k.value = old;
            }
        }
        if (!improved) {
            for (auto& k : coords) k.step *= 0.5;
        }
    }
}

} // namespace detail

/// Uniform Monte Carlo search over the box for the lowest cases chi2.
inline SeedResult mc_search(const SearchBox& box, const WeeklySeries& series) {
    validate(box);
    const unsigned workers = std::max(1u, box.workers);
    detail::Candidate best;
    if (workers == 1) {
        best = detail::search_range(box, series, 0, box.trials);
    } else {
        std::vector<detail::Candidate> partial(workers);
        std::vector<std::thread> pool;
        const std::uint64_t chunk = (box.trials + workers - 1) / workers;
        for (unsigned w = 0; w < workers; ++w) {
            const std::uint64_t first = std::min<std::uint64_t>(box.trials, w * chunk);
            const std::uint64_t last = std::min<std::uint64_t>(box.trials, first + chunk);
            pool.emplace_back([&, w, first, last] { partial[w] = detail::search_range(box, series, first, last); });
        }
        for (auto& t : pool) t.join();
        for (const auto& p : partial)
            if (detail::better(p, best)) best = p;
    }

    SeedResult out;
    out.rng_seed = box.rng_seed;
    out.trials = box.trials;
    if (!std::isfinite(best.chi2)) {
        out.warning = true;
        if (best.peaks.empty()) detail::draw_trial(box, 0, best);
    } else if (box.polish) {
        detail::polish(box, series, best);
    }
    out.peaks = best.peaks;
    out.bg = best.bg;
    out.chi2 = best.chi2;
    out.ndf = static_cast<int>(series.points.size()) - static_cast<int>(3 * box.peaks.size() + 2);
    out.prob = (out.ndf >= 1 && std::isfinite(out.chi2)) ? chi2_prob(out.chi2, out.ndf) : 0.0;
    return out;
}

/// Box that covers the default "plausible" region for a cases series: t0 in
/// non-overlapping equal sub-windows of the data span (one per peak),
/// lambda in [0.02, 0.3], N within [0.1, 10] x the observed excess over the
/// minimum, C in [0, max y], S in +-0.02 max y per day.
inline SearchBox default_search_box(const WeeklySeries& series, std::size_t n_peaks, std::uint64_t trials,
                                    std::uint64_t rng_seed) {
    if (series.points.empty()) throw std::invalid_argument("default_search_box: empty series");
    if (n_peaks == 0) throw std::invalid_argument("default_search_box: n_peaks must be >= 1");
    double y_min = series.points.front().y, y_max = y_min;
    for (const auto& p : series.points) {
        y_min = std::min(y_min, p.y);
        y_max = std::max(y_max, p.y);
    }
    double excess = 0.0;
    for (const auto& p : series.points) excess += 7.0 * (p.y - y_min);
    excess = std::max(excess, 1.0);

    const double t_lo = series.points.front().t - 3.0;
    const double t_hi = series.points.back().t + 4.0;
    const double width = (t_hi - t_lo) / static_cast<double>(n_peaks);

    SearchBox box;
    for (std::size_t i = 0; i < n_peaks; ++i) {
        const double lo = t_lo + width * static_cast<double>(i);
        box.peaks.push_back({{0.1 * excess, 10.0 * excess}, {0.02, 0.3}, {lo, lo + width}});
    }
    box.c = {0.0, y_max};
    box.s = {-0.02 * y_max, 0.02 * y_max};
    box.trials = trials;
    box.rng_seed = rng_seed;
    return box;
}

} // namespace wavefit

#endif // WAVEFIT_SEEDER_HPP
