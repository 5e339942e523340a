// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.
#include "test_util.hpp"

#include "scb/core.hpp"
#include "scb/functional.hpp"
#include "scb/geospatial.hpp"
#include "scb/inverse_sets.hpp"
#include "scb/multiplier.hpp"
#include "scb/plot.hpp"
#include "scb/sim.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

using namespace scb;

namespace {

int g_failures = 0;

void report(int id, bool pass, const std::string& detail) {
    std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

bool in_range(double v, double lo, double hi) { return v >= lo && v <= hi; }

// 1 ---------------------------------------------------------------------------
void inversion_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    RngStream rng(101, 0);
    std::size_t violations = 0, checked = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        const SCBand b = testutil::random_band(rng);
        std::vector<double> levels(10);
        for (auto& c : levels) c = std::round(rng.normal() * 16.0) / 8.0;
        std::vector<RegionSet> ups, lows;
        for (double c : levels) {
            ups.push_back(invert_upper(b, c));
            lows.push_back(invert_lower(b, c));
        }
        for (std::size_t k = 0; k < levels.size(); ++k) {
            const double c = levels[k];
            const double a = std::min(c, levels[(k + 1) % levels.size()]);
            const double d = std::max(c, levels[(k + 1) % levels.size()]);
            const RegionSet iv = invert_interval(b, a, d);
            const RegionSet ua = invert_upper(b, a), ld = invert_lower(b, d);
            const TwoSidedRegions ts = invert_two_sided(b, c);
            for (std::size_t i = 0; i < b.domain.size(); ++i) {
                ++checked;
                const auto& U = ups[k];
                const auto& L = lows[k];
                if (!b.domain.included(i)) {
                    violations += U.inner[i] || U.outer[i] || U.estimate[i] || L.inner[i] || L.outer[i] || L.estimate[i] ||
                                  iv.inner[i] || iv.outer[i] || iv.estimate[i];
                    continue;
                }
                const double lo = b.scb_low[i], up = b.scb_up[i], e = b.eta_hat[i];
                // Elementwise oracle.
                violations += U.inner[i] != (lo >= c) || U.outer[i] != (up >= c) || U.estimate[i] != (e >= c);
                violations += L.inner[i] != (up <= c) || L.outer[i] != (lo <= c) || L.estimate[i] != (e <= c);
                violations += iv.inner[i] != (lo >= a && up <= d) || iv.outer[i] != (up >= a && lo <= d) ||
                              iv.estimate[i] != (a <= e && e <= d);
                violations += ts.upper.inner[i] != U.inner[i] || ts.upper.outer[i] != U.outer[i] ||
                              ts.lower.inner[i] != L.inner[i] || ts.lower.outer[i] != L.outer[i];
                // Sandwich.
                violations += (U.inner[i] && !U.estimate[i]) || (U.estimate[i] && !U.outer[i]);
                violations += (L.inner[i] && !L.estimate[i]) || (L.estimate[i] && !L.outer[i]);
                violations += (iv.inner[i] && !iv.estimate[i]) || (iv.estimate[i] && !iv.outer[i]);
                // Duality away from tie cells.
                if (lo != c && up != c) {
                    violations += L.inner[i] != !U.outer[i];
                    violations += L.outer[i] != !U.inner[i];
                }
                // Interval intersection.
                violations += iv.inner[i] != (ua.inner[i] && ld.inner[i]);
                violations += iv.outer[i] != (ua.outer[i] && ld.outer[i]);
                // Nestedness across every pair of levels.
                for (std::size_t m = 0; m < levels.size(); ++m) {
                    if (levels[m] < c) continue;
                    violations += ups[m].inner[i] && !U.inner[i];
                    violations += ups[m].outer[i] && !U.outer[i];
                }
            }
        }
    }
    const double secs = seconds_since(t0);
    report(1, violations == 0 && secs < 10.0,
           fmt("%zu violations over %zu cell checks on 1000 random bands x 10 thresholds, %.2f s (limit 10 s)",
               violations, checked, secs));
}

// 2 and 3 ---------------------------------------------------------------------
void linear_outcome() {
    SimDesign d;
    d.kind = DesignKind::linear_outcome;
    d.n = 100;
    MethodConfig cfg;
    cfg.nboot = 1000;
    const auto t0 = std::chrono::steady_clock::now();
    const CoverageReport rep = run_coverage(d, cfg, 500, 1, true);
    const double secs = seconds_since(t0);

    // 50 thresholds spanning the range of the true curve.
    const auto [mn, mx] = std::minmax_element(rep.truths.front().begin(), rep.truths.front().end());
    std::vector<double> levels(50);
    for (int k = 0; k < 50; ++k) levels[static_cast<std::size_t>(k)] = *mn - 0.5 + (*mx - *mn + 1.0) * k / 49.0;
    std::size_t counterexamples = 0, covered = 0;
    for (std::size_t r = 0; r < rep.records.size(); ++r) {
        if (!rep.records[r].covered) continue;
        ++covered;
        const SCBand& b = rep.bands[r];
        const Field& truth = rep.truths[r];
        for (SetType type : {SetType::upper, SetType::lower, SetType::two_sided}) {
            ThresholdSpec spec{type, {}};
            for (double c : levels) spec.levels.push_back(Level::single(c));
            counterexamples += check_containment(invert(b, spec), truth, b.domain).contain_all ? 0 : 1;
        }
        ThresholdSpec iv{SetType::interval, {}};
        for (std::size_t k = 0; k + 1 < levels.size(); ++k) iv.levels.push_back(Level::interval(levels[k], levels[k + 1]));
        counterexamples += check_containment(invert(b, iv), truth, b.domain).contain_all ? 0 : 1;
    }
    report(2, counterexamples == 0 && covered > 0,
           fmt("%zu counterexamples over %zu fully covered replicates (of 500), 50 thresholds, upper/lower/two-sided/interval",
               counterexamples, covered));
    report(3, in_range(rep.coverage, 0.92, 0.98),
           fmt("linear outcome coverage %.3f (MCSE %.3f, %zu failures), target [0.92, 0.98], n=100, 500 reps, n_boot=1000, %.1f s",
               rep.coverage, rep.mcse, rep.failures, secs));
}

CoverageReport coverage(DesignKind kind, std::size_t n, SimMethod method, std::size_t reps, std::size_t nboot) {
    SimDesign d;
    d.kind = kind;
    d.n = n;
    MethodConfig cfg;
    cfg.method = method;
    cfg.nboot = nboot;
    return run_coverage(d, cfg, reps, 1, false);
}

// 4 ---------------------------------------------------------------------------
void logistic_outcome() {
    const auto t0 = std::chrono::steady_clock::now();
    const CoverageReport rep = coverage(DesignKind::logistic_outcome, 100, SimMethod::bootstrap, 500, 1000);
    report(4, in_range(rep.coverage, 0.90, 0.99),
           fmt("logistic outcome coverage %.3f (MCSE %.3f, %zu failures), target [0.90, 0.99], n=100, 500 reps, %.1f s",
               rep.coverage, rep.mcse, rep.failures, seconds_since(t0)));
}

// 5 ---------------------------------------------------------------------------
void coefficients() {
    const auto t0 = std::chrono::steady_clock::now();
    const CoverageReport lin = coverage(DesignKind::linear_coef, 200, SimMethod::bootstrap, 500, 1000);
    const CoverageReport log = coverage(DesignKind::logistic_coef, 200, SimMethod::bootstrap, 500, 1000);
    report(5, in_range(lin.coverage, 0.92, 0.98) && in_range(log.coverage, 0.90, 0.99),
           fmt("coefficient coverage linear %.3f (target [0.92, 0.98]), logistic %.3f (target [0.90, 0.99]), n=200, "
               "500 reps each, %zu+%zu failures, %.1f s",
               lin.coverage, log.coverage, lin.failures, log.failures, seconds_since(t0)));
}

// 6 ---------------------------------------------------------------------------
void fosr() {
    const auto t0 = std::chrono::steady_clock::now();
    const CoverageReport cma = coverage(DesignKind::fosr, 100, SimMethod::cma, 200, 10000);
    const CoverageReport mult = coverage(DesignKind::fosr, 100, SimMethod::multiplier, 200, 5000);
    double worst = 0.0, mean_rel = 0.0;
    std::size_t compared = 0;
    for (std::size_t r = 0; r < 200; ++r) {
        const double a = cma.records[r].q, b = mult.records[r].q;
        if (!std::isfinite(a) || !std::isfinite(b)) {
            worst = INFINITY;
            continue;
        }
        const double rel = std::abs(a - b) / std::max(a, b);
        worst = std::max(worst, rel);
        mean_rel += rel;
        ++compared;
    }
    mean_rel /= std::max<std::size_t>(compared, 1);
    const bool pass = in_range(cma.coverage, 0.90, 0.99) && in_range(mult.coverage, 0.90, 0.99) && worst < 0.15;
    report(6, pass,
           fmt("FoSR coverage of beta1 CMA %.3f, multiplier %.3f (target [0.90, 0.99]), n=100, 200 reps; per-replicate "
               "relative q difference max %.3f, mean %.3f (limit 0.15); %zu+%zu failures, %.1f s",
               cma.coverage, mult.coverage, worst, mean_rel, cma.failures, mult.failures, seconds_since(t0)));
}

// 7 ---------------------------------------------------------------------------
void gls_reduction() {
    RngStream rng(707, 0);
    const int n = 24;
    Eigen::MatrixXd X(n, 4);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = 1;
        X(i, 1) = rng.normal();
        X(i, 2) = rng.uniform();
        X(i, 3) = i % 3;
    }
    SpatialObservations obs;
    obs.x = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    obs.y = obs.x;
    obs.n_obs = n;
    obs.cube.resize(static_cast<std::size_t>(n) * 100);
    for (auto& v : obs.cube) v = rng.normal() * 2 + 1;
    const Eigen::VectorXd w = Eigen::Vector4d(1, 0, 0, 0);
    CorrelationSpec identity;
    identity.kind = CorrelationKind::explicit_cov;
    identity.cov = {Eigen::MatrixXd::Identity(n, n)};
    CorrelationSpec scaled = identity;
    scaled.cov = {3.0 * Eigen::MatrixXd::Identity(n, n)};
    const GLSFit a = fit_gls(obs, X, w, identity);
    const GLSFit b = fit_gls(obs, X, w, scaled);
    const Eigen::MatrixXd pinv = (X.transpose() * X).inverse() * X.transpose();
    double err_ols = 0, err_scaled = 0;
    for (std::size_t ix = 0; ix < 10; ++ix) {
        for (std::size_t iy = 0; iy < 10; ++iy) {
            Eigen::VectorXd z(n);
            for (int o = 0; o < n; ++o) z(o) = obs.value(static_cast<std::size_t>(o), ix, iy);
            const Eigen::VectorXd ols = pinv * z;
            const std::size_t cell = a.domain.index(iy, ix);
            err_ols = std::max(err_ols, (a.beta[cell] - ols).cwiseAbs().maxCoeff());
            err_scaled = std::max(err_scaled, (b.beta[cell] - a.beta[cell]).cwiseAbs().maxCoeff());
        }
    }
    report(7, err_ols < 1e-10 && err_scaled < 1e-10,
           fmt("100 spots: max |GLS(V=I) - OLS| = %.2e, max |GLS(V=3I) - GLS(V=I)| = %.2e (limit 1e-10)", err_ols,
               err_scaled));
}

// 8 ---------------------------------------------------------------------------
void multiplier_moments() {
    bool pass = true;
    std::string detail;
    const double s5 = std::sqrt(5.0);
    for (auto [kind, name] : {std::pair{MultiplierKind::rademacher, "rademacher"}, std::pair{MultiplierKind::gaussian, "gaussian"},
                              std::pair{MultiplierKind::mammen, "mammen"}}) {
        RngStream rng(808, static_cast<std::uint64_t>(kind));
        const auto g = draw_multipliers(kind, 1000000, rng);
        double m = 0, v = 0;
        for (double x : g) m += x;
        m /= static_cast<double>(g.size());
        for (double x : g) v += (x - m) * (x - m);
        v /= static_cast<double>(g.size() - 1);
        bool ok = std::abs(m) < 4e-3 && std::abs(v - 1) < 1e-2;
        if (kind == MultiplierKind::mammen) {
            for (double x : g) ok = ok && (x == (1 - s5) / 2 || x == (1 + s5) / 2);
        }
        pass = pass && ok;
        detail += fmt("%s mean %+.4f var %.4f; ", name, m, v);
    }
    report(8, pass, detail + "limits |mean| < 4e-3, |var-1| < 1e-2, mammen support (1+-sqrt5)/2");
}

// 9 ---------------------------------------------------------------------------
void quantile_oracle() {
    RngStream rng(909, 0);
    std::size_t mismatches = 0;
    for (int t = 0; t < 10000; ++t) {
        const std::size_t n = 1 + rng.index(300);
        std::vector<double> s(n);
        const bool ties = rng.bernoulli(0.3);
        for (auto& v : s) v = ties ? static_cast<double>(rng.index(5)) : rng.normal();
        double level = rng.uniform();
        if (rng.bernoulli(0.2)) level = static_cast<double>(1 + rng.index(99)) / 100.0; // exact percent levels
        if (level <= 0.0) level = 0.5;
        std::vector<double> sorted = s;
        std::sort(sorted.begin(), sorted.end());
        // Rank oracle in exact integer arithmetic for percent levels, long double otherwise.
        std::size_t k;
        const long double prod = static_cast<long double>(level) * static_cast<long double>(n);
        const long double pct = std::round(static_cast<long double>(level) * 100.0L);
        if (std::abs(static_cast<long double>(level) * 100.0L - pct) < 1e-9L) {
            const auto num = static_cast<std::size_t>(pct) * n;
            k = (num + 99) / 100;
        } else {
            k = static_cast<std::size_t>(std::ceil(prod));
        }
        k = std::clamp<std::size_t>(k, 1, n);
        mismatches += empirical_quantile(s, level) != sorted[k - 1];
    }
    report(9, mismatches == 0, fmt("%zu mismatches against the full-sort rank oracle on 10000 sample/level pairs", mismatches));
}

// 10 --------------------------------------------------------------------------
void single_point_cma() {
    const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
    const double q = cma_quantile(one, one, 0.05, 100000, 1010);
    report(10, std::abs(q - 1.95996) < 0.02, fmt("q = %.4f vs 1.95996 (tolerance 0.02), nboot = 1e5", q));
}

// 11 --------------------------------------------------------------------------
void plots() {
    // Fixed-seed 2D band: smooth bump plus noise.
    RngStream rng(1111, 0);
    const std::size_t n = 25;
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<double>(i) / (n - 1);
    Field eta(n * n), se(n * n);
    for (std::size_t iy = 0; iy < n; ++iy)
        for (std::size_t ix = 0; ix < n; ++ix) {
            const double dx = x[ix] - 0.5, dy = x[iy] - 0.4;
            eta[iy * n + ix] = 3 * std::exp(-(dx * dx + dy * dy) / 0.05) + 0.2 * rng.normal();
            se[iy * n + ix] = 0.1 + 0.1 * rng.uniform();
        }
    Mask mask(n * n, 1);
    for (std::size_t i = 0; i < 20; ++i) mask[rng.index(n * n)] = 0;
    const SCBand band = assemble_band(eta, se, 2.5, 1.0, 0.05, Domain::grid2d(x, x, mask));
    PlotSpec spec;
    spec.thresholds = {SetType::upper, {Level::single(0.5), Level::single(1.5), Level::single(2.5)}};
    spec.title = "golden";
    const auto first = render_plot(band, spec);
    const auto second = render_plot(band, spec);
    spec.together = false;
    const auto per_level_a = render_plot(band, spec);
    const auto per_level_b = render_plot(band, spec);
    const bool identical = first == second && per_level_a == per_level_b && per_level_a.size() == 3;

    // Edge-straddle oracle on random fields.
    std::size_t straddle_failures = 0, segments = 0;
    for (int f = 0; f < 100; ++f) {
        RngStream fr(1112, static_cast<std::uint64_t>(f));
        const std::size_t nx = 2 + fr.index(30), ny = 2 + fr.index(30);
        std::vector<double> gx(nx), gy(ny);
        for (std::size_t i = 0; i < nx; ++i) gx[i] = static_cast<double>(i) * 0.5;
        for (std::size_t i = 0; i < ny; ++i) gy[i] = static_cast<double>(i) * 0.25;
        Field field(nx * ny);
        for (auto& v : field) v = fr.normal();
        Mask m(nx * ny, 1);
        if (fr.bernoulli(0.5)) {
            for (auto& c : m) c = fr.bernoulli(0.9) ? 1 : 0;
        }
        const double level = 0.5 * fr.normal();
        for (const auto& s : contour_segments(field, gx, gy, level, &m)) {
            ++segments;
            for (const auto& [p, e] : {std::pair{s.a, s.edge_a}, std::pair{s.b, s.edge_b}}) {
                const std::size_t cell = e / 2, ix = cell % nx, iy = cell / nx;
                const std::size_t ix2 = e % 2 == 0 ? ix + 1 : ix, iy2 = e % 2 == 0 ? iy : iy + 1;
                if (ix2 >= nx || iy2 >= ny) {
                    ++straddle_failures;
                    continue;
                }
                const double v1 = field[iy * nx + ix], v2 = field[iy2 * nx + ix2];
                const bool straddles = (v1 >= level) != (v2 >= level);
                const bool unmasked = m[iy * nx + ix] && m[iy2 * nx + ix2];
                const double t = straddles ? (level - v1) / (v2 - v1) : -1.0;
                const double ex = gx[ix] + t * (gx[ix2] - gx[ix]), ey = gy[iy] + t * (gy[iy2] - gy[iy]);
                if (!straddles || !unmasked || std::abs(p[0] - ex) > 1e-9 || std::abs(p[1] - ey) > 1e-9) ++straddle_failures;
            }
        }
    }

    // Contour-region consistency: inner regions sit inside outer regions, and
    // every inner-contour crossing has its inside vertex in the outer region.
    std::size_t consistency_failures = 0;
    for (SetType type : {SetType::upper, SetType::lower, SetType::interval}) {
        ThresholdSpec ts{type, {}};
        for (double c : {0.25, 0.5, 1.0, 1.5, 2.0, 2.5}) {
            ts.levels.push_back(type == SetType::interval ? Level::interval(c, c + 1.0) : Level::single(c));
        }
        for (const auto& r : invert(band, ts)) {
            consistency_failures += is_subset(r.inner, r.outer) ? 0 : 1;
            if (type == SetType::interval) continue;
            const Field& surface = type == SetType::upper ? band.scb_low : band.scb_up;
            const double c = r.level.low;
            for (const auto& s : contour_segments(surface, x, x, c, &mask)) {
                for (std::size_t e : {s.edge_a, s.edge_b}) {
                    const std::size_t cell = e / 2, ix = cell % n, iy = cell / n;
                    const std::size_t a = iy * n + ix, b = e % 2 == 0 ? a + 1 : a + n;
                    for (std::size_t v : {a, b}) {
                        if (r.inner[v] && !r.outer[v]) ++consistency_failures;
                    }
                    // The vertex on the inner side of the crossing belongs to the outer region.
                    const std::size_t in_vertex = (surface[a] >= c) == (type == SetType::upper) ? a : b;
                    const bool on_inner_side = type == SetType::upper ? surface[in_vertex] >= c : surface[in_vertex] <= c;
                    if (on_inner_side && !r.outer[in_vertex]) ++consistency_failures;
                }
            }
        }
    }
    report(11, identical && straddle_failures == 0 && segments > 0 && consistency_failures == 0,
           fmt("SVG byte-identical across runs: %s; straddle oracle %zu failures over %zu segments on 100 fields; "
               "contour-region consistency %zu failures",
               identical ? "yes" : "no", straddle_failures, segments, consistency_failures));
}

void guarded(int id, const std::function<void()>& body) {
    try {
        body();
    } catch (const std::exception& e) {
        report(id, false, std::string("exception: ") + e.what());
    }
}

} // namespace

int main() {
    set_warning_handler([](std::string_view) {});
    guarded(1, inversion_oracle);
    guarded(2, linear_outcome);
    guarded(4, logistic_outcome);
    guarded(5, coefficients);
    guarded(6, fosr);
    guarded(7, gls_reduction);
    guarded(8, multiplier_moments);
    guarded(9, quantile_oracle);
    guarded(10, single_point_cma);
    guarded(11, plots);
    std::printf("%s: %d criterion failure(s)\n", g_failures == 0 ? "ALL PASS" : "FAILURES", g_failures);
    return g_failures == 0 ? 0 : 1;
}
