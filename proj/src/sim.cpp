#include "scb/sim.hpp"

#include "scb/band_io.hpp"
#include "scb/regression.hpp"

#include "json.hpp"

#include <chrono>
#include <numbers>

namespace scb {

DesignKind parse_design_kind(std::string_view text) {
    if (text == "fosr") return DesignKind::fosr;
    if (text == "linear_outcome" || text == "linear") return DesignKind::linear_outcome;
    if (text == "logistic_outcome" || text == "logistic") return DesignKind::logistic_outcome;
    if (text == "linear_coef") return DesignKind::linear_coef;
    if (text == "logistic_coef") return DesignKind::logistic_coef;
    throw Error("invalid_argument", "unknown simulation design '" + std::string(text) + "'");
}

std::string_view to_string(DesignKind kind) {
    switch (kind) {
    case DesignKind::fosr: return "fosr";
    case DesignKind::linear_outcome: return "linear_outcome";
    case DesignKind::logistic_outcome: return "logistic_outcome";
    case DesignKind::linear_coef: return "linear_coef";
    case DesignKind::logistic_coef: return "logistic_coef";
    }
    return "";
}

SimMethod parse_sim_method(std::string_view text) {
    if (text == "bootstrap") return SimMethod::bootstrap;
    if (text == "cma") return SimMethod::cma;
    if (text == "multiplier") return SimMethod::multiplier;
    throw Error("invalid_argument", "unknown simulation method '" + std::string(text) + "'");
}

std::string_view to_string(SimMethod method) {
    switch (method) {
    case SimMethod::bootstrap: return "bootstrap";
    case SimMethod::cma: return "cma";
    case SimMethod::multiplier: return "multiplier";
    }
    return "";
}

double fourier_basis(std::size_t k, double t) {
    const double j = static_cast<double>((k + 1) / 2);
    const double arg = 2.0 * std::numbers::pi * j * t;
    return std::numbers::sqrt2 * (k % 2 == 1 ? std::sin(arg) : std::cos(arg));
}

double linear_design_mean(double x1) { return -1.0 + x1 + 0.5 * x1 * x1 - 1.1 * x1 * x1 * x1; }

namespace {

ModelSpec cubic_spec() {
    ModelSpec spec;
    spec.response = "y";
    spec.terms = {Term::main("x1"), Term::pow("x1", 2), Term::pow("x1", 3)};
    return spec;
}

void generate_outcome(const SimDesign& d, RngStream& rng, SimData& out, bool logistic) {
    std::vector<double> x(d.n), y(d.n);
    for (std::size_t i = 0; i < d.n; ++i) {
        x[i] = rng.normal();
        const double mu = linear_design_mean(x[i]);
        y[i] = logistic ? (rng.bernoulli(expit(mu)) ? 1.0 : 0.0) : mu + d.linear_noise_sd * rng.normal();
    }
    out.table = Table({"x1", "y"}, {x, y});
    out.spec = cubic_spec();
    std::vector<double> g(d.grid_points);
    out.truth.resize(d.grid_points);
    for (std::size_t j = 0; j < d.grid_points; ++j) {
        g[j] = d.grid_points == 1 ? d.grid_lo
                                  : d.grid_lo + (d.grid_hi - d.grid_lo) * static_cast<double>(j) /
                                                    static_cast<double>(d.grid_points - 1);
        const double mu = linear_design_mean(g[j]);
        out.truth[j] = logistic ? expit(mu) : mu;
    }
    out.grid = Table({"x1"}, {g});
}

void generate_coef(const SimDesign& d, RngStream& rng, SimData& out, bool logistic) {
    const auto m = static_cast<Eigen::Index>(d.coef_m);
    Eigen::MatrixXd sigma(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) sigma(i, j) = std::pow(d.coef_rho, static_cast<double>(std::abs(i - j)));
    const Eigen::MatrixXd L = sigma.llt().matrixL();
    Eigen::VectorXd beta(m);
    for (Eigen::Index j = 0; j < m; ++j) beta(j) = rng.normal();
    std::vector<std::vector<double>> cols(d.coef_m + 1, std::vector<double>(d.n));
    for (std::size_t i = 0; i < d.n; ++i) {
        Eigen::VectorXd z(m);
        for (Eigen::Index j = 0; j < m; ++j) z(j) = rng.normal();
        const Eigen::VectorXd xi = L * z;
        for (Eigen::Index j = 0; j < m; ++j) cols[static_cast<std::size_t>(j)][i] = xi(j);
        const double mu = xi.dot(beta);
        cols.back()[i] = logistic ? (rng.bernoulli(expit(mu)) ? 1.0 : 0.0) : mu + rng.normal();
    }
    std::vector<std::string> names;
    out.spec.response = "y";
    for (std::size_t j = 0; j < d.coef_m; ++j) {
        names.push_back("x" + std::to_string(j + 1));
        out.spec.terms.push_back(Term::main(names.back()));
    }
    names.push_back("y");
    out.table = Table(names, cols);
    out.truth.assign(1, 0.0); // intercept
    for (Eigen::Index j = 0; j < m; ++j) out.truth.push_back(beta(j));
}

void generate_fosr(const SimDesign& d, RngStream& rng, SimData& out) {
    const std::size_t T = d.fosr_points;
    FunctionalDataset& f = out.functional;
    f.grid.resize(T);
    for (std::size_t t = 0; t < T; ++t) f.grid[t] = T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(T - 1);
    f.covariate_names = {"x"};
    f.covariates.resize(static_cast<Eigen::Index>(d.n), 1);
    f.Y.resize(static_cast<Eigen::Index>(d.n), static_cast<Eigen::Index>(T));
    out.truth.resize(T);
    for (std::size_t t = 0; t < T; ++t) out.truth[t] = std::sin(6.0 * std::numbers::pi * f.grid[t]);
    const double noise_sd = std::sqrt(d.fosr_noise_variance);
    for (std::size_t i = 0; i < d.n; ++i) {
        f.ids.push_back(std::to_string(i + 1));
        const double x = rng.bernoulli(d.fosr_x_prob) ? 1.0 : 0.0;
        f.covariates(static_cast<Eigen::Index>(i), 0) = x;
        std::vector<double> xi(d.fosr_components);
        for (std::size_t k = 0; k < d.fosr_components; ++k) {
            xi[k] = std::sqrt(d.fosr_sigma_scale * std::pow(d.fosr_sigma_ratio, static_cast<double>(k + 1))) * rng.normal();
        }
        for (std::size_t t = 0; t < T; ++t) {
            double b = 0.0;
            for (std::size_t k = 0; k < d.fosr_components; ++k) b += xi[k] * fourier_basis(k + 1, f.grid[t]);
            f.Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = out.truth[t] * x + b + noise_sd * rng.normal();
        }
    }
    if (d.fosr_missing_fraction > 0.0) {
        const Eigen::MatrixXd full = f.Y;
        for (Eigen::Index i = 0; i < f.Y.rows(); ++i) {
            int observed = 0;
            for (Eigen::Index t = 0; t < f.Y.cols(); ++t) {
                if (rng.bernoulli(d.fosr_missing_fraction)) {
                    f.Y(i, t) = std::nan("");
                } else {
                    ++observed;
                }
            }
            // Keep at least two observed points per subject.
            for (Eigen::Index t = 0; t < f.Y.cols() && observed < 2; ++t) {
                if (std::isnan(f.Y(i, t))) {
                    f.Y(i, t) = full(i, t);
                    ++observed;
                }
            }
        }
    }
}

} // namespace

SimData generate(const SimDesign& design, RngStream& rng) {
    if (design.n < 10) throw Error("invalid_argument", "simulation designs need n >= 10");
    SimData out;
    switch (design.kind) {
    case DesignKind::linear_outcome: generate_outcome(design, rng, out, false); break;
    case DesignKind::logistic_outcome: generate_outcome(design, rng, out, true); break;
    case DesignKind::linear_coef: generate_coef(design, rng, out, false); break;
    case DesignKind::logistic_coef: generate_coef(design, rng, out, true); break;
    case DesignKind::fosr: generate_fosr(design, rng, out); break;
    }
    return out;
}

namespace {

SCBand replicate_band(const SimDesign& design, const MethodConfig& cfg, const SimData& data, std::uint64_t seed) {
    const bool functional = design.kind == DesignKind::fosr;
    if (functional) {
        const FoSRFit fit = fit_fosr(data.functional, {"x"}, cfg.fosr);
        const SubsetSpec subset{{"x", 1.0}};
        if (cfg.method == SimMethod::cma) {
            return scb_cma(fit, subset, TargetKind::coefficient, {cfg.alpha, cfg.nboot, seed});
        }
        MultiplierOptions mo;
        mo.alpha = cfg.alpha;
        mo.nboot = cfg.nboot;
        mo.weights = cfg.weights;
        mo.sd = cfg.sd;
        mo.seed = seed;
        return scb_multiplier(data.functional, fit, subset, TargetKind::coefficient, mo);
    }
    BootstrapOptions bo;
    bo.n_boot = cfg.nboot;
    bo.alpha = cfg.alpha;
    bo.seed = seed;
    const Family family = design.kind == DesignKind::logistic_outcome || design.kind == DesignKind::logistic_coef
                              ? Family::binomial
                              : Family::gaussian;
    if (design.kind == DesignKind::linear_coef || design.kind == DesignKind::logistic_coef) {
        return scb_coef_bootstrap(data.table, data.spec, family, bo);
    }
    return scb_mean_bootstrap(data.table, data.spec, data.grid, family, bo);
}

bool contains(const SCBand& band, const Field& truth) {
    if (band.scb_low.size() != truth.size()) return false;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!band.domain.included(i)) continue;
        if (!(band.scb_low[i] <= truth[i] && truth[i] <= band.scb_up[i])) return false;
    }
    return true;
}

} // namespace

CoverageReport run_coverage(const SimDesign& design, const MethodConfig& config, std::size_t replicates,
                            std::uint64_t seed, bool keep_bands) {
    if (replicates == 0) throw Error("invalid_argument", "need at least one replicate");
    if (!(config.alpha > 0.0 && config.alpha < 1.0)) throw Error("invalid_argument", "alpha must lie in (0, 1)");
    if ((design.kind == DesignKind::fosr) != (config.method != SimMethod::bootstrap)) {
        throw Error("invalid_argument", "method '" + std::string(to_string(config.method)) +
                                            "' does not apply to design '" + std::string(to_string(design.kind)) + "'");
    }
    const auto start = std::chrono::steady_clock::now();
    CoverageReport rep;
    rep.design = design.kind;
    rep.method = config.method;
    rep.n = design.n;
    rep.replicates = replicates;
    rep.alpha = config.alpha;
    rep.seed = seed;
    rep.records.resize(replicates);
    if (keep_bands) {
        rep.bands.resize(replicates);
        rep.truths.resize(replicates);
    }
    // Replicate failures are recorded, not propagated.
    std::vector<std::string> warnings(replicates);
    parallel_for(replicates, [&](std::size_t r) {
        ReplicateRecord& rec = rep.records[r];
        try {
            RngStream rng(seed, r);
            const SimData data = generate(design, rng);
            const std::uint64_t band_seed = RngStream::derive(RngStream::derive(seed, r), 1);
            SCBand band = replicate_band(design, config, data, band_seed);
            rec.q = band.q_alpha;
            rec.covered = contains(band, data.truth);
            if (keep_bands) {
                rep.bands[r] = std::move(band);
                rep.truths[r] = data.truth;
            }
        } catch (const std::exception& e) {
            rec.failed = true;
            rec.covered = false;
            rec.error = e.what();
        }
    });
    for (std::size_t r = 0; r < replicates; ++r) {
        if (rep.records[r].covered) ++rep.covered;
        if (rep.records[r].failed) {
            ++rep.failures;
            warn("replicate " + std::to_string(r) + " failed and counts as non-coverage: " + rep.records[r].error);
        }
    }
    rep.coverage = static_cast<double>(rep.covered) / static_cast<double>(replicates);
    rep.mcse = std::sqrt(rep.coverage * (1.0 - rep.coverage) / static_cast<double>(replicates));
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

std::string coverage_report_to_json(const CoverageReport& r) {
    nlohmann::ordered_json j;
    j["design"] = to_string(r.design);
    j["method"] = to_string(r.method);
    j["n"] = r.n;
    j["replicates"] = r.replicates;
    j["alpha"] = r.alpha;
    j["seed"] = r.seed;
    j["coverage"] = r.coverage;
    j["mcse"] = r.mcse;
    j["covered"] = r.covered;
    j["failures"] = r.failures;
    j["wall_time_seconds"] = r.wall_seconds;
    auto covered = nlohmann::ordered_json::array();
    auto failed = nlohmann::ordered_json::array();
    auto q = nlohmann::ordered_json::array();
    auto errors = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < r.records.size(); ++i) {
        const auto& rec = r.records[i];
        covered.push_back(rec.covered);
        failed.push_back(rec.failed);
        if (std::isfinite(rec.q)) {
            q.push_back(rec.q);
        } else {
            q.push_back(nullptr);
        }
        if (rec.failed) errors.push_back({{"replicate", i}, {"message", rec.error}});
    }
    j["replicate_covered"] = covered;
    j["replicate_failed"] = failed;
    j["replicate_q"] = q;
    j["errors"] = errors;
    return j.dump(2) + "\n";
}

} // namespace scb
