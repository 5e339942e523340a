#include "scb/regression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace scb {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Family parse_family(std::string_view text) {
    if (text == "gaussian" || text == "linear") return Family::gaussian;
    if (text == "binomial" || text == "logistic") return Family::binomial;
    throw Error("invalid_argument", "unknown family '" + std::string(text) + "'");
}

Design build_design(const Table& table, const ModelSpec& resolved) {
    const std::size_t n = table.n_rows();
    Design d;
    d.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(resolved.terms.size() + 1));
    d.names.push_back(Term::intercept().label());
    d.X.col(0).setOnes();
    for (std::size_t j = 0; j < resolved.terms.size(); ++j) {
        const Term& t = resolved.terms[j];
        if (t.kind != Term::Kind::main && t.kind != Term::Kind::power) {
            throw Error("invalid_argument", "design needs a resolved formula");
        }
        const auto& col = table.col(t.var);
        for (std::size_t i = 0; i < n; ++i) {
            const double v = t.kind == Term::Kind::power ? std::pow(col[i], t.power) : col[i];
            if (!std::isfinite(v)) {
                throw Error("non_finite", "non-finite value in column '" + t.var + "', row " + std::to_string(i + 1));
            }
            d.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) = v;
        }
        d.names.push_back(t.label());
    }
    return d;
}

VectorXd response_vector(const Table& table, const ModelSpec& spec) {
    const auto& col = table.col(spec.response);
    VectorXd y(static_cast<Eigen::Index>(col.size()));
    for (std::size_t i = 0; i < col.size(); ++i) {
        if (!std::isfinite(col[i])) {
            throw Error("non_finite", "non-finite response in row " + std::to_string(i + 1));
        }
        y(static_cast<Eigen::Index>(i)) = col[i];
    }
    return y;
}

namespace {

// Estimate plus a factor S with cov(beta) = S S'.
struct CoreFit {
    VectorXd beta;
    MatrixXd cov_factor;
    double sigma2 = 1.0;
    int iterations = 0;
};

std::string collinear_names(const Eigen::ColPivHouseholderQR<MatrixXd>& qr, const std::vector<std::string>* names) {
    std::string out;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index k = qr.rank(); k < perm.size(); ++k) {
        if (!out.empty()) out += ", ";
        const auto j = static_cast<std::size_t>(perm(k));
        out += names && j < names->size() ? (*names)[j] : "column " + std::to_string(j);
    }
    return out;
}

CoreFit ols_core(const MatrixXd& X, const VectorXd& y, const std::vector<std::string>* names) {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    if (n <= p) {
        throw Error("too_few_rows", "need more rows (" + std::to_string(n) + ") than design columns (" +
                                        std::to_string(p) + ")");
    }
    Eigen::ColPivHouseholderQR<MatrixXd> qr(n, p);
    qr.setThreshold(1e-10);
    qr.compute(X);
    if (qr.rank() < p) {
        throw Error("rank_deficient", "design is rank deficient; collinear columns: " + collinear_names(qr, names));
    }
    CoreFit fit;
    fit.beta = qr.solve(y);
    const double rss = (y - X * fit.beta).squaredNorm();
    fit.sigma2 = rss / static_cast<double>(n - p);
    const MatrixXd R = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
    const MatrixXd r_inv = R.triangularView<Eigen::Upper>().solve(MatrixXd::Identity(p, p));
    fit.cov_factor = qr.colsPermutation() * r_inv * std::sqrt(fit.sigma2);
    return fit;
}

double log_likelihood(const VectorXd& eta, const VectorXd& y) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double e = eta(i);
        // log(1 + exp(e)) computed without overflow
        const double softplus = std::max(e, 0.0) + std::log1p(std::exp(-std::abs(e)));
        ll += y(i) * e - softplus;
    }
    return ll;
}

// Fitted probabilities numerically 0 or 1 mark (quasi-)separation.
void throw_if_saturated(const VectorXd& prob) {
    for (Eigen::Index i = 0; i < prob.size(); ++i) {
        if (std::min(prob(i), 1.0 - prob(i)) < 1e-8) {
            throw Error("quasi_separation", "IRLS diverged: fitted probabilities of 0 or 1, quasi-separation detected");
        }
    }
}

CoreFit logistic_core(const MatrixXd& X, const VectorXd& y, const IrlsOptions& opts, const VectorXd* start) {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    if (n <= p) {
        throw Error("too_few_rows", "need more rows than design columns");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (y(i) != 0.0 && y(i) != 1.0) {
            throw Error("invalid_response", "logistic response must be 0 or 1 (row " + std::to_string(i + 1) + ")");
        }
    }
    VectorXd beta = start ? *start : VectorXd::Zero(p);
    VectorXd eta = X * beta;
    VectorXd prob(n);
    VectorXd w(n);
    Eigen::LLT<MatrixXd> llt(p);
    for (int iter = 0; iter <= opts.max_iter; ++iter) {
        for (Eigen::Index i = 0; i < n; ++i) {
            prob(i) = expit(eta(i));
            w(i) = prob(i) * (1.0 - prob(i));
        }
        const VectorXd score = X.transpose() * (y - prob);
        const MatrixXd info = X.transpose() * w.asDiagonal() * X;
        llt.compute(info);
        if (llt.info() != Eigen::Success) {
            throw_if_saturated(prob);
            throw Error("irls_failed", "IRLS failed: information matrix is singular");
        }
        const VectorXd step = llt.solve(score);
        // Under separation the score vanishes while the Newton step does not.
        if (score.lpNorm<Eigen::Infinity>() < opts.tol &&
            step.lpNorm<Eigen::Infinity>() <= 1e-4 * (1.0 + beta.lpNorm<Eigen::Infinity>())) {
            CoreFit fit;
            fit.beta = beta;
            fit.sigma2 = 1.0;
            fit.iterations = iter;
            const MatrixXd l_inv = llt.matrixL().solve(MatrixXd::Identity(p, p));
            fit.cov_factor = l_inv.transpose();
            return fit;
        }
        if (iter == opts.max_iter) {
            break;
        }
        const double ll0 = log_likelihood(eta, y);
        double t = 1.0;
        VectorXd trial = beta + step;
        VectorXd trial_eta = X * trial;
        for (int halving = 0; halving < 30 && log_likelihood(trial_eta, y) < ll0 - 1e-12 * std::abs(ll0); ++halving) {
            t *= 0.5;
            trial = beta + t * step;
            trial_eta = X * trial;
        }
        beta = trial;
        eta = trial_eta;
        if (!beta.allFinite() || beta.norm() > opts.divergence) {
            throw Error("quasi_separation", "IRLS diverged: quasi-separation detected");
        }
    }
    throw_if_saturated(prob);
    throw Error("irls_failed", "IRLS failed to converge in " + std::to_string(opts.max_iter) + " iterations");
}

FittedGLM to_glm(CoreFit core, Family family, std::vector<std::string> names) {
    FittedGLM fit;
    fit.family = family;
    fit.beta = std::move(core.beta);
    fit.cov_beta = core.cov_factor * core.cov_factor.transpose();
    fit.sigma2 = core.sigma2;
    fit.iterations = core.iterations;
    if (names.empty()) {
        for (Eigen::Index j = 0; j < fit.beta.size(); ++j) names.push_back("b" + std::to_string(j));
    }
    fit.term_names = std::move(names);
    return fit;
}

CoreFit fit_core(Family family, const MatrixXd& X, const VectorXd& y, const IrlsOptions& irls,
                 const VectorXd* start, const std::vector<std::string>* names) {
    return family == Family::gaussian ? ols_core(X, y, names) : logistic_core(X, y, irls, start);
}

// eta = X beta; se = row norms of X S.
void predict_core(const CoreFit& fit, const MatrixXd& X, VectorXd& eta, VectorXd& se) {
    eta.noalias() = X * fit.beta;
    se = (X * fit.cov_factor).rowwise().norm();
}

} // namespace

FittedGLM fit_ols(const MatrixXd& X, const VectorXd& y, std::vector<std::string> names) {
    return to_glm(ols_core(X, y, names.empty() ? nullptr : &names), Family::gaussian, names);
}

FittedGLM fit_logistic(const MatrixXd& X, const VectorXd& y, std::vector<std::string> names, const IrlsOptions& opts,
                       const VectorXd* start) {
    return to_glm(logistic_core(X, y, opts, start), Family::binomial, std::move(names));
}

FittedGLM fit_glm(const Table& table, const ModelSpec& spec, Family family, const IrlsOptions& opts) {
    ModelSpec resolved = resolve_formula(spec, table);
    Design d = build_design(table, resolved);
    VectorXd y = response_vector(table, resolved);
    FittedGLM fit = family == Family::gaussian ? fit_ols(d.X, y, d.names) : fit_logistic(d.X, y, d.names, opts);
    fit.spec = std::move(resolved);
    return fit;
}

FittedGLM fit_ols(const Table& table, const ModelSpec& spec) { return fit_glm(table, spec, Family::gaussian); }

FittedGLM fit_logistic(const Table& table, const ModelSpec& spec, const IrlsOptions& opts) {
    return fit_glm(table, spec, Family::binomial, opts);
}

MeanPrediction predict_design(const FittedGLM& fit, const MatrixXd& X) {
    if (X.cols() != fit.beta.size()) {
        throw Error("shape_mismatch", "prediction design has the wrong number of columns");
    }
    const VectorXd eta = X * fit.beta;
    const MatrixXd xc = X * fit.cov_beta;
    MeanPrediction out;
    out.eta.resize(static_cast<std::size_t>(X.rows()));
    out.se.resize(out.eta.size());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        out.eta[static_cast<std::size_t>(i)] = eta(i);
        out.se[static_cast<std::size_t>(i)] = std::sqrt(std::max(0.0, xc.row(i).dot(X.row(i))));
    }
    return out;
}

MeanPrediction predict_mean(const FittedGLM& fit, const Table& grid) {
    return predict_design(fit, build_design(grid, fit.spec).X);
}

Domain default_grid_domain(const Table& grid, const ModelSpec& resolved) {
    if (!resolved.terms.empty() && grid.has(resolved.terms.front().var)) {
        const auto& x = grid.col(resolved.terms.front().var);
        bool increasing = !x.empty();
        for (std::size_t i = 1; i < x.size() && increasing; ++i) increasing = x[i] > x[i - 1];
        if (increasing) {
            return Domain::grid1d(x);
        }
    }
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < grid.n_rows(); ++i) labels.push_back(std::to_string(i + 1));
    return Domain::discrete(std::move(labels));
}

namespace {

// Shared loop: resample rows, refit, and record the studentized max deviation
// of `target(fit)` from the full-data target.
struct BootstrapTarget {
    virtual ~BootstrapTarget() = default;
    virtual void evaluate(const CoreFit& fit, VectorXd& value, VectorXd& se) const = 0;
};

struct MeanTarget final : BootstrapTarget {
    const MatrixXd* grid;
    void evaluate(const CoreFit& fit, VectorXd& value, VectorXd& se) const override {
        predict_core(fit, *grid, value, se);
    }
};

struct CoefTarget final : BootstrapTarget {
    void evaluate(const CoreFit& fit, VectorXd& value, VectorXd& se) const override {
        value = fit.beta;
        se = fit.cov_factor.rowwise().norm();
    }
};

std::vector<double> bootstrap_maxima(const MatrixXd& X, const VectorXd& y, Family family, const CoreFit& full,
                                     const BootstrapTarget& target, const BootstrapOptions& opts) {
    if (opts.n_boot < 100) {
        throw Error("invalid_argument", "n_boot must be at least 100");
    }
    VectorXd ref_value;
    VectorXd ref_se;
    target.evaluate(full, ref_value, ref_se);

    const std::size_t n = static_cast<std::size_t>(X.rows());
    const std::size_t cap = 10 * opts.n_boot;
    std::vector<double> maxima(opts.n_boot, std::numeric_limits<double>::quiet_NaN());
    std::vector<std::size_t> attempts(opts.n_boot, 0);

    parallel_for(opts.n_boot, [&](std::size_t b) {
        RngStream rng(opts.seed, b);
        MatrixXd xb(X.rows(), X.cols());
        VectorXd yb(X.rows());
        VectorXd value;
        VectorXd se;
        while (attempts[b] < cap) {
            ++attempts[b];
            for (std::size_t i = 0; i < n; ++i) {
                const auto k = static_cast<Eigen::Index>(rng.index(n));
                xb.row(static_cast<Eigen::Index>(i)) = X.row(k);
                yb(static_cast<Eigen::Index>(i)) = y(k);
            }
            CoreFit fit;
            try {
                fit = fit_core(family, xb, yb, opts.irls, family == Family::binomial ? &full.beta : nullptr, nullptr);
            } catch (const Error&) {
                continue; // rank loss or separation: redraw
            }
            target.evaluate(fit, value, se);
            const VectorXd delta = value - ref_value;
            try {
                maxima[b] = max_abs_standardized(std::span<const double>(delta.data(), static_cast<std::size_t>(delta.size())),
                                                 std::span<const double>(se.data(), static_cast<std::size_t>(se.size())));
            } catch (const Error&) {
                continue; // zero SE with a nonzero deviation: redraw
            }
            if (!std::isfinite(maxima[b])) {
                continue;
            }
            return;
        }
    });
    std::size_t total = 0;
    for (std::size_t a : attempts) total += a;
    const bool all_done = std::all_of(maxima.begin(), maxima.end(), [](double m) { return std::isfinite(m); });
    if (total > cap || !all_done) {
        throw Error("bootstrap_failed", "bootstrap refits failed too often (" + std::to_string(total) + " attempts for " +
                                            std::to_string(opts.n_boot) + " replicates)");
    }
    if (total > opts.n_boot) {
        warn(std::to_string(total - opts.n_boot) + " bootstrap refits failed and were redrawn");
    }
    return maxima;
}

Field to_field(const VectorXd& v) { return Field(v.data(), v.data() + v.size()); }

double response_scale(const VectorXd& y) {
    const double m = y.size() ? y.cwiseAbs().maxCoeff() : 0.0;
    return m > 0.0 ? m : 1.0;
}

void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw Error("invalid_argument", "alpha must lie in (0, 1)");
    }
}

} // namespace

SCBand scb_mean_bootstrap(const Table& data, const ModelSpec& spec, const Table& grid, Family family,
                          const BootstrapOptions& opts) {
    check_alpha(opts.alpha);
    if (grid.n_rows() == 0) {
        throw Error("invalid_argument", "prediction grid is empty");
    }
    const ModelSpec resolved = resolve_formula(spec, data);
    const Design design = build_design(data, resolved);
    const VectorXd y = response_vector(data, resolved);
    const MatrixXd x_grid = build_design(grid, resolved).X;
    const MatrixXd x_boot = opts.grid_boot ? build_design(*opts.grid_boot, resolved).X : x_grid;
    Domain domain = opts.domain ? *opts.domain : default_grid_domain(grid, resolved);
    if (domain.size() != grid.n_rows()) {
        throw Error("shape_mismatch", "band domain does not match the prediction grid");
    }

    const CoreFit full = fit_core(family, design.X, y, opts.irls, nullptr, &design.names);
    VectorXd eta;
    VectorXd se;
    predict_core(full, x_grid, eta, se);

    SCBand band;
    const bool degenerate = family == Family::gaussian && std::sqrt(full.sigma2) <= 1e-9 * response_scale(y);
    if (degenerate) {
        band = assemble_band(to_field(eta), Field(grid.n_rows(), 0.0), 0.0, 1.0, opts.alpha, std::move(domain));
        band.degenerate = true;
    } else {
        MeanTarget target;
        target.grid = &x_boot;
        const auto maxima = bootstrap_maxima(design.X, y, family, full, target, opts);
        const double a = empirical_quantile(maxima, 1.0 - opts.alpha);
        band = family == Family::gaussian
                   ? assemble_band(to_field(eta), to_field(se), a, 1.0, opts.alpha, std::move(domain))
                   : assemble_logit_band(to_field(eta), to_field(se), a, 1.0, opts.alpha, std::move(domain));
    }
    band.method = family == Family::gaussian ? "bootstrap_linear_outcome" : "bootstrap_logistic_outcome";
    return band;
}

SCBand scb_coef_bootstrap(const Table& data, const ModelSpec& spec, Family family, const BootstrapOptions& opts) {
    check_alpha(opts.alpha);
    const ModelSpec resolved = resolve_formula(spec, data);
    const Design design = build_design(data, resolved);
    const VectorXd y = response_vector(data, resolved);
    const CoreFit full = fit_core(family, design.X, y, opts.irls, nullptr, &design.names);
    const VectorXd se = full.cov_factor.rowwise().norm();
    Domain domain = opts.domain ? *opts.domain : Domain::discrete(design.names);

    SCBand band;
    const bool degenerate = family == Family::gaussian && std::sqrt(full.sigma2) <= 1e-9 * response_scale(y);
    if (degenerate) {
        band = assemble_band(to_field(full.beta), Field(design.names.size(), 0.0), 0.0, 1.0, opts.alpha,
                             std::move(domain));
        band.degenerate = true;
    } else {
        const auto maxima = bootstrap_maxima(design.X, y, family, full, CoefTarget{}, opts);
        const double a = empirical_quantile(maxima, 1.0 - opts.alpha);
        band = assemble_band(to_field(full.beta), to_field(se), a, 1.0, opts.alpha, std::move(domain));
    }
    band.method = family == Family::gaussian ? "bootstrap_linear_coef" : "bootstrap_logistic_coef";
    return band;
}

} // namespace scb
