#include "scb/geospatial.hpp"

#include "scb/band_io.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

namespace scb {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string spot_name(const SpatialObservations& d, std::size_t ix, std::size_t iy) {
    return "(" + format_real(d.x[ix]) + ", " + format_real(d.y[iy]) + ")";
}

std::vector<double> parse_cube_text(const std::string& text) {
    std::vector<double> out;
    std::size_t i = 0;
    const auto sep = [](char c) { return c == ',' || c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == ';'; };
    while (i < text.size()) {
        while (i < text.size() && sep(text[i])) ++i;
        if (i >= text.size()) break;
        std::size_t j = i;
        while (j < text.size() && !sep(text[j])) ++j;
        const std::string tok = text.substr(i, j - i);
        if (tok == "NA" || tok == "NaN" || tok == "nan" || tok == "null") {
            out.push_back(kNaN);
        } else {
            double v = 0.0;
            const char* first = tok.data() + (tok[0] == '+' ? 1 : 0);
            auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), v);
            if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
                throw Error("parse_error", "cannot parse cube value '" + tok + "'");
            }
            out.push_back(v);
        }
        i = j;
    }
    return out;
}

} // namespace

Domain SpatialObservations::domain() const {
    Mask m;
    if (!mask.empty()) {
        m.assign(nx() * ny(), 0);
        for (std::size_t ix = 0; ix < nx(); ++ix)
            for (std::size_t iy = 0; iy < ny(); ++iy) m[iy * nx() + ix] = mask[ix * ny() + iy];
    }
    return Domain::grid2d(x, y, std::move(m));
}

void SpatialObservations::validate(std::size_t n_design_cols) const {
    if (x.empty() || y.empty()) throw Error("invalid_argument", "spatial grid needs at least one x and one y value");
    if (cube.size() != n_obs * nx() * ny()) {
        throw Error("shape_mismatch", "cube has " + std::to_string(cube.size()) + " values, expected " +
                                          std::to_string(n_obs * nx() * ny()));
    }
    if (!mask.empty() && mask.size() != nx() * ny()) throw Error("shape_mismatch", "mask does not match the grid");
    (void)domain(); // axis and mask checks
    if (n_obs < n_design_cols + 1) {
        throw Error("invalid_argument", "need at least " + std::to_string(n_design_cols + 1) + " observations per spot");
    }
    for (std::size_t ix = 0; ix < nx(); ++ix) {
        for (std::size_t iy = 0; iy < ny(); ++iy) {
            if (!spot_included(ix, iy)) continue;
            for (std::size_t o = 0; o < n_obs; ++o) {
                if (!std::isfinite(value(o, ix, iy))) {
                    throw Error("invalid_argument", "non-finite value at unmasked spot " + spot_name(*this, ix, iy));
                }
            }
        }
    }
}

SpatialObservations read_spatial(const std::string& header_path) {
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(read_text_file(header_path));
    } catch (const nlohmann::json::exception& e) {
        throw Error("parse_error", "invalid spatial header: " + std::string(e.what()));
    }
    SpatialObservations d;
    try {
        d.x = h.at("x").get<std::vector<double>>();
        d.y = h.at("y").get<std::vector<double>>();
        const auto shape = h.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 3 || shape[1] != d.x.size() || shape[2] != d.y.size()) {
            throw Error("shape_mismatch", "header shape must be [n_obs, len(x), len(y)]");
        }
        d.n_obs = shape[0];
        if (h.contains("mask") && !h["mask"].is_null()) {
            const auto& m = h["mask"];
            if (m.size() != d.nx()) throw Error("shape_mismatch", "mask must have one row per x value");
            for (const auto& row : m) {
                if (row.size() != d.ny()) throw Error("shape_mismatch", "mask rows must have one entry per y value");
                for (const auto& v : row) d.mask.push_back(v.is_boolean() ? v.get<bool>() : v.get<double>() != 0.0);
            }
        }
        std::filesystem::path data_path = h.at("data").get<std::string>();
        if (data_path.is_relative()) data_path = std::filesystem::path(header_path).parent_path() / data_path;
        const std::string format = h.value("format", data_path.extension() == ".bin" ? "binary" : "csv");
        if (format == "binary") {
            std::ifstream in(data_path, std::ios::binary);
            if (!in) throw Error("io_error", "cannot open '" + data_path.string() + "'");
            const std::size_t count = d.n_obs * d.nx() * d.ny();
            std::vector<unsigned char> raw(count * 8);
            in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
            if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
                throw Error("shape_mismatch", "binary cube is shorter than the declared shape");
            }
            d.cube.resize(count);
            for (std::size_t k = 0; k < count; ++k) {
                std::uint64_t bits = 0;
                for (int b = 7; b >= 0; --b) bits = (bits << 8) | raw[k * 8 + static_cast<std::size_t>(b)];
                std::memcpy(&d.cube[k], &bits, 8);
            }
        } else if (format == "csv") {
            d.cube = parse_cube_text(read_text_file(data_path.string()));
        } else {
            throw Error("invalid_argument", "unknown cube format '" + format + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("parse_error", "invalid spatial header: " + std::string(e.what()));
    }
    if (d.cube.size() != d.n_obs * d.nx() * d.ny()) {
        throw Error("shape_mismatch", "cube has " + std::to_string(d.cube.size()) + " values, expected " +
                                          std::to_string(d.n_obs * d.nx() * d.ny()));
    }
    return d;
}

CorrelationKind parse_correlation_kind(std::string_view text) {
    if (text == "none") return CorrelationKind::none;
    if (text == "ar1") return CorrelationKind::ar1;
    if (text == "compsymm" || text == "comp_symm") return CorrelationKind::comp_symm;
    if (text == "explicit") return CorrelationKind::explicit_cov;
    throw Error("invalid_argument", "unknown correlation structure '" + std::string(text) + "'");
}

Eigen::MatrixXd build_correlation(CorrelationKind kind, double rho, std::size_t n, const std::vector<int>& groups) {
    if (n == 0) throw Error("invalid_argument", "correlation matrix needs n >= 1");
    if (!groups.empty() && groups.size() != n) throw Error("shape_mismatch", "grouping must label every observation");
    const auto N = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd R = Eigen::MatrixXd::Identity(N, N);
    if (kind == CorrelationKind::none) return R;
    if (kind == CorrelationKind::explicit_cov) {
        throw Error("invalid_argument", "explicit covariances are supplied directly, not built");
    }
    if (!(rho > -1.0 && rho < 1.0)) throw Error("invalid_argument", "correlation parameter must lie in (-1, 1)");
    const auto group_of = [&](std::size_t i) { return groups.empty() ? 0 : groups[i]; };
    if (kind == CorrelationKind::comp_symm) {
        std::size_t largest = 0;
        for (std::size_t i = 0; i < n; ++i) {
            largest = std::max<std::size_t>(largest, static_cast<std::size_t>(
                std::count_if(groups.begin(), groups.end(), [&](int g) { return g == group_of(i); })));
        }
        if (groups.empty()) largest = n;
        if (largest > 1 && rho <= -1.0 / static_cast<double>(largest - 1)) {
            throw Error("invalid_argument", "compound symmetry with rho = " + format_real(rho) +
                                                " is not positive definite for groups of size " + std::to_string(largest));
        }
    }
    // Position within group drives the AR(1) lag.
    std::vector<std::size_t> pos(n, 0);
    {
        std::vector<std::pair<int, std::size_t>> seen;
        for (std::size_t i = 0; i < n; ++i) {
            auto it = std::find_if(seen.begin(), seen.end(), [&](const auto& p) { return p.first == group_of(i); });
            if (it == seen.end()) {
                seen.emplace_back(group_of(i), 1);
                pos[i] = 0;
            } else {
                pos[i] = it->second++;
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j || group_of(i) != group_of(j)) continue;
            const auto lag = static_cast<double>(pos[i] > pos[j] ? pos[i] - pos[j] : pos[j] - pos[i]);
            R(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                kind == CorrelationKind::ar1 ? std::pow(rho, lag) : rho;
        }
    }
    return R;
}

GlsSpotFit fit_gls_spot(const Eigen::MatrixXd& X, const Eigen::VectorXd& z, const Eigen::MatrixXd& V) {
    const auto n = X.rows();
    const auto p = X.cols();
    if (z.size() != n || V.rows() != n || V.cols() != n) throw Error("shape_mismatch", "design, outcome and covariance disagree");
    if (n <= p) throw Error("invalid_argument", "need more observations than design columns");
    Eigen::LLT<Eigen::MatrixXd> llt(V);
    if (llt.info() != Eigen::Success) throw Error("singular_covariance", "covariance is not positive definite");
    const Eigen::MatrixXd Xw = llt.matrixL().solve(X);
    const Eigen::VectorXd zw = llt.matrixL().solve(z);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
    qr.setThreshold(1e-10);
    if (qr.rank() < p) throw Error("rank_deficient", "design is not of full column rank");
    GlsSpotFit out;
    out.beta = qr.solve(zw);
    out.residuals = zw - Xw * out.beta;
    out.sigma2 = out.residuals.squaredNorm() / static_cast<double>(n - p);
    const Eigen::MatrixXd R = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
    const Eigen::MatrixXd Rinv = R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
    const Eigen::MatrixXd unscaled = qr.colsPermutation() * (Rinv * Rinv.transpose()) * qr.colsPermutation().transpose();
    out.cov = out.sigma2 * unscaled;
    out.hat_map = Xw * unscaled;
    return out;
}

double lag1_autocorrelation(const Eigen::VectorXd& e, const std::vector<int>& groups) {
    double num = 0.0;
    double den = e.squaredNorm();
    for (Eigen::Index i = 0; i + 1 < e.size(); ++i) {
        if (!groups.empty() && groups[static_cast<std::size_t>(i)] != groups[static_cast<std::size_t>(i + 1)]) continue;
        num += e(i) * e(i + 1);
    }
    return den > 0.0 ? num / den : 0.0;
}

GLSFit fit_gls(const SpatialObservations& data, const Eigen::MatrixXd& X, const Eigen::VectorXd& w,
               const CorrelationSpec& corr) {
    data.validate(static_cast<std::size_t>(X.cols()));
    if (static_cast<std::size_t>(X.rows()) != data.n_obs) {
        throw Error("shape_mismatch", "design has " + std::to_string(X.rows()) + " rows for " +
                                          std::to_string(data.n_obs) + " observations");
    }
    if (w.size() != X.cols()) throw Error("shape_mismatch", "weight vector length must equal the number of design columns");
    if (!corr.groups.empty() && corr.groups.size() != data.n_obs) {
        throw Error("shape_mismatch", "grouping must label every observation");
    }
    const std::size_t nx = data.nx();
    const std::size_t ny = data.ny();
    const std::size_t cells = nx * ny;
    if (corr.kind == CorrelationKind::explicit_cov && corr.cov.size() != 1 && corr.cov.size() != cells) {
        throw Error("shape_mismatch", "explicit covariances must be one shared matrix or one per spot");
    }

    GLSFit fit;
    fit.domain = data.domain();
    fit.X = X;
    fit.w = w;
    fit.beta.resize(cells);
    fit.cov.resize(cells);
    fit.rho.assign(cells, kNaN);
    fit.eta.assign(cells, kNaN);
    fit.zeta.assign(cells, kNaN);
    const auto n = static_cast<Eigen::Index>(data.n_obs);
    fit.influence = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(cells));
    const double nd = static_cast<double>(n);
    std::vector<std::string> failures(cells);

    // Correlation shared across spots when rho is fixed.
    std::optional<Eigen::MatrixXd> shared;
    if (corr.kind == CorrelationKind::none) {
        shared = Eigen::MatrixXd::Identity(n, n);
    } else if (corr.kind == CorrelationKind::explicit_cov && corr.cov.size() == 1) {
        shared = corr.cov.front();
    } else if (corr.kind != CorrelationKind::explicit_cov && corr.rho) {
        shared = build_correlation(corr.kind, *corr.rho, data.n_obs, corr.groups);
    }
    std::size_t largest_group = data.n_obs;
    if (!corr.groups.empty()) {
        largest_group = 0;
        for (int g : corr.groups) {
            largest_group = std::max<std::size_t>(largest_group, static_cast<std::size_t>(std::count(corr.groups.begin(), corr.groups.end(), g)));
        }
    }

    parallel_for(cells, [&](std::size_t cell) {
        const std::size_t iy = cell / nx;
        const std::size_t ix = cell % nx;
        if (!fit.domain.included(cell)) return;
        Eigen::VectorXd z(n);
        for (Eigen::Index o = 0; o < n; ++o) z(o) = data.value(static_cast<std::size_t>(o), ix, iy);
        try {
            Eigen::MatrixXd V;
            double rho = 0.0;
            if (shared) {
                V = *shared;
                rho = corr.rho.value_or(0.0);
            } else if (corr.kind == CorrelationKind::explicit_cov) {
                V = corr.cov[ix * ny + iy];
            } else {
                const GlsSpotFit ols = fit_gls_spot(X, z, Eigen::MatrixXd::Identity(n, n));
                rho = std::clamp(lag1_autocorrelation(ols.residuals, corr.groups), -0.99, 0.99);
                if (corr.kind == CorrelationKind::comp_symm && largest_group > 1) {
                    rho = std::max(rho, -1.0 / static_cast<double>(largest_group - 1) + 1e-6);
                }
                V = build_correlation(corr.kind, rho, data.n_obs, corr.groups);
            }
            GlsSpotFit f = fit_gls_spot(X, z, V);
            fit.rho[cell] = rho;
            fit.eta[cell] = w.dot(f.beta);
            fit.zeta[cell] = std::sqrt(std::max(0.0, w.dot(f.cov * w)));
            fit.influence.col(static_cast<Eigen::Index>(cell)) = nd * (f.hat_map * w).cwiseProduct(f.residuals);
            fit.beta[cell] = std::move(f.beta);
            fit.cov[cell] = std::move(f.cov);
        } catch (const Error& e) {
            failures[cell] = spot_name(data, ix, iy) + ": " + e.what();
        }
    });
    std::string failed;
    std::size_t n_failed = 0;
    for (const auto& f : failures) {
        if (f.empty()) continue;
        if (n_failed < 10) failed += (failed.empty() ? "" : "; ") + f;
        ++n_failed;
    }
    if (n_failed > 0) {
        throw Error("spot_fit_failed", std::to_string(n_failed) + " spot fit(s) failed: " + failed);
    }
    return fit;
}

SCBand scb_gls(const SpatialObservations& data, const Eigen::MatrixXd& X, const Eigen::VectorXd& w,
               const CorrelationSpec& corr, const GlsBandOptions& opts) {
    if (!(opts.alpha > 0.0 && opts.alpha < 1.0)) throw Error("invalid_argument", "alpha must lie in (0, 1)");
    const GLSFit fit = fit_gls(data, X, w, corr);
    const Mask& mask = fit.domain.mask();
    const std::vector<double> maxima =
        multiplier_maxima(fit.influence, opts.weights, opts.sd, opts.nboot, opts.seed, mask.empty() ? nullptr : &mask);
    const double q = empirical_quantile(maxima, 1.0 - opts.alpha);
    Field eta = fit.eta;
    Field se = fit.zeta;
    for (std::size_t i = 0; i < eta.size(); ++i) {
        if (!fit.domain.included(i)) eta[i] = se[i] = 0.0;
    }
    SCBand band = assemble_band(std::move(eta), std::move(se), q, 1.0, opts.alpha, fit.domain);
    band.method = "gls_multiplier";
    band.degenerate = q == 0.0;
    return band;
}

} // namespace scb
