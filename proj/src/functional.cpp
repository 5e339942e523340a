#include "scb/functional.hpp"

#include "scb/band_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace scb {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double parse_number(const std::string& cell, const std::string& what) {
    std::string s = cell;
    s.erase(0, s.find_first_not_of(" \t"));
    s.erase(s.find_last_not_of(" \t") + 1);
    if (s.empty() || s == "NA" || s == "NaN" || s == "nan") return kNaN;
    double v = 0.0;
    const char* first = s.data();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw Error("parse_error", "cannot parse " + what + " value '" + cell + "'");
    }
    return v;
}

double grid_step(const std::vector<double>& grid) {
    if (grid.size() < 2) return 1.0;
    return (grid.back() - grid.front()) / static_cast<double>(grid.size() - 1);
}

// Column-wise covariance from pairwise-complete observations.
Eigen::MatrixXd pairwise_covariance(const Eigen::MatrixXd& Y, Eigen::VectorXd& mean) {
    const Eigen::Index n = Y.rows();
    const Eigen::Index T = Y.cols();
    mean.setZero(T);
    for (Eigen::Index t = 0; t < T; ++t) {
        double s = 0.0;
        int c = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!std::isnan(Y(i, t))) {
                s += Y(i, t);
                ++c;
            }
        }
        mean(t) = c > 0 ? s / c : 0.0;
    }
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(T, T);
    for (Eigen::Index a = 0; a < T; ++a) {
        for (Eigen::Index b = a; b < T; ++b) {
            double s = 0.0;
            int c = 0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double ya = Y(i, a);
                const double yb = Y(i, b);
                if (std::isnan(ya) || std::isnan(yb)) continue;
                s += (ya - mean(a)) * (yb - mean(b));
                ++c;
            }
            C(a, b) = C(b, a) = c > 1 ? s / (c - 1) : 0.0;
        }
    }
    return C;
}

struct Eig {
    Eigen::VectorXd values;  // descending, clamped at 0
    Eigen::MatrixXd vectors; // matching columns
};

Eig eigen_descending(const Eigen::MatrixXd& C) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
    if (es.info() != Eigen::Success) {
        throw Error("numerical_error", "eigen-decomposition failed");
    }
    const Eigen::Index T = C.rows();
    Eig out{Eigen::VectorXd(T), Eigen::MatrixXd(T, T)};
    for (Eigen::Index k = 0; k < T; ++k) {
        out.values(k) = std::max(0.0, es.eigenvalues()(T - 1 - k));
        Eigen::VectorXd v = es.eigenvectors().col(T - 1 - k);
        // Sign convention: largest-magnitude entry positive.
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v(imax) < 0) v = -v;
        out.vectors.col(k) = v;
    }
    return out;
}

std::size_t choose_k(const Eigen::VectorXd& ev, double pve) {
    const double total = ev.sum();
    if (!(total > 0.0)) return 0;
    double acc = 0.0;
    for (Eigen::Index k = 0; k < ev.size(); ++k) {
        acc += ev(k);
        if (acc >= pve * total * (1.0 - 1e-12)) return static_cast<std::size_t>(k + 1);
    }
    return static_cast<std::size_t>(ev.size());
}

// Rows of the design for one subject: z ⊗ B.
Eigen::VectorXd kron_vec(const Eigen::VectorXd& z, const Eigen::VectorXd& u) {
    Eigen::VectorXd out(z.size() * u.size());
    for (Eigen::Index a = 0; a < z.size(); ++a) out.segment(a * u.size(), u.size()) = z(a) * u;
    return out;
}

Eigen::MatrixXd design_z(const FunctionalDataset& data, const std::vector<std::size_t>& cols) {
    const Eigen::Index n = static_cast<Eigen::Index>(data.n_subjects());
    Eigen::MatrixXd Z(n, static_cast<Eigen::Index>(cols.size() + 1));
    Z.col(0).setOnes();
    for (std::size_t j = 0; j < cols.size(); ++j) Z.col(static_cast<Eigen::Index>(j + 1)) = data.covariates.col(static_cast<Eigen::Index>(cols[j]));
    return Z;
}

std::vector<Eigen::Index> observed_index(const Eigen::MatrixXd& Y, Eigen::Index i) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index t = 0; t < Y.cols(); ++t) {
        if (!std::isnan(Y(i, t))) idx.push_back(t);
    }
    return idx;
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& M, const std::vector<Eigen::Index>& idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), M.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = M.row(idx[r]);
    return out;
}

Eigen::MatrixXd sub_square(const Eigen::MatrixXd& M, const std::vector<Eigen::Index>& idx) {
    const Eigen::Index m = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd out(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
        for (Eigen::Index b = 0; b < m; ++b) out(a, b) = M(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
    return out;
}

Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& M, const char* what) {
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() != Eigen::Success) {
        throw Error("numerical_error", std::string(what) + " is not positive definite");
    }
    Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(M.rows(), M.cols()));
    return (inv + inv.transpose()) / 2.0;
}

} // namespace

// ---------------------------------------------------------------------------
// Dataset

bool FunctionalDataset::has_missing() const { return Y.array().isNaN().any(); }

std::size_t FunctionalDataset::covariate_index(std::string_view name) const {
    for (std::size_t j = 0; j < covariate_names.size(); ++j) {
        if (covariate_names[j] == name) return j;
    }
    throw Error("missing_column", "unknown covariate '" + std::string(name) + "'");
}

void FunctionalDataset::validate() const {
    if (grid.empty()) throw Error("invalid_argument", "empty time grid");
    for (std::size_t t = 1; t < grid.size(); ++t) {
        if (!(grid[t] > grid[t - 1])) throw Error("invalid_argument", "time grid must be strictly increasing");
    }
    if (static_cast<std::size_t>(Y.cols()) != grid.size()) {
        throw Error("shape_mismatch", "outcome matrix has " + std::to_string(Y.cols()) + " columns for a grid of " +
                                          std::to_string(grid.size()));
    }
    if (ids.size() != n_subjects()) throw Error("shape_mismatch", "subject id count does not match the outcome matrix");
    if (covariates.rows() != Y.rows() || static_cast<std::size_t>(covariates.cols()) != covariate_names.size()) {
        throw Error("shape_mismatch", "covariate matrix does not match subjects and names");
    }
    if (!covariates.allFinite()) throw Error("invalid_argument", "covariates must be finite");
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
        if (Y.row(i).array().isNaN().all()) {
            throw Error("invalid_argument", "subject '" + ids[static_cast<std::size_t>(i)] + "' has no observed values");
        }
    }
    if (Y.array().isInf().any()) throw Error("invalid_argument", "outcome values must be finite or missing");
}

FunctionalDataset functional_from_long(const CsvFrame& frame, const std::string& id_col, const std::string& time_col,
                                       const std::string& outcome_col, std::vector<std::string> covariates) {
    const std::size_t ci = frame.column(id_col);
    const std::size_t ct = frame.column(time_col);
    const std::size_t cy = frame.column(outcome_col);
    if (covariates.empty()) {
        for (const auto& h : frame.header) {
            if (h != id_col && h != time_col && h != outcome_col) covariates.push_back(h);
        }
    }
    std::vector<std::size_t> cc;
    for (const auto& c : covariates) cc.push_back(frame.column(c));

    std::vector<std::string> ids;
    std::map<std::string, std::size_t> id_pos;
    std::vector<double> times;
    for (const auto& row : frame.rows) {
        if (id_pos.emplace(row[ci], ids.size()).second) ids.push_back(row[ci]);
        const double t = parse_number(row[ct], time_col);
        if (std::isnan(t)) throw Error("parse_error", "missing time value for subject '" + row[ci] + "'");
        times.push_back(t);
    }
    std::vector<double> grid = times;
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    FunctionalDataset d;
    d.ids = ids;
    d.grid = grid;
    d.covariate_names = covariates;
    d.Y = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(grid.size()), kNaN);
    d.covariates = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(cc.size()), kNaN);
    std::vector<std::vector<std::uint8_t>> seen(ids.size(), std::vector<std::uint8_t>(grid.size(), 0));
    for (std::size_t r = 0; r < frame.rows.size(); ++r) {
        const auto& row = frame.rows[r];
        const auto i = static_cast<Eigen::Index>(id_pos.at(row[ci]));
        const auto t = static_cast<Eigen::Index>(std::lower_bound(grid.begin(), grid.end(), times[r]) - grid.begin());
        auto& flag = seen[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
        if (flag) {
            throw Error("invalid_argument", "duplicate observation for subject '" + row[ci] + "' at time " + row[ct]);
        }
        flag = 1;
        d.Y(i, t) = parse_number(row[cy], outcome_col);
        for (std::size_t j = 0; j < cc.size(); ++j) {
            const double v = parse_number(row[cc[j]], covariates[j]);
            double& slot = d.covariates(i, static_cast<Eigen::Index>(j));
            if (std::isnan(slot)) {
                slot = v;
            } else if (slot != v) {
                throw Error("invalid_argument", "covariate '" + covariates[j] + "' varies within subject '" + row[ci] + "'");
            }
        }
    }
    d.validate();
    return d;
}

// ---------------------------------------------------------------------------
// Basis

Eigen::MatrixXd bspline_basis(const std::vector<double>& t, std::size_t n_basis, double lo, double hi) {
    constexpr int degree = 3;
    if (n_basis < degree + 1) throw Error("invalid_argument", "a cubic B-spline basis needs at least 4 functions");
    if (!(hi > lo)) throw Error("invalid_argument", "basis range must have positive length");
    const std::size_t n_inner = n_basis - degree + 1; // distinct knots including both ends
    std::vector<double> knots;
    for (int k = 0; k < degree; ++k) knots.push_back(lo);
    for (std::size_t j = 0; j < n_inner; ++j) {
        knots.push_back(lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(n_inner - 1));
    }
    knots.back() = hi;
    for (int k = 0; k < degree; ++k) knots.push_back(hi);

    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(t.size()), static_cast<Eigen::Index>(n_basis));
    for (std::size_t r = 0; r < t.size(); ++r) {
        const double x = t[r];
        if (x < lo - 1e-12 * (hi - lo) || x > hi + 1e-12 * (hi - lo)) {
            throw Error("invalid_argument", "evaluation point outside the basis range");
        }
        // Span s with knots[s] <= x < knots[s+1], clamped to the last span at hi.
        std::size_t s = degree;
        while (s + 1 < n_basis && x >= knots[s + 1]) ++s;
        double N[degree + 1] = {1.0, 0.0, 0.0, 0.0};
        double left[degree + 1];
        double right[degree + 1];
        for (int j = 1; j <= degree; ++j) {
            left[j] = x - knots[s + 1 - j];
            right[j] = knots[s + j] - x;
            double saved = 0.0;
            for (int k = 0; k < j; ++k) {
                const double temp = N[k] / (right[k + 1] + left[j - k]);
                N[k] = saved + right[k + 1] * temp;
                saved = left[j - k] * temp;
            }
            N[j] = saved;
        }
        for (int k = 0; k <= degree; ++k) B(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(s - degree + k)) = N[k];
    }
    return B;
}

Eigen::MatrixXd difference_penalty(std::size_t n_basis, int order) {
    Eigen::MatrixXd D = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n_basis), static_cast<Eigen::Index>(n_basis));
    for (int o = 0; o < order; ++o) {
        Eigen::MatrixXd next = D.bottomRows(D.rows() - 1) - D.topRows(D.rows() - 1);
        D = next;
    }
    return D.transpose() * D;
}

// ---------------------------------------------------------------------------
// FPCA

FpcaResult fpca(const Eigen::MatrixXd& Y, const std::vector<double>& grid, double pve, int fixed_k) {
    if (static_cast<std::size_t>(Y.cols()) != grid.size()) throw Error("shape_mismatch", "grid does not match data");
    if (!(pve > 0.0 && pve <= 1.0)) throw Error("invalid_argument", "pve must lie in (0, 1]");
    FpcaResult out;
    out.dt = grid_step(grid);
    const Eigen::MatrixXd C = pairwise_covariance(Y, out.mean);
    const Eig e = eigen_descending(C);
    out.eigenvalues = e.values;
    std::size_t k = fixed_k >= 0 ? std::min<std::size_t>(static_cast<std::size_t>(fixed_k), static_cast<std::size_t>(Y.cols()))
                                 : choose_k(e.values, pve);
    const Eigen::Index T = Y.cols();
    const auto K = static_cast<Eigen::Index>(k);
    out.noise_variance = K < T ? e.values.tail(T - K).mean() : 0.0;
    out.phi = e.vectors.leftCols(K) / std::sqrt(out.dt);
    out.sigma2 = e.values.head(K) * out.dt;
    return out;
}

FosrCovariance parse_fosr_covariance(std::string_view text) {
    if (text == "sandwich") return FosrCovariance::sandwich;
    if (text == "gls") return FosrCovariance::gls;
    throw Error("invalid_argument", "unknown FoSR covariance '" + std::string(text) + "'");
}

std::vector<double> default_lambda_ladder() {
    std::vector<double> ladder;
    for (int k = 0; k <= 20; ++k) ladder.push_back(std::pow(10.0, -6.0 + 0.5 * k));
    return ladder;
}

// ---------------------------------------------------------------------------
// Fit

Eigen::VectorXd FoSRFit::coefficient_function(std::size_t j) const {
    const auto kb = static_cast<Eigen::Index>(n_basis());
    return basis.B * theta.segment(static_cast<Eigen::Index>(j) * kb, kb);
}

Eigen::MatrixXd FoSRFit::fitted(const Eigen::MatrixXd& x) const {
    const auto kb = static_cast<Eigen::Index>(n_basis());
    const auto terms = static_cast<Eigen::Index>(n_terms());
    const Eigen::Map<const Eigen::MatrixXd> Theta(theta.data(), kb, terms);
    Eigen::MatrixXd Z(x.rows(), terms);
    Z.col(0).setOnes();
    Z.rightCols(terms - 1) = x;
    return Z * (basis.B * Theta).transpose();
}

FoSRFit fit_fosr(const FunctionalDataset& data, const std::vector<std::string>& covariates, const FosrOptions& opts) {
    data.validate();
    const auto n = static_cast<Eigen::Index>(data.n_subjects());
    const auto T = static_cast<Eigen::Index>(data.n_times());
    if (n < 10) throw Error("invalid_argument", "function-on-scalar regression needs at least 10 subjects");
    if (opts.lambda_ladder.empty()) throw Error("invalid_argument", "empty smoothing-parameter ladder");

    std::vector<std::size_t> cols;
    for (const auto& c : covariates) cols.push_back(data.covariate_index(c));
    const Eigen::MatrixXd Z = design_z(data, cols);
    const auto terms = Z.cols();

    FoSRFit fit;
    fit.grid = data.grid;
    fit.covariates = covariates;
    const double lo = data.grid.front();
    const double hi = data.grid.size() > 1 ? data.grid.back() : lo + 1.0;
    fit.basis.B = bspline_basis(data.grid, opts.n_basis, lo, hi);
    fit.basis.penalty = difference_penalty(opts.n_basis);
    const Eigen::MatrixXd& B = fit.basis.B;
    const auto kb = B.cols();
    const auto P = kb * terms;
    const auto penalty_for = [&](const std::vector<double>& lam) {
        Eigen::MatrixXd S = Eigen::MatrixXd::Zero(P, P);
        for (Eigen::Index a = 0; a < terms; ++a) S.block(a * kb, a * kb, kb, kb) = lam[static_cast<std::size_t>(a)] * fit.basis.penalty;
        return S;
    };

    // Subject-level pieces: observed rows of B and outcomes.
    const bool complete = !data.has_missing();
    std::vector<std::vector<Eigen::Index>> observed(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) observed[static_cast<std::size_t>(i)] = observed_index(data.Y, i);
    const auto subject_y = [&](Eigen::Index i) {
        const auto& idx = observed[static_cast<std::size_t>(i)];
        Eigen::VectorXd yo(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t r = 0; r < idx.size(); ++r) yo(static_cast<Eigen::Index>(r)) = data.Y(i, idx[r]);
        return yo;
    };
    // Adds sum_i (z_i z_i') kron G_i, with G_i from a per-subject callback.
    const auto accumulate = [&](Eigen::MatrixXd& M, const auto& block_of) {
        if (complete) {
            const Eigen::MatrixXd G = block_of(Eigen::Index{0});
            const Eigen::MatrixXd ZtZ = Z.transpose() * Z;
            for (Eigen::Index a = 0; a < terms; ++a)
                for (Eigen::Index b = 0; b < terms; ++b) M.block(a * kb, b * kb, kb, kb) += ZtZ(a, b) * G;
            return;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::MatrixXd G = block_of(i);
            for (Eigen::Index a = 0; a < terms; ++a)
                for (Eigen::Index b = 0; b < terms; ++b) M.block(a * kb, b * kb, kb, kb) += Z(i, a) * Z(i, b) * G;
        }
    };

    // Step 1: penalized least squares under working independence.
    Eigen::MatrixXd XtX = Eigen::MatrixXd::Zero(P, P);
    Eigen::VectorXd Xty = Eigen::VectorXd::Zero(P);
    double n_obs = 0.0;
    accumulate(XtX, [&](Eigen::Index i) {
        const Eigen::MatrixXd Bo = complete ? B : rows_of(B, observed[static_cast<std::size_t>(i)]);
        return Eigen::MatrixXd(Bo.transpose() * Bo);
    });
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::MatrixXd Bo = complete ? B : rows_of(B, observed[static_cast<std::size_t>(i)]);
        const Eigen::VectorXd h = Bo.transpose() * subject_y(i);
        for (Eigen::Index a = 0; a < terms; ++a) Xty.segment(a * kb, kb) += Z(i, a) * h;
        n_obs += static_cast<double>(observed[static_cast<std::size_t>(i)].size());
    }

    const auto residuals_for = [&](const Eigen::VectorXd& th) {
        const Eigen::Map<const Eigen::MatrixXd> Theta(th.data(), kb, terms);
        return Eigen::MatrixXd(data.Y - Z * (B * Theta).transpose());
    };
    const auto rss_of = [](const Eigen::MatrixXd& E) {
        double s = 0.0;
        for (Eigen::Index k = 0; k < E.size(); ++k) {
            if (!std::isnan(E.data()[k])) s += E.data()[k] * E.data()[k];
        }
        return s;
    };
    struct GcvPoint {
        double score = std::numeric_limits<double>::infinity();
        double trace = 0.0;
        Eigen::VectorXd theta;
    };
    const auto evaluate = [&](const std::vector<double>& lam) {
        GcvPoint g;
        Eigen::LLT<Eigen::MatrixXd> llt(XtX + penalty_for(lam));
        if (llt.info() != Eigen::Success) return g;
        g.theta = llt.solve(Xty);
        g.trace = llt.solve(XtX).trace();
        if (n_obs - g.trace > 0.5) {
            g.score = n_obs * rss_of(residuals_for(g.theta)) / ((n_obs - g.trace) * (n_obs - g.trace));
        }
        return g;
    };

    // A shared ladder scan, then coordinate sweeps with one parameter per term.
    std::vector<double> lam(static_cast<std::size_t>(terms), opts.lambda_ladder.front());
    GcvPoint best;
    for (const double l : opts.lambda_ladder) {
        std::vector<double> trial(static_cast<std::size_t>(terms), l);
        GcvPoint g = evaluate(trial);
        fit.gcv.push_back(g.score);
        if (g.score < best.score) {
            best = std::move(g);
            lam = trial;
            fit.basis.lambda = l;
        }
    }
    if (!std::isfinite(best.score)) {
        throw Error("rank_deficient", "penalized normal equations are singular for every smoothing parameter");
    }
    if (terms > 1) {
        for (int sweep = 0; sweep < 4; ++sweep) {
            bool moved = false;
            for (std::size_t a = 0; a < lam.size(); ++a) {
                for (const double l : opts.lambda_ladder) {
                    if (l == lam[a]) continue;
                    std::vector<double> trial = lam;
                    trial[a] = l;
                    GcvPoint g = evaluate(trial);
                    if (g.score < best.score * (1.0 - 1e-12)) {
                        best = std::move(g);
                        lam = trial;
                        moved = true;
                    }
                }
            }
            if (!moved) break;
        }
    }
    fit.lambda = lam;
    const Eigen::MatrixXd S = penalty_for(lam);
    const Eigen::MatrixXd E1 = residuals_for(best.theta);
    fit.residual_variance = rss_of(E1) / (n_obs - best.trace);

    // Step 2: FPCA of the residual process.
    double y_scale = 0.0;
    for (Eigen::Index k = 0; k < data.Y.size(); ++k) {
        if (!std::isnan(data.Y.data()[k])) y_scale = std::max(y_scale, std::abs(data.Y.data()[k]));
    }
    // Residuals with RMS below 1e-6 of the data scale are smoothing bias, not noise.
    const bool degenerate = !(fit.residual_variance > 1e-12 * std::max(1.0, y_scale * y_scale));
    Eigen::MatrixXd work = Eigen::MatrixXd::Identity(T, T); // covariance / step-1 variance
    Eigen::MatrixXd vk(T, 0);
    Eigen::VectorXd lambda_k(0);
    if (degenerate) {
        warn("residuals are all zero; skipping FPCA (K = 0)");
        fit.phi.resize(T, 0);
        fit.sigma2_k.resize(0);
        fit.noise_variance = 0.0;
    } else {
        Eigen::VectorXd mean;
        const Eig e = eigen_descending(pairwise_covariance(E1, mean));
        const double dt = grid_step(data.grid);
        const double top = e.values.size() > 0 ? e.values(0) : 0.0;
        const std::size_t k = opts.n_components >= 0
                                  ? std::min<std::size_t>(static_cast<std::size_t>(opts.n_components), static_cast<std::size_t>(T))
                                  : choose_k(e.values, opts.pve);
        const auto K = static_cast<Eigen::Index>(k);
        const double floor = 1e-10 * std::max(top, fit.residual_variance);
        double noise = K < T ? e.values.tail(T - K).mean() : 0.0;
        noise = std::max(noise, floor);
        vk = e.vectors.leftCols(K);
        lambda_k = (e.values.head(K).array() - noise).max(floor).matrix();
        fit.noise_variance = noise;
        fit.phi = vk / std::sqrt(dt);
        fit.sigma2_k = lambda_k * dt;
        work = (vk * lambda_k.asDiagonal() * vk.transpose() + noise * Eigen::MatrixXd::Identity(T, T)) / fit.residual_variance;
    }

    // Step 3: coefficient covariance with the FPCA subject effects.
    if (opts.covariance == FosrCovariance::gls) {
        // Joint fit with the scores as random effects, in marginal form.
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(P, P);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(P);
        const Eigen::MatrixXd work_inv = spd_inverse(work, "within-subject covariance");
        std::vector<Eigen::MatrixXd> w_obs(complete ? 0 : static_cast<std::size_t>(n));
        if (!complete) {
            for (Eigen::Index i = 0; i < n; ++i) {
                w_obs[static_cast<std::size_t>(i)] =
                    spd_inverse(sub_square(work, observed[static_cast<std::size_t>(i)]), "within-subject covariance");
            }
        }
        accumulate(A, [&](Eigen::Index i) {
            if (complete) return Eigen::MatrixXd(B.transpose() * work_inv * B);
            const Eigen::MatrixXd Bo = rows_of(B, observed[static_cast<std::size_t>(i)]);
            return Eigen::MatrixXd(Bo.transpose() * w_obs[static_cast<std::size_t>(i)] * Bo);
        });
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::VectorXd yo = subject_y(i);
            const Eigen::VectorXd h = complete ? Eigen::VectorXd(B.transpose() * (work_inv * yo))
                                               : Eigen::VectorXd(rows_of(B, observed[static_cast<std::size_t>(i)]).transpose() *
                                                                 (w_obs[static_cast<std::size_t>(i)] * yo));
            for (Eigen::Index a = 0; a < terms; ++a) rhs.segment(a * kb, kb) += Z(i, a) * h;
        }
        A += S;
        fit.a_inv = spd_inverse(A, "penalized normal matrix");
        fit.theta = fit.a_inv * rhs;
        fit.v_theta = fit.residual_variance * fit.a_inv;
        fit.work_inv = work_inv;
    } else {
        // Step-1 coefficients with the FPCA covariance as the meat of a
        // sandwich; with V = sigma^2 I this is sigma^2 (X'X + S)^-1.
        fit.a_inv = spd_inverse(XtX + S, "penalized normal matrix");
        fit.theta = best.theta;
        Eigen::MatrixXd meat = fit.residual_variance * S;
        accumulate(meat, [&](Eigen::Index i) {
            const Eigen::MatrixXd Bo = complete ? B : rows_of(B, observed[static_cast<std::size_t>(i)]);
            const Eigen::MatrixXd Vo = complete ? work : sub_square(work, observed[static_cast<std::size_t>(i)]);
            return Eigen::MatrixXd(fit.residual_variance * (Bo.transpose() * Vo * Bo));
        });
        fit.v_theta = fit.a_inv * meat * fit.a_inv;
        fit.v_theta = (fit.v_theta + fit.v_theta.transpose()) / 2.0;
        fit.work_inv = Eigen::MatrixXd::Identity(T, T);
    }
    if (degenerate) fit.v_theta.setZero();

    // Subject scores by best linear prediction.
    const auto K = fit.phi.cols();
    fit.scores = Eigen::MatrixXd::Zero(n, K);
    if (K > 0) {
        const double dt = grid_step(data.grid);
        const Eigen::MatrixXd E3 = residuals_for(fit.theta);
        const Eigen::MatrixXd Vfull = work * fit.residual_variance;
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& idx = observed[static_cast<std::size_t>(i)];
            Eigen::VectorXd eo(static_cast<Eigen::Index>(idx.size()));
            for (std::size_t r = 0; r < idx.size(); ++r) eo(static_cast<Eigen::Index>(r)) = E3(i, idx[r]);
            const Eigen::VectorXd c =
                lambda_k.asDiagonal() * (rows_of(vk, idx).transpose() * sub_square(Vfull, idx).llt().solve(eo));
            fit.scores.row(i) = (c * std::sqrt(dt)).transpose();
        }
    }
    return fit;
}

// ---------------------------------------------------------------------------
// Targets

SubsetSpec parse_subset(std::string_view text) {
    SubsetSpec out;
    std::string s(text);
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto first = item.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos) {
            throw Error("parse_error", "subset entry '" + item + "' must be of the form <var> = <value>");
        }
        std::string var = item.substr(0, eq);
        var.erase(0, var.find_first_not_of(" \t"));
        var.erase(var.find_last_not_of(" \t") + 1);
        if (var.empty()) throw Error("parse_error", "subset entry '" + item + "' has no variable name");
        const double v = parse_number(item.substr(eq + 1), "subset");
        if (!std::isfinite(v)) throw Error("parse_error", "subset entry '" + item + "' needs a numeric value");
        for (const auto& [name, _] : out) {
            if (name == var) throw Error("parse_error", "variable '" + var + "' appears twice in the subset");
        }
        out.emplace_back(std::move(var), v);
    }
    return out;
}

TargetPrediction predict_target(const FoSRFit& fit, const SubsetSpec& subset, TargetKind target) {
    const auto kb = static_cast<Eigen::Index>(fit.n_basis());
    const auto T = fit.basis.B.rows();
    const auto term_of = [&](const std::string& var) -> Eigen::Index {
        for (std::size_t j = 0; j < fit.covariates.size(); ++j) {
            if (fit.covariates[j] == var) return static_cast<Eigen::Index>(j + 1);
        }
        throw Error("missing_column", "subset variable '" + var + "' is not a model covariate");
    };

    TargetPrediction out;
    out.contrast = Eigen::MatrixXd::Zero(T, fit.theta.size());
    if (target == TargetKind::fitted_mean) {
        out.contrast.leftCols(kb) = fit.basis.B;
        for (const auto& [var, value] : subset) {
            out.contrast.middleCols(term_of(var) * kb, kb) += value * fit.basis.B;
        }
    } else {
        if (subset.size() > 1) {
            warn("coefficient target uses only the first subset variable '" + subset.front().first + "'");
        }
        const Eigen::Index j = subset.empty() ? 0 : term_of(subset.front().first);
        out.contrast.middleCols(j * kb, kb) = fit.basis.B;
    }
    const Eigen::VectorXd eta = out.contrast * fit.theta;
    const Eigen::MatrixXd CV = out.contrast * fit.v_theta;
    out.eta.resize(static_cast<std::size_t>(T));
    out.se.resize(static_cast<std::size_t>(T));
    for (Eigen::Index t = 0; t < T; ++t) {
        out.eta[static_cast<std::size_t>(t)] = eta(t);
        out.se[static_cast<std::size_t>(t)] = std::sqrt(std::max(0.0, CV.row(t).dot(out.contrast.row(t))));
    }
    return out;
}

// ---------------------------------------------------------------------------
// CMA

double cma_quantile(const Eigen::MatrixXd& contrast, const Eigen::MatrixXd& cov, double alpha, std::size_t nboot,
                    std::uint64_t seed) {
    if (cov.rows() != cov.cols() || contrast.cols() != cov.rows()) {
        throw Error("shape_mismatch", "contrast and covariance dimensions disagree");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error("invalid_argument", "alpha must lie in (0, 1)");
    if (nboot == 0) throw Error("invalid_argument", "nboot must be positive");
    const Eigen::MatrixXd sym = (cov + cov.transpose()) / 2.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) throw Error("numerical_error", "eigen-decomposition of the covariance failed");
    Eigen::VectorXd ev = es.eigenvalues();
    const double scale = ev.size() > 0 ? ev.cwiseAbs().maxCoeff() : 0.0;
    if (ev.size() > 0 && ev.minCoeff() < -1e-10 * scale) {
        warn("coefficient covariance is not positive semidefinite; projecting onto the PSD cone");
    }
    ev = ev.cwiseMax(0.0);
    const Eigen::MatrixXd M = contrast * es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
    const Eigen::Index T = M.rows();
    const Eigen::Index P = M.cols();
    std::vector<double> se(static_cast<std::size_t>(T));
    for (Eigen::Index t = 0; t < T; ++t) se[static_cast<std::size_t>(t)] = M.row(t).norm();

    std::vector<double> d(nboot);
    parallel_for(nboot, [&](std::size_t b) {
        RngStream rng(seed, b);
        Eigen::VectorXd z(P);
        for (Eigen::Index k = 0; k < P; ++k) z(k) = rng.normal();
        const Eigen::VectorXd x = M * z;
        std::vector<double> xs(x.data(), x.data() + x.size());
        // Rounding can leave tiny draws where the SE is exactly zero.
        for (std::size_t t = 0; t < xs.size(); ++t) {
            if (se[t] == 0.0) xs[t] = 0.0;
        }
        d[b] = max_abs_standardized(xs, se, nullptr);
    });
    return empirical_quantile(d, 1.0 - alpha);
}

SCBand scb_cma(const FoSRFit& fit, const SubsetSpec& subset, TargetKind target, const CmaOptions& opts) {
    TargetPrediction p = predict_target(fit, subset, target);
    const double q = cma_quantile(p.contrast, fit.v_theta, opts.alpha, opts.nboot, opts.seed);
    SCBand band = assemble_band(std::move(p.eta), std::move(p.se), q, 1.0, opts.alpha, Domain::grid1d(fit.grid));
    band.method = "cma";
    band.degenerate = q == 0.0;
    return band;
}

// ---------------------------------------------------------------------------
// Multiplier bootstrap

SCBand scb_multiplier(const FunctionalDataset& data, const FoSRFit& fit, const SubsetSpec& subset, TargetKind target,
                      const MultiplierOptions& opts) {
    data.validate();
    if (data.grid != fit.grid) throw Error("shape_mismatch", "data grid differs from the fitted grid");
    const auto n = static_cast<Eigen::Index>(data.n_subjects());
    if (n < 2) throw Error("invalid_argument", "multiplier bootstrap needs at least two subjects");
    if (!(opts.alpha > 0.0 && opts.alpha < 1.0)) throw Error("invalid_argument", "alpha must lie in (0, 1)");
    for (Eigen::Index t = 1; t < data.Y.cols(); ++t) {
        bool all_zero = true;
        for (Eigen::Index i = 0; i < n && all_zero; ++i) all_zero = data.Y(i, t) == 0.0;
        if (all_zero) {
            throw Error("invalid_argument",
                        "outcome is identically zero at time index " + std::to_string(t) + " (t = " +
                            format_real(data.grid[static_cast<std::size_t>(t)]) + ")");
        }
    }
    const FunctionalDataset complete = data.has_missing() ? impute_fpca(data, opts.impute_pve) : data;

    std::vector<std::size_t> cols;
    for (const auto& c : fit.covariates) cols.push_back(complete.covariate_index(c));
    const Eigen::MatrixXd Z = design_z(complete, cols);
    Eigen::MatrixXd X(n, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) X.col(static_cast<Eigen::Index>(j)) = complete.covariates.col(static_cast<Eigen::Index>(cols[j]));
    const Eigen::MatrixXd E = complete.Y - fit.fitted(X);

    TargetPrediction p = predict_target(fit, subset, target);
    const Eigen::MatrixXd U = fit.basis.B.transpose() * fit.work_inv * E.transpose(); // kb x n
    Eigen::MatrixXd infl(fit.theta.size(), n);
    for (Eigen::Index i = 0; i < n; ++i) infl.col(i) = kron_vec(Z.row(i).transpose(), U.col(i));
    const double nd = static_cast<double>(n);
    const Eigen::MatrixXd psi = (nd * (p.contrast * (fit.a_inv * infl))).transpose(); // n x T
    const Eigen::RowVectorXd psi_mean = psi.colwise().mean();
    const Eigen::MatrixXd R = std::sqrt(nd / (nd - 1.0)) * (psi.rowwise() - psi_mean);

    const std::vector<double> maxima = multiplier_maxima(R, opts.weights, opts.sd, opts.nboot, opts.seed);
    const double q = empirical_quantile(maxima, 1.0 - opts.alpha);
    Field se(p.eta.size());
    for (Eigen::Index t = 0; t < psi.cols(); ++t) {
        const double zeta = std::sqrt((psi.col(t).array() - psi_mean(t)).square().sum() / (nd - 1.0));
        se[static_cast<std::size_t>(t)] = zeta / std::sqrt(nd);
    }
    SCBand band = assemble_band(std::move(p.eta), std::move(se), q, 1.0, opts.alpha, Domain::grid1d(fit.grid));
    band.method = "multiplier";
    band.degenerate = q == 0.0;
    return band;
}

// ---------------------------------------------------------------------------
// Imputation

FunctionalDataset impute_fpca(const FunctionalDataset& data, double pve) {
    data.validate();
    if (!data.has_missing()) return data;
    const auto n = data.Y.rows();
    const auto T = data.Y.cols();
    std::vector<std::string> short_ids;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (observed_index(data.Y, i).size() < 2) short_ids.push_back(data.ids[static_cast<std::size_t>(i)]);
    }
    if (!short_ids.empty()) {
        std::string list;
        for (const auto& id : short_ids) list += (list.empty() ? "" : ", ") + id;
        throw Error("invalid_argument", "imputation needs at least two observed points per subject; offending ids: " + list);
    }

    Eigen::VectorXd col_mean;
    pairwise_covariance(data.Y, col_mean);
    double overall = 0.0;
    int cnt = 0;
    double scale = 0.0;
    for (Eigen::Index k = 0; k < data.Y.size(); ++k) {
        const double v = data.Y.data()[k];
        if (!std::isnan(v)) {
            overall += v;
            ++cnt;
            scale = std::max(scale, std::abs(v));
        }
    }
    overall /= cnt;
    Eigen::MatrixXd filled = data.Y;
    for (Eigen::Index t = 0; t < T; ++t) {
        const bool any = !data.Y.col(t).array().isNaN().all();
        for (Eigen::Index i = 0; i < n; ++i) {
            if (std::isnan(filled(i, t))) filled(i, t) = any ? col_mean(t) : overall;
        }
    }

    constexpr int max_iter = 2000;
    const double tol = 1e-13 * std::max(1.0, scale);
    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd mu;
        const Eig e = eigen_descending(pairwise_covariance(filled, mu));
        const auto K = static_cast<Eigen::Index>(choose_k(e.values, pve));
        const Eigen::MatrixXd vk = e.vectors.leftCols(K);
        double change = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto idx = observed_index(data.Y, i);
            if (static_cast<Eigen::Index>(idx.size()) == T) continue;
            Eigen::VectorXd score = Eigen::VectorXd::Zero(K);
            if (K > 0) {
                const Eigen::MatrixXd Vo = rows_of(vk, idx);
                Eigen::VectorXd r(static_cast<Eigen::Index>(idx.size()));
                for (std::size_t j = 0; j < idx.size(); ++j) r(static_cast<Eigen::Index>(j)) = data.Y(i, idx[j]) - mu(idx[j]);
                score = Vo.completeOrthogonalDecomposition().solve(r);
            }
            const Eigen::VectorXd recon = mu + vk * score;
            for (Eigen::Index t = 0; t < T; ++t) {
                if (std::isnan(data.Y(i, t))) {
                    change = std::max(change, std::abs(recon(t) - filled(i, t)));
                    filled(i, t) = recon(t);
                }
            }
        }
        if (change <= tol) break;
    }
    FunctionalDataset out = data;
    out.Y = filled;
    return out;
}

} // namespace scb
