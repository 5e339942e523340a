// Spot-wise generalized least squares over a masked 2D grid, and a
// multiplier-t band for a linear functional w'beta(s) of the coefficients.
#pragma once

#include "scb/core.hpp"
#include "scb/multiplier.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace scb {

/// Observation cube in (obs, x, y) row-major order and a mask over (x, y).
/// Use domain() for the band layout, which is [ny, nx] row-major.
struct SpatialObservations {
    std::vector<double> x;
    std::vector<double> y;
    std::size_t n_obs = 0;
    std::vector<double> cube;
    Mask mask; // nx * ny entries, spot (ix, iy) at ix * ny + iy; empty keeps every spot

    std::size_t nx() const { return x.size(); }
    std::size_t ny() const { return y.size(); }
    double value(std::size_t obs, std::size_t ix, std::size_t iy) const { return cube[(obs * nx() + ix) * ny() + iy]; }
    bool spot_included(std::size_t ix, std::size_t iy) const { return mask.empty() || mask[ix * ny() + iy] != 0; }
    Domain domain() const;
    void validate(std::size_t n_design_cols) const;
};

/// Reads a JSON header {"x", "y", "shape": [n_obs, nx, ny], "mask"?, "data",
/// "format": "csv" | "binary"}. Relative data paths resolve against the
/// header's directory. Binary cubes are little-endian float64.
SpatialObservations read_spatial(const std::string& header_path);

enum class CorrelationKind { none, ar1, comp_symm, explicit_cov };

CorrelationKind parse_correlation_kind(std::string_view text);

struct CorrelationSpec {
    CorrelationKind kind = CorrelationKind::none;
    std::optional<double> rho;          // estimated per spot when absent
    std::vector<int> groups;            // one label per observation; empty means one group
    std::vector<Eigen::MatrixXd> cov;   // explicit_cov: one matrix shared by all spots, or one per spot (ix * ny + iy)
};

/// Correlation within groups; zero across groups.
Eigen::MatrixXd build_correlation(CorrelationKind kind, double rho, std::size_t n, const std::vector<int>& groups = {});

struct GlsSpotFit {
    Eigen::VectorXd beta;
    Eigen::MatrixXd cov;       // (X'V^-1 X)^-1 scaled by the whitened residual variance
    double sigma2 = 0.0;
    Eigen::VectorXd residuals; // whitened
    Eigen::MatrixXd hat_map;   // whitened X (X~'X~)^-1, rows are observations
};

GlsSpotFit fit_gls_spot(const Eigen::MatrixXd& X, const Eigen::VectorXd& z, const Eigen::MatrixXd& V);

/// Lag-1 (Yule-Walker) autocorrelation of a residual sequence within groups.
double lag1_autocorrelation(const Eigen::VectorXd& e, const std::vector<int>& groups = {});

struct GLSFit {
    Domain domain;                     // [ny, nx] layout
    Eigen::MatrixXd X;
    Eigen::VectorXd w;
    std::vector<Eigen::VectorXd> beta; // per cell; empty when masked
    std::vector<Eigen::MatrixXd> cov;
    std::vector<double> rho;           // correlation parameter used at each cell
    Field eta;                         // w'beta(s), NaN when masked
    Field zeta;                        // sqrt(w' Cov w), NaN when masked
    Eigen::MatrixXd influence;         // n_obs x cells, N * a_n(s) * e~_n(s); zero columns when masked
};

GLSFit fit_gls(const SpatialObservations& data, const Eigen::MatrixXd& X, const Eigen::VectorXd& w,
               const CorrelationSpec& corr);

struct GlsBandOptions {
    std::size_t nboot = 1000;
    double alpha = 0.1;
    std::uint64_t seed = 1;
    MultiplierKind weights = MultiplierKind::rademacher;
    SdMethod sd = SdMethod::t;
};

SCBand scb_gls(const SpatialObservations& data, const Eigen::MatrixXd& X, const Eigen::VectorXd& w,
               const CorrelationSpec& corr, const GlsBandOptions& opts = {});

} // namespace scb
