// Function-on-scalar regression on a common grid with FPCA subject effects,
// and CMA / multiplier-t bands for mean-outcome and coefficient functions.
#pragma once

#include "scb/core.hpp"
#include "scb/multiplier.hpp"
#include "scb/table.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace scb {

struct FunctionalDataset {
    std::vector<std::string> ids;
    std::vector<double> grid;                  // strictly increasing
    Eigen::MatrixXd Y;                         // subjects x grid, NaN marks a missing value
    std::vector<std::string> covariate_names;
    Eigen::MatrixXd covariates;                // subjects x covariates

    std::size_t n_subjects() const { return static_cast<std::size_t>(Y.rows()); }
    std::size_t n_times() const { return grid.size(); }
    bool has_missing() const;
    std::size_t covariate_index(std::string_view name) const;
    void validate() const;
};

/// Long format: one row per (subject, time). Covariates must be constant
/// within a subject. With an empty covariate list every other column is used.
FunctionalDataset functional_from_long(const CsvFrame& frame, const std::string& id_col, const std::string& time_col,
                                       const std::string& outcome_col, std::vector<std::string> covariates = {});

/// Cubic B-spline basis with equally spaced knots on [lo, hi].
Eigen::MatrixXd bspline_basis(const std::vector<double>& t, std::size_t n_basis, double lo, double hi);
Eigen::MatrixXd difference_penalty(std::size_t n_basis, int order = 2);

struct BasisModel {
    Eigen::MatrixXd B;
    Eigen::MatrixXd penalty;
    double lambda = 0.0;
};

struct FpcaResult {
    Eigen::VectorXd mean;        // over the grid
    Eigen::MatrixXd phi;         // grid x K, orthonormal under the grid inner product
    Eigen::VectorXd sigma2;      // K component variances, nonincreasing
    Eigen::VectorXd eigenvalues; // all eigenvalues of the pointwise covariance
    double noise_variance = 0.0;
    double dt = 1.0;
};

/// FPCA of a complete matrix from the raw sample covariance. K is chosen by
/// proportion of variance explained unless fixed_k >= 0.
FpcaResult fpca(const Eigen::MatrixXd& Y, const std::vector<double>& grid, double pve, int fixed_k = -1);

std::vector<double> default_lambda_ladder();

/// How the subject effects enter the coefficient covariance. The sandwich
/// keeps the working-independence coefficients and uses the FPCA covariance
/// as the meat. The GLS variant refits with the inverse FPCA covariance as
/// weights, which is efficient when that covariance is known but understates
/// the variance when it is estimated from few subjects.
enum class FosrCovariance { sandwich, gls };

FosrCovariance parse_fosr_covariance(std::string_view text);

struct FosrOptions {
    std::size_t n_basis = 30;
    double pve = 0.95;
    int n_components = -1;  // fixed K when >= 0
    std::vector<double> lambda_ladder = default_lambda_ladder();
    FosrCovariance covariance = FosrCovariance::sandwich;
};

struct FoSRFit {
    std::vector<double> grid;
    std::vector<std::string> covariates; // excluding the intercept
    BasisModel basis;          // lambda holds the best common smoothing parameter
    std::vector<double> lambda; // per term after the coordinate-wise GCV search
    Eigen::VectorXd theta;     // spline coefficients, one block of n_basis per term, intercept first
    Eigen::MatrixXd v_theta;   // joint covariance of theta
    Eigen::MatrixXd phi;       // grid x K
    Eigen::VectorXd sigma2_k;
    Eigen::MatrixXd scores;    // subjects x K
    double noise_variance = 0.0;
    double residual_variance = 0.0;
    std::vector<double> gcv;   // one value per ladder entry

    // Quantities reused by the multiplier band.
    Eigen::MatrixXd a_inv;      // inverse of the penalized normal matrix
    Eigen::MatrixXd work_inv;   // residual weights in the normal equations (identity for the sandwich)

    std::size_t n_terms() const { return covariates.size() + 1; }
    std::size_t n_basis() const { return static_cast<std::size_t>(basis.B.cols()); }
    /// Coefficient function of term j (0 is the intercept) over the grid.
    Eigen::VectorXd coefficient_function(std::size_t j) const;
    /// Fitted mean curves for a subjects x covariates matrix, one row per subject.
    Eigen::MatrixXd fitted(const Eigen::MatrixXd& covariates) const;
};

FoSRFit fit_fosr(const FunctionalDataset& data, const std::vector<std::string>& covariates,
                 const FosrOptions& opts = {});

using SubsetSpec = std::vector<std::pair<std::string, double>>;

/// Parses "use = 1, age = 40". An empty or blank string gives an empty subset.
SubsetSpec parse_subset(std::string_view text);

enum class TargetKind { fitted_mean, coefficient };

struct TargetPrediction {
    Field eta;
    Field se;
    Eigen::MatrixXd contrast; // grid x theta, maps coefficients to the target
};

TargetPrediction predict_target(const FoSRFit& fit, const SubsetSpec& subset, TargetKind target);

/// 1-alpha quantile of max |C z / se| with z ~ N(0, cov). A covariance with
/// negative eigenvalues is projected onto the PSD cone first.
double cma_quantile(const Eigen::MatrixXd& contrast, const Eigen::MatrixXd& cov, double alpha, std::size_t nboot,
                    std::uint64_t seed);

struct CmaOptions {
    double alpha = 0.05;
    std::size_t nboot = 10000;
    std::uint64_t seed = 1;
};

SCBand scb_cma(const FoSRFit& fit, const SubsetSpec& subset, TargetKind target, const CmaOptions& opts = {});

struct MultiplierOptions {
    double alpha = 0.05;
    std::size_t nboot = 5000;
    MultiplierKind weights = MultiplierKind::rademacher;
    SdMethod sd = SdMethod::t;
    std::uint64_t seed = 1;
    double impute_pve = 0.95;
};

SCBand scb_multiplier(const FunctionalDataset& data, const FoSRFit& fit, const SubsetSpec& subset, TargetKind target,
                      const MultiplierOptions& opts = {});

/// Fills missing entries with an iterated FPCA reconstruction. Scores are
/// least-squares fits on each subject's observed points.
FunctionalDataset impute_fpca(const FunctionalDataset& data, double pve);

} // namespace scb
