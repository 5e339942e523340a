// Linear and logistic regression fits, and nonparametric-bootstrap
// simultaneous bands for fitted mean outcomes and for coefficient vectors.
#pragma once

#include "scb/core.hpp"
#include "scb/formula.hpp"
#include "scb/table.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace scb {

enum class Family { gaussian, binomial };

Family parse_family(std::string_view text);

struct Design {
    Eigen::MatrixXd X;
    std::vector<std::string> names; // "(Intercept)" first
};

/// Builds the design for an already-resolved spec (see resolve_formula).
Design build_design(const Table& table, const ModelSpec& resolved);
Eigen::VectorXd response_vector(const Table& table, const ModelSpec& spec);

struct FittedGLM {
    Family family = Family::gaussian;
    Eigen::VectorXd beta;
    Eigen::MatrixXd cov_beta;
    double sigma2 = 1.0; // residual variance; fixed at 1 for the binomial family
    std::vector<std::string> term_names;
    ModelSpec spec; // resolved
    int iterations = 0;
};

struct IrlsOptions {
    int max_iter = 50;
    double tol = 1e-8;        // on the sup-norm of the score X'(y - p)
    double divergence = 1e3;  // |beta| beyond this is treated as separation
};

FittedGLM fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<std::string> names = {});
FittedGLM fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<std::string> names = {},
                       const IrlsOptions& opts = {}, const Eigen::VectorXd* start = nullptr);

FittedGLM fit_ols(const Table& table, const ModelSpec& spec);
FittedGLM fit_logistic(const Table& table, const ModelSpec& spec, const IrlsOptions& opts = {});
FittedGLM fit_glm(const Table& table, const ModelSpec& spec, Family family, const IrlsOptions& opts = {});

/// Estimate and standard error on the linear-predictor scale.
struct MeanPrediction {
    Field eta;
    Field se;
};

MeanPrediction predict_design(const FittedGLM& fit, const Eigen::MatrixXd& X);
MeanPrediction predict_mean(const FittedGLM& fit, const Table& grid);

/// Band domain for a prediction grid: grid1d over the first predictor when
/// that column is strictly increasing, otherwise discrete row labels.
Domain default_grid_domain(const Table& grid, const ModelSpec& resolved);

struct BootstrapOptions {
    std::size_t n_boot = 1000;
    double alpha = 0.05;
    std::uint64_t seed = 1;
    std::optional<Table> grid_boot;  // evaluation grid for the max statistic
    std::optional<Domain> domain;    // band domain; default_grid_domain when absent
    IrlsOptions irls;
};

SCBand scb_mean_bootstrap(const Table& data, const ModelSpec& spec, const Table& grid, Family family,
                          const BootstrapOptions& opts = {});

/// Band over the discrete domain of coefficient names. Binomial coefficients
/// stay on the log-odds scale.
SCBand scb_coef_bootstrap(const Table& data, const ModelSpec& spec, Family family = Family::gaussian,
                          const BootstrapOptions& opts = {});

} // namespace scb
