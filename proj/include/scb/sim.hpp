// Simulation designs and Monte Carlo coverage experiments.
#pragma once

#include "scb/core.hpp"
#include "scb/formula.hpp"
#include "scb/functional.hpp"
#include "scb/multiplier.hpp"
#include "scb/table.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace scb {

enum class DesignKind { fosr, linear_outcome, logistic_outcome, linear_coef, logistic_coef };

DesignKind parse_design_kind(std::string_view text);
std::string_view to_string(DesignKind kind);

struct SimDesign {
    DesignKind kind = DesignKind::linear_outcome;
    std::size_t n = 100;

    // Outcome designs: evaluation grid for x1 and the noise SD of the linear model.
    std::size_t grid_points = 100;
    double grid_lo = -1.0;
    double grid_hi = 1.0;
    double linear_noise_sd = std::sqrt(2.0);

    // Coefficient designs.
    std::size_t coef_m = 5;
    double coef_rho = 0.4;

    // Functional design: sigma_k^2 = fosr_sigma_scale * fosr_sigma_ratio^k, Fourier eigenfunctions.
    std::size_t fosr_points = 50;
    std::size_t fosr_components = 5;
    double fosr_sigma_scale = 2.0;
    double fosr_sigma_ratio = 0.5;
    double fosr_noise_variance = 0.25;
    double fosr_x_prob = 0.6;
    double fosr_missing_fraction = 0.0; // fraction of cells set missing at random
};

/// The k-th (1-based) orthonormal Fourier function on [0, 1]: sqrt2 sin(2 pi j t)
/// for odd k and sqrt2 cos(2 pi j t) for even k, with j = ceil(k / 2).
double fourier_basis(std::size_t k, double t);

struct SimData {
    Table table;                 // regression designs
    ModelSpec spec;
    Table grid;                  // outcome designs
    FunctionalDataset functional;
    Field truth;                 // on the band's domain and scale
};

SimData generate(const SimDesign& design, RngStream& rng);

/// Truth functions of the designs.
double linear_design_mean(double x1);

enum class SimMethod { bootstrap, cma, multiplier };

SimMethod parse_sim_method(std::string_view text);
std::string_view to_string(SimMethod method);

struct MethodConfig {
    SimMethod method = SimMethod::bootstrap;
    double alpha = 0.05;
    std::size_t nboot = 1000;
    MultiplierKind weights = MultiplierKind::rademacher;
    SdMethod sd = SdMethod::t;
    FosrOptions fosr;
};

struct ReplicateRecord {
    bool covered = false;
    bool failed = false;
    double q = std::nan("");
    std::string error;
};

struct CoverageReport {
    DesignKind design = DesignKind::linear_outcome;
    SimMethod method = SimMethod::bootstrap;
    std::size_t n = 0;
    std::size_t replicates = 0;
    double alpha = 0.05;
    std::uint64_t seed = 1;
    std::size_t covered = 0;
    std::size_t failures = 0;
    double coverage = 0.0;
    double mcse = 0.0;
    double wall_seconds = 0.0;
    std::vector<ReplicateRecord> records;
    std::vector<SCBand> bands;   // filled when requested; empty band on failure
    std::vector<Field> truths;
};

/// Replicate r draws its data from RngStream(seed, r) and seeds its band
/// from derive(derive(seed, r), 1), so two methods run with the same seed
/// see identical data.
CoverageReport run_coverage(const SimDesign& design, const MethodConfig& config, std::size_t replicates,
                            std::uint64_t seed, bool keep_bands = false);

std::string coverage_report_to_json(const CoverageReport& report);

} // namespace scb
