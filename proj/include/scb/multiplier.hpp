// Multiplier-t bootstrap for the law of a studentized maximum.
#pragma once

#include "scb/core.hpp"

#include <Eigen/Dense>

#include <string_view>
#include <vector>

namespace scb {

enum class MultiplierKind { rademacher, gaussian, mammen };
enum class SdMethod { t, regular };

MultiplierKind parse_multiplier_kind(std::string_view text);
SdMethod parse_sd_method(std::string_view text);

/// Mean-0, variance-1 multipliers. Mammen's two-point law puts mass
/// (1+sqrt5)/(2 sqrt5) on (1-sqrt5)/2 and the rest on (1+sqrt5)/2.
std::vector<double> draw_multipliers(MultiplierKind kind, std::size_t n, RngStream& rng);

/// Bootstrap maxima of |T*(s)| for residual contributions R (N rows, one
/// column per location), where
///
///   T*(s) = sqrt(N) * mean_n(g_n R_n(s)) / sd(s)
///
/// and sd(s) is either the sample SD of R(., s) (regular) or the SD of the
/// perturbed sample g_n R_n(s) in the current replicate (t):
///
///   sd*(s) = sqrt(N/(N-1) * |mean_n (g_n R_n(s))^2 - (mean_n g_n R_n(s))^2|).
///
/// Locations whose residuals are all zero, or that are masked out, are
/// skipped. Replicate b draws its multipliers from RngStream(seed, b).
std::vector<double> multiplier_maxima(const Eigen::MatrixXd& residuals, MultiplierKind kind, SdMethod sd,
                                      std::size_t nboot, std::uint64_t seed, const Mask* mask = nullptr);

} // namespace scb
