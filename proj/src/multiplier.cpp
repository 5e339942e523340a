#include "scb/multiplier.hpp"

#include <cmath>

namespace scb {

MultiplierKind parse_multiplier_kind(std::string_view text) {
    if (text == "rademacher") return MultiplierKind::rademacher;
    if (text == "gaussian") return MultiplierKind::gaussian;
    if (text == "mammen") return MultiplierKind::mammen;
    throw Error("invalid_argument", "unknown multiplier kind '" + std::string(text) + "'");
}

SdMethod parse_sd_method(std::string_view text) {
    if (text == "t") return SdMethod::t;
    if (text == "regular") return SdMethod::regular;
    throw Error("invalid_argument", "unknown SD method '" + std::string(text) + "'");
}

std::vector<double> draw_multipliers(MultiplierKind kind, std::size_t n, RngStream& rng) {
    if (n == 0) {
        throw Error("invalid_argument", "need at least one multiplier");
    }
    std::vector<double> g(n);
    switch (kind) {
    case MultiplierKind::rademacher:
        for (auto& v : g) v = (rng() >> 63) ? 1.0 : -1.0;
        break;
    case MultiplierKind::gaussian:
        for (auto& v : g) v = rng.normal();
        break;
    case MultiplierKind::mammen: {
        const double s5 = std::sqrt(5.0);
        const double low = (1.0 - s5) / 2.0;
        const double high = (1.0 + s5) / 2.0;
        const double p_low = (1.0 + s5) / (2.0 * s5);
        for (auto& v : g) v = rng.uniform() < p_low ? low : high;
        break;
    }
    }
    return g;
}

std::vector<double> multiplier_maxima(const Eigen::MatrixXd& residuals, MultiplierKind kind, SdMethod sd,
                                      std::size_t nboot, std::uint64_t seed, const Mask* mask) {
    const Eigen::Index n = residuals.rows();
    const Eigen::Index s = residuals.cols();
    if (n < 2) {
        throw Error("invalid_argument", "multiplier bootstrap needs at least two samples");
    }
    if (nboot == 0) {
        throw Error("invalid_argument", "nboot must be positive");
    }
    if (mask && !mask->empty() && mask->size() != static_cast<std::size_t>(s)) {
        throw Error("shape_mismatch", "mask does not match the residual field");
    }
    const double nd = static_cast<double>(n);
    const Eigen::MatrixXd squared = residuals.array().square().matrix();
    const Eigen::VectorXd col_mean = residuals.colwise().mean().transpose();
    Eigen::VectorXd regular_sd(s);
    std::vector<std::uint8_t> active(static_cast<std::size_t>(s), 0);
    for (Eigen::Index j = 0; j < s; ++j) {
        regular_sd(j) = std::sqrt((residuals.col(j).array() - col_mean(j)).square().sum() / (nd - 1.0));
        const bool in_mask = !mask || mask->empty() || (*mask)[static_cast<std::size_t>(j)] != 0;
        active[static_cast<std::size_t>(j)] = in_mask && regular_sd(j) > 0.0 ? 1 : 0;
    }

    std::vector<double> maxima(nboot, 0.0);
    parallel_for(nboot, [&](std::size_t b) {
        RngStream rng(seed, b);
        const std::vector<double> g = draw_multipliers(kind, static_cast<std::size_t>(n), rng);
        const Eigen::Map<const Eigen::VectorXd> gv(g.data(), n);
        const Eigen::VectorXd m1 = residuals.transpose() * gv / nd;
        Eigen::VectorXd m2;
        if (sd == SdMethod::t) {
            m2 = squared.transpose() * gv.array().square().matrix() / nd;
        }
        double best = 0.0;
        for (Eigen::Index j = 0; j < s; ++j) {
            if (!active[static_cast<std::size_t>(j)]) continue;
            const double denom = sd == SdMethod::t ? std::sqrt(nd / (nd - 1.0) * std::abs(m2(j) - m1(j) * m1(j)))
                                                   : regular_sd(j);
            if (!(denom > 0.0)) continue;
            best = std::max(best, std::abs(std::sqrt(nd) * m1(j) / denom));
        }
        maxima[b] = best;
    });
    return maxima;
}

} // namespace scb
