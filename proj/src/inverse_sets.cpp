#include "scb/inverse_sets.hpp"

#include <cmath>

namespace scb {

std::string_view to_string(SetType type) {
    switch (type) {
    case SetType::upper: return "upper";
    case SetType::lower: return "lower";
    case SetType::two_sided: return "two_sided";
    case SetType::interval: return "interval";
    }
    return "unknown";
}

SetType parse_set_type(std::string_view text) {
    if (text == "upper") return SetType::upper;
    if (text == "lower") return SetType::lower;
    if (text == "two_sided" || text == "two-sided") return SetType::two_sided;
    if (text == "interval") return SetType::interval;
    throw Error("invalid_argument", "unknown set type '" + std::string(text) + "'");
}

void ThresholdSpec::validate() const {
    if (levels.empty()) {
        throw Error("invalid_levels", "at least one level is required");
    }
    for (const auto& l : levels) {
        if (!std::isfinite(l.low) || !std::isfinite(l.high)) {
            throw Error("invalid_levels", "levels must be finite");
        }
        if (set_type == SetType::interval && l.low > l.high) {
            throw Error("empty_interval", "empty interval");
        }
    }
}

namespace {

// Builds inner/outer/estimate by applying one predicate per field. Masked
// cells stay false.
template <class InnerPred, class OuterPred, class EstPred>
RegionSet scan(const SCBand& band, SetType type, Level level, InnerPred in, OuterPred out, EstPred est) {
    const std::size_t n = band.domain.size();
    RegionSet r;
    r.set_type = type;
    r.level = level;
    r.inner.assign(n, 0);
    r.outer.assign(n, 0);
    r.estimate.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!band.domain.included(i)) {
            continue;
        }
        r.inner[i] = in(band.scb_low[i], band.scb_up[i]) ? 1 : 0;
        r.outer[i] = out(band.scb_low[i], band.scb_up[i]) ? 1 : 0;
        r.estimate[i] = est(band.eta_hat[i]) ? 1 : 0;
    }
    return r;
}

void require_finite(double c) {
    if (!std::isfinite(c)) {
        throw Error("invalid_levels", "threshold must be finite");
    }
}

} // namespace

RegionSet invert_upper(const SCBand& band, double c) {
    require_finite(c);
    return scan(
        band, SetType::upper, Level::single(c), [c](double lo, double) { return lo >= c; },
        [c](double, double up) { return up >= c; }, [c](double e) { return e >= c; });
}

RegionSet invert_lower(const SCBand& band, double c) {
    require_finite(c);
    return scan(
        band, SetType::lower, Level::single(c), [c](double, double up) { return up <= c; },
        [c](double lo, double) { return lo <= c; }, [c](double e) { return e <= c; });
}

RegionSet invert_interval(const SCBand& band, double a, double b) {
    require_finite(a);
    require_finite(b);
    if (a > b) {
        throw Error("empty_interval", "empty interval");
    }
    return scan(
        band, SetType::interval, Level::interval(a, b),
        [a, b](double lo, double up) { return lo >= a && up <= b; },
        [a, b](double lo, double up) { return up >= a && lo <= b; },
        [a, b](double e) { return a <= e && e <= b; });
}

TwoSidedRegions invert_two_sided(const SCBand& band, double c) {
    return {invert_upper(band, c), invert_lower(band, c)};
}

std::vector<RegionSet> invert(const SCBand& band, const ThresholdSpec& spec) {
    spec.validate();
    std::vector<RegionSet> out;
    out.reserve(spec.levels.size() * (spec.set_type == SetType::two_sided ? 2 : 1));
    for (const auto& l : spec.levels) {
        switch (spec.set_type) {
        case SetType::upper: out.push_back(invert_upper(band, l.low)); break;
        case SetType::lower: out.push_back(invert_lower(band, l.low)); break;
        case SetType::interval: out.push_back(invert_interval(band, l.low, l.high)); break;
        case SetType::two_sided: {
            auto both = invert_two_sided(band, l.low);
            out.push_back(std::move(both.upper));
            out.push_back(std::move(both.lower));
            break;
        }
        }
    }
    return out;
}

Mask true_set(const Field& true_mean, const Domain& domain, SetType type, const Level& level) {
    if (true_mean.size() != domain.size()) {
        throw Error("shape_mismatch", "true mean has " + std::to_string(true_mean.size()) +
                                          " cells, domain has " + std::to_string(domain.size()));
    }
    Mask m(true_mean.size(), 0);
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!domain.included(i)) {
            continue;
        }
        const double v = true_mean[i];
        bool in = false;
        switch (type) {
        case SetType::upper: in = v >= level.low; break;
        case SetType::lower: in = v <= level.low; break;
        case SetType::interval: in = level.low <= v && v <= level.high; break;
        case SetType::two_sided:
            throw Error("invalid_argument", "two-sided regions carry their own upper/lower type");
        }
        m[i] = in ? 1 : 0;
    }
    return m;
}

bool is_subset(const Mask& a, const Mask& b) {
    if (a.size() != b.size()) {
        throw Error("shape_mismatch", "masks differ in size");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] && !b[i]) {
            return false;
        }
    }
    return true;
}

ContainmentSummary check_containment(const std::vector<RegionSet>& regions, const Field& true_mean,
                                     const Domain& domain) {
    if (true_mean.size() != domain.size()) {
        throw Error("shape_mismatch", "true mean does not match the band domain");
    }
    ContainmentSummary summary;
    summary.contain_individual.reserve(regions.size());
    for (const auto& r : regions) {
        if (r.inner.size() != domain.size()) {
            throw Error("shape_mismatch", "region does not match the band domain");
        }
        const Mask truth = true_set(true_mean, domain, r.set_type, r.level);
        const bool ok = is_subset(r.inner, truth) && is_subset(truth, r.outer);
        summary.contain_individual.push_back(ok);
        summary.contain_all = summary.contain_all && ok;
    }
    return summary;
}

} // namespace scb
