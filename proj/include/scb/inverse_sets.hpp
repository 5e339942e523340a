// Inversion of simultaneous confidence bands into inner/outer confidence
// regions for upper, lower, interval and two-sided excursion sets.
#pragma once

#include "scb/core.hpp"

#include <utility>
#include <vector>

namespace scb {

enum class SetType { upper, lower, two_sided, interval };

std::string_view to_string(SetType type);
SetType parse_set_type(std::string_view text);

struct Level {
    double low = 0.0;  // threshold c for one-sided sets, a for intervals
    double high = 0.0; // b for intervals, equal to low otherwise

    static Level single(double c) { return {c, c}; }
    static Level interval(double a, double b) { return {a, b}; }
    friend bool operator==(const Level&, const Level&) = default;
};

struct ThresholdSpec {
    SetType set_type = SetType::upper;
    std::vector<Level> levels;

    /// Throws on empty or non-finite levels and on reversed intervals.
    void validate() const;
};

/// One level's inner region, outer region and plug-in estimate. All three
/// are false on masked cells.
struct RegionSet {
    SetType set_type = SetType::upper;
    Level level;
    Mask inner;
    Mask outer;
    Mask estimate;
};

struct TwoSidedRegions {
    RegionSet upper;
    RegionSet lower;
};

struct ContainmentSummary {
    std::vector<bool> contain_individual;
    bool contain_all = true;
};

RegionSet invert_upper(const SCBand& band, double c);
RegionSet invert_lower(const SCBand& band, double c);
RegionSet invert_interval(const SCBand& band, double a, double b);
TwoSidedRegions invert_two_sided(const SCBand& band, double c);

/// Applies the spec to every level, preserving input order. Two-sided specs
/// contribute two consecutive entries (upper, then lower) per level.
std::vector<RegionSet> invert(const SCBand& band, const ThresholdSpec& spec);

/// The set {s : true_mean(s) in U} for the given set type and level.
Mask true_set(const Field& true_mean, const Domain& domain, SetType type, const Level& level);

ContainmentSummary check_containment(const std::vector<RegionSet>& regions, const Field& true_mean,
                                     const Domain& domain);

/// a is a subset of b (cellwise).
bool is_subset(const Mask& a, const Mask& b);

} // namespace scb
