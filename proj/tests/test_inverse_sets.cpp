#include "doctest.h"
#include "test_util.hpp"

#include "scb/band_io.hpp"
#include "scb/inverse_sets.hpp"

using namespace scb;

namespace {

SCBand three_point() {
    SCBand b;
    b.domain = Domain::grid1d({0, 1, 2});
    b.scb_low = {0, 2, 4};
    b.scb_up = {1, 3, 5};
    b.eta_hat = {0.5, 2.5, 4.5};
    return b;
}

Mask bits(std::initializer_list<int> v) { return Mask(v.begin(), v.end()); }

} // namespace

TEST_CASE("invert_upper worked example") {
    const auto r = invert_upper(three_point(), 2.5);
    CHECK(r.inner == bits({0, 0, 1}));
    CHECK(r.estimate == bits({0, 1, 1}));
    CHECK(r.outer == bits({0, 1, 1}));
    const auto all = invert_upper(three_point(), -10);
    CHECK(all.inner == bits({1, 1, 1}));
    CHECK(all.outer == bits({1, 1, 1}));
    CHECK(all.estimate == bits({1, 1, 1}));
}

TEST_CASE("invert_lower worked example") {
    const auto r = invert_lower(three_point(), 2.5);
    CHECK(r.inner == bits({1, 0, 0}));
    CHECK(r.outer == bits({1, 1, 0}));
    const auto all = invert_lower(three_point(), 10);
    CHECK(all.inner == bits({1, 1, 1}));
    CHECK(all.outer == bits({1, 1, 1}));
    CHECK(all.estimate == bits({1, 1, 1}));
}

TEST_CASE("invert_interval degenerates to the one-sided inversion") {
    const SCBand b = three_point();
    const auto r = invert_interval(b, -1e300, 2.5);
    const auto l = invert_lower(b, 2.5);
    CHECK(r.inner == l.inner);
    CHECK(r.outer == l.outer);
    CHECK(r.estimate == l.estimate);
    CHECK_THROWS_WITH(invert_interval(b, 3, 1), "empty interval");

    const auto far = invert_interval(b, 100, 200);
    CHECK(far.inner == bits({0, 0, 0}));
    CHECK(far.outer == bits({0, 0, 0}));
}

TEST_CASE("two-sided inversion") {
    const SCBand sym = assemble_band({-1, 0, 1, 2}, {1, 1, 1, 1}, 1.5, 1, 0.05, Domain::grid1d({0, 1, 2, 3}));
    const auto ts = invert_two_sided(sym, 0.0);
    for (std::size_t i = 0; i < 4; ++i) CHECK((ts.upper.outer[i] || ts.lower.outer[i]));
    const auto high = invert_two_sided(sym, 100.0);
    CHECK(high.upper.outer == bits({0, 0, 0, 0}));
    CHECK(high.lower.outer == bits({1, 1, 1, 1}));
}

TEST_CASE("invert keeps level order and expands two-sided levels") {
    const SCBand b = three_point();
    ThresholdSpec spec{SetType::upper, {Level::single(3), Level::single(-1), Level::single(3)}};
    const auto regions = invert(b, spec);
    REQUIRE(regions.size() == 3);
    CHECK(regions[0].level.low == 3);
    CHECK(regions[1].level.low == -1);
    spec.set_type = SetType::two_sided;
    const auto two = invert(b, spec);
    REQUIRE(two.size() == 6);
    CHECK(two[0].set_type == SetType::upper);
    CHECK(two[1].set_type == SetType::lower);
    CHECK_THROWS(invert(b, ThresholdSpec{SetType::upper, {}}));
}

TEST_CASE("random bands agree with elementwise oracles") {
    RngStream rng(17, 0);
    for (int rep = 0; rep < 100; ++rep) {
        const SCBand b = testutil::random_band(rng);
        const double c = std::round(rng.normal() * 16.0) / 8.0;
        const auto up = invert_upper(b, c);
        const auto lo = invert_lower(b, c);
        for (std::size_t i = 0; i < b.domain.size(); ++i) {
            if (!b.domain.included(i)) {
                CHECK_FALSE((up.inner[i] || up.outer[i] || up.estimate[i] || lo.inner[i] || lo.outer[i]));
                continue;
            }
            REQUIRE(up.inner[i] == (b.scb_low[i] >= c));
            REQUIRE(up.outer[i] == (b.scb_up[i] >= c));
            REQUIRE(lo.inner[i] == (b.scb_up[i] <= c));
            REQUIRE(lo.outer[i] == (b.scb_low[i] <= c));
            // Duality away from ties.
            if (b.scb_low[i] != c && b.scb_up[i] != c) {
                REQUIRE(lo.inner[i] == !up.outer[i]);
                REQUIRE(lo.outer[i] == !up.inner[i]);
            }
        }
        CHECK(is_subset(up.inner, up.estimate));
        CHECK(is_subset(up.estimate, up.outer));
        CHECK(is_subset(lo.inner, lo.estimate));
        CHECK(is_subset(lo.estimate, lo.outer));
    }
}

TEST_CASE("nestedness and interval consistency") {
    RngStream rng(23, 0);
    for (int rep = 0; rep < 50; ++rep) {
        const SCBand b = testutil::random_band(rng);
        double a = rng.normal(), c = rng.normal();
        if (a > c) std::swap(a, c);
        const auto ua = invert_upper(b, a), uc = invert_upper(b, c);
        CHECK(is_subset(uc.inner, ua.inner));
        CHECK(is_subset(uc.outer, ua.outer));
        const auto iv = invert_interval(b, a, c);
        const auto lc = invert_lower(b, c);
        for (std::size_t i = 0; i < b.domain.size(); ++i) {
            REQUIRE(iv.inner[i] == (ua.inner[i] && lc.inner[i]));
            REQUIRE(iv.outer[i] == (ua.outer[i] && lc.outer[i]));
        }
    }
}

TEST_CASE("containment with the estimate as truth always holds") {
    RngStream rng(31, 0);
    for (int rep = 0; rep < 30; ++rep) {
        const SCBand b = testutil::random_band(rng);
        ThresholdSpec spec{SetType::upper, {Level::single(-1), Level::single(0), Level::single(1)}};
        auto s = check_containment(invert(b, spec), b.eta_hat, b.domain);
        CHECK(s.contain_all);
        spec.set_type = SetType::two_sided;
        s = check_containment(invert(b, spec), b.eta_hat, b.domain);
        CHECK(s.contain_all);
        CHECK(s.contain_individual.size() == 6);
    }
}

TEST_CASE("containment fails for a band shifted above the truth") {
    const SCBand b = assemble_band({5, 5, 5}, {0.1, 0.1, 0.1}, 2, 1, 0.05, Domain::grid1d({0, 1, 2}));
    const Field truth{0, 0, 0};
    const ThresholdSpec spec{SetType::upper, {Level::single(1), Level::single(-1)}};
    const auto s = check_containment(invert(b, spec), truth, b.domain);
    CHECK_FALSE(s.contain_individual[0]); // inner = all, true set = empty
    CHECK(s.contain_individual[1]);
    CHECK_FALSE(s.contain_all);
    CHECK_THROWS(check_containment(invert(b, spec), Field{0, 0}, b.domain));
}

TEST_CASE("masked cells are false in every region field") {
    Mask mask{1, 0, 1, 1};
    const SCBand b = assemble_band({0, 0, 0, 0}, {1, 1, 1, 1}, 1, 1, 0.05, Domain::grid2d({0, 1}, {0, 1}, mask));
    const auto r = invert_upper(b, -5);
    CHECK(r.inner == mask);
    CHECK(r.outer == mask);
    CHECK(r.estimate == mask);
}

TEST_CASE("regions JSON lists levels and shape") {
    const SCBand b = three_point();
    const ThresholdSpec spec{SetType::interval, {Level::interval(0, 3)}};
    const std::string text = regions_to_json(b.domain, spec, invert(b, spec));
    CHECK(text.find("\"set_type\":\"interval\"") != std::string::npos);
    CHECK(text.find("\"shape\":[3]") != std::string::npos);
    CHECK(text.find("\"inner\"") != std::string::npos);
}
