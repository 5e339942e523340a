#include "doctest.h"
#include "test_util.hpp"

#include "scb/band_io.hpp"
#include "scb/core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

using namespace scb;

TEST_CASE("empirical_quantile picks the ceil-rank order statistic") {
    std::vector<double> s(20);
    std::iota(s.begin(), s.end(), 1.0);
    std::reverse(s.begin(), s.end());
    CHECK(empirical_quantile(s, 0.95) == 19.0);

    const std::vector<double> constant{7, 7, 7};
    for (double level : {0.01, 0.5, 0.99}) CHECK(empirical_quantile(constant, level) == 7.0);
}

TEST_CASE("empirical_quantile matches a sort-based oracle on uniform draws") {
    RngStream rng(11, 0);
    std::vector<double> s(1000);
    for (auto& v : s) v = rng.uniform();
    std::vector<double> sorted = s;
    std::sort(sorted.begin(), sorted.end());
    const auto k = static_cast<std::size_t>(std::ceil(0.9 * 1000 - 1e-9));
    CHECK(empirical_quantile(s, 0.9) == sorted[k - 1]);
}

TEST_CASE("empirical_quantile rejects bad input") {
    CHECK_THROWS_WITH(empirical_quantile(std::vector<double>{}, 0.5), "no bootstrap samples");
    CHECK_THROWS_WITH(empirical_quantile(std::vector<double>{1.0, NAN}, 0.5), "non-finite statistic");
    CHECK_THROWS(empirical_quantile(std::vector<double>{1.0}, 1.0));
}

TEST_CASE("empirical_quantile is monotone in the level") {
    RngStream rng(3, 1);
    std::vector<double> s(257);
    for (auto& v : s) v = rng.normal();
    double prev = -INFINITY;
    for (int i = 1; i < 100; ++i) {
        const double q = empirical_quantile(s, i / 100.0);
        CHECK(q >= prev);
        prev = q;
    }
}

TEST_CASE("assemble_band applies the band formula") {
    const Domain d = Domain::grid1d({0, 1, 2});
    const SCBand b = assemble_band({0, 0, 0}, {1, 1, 1}, 2.0, 1.0, 0.05, d);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(b.scb_low[i] == -2.0);
        CHECK(b.scb_up[i] == 2.0);
    }

    const SCBand z = assemble_band({1, 2, 3}, {0, 0, 0}, 2.5, 1.0, 0.05, d);
    CHECK(z.scb_low == z.eta_hat);
    CHECK(z.scb_up == z.eta_hat);
}

TEST_CASE("assemble_band width equals 2 q se / tau on random fields") {
    RngStream rng(5, 0);
    const std::size_t n = 64;
    Field eta(n), se(n);
    for (std::size_t i = 0; i < n; ++i) {
        eta[i] = rng.normal();
        se[i] = rng.uniform();
    }
    std::vector<double> x(n);
    std::iota(x.begin(), x.end(), 0.0);
    const double q = 2.3, tau = 1.7;
    const SCBand b = assemble_band(eta, se, q, tau, 0.05, Domain::grid1d(x));
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(b.scb_up[i] - b.scb_low[i] == doctest::Approx(2 * q * se[i] / tau).epsilon(1e-12));
        CHECK(b.scb_low[i] == eta[i] - q * se[i] / tau);
        CHECK(b.scb_up[i] == eta[i] + q * se[i] / tau);
    }
    CHECK_NOTHROW(validate_band(b));
}

TEST_CASE("assemble_band errors") {
    const Domain d = Domain::grid1d({0, 1});
    CHECK_THROWS(assemble_band({0}, {1, 1}, 1, 1, 0.05, d));
    CHECK_THROWS(assemble_band({0, 0}, {1, -1}, 1, 1, 0.05, d));
    CHECK_THROWS(assemble_band({0, 0}, {1, 1}, 1, 0, 0.05, d));
}

TEST_CASE("band monotone in alpha when quantiles share a sample") {
    RngStream rng(9, 0);
    std::vector<double> stats(500);
    for (auto& v : stats) v = std::abs(rng.normal());
    const Domain d = Domain::grid1d({0, 1, 2, 3});
    const Field eta{0.1, -0.3, 0.7, 1.2}, se{0.5, 0.1, 0.2, 0.9};
    const SCBand wide = assemble_band(eta, se, empirical_quantile(stats, 0.99), 1, 0.01, d);
    const SCBand narrow = assemble_band(eta, se, empirical_quantile(stats, 0.9), 1, 0.1, d);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(wide.scb_low[i] <= narrow.scb_low[i]);
        CHECK(wide.scb_up[i] >= narrow.scb_up[i]);
    }
}

TEST_CASE("max_abs_standardized") {
    CHECK(max_abs_standardized(std::vector<double>{1, -3, 2}, std::vector<double>{1, 1, 1}) == 3.0);
    CHECK(max_abs_standardized(std::vector<double>{2, 4}, std::vector<double>{2, 4}) == 1.0);
    CHECK(max_abs_standardized(std::vector<double>{0, 1}, std::vector<double>{0, 2}) == 0.5);
    CHECK_THROWS_WITH(max_abs_standardized(std::vector<double>{1, 1}, std::vector<double>{0, 2}),
                      doctest::Contains("degenerate SE"));

    // 3x3 grid where the largest ratio sits in the masked center.
    const std::vector<double> delta{1, 2, 1, 2, 50, 2, 1, 3, 1};
    const std::vector<double> se(9, 1.0);
    Mask mask(9, 1);
    mask[4] = 0;
    CHECK(max_abs_standardized(delta, se, &mask) == 3.0);
    CHECK(max_abs_standardized(delta, se) == 50.0);
}

TEST_CASE("Domain invariants") {
    CHECK_THROWS(Domain::grid1d({0, 0, 1}));
    CHECK_THROWS(Domain::grid1d({0, 1}, Mask{1}));
    CHECK_THROWS(Domain::grid1d({0, 1}, Mask{0, 0}));
    CHECK_THROWS(Domain::discrete({"a", "a"}));
    const Domain d = Domain::grid2d({0, 1, 2}, {0, 1});
    CHECK(d.size() == 6);
    CHECK(d.shape() == std::vector<std::size_t>{2, 3});
    CHECK(d.index(1, 2) == 5);
}

TEST_CASE("RngStream is reproducible and streams differ") {
    RngStream a(42, 7), b(42, 7), c(42, 8);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto va = a();
        CHECK(va == b());
        differs = differs || va != c();
    }
    CHECK(differs);
    CHECK(RngStream::derive(1, 2) != RngStream::derive(1, 3));
    CHECK(RngStream::derive(1, 2) == RngStream::derive(1, 2));
}

TEST_CASE("RngStream uniform and normal moments") {
    RngStream rng(2024, 0);
    const int n = 200000;
    double su = 0, sn = 0, sn2 = 0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        su += u;
        const double z = rng.normal();
        sn += z;
        sn2 += z * z;
    }
    CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(std::abs(sn / n) < 0.01);
    CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("parallel_for results do not depend on the thread count") {
    const auto run = [](unsigned threads) {
        set_thread_count(threads);
        std::vector<double> out(1000);
        parallel_for(out.size(), [&](std::size_t i) {
            RngStream rng(77, i);
            out[i] = rng.normal();
        });
        set_thread_count(0);
        return out;
    };
    CHECK(run(1) == run(4));
}

TEST_CASE("nested parallel_for runs every inner index") {
    std::atomic<int> count{0};
    parallel_for(8, [&](std::size_t) { parallel_for(16, [&](std::size_t) { ++count; }); });
    CHECK(count.load() == 128);
}

TEST_CASE("logit band maps through expit") {
    const SCBand b = assemble_logit_band({0.0, 1.0}, {0.5, 0.2}, 2.0, 1.0, 0.05, Domain::grid1d({0, 1}));
    CHECK(b.link == Link::logit);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(b.scb_low[i] == expit(b.eta_link[i] - 2.0 * b.se[i]));
        CHECK(b.scb_up[i] == expit(b.eta_link[i] + 2.0 * b.se[i]));
        CHECK(b.scb_low[i] < b.eta_hat[i]);
        CHECK(b.eta_hat[i] < b.scb_up[i]);
    }
}

TEST_CASE("band JSON round trip is byte identical") {
    RngStream rng(8, 0);
    Mask mask(12, 1);
    mask[5] = 0;
    Field eta(12), se(12);
    for (std::size_t i = 0; i < 12; ++i) {
        eta[i] = rng.normal() * 1e3;
        se[i] = rng.uniform() / 3.0;
    }
    SCBand band = assemble_band(eta, se, 2.718281828, 1.0, 0.1, Domain::grid2d({0, 0.5, 1, 1.5}, {-1, 0, 1}, mask));
    band.method = "test";
    const std::string a = band_to_json(band);
    const SCBand back = band_from_json(a);
    CHECK(band_to_json(back) == a);
    CHECK(back.domain == band.domain);
    for (std::size_t i = 0; i < 12; ++i) {
        if (!mask[i]) continue;
        CHECK(back.eta_hat[i] == band.eta_hat[i]);
        CHECK(back.scb_up[i] == band.scb_up[i]);
    }
}

TEST_CASE("band JSON rejects a broken reconstruction") {
    SCBand band = assemble_band({0, 0}, {1, 1}, 2, 1, 0.05, Domain::grid1d({0, 1}));
    band.scb_up[1] = 5.0;
    CHECK_THROWS_AS(band_from_json(band_to_json(band)), Error);
}

TEST_CASE("band JSON accepts bands without SE") {
    const std::string text =
        R"({"domain":{"kind":"grid1d","x":[0,1,2]},"scb_low":[0,1,2],"scb_up":[2,3,4],"alpha":0.05})";
    const SCBand b = band_from_json(text);
    CHECK_FALSE(b.has_critical_value());
    CHECK(b.eta_hat == Field{1, 2, 3});
}
