#include "doctest.h"
#include "test_util.hpp"

#include "scb/formula.hpp"
#include "scb/regression.hpp"
#include "scb/table.hpp"

#include <Eigen/Dense>

#include <cmath>

using namespace scb;

namespace {

Table random_table(RngStream& rng, std::size_t n, double noise) {
    std::vector<double> y(n), x1(n), x2(n);
    for (std::size_t i = 0; i < n; ++i) {
        x1[i] = rng.uniform() * 2 - 1;
        x2[i] = rng.normal();
        y[i] = 0.5 + 2 * x1[i] - x2[i] + 0.3 * x1[i] * x1[i] + noise * rng.normal();
    }
    return Table({"y", "x1", "x2"}, {y, x1, x2});
}

} // namespace

TEST_CASE("parse_formula") {
    const ModelSpec s = parse_formula("y ~ x1 + I(x1^2) + I(x1^3)");
    CHECK(s.response == "y");
    REQUIRE(s.terms.size() == 3);
    CHECK(s.terms[0] == Term::main("x1"));
    CHECK(s.terms[1] == Term::pow("x1", 2));
    CHECK(s.terms[2] == Term::pow("x1", 3));
    CHECK(parse_formula("  y~x1+I( x1 ^ 2 )").terms.size() == 2);

    const ModelSpec dot = parse_formula("y ~ .");
    REQUIRE(dot.terms.size() == 1);
    CHECK(dot.terms[0].kind == Term::Kind::all_columns);

    CHECK_THROWS_WITH(parse_formula("y ~~ x"), doctest::Contains("position"));
    CHECK_THROWS(parse_formula("y ~ x + x"));
    CHECK_THROWS(parse_formula("y ~ y"));
    CHECK_THROWS(parse_formula("y ~ I(x^1)"));
    CHECK_THROWS(parse_formula("y x"));
}

TEST_CASE("resolve_formula expands the dot in column order") {
    const Table t({"a", "y", "b"}, {{1, 2}, {3, 4}, {5, 6}});
    const ModelSpec r = resolve_formula(parse_formula("y ~ ."), t);
    REQUIRE(r.terms.size() == 2);
    CHECK(r.terms[0].var == "a");
    CHECK(r.terms[1].var == "b");
    CHECK_THROWS(resolve_formula(parse_formula("y ~ zz"), t));
    CHECK_THROWS(resolve_formula(parse_formula("y ~ a + ."), t));
}

TEST_CASE("CSV parsing and writing") {
    const CsvFrame f = parse_csv("a,b\n1,NA\n3,4.5\n");
    const Table t = Table::from_csv(f);
    CHECK(t.n_rows() == 2);
    CHECK(std::isnan(t.col("b")[0]));
    CHECK(write_csv(t) == "a,b\n1,NA\n3,4.5\n");
    CHECK_THROWS(parse_csv("a,b\n1\n"));
    CHECK_THROWS(Table::from_csv(parse_csv("a\nfoo\n")));
    CHECK_THROWS(t.col("zz"));
}

TEST_CASE("fit_ols recovers exact coefficients") {
    std::vector<double> x(20), y(20);
    for (int i = 0; i < 20; ++i) {
        x[i] = i * 0.1;
        y[i] = 1.5 - 2.0 * x[i] + 0.25 * x[i] * x[i];
    }
    const FittedGLM f = fit_ols(Table({"y", "x"}, {y, x}), parse_formula("y ~ x + I(x^2)"));
    CHECK(f.beta(0) == doctest::Approx(1.5).epsilon(1e-10));
    CHECK(std::abs(f.beta(1) + 2.0) < 1e-10);
    CHECK(std::abs(f.beta(2) - 0.25) < 1e-10);
    CHECK(f.sigma2 < 1e-20);
    CHECK(f.term_names == std::vector<std::string>{"(Intercept)", "x", "I(x^2)"});
}

TEST_CASE("intercept-only OLS gives the sample mean and constant SE") {
    const Table t({"y"}, {{1, 2, 3, 4, 10}});
    const FittedGLM f = fit_ols(t, parse_formula("y ~ ."));
    CHECK(f.beta(0) == doctest::Approx(4.0));
    const MeanPrediction p = predict_design(f, Eigen::MatrixXd::Ones(3, 1));
    for (double s : p.se) CHECK(s == doctest::Approx(std::sqrt(f.sigma2 / 5.0)));
}

TEST_CASE("fit_ols matches the normal-equation oracle") {
    RngStream rng(4, 0);
    Eigen::MatrixXd X(50, 4);
    Eigen::VectorXd y(50);
    for (int i = 0; i < 50; ++i) {
        X(i, 0) = 1;
        for (int j = 1; j < 4; ++j) X(i, j) = rng.normal();
        y(i) = rng.normal();
    }
    const FittedGLM f = fit_ols(X, y);
    const Eigen::MatrixXd xtx_inv = (X.transpose() * X).inverse();
    const Eigen::VectorXd beta = xtx_inv * X.transpose() * y;
    CHECK((f.beta - beta).cwiseAbs().maxCoeff() < 1e-8);
    const double s2 = (y - X * beta).squaredNorm() / 46.0;
    CHECK(std::abs(f.sigma2 - s2) < 1e-10);
    CHECK((f.cov_beta - s2 * xtx_inv).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((X.transpose() * (y - X * f.beta)).cwiseAbs().maxCoeff() < 1e-8 * y.norm());

    Eigen::MatrixXd G(7, 4);
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 4; ++j) G(i, j) = rng.normal();
    const MeanPrediction p = predict_design(f, G);
    for (int i = 0; i < 7; ++i) {
        CHECK(p.eta[i] == doctest::Approx(G.row(i).dot(beta)).epsilon(1e-10));
        const double se = std::sqrt(G.row(i) * (s2 * xtx_inv) * G.row(i).transpose());
        CHECK(p.se[i] == doctest::Approx(se).epsilon(1e-8));
    }
}

TEST_CASE("fit_ols names collinear columns") {
    const Table t({"y", "a", "b"}, {{1, 2, 3, 5}, {1, 2, 3, 4}, {2, 4, 6, 8}});
    CHECK_THROWS_WITH(fit_ols(t, parse_formula("y ~ a + b")), doctest::Contains("collinear columns"));
}

TEST_CASE("logistic intercept-only closed forms") {
    const Table balanced({"y"}, {{0, 1, 0, 1, 1, 0}});
    CHECK(std::abs(fit_logistic(balanced, parse_formula("y ~ .")).beta(0)) < 1e-10);

    std::vector<double> y(100, 0.0);
    for (int i = 0; i < 73; ++i) y[i] = 1.0;
    const FittedGLM f = fit_logistic(Table({"y"}, {y}), parse_formula("y ~ ."));
    CHECK(std::abs(f.beta(0) - logit(0.73)) < 1e-8);
}

TEST_CASE("logistic score vanishes at the estimate") {
    RngStream rng(12, 0);
    const int n = 80;
    Eigen::MatrixXd X(n, 3);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = 1;
        X(i, 1) = rng.normal();
        X(i, 2) = rng.uniform();
        y(i) = rng.bernoulli(expit(-0.5 + X(i, 1) + X(i, 2))) ? 1 : 0;
    }
    const FittedGLM f = fit_logistic(X, y);
    Eigen::VectorXd p(n);
    for (int i = 0; i < n; ++i) p(i) = expit(X.row(i).dot(f.beta));
    CHECK((X.transpose() * (y - p)).cwiseAbs().maxCoeff() < 1e-8);
    const Eigen::MatrixXd info = X.transpose() * (p.array() * (1 - p.array())).matrix().asDiagonal() * X;
    CHECK((f.cov_beta - info.inverse()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("logistic separation and bad responses") {
    const Table sep({"y", "x"}, {{0, 0, 0, 1, 1, 1}, {1, 2, 3, 4, 5, 6}});
    CHECK_THROWS_WITH(fit_logistic(sep, parse_formula("y ~ x")), doctest::Contains("separation"));
    const Table bad({"y", "x"}, {{0, 2, 1}, {1, 2, 3}});
    CHECK_THROWS(fit_logistic(bad, parse_formula("y ~ x")));
}

TEST_CASE("saturated noiseless fit predicts the observed response") {
    RngStream rng(6, 0);
    const Table t = random_table(rng, 30, 0.0);
    const FittedGLM f = fit_ols(t, parse_formula("y ~ x1 + I(x1^2) + x2"));
    const Table row({"x1", "x2"}, {{t.col("x1")[3]}, {t.col("x2")[3]}});
    CHECK(predict_mean(f, row).eta[0] == doctest::Approx(t.col("y")[3]).epsilon(1e-10));
    CHECK_THROWS(predict_mean(f, Table({"x1"}, {{0.0}})));
}

TEST_CASE("zero-noise bootstrap band is degenerate with zero width") {
    RngStream rng(7, 0);
    const Table t = random_table(rng, 40, 0.0);
    const Table grid({"x1", "x2"}, {{-0.5, 0.0, 0.5}, {0.0, 0.0, 0.0}});
    BootstrapOptions opts;
    opts.n_boot = 200;
    const SCBand b = scb_mean_bootstrap(t, parse_formula("y ~ x1 + I(x1^2) + x2"), grid, Family::gaussian, opts);
    CHECK(b.degenerate);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(b.scb_up[i] - b.scb_low[i]) < 1e-9);
}

TEST_CASE("bootstrap band contains the pointwise interval and is reproducible") {
    RngStream rng(8, 0);
    const Table t = random_table(rng, 80, 1.0);
    std::vector<double> gx(25), gz(25, 0.0);
    for (int i = 0; i < 25; ++i) gx[i] = -1 + i / 12.0;
    const Table grid({"x1", "x2"}, {gx, gz});
    BootstrapOptions opts;
    opts.n_boot = 300;
    opts.seed = 99;
    const ModelSpec spec = parse_formula("y ~ x1 + I(x1^2) + x2");
    set_thread_count(1);
    const SCBand a = scb_mean_bootstrap(t, spec, grid, Family::gaussian, opts);
    set_thread_count(0);
    const SCBand b = scb_mean_bootstrap(t, spec, grid, Family::gaussian, opts);
    CHECK(a.q_alpha == b.q_alpha);
    CHECK(a.scb_low == b.scb_low);
    CHECK(a.q_alpha >= testutil::normal_quantile(0.975));
    CHECK(a.domain.kind() == DomainKind::grid1d);
    CHECK_NOTHROW(validate_band(a));
    opts.n_boot = 50;
    CHECK_THROWS(scb_mean_bootstrap(t, spec, grid, Family::gaussian, opts));
}

TEST_CASE("logistic mean band lives on the probability scale") {
    RngStream rng(10, 0);
    const std::size_t n = 150;
    std::vector<double> y(n), x(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = rng.uniform() * 2 - 1;
        y[i] = rng.bernoulli(expit(-0.3 + 1.2 * x[i])) ? 1 : 0;
    }
    const Table grid({"x"}, {{-0.8, -0.4, 0.0, 0.4, 0.8}});
    BootstrapOptions opts;
    opts.n_boot = 200;
    const SCBand b = scb_mean_bootstrap(Table({"y", "x"}, {y, x}), parse_formula("y ~ x"), grid, Family::binomial, opts);
    CHECK(b.link == Link::logit);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(b.scb_low[i] > 0.0);
        CHECK(b.scb_up[i] < 1.0);
        CHECK(b.scb_low[i] == expit(b.eta_link[i] - b.q_alpha * b.se[i]));
        CHECK(b.scb_up[i] == expit(b.eta_link[i] + b.q_alpha * b.se[i]));
    }
}

TEST_CASE("coefficient band: single coefficient and column permutation") {
    RngStream rng(13, 0);
    const Table t = random_table(rng, 60, 1.0);
    BootstrapOptions opts;
    opts.n_boot = 200;
    const SCBand one = scb_coef_bootstrap(Table({"y"}, {t.col("y")}), parse_formula("y ~ ."), Family::gaussian, opts);
    REQUIRE(one.domain.size() == 1);
    CHECK(one.scb_up[0] - one.scb_low[0] == doctest::Approx(2 * one.q_alpha * one.se[0]));

    const SCBand ab = scb_coef_bootstrap(t, parse_formula("y ~ x1 + x2"), Family::gaussian, opts);
    const SCBand ba = scb_coef_bootstrap(t, parse_formula("y ~ x2 + x1"), Family::gaussian, opts);
    CHECK(ab.domain.labels() == std::vector<std::string>{"(Intercept)", "x1", "x2"});
    CHECK(ba.domain.labels() == std::vector<std::string>{"(Intercept)", "x2", "x1"});
    CHECK(ab.eta_hat[1] == doctest::Approx(ba.eta_hat[2]).epsilon(1e-12));
    CHECK(ab.se[1] == doctest::Approx(ba.se[2]).epsilon(1e-12));
}
