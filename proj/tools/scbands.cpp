// scbands: simultaneous confidence bands and inverse-set regions from the command line.
#include "scb/band_io.hpp"
#include "scb/core.hpp"
#include "scb/formula.hpp"
#include "scb/functional.hpp"
#include "scb/geospatial.hpp"
#include "scb/inverse_sets.hpp"
#include "scb/plot.hpp"
#include "scb/regression.hpp"
#include "scb/sim.hpp"
#include "scb/table.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

using namespace scb;

// Errors detected while interpreting arguments; reported with exit code 2.
struct UsageError : Error {
    explicit UsageError(const std::string& message) : Error("usage_error", message) {}
};

struct Globals {
    std::uint64_t seed = 1;
    std::string out;
    bool quiet = false;
    unsigned threads = 0;
};

void emit_error(const std::string& code, const std::string& message, const std::string& context) {
    nlohmann::ordered_json j;
    j["error"] = code;
    j["message"] = message;
    j["context"] = context;
    std::cerr << j.dump() << "\n";
}

void write_output(const Globals& g, const std::string& text) {
    if (g.out.empty() || g.out == "-") {
        std::cout << text;
        if (!text.empty() && text.back() != '\n') std::cout << "\n";
    } else {
        write_text_file(g.out, text);
    }
}

void progress(const Globals& g, const std::string& msg) {
    if (!g.quiet) std::cerr << msg << "\n";
}

double parse_real(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw UsageError("cannot parse " + what + " value '" + s + "'");
    }
}

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, sep)) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

/// "-0.3,0,0.3" for one-sided sets; "a:b,c:d" for intervals.
ThresholdSpec parse_thresholds(const std::string& set_type, const std::string& levels) {
    ThresholdSpec spec;
    try {
        spec.set_type = parse_set_type(set_type);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    for (const auto& item : split(levels, ',')) {
        if (spec.set_type == SetType::interval) {
            const auto parts = split(item, ':');
            if (parts.size() != 2) throw UsageError("interval levels must be written a:b, got '" + item + "'");
            spec.levels.push_back(Level::interval(parse_real(parts[0], "level"), parse_real(parts[1], "level")));
        } else {
            spec.levels.push_back(Level::single(parse_real(item, "level")));
        }
    }
    try {
        spec.validate();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    return spec;
}

bool parse_bool(const std::string& s, const std::string& what) {
    if (s == "true" || s == "TRUE" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "FALSE" || s == "0" || s == "no") return false;
    throw UsageError("expected true or false for " + what + ", got '" + s + "'");
}

Eigen::MatrixXd table_matrix(const Table& t, const std::vector<std::string>& skip = {}) {
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < t.n_cols(); ++j) {
        if (std::find(skip.begin(), skip.end(), t.names()[j]) == skip.end()) cols.push_back(j);
    }
    Eigen::MatrixXd X(static_cast<Eigen::Index>(t.n_rows()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
        const auto& v = t.col(cols[c]);
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!std::isfinite(v[i])) throw Error("invalid_argument", "design column '" + t.names()[cols[c]] + "' has missing values");
            X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = v[i];
        }
    }
    return X;
}

Mask read_mask_file(const std::string& path, std::size_t nx, std::size_t ny) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw Error("parse_error", "invalid mask file: " + std::string(e.what()));
    }
    if (j.is_object()) j = j.at("mask");
    Mask m;
    if (j.size() != nx) throw Error("shape_mismatch", "mask must have one row per x value");
    for (const auto& row : j) {
        if (row.size() != ny) throw Error("shape_mismatch", "mask rows must have one entry per y value");
        for (const auto& v : row) m.push_back(v.is_boolean() ? v.get<bool>() : v.get<double>() != 0.0);
    }
    return m;
}

struct RegressionArgs {
    std::string data, model, grid, grid_boot, family = "linear";
    std::size_t nboot = 1000;
    double alpha = 0.05;
};

struct FosrArgs {
    std::string data, id = "id", time = "time", outcome = "y", covariates, method = "cma", fitted = "true", subset;
    std::string weights = "rademacher", sd = "t", covariance = "sandwich";
    std::size_t nboot = 0;
    std::size_t basis = 30;
    double alpha = 0.05;
    double pve = 0.95;
};

struct GlsArgs {
    std::string data, design, w, correlation = "none", mask, group_column, weights = "rademacher", sd = "t";
    std::optional<double> rho;
    std::size_t nboot = 1000;
    double alpha = 0.1;
};

struct InvertArgs {
    std::string band, set_type = "upper", levels, truth;
};

struct PlotArgs {
    std::string band, set_type = "upper", levels, together = "true", xlab = "x", ylab = "y", title, palette = "Spectral",
                                              level_label = "true", label_color = "#000000";
    std::size_t min_size = 5;
    int width = 640, height = 480;
};

struct SimArgs {
    std::string design = "linear_outcome", method = "bootstrap", weights = "rademacher", sd = "t", covariance = "sandwich";
    std::size_t n = 100, reps = 500, nboot = 0;
    double alpha = 0.05;
    double missing = 0.0;
    std::optional<double> noise_sd;
};

void run_regression(const std::string& kind, const RegressionArgs& a, const Globals& g) {
    const Table data = Table::from_csv(read_csv(a.data));
    const ModelSpec spec = parse_formula(a.model);
    BootstrapOptions opts;
    opts.n_boot = a.nboot;
    opts.alpha = a.alpha;
    opts.seed = g.seed;
    SCBand band;
    if (kind == "coef") {
        Family family;
        try {
            family = parse_family(a.family);
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
        band = scb_coef_bootstrap(data, spec, family, opts);
    } else {
        if (a.grid.empty()) throw UsageError("--grid is required for outcome bands");
        const Table grid = Table::from_csv(read_csv(a.grid));
        if (!a.grid_boot.empty()) opts.grid_boot = Table::from_csv(read_csv(a.grid_boot));
        band = scb_mean_bootstrap(data, spec, grid, kind == "logistic" ? Family::binomial : Family::gaussian, opts);
    }
    progress(g, "q = " + format_real(band.q_alpha));
    write_output(g, band_to_json(band));
}

void run_fosr(const FosrArgs& a, const Globals& g) {
    const FunctionalDataset data = functional_from_long(read_csv(a.data), a.id, a.time, a.outcome,
                                                        a.covariates.empty() ? std::vector<std::string>{} : split(a.covariates, ','));
    const bool fitted = parse_bool(a.fitted, "--fitted");
    if (a.method != "cma" && a.method != "multiplier") throw UsageError("--method must be cma or multiplier");
    SubsetSpec subset;
    try {
        subset = parse_subset(a.subset);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    FosrOptions fo;
    fo.n_basis = a.basis;
    fo.pve = a.pve;
    fo.covariance = parse_fosr_covariance(a.covariance);
    const FoSRFit fit = fit_fosr(data, data.covariate_names, fo);
    const TargetKind target = fitted ? TargetKind::fitted_mean : TargetKind::coefficient;
    SCBand band;
    if (a.method == "cma") {
        band = scb_cma(fit, subset, target, {a.alpha, a.nboot ? a.nboot : 10000, g.seed});
    } else {
        MultiplierOptions mo;
        mo.alpha = a.alpha;
        mo.nboot = a.nboot ? a.nboot : 5000;
        mo.weights = parse_multiplier_kind(a.weights);
        mo.sd = parse_sd_method(a.sd);
        mo.seed = g.seed;
        mo.impute_pve = a.pve;
        band = scb_multiplier(data, fit, subset, target, mo);
    }
    progress(g, "q = " + format_real(band.q_alpha));
    write_output(g, band_to_json(band));
}

void run_gls(const GlsArgs& a, const Globals& g) {
    SpatialObservations obs = read_spatial(a.data);
    if (!a.mask.empty()) obs.mask = read_mask_file(a.mask, obs.nx(), obs.ny());
    const Table design = Table::from_csv(read_csv(a.design));
    const Eigen::MatrixXd X = table_matrix(design, a.group_column.empty() ? std::vector<std::string>{}
                                                                           : std::vector<std::string>{a.group_column});
    const auto wv = split(a.w, ',');
    Eigen::VectorXd w(static_cast<Eigen::Index>(wv.size()));
    for (std::size_t k = 0; k < wv.size(); ++k) w(static_cast<Eigen::Index>(k)) = parse_real(wv[k], "--w");
    CorrelationSpec corr;
    try {
        corr.kind = parse_correlation_kind(a.correlation);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    corr.rho = a.rho;
    if (!a.group_column.empty()) {
        for (double v : design.col(a.group_column)) corr.groups.push_back(static_cast<int>(std::lround(v)));
    }
    GlsBandOptions opts;
    opts.nboot = a.nboot;
    opts.alpha = a.alpha;
    opts.seed = g.seed;
    opts.weights = parse_multiplier_kind(a.weights);
    opts.sd = parse_sd_method(a.sd);
    const SCBand band = scb_gls(obs, X, w, corr, opts);
    progress(g, "q = " + format_real(band.q_alpha));
    write_output(g, band_to_json(band));
}

void run_invert(const InvertArgs& a, const Globals& g) {
    const ThresholdSpec spec = parse_thresholds(a.set_type, a.levels);
    const SCBand band = read_band_file(a.band);
    const auto regions = invert(band, spec);
    std::optional<ContainmentSummary> summary;
    if (!a.truth.empty()) {
        const Field truth = read_field_file(a.truth, band.domain);
        summary = check_containment(regions, truth, band.domain);
        std::string line = "containment: all=" + std::string(summary->contain_all ? "true" : "false") + " per level=[";
        for (std::size_t i = 0; i < summary->contain_individual.size(); ++i) {
            line += (i ? "," : "") + std::string(summary->contain_individual[i] ? "true" : "false");
        }
        progress(g, line + "]");
    }
    write_output(g, regions_to_json(band.domain, spec, regions, summary));
}

void run_plot(const PlotArgs& a, const Globals& g) {
    PlotSpec spec;
    spec.thresholds = parse_thresholds(a.set_type, a.levels);
    spec.together = parse_bool(a.together, "--together");
    spec.xlab = a.xlab;
    spec.ylab = a.ylab;
    spec.title = a.title;
    spec.palette = a.palette;
    spec.level_label = parse_bool(a.level_label, "--level-label");
    spec.min_size = a.min_size;
    spec.label_color = a.label_color;
    spec.width = a.width;
    spec.height = a.height;
    try {
        spec.validate();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    const SCBand band = read_band_file(a.band);
    if (g.out.empty() || g.out == "-") {
        const auto docs = render_plot(band, spec);
        if (docs.size() != 1) throw UsageError("--out is required when together=false");
        std::cout << docs.front();
        return;
    }
    for (const auto& p : write_plot(band, spec, g.out)) progress(g, "wrote " + p);
}

void run_simulate(const SimArgs& a, const Globals& g) {
    SimDesign design;
    MethodConfig cfg;
    try {
        design.kind = parse_design_kind(a.design);
        cfg.method = parse_sim_method(a.method);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    design.n = a.n;
    design.fosr_missing_fraction = a.missing;
    if (a.noise_sd) design.linear_noise_sd = *a.noise_sd;
    cfg.alpha = a.alpha;
    cfg.nboot = a.nboot ? a.nboot : cfg.method == SimMethod::cma ? 10000 : cfg.method == SimMethod::multiplier ? 5000 : 1000;
    cfg.weights = parse_multiplier_kind(a.weights);
    cfg.sd = parse_sd_method(a.sd);
    cfg.fosr.covariance = parse_fosr_covariance(a.covariance);
    if (a.reps < 50) warn("fewer than 50 replicates; coverage estimates will be coarse");
    const CoverageReport rep = run_coverage(design, cfg, a.reps, g.seed);
    char line[160];
    std::snprintf(line, sizeof line, "coverage %.4f (MCSE %.4f) over %zu replicates, %zu failed, %.1f s", rep.coverage,
                  rep.mcse, rep.replicates, rep.failures, rep.wall_seconds);
    progress(g, line);
    write_output(g, coverage_report_to_json(rep));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Simultaneous confidence bands and inverse-set confidence regions"};
    app.require_subcommand(1);
    Globals g;
    const auto add_globals = [&](CLI::App* sub) {
        sub->add_option("--seed", g.seed, "Random seed");
        sub->add_option("--out", g.out, "Output file (stdout when omitted)");
        sub->add_flag("--quiet", g.quiet, "Suppress progress and warnings");
        sub->add_option("--threads", g.threads, "Worker threads (0 = all cores)");
    };
    add_globals(&app);
    std::string context = "scbands";

    // scb
    auto* scb_cmd = app.add_subcommand("scb", "Construct a simultaneous confidence band");
    scb_cmd->require_subcommand(1);
    RegressionArgs reg;
    std::string reg_kind;
    for (const char* kind : {"linear", "logistic", "coef"}) {
        auto* sub = scb_cmd->add_subcommand(kind, std::string("Bootstrap band: ") + kind);
        sub->add_option("--data", reg.data, "Data CSV")->required()->check(CLI::ExistingFile);
        sub->add_option("--model", reg.model, "Model formula, e.g. \"y ~ x1 + I(x1^2)\"")->required();
        if (std::string(kind) == "coef") {
            sub->add_option("--family", reg.family, "linear or logistic");
        } else {
            sub->add_option("--grid", reg.grid, "Prediction grid CSV")->required()->check(CLI::ExistingFile);
            sub->add_option("--grid-boot", reg.grid_boot, "Grid used for the bootstrap maximum")->check(CLI::ExistingFile);
        }
        sub->add_option("--nboot", reg.nboot, "Bootstrap replicates");
        sub->add_option("--alpha", reg.alpha, "Significance level");
        add_globals(sub);
        sub->callback([&, kind] { reg_kind = kind; });
    }
    FosrArgs fa;
    auto* fosr_cmd = scb_cmd->add_subcommand("fosr", "Function-on-scalar regression band (CMA or multiplier-t)");
    fosr_cmd->add_option("--data", fa.data, "Long-format CSV")->required()->check(CLI::ExistingFile);
    fosr_cmd->add_option("--id", fa.id, "Subject id column");
    fosr_cmd->add_option("--time", fa.time, "Time column");
    fosr_cmd->add_option("--outcome", fa.outcome, "Outcome column");
    fosr_cmd->add_option("--covariates", fa.covariates, "Comma-separated covariates (default: all other columns)");
    fosr_cmd->add_option("--method", fa.method, "cma or multiplier");
    fosr_cmd->add_option("--fitted", fa.fitted, "true: fitted mean outcome; false: coefficient function");
    fosr_cmd->add_option("--subset", fa.subset, "Covariate values, e.g. \"use=1,age=40\"");
    fosr_cmd->add_option("--weights", fa.weights, "rademacher, gaussian or mammen");
    fosr_cmd->add_option("--sd", fa.sd, "t or regular");
    fosr_cmd->add_option("--nboot", fa.nboot, "Draws (default 10000 for cma, 5000 for multiplier)");
    fosr_cmd->add_option("--alpha", fa.alpha, "Significance level");
    fosr_cmd->add_option("--pve", fa.pve, "Proportion of variance explained by the FPCA");
    fosr_cmd->add_option("--basis", fa.basis, "Number of cubic B-spline functions");
    fosr_cmd->add_option("--covariance", fa.covariance, "sandwich or gls");
    add_globals(fosr_cmd);
    GlsArgs ga;
    auto* gls_cmd = scb_cmd->add_subcommand("gls", "Spot-wise GLS band over a 2D grid");
    gls_cmd->add_option("--data", ga.data, "JSON header of the observation cube")->required()->check(CLI::ExistingFile);
    gls_cmd->add_option("--design", ga.design, "Design CSV, one row per observation")->required()->check(CLI::ExistingFile);
    gls_cmd->add_option("--w", ga.w, "Weights of the linear functional, e.g. \"1,0,0,0\"")->required();
    gls_cmd->add_option("--correlation", ga.correlation, "none, ar1 or compsymm");
    gls_cmd->add_option("--rho", ga.rho, "Correlation parameter (estimated per spot when omitted)");
    gls_cmd->add_option("--group-column", ga.group_column, "Design column holding group labels");
    gls_cmd->add_option("--mask", ga.mask, "Mask JSON, nested [nx][ny]")->check(CLI::ExistingFile);
    gls_cmd->add_option("--weights", ga.weights, "rademacher, gaussian or mammen");
    gls_cmd->add_option("--sd", ga.sd, "t or regular");
    gls_cmd->add_option("--nboot", ga.nboot, "Bootstrap replicates");
    gls_cmd->add_option("--alpha", ga.alpha, "Significance level");
    add_globals(gls_cmd);

    InvertArgs ia;
    auto* inv_cmd = app.add_subcommand("invert", "Invert a band into inner and outer confidence regions");
    inv_cmd->add_option("--band", ia.band, "Band JSON")->required()->check(CLI::ExistingFile);
    inv_cmd->add_option("--set-type", ia.set_type, "upper, lower, two-sided or interval");
    inv_cmd->add_option("--levels", ia.levels, "Comma-separated levels; a:b pairs for intervals")->required();
    inv_cmd->add_option("--truth", ia.truth, "True mean field for a containment check")->check(CLI::ExistingFile);
    add_globals(inv_cmd);

    PlotArgs pa;
    auto* plot_cmd = app.add_subcommand("plot", "Render a band and its regions as SVG");
    plot_cmd->add_option("--band", pa.band, "Band JSON")->required()->check(CLI::ExistingFile);
    plot_cmd->add_option("--set-type", pa.set_type, "upper, lower, two-sided or interval");
    plot_cmd->add_option("--levels", pa.levels, "Comma-separated levels; a:b pairs for intervals")->required();
    plot_cmd->add_option("--together", pa.together, "true: one panel; false: one file per level");
    plot_cmd->add_option("--xlab", pa.xlab, "x-axis label");
    plot_cmd->add_option("--ylab", pa.ylab, "y-axis label");
    plot_cmd->add_option("--title", pa.title, "Plot title");
    plot_cmd->add_option("--palette", pa.palette, "Spectral, Viridis or Greys");
    plot_cmd->add_option("--level-label", pa.level_label, "Label contour levels");
    plot_cmd->add_option("--min-size", pa.min_size, "Minimum contour point count for a label");
    plot_cmd->add_option("--label-color", pa.label_color, "Label color");
    plot_cmd->add_option("--width", pa.width, "Width in pixels");
    plot_cmd->add_option("--height", pa.height, "Height in pixels");
    add_globals(plot_cmd);

    SimArgs sa;
    auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo experiments");
    sim_cmd->require_subcommand(1);
    auto* cov_cmd = sim_cmd->add_subcommand("coverage", "Empirical simultaneous coverage");
    cov_cmd->add_option("--design", sa.design, "fosr, linear_outcome, logistic_outcome, linear_coef or logistic_coef");
    cov_cmd->add_option("--method", sa.method, "bootstrap (regression designs), cma or multiplier (fosr)");
    cov_cmd->add_option("--n", sa.n, "Sample size");
    cov_cmd->add_option("--reps", sa.reps, "Replicates");
    cov_cmd->add_option("--alpha", sa.alpha, "Significance level");
    cov_cmd->add_option("--nboot", sa.nboot, "Bootstrap draws per replicate");
    cov_cmd->add_option("--weights", sa.weights, "Multiplier law");
    cov_cmd->add_option("--sd", sa.sd, "t or regular");
    cov_cmd->add_option("--covariance", sa.covariance, "FoSR coefficient covariance: sandwich or gls");
    cov_cmd->add_option("--missing-fraction", sa.missing, "Fraction of FoSR cells set missing");
    cov_cmd->add_option("--noise-sd", sa.noise_sd, "Noise SD of the linear outcome design");
    add_globals(cov_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        emit_error("usage_error", e.what(), "arguments");
        return 2;
    }

    if (g.quiet) set_warning_handler([](std::string_view) {});
    set_thread_count(g.threads);
    try {
        if (scb_cmd->parsed()) {
            if (fosr_cmd->parsed()) {
                context = "scb fosr";
                run_fosr(fa, g);
            } else if (gls_cmd->parsed()) {
                context = "scb gls";
                run_gls(ga, g);
            } else {
                context = "scb " + reg_kind;
                run_regression(reg_kind, reg, g);
            }
        } else if (inv_cmd->parsed()) {
            context = "invert";
            run_invert(ia, g);
        } else if (plot_cmd->parsed()) {
            context = "plot";
            run_plot(pa, g);
        } else if (cov_cmd->parsed()) {
            context = "simulate coverage";
            run_simulate(sa, g);
        }
    } catch (const UsageError& e) {
        emit_error(e.code(), e.what(), context);
        return 2;
    } catch (const Error& e) {
        emit_error(e.code(), e.what(), context);
        return 1;
    } catch (const std::exception& e) {
        emit_error("runtime_error", e.what(), context);
        return 1;
    }
    return 0;
}
