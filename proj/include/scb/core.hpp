// Shared primitives: evaluation domains, band assembly, max-statistic
// quantiles and reproducible random streams.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace scb {

/// Library error carrying a short machine-readable code (e.g. "shape_mismatch").
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

/// Non-fatal diagnostics are routed through a process-wide handler.
/// The default handler prints "warning: <msg>" to stderr.
using WarningHandler = std::function<void(std::string_view)>;
void set_warning_handler(WarningHandler handler);
void warn(std::string_view message);

using Field = std::vector<double>;
using Mask = std::vector<std::uint8_t>;

enum class DomainKind { grid1d, grid2d, discrete };

std::string_view to_string(DomainKind kind);

/// Evaluation grid for a target function. Two-dimensional fields are stored
/// row-major with shape [ny, nx]: cell (iy, ix) lives at iy * nx + ix.
class Domain {
public:
    Domain() = default;

    static Domain grid1d(std::vector<double> x, Mask mask = {});
    static Domain grid2d(std::vector<double> x, std::vector<double> y, Mask mask = {});
    static Domain discrete(std::vector<std::string> labels, Mask mask = {});

    DomainKind kind() const noexcept { return kind_; }
    std::size_t size() const noexcept;
    std::size_t nx() const noexcept { return kind_ == DomainKind::discrete ? labels_.size() : x_.size(); }
    std::size_t ny() const noexcept { return kind_ == DomainKind::grid2d ? y_.size() : 1; }
    std::vector<std::size_t> shape() const;

    const std::vector<double>& x() const noexcept { return x_; }
    const std::vector<double>& y() const noexcept { return y_; }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    const Mask& mask() const noexcept { return mask_; }
    bool has_mask() const noexcept { return !mask_.empty(); }

    bool included(std::size_t i) const noexcept { return mask_.empty() || mask_[i] != 0; }
    std::size_t count_included() const noexcept;
    std::size_t index(std::size_t iy, std::size_t ix) const noexcept { return iy * nx() + ix; }

    bool same_shape(const Domain& other) const noexcept;
    friend bool operator==(const Domain&, const Domain&) = default;

private:
    DomainKind kind_ = DomainKind::grid1d;
    std::vector<double> x_;
    std::vector<double> y_;
    std::vector<std::string> labels_;
    Mask mask_;
};

enum class Link { identity, logit };

/// Simultaneous confidence band  eta_hat +/- q_alpha * se / tau.
///
/// For a logit link the band is assembled on the linear-predictor scale
/// (eta_link, se) and mapped through the inverse link; eta_hat, scb_low and
/// scb_up then live on the probability scale. User-supplied bands may carry
/// no standard error at all (se empty), in which case only the ordering
/// invariant is meaningful. Masked cells hold NaN in every field.
struct SCBand {
    Domain domain;
    Field eta_hat;
    Field se;
    double q_alpha = 0.0;
    double tau = 1.0;
    double alpha = 0.05;
    Field scb_low;
    Field scb_up;
    Link link = Link::identity;
    Field eta_link;
    bool degenerate = false;
    std::string method;

    bool has_critical_value() const noexcept { return !se.empty(); }
};

double expit(double x) noexcept;
double logit(double p) noexcept;

/// Conservative empirical quantile: the order statistic at rank
/// ceil(level * B) of the ascending sample.
double empirical_quantile(std::span<const double> samples, double level);

/// 1-based rank used by empirical_quantile.
std::size_t quantile_rank(std::size_t n, double level);

SCBand assemble_band(Field eta_hat, Field se, double q, double tau, double alpha, Domain domain);

/// Same as assemble_band, then maps the band through expit. eta_link and se
/// are on the linear-predictor scale.
SCBand assemble_logit_band(Field eta_link, Field se, double q, double tau, double alpha, Domain domain);

/// max over included s of |delta(s)| / se(s). A point with se = 0 and
/// delta = 0 contributes 0; se = 0 with delta != 0 throws "degenerate SE".
double max_abs_standardized(std::span<const double> delta, std::span<const double> se,
                            const Mask* mask = nullptr);

/// Throws Error("invalid_band", ...) naming the first violated invariant.
void validate_band(const SCBand& band);

/// Counter-based random stream: a (seed, stream_id) pair fully determines the
/// sequence, so replicate b always sees the same draws regardless of the
/// order or thread in which replicates are evaluated.
class RngStream {
public:
    using result_type = std::uint64_t;

    RngStream(std::uint64_t seed, std::uint64_t stream_id);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }
    result_type operator()();

    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    /// Standard normal (Box-Muller, second variate cached).
    double normal();
    /// Uniform integer on [0, n).
    std::size_t index(std::size_t n);
    bool bernoulli(double p);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    /// Seed for a child stream family, used to nest replicate loops.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream_id);

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t s_[4];
    bool has_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

/// Runs body(i) for i in [0, n) on a small worker pool. Results must be
/// written to index i so the outcome does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

/// Overrides the worker count (0 = hardware concurrency).
void set_thread_count(unsigned threads);

} // namespace scb
