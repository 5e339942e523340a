#include "scb/core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <limits>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

namespace scb {

namespace {

std::mutex g_warning_mutex;
WarningHandler g_warning_handler;
std::atomic<unsigned> g_thread_count{0};

void require_increasing(const std::vector<double>& v, const char* axis) {
    if (v.empty()) {
        throw Error("invalid_domain", std::string("empty ") + axis + " axis");
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            throw Error("invalid_domain", std::string("non-finite coordinate on ") + axis + " axis");
        }
        if (i > 0 && !(v[i] > v[i - 1])) {
            throw Error("invalid_domain",
                        std::string(axis) + " coordinates must be strictly increasing (index " +
                            std::to_string(i) + ")");
        }
    }
}

void require_mask(const Mask& mask, std::size_t n) {
    if (mask.empty()) {
        return;
    }
    if (mask.size() != n) {
        throw Error("invalid_domain", "mask has " + std::to_string(mask.size()) +
                                          " cells, grid has " + std::to_string(n));
    }
    if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
        throw Error("invalid_domain", "mask excludes every cell");
    }
}

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

} // namespace

void set_warning_handler(WarningHandler handler) {
    std::lock_guard lock(g_warning_mutex);
    g_warning_handler = std::move(handler);
}

void warn(std::string_view message) {
    std::lock_guard lock(g_warning_mutex);
    if (g_warning_handler) {
        g_warning_handler(message);
    } else {
        std::cerr << "warning: " << message << '\n';
    }
}

std::string_view to_string(DomainKind kind) {
    switch (kind) {
    case DomainKind::grid1d: return "grid1d";
    case DomainKind::grid2d: return "grid2d";
    case DomainKind::discrete: return "discrete";
    }
    return "unknown";
}

Domain Domain::grid1d(std::vector<double> x, Mask mask) {
    require_increasing(x, "x");
    require_mask(mask, x.size());
    Domain d;
    d.kind_ = DomainKind::grid1d;
    d.x_ = std::move(x);
    d.mask_ = std::move(mask);
    return d;
}

Domain Domain::grid2d(std::vector<double> x, std::vector<double> y, Mask mask) {
    require_increasing(x, "x");
    require_increasing(y, "y");
    require_mask(mask, x.size() * y.size());
    Domain d;
    d.kind_ = DomainKind::grid2d;
    d.x_ = std::move(x);
    d.y_ = std::move(y);
    d.mask_ = std::move(mask);
    return d;
}

Domain Domain::discrete(std::vector<std::string> labels, Mask mask) {
    if (labels.empty()) {
        throw Error("invalid_domain", "discrete domain needs at least one label");
    }
    std::set<std::string> seen;
    for (const auto& l : labels) {
        if (!seen.insert(l).second) {
            throw Error("invalid_domain", "duplicate label '" + l + "'");
        }
    }
    require_mask(mask, labels.size());
    Domain d;
    d.kind_ = DomainKind::discrete;
    d.labels_ = std::move(labels);
    d.mask_ = std::move(mask);
    return d;
}

std::size_t Domain::size() const noexcept {
    switch (kind_) {
    case DomainKind::grid1d: return x_.size();
    case DomainKind::grid2d: return x_.size() * y_.size();
    case DomainKind::discrete: return labels_.size();
    }
    return 0;
}

std::vector<std::size_t> Domain::shape() const {
    if (kind_ == DomainKind::grid2d) {
        return {y_.size(), x_.size()};
    }
    return {size()};
}

std::size_t Domain::count_included() const noexcept {
    if (mask_.empty()) {
        return size();
    }
    return static_cast<std::size_t>(std::count_if(mask_.begin(), mask_.end(), [](auto m) { return m != 0; }));
}

bool Domain::same_shape(const Domain& other) const noexcept {
    return kind_ == other.kind_ && shape() == other.shape();
}

double expit(double x) noexcept {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double logit(double p) noexcept { return std::log(p / (1.0 - p)); }

std::size_t quantile_rank(std::size_t n, double level) {
    // The relative slack absorbs representation error in products such as
    // 0.95 * 20, which must give rank 19 rather than 20.
    const double raw = level * static_cast<double>(n);
    auto k = static_cast<std::size_t>(std::ceil(raw * (1.0 - 1e-12)));
    return std::clamp<std::size_t>(k, 1, n);
}

double empirical_quantile(std::span<const double> samples, double level) {
    if (samples.empty()) {
        throw Error("no_samples", "no bootstrap samples");
    }
    if (!(level > 0.0 && level < 1.0)) {
        throw Error("invalid_argument", "quantile level must lie in (0, 1)");
    }
    std::vector<double> work(samples.begin(), samples.end());
    for (double v : work) {
        if (!std::isfinite(v)) {
            throw Error("non_finite", "non-finite statistic");
        }
    }
    const std::size_t k = quantile_rank(work.size(), level);
    auto nth = work.begin() + static_cast<std::ptrdiff_t>(k - 1);
    std::nth_element(work.begin(), nth, work.end());
    return *nth;
}

namespace {

void check_band_inputs(const Field& eta_hat, const Field& se, double q, double tau, double alpha,
                       const Domain& domain) {
    const std::size_t n = domain.size();
    if (eta_hat.size() != n || se.size() != n) {
        throw Error("shape_mismatch", "estimate/SE fields have " + std::to_string(eta_hat.size()) + "/" +
                                          std::to_string(se.size()) + " cells, domain has " +
                                          std::to_string(n));
    }
    if (!(q >= 0.0) || !std::isfinite(q)) {
        throw Error("invalid_argument", "critical value must be finite and nonnegative");
    }
    if (!(tau > 0.0) || !std::isfinite(tau)) {
        throw Error("invalid_argument", "normalizing factor tau must be positive");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw Error("invalid_argument", "alpha must lie in (0, 1)");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!domain.included(i)) {
            continue;
        }
        if (se[i] < 0.0) {
            throw Error("negative_se", "negative standard error at cell " + std::to_string(i));
        }
        if (!std::isfinite(se[i]) || !std::isfinite(eta_hat[i])) {
            throw Error("non_finite", "non-finite estimate or SE at cell " + std::to_string(i));
        }
    }
}

} // namespace

SCBand assemble_band(Field eta_hat, Field se, double q, double tau, double alpha, Domain domain) {
    check_band_inputs(eta_hat, se, q, tau, alpha, domain);
    const std::size_t n = domain.size();
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    SCBand band;
    band.scb_low.assign(n, nan);
    band.scb_up.assign(n, nan);
    for (std::size_t i = 0; i < n; ++i) {
        if (!domain.included(i)) {
            eta_hat[i] = nan;
            se[i] = nan;
            continue;
        }
        const double half = q * se[i] / tau;
        band.scb_low[i] = eta_hat[i] - half;
        band.scb_up[i] = eta_hat[i] + half;
    }
    band.eta_hat = std::move(eta_hat);
    band.se = std::move(se);
    band.q_alpha = q;
    band.tau = tau;
    band.alpha = alpha;
    band.domain = std::move(domain);
    return band;
}

SCBand assemble_logit_band(Field eta_link, Field se, double q, double tau, double alpha, Domain domain) {
    SCBand band = assemble_band(std::move(eta_link), std::move(se), q, tau, alpha, std::move(domain));
    band.link = Link::logit;
    band.eta_link = band.eta_hat;
    for (std::size_t i = 0; i < band.eta_hat.size(); ++i) {
        if (!band.domain.included(i)) {
            continue;
        }
        band.eta_hat[i] = expit(band.eta_link[i]);
        band.scb_low[i] = expit(band.scb_low[i]);
        band.scb_up[i] = expit(band.scb_up[i]);
    }
    return band;
}

double max_abs_standardized(std::span<const double> delta, std::span<const double> se, const Mask* mask) {
    if (delta.size() != se.size() || (mask && !mask->empty() && mask->size() != delta.size())) {
        throw Error("shape_mismatch", "delta, se and mask must share one shape");
    }
    double best = 0.0;
    for (std::size_t i = 0; i < delta.size(); ++i) {
        if (mask && !mask->empty() && (*mask)[i] == 0) {
            continue;
        }
        const double d = std::abs(delta[i]);
        if (se[i] == 0.0) {
            if (d != 0.0) {
                throw Error("degenerate_se", "degenerate SE at cell " + std::to_string(i));
            }
            continue;
        }
        best = std::max(best, d / se[i]);
    }
    return best;
}

void validate_band(const SCBand& band) {
    const Domain& dom = band.domain;
    const std::size_t n = dom.size();
    auto fail = [](const std::string& what) { throw Error("invalid_band", what); };
    if (band.eta_hat.size() != n || band.scb_low.size() != n || band.scb_up.size() != n) {
        fail("field length does not match domain shape");
    }
    if (!(band.alpha > 0.0 && band.alpha < 1.0)) {
        fail("alpha must lie in (0, 1)");
    }
    if (band.has_critical_value()) {
        if (band.se.size() != n) {
            fail("se length does not match domain shape");
        }
        if (!(band.q_alpha >= 0.0)) {
            fail("q_alpha must be nonnegative");
        }
        if (!(band.tau > 0.0)) {
            fail("tau must be positive");
        }
        if (band.link == Link::logit && band.eta_link.size() != n) {
            fail("logit band without eta_link");
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!dom.included(i)) {
            continue;
        }
        const double lo = band.scb_low[i];
        const double est = band.eta_hat[i];
        const double up = band.scb_up[i];
        if (!std::isfinite(lo) || !std::isfinite(est) || !std::isfinite(up)) {
            fail("non-finite value at unmasked cell " + std::to_string(i));
        }
        if (!(lo <= est && est <= up)) {
            fail("ordering scb_low <= eta_hat <= scb_up violated at cell " + std::to_string(i));
        }
        if (!band.has_critical_value()) {
            continue;
        }
        if (!(band.se[i] >= 0.0)) {
            fail("negative se at cell " + std::to_string(i));
        }
        const double centre = band.link == Link::logit ? band.eta_link[i] : est;
        const double half = band.q_alpha * band.se[i] / band.tau;
        double lo_r = centre - half;
        double up_r = centre + half;
        double est_r = centre;
        if (band.link == Link::logit) {
            lo_r = expit(lo_r);
            up_r = expit(up_r);
            est_r = expit(centre);
        }
        // Bands written by this library reconstruct bit-for-bit; the small
        // tolerance admits bands computed elsewhere with the same formula.
        const double tol = 1e-12 * (1.0 + std::abs(lo_r) + std::abs(up_r));
        if (std::abs(lo_r - lo) > tol || std::abs(up_r - up) > tol || std::abs(est_r - est) > tol) {
            fail("reconstruction scb = eta_hat +/- q_alpha*se/tau violated at cell " + std::to_string(i));
        }
    }
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {
    std::uint64_t state = derive(seed, stream_id);
    for (auto& word : s_) {
        word = splitmix64(state);
    }
}

std::uint64_t RngStream::derive(std::uint64_t seed, std::uint64_t stream_id) {
    std::uint64_t state = seed;
    std::uint64_t a = splitmix64(state);
    state = a ^ (stream_id * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
    splitmix64(state);
    return splitmix64(state);
}

RngStream::result_type RngStream::operator()() {
    // xoshiro256**
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double RngStream::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

double RngStream::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(theta);
    has_cached_normal_ = true;
    return r * std::cos(theta);
}

std::size_t RngStream::index(std::size_t n) {
    // Lemire's nearly-divisionless bounded integer.
    const auto bound = static_cast<std::uint64_t>(n);
    unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
        const std::uint64_t threshold = (0 - bound) % bound;
        while (low < threshold) {
            m = static_cast<unsigned __int128>((*this)()) * bound;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::size_t>(m >> 64);
}

bool RngStream::bernoulli(double p) { return uniform() < p; }

void set_thread_count(unsigned threads) { g_thread_count = threads; }

namespace {
// Nested parallel_for calls run serially on the calling worker.
thread_local bool t_in_parallel = false;
} // namespace

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    unsigned workers = t_in_parallel ? 1u : g_thread_count.load();
    if (workers == 0) {
        workers = std::max(1u, std::thread::hardware_concurrency());
    }
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            body(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        t_in_parallel = true;
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) {
                return;
            }
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) {
                    first_error = std::current_exception();
                }
                next = n;
                return;
            }
        }
    };
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back(worker);
    }
    pool.clear();
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

} // namespace scb
