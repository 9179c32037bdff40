#include "fairsmooth/numkit.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace fairsmooth::numkit {

namespace {

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t stream_base(std::uint64_t seed, std::uint64_t stream) {
    return mix64(mix64(seed) ^ (stream * 0xD1342543DE82EF95ULL + 0x2545F4914F6CDD1DULL));
}

// log(exp(a) + exp(b)) without overflow.
double logaddexp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// log P(X >= k) for X ~ Binomial(n, p), streamed in log space from the
// i = k term upward using the term ratio; terminates once past the mode
// with negligible remaining mass.
double log_binom_upper_tail(std::int64_t k, std::int64_t n, double p) {
    if (k <= 0) return 0.0;
    if (p <= 0.0) return -std::numeric_limits<double>::infinity();
    if (p >= 1.0) return 0.0;

    const double logp = std::log(p);
    const double log1p_ = std::log1p(-p);
    double log_term = std::lgamma(double(n) + 1.0) - std::lgamma(double(k) + 1.0) -
                      std::lgamma(double(n - k) + 1.0) + double(k) * logp +
                      double(n - k) * log1p_;
    double log_sum = log_term;
    const double mode = double(n + 1) * p;
    for (std::int64_t i = k; i < n; ++i) {
        log_term += std::log(double(n - i)) - std::log(double(i + 1)) + logp - log1p_;
        log_sum = logaddexp(log_sum, log_term);
        if (double(i + 1) > mode && log_term < log_sum - 45.0) break;
    }
    return std::min(log_sum, 0.0);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : master_seed(seed), stream_id(stream), counter(0) {}

std::uint64_t RngStream::next_u64() {
    const std::uint64_t base = stream_base(master_seed, stream_id);
    return mix64(base + counter++ * 0x9E3779B97F4A7C15ULL);
}

double RngStream::next_unit() {
    return double(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_gaussian(double sigma) {
    // u1 in (0, 1] keeps the log finite.
    const double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = double(next_u64() >> 11) * 0x1.0p-53;
    return sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

RngStream RngStream::substream(std::uint64_t tag) const {
    RngStream child;
    child.master_seed = master_seed;
    child.stream_id = mix64(stream_id ^ mix64(tag));
    return child;
}

RngStream RngStream::substream(std::string_view tag) const {
    return substream(fnv1a(tag));
}

std::uint64_t fnv1a(const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::uint64_t fnv1a(std::string_view s) { return fnv1a(s.data(), s.size()); }

double std_normal_cdf(double x) {
    ensure_finite(x, "std_normal_cdf");
    return 0.5 * std::erfc(-x * M_SQRT1_2);
}

double std_normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw std::domain_error("std_normal_quantile: p must lie in (0,1)");
    }

    // Acklam's rational approximation (~1e-9 relative), then Newton.
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double p_low = 0.02425;

    double x;
    if (p < p_low) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        double q = p - 0.5;
        double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }

    for (int it = 0; it < 3; ++it) {
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
        if (pdf < 1e-300) break;
        x -= (std_normal_cdf(x) - p) / pdf;
    }
    return x;
}

double clopper_pearson_lower(std::int64_t k, std::int64_t n, double alpha) {
    if (n < 1 || k < 0 || k > n) {
        throw std::domain_error("clopper_pearson_lower: need 0 <= k <= n, n >= 1");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::domain_error("clopper_pearson_lower: alpha must lie in (0,1)");
    }
    if (k == 0) return 0.0;

    // Tail P(X >= k | p) is increasing in p; find its alpha crossing.
    const double log_alpha = std::log(alpha);
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (log_binom_upper_tail(k, n, mid) < log_alpha) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

std::optional<std::int64_t> dkw_quantile_index(std::int64_t m, double p, double alpha) {
    if (m < 1) throw std::domain_error("dkw_quantile_index: m >= 1 required");
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("dkw_quantile_index: p must lie in (0,1)");
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::domain_error("dkw_quantile_index: alpha must lie in (0,1)");
    }
    const double margin = std::sqrt(std::log(2.0 / alpha) / (2.0 * double(m)));
    const auto k = std::int64_t(std::ceil(double(m) * (p + margin)));
    if (k > m) return std::nullopt;
    return std::max<std::int64_t>(k, 1);
}

Vec gaussian_vec(RngStream& rng, int dim, double sigma) {
    if (dim < 1) throw std::domain_error("gaussian_vec: dim >= 1 required");
    if (sigma < 0.0) throw std::domain_error("gaussian_vec: sigma >= 0 required");
    Vec v(dim);
    for (int i = 0; i < dim; ++i) v[i] = rng.next_gaussian(sigma);
    return v;
}

}  // namespace fairsmooth::numkit
