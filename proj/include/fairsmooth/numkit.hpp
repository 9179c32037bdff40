#pragma once

#include "fairsmooth/types.hpp"

#include <cstdint>
#include <optional>
#include <string_view>

namespace fairsmooth::numkit {

/// Counter-based random stream. The n-th output is a pure function of
/// (master_seed, stream_id, n), so disjoint substreams can be consumed in
/// any order (or in parallel) without changing each other's values.
struct RngStream {
    std::uint64_t master_seed = 0;
    std::uint64_t stream_id = 0;
    std::uint64_t counter = 0;

    RngStream() = default;
    RngStream(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next_u64();
    /// Uniform on [0, 1) with 53 bits of mantissa.
    double next_unit();
    /// Single N(0, sigma^2) draw (Box-Muller, cosine branch; two uniforms
    /// are consumed per draw so the mapping from counter to output is fixed).
    double next_gaussian(double sigma = 1.0);

    /// Child stream with an independent output sequence. Same tag, same child.
    RngStream substream(std::uint64_t tag) const;
    RngStream substream(std::string_view tag) const;
};

/// 64-bit FNV-1a. Used wherever the artifact needs a platform-stable hash
/// (config fingerprints, output digests). std::hash is not portable.
std::uint64_t fnv1a(const void* data, std::size_t len);
std::uint64_t fnv1a(std::string_view s);

/// Standard normal CDF, absolute error below 1e-12.
double std_normal_cdf(double x);

/// Standard normal quantile. Rational initial guess refined by Newton
/// against std_normal_cdf; |cdf(quantile(p)) - p| <= 1e-12 for p in (0,1).
/// Throws std::domain_error outside (0,1).
double std_normal_quantile(double p);

/// Exact one-sided (1-alpha) lower confidence bound for a binomial
/// proportion with k successes in n trials: the p solving
/// P(X >= k | n, p) = alpha, found by bisection on the log-space tail sum.
/// k = 0 returns 0. Monotone nondecreasing in k for fixed (n, alpha).
double clopper_pearson_lower(std::int64_t k, std::int64_t n, double alpha);

/// Order-statistic index k (1-based) such that the k-th smallest of m i.i.d.
/// samples upper-bounds the population p-quantile with probability >= 1-alpha,
/// by the Dvoretzky-Kiefer-Wolfowitz inequality:
///   k = ceil(m * (p + sqrt(ln(2/alpha) / (2m)))).
/// Returns nullopt (abstain) when k > m.
std::optional<std::int64_t> dkw_quantile_index(std::int64_t m, double p, double alpha);

/// Vector of dim i.i.d. N(0, sigma^2) entries drawn from the stream.
Vec gaussian_vec(RngStream& rng, int dim, double sigma);

}  // namespace fairsmooth::numkit
