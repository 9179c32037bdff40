#include "fairsmooth/smooth.hpp"
#include <limits>

#include <algorithm>
#include <numeric>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace fairsmooth::smooth {

void SmoothingConfig::validate() const {
    if (sigma_enc <= 0.0 || sigma_cls <= 0.0) {
        throw std::domain_error("SmoothingConfig: sigmas must be positive");
    }
    if (!(alpha_c > 0.0 && alpha_c < 1.0) || !(alpha_s > 0.0 && alpha_s < 1.0)) {
        throw std::domain_error("SmoothingConfig: alphas must lie in (0,1)");
    }
    if (n0 < 2 || n < 2 || m < 2) {
        throw std::domain_error("SmoothingConfig: sample counts must be >= 2");
    }
    if (!(tau > 0.0 && tau < 0.5)) {
        throw std::domain_error("SmoothingConfig: tau must lie in (0, 0.5)");
    }
    if (chunk < 1) throw std::domain_error("SmoothingConfig: chunk must be >= 1");
}

namespace {

// Noise draws in fixed-size chunks, one derived stream per chunk: the value
// of sample i never depends on how many samples other chunks consumed, so
// chunked evaluation is order-free.
Mat noise_block(numkit::RngStream rng, std::uint64_t phase, int count, int dim, double sigma,
                int chunk) {
    Mat out(count, dim);
    numkit::RngStream phase_stream = rng.substream("noise").substream(phase);
    for (int c = 0; c * chunk < count; ++c) {
        numkit::RngStream s = phase_stream.substream(std::uint64_t(c));
        const int lo = c * chunk;
        const int hi = std::min(count, lo + chunk);
        for (int i = lo; i < hi; ++i) {
            for (int d = 0; d < dim; ++d) out(i, d) = s.next_gaussian(sigma);
        }
    }
    return out;
}

Mat eval_samples(const VecFn& g, const Vec& t0, const Mat& noise) {
    Mat out;
    for (int i = 0; i < noise.rows(); ++i) {
        const Vec z = g(t0 + noise.row(i).transpose());
        if (i == 0) out.resize(noise.rows(), z.size());
        out.row(i) = z.transpose();
    }
    return out;
}

}  // namespace

int half_set_center_index(const Mat& z, double* radius) {
    const int m = int(z.rows());
    const int k = std::min((m + 1) / 2, m - 1);  // ceil(m/2) among the m-1 others
    const Vec sq = z.rowwise().squaredNorm();

    // Visit candidates nearest the centroid first: the first few set a tight
    // bound and the count gate below rejects the rest with one linear scan,
    // skipping their selection entirely.
    const Vec centroid = z.colwise().mean().transpose();
    Vec centrality = sq - 2.0 * (z * centroid);
    std::vector<int> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return centrality[a] < centrality[b]; });

    int best = -1;
    double best_r2 = std::numeric_limits<double>::infinity();
    Vec d2(m);
    std::vector<double> work(static_cast<std::size_t>(m));
    for (int i : order) {
        d2.noalias() = (-2.0) * (z * z.row(i).transpose());
        d2 += sq;
        d2.array() += sq[i];
        // Excluding self == replacing the self-distance by +inf.
        d2[i] = std::numeric_limits<double>::infinity();
        if (best >= 0) {
            // Fewer than k distances within the current bound means this
            // candidate's k-th smallest strictly exceeds it.
            const auto within = (d2.array() <= best_r2).count();
            if (within < k) continue;
        }
        Eigen::Map<Vec>(work.data(), m) = d2;
        std::nth_element(work.begin(), work.begin() + (k - 1), work.end());
        const double r2 = std::max(work[std::size_t(k - 1)], 0.0);
        if (best < 0 || r2 < best_r2 || (r2 == best_r2 && i < best)) {
            best = i;
            best_r2 = r2;
        }
    }
    if (radius) *radius = std::sqrt(best_r2);
    return best;
}

Vec smoothed_center_eval(const VecFn& g, const Vec& t0, double sigma_enc, int m, int chunk,
                         numkit::RngStream rng) {
    if (m < 2) throw std::domain_error("smoothed_center_eval: m >= 2 required");
    const Mat noise = noise_block(rng, 0, m, int(t0.size()), sigma_enc, chunk);
    const Mat z = eval_samples(g, t0, noise);
    return z.row(half_set_center_index(z, nullptr)).transpose();
}

CenterResult center_smooth(const VecFn& g, int noise_dim, double epsilon,
                           const SmoothingConfig& cfg, numkit::RngStream rng) {
    cfg.validate();
    if (noise_dim < 1) throw std::domain_error("center_smooth: noise_dim >= 1 required");
    if (epsilon < 0.0) throw std::domain_error("center_smooth: epsilon >= 0 required");

    const Vec t0 = Vec::Zero(noise_dim);
    CenterResult result;

    // Phase 1: center estimate and its half-set radius.
    const Mat z1 = eval_samples(g, t0, noise_block(rng, 1, cfg.m, noise_dim, cfg.sigma_enc, cfg.chunk));
    double delta = 0.0;
    const int c1 = half_set_center_index(z1, &delta);
    result.z_cs = z1.row(c1).transpose();

    // Phase 2: stability check on a fresh half budget.
    const int m2 = std::max(2, cfg.m / 2);
    const Mat z2 = eval_samples(g, t0, noise_block(rng, 2, m2, noise_dim, cfg.sigma_enc, cfg.chunk));
    const Vec c2 = z2.row(half_set_center_index(z2, nullptr)).transpose();
    if ((result.z_cs - c2).norm() > delta) {
        result.abstained = true;
        return result;
    }

    // Phase 3: target mass that survives any coefficient shift of norm <= eps.
    const double p_star = numkit::std_normal_cdf(epsilon / cfg.sigma_enc +
                                                 numkit::std_normal_quantile(0.5 + cfg.tau));

    // Phase 4: DKW-corrected quantile of fresh distances to the center.
    const auto k = numkit::dkw_quantile_index(cfg.m, p_star, cfg.alpha_c / 2.0);
    if (!k.has_value()) {
        result.abstained = true;
        return result;
    }
    const Mat z3 = eval_samples(g, t0, noise_block(rng, 3, cfg.m, noise_dim, cfg.sigma_enc, cfg.chunk));
    std::vector<double> dist(std::size_t(cfg.m));
    for (int i = 0; i < cfg.m; ++i) {
        dist[std::size_t(i)] = (z3.row(i).transpose() - result.z_cs).norm();
    }
    std::nth_element(dist.begin(), dist.begin() + (*k - 1), dist.end());
    result.r_cs = 2.0 * dist[std::size_t(*k - 1)];
    return result;
}

SmoothedPrediction smoothed_classify_certify(const nets::LinearClassifier& cls, const Vec& z,
                                             const SmoothingConfig& cfg, numkit::RngStream rng) {
    cfg.validate();
    ensure_finite(z, "smoothed_classify_certify input");

    const int dim = int(z.size());
    SmoothedPrediction pred;

    // Selection phase: majority class under n0 noisy evaluations.
    std::vector<std::int64_t> counts(std::size_t(cls.classes()), 0);
    {
        const Mat noise = noise_block(rng, 1, cfg.n0, dim, cfg.sigma_cls, cfg.chunk);
        for (int i = 0; i < cfg.n0; ++i) {
            const int c = nets::argmax_class(
                nets::classifier_forward(cls, z + noise.row(i).transpose()));
            counts[std::size_t(c)]++;
        }
    }
    int candidate = 0;
    for (int c = 1; c < cls.classes(); ++c) {
        if (counts[std::size_t(c)] > counts[std::size_t(candidate)]) candidate = c;
    }

    // Estimation phase: fresh votes for the candidate only.
    std::int64_t hits = 0;
    {
        const Mat noise = noise_block(rng, 2, cfg.n, dim, cfg.sigma_cls, cfg.chunk);
        for (int i = 0; i < cfg.n; ++i) {
            const int c = nets::argmax_class(
                nets::classifier_forward(cls, z + noise.row(i).transpose()));
            hits += c == candidate ? 1 : 0;
        }
    }

    pred.votes = hits;
    pred.samples = cfg.n;
    pred.p_lower = numkit::clopper_pearson_lower(hits, cfg.n, cfg.alpha_s);
    if (pred.p_lower > 0.5) {
        pred.abstained = false;
        pred.label = candidate;
        pred.radius = cfg.sigma_cls * numkit::std_normal_quantile(pred.p_lower);
    }
    return pred;
}

int smoothed_majority_class(const nets::LinearClassifier& cls, const Vec& z, double sigma,
                            int n_samples, int chunk, numkit::RngStream rng) {
    std::vector<std::int64_t> counts(std::size_t(cls.classes()), 0);
    const Mat noise = noise_block(rng, 1, n_samples, int(z.size()), sigma, chunk);
    for (int i = 0; i < n_samples; ++i) {
        counts[std::size_t(nets::argmax_class(
            nets::classifier_forward(cls, z + noise.row(i).transpose())))]++;
    }
    int best = 0;
    for (int c = 1; c < cls.classes(); ++c) {
        if (counts[std::size_t(c)] > counts[std::size_t(best)]) best = c;
    }
    return best;
}

}  // namespace fairsmooth::smooth
