#pragma once

#include "fairsmooth/nets.hpp"
#include "fairsmooth/numkit.hpp"
#include "fairsmooth/types.hpp"

#include <functional>
#include <optional>

namespace fairsmooth::smooth {

struct SmoothingConfig {
    double sigma_enc = 0.75;
    double sigma_cls = 10.0;
    double alpha_c = 0.01;   // center-smoothing confidence budget
    double alpha_s = 0.001;  // classification-smoothing confidence budget
    int n0 = 128;            // candidate-selection samples
    int n = 8192;            // estimation samples
    int m = 2048;            // center-smoothing samples per phase
    double tau = 0.05;       // stability margin in the target-mass formula
    int chunk = 256;         // sampling chunk size (derived stream per chunk)

    void validate() const;
};

/// Map from similarity coefficients to the representation space,
/// t -> P(z + A t). Oracles substitute arbitrary functions here.
using VecFn = std::function<Vec(const Vec&)>;

struct CenterResult {
    bool abstained = false;
    Vec z_cs;         // meaningful only when !abstained
    double r_cs = 0;  // output-space radius, meaningful only when !abstained
};

struct SmoothedPrediction {
    bool abstained = true;
    int label = -1;
    double p_lower = 0.0;
    double radius = 0.0;
    std::int64_t votes = 0;    // votes for the candidate in the estimation phase
    std::int64_t samples = 0;  // estimation sample count
};

/// Row index of the sample minimizing its ceil(m/2)-th smallest distance to
/// the other samples (ties toward the lowest index); the minimized distance
/// is returned through radius when non-null. This is the half-set center
/// the smoothing procedures use; exposed for oracles.
int half_set_center_index(const Mat& samples, double* radius);

/// Center-estimation phase alone: draws m noisy coefficient samples around
/// t0, evaluates g, and returns the half-set center point. This is the
/// evaluation of the smoothed map at t0.
Vec smoothed_center_eval(const VecFn& g, const Vec& t0, double sigma_enc, int m, int chunk,
                         numkit::RngStream rng);

/// Full center-smoothing certificate at t = 0:
///  1. center estimate z_cs and its half-set radius Delta from m samples,
///  2. stability check against a fresh half-budget center (abstain if the
///     two centers differ by more than Delta),
///  3. target mass p* = Phi(eps/sigma + Phi^-1(1/2 + tau)),
///  4. fresh m samples; r_hat is their K-th smallest distance to z_cs with
///     K = dkw_quantile_index(m, p*, alpha_c/2); abstain on overflow.
/// Returns r_cs = 2 r_hat: with probability >= 1 - alpha_c the smoothed map
/// moves by at most r_cs under any coefficient shift of norm <= epsilon.
CenterResult center_smooth(const VecFn& g, int noise_dim, double epsilon,
                           const SmoothingConfig& cfg, numkit::RngStream rng);

/// Two-phase randomized-smoothing certificate for the classifier at z:
/// n0 noisy votes pick the candidate class, n fresh votes give the
/// Clopper-Pearson lower bound p_lower; certifies radius
/// R = sigma_cls * Phi^-1(p_lower) when p_lower > 1/2, otherwise abstains.
SmoothedPrediction smoothed_classify_certify(const nets::LinearClassifier& cls, const Vec& z,
                                             const SmoothingConfig& cfg, numkit::RngStream rng);

/// Plain majority vote under noise (no certificate); audit helper.
int smoothed_majority_class(const nets::LinearClassifier& cls, const Vec& z, double sigma,
                            int n_samples, int chunk, numkit::RngStream rng);

}  // namespace fairsmooth::smooth
