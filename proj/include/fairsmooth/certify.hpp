#pragma once

#include "fairsmooth/flow.hpp"
#include "fairsmooth/nets.hpp"
#include "fairsmooth/smooth.hpp"
#include "fairsmooth/types.hpp"

#include <optional>
#include <vector>

namespace fairsmooth::certify {

enum class Verdict { Certified, NotCertified, Abstain };
const char* to_string(Verdict v);

/// The final comparison of the certification algorithm: Certified iff
/// r_cs < R, strictly; a tie is NotCertified.
Verdict decide(double r_cs, double R);

/// Frozen end-to-end model M = C_hat o P_hat o E_G. The raw classifier and
/// encoder are only ever queried through their smoothing wrappers here.
struct Pipeline {
    const flow::Bijection* gen = nullptr;
    const nets::LassiEncoder* enc = nullptr;
    const nets::LinearClassifier* cls = nullptr;
};

/// Raw intermediate quantities kept for audit regardless of the verdict.
struct AuditTrail {
    bool center_ran = false;
    bool center_abstained = false;
    double center_r = 0.0;  // raw r_cs before the abstention decision
    bool classify_ran = false;
    bool classify_abstained = false;
    double raw_p_lower = 0.0;
    std::int64_t votes = 0;
    std::int64_t vote_samples = 0;
};

struct CertificateOutcome {
    int index = -1;
    Verdict verdict = Verdict::Abstain;
    bool timeout = false;
    double confidence = 0.0;  // 1 - alpha_c - alpha_s
    // Certificate fields, populated only when the verdict is not Abstain.
    std::optional<Vec> z_cs;
    std::optional<double> r_cs;
    std::optional<double> R;
    std::optional<double> p_lower;
    std::optional<int> predicted_class;
    std::optional<bool> prediction_correct;
    AuditTrail audit;
    double wall_ms = 0.0;
};

/// The coefficient-space view of the smoothed representation map at z_G:
/// g(t) = L(D_G(z_G + A t)).
smooth::VecFn segment_map(const Pipeline& models, const flow::SimilaritySpec& spec,
                          const Vec& z_G);

/// Algorithm: center-smooth P at z_G = E_G(x) along the similarity spec,
/// abstain if center smoothing abstained, smooth the classifier at z_cs,
/// and return Certified iff r_cs < R (strict). Exceeding timeout_s aborts
/// with Abstain and the timeout flag set.
CertificateOutcome certify_point(const Pipeline& models, const Vec& x,
                                 const flow::SimilaritySpec& spec,
                                 const smooth::SmoothingConfig& cfg, numkit::RngStream rng,
                                 double timeout_s = 10.0,
                                 std::optional<int> label = std::nullopt);

struct DatasetSummary {
    int count = 0;
    int certified = 0;
    int correct = 0;
    int abstained = 0;
    int timeouts = 0;
    std::optional<double> acc_pct;   // null when count == 0
    std::optional<double> fair_pct;  // null when count == 0
};

/// Certifies every point independently (bounded worker pool); each point's
/// randomness is keyed by its dataset index, so results do not depend on
/// scheduling. Labels may be empty (accuracy then stays null).
std::vector<CertificateOutcome> certify_dataset(const Pipeline& models,
                                                const std::vector<Vec>& xs,
                                                const std::vector<int>& ys,
                                                const flow::SimilaritySpec& spec,
                                                const smooth::SmoothingConfig& cfg,
                                                std::uint64_t seed, int workers,
                                                double timeout_s, int max_points,
                                                DatasetSummary* summary);

DatasetSummary summarize(const std::vector<CertificateOutcome>& outcomes,
                         const std::vector<int>& ys);

struct ViolationReport {
    Mat grid;                     // one coefficient vector per column
    std::vector<int> classes;     // smoothed prediction per grid point
    int reference_class = -1;     // prediction at t = 0
    std::vector<int> violations;  // grid indices disagreeing with the reference
};

/// Dense audit of the end-to-end smoothed prediction across the similarity
/// set: evaluates the smoothed center at grid coefficients (endpoints
/// included) with fixed Monte-Carlo budgets and reports every grid point
/// whose majority-vote class differs from the center's.
ViolationReport brute_force_fairness_check(const Pipeline& models, const Vec& x,
                                           const flow::SimilaritySpec& spec,
                                           const smooth::SmoothingConfig& cfg, int grid_size,
                                           numkit::RngStream rng, int m_eval, int n_votes);

}  // namespace fairsmooth::certify
