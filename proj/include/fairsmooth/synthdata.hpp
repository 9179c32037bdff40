#pragma once

#include "fairsmooth/certify.hpp"
#include "fairsmooth/flow.hpp"
#include "fairsmooth/numkit.hpp"
#include "fairsmooth/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fairsmooth::synth {

struct Factor {
    std::string name;
    bool discrete = false;
    int cardinality = 0;  // discrete factors only
    double lo = -0.5;
    double hi = 0.5;
};

/// Value of a discrete factor level: levels are equally spaced across
/// [lo, hi], endpoints included.
double factor_level_value(const Factor& f, int level);

struct FactorSpec {
    std::vector<Factor> factors;
    int target_factor = 0;
    int sensitive_factor = 1;
    int nuisance_dim = 26;
    double nuisance_sigma = 0.25;
    std::uint64_t mixing_seed = 7;

    int factor_count() const { return int(factors.size()); }
    int observation_dim() const { return factor_count() + nuisance_dim; }
    /// Discrete target: its cardinality. Continuous target: 2 (threshold at
    /// the range midpoint).
    int num_classes() const;
    void validate() const;
};

struct LabeledDataset {
    std::vector<Vec> xs;
    std::vector<int> ys;
    Mat factor_table;  // size() x factor_count, 0x0 when absent
    int num_classes = 2;

    std::size_t size() const { return xs.size(); }
    int dim() const { return xs.empty() ? 0 : int(xs.front().size()); }
    bool has_factors() const { return factor_table.rows() > 0; }
};

/// The ground-truth generator whose latent space is [factors; nuisance].
flow::GroundTruthGenerator generator_for(const FactorSpec& spec);

/// Draws factor vectors independently, maps them through the mixing, and
/// labels each record by its target factor. Record i is derived from its own
/// substream, so generation is order-free and shardable.
LabeledDataset generate(const FactorSpec& spec, int count, numkit::RngStream& rng);

/// Observations obtained by sweeping the sensitive factor over a grid while
/// fixing everything else (nuisance included). Discrete sensitive factors
/// use all their levels; continuous ones a uniform grid, endpoints included.
/// Throws std::domain_error if x does not invert cleanly under the mixing.
std::vector<Vec> ground_truth_variants(const FactorSpec& spec,
                                       const flow::GroundTruthGenerator& gen, const Vec& x,
                                       int grid);

void write_dataset(const std::string& path, const LabeledDataset& ds);
LabeledDataset read_dataset(const std::string& path);
void write_dataset_csv(const std::string& path, const LabeledDataset& ds);
LabeledDataset read_dataset_csv(const std::string& path);

struct TransferReport {
    int count = 0;
    int certified = 0;
    int audited = 0;
    int unfair = 0;  // audited points with at least one disagreeing variant
    std::vector<int> unfair_indices;
    std::optional<double> acc_pct;
    std::optional<double> fair_pct;
    std::optional<double> unfair_pct;  // unfair / count
};

/// Certifies the dataset, then audits ground-truth variants: a point is
/// ground-truth-unfair when any of its variants receives a different
/// end-to-end smoothed prediction. audit_all audits every point; otherwise
/// only certified points are audited.
TransferReport ground_truth_fairness_eval(const certify::Pipeline& models,
                                          const LabeledDataset& ds, const FactorSpec& fspec,
                                          const flow::SimilaritySpec& spec,
                                          const smooth::SmoothingConfig& cfg, std::uint64_t seed,
                                          int workers, double timeout_s, int max_points, int grid,
                                          bool audit_all, int audit_m, int audit_votes,
                                          std::vector<certify::CertificateOutcome>* outcomes_out);

}  // namespace fairsmooth::synth
