#pragma once

#include "fairsmooth/numkit.hpp"
#include "fairsmooth/tape.hpp"
#include "fairsmooth/types.hpp"

#include <cstdint>
#include <vector>

namespace fairsmooth::flow {

/// Exactly invertible map between input space and a latent space of the
/// same dimension. encode() is E_G, decode() is D_G, decode(encode(x)) == x.
struct Bijection {
    virtual ~Bijection() = default;
    virtual int dim() const = 0;
    virtual Vec encode(const Vec& x) const = 0;
    virtual Vec decode(const Vec& z) const = 0;
};

/// Two-layer tanh MLP used for the coupling scale and shift nets:
/// out = W2 * tanh(W1 * u + b1) + b2.
struct CouplingNet {
    Mat W1;
    Vec b1;
    Mat W2;
    Vec b2;
};

struct CouplingNetGrads {
    Mat dW1;
    Vec db1;
    Mat dW2;
    Vec db2;
};

/// Affine coupling: coordinates in pass_idx go through unchanged and drive
/// the scale/shift applied to the coordinates in trans_idx. The scale output
/// is squashed to s_max * tanh(.) so exp() cannot overflow.
struct CouplingLayer {
    std::vector<int> pass_idx;
    std::vector<int> trans_idx;
    CouplingNet scale_net;
    CouplingNet shift_net;
};

struct CouplingLayerGrads {
    CouplingNetGrads scale;
    CouplingNetGrads shift;
};

struct FlowModel final : Bijection {
    int q = 0;
    double s_max = 2.0;
    std::vector<CouplingLayer> layers;

    int dim() const override { return q; }
    Vec encode(const Vec& x) const override;
    Vec decode(const Vec& z) const override;
};

struct FlowGrads {
    std::vector<CouplingLayerGrads> layers;
    void zero();
};

/// Coupling stack with alternating half-dimension masks and zero-initialized
/// output layers, so the freshly built model is the identity map.
FlowModel make_flow(int dim, int n_layers, int hidden, numkit::RngStream& rng);
FlowGrads make_grads(const FlowModel& model);

/// log |det d encode / dx| at x (sum of the scale activations).
double log_det_jacobian_encode(const FlowModel& model, const Vec& x);

/// Change-of-variables log density: log N(encode(x); 0, I) + log|det J|.
double log_likelihood(const FlowModel& model, const Vec& x);

/// Records encode(x) on the tape. Returns the latent node and, through
/// log_det_node, the summed scale activations. grads may be null to freeze.
nets::Tape::NodeId encode_node(nets::Tape& tape, const FlowModel& model, FlowGrads* grads,
                               const Vec& x, nets::Tape::NodeId* log_det_node);

/// Records the full log-likelihood of x as a scalar node.
nets::Tape::NodeId log_likelihood_node(nets::Tape& tape, const FlowModel& model, FlowGrads* grads,
                                       const Vec& x);

/// SGD step: theta -= lr * grad for every coupling parameter.
void apply_sgd(FlowModel& model, const FlowGrads& grads, double lr);

struct FlowTrainTrace {
    std::vector<double> avg_log_likelihood;  // one entry per step, post-update
};

/// Full-batch gradient ascent on the average log-likelihood. Throws
/// TrainError (with the step index) if the objective turns non-finite.
FlowModel mle_train_flow(FlowModel model, const std::vector<Vec>& data, int steps, double lr,
                         FlowTrainTrace* trace = nullptr);

/// Analytic invertible mixing used by the synthetic benchmark: an orthogonal
/// rotation, the monotone map u -> u + 0.3 tanh(u) per coordinate, and a
/// second rotation. decode() maps factor-space latents to observations;
/// encode() recovers the latent exactly (Newton inversion of the scalar map).
struct GroundTruthGenerator final : Bijection {
    int n = 0;
    Mat rot_in;   // applied first in decode
    Mat rot_out;  // applied last in decode

    int dim() const override { return n; }
    Vec encode(const Vec& x) const override;
    Vec decode(const Vec& z) const override;
};

GroundTruthGenerator make_ground_truth_generator(int dim, std::uint64_t mixing_seed);

/// Similarity specification: one attribute vector per column plus the
/// maximum perturbation level. For a single attribute the similarity set is
/// the segment {z + t a : |t| <= epsilon}; for several it is
/// {z + A t : ||t||_2 <= epsilon}.
struct SimilaritySpec {
    Mat attributes;  // q x d
    double epsilon = 1.0;

    int attr_count() const { return int(attributes.cols()); }
    int latent_dim() const { return int(attributes.rows()); }
    void validate() const;
};

/// Difference of mean latent codes: mean(encode(positives)) - mean(encode(negatives)).
Vec attribute_vector(const Bijection& model, const std::vector<Vec>& positives,
                     const std::vector<Vec>& negatives);

/// Uniform draw of the similarity coefficients: Uniform[-eps, eps] for one
/// attribute, uniform on the radius-eps l2 ball for several.
Vec sample_coefficients(const SimilaritySpec& spec, numkit::RngStream& rng);

/// z_G + A t with t drawn by sample_coefficients.
Vec similarity_sample(const SimilaritySpec& spec, const Vec& z_G, numkit::RngStream& rng);

/// Deterministic member of the similarity set. Throws std::domain_error
/// when ||t||_2 exceeds epsilon.
Vec similarity_endpoint(const SimilaritySpec& spec, const Vec& z_G, const Vec& t);

}  // namespace fairsmooth::flow
