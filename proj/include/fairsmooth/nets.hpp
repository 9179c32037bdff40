#pragma once

#include "fairsmooth/numkit.hpp"
#include "fairsmooth/tape.hpp"
#include "fairsmooth/types.hpp"

#include <vector>

namespace fairsmooth::nets {

/// Per-feature running mean/variance normalization, no learned affine.
/// Statistics only move through observe() (training) or calibrate();
/// forward passes never touch them, so eval-mode outputs are deterministic.
struct NormHead {
    Vec running_mean;
    Vec running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    Vec apply(const Vec& pre) const;
};

/// ReLU MLP with a normalization head on the output. The output dimension k
/// is the representation dimension used by the whole pipeline.
struct LassiEncoder {
    std::vector<Mat> W;  // hidden layers then output layer
    std::vector<Vec> b;
    NormHead norm;
    bool train_mode = false;

    int in_dim() const { return int(W.front().cols()); }
    int out_dim() const { return int(W.back().rows()); }
};

struct EncoderGrads {
    std::vector<Mat> dW;
    std::vector<Vec> db;
    void zero();
};

LassiEncoder make_encoder(int in_dim, int hidden, int hidden_layers, int out_dim,
                          numkit::RngStream& rng);
EncoderGrads make_grads(const LassiEncoder& enc);

/// MLP output before normalization.
Vec encoder_pre_norm(const LassiEncoder& enc, const Vec& x);

/// Full forward: MLP then normalization with the current running statistics.
/// Throws std::runtime_error on non-finite activations.
Vec encoder_forward(const LassiEncoder& enc, const Vec& x);

/// Tape-recorded forward. The normalization statistics enter as constants,
/// so gradients flow only through the MLP parameters.
Tape::NodeId encoder_forward_node(Tape& tape, const LassiEncoder& enc, EncoderGrads* grads,
                                  const Vec& x);

/// Momentum update of the running statistics from one pre-norm activation.
/// Usage error outside train mode.
void encoder_observe(LassiEncoder& enc, const Vec& pre_norm);

/// Overwrites the running statistics with the exact per-feature mean and
/// (population) variance of the pre-norm activations over the given inputs.
void calibrate_norm(LassiEncoder& enc, const std::vector<Vec>& inputs);

struct LinearClassifier {
    Mat W;  // classes x k
    Vec b;

    int classes() const { return int(W.rows()); }
    int in_dim() const { return int(W.cols()); }
};

struct ClassifierGrads {
    Mat dW;
    Vec db;
    void zero();
};

LinearClassifier make_classifier(int in_dim, int classes, numkit::RngStream& rng);
ClassifierGrads make_grads(const LinearClassifier& cls);

Vec classifier_forward(const LinearClassifier& cls, const Vec& z);
Tape::NodeId classifier_forward_node(Tape& tape, const LinearClassifier& cls,
                                     ClassifierGrads* grads, Tape::NodeId z);

/// Argmax with ties broken toward the lowest class index.
int argmax_class(const Vec& logits);

void apply_sgd(LassiEncoder& enc, const EncoderGrads& grads, double lr);
void apply_sgd(LinearClassifier& cls, const ClassifierGrads& grads, double lr);

}  // namespace fairsmooth::nets
