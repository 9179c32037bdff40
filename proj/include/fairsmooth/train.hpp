#pragma once

#include "fairsmooth/flow.hpp"
#include "fairsmooth/nets.hpp"
#include "fairsmooth/numkit.hpp"
#include "fairsmooth/types.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace fairsmooth::train {

struct TrainConfig {
    double lambda1 = 0.1;  // adversarial weight
    double lambda2 = 0.1;  // contrastive weight
    double delta = 50.0;   // contrastive radius
    int s = 5;             // random attack samples
    int batch_size = 32;
    double lr = 0.01;
    int epochs = 30;
    std::uint64_t seed = 1;
    int augment_s = 0;  // decoded segment samples appended per input (data augmentation)

    void validate() const;
};

struct EncoderArch {
    int hidden = 64;
    int hidden_layers = 3;
    int k = 16;
    double momentum = 0.1;
};

/// Random segment attack: max over s uniform similarity samples z_i of
/// ||P(z_G) - P(z_i)||_2 with P = encoder o decode. The gradient flows only
/// through the maximizing sample. rep_center may name an existing tape node
/// holding P(z_G); pass -1 to build it here.
nets::Tape::NodeId adv_loss_node(nets::Tape& tape, const flow::Bijection& gen,
                                 const nets::LassiEncoder& enc, nets::EncoderGrads* grads,
                                 const flow::SimilaritySpec& spec, const Vec& z_G, int s,
                                 numkit::RngStream& rng, nets::Tape::NodeId rep_center = -1);
double adv_loss(const flow::Bijection& gen, const nets::LassiEncoder& enc,
                const flow::SimilaritySpec& spec, const Vec& z_G, int s, numkit::RngStream& rng);

/// Cross-entropy of (C_aux o P)(z_G) against the label.
nets::Tape::NodeId cls_loss_node(nets::Tape& tape, const flow::Bijection& gen,
                                 const nets::LassiEncoder& enc, nets::EncoderGrads* enc_grads,
                                 const nets::LinearClassifier& aux,
                                 nets::ClassifierGrads* aux_grads, const Vec& z_G, int label,
                                 nets::Tape::NodeId rep_center = -1);
double cls_loss(const flow::Bijection& gen, const nets::LassiEncoder& enc,
                const nets::LinearClassifier& aux, const Vec& z_G, int label);

/// Contrastive sum over ordered pairs: same class pays max(0, d - delta),
/// different classes pay max(0, 2 delta - d), d the representation distance.
/// Diagonal pairs contribute 0 and are skipped.
nets::Tape::NodeId contrastive_loss_node(nets::Tape& tape,
                                         const std::vector<nets::Tape::NodeId>& reps,
                                         const std::vector<int>& labels, double delta);
double contrastive_loss(const nets::LassiEncoder& enc, const std::vector<Vec>& xs,
                        const std::vector<int>& labels, double delta);

/// (1/b) sum_i (L_cls + lambda1 L_adv) + (lambda2 / b^2) L_contr. The rng is
/// consumed only by the attack, item by item in batch order, and only when
/// lambda1 is nonzero.
double total_loss(const flow::Bijection& gen, const nets::LassiEncoder& enc,
                  const nets::LinearClassifier& aux, const flow::SimilaritySpec& spec,
                  const TrainConfig& cfg, const std::vector<Vec>& xs, const std::vector<int>& ys,
                  numkit::RngStream& rng);

struct EpochStats {
    int epoch = 0;
    double cls = 0.0;
    double adv = 0.0;
    double contr = 0.0;
    double total = 0.0;
    double train_acc = 0.0;
};

struct EncoderTrainResult {
    nets::LassiEncoder encoder;
    nets::LinearClassifier aux;
    std::vector<EpochStats> trace;
};

/// Joint minibatch SGD on the combined objective. Deterministic given
/// (seed, config, dataset). After the last epoch the normalization head is
/// calibrated on the full training set and the encoder switches to eval mode
/// (a zero-epoch run returns the untouched initialization).
EncoderTrainResult train_encoder(const TrainConfig& cfg, const EncoderArch& arch,
                                 const flow::Bijection& gen, const flow::SimilaritySpec& spec,
                                 const std::vector<Vec>& xs, const std::vector<int>& ys,
                                 int num_classes);

/// Noisy-input training of the downstream classifier: every representation
/// is perturbed by fresh N(0, sigma_cls^2 I) at each step. The pipeline
/// itself is not smoothed here. Requires the encoder to be frozen (eval).
nets::LinearClassifier train_classifier(const flow::Bijection& gen, const nets::LassiEncoder& enc,
                                        const std::vector<Vec>& xs, const std::vector<int>& ys,
                                        int num_classes, double sigma_cls, int epochs, double lr,
                                        int batch_size, std::uint64_t seed,
                                        std::vector<double>* loss_trace = nullptr);

/// Joins each (x, y) with s decoded segment samples carrying the same label.
std::pair<std::vector<Vec>, std::vector<int>> augment_batch(const std::vector<Vec>& xs,
                                                            const std::vector<int>& ys,
                                                            const flow::Bijection& gen,
                                                            const flow::SimilaritySpec& spec,
                                                            int s, numkit::RngStream& rng);

}  // namespace fairsmooth::train
