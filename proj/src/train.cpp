#include "fairsmooth/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fairsmooth::train {

using nets::Tape;

void TrainConfig::validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0) throw std::domain_error("TrainConfig: weights must be >= 0");
    if (delta <= 0.0) throw std::domain_error("TrainConfig: delta must be > 0");
    if (s < 1) throw std::domain_error("TrainConfig: s must be >= 1");
    if (batch_size < 1) throw std::domain_error("TrainConfig: batch_size must be >= 1");
    if (epochs < 0) throw std::domain_error("TrainConfig: epochs must be >= 0");
    if (augment_s < 0) throw std::domain_error("TrainConfig: augment_s must be >= 0");
}

Tape::NodeId adv_loss_node(Tape& tape, const flow::Bijection& gen, const nets::LassiEncoder& enc,
                           nets::EncoderGrads* grads, const flow::SimilaritySpec& spec,
                           const Vec& z_G, int s, numkit::RngStream& rng,
                           Tape::NodeId rep_center) {
    if (s < 1) throw std::invalid_argument("adv_loss: s >= 1 required");
    if (rep_center < 0) {
        rep_center = nets::encoder_forward_node(tape, enc, grads, gen.decode(z_G));
    }
    std::vector<Tape::NodeId> dists;
    dists.reserve(std::size_t(s));
    for (int i = 0; i < s; ++i) {
        const Vec z_i = flow::similarity_sample(spec, z_G, rng);
        auto rep_i = nets::encoder_forward_node(tape, enc, grads, gen.decode(z_i));
        dists.push_back(tape.l2norm(tape.sub(rep_center, rep_i)));
    }
    return tape.max_of(dists);
}

double adv_loss(const flow::Bijection& gen, const nets::LassiEncoder& enc,
                const flow::SimilaritySpec& spec, const Vec& z_G, int s,
                numkit::RngStream& rng) {
    Tape tape;
    return tape.value(adv_loss_node(tape, gen, enc, nullptr, spec, z_G, s, rng));
}

Tape::NodeId cls_loss_node(Tape& tape, const flow::Bijection& gen, const nets::LassiEncoder& enc,
                           nets::EncoderGrads* enc_grads, const nets::LinearClassifier& aux,
                           nets::ClassifierGrads* aux_grads, const Vec& z_G, int label,
                           Tape::NodeId rep_center) {
    if (rep_center < 0) {
        rep_center = nets::encoder_forward_node(tape, enc, enc_grads, gen.decode(z_G));
    }
    auto logits = nets::classifier_forward_node(tape, aux, aux_grads, rep_center);
    return tape.cross_entropy_logits(logits, label);
}

double cls_loss(const flow::Bijection& gen, const nets::LassiEncoder& enc,
                const nets::LinearClassifier& aux, const Vec& z_G, int label) {
    Tape tape;
    return tape.value(cls_loss_node(tape, gen, enc, nullptr, aux, nullptr, z_G, label));
}

Tape::NodeId contrastive_loss_node(Tape& tape, const std::vector<Tape::NodeId>& reps,
                                   const std::vector<int>& labels, double delta) {
    if (reps.size() != labels.size()) {
        throw std::invalid_argument("contrastive_loss: representation/label count mismatch");
    }
    std::vector<Tape::NodeId> terms;
    for (std::size_t i = 0; i < reps.size(); ++i) {
        for (std::size_t j = i + 1; j < reps.size(); ++j) {
            auto d = tape.l2norm(tape.sub(reps[i], reps[j]));
            Tape::NodeId hinge;
            if (labels[i] == labels[j]) {
                hinge = tape.relu(tape.shift(d, -delta));
            } else {
                hinge = tape.relu(tape.shift(tape.scale(d, -1.0), 2.0 * delta));
            }
            terms.push_back(hinge);
        }
    }
    if (terms.empty()) return tape.scalar_input(0.0);
    // Each unordered pair stands for both orderings.
    return tape.weighted_sum(terms, std::vector<double>(terms.size(), 2.0));
}

double contrastive_loss(const nets::LassiEncoder& enc, const std::vector<Vec>& xs,
                        const std::vector<int>& labels, double delta) {
    if (xs.empty()) throw std::invalid_argument("contrastive_loss: empty batch");
    Tape tape;
    std::vector<Tape::NodeId> reps;
    reps.reserve(xs.size());
    for (const Vec& x : xs) reps.push_back(nets::encoder_forward_node(tape, enc, nullptr, x));
    return tape.value(contrastive_loss_node(tape, reps, labels, delta));
}

namespace {

struct BatchNodes {
    Tape::NodeId total = -1;
    double cls_sum = 0.0;
    double adv_sum = 0.0;
    double contr = 0.0;
};

// Shared assembly of the per-batch objective; used by total_loss and the
// training loop so the two cannot drift apart.
BatchNodes batch_loss(Tape& tape, const flow::Bijection& gen, const nets::LassiEncoder& enc,
                      nets::EncoderGrads* eg, const nets::LinearClassifier& aux,
                      nets::ClassifierGrads* ag, const flow::SimilaritySpec& spec,
                      const TrainConfig& cfg, const std::vector<Vec>& xs,
                      const std::vector<int>& ys, const std::vector<Vec>& zs,
                      numkit::RngStream& rng) {
    const std::size_t b = xs.size();
    std::vector<Tape::NodeId> parts;
    std::vector<double> weights;
    std::vector<Tape::NodeId> reps;
    reps.reserve(b);
    BatchNodes out;

    for (std::size_t i = 0; i < b; ++i) {
        auto rep = nets::encoder_forward_node(tape, enc, eg, gen.decode(zs[i]));
        reps.push_back(rep);
        auto cls = cls_loss_node(tape, gen, enc, eg, aux, ag, zs[i], ys[i], rep);
        parts.push_back(cls);
        weights.push_back(1.0 / double(b));
        out.cls_sum += tape.value(cls);
        if (cfg.lambda1 != 0.0) {
            auto adv = adv_loss_node(tape, gen, enc, eg, spec, zs[i], cfg.s, rng, rep);
            parts.push_back(adv);
            weights.push_back(cfg.lambda1 / double(b));
            out.adv_sum += tape.value(adv);
        }
    }
    if (cfg.lambda2 != 0.0) {
        // Contrastive distances use L on the inputs themselves.
        std::vector<Tape::NodeId> l_reps;
        l_reps.reserve(b);
        for (std::size_t i = 0; i < b; ++i) {
            l_reps.push_back(nets::encoder_forward_node(tape, enc, eg, xs[i]));
        }
        auto contr = contrastive_loss_node(tape, l_reps, ys, cfg.delta);
        parts.push_back(contr);
        weights.push_back(cfg.lambda2 / double(b * b));
        out.contr = tape.value(contr);
    }
    out.total = tape.weighted_sum(parts, weights);
    return out;
}

std::vector<int> shuffled_indices(std::size_t n, numkit::RngStream rng) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = std::size_t(rng.next_unit() * double(i));
        std::swap(idx[i - 1], idx[std::min(j, i - 1)]);
    }
    return idx;
}

}  // namespace

double total_loss(const flow::Bijection& gen, const nets::LassiEncoder& enc,
                  const nets::LinearClassifier& aux, const flow::SimilaritySpec& spec,
                  const TrainConfig& cfg, const std::vector<Vec>& xs, const std::vector<int>& ys,
                  numkit::RngStream& rng) {
    if (xs.empty() || xs.size() != ys.size()) {
        throw std::invalid_argument("total_loss: batch must be nonempty with matching labels");
    }
    std::vector<Vec> zs;
    zs.reserve(xs.size());
    for (const Vec& x : xs) zs.push_back(gen.encode(x));
    Tape tape;
    auto nodes = batch_loss(tape, gen, enc, nullptr, aux, nullptr, spec, cfg, xs, ys, zs, rng);
    return tape.value(nodes.total);
}

EncoderTrainResult train_encoder(const TrainConfig& cfg, const EncoderArch& arch,
                                 const flow::Bijection& gen, const flow::SimilaritySpec& spec,
                                 const std::vector<Vec>& xs, const std::vector<int>& ys,
                                 int num_classes) {
    cfg.validate();
    if (xs.empty() || xs.size() != ys.size()) {
        throw std::invalid_argument("train_encoder: dataset must be nonempty with matching labels");
    }

    numkit::RngStream root(cfg.seed, 0);
    numkit::RngStream init_enc = root.substream("enc_init");
    numkit::RngStream init_aux = root.substream("aux_init");

    EncoderTrainResult result;
    result.encoder = nets::make_encoder(gen.dim(), arch.hidden, arch.hidden_layers, arch.k, init_enc);
    result.encoder.norm.momentum = arch.momentum;
    result.encoder.train_mode = true;
    result.aux = nets::make_classifier(arch.k, num_classes, init_aux);

    nets::EncoderGrads eg = nets::make_grads(result.encoder);
    nets::ClassifierGrads ag = nets::make_grads(result.aux);

    std::vector<Vec> zs;
    zs.reserve(xs.size());
    for (const Vec& x : xs) zs.push_back(gen.encode(x));

    std::int64_t global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = shuffled_indices(xs.size(), root.substream("shuffle").substream(epoch));
        EpochStats stats;
        stats.epoch = epoch;
        int batches = 0;
        std::size_t item_count = 0;

        for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + std::size_t(cfg.batch_size));
            std::vector<Vec> bx, bz;
            std::vector<int> by;
            for (std::size_t i = start; i < stop; ++i) {
                bx.push_back(xs[std::size_t(order[i])]);
                by.push_back(ys[std::size_t(order[i])]);
                bz.push_back(zs[std::size_t(order[i])]);
            }
            if (cfg.augment_s > 0) {
                numkit::RngStream rng_aug =
                    root.substream("aug").substream(epoch).substream(std::uint64_t(batches));
                const std::size_t originals = bx.size();
                for (std::size_t i = 0; i < originals; ++i) {
                    for (int a = 0; a < cfg.augment_s; ++a) {
                        const Vec z = flow::similarity_sample(spec, bz[i], rng_aug);
                        bx.push_back(gen.decode(z));
                        by.push_back(by[i]);
                        bz.push_back(z);
                    }
                }
            }

            numkit::RngStream rng_adv =
                root.substream("adv").substream(epoch).substream(std::uint64_t(batches));
            Tape tape;
            auto nodes =
                batch_loss(tape, gen, result.encoder, &eg, result.aux, &ag, spec, cfg, bx, by, bz,
                           rng_adv);
            const double loss = tape.value(nodes.total);
            if (!std::isfinite(loss)) {
                throw TrainError("train_encoder: non-finite loss", global_step);
            }
            eg.zero();
            ag.zero();
            tape.backward(nodes.total);
            nets::apply_sgd(result.encoder, eg, cfg.lr);
            nets::apply_sgd(result.aux, ag, cfg.lr);
            for (const Vec& x : bx) {
                nets::encoder_observe(result.encoder, nets::encoder_pre_norm(result.encoder, x));
            }

            stats.cls += nodes.cls_sum;
            stats.adv += nodes.adv_sum;
            stats.contr += nodes.contr;
            stats.total += loss;
            item_count += bx.size();
            ++batches;
            ++global_step;
        }

        stats.cls /= double(item_count);
        stats.adv /= double(item_count);
        stats.contr /= double(batches);
        stats.total /= double(batches);
        int correct = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const Vec logits =
                nets::classifier_forward(result.aux, nets::encoder_forward(result.encoder, xs[i]));
            correct += nets::argmax_class(logits) == ys[i] ? 1 : 0;
        }
        stats.train_acc = double(correct) / double(xs.size());
        result.trace.push_back(stats);
    }

    if (cfg.epochs > 0) {
        nets::calibrate_norm(result.encoder, xs);
    }
    result.encoder.train_mode = false;
    return result;
}

nets::LinearClassifier train_classifier(const flow::Bijection& gen, const nets::LassiEncoder& enc,
                                        const std::vector<Vec>& xs, const std::vector<int>& ys,
                                        int num_classes, double sigma_cls, int epochs, double lr,
                                        int batch_size, std::uint64_t seed,
                                        std::vector<double>* loss_trace) {
    if (enc.train_mode) {
        throw std::logic_error("train_classifier: encoder must be frozen (eval mode)");
    }
    if (xs.empty() || xs.size() != ys.size()) {
        throw std::invalid_argument("train_classifier: dataset must be nonempty with labels");
    }
    if (sigma_cls < 0.0) throw std::domain_error("train_classifier: sigma_cls >= 0 required");

    // The full pipeline L o D_G o E_G, evaluated once: the encoder is frozen.
    std::vector<Vec> reps;
    reps.reserve(xs.size());
    for (const Vec& x : xs) {
        reps.push_back(nets::encoder_forward(enc, gen.decode(gen.encode(x))));
    }

    numkit::RngStream root(seed, 1);
    numkit::RngStream init = root.substream("cls_init");
    nets::LinearClassifier cls = nets::make_classifier(int(reps.front().size()), num_classes, init);
    nets::ClassifierGrads grads = nets::make_grads(cls);

    std::int64_t global_step = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const auto order = shuffled_indices(xs.size(), root.substream("shuffle").substream(epoch));
        numkit::RngStream noise = root.substream("noise").substream(epoch);
        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(batch_size)) {
            const std::size_t stop = std::min(order.size(), start + std::size_t(batch_size));
            Tape tape;
            std::vector<Tape::NodeId> terms;
            for (std::size_t i = start; i < stop; ++i) {
                const std::size_t idx = std::size_t(order[i]);
                Vec noisy = reps[idx];
                if (sigma_cls > 0.0) {
                    noisy += numkit::gaussian_vec(noise, int(noisy.size()), sigma_cls);
                }
                auto logits = nets::classifier_forward_node(tape, cls, &grads, tape.input(noisy));
                terms.push_back(tape.cross_entropy_logits(logits, ys[idx]));
            }
            auto loss = tape.weighted_sum(terms, std::vector<double>(terms.size(), 1.0 / double(terms.size())));
            const double val = tape.value(loss);
            if (!std::isfinite(val)) {
                throw TrainError("train_classifier: non-finite loss", global_step);
            }
            grads.zero();
            tape.backward(loss);
            nets::apply_sgd(cls, grads, lr);
            epoch_loss += val;
            ++batches;
            ++global_step;
        }
        if (loss_trace) loss_trace->push_back(epoch_loss / double(batches));
    }
    return cls;
}

std::pair<std::vector<Vec>, std::vector<int>> augment_batch(const std::vector<Vec>& xs,
                                                            const std::vector<int>& ys,
                                                            const flow::Bijection& gen,
                                                            const flow::SimilaritySpec& spec,
                                                            int s, numkit::RngStream& rng) {
    if (xs.size() != ys.size()) throw std::invalid_argument("augment_batch: size mismatch");
    if (s < 0) throw std::invalid_argument("augment_batch: s >= 0 required");
    std::vector<Vec> out_x = xs;
    std::vector<int> out_y = ys;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const Vec z_G = gen.encode(xs[i]);
        for (int a = 0; a < s; ++a) {
            out_x.push_back(gen.decode(flow::similarity_sample(spec, z_G, rng)));
            out_y.push_back(ys[i]);
        }
    }
    return {std::move(out_x), std::move(out_y)};
}

}  // namespace fairsmooth::train
