#include "fairsmooth/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace fairsmooth::nets {

namespace {

Mat xavier(int rows, int cols, numkit::RngStream& rng) {
    Mat w(rows, cols);
    const double lim = std::sqrt(6.0 / double(rows + cols));
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) w(r, c) = lim * (2.0 * rng.next_unit() - 1.0);
    }
    return w;
}

}  // namespace

Vec NormHead::apply(const Vec& pre) const {
    // Written as scale/offset so the tape path (affine_diag with the same
    // constants) produces bit-identical values.
    const Vec scale = (running_var.array() + eps).rsqrt().matrix();
    return pre.cwiseProduct(scale) - running_mean.cwiseProduct(scale);
}

void EncoderGrads::zero() {
    for (Mat& m : dW) m.setZero();
    for (Vec& v : db) v.setZero();
}

void ClassifierGrads::zero() {
    dW.setZero();
    db.setZero();
}

LassiEncoder make_encoder(int in_dim, int hidden, int hidden_layers, int out_dim,
                          numkit::RngStream& rng) {
    if (in_dim < 1 || hidden < 1 || hidden_layers < 1 || out_dim < 1) {
        throw std::invalid_argument("make_encoder: all dimensions must be positive");
    }
    LassiEncoder enc;
    int prev = in_dim;
    for (int l = 0; l < hidden_layers; ++l) {
        enc.W.push_back(xavier(hidden, prev, rng));
        enc.b.push_back(Vec::Zero(hidden));
        prev = hidden;
    }
    enc.W.push_back(xavier(out_dim, prev, rng));
    enc.b.push_back(Vec::Zero(out_dim));
    enc.norm.running_mean = Vec::Zero(out_dim);
    enc.norm.running_var = Vec::Ones(out_dim);
    return enc;
}

EncoderGrads make_grads(const LassiEncoder& enc) {
    EncoderGrads g;
    for (std::size_t l = 0; l < enc.W.size(); ++l) {
        g.dW.push_back(Mat::Zero(enc.W[l].rows(), enc.W[l].cols()));
        g.db.push_back(Vec::Zero(enc.b[l].size()));
    }
    return g;
}

Vec encoder_pre_norm(const LassiEncoder& enc, const Vec& x) {
    ensure_finite(x, "encoder input");
    if (x.size() != enc.in_dim()) throw std::domain_error("encoder: input dimension mismatch");
    Vec h = x;
    for (std::size_t l = 0; l + 1 < enc.W.size(); ++l) {
        h = (enc.W[l] * h + enc.b[l]).cwiseMax(0.0);
    }
    return enc.W.back() * h + enc.b.back();
}

Vec encoder_forward(const LassiEncoder& enc, const Vec& x) {
    Vec out = enc.norm.apply(encoder_pre_norm(enc, x));
    if (!out.allFinite()) throw std::runtime_error("encoder: non-finite activations");
    return out;
}

Tape::NodeId encoder_forward_node(Tape& tape, const LassiEncoder& enc, EncoderGrads* grads,
                                  const Vec& x) {
    ensure_finite(x, "encoder input");
    if (x.size() != enc.in_dim()) throw std::domain_error("encoder: input dimension mismatch");
    Tape::NodeId h = tape.input(x);
    for (std::size_t l = 0; l + 1 < enc.W.size(); ++l) {
        h = tape.relu(tape.affine(enc.W[l], enc.b[l], grads ? &grads->dW[l] : nullptr,
                                  grads ? &grads->db[l] : nullptr, h));
    }
    const std::size_t last = enc.W.size() - 1;
    h = tape.affine(enc.W[last], enc.b[last], grads ? &grads->dW[last] : nullptr,
                    grads ? &grads->db[last] : nullptr, h);
    const Vec scale = (enc.norm.running_var.array() + enc.norm.eps).rsqrt().matrix();
    const Vec offset = -enc.norm.running_mean.cwiseProduct(scale);
    return tape.affine_diag(scale, offset, h);
}

void encoder_observe(LassiEncoder& enc, const Vec& pre_norm) {
    if (!enc.train_mode) {
        throw std::logic_error("encoder_observe: statistics are frozen outside train mode");
    }
    const double m = enc.norm.momentum;
    const Vec delta = pre_norm - enc.norm.running_mean;
    enc.norm.running_mean += m * delta;
    enc.norm.running_var =
        (1.0 - m) * enc.norm.running_var + m * delta.cwiseProduct(delta);
}

void calibrate_norm(LassiEncoder& enc, const std::vector<Vec>& inputs) {
    if (inputs.empty()) throw std::invalid_argument("calibrate_norm: empty calibration set");
    Vec mean = Vec::Zero(enc.out_dim());
    std::vector<Vec> pres;
    pres.reserve(inputs.size());
    for (const Vec& x : inputs) {
        pres.push_back(encoder_pre_norm(enc, x));
        mean += pres.back();
    }
    mean /= double(inputs.size());
    Vec var = Vec::Zero(enc.out_dim());
    for (const Vec& p : pres) {
        const Vec d = p - mean;
        var += d.cwiseProduct(d);
    }
    var /= double(inputs.size());
    enc.norm.running_mean = mean;
    enc.norm.running_var = var;
}

LinearClassifier make_classifier(int in_dim, int classes, numkit::RngStream& rng) {
    if (in_dim < 1 || classes < 2) {
        throw std::invalid_argument("make_classifier: need in_dim >= 1 and classes >= 2");
    }
    LinearClassifier cls;
    cls.W = xavier(classes, in_dim, rng);
    cls.b = Vec::Zero(classes);
    return cls;
}

ClassifierGrads make_grads(const LinearClassifier& cls) {
    ClassifierGrads g;
    g.dW = Mat::Zero(cls.W.rows(), cls.W.cols());
    g.db = Vec::Zero(cls.b.size());
    return g;
}

Vec classifier_forward(const LinearClassifier& cls, const Vec& z) {
    ensure_finite(z, "classifier input");
    if (z.size() != cls.in_dim()) throw std::domain_error("classifier: input dimension mismatch");
    return cls.W * z + cls.b;
}

Tape::NodeId classifier_forward_node(Tape& tape, const LinearClassifier& cls,
                                     ClassifierGrads* grads, Tape::NodeId z) {
    return tape.affine(cls.W, cls.b, grads ? &grads->dW : nullptr, grads ? &grads->db : nullptr, z);
}

int argmax_class(const Vec& logits) {
    int best = 0;
    for (int i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return best;
}

void apply_sgd(LassiEncoder& enc, const EncoderGrads& grads, double lr) {
    for (std::size_t l = 0; l < enc.W.size(); ++l) {
        enc.W[l] -= lr * grads.dW[l];
        enc.b[l] -= lr * grads.db[l];
    }
}

void apply_sgd(LinearClassifier& cls, const ClassifierGrads& grads, double lr) {
    cls.W -= lr * grads.dW;
    cls.b -= lr * grads.db;
}

}  // namespace fairsmooth::nets
