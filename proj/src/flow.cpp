#include "fairsmooth/flow.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace fairsmooth::flow {

namespace {

Vec net_forward(const CouplingNet& net, const Vec& u) {
    return net.W2 * (net.W1 * u + net.b1).array().tanh().matrix() + net.b2;
}

CouplingNet make_net(int in, int hidden, int out, numkit::RngStream& rng) {
    CouplingNet net;
    net.W1.resize(hidden, in);
    const double lim = std::sqrt(6.0 / double(in + hidden));
    for (int r = 0; r < hidden; ++r) {
        for (int c = 0; c < in; ++c) net.W1(r, c) = lim * (2.0 * rng.next_unit() - 1.0);
    }
    net.b1 = Vec::Zero(hidden);
    // Zero output layer: the layer starts as the identity map.
    net.W2 = Mat::Zero(out, hidden);
    net.b2 = Vec::Zero(out);
    return net;
}

CouplingNetGrads make_net_grads(const CouplingNet& net) {
    CouplingNetGrads g;
    g.dW1 = Mat::Zero(net.W1.rows(), net.W1.cols());
    g.db1 = Vec::Zero(net.b1.size());
    g.dW2 = Mat::Zero(net.W2.rows(), net.W2.cols());
    g.db2 = Vec::Zero(net.b2.size());
    return g;
}

// u + 0.3 tanh(u), strictly increasing with slope in [1, 1.3].
double soft_mono(double u) { return u + 0.3 * std::tanh(u); }

double soft_mono_inverse(double y) {
    double u = y;
    for (int it = 0; it < 60; ++it) {
        const double t = std::tanh(u);
        const double f = u + 0.3 * t - y;
        if (std::abs(f) < 1e-15) break;
        u -= f / (1.0 + 0.3 * (1.0 - t * t));
    }
    return u;
}

Mat random_rotation(int dim, numkit::RngStream& rng) {
    Mat g(dim, dim);
    for (int r = 0; r < dim; ++r) {
        for (int c = 0; c < dim; ++c) g(r, c) = rng.next_gaussian(1.0);
    }
    Eigen::HouseholderQR<Mat> qr(g);
    Mat q = qr.householderQ();
    const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int c = 0; c < dim; ++c) {
        if (r(c, c) < 0.0) q.col(c) *= -1.0;
    }
    return q;
}

}  // namespace

Vec FlowModel::encode(const Vec& x) const {
    ensure_finite(x, "FlowModel::encode input");
    if (x.size() != q) throw std::domain_error("FlowModel::encode: dimension mismatch");
    Vec cur = x;
    for (const CouplingLayer& layer : layers) {
        Vec u(Eigen::Index(layer.pass_idx.size()));
        for (std::size_t i = 0; i < layer.pass_idx.size(); ++i) u[Eigen::Index(i)] = cur[layer.pass_idx[i]];
        const Vec s = s_max * net_forward(layer.scale_net, u).array().tanh().matrix();
        const Vec t = net_forward(layer.shift_net, u);
        for (std::size_t i = 0; i < layer.trans_idx.size(); ++i) {
            double& v = cur[layer.trans_idx[i]];
            v = v * std::exp(s[Eigen::Index(i)]) + t[Eigen::Index(i)];
        }
    }
    return cur;
}

Vec FlowModel::decode(const Vec& z) const {
    ensure_finite(z, "FlowModel::decode input");
    if (z.size() != q) throw std::domain_error("FlowModel::decode: dimension mismatch");
    Vec cur = z;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
        const CouplingLayer& layer = *it;
        Vec u(Eigen::Index(layer.pass_idx.size()));
        for (std::size_t i = 0; i < layer.pass_idx.size(); ++i) u[Eigen::Index(i)] = cur[layer.pass_idx[i]];
        const Vec s = s_max * net_forward(layer.scale_net, u).array().tanh().matrix();
        const Vec t = net_forward(layer.shift_net, u);
        for (std::size_t i = 0; i < layer.trans_idx.size(); ++i) {
            double& v = cur[layer.trans_idx[i]];
            v = (v - t[Eigen::Index(i)]) * std::exp(-s[Eigen::Index(i)]);
        }
    }
    return cur;
}

void FlowGrads::zero() {
    for (CouplingLayerGrads& lg : layers) {
        for (CouplingNetGrads* g : {&lg.scale, &lg.shift}) {
            g->dW1.setZero();
            g->db1.setZero();
            g->dW2.setZero();
            g->db2.setZero();
        }
    }
}

FlowModel make_flow(int dim, int n_layers, int hidden, numkit::RngStream& rng) {
    if (dim < 2) throw std::domain_error("make_flow: dim >= 2 required");
    FlowModel model;
    model.q = dim;
    const int half = (dim + 1) / 2;
    for (int l = 0; l < n_layers; ++l) {
        CouplingLayer layer;
        for (int i = 0; i < dim; ++i) {
            const bool first_half = i < half;
            const bool pass = (l % 2 == 0) ? first_half : !first_half;
            (pass ? layer.pass_idx : layer.trans_idx).push_back(i);
        }
        const int in = int(layer.pass_idx.size());
        const int out = int(layer.trans_idx.size());
        layer.scale_net = make_net(in, hidden, out, rng);
        layer.shift_net = make_net(in, hidden, out, rng);
        model.layers.push_back(std::move(layer));
    }
    return model;
}

FlowGrads make_grads(const FlowModel& model) {
    FlowGrads g;
    for (const CouplingLayer& layer : model.layers) {
        CouplingLayerGrads lg;
        lg.scale = make_net_grads(layer.scale_net);
        lg.shift = make_net_grads(layer.shift_net);
        g.layers.push_back(std::move(lg));
    }
    return g;
}

double log_det_jacobian_encode(const FlowModel& model, const Vec& x) {
    ensure_finite(x, "log_det_jacobian_encode input");
    Vec cur = x;
    double log_det = 0.0;
    for (const CouplingLayer& layer : model.layers) {
        Vec u(Eigen::Index(layer.pass_idx.size()));
        for (std::size_t i = 0; i < layer.pass_idx.size(); ++i) u[Eigen::Index(i)] = cur[layer.pass_idx[i]];
        const Vec s = model.s_max * net_forward(layer.scale_net, u).array().tanh().matrix();
        const Vec t = net_forward(layer.shift_net, u);
        log_det += s.sum();
        for (std::size_t i = 0; i < layer.trans_idx.size(); ++i) {
            double& v = cur[layer.trans_idx[i]];
            v = v * std::exp(s[Eigen::Index(i)]) + t[Eigen::Index(i)];
        }
    }
    return log_det;
}

double log_likelihood(const FlowModel& model, const Vec& x) {
    const Vec z = model.encode(x);
    return -0.5 * z.squaredNorm() - 0.5 * double(model.q) * std::log(2.0 * M_PI) +
           log_det_jacobian_encode(model, x);
}

namespace {

// Shared recording of one coupling net on the tape.
nets::Tape::NodeId net_node(nets::Tape& tape, const CouplingNet& net, CouplingNetGrads* g,
                            nets::Tape::NodeId u) {
    auto h = tape.tanh(tape.affine(net.W1, net.b1, g ? &g->dW1 : nullptr, g ? &g->db1 : nullptr, u));
    return tape.affine(net.W2, net.b2, g ? &g->dW2 : nullptr, g ? &g->db2 : nullptr, h);
}

}  // namespace

nets::Tape::NodeId encode_node(nets::Tape& tape, const FlowModel& model, FlowGrads* grads,
                               const Vec& x, nets::Tape::NodeId* log_det_node) {
    ensure_finite(x, "encode_node input");
    nets::Tape::NodeId cur = tape.input(x);
    std::vector<nets::Tape::NodeId> s_sums;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const CouplingLayer& layer = model.layers[l];
        CouplingLayerGrads* lg = grads ? &grads->layers[l] : nullptr;
        auto u = tape.gather(cur, layer.pass_idx);
        auto v = tape.gather(cur, layer.trans_idx);
        auto s = tape.scale(tape.tanh(net_node(tape, layer.scale_net, lg ? &lg->scale : nullptr, u)),
                            model.s_max);
        auto t = net_node(tape, layer.shift_net, lg ? &lg->shift : nullptr, u);
        auto v2 = tape.add(tape.hadamard(v, tape.exp(s)), t);
        cur = tape.scatter_pair(layer.pass_idx, u, layer.trans_idx, v2, model.q);
        s_sums.push_back(tape.sum(s));
    }
    if (log_det_node) {
        if (s_sums.empty()) {
            *log_det_node = tape.scalar_input(0.0);
        } else {
            *log_det_node = tape.weighted_sum(s_sums, std::vector<double>(s_sums.size(), 1.0));
        }
    }
    return cur;
}

nets::Tape::NodeId log_likelihood_node(nets::Tape& tape, const FlowModel& model, FlowGrads* grads,
                                       const Vec& x) {
    nets::Tape::NodeId log_det = 0;
    auto z = encode_node(tape, model, grads, x, &log_det);
    auto base = tape.sqnorm(z);
    auto ll = tape.weighted_sum({base, log_det}, {-0.5, 1.0});
    return tape.shift(ll, -0.5 * double(model.q) * std::log(2.0 * M_PI));
}

void apply_sgd(FlowModel& model, const FlowGrads& grads, double lr) {
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        CouplingLayer& layer = model.layers[l];
        const CouplingLayerGrads& lg = grads.layers[l];
        layer.scale_net.W1 -= lr * lg.scale.dW1;
        layer.scale_net.b1 -= lr * lg.scale.db1;
        layer.scale_net.W2 -= lr * lg.scale.dW2;
        layer.scale_net.b2 -= lr * lg.scale.db2;
        layer.shift_net.W1 -= lr * lg.shift.dW1;
        layer.shift_net.b1 -= lr * lg.shift.db1;
        layer.shift_net.W2 -= lr * lg.shift.dW2;
        layer.shift_net.b2 -= lr * lg.shift.db2;
    }
}

FlowModel mle_train_flow(FlowModel model, const std::vector<Vec>& data, int steps, double lr,
                         FlowTrainTrace* trace) {
    if (data.empty()) throw std::invalid_argument("mle_train_flow: empty dataset");
    FlowGrads grads = make_grads(model);
    for (int step = 0; step < steps; ++step) {
        grads.zero();
        double avg_ll = 0.0;
        for (const Vec& x : data) {
            nets::Tape tape;
            auto ll = log_likelihood_node(tape, model, &grads, x);
            avg_ll += tape.value(ll);
            // Ascend the mean log-likelihood: seed each sample with -1/N via
            // a scale node so apply_sgd's descent step ascends.
            tape.backward(tape.scale(ll, -1.0 / double(data.size())));
        }
        avg_ll /= double(data.size());
        if (!std::isfinite(avg_ll)) {
            throw TrainError("mle_train_flow: non-finite log-likelihood", step);
        }
        apply_sgd(model, grads, lr);
        if (trace) trace->avg_log_likelihood.push_back(avg_ll);
    }
    return model;
}

Vec GroundTruthGenerator::decode(const Vec& z) const {
    ensure_finite(z, "GroundTruthGenerator::decode input");
    if (z.size() != n) throw std::domain_error("GroundTruthGenerator::decode: dimension mismatch");
    Vec mid = rot_in * z;
    for (int i = 0; i < n; ++i) mid[i] = soft_mono(mid[i]);
    return rot_out * mid;
}

Vec GroundTruthGenerator::encode(const Vec& x) const {
    ensure_finite(x, "GroundTruthGenerator::encode input");
    if (x.size() != n) throw std::domain_error("GroundTruthGenerator::encode: dimension mismatch");
    Vec mid = rot_out.transpose() * x;
    for (int i = 0; i < n; ++i) mid[i] = soft_mono_inverse(mid[i]);
    return rot_in.transpose() * mid;
}

GroundTruthGenerator make_ground_truth_generator(int dim, std::uint64_t mixing_seed) {
    GroundTruthGenerator gen;
    gen.n = dim;
    numkit::RngStream rng(mixing_seed, 0);
    numkit::RngStream r1 = rng.substream("rot_in");
    numkit::RngStream r2 = rng.substream("rot_out");
    gen.rot_in = random_rotation(dim, r1);
    gen.rot_out = random_rotation(dim, r2);
    return gen;
}

void SimilaritySpec::validate() const {
    if (epsilon < 0.0) throw std::domain_error("SimilaritySpec: epsilon must be >= 0");
    for (int c = 0; c < attributes.cols(); ++c) {
        if (attributes.col(c).norm() == 0.0) {
            throw std::domain_error("SimilaritySpec: attribute vector " + std::to_string(c) +
                                    " is zero");
        }
    }
}

Vec attribute_vector(const Bijection& model, const std::vector<Vec>& positives,
                     const std::vector<Vec>& negatives) {
    if (positives.empty() || negatives.empty()) {
        throw std::invalid_argument("attribute_vector: both example lists must be nonempty");
    }
    Vec mean_pos = Vec::Zero(model.dim());
    for (const Vec& x : positives) mean_pos += model.encode(x);
    mean_pos /= double(positives.size());
    Vec mean_neg = Vec::Zero(model.dim());
    for (const Vec& x : negatives) mean_neg += model.encode(x);
    mean_neg /= double(negatives.size());
    return mean_pos - mean_neg;
}

Vec sample_coefficients(const SimilaritySpec& spec, numkit::RngStream& rng) {
    const int d = spec.attr_count();
    if (d == 1) {
        Vec t(1);
        t[0] = spec.epsilon * (2.0 * rng.next_unit() - 1.0);
        return t;
    }
    // Uniform on the l2 ball: gaussian direction, radius eps * u^(1/d).
    Vec dir = numkit::gaussian_vec(rng, d, 1.0);
    const double norm = dir.norm();
    const double radius = spec.epsilon * std::pow(rng.next_unit(), 1.0 / double(d));
    if (norm == 0.0) return Vec::Zero(d);
    return dir * (radius / norm);
}

Vec similarity_sample(const SimilaritySpec& spec, const Vec& z_G, numkit::RngStream& rng) {
    spec.validate();
    return z_G + spec.attributes * sample_coefficients(spec, rng);
}

Vec similarity_endpoint(const SimilaritySpec& spec, const Vec& z_G, const Vec& t) {
    if (t.size() != spec.attr_count()) {
        throw std::invalid_argument("similarity_endpoint: coefficient dimension mismatch");
    }
    if (t.norm() > spec.epsilon * (1.0 + 1e-12)) {
        throw std::domain_error("similarity_endpoint: ||t|| exceeds epsilon");
    }
    return z_G + spec.attributes * t;
}

}  // namespace fairsmooth::flow
