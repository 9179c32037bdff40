#include "fairsmooth/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace fairsmooth::nets {

Tape::NodeId Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return NodeId(nodes_.size()) - 1;
}

Tape::NodeId Tape::input(Vec v) {
    Node n;
    n.op = Op::Input;
    n.value = std::move(v);
    return push(std::move(n));
}

Tape::NodeId Tape::scalar_input(double v) {
    Vec s(1);
    s[0] = v;
    return input(std::move(s));
}

Tape::NodeId Tape::affine(const Mat& W, const Vec& b, Mat* dW, Vec* db, NodeId x) {
    Node n;
    n.op = Op::Affine;
    n.parents = {x};
    n.W = &W;
    n.b = &b;
    n.dW = dW;
    n.db = db;
    n.value = W * nodes_[x].value + b;
    return push(std::move(n));
}

Tape::NodeId Tape::relu(NodeId x) {
    Node n;
    n.op = Op::Relu;
    n.parents = {x};
    n.value = nodes_[x].value.cwiseMax(0.0);
    return push(std::move(n));
}

Tape::NodeId Tape::tanh(NodeId x) {
    Node n;
    n.op = Op::Tanh;
    n.parents = {x};
    n.value = nodes_[x].value.array().tanh();
    return push(std::move(n));
}

Tape::NodeId Tape::exp(NodeId x) {
    Node n;
    n.op = Op::Exp;
    n.parents = {x};
    n.value = nodes_[x].value.array().exp();
    return push(std::move(n));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    Node n;
    n.op = Op::Add;
    n.parents = {a, b};
    n.value = nodes_[a].value + nodes_[b].value;
    return push(std::move(n));
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
    Node n;
    n.op = Op::Sub;
    n.parents = {a, b};
    n.value = nodes_[a].value - nodes_[b].value;
    return push(std::move(n));
}

Tape::NodeId Tape::hadamard(NodeId a, NodeId b) {
    Node n;
    n.op = Op::Hadamard;
    n.parents = {a, b};
    n.value = nodes_[a].value.cwiseProduct(nodes_[b].value);
    return push(std::move(n));
}

Tape::NodeId Tape::scale(NodeId x, double c) {
    Node n;
    n.op = Op::Scale;
    n.parents = {x};
    n.c = c;
    n.value = c * nodes_[x].value;
    return push(std::move(n));
}

Tape::NodeId Tape::shift(NodeId x, double c) {
    Node n;
    n.op = Op::Shift;
    n.parents = {x};
    n.c = c;
    n.value = nodes_[x].value.array() + c;
    return push(std::move(n));
}

Tape::NodeId Tape::affine_diag(Vec alpha, Vec beta, NodeId x) {
    Node n;
    n.op = Op::AffineDiag;
    n.parents = {x};
    n.value = alpha.cwiseProduct(nodes_[x].value) + beta;
    n.alpha = std::move(alpha);
    n.beta = std::move(beta);
    return push(std::move(n));
}

Tape::NodeId Tape::gather(NodeId x, std::vector<int> idx) {
    Node n;
    n.op = Op::Gather;
    n.parents = {x};
    n.value.resize(Eigen::Index(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) n.value[Eigen::Index(i)] = nodes_[x].value[idx[i]];
    n.idx_a = std::move(idx);
    return push(std::move(n));
}

Tape::NodeId Tape::scatter_pair(std::vector<int> idx_a, NodeId a, std::vector<int> idx_b, NodeId b,
                                int dim) {
    Node n;
    n.op = Op::ScatterPair;
    n.parents = {a, b};
    n.value = Vec::Zero(dim);
    for (std::size_t i = 0; i < idx_a.size(); ++i) n.value[idx_a[i]] = nodes_[a].value[Eigen::Index(i)];
    for (std::size_t i = 0; i < idx_b.size(); ++i) n.value[idx_b[i]] = nodes_[b].value[Eigen::Index(i)];
    n.idx_a = std::move(idx_a);
    n.idx_b = std::move(idx_b);
    return push(std::move(n));
}

Tape::NodeId Tape::sum(NodeId x) {
    Node n;
    n.op = Op::Sum;
    n.parents = {x};
    n.value.resize(1);
    n.value[0] = nodes_[x].value.sum();
    return push(std::move(n));
}

Tape::NodeId Tape::sqnorm(NodeId x) {
    Node n;
    n.op = Op::SqNorm;
    n.parents = {x};
    n.value.resize(1);
    n.value[0] = nodes_[x].value.squaredNorm();
    return push(std::move(n));
}

Tape::NodeId Tape::l2norm(NodeId x) {
    Node n;
    n.op = Op::L2Norm;
    n.parents = {x};
    n.value.resize(1);
    n.value[0] = nodes_[x].value.norm();
    return push(std::move(n));
}

Tape::NodeId Tape::cross_entropy_logits(NodeId logits, int label) {
    const Vec& l = nodes_[logits].value;
    if (label < 0 || label >= l.size()) {
        throw std::invalid_argument("cross_entropy_logits: label out of range");
    }
    Node n;
    n.op = Op::CrossEntropy;
    n.parents = {logits};
    n.label = label;
    const double m = l.maxCoeff();
    const double lse = m + std::log((l.array() - m).exp().sum());
    n.value.resize(1);
    n.value[0] = lse - l[label];
    return push(std::move(n));
}

Tape::NodeId Tape::max_of(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw std::invalid_argument("max_of: empty argument list");
    Node n;
    n.op = Op::MaxOf;
    n.parents = xs;
    int winner = 0;
    for (std::size_t i = 1; i < xs.size(); ++i) {
        if (nodes_[xs[i]].value[0] > nodes_[xs[winner]].value[0]) winner = int(i);
    }
    n.winner = winner;
    n.value.resize(1);
    n.value[0] = nodes_[xs[winner]].value[0];
    return push(std::move(n));
}

Tape::NodeId Tape::weighted_sum(const std::vector<NodeId>& xs, const std::vector<double>& w) {
    if (xs.size() != w.size()) throw std::invalid_argument("weighted_sum: size mismatch");
    Node n;
    n.op = Op::WeightedSum;
    n.parents = xs;
    n.weights = w;
    double acc = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) acc += w[i] * nodes_[xs[i]].value[0];
    n.value.resize(1);
    n.value[0] = acc;
    return push(std::move(n));
}

const Vec& Tape::vec(NodeId id) const { return nodes_[std::size_t(id)].value; }

double Tape::value(NodeId id) const {
    const Vec& v = nodes_[std::size_t(id)].value;
    if (v.size() != 1) throw std::invalid_argument("Tape::value: node is not scalar");
    return v[0];
}

void Tape::backward(NodeId root) {
    if (root < 0 || std::size_t(root) >= nodes_.size()) {
        throw std::invalid_argument("Tape::backward: bad root");
    }
    if (nodes_[std::size_t(root)].value.size() != 1) {
        throw std::invalid_argument("Tape::backward: root must be scalar");
    }

    std::vector<Vec> adj(nodes_.size());
    std::vector<char> touched(nodes_.size(), 0);
    auto bump = [&](NodeId id, const Vec& g) {
        if (!touched[std::size_t(id)]) {
            adj[std::size_t(id)] = g;
            touched[std::size_t(id)] = 1;
        } else {
            adj[std::size_t(id)] += g;
        }
    };

    Vec seed(1);
    seed[0] = 1.0;
    bump(root, seed);

    for (NodeId id = root; id >= 0; --id) {
        if (!touched[std::size_t(id)]) continue;
        const Node& n = nodes_[std::size_t(id)];
        const Vec& g = adj[std::size_t(id)];
        switch (n.op) {
            case Op::Input:
                break;
            case Op::Affine: {
                const Vec& x = nodes_[n.parents[0]].value;
                if (n.dW) n.dW->noalias() += g * x.transpose();
                if (n.db) *n.db += g;
                bump(n.parents[0], n.W->transpose() * g);
                break;
            }
            case Op::Relu: {
                const Vec& x = nodes_[n.parents[0]].value;
                Vec gx = g;
                for (Eigen::Index i = 0; i < gx.size(); ++i) {
                    if (x[i] <= 0.0) gx[i] = 0.0;
                }
                bump(n.parents[0], gx);
                break;
            }
            case Op::Tanh: {
                const Vec& y = n.value;
                bump(n.parents[0], (g.array() * (1.0 - y.array().square())).matrix());
                break;
            }
            case Op::Exp:
                bump(n.parents[0], g.cwiseProduct(n.value));
                break;
            case Op::Add:
                bump(n.parents[0], g);
                bump(n.parents[1], g);
                break;
            case Op::Sub:
                bump(n.parents[0], g);
                bump(n.parents[1], -g);
                break;
            case Op::Hadamard:
                bump(n.parents[0], g.cwiseProduct(nodes_[n.parents[1]].value));
                bump(n.parents[1], g.cwiseProduct(nodes_[n.parents[0]].value));
                break;
            case Op::Scale:
                bump(n.parents[0], n.c * g);
                break;
            case Op::Shift:
                bump(n.parents[0], g);
                break;
            case Op::AffineDiag:
                bump(n.parents[0], g.cwiseProduct(n.alpha));
                break;
            case Op::Gather: {
                Vec gx = Vec::Zero(nodes_[n.parents[0]].value.size());
                for (std::size_t i = 0; i < n.idx_a.size(); ++i) gx[n.idx_a[i]] += g[Eigen::Index(i)];
                bump(n.parents[0], gx);
                break;
            }
            case Op::ScatterPair: {
                Vec ga(Eigen::Index(n.idx_a.size())), gb(Eigen::Index(n.idx_b.size()));
                for (std::size_t i = 0; i < n.idx_a.size(); ++i) ga[Eigen::Index(i)] = g[n.idx_a[i]];
                for (std::size_t i = 0; i < n.idx_b.size(); ++i) gb[Eigen::Index(i)] = g[n.idx_b[i]];
                bump(n.parents[0], ga);
                bump(n.parents[1], gb);
                break;
            }
            case Op::Sum:
                bump(n.parents[0], Vec::Constant(nodes_[n.parents[0]].value.size(), g[0]));
                break;
            case Op::SqNorm:
                bump(n.parents[0], 2.0 * g[0] * nodes_[n.parents[0]].value);
                break;
            case Op::L2Norm: {
                const double norm = n.value[0];
                if (norm > 0.0) bump(n.parents[0], (g[0] / norm) * nodes_[n.parents[0]].value);
                break;
            }
            case Op::CrossEntropy: {
                const Vec& l = nodes_[n.parents[0]].value;
                const double m = l.maxCoeff();
                Vec soft = (l.array() - m).exp();
                soft /= soft.sum();
                soft[n.label] -= 1.0;
                bump(n.parents[0], g[0] * soft);
                break;
            }
            case Op::MaxOf: {
                bump(n.parents[std::size_t(n.winner)], g);
                break;
            }
            case Op::WeightedSum: {
                for (std::size_t i = 0; i < n.parents.size(); ++i) {
                    bump(n.parents[i], n.weights[i] * g);
                }
                break;
            }
        }
    }
}

}  // namespace fairsmooth::nets
