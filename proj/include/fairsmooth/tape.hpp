#pragma once

#include "fairsmooth/types.hpp"

#include <vector>

namespace fairsmooth::nets {

/// Reverse-mode gradient tape over dense vectors. Operations append nodes
/// (values are computed eagerly and cached); backward() walks the recorded
/// graph once and accumulates parameter gradients into the Mat*/Vec* slots
/// registered with each affine node.
///
/// Scalars are length-1 vectors. Parameter and gradient storage is owned by
/// the caller and must outlive the tape; parameters must not change between
/// recording and backward().
class Tape {
public:
    using NodeId = int;

    /// Constant leaf; no gradient flows into it.
    NodeId input(Vec v);
    NodeId scalar_input(double v);

    /// y = W x + b. Pass null gradient slots to freeze the parameters.
    NodeId affine(const Mat& W, const Vec& b, Mat* dW, Vec* db, NodeId x);

    NodeId relu(NodeId x);
    NodeId tanh(NodeId x);
    NodeId exp(NodeId x);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId hadamard(NodeId a, NodeId b);
    NodeId scale(NodeId x, double c);
    NodeId shift(NodeId x, double c);
    /// alpha .* x + beta with constant coefficient vectors.
    NodeId affine_diag(Vec alpha, Vec beta, NodeId x);
    NodeId gather(NodeId x, std::vector<int> idx);
    /// Inverse of two gathers: places a at idx_a and b at idx_b in a dim-long vector.
    NodeId scatter_pair(std::vector<int> idx_a, NodeId a, std::vector<int> idx_b, NodeId b,
                        int dim);
    NodeId sum(NodeId x);
    NodeId sqnorm(NodeId x);
    /// Euclidean norm; subgradient 0 at the origin.
    NodeId l2norm(NodeId x);
    NodeId cross_entropy_logits(NodeId logits, int label);
    /// Maximum of scalar nodes; the gradient flows only into the winner
    /// (ties resolved toward the lowest index).
    NodeId max_of(const std::vector<NodeId>& xs);
    NodeId weighted_sum(const std::vector<NodeId>& xs, const std::vector<double>& w);

    const Vec& vec(NodeId id) const;
    double value(NodeId id) const;

    /// Seeds the (scalar) root with adjoint 1 and accumulates gradients.
    /// Throws std::invalid_argument if the root is not scalar.
    void backward(NodeId root);

    std::size_t size() const { return nodes_.size(); }

private:
    enum class Op {
        Input,
        Affine,
        Relu,
        Tanh,
        Exp,
        Add,
        Sub,
        Hadamard,
        Scale,
        Shift,
        AffineDiag,
        Gather,
        ScatterPair,
        Sum,
        SqNorm,
        L2Norm,
        CrossEntropy,
        MaxOf,
        WeightedSum,
    };

    struct Node {
        Op op;
        Vec value;
        std::vector<NodeId> parents;
        // Op-specific payload.
        const Mat* W = nullptr;
        const Vec* b = nullptr;
        Mat* dW = nullptr;
        Vec* db = nullptr;
        double c = 0.0;
        Vec alpha, beta;
        std::vector<int> idx_a, idx_b;
        int label = -1;
        int winner = -1;
        std::vector<double> weights;
    };

    NodeId push(Node n);
    std::vector<Node> nodes_;
};

}  // namespace fairsmooth::nets
