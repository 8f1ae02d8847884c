#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "fedfew/tensor.hpp"

namespace fedfew::ad {

using NodeId = std::size_t;

enum class Op {
    input,
    matmul,
    add,           // same shape, or [m,n] + [n] bias broadcast
    mul,           // elementwise, same shape
    relu,
    sigmoid,
    softplus,
    log,
    exp,
    square,
    sum,           // all entries -> [1]
    mean,          // all entries -> [1]
    scale,         // x * constant
    shift,         // x + constant
    concat,        // 1-D concat
    l2_normalize,  // 1-D vector or 2-D row-wise
    stop_gradient,
};

const char* op_name(Op op);

/// Reverse-mode tape. Nodes are appended in topological order; backward
/// walks them once in reverse. A tape is confined to one thread; distinct
/// tapes are independent.
class Tape {
   public:
    NodeId input(Tensor value);

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId relu(NodeId x);
    NodeId sigmoid(NodeId x);
    NodeId softplus(NodeId x);
    NodeId log(NodeId x);
    NodeId exp(NodeId x);
    NodeId square(NodeId x);
    NodeId sum(NodeId x);
    NodeId mean(NodeId x);
    NodeId scale(NodeId x, double c);
    NodeId shift(NodeId x, double c);
    NodeId concat(NodeId a, NodeId b);
    NodeId l2_normalize(NodeId x);
    NodeId stop_gradient(NodeId x);

    const Tensor& value(NodeId id) const;
    std::size_t node_count() const { return nodes_.size(); }

    /// Gradient of a scalar output w.r.t. every node on the tape.
    /// Rejects non-scalar outputs. stop_gradient nodes pass no adjoint
    /// to their input. Deterministic: fixed accumulation order.
    std::vector<Tensor> backward(NodeId scalar_output) const;

   private:
    struct Node {
        Op op;
        NodeId in0 = 0, in1 = 0;
        int arity = 0;
        double arg = 0.0;  // scale / shift constant
        Tensor value;
    };

    NodeId push(Node n);
    const Node& node(NodeId id) const;

    std::vector<Node> nodes_;
};

/// Detailed finite-difference comparison for one scalar loss.
struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_param = 0;      // which parameter tensor
    std::size_t worst_coord = 0;      // flat index within it
    double analytic = 0.0;            // at the worst coordinate
    double central = 0.0;
    double forward_diff = 0.0;        // one-sided estimates at the worst coordinate
    double backward_diff = 0.0;
};

/// loss_builder gets a fresh tape plus one input node per parameter tensor
/// and must return a scalar loss node.
using LossBuilder = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

/// Max over all coordinates of |analytic - central difference| /
/// max(1, |analytic|). Throws if the loss is non-finite at a perturbed
/// point, naming the coordinate.
double grad_check(const LossBuilder& loss_builder, const std::vector<Tensor>& point,
                  double eps);

GradCheckReport grad_check_report(const LossBuilder& loss_builder,
                                  const std::vector<Tensor>& point, double eps);

}  // namespace fedfew::ad
