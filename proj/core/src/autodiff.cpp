#include "fedfew/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace fedfew::ad {

namespace {

double stable_softplus(double x) {
    // softplus(x) = max(x,0) + log1p(exp(-|x|))
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

[[noreturn]] void shape_error(const char* what, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string("autodiff: ") + what + ": shapes " +
                                shape_to_string(a.shape) + " and " +
                                shape_to_string(b.shape) + " are incompatible");
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B^T where Bt is [n,k]
void gemm_bt_acc(const double* a, const double* bt, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = bt + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[k,n] += A^T * B where At is [m,k], B is [m,n]
void gemm_at_acc(const double* at, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = at + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::input: return "input";
        case Op::matmul: return "matmul";
        case Op::add: return "add";
        case Op::mul: return "mul";
        case Op::relu: return "relu";
        case Op::sigmoid: return "sigmoid";
        case Op::softplus: return "softplus";
        case Op::log: return "log";
        case Op::exp: return "exp";
        case Op::square: return "square";
        case Op::sum: return "sum";
        case Op::mean: return "mean";
        case Op::scale: return "scale";
        case Op::shift: return "shift";
        case Op::concat: return "concat";
        case Op::l2_normalize: return "l2_normalize";
        case Op::stop_gradient: return "stop_gradient";
    }
    return "?";
}

NodeId Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

const Tape::Node& Tape::node(NodeId id) const {
    if (id >= nodes_.size()) throw std::out_of_range("autodiff: bad node id");
    return nodes_[id];
}

const Tensor& Tape::value(NodeId id) const { return node(id).value; }

NodeId Tape::input(Tensor value) {
    Node n;
    n.op = Op::input;
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) {
        shape_error("matmul", ta, tb);
    }
    Tensor out = Tensor::zeros({ta.rows(), tb.cols()});
    gemm_acc(ta.values.data(), tb.values.data(), out.values.data(), ta.rows(), ta.cols(),
             tb.cols());
    Node n;
    n.op = Op::matmul;
    n.in0 = a;
    n.in1 = b;
    n.arity = 2;
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    Tensor out;
    if (ta.same_shape(tb)) {
        out = ta;
        for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += tb.values[i];
    } else if (ta.rank() == 2 && tb.rank() == 1 && ta.cols() == tb.shape[0]) {
        // bias broadcast over rows
        out = ta;
        for (std::size_t r = 0; r < ta.rows(); ++r) {
            for (std::size_t c = 0; c < ta.cols(); ++c) {
                out.values[r * ta.cols() + c] += tb.values[c];
            }
        }
    } else {
        shape_error("add", ta, tb);
    }
    Node n;
    n.op = Op::add;
    n.in0 = a;
    n.in1 = b;
    n.arity = 2;
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) shape_error("mul", ta, tb);
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= tb.values[i];
    Node n;
    n.op = Op::mul;
    n.in0 = a;
    n.in1 = b;
    n.arity = 2;
    n.value = std::move(out);
    return push(std::move(n));
}

#define FEDFEW_UNARY(NAME, OPK, EXPR)                       \
    NodeId Tape::NAME(NodeId x) {                           \
        Tensor out = value(x);                              \
        for (double& v : out.values) v = (EXPR);            \
        Node n;                                             \
        n.op = OPK;                                         \
        n.in0 = x;                                          \
        n.arity = 1;                                        \
        n.value = std::move(out);                           \
        return push(std::move(n));                          \
    }

FEDFEW_UNARY(relu, Op::relu, v > 0.0 ? v : 0.0)
FEDFEW_UNARY(sigmoid, Op::sigmoid, stable_sigmoid(v))
FEDFEW_UNARY(softplus, Op::softplus, stable_softplus(v))
FEDFEW_UNARY(log, Op::log, std::log(v))
FEDFEW_UNARY(exp, Op::exp, std::exp(v))
FEDFEW_UNARY(square, Op::square, v * v)
#undef FEDFEW_UNARY

NodeId Tape::sum(NodeId x) {
    const Tensor& t = value(x);
    double acc = 0.0;
    for (double v : t.values) acc += v;
    Node n;
    n.op = Op::sum;
    n.in0 = x;
    n.arity = 1;
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

NodeId Tape::mean(NodeId x) {
    const Tensor& t = value(x);
    if (t.size() == 0) throw std::invalid_argument("autodiff: mean of empty tensor");
    double acc = 0.0;
    for (double v : t.values) acc += v;
    Node n;
    n.op = Op::mean;
    n.in0 = x;
    n.arity = 1;
    n.value = Tensor::scalar(acc / static_cast<double>(t.size()));
    return push(std::move(n));
}

NodeId Tape::scale(NodeId x, double c) {
    Tensor out = value(x);
    for (double& v : out.values) v *= c;
    Node n;
    n.op = Op::scale;
    n.in0 = x;
    n.arity = 1;
    n.arg = c;
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::shift(NodeId x, double c) {
    Tensor out = value(x);
    for (double& v : out.values) v += c;
    Node n;
    n.op = Op::shift;
    n.in0 = x;
    n.arity = 1;
    n.arg = c;
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::concat(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 1 || tb.rank() != 1) shape_error("concat", ta, tb);
    std::vector<double> v = ta.values;
    v.insert(v.end(), tb.values.begin(), tb.values.end());
    Node n;
    n.op = Op::concat;
    n.in0 = a;
    n.in1 = b;
    n.arity = 2;
    n.value = Tensor::vector(std::move(v));
    return push(std::move(n));
}

NodeId Tape::l2_normalize(NodeId x) {
    const Tensor& t = value(x);
    std::size_t nrows, ncols;
    if (t.rank() == 1) {
        nrows = 1;
        ncols = t.shape[0];
    } else if (t.rank() == 2) {
        nrows = t.rows();
        ncols = t.cols();
    } else {
        throw std::invalid_argument("autodiff: l2_normalize needs rank 1 or 2, got " +
                                    shape_to_string(t.shape));
    }
    Tensor out = t;
    for (std::size_t r = 0; r < nrows; ++r) {
        double sq = 0.0;
        for (std::size_t c = 0; c < ncols; ++c) {
            double v = t.values[r * ncols + c];
            sq += v * v;
        }
        double norm = std::sqrt(sq);
        if (norm == 0.0) {
            throw std::invalid_argument("autodiff: l2_normalize of zero-norm row " +
                                        std::to_string(r));
        }
        for (std::size_t c = 0; c < ncols; ++c) out.values[r * ncols + c] /= norm;
    }
    Node n;
    n.op = Op::l2_normalize;
    n.in0 = x;
    n.arity = 1;
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::stop_gradient(NodeId x) {
    Node n;
    n.op = Op::stop_gradient;
    n.in0 = x;
    n.arity = 1;
    n.value = value(x);  // forward identity, bit for bit
    return push(std::move(n));
}

std::vector<Tensor> Tape::backward(NodeId scalar_output) const {
    const Tensor& out = value(scalar_output);
    if (out.size() != 1) {
        throw std::invalid_argument("autodiff: backward needs a scalar output, got shape " +
                                    shape_to_string(out.shape));
    }
    std::vector<Tensor> grads(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        grads[i] = Tensor::zeros(nodes_[i].value.shape);
    }
    grads[scalar_output].values[0] = 1.0;

    for (std::size_t idx = scalar_output + 1; idx-- > 0;) {
        const Node& n = nodes_[idx];
        const Tensor& g = grads[idx];
        switch (n.op) {
            case Op::input:
                break;
            case Op::matmul: {
                const Tensor& a = nodes_[n.in0].value;
                const Tensor& b = nodes_[n.in1].value;
                // dA += G * B^T ; dB += A^T * G
                gemm_bt_acc(g.values.data(), b.values.data(), grads[n.in0].values.data(),
                            a.rows(), b.cols(), a.cols());
                gemm_at_acc(a.values.data(), g.values.data(), grads[n.in1].values.data(),
                            a.rows(), a.cols(), b.cols());
                break;
            }
            case Op::add: {
                const Tensor& a = nodes_[n.in0].value;
                const Tensor& b = nodes_[n.in1].value;
                for (std::size_t i = 0; i < a.size(); ++i) {
                    grads[n.in0].values[i] += g.values[i];
                }
                if (a.same_shape(b)) {
                    for (std::size_t i = 0; i < b.size(); ++i) {
                        grads[n.in1].values[i] += g.values[i];
                    }
                } else {
                    // bias: column sums
                    std::size_t ncols = a.cols();
                    for (std::size_t r = 0; r < a.rows(); ++r) {
                        for (std::size_t c = 0; c < ncols; ++c) {
                            grads[n.in1].values[c] += g.values[r * ncols + c];
                        }
                    }
                }
                break;
            }
            case Op::mul: {
                const Tensor& a = nodes_[n.in0].value;
                const Tensor& b = nodes_[n.in1].value;
                for (std::size_t i = 0; i < a.size(); ++i) {
                    grads[n.in0].values[i] += g.values[i] * b.values[i];
                    grads[n.in1].values[i] += g.values[i] * a.values[i];
                }
                break;
            }
            case Op::relu: {
                const Tensor& x = nodes_[n.in0].value;
                for (std::size_t i = 0; i < x.size(); ++i) {
                    if (x.values[i] > 0.0) grads[n.in0].values[i] += g.values[i];
                }
                break;
            }
            case Op::sigmoid: {
                for (std::size_t i = 0; i < n.value.size(); ++i) {
                    double s = n.value.values[i];
                    grads[n.in0].values[i] += g.values[i] * s * (1.0 - s);
                }
                break;
            }
            case Op::softplus: {
                const Tensor& x = nodes_[n.in0].value;
                for (std::size_t i = 0; i < x.size(); ++i) {
                    grads[n.in0].values[i] += g.values[i] * stable_sigmoid(x.values[i]);
                }
                break;
            }
            case Op::log: {
                const Tensor& x = nodes_[n.in0].value;
                for (std::size_t i = 0; i < x.size(); ++i) {
                    grads[n.in0].values[i] += g.values[i] / x.values[i];
                }
                break;
            }
            case Op::exp: {
                for (std::size_t i = 0; i < n.value.size(); ++i) {
                    grads[n.in0].values[i] += g.values[i] * n.value.values[i];
                }
                break;
            }
            case Op::square: {
                const Tensor& x = nodes_[n.in0].value;
                for (std::size_t i = 0; i < x.size(); ++i) {
                    grads[n.in0].values[i] += g.values[i] * 2.0 * x.values[i];
                }
                break;
            }
            case Op::sum: {
                double gv = g.values[0];
                for (double& d : grads[n.in0].values) d += gv;
                break;
            }
            case Op::mean: {
                double gv = g.values[0] / static_cast<double>(grads[n.in0].size());
                for (double& d : grads[n.in0].values) d += gv;
                break;
            }
            case Op::scale: {
                for (std::size_t i = 0; i < n.value.size(); ++i) {
                    grads[n.in0].values[i] += g.values[i] * n.arg;
                }
                break;
            }
            case Op::shift: {
                for (std::size_t i = 0; i < n.value.size(); ++i) {
                    grads[n.in0].values[i] += g.values[i];
                }
                break;
            }
            case Op::concat: {
                std::size_t na = nodes_[n.in0].value.size();
                for (std::size_t i = 0; i < na; ++i) {
                    grads[n.in0].values[i] += g.values[i];
                }
                for (std::size_t i = 0; i < nodes_[n.in1].value.size(); ++i) {
                    grads[n.in1].values[i] += g.values[na + i];
                }
                break;
            }
            case Op::l2_normalize: {
                const Tensor& x = nodes_[n.in0].value;
                std::size_t nrows = x.rank() == 1 ? 1 : x.rows();
                std::size_t ncols = x.rank() == 1 ? x.shape[0] : x.cols();
                for (std::size_t r = 0; r < nrows; ++r) {
                    const double* xr = x.values.data() + r * ncols;
                    const double* yr = n.value.values.data() + r * ncols;
                    const double* gr = g.values.data() + r * ncols;
                    double sq = 0.0;
                    for (std::size_t c = 0; c < ncols; ++c) sq += xr[c] * xr[c];
                    double norm = std::sqrt(sq);
                    double gy = 0.0;
                    for (std::size_t c = 0; c < ncols; ++c) gy += gr[c] * yr[c];
                    double* dr = grads[n.in0].values.data() + r * ncols;
                    for (std::size_t c = 0; c < ncols; ++c) {
                        dr[c] += (gr[c] - yr[c] * gy) / norm;
                    }
                }
                break;
            }
            case Op::stop_gradient:
                break;  // adjoint does not cross this edge
        }
    }
    return grads;
}

namespace {

double eval_loss(const LossBuilder& builder, const std::vector<Tensor>& point) {
    Tape tape;
    std::vector<NodeId> params;
    params.reserve(point.size());
    for (const Tensor& t : point) params.push_back(tape.input(t));
    NodeId loss = builder(tape, params);
    const Tensor& v = tape.value(loss);
    if (v.size() != 1) {
        throw std::invalid_argument("grad_check: loss_builder must return a scalar");
    }
    return v.values[0];
}

}  // namespace

GradCheckReport grad_check_report(const LossBuilder& builder,
                                  const std::vector<Tensor>& point, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be > 0");

    Tape tape;
    std::vector<NodeId> params;
    for (const Tensor& t : point) params.push_back(tape.input(t));
    NodeId loss = builder(tape, params);
    if (tape.value(loss).size() != 1) {
        throw std::invalid_argument("grad_check: loss_builder must return a scalar");
    }
    double base = tape.value(loss).values[0];
    std::vector<Tensor> grads = tape.backward(loss);

    GradCheckReport report;
    for (std::size_t p = 0; p < point.size(); ++p) {
        for (std::size_t i = 0; i < point[p].size(); ++i) {
            std::vector<Tensor> pt = point;
            pt[p].values[i] += eps;
            double up = eval_loss(builder, pt);
            pt[p].values[i] = point[p].values[i] - eps;
            double down = eval_loss(builder, pt);
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw std::runtime_error("grad_check: non-finite loss at parameter " +
                                         std::to_string(p) + " coordinate " +
                                         std::to_string(i));
            }
            double central = (up - down) / (2.0 * eps);
            double analytic = grads[params[p]].values[i];
            double rel = std::abs(analytic - central) / std::max(1.0, std::abs(analytic));
            if (rel >= report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = p;
                report.worst_coord = i;
                report.analytic = analytic;
                report.central = central;
                report.forward_diff = (up - base) / eps;
                report.backward_diff = (base - down) / eps;
            }
        }
    }
    return report;
}

double grad_check(const LossBuilder& builder, const std::vector<Tensor>& point,
                  double eps) {
    return grad_check_report(builder, point, eps).max_rel_error;
}

}  // namespace fedfew::ad
