#include "rvqlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rvqlab/error.hpp"
#include "rvqlab/linalg.hpp"

namespace rvqlab::autodiff {

namespace {

constexpr double kLogClamp = 1e-12;

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw InvalidArgument(std::string(op) + ": shape mismatch " +
                              shape_str(a) + " vs " + shape_str(b));
}

void require_finite(const Tensor& t, const char* op) {
    for (double v : t.data)
        if (!std::isfinite(v))
            throw Error(std::string("non-finite value produced by ") + op);
}

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::Leaf: return "leaf";
        case OpKind::MatMul: return "matmul";
        case OpKind::FixedMatMul: return "fixed_matmul";
        case OpKind::Add: return "add";
        case OpKind::BiasAdd: return "bias_add";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::Relu: return "relu";
        case OpKind::Log: return "log";
        case OpKind::Exp: return "exp";
        case OpKind::Square: return "square";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::SliceRows: return "slice_rows";
        case OpKind::SliceCols: return "slice_cols";
        case OpKind::Concat: return "concat";
        case OpKind::LogSoftmax: return "log_softmax";
        case OpKind::CustomGrad: return "custom_grad";
    }
    return "op";
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape))
        throw InvalidArgument("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(*this));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> d) {
    return Tensor({rows, cols}, std::move(d));
}

Tensor Tensor::vector(std::vector<double> d) {
    const std::size_t n = d.size();
    return Tensor({n}, std::move(d));
}

std::size_t Tensor::numel() const { return shape_numel(shape); }

std::size_t Tensor::rows() const {
    if (rank() != 2) throw InvalidArgument("rows(): tensor is " + shape_str(*this));
    return shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw InvalidArgument("cols(): tensor is " + shape_str(*this));
    return shape[1];
}

double& Tensor::operator()(std::size_t r, std::size_t c) {
    return data[r * shape[1] + c];
}

double Tensor::operator()(std::size_t r, std::size_t c) const {
    return data[r * shape[1] + c];
}

std::string shape_str(const Tensor& t) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) os << ", ";
        os << t.shape[i];
    }
    os << ")";
    return os.str();
}

NodeId Graph::push(Node n) {
    if (backward_done_)
        throw InvalidArgument("graph already ran backward; build a new one");
    require_finite(n.value, op_name(n.op));
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

const Node& Graph::node(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw InvalidArgument("bad node id " + std::to_string(id));
    return nodes_[id];
}

NodeId Graph::leaf(Tensor t) {
    Node n;
    n.op = OpKind::Leaf;
    n.value = std::move(t);
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows())
        throw InvalidArgument("matmul: shape mismatch " + shape_str(ta) + " vs " +
                              shape_str(tb));
    Node n;
    n.op = OpKind::MatMul;
    n.inputs = {a, b};
    n.value = Tensor::zeros({ta.rows(), tb.cols()});
    gemm_nn_acc(ta.rows(), tb.cols(), ta.cols(), ta.data.data(),
                        tb.data.data(), n.value.data.data());
    return push(std::move(n));
}

NodeId Graph::fixed_matmul(NodeId a, std::shared_ptr<const Tensor> m) {
    const Tensor& ta = node(a).value;
    if (!m) throw InvalidArgument("fixed_matmul: null matrix");
    if (ta.rank() != 2 || m->rank() != 2 || ta.cols() != m->rows())
        throw InvalidArgument("fixed_matmul: shape mismatch " + shape_str(ta) +
                              " vs " + shape_str(*m));
    Node n;
    n.op = OpKind::FixedMatMul;
    n.inputs = {a};
    n.fixed = std::move(m);
    n.value = Tensor::zeros({ta.rows(), n.fixed->cols()});
    gemm_nn_acc(ta.rows(), n.fixed->cols(), ta.cols(), ta.data.data(),
                        n.fixed->data.data(), n.value.data.data());
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    require_same_shape(ta, tb, "add");
    Node n;
    n.op = OpKind::Add;
    n.inputs = {a, b};
    n.value = ta;
    for (std::size_t i = 0; i < tb.data.size(); ++i) n.value.data[i] += tb.data[i];
    return push(std::move(n));
}

NodeId Graph::bias_add(NodeId a, NodeId bias) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(bias).value;
    if (ta.rank() != 2 || tb.rank() != 1 || tb.shape[0] != ta.cols())
        throw InvalidArgument("bias_add: shape mismatch " + shape_str(ta) +
                              " vs " + shape_str(tb));
    Node n;
    n.op = OpKind::BiasAdd;
    n.inputs = {a, bias};
    n.value = ta;
    for (std::size_t r = 0; r < ta.rows(); ++r)
        for (std::size_t c = 0; c < ta.cols(); ++c)
            n.value.data[r * ta.cols() + c] += tb.data[c];
    return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    require_same_shape(ta, tb, "mul");
    Node n;
    n.op = OpKind::Mul;
    n.inputs = {a, b};
    n.value = ta;
    for (std::size_t i = 0; i < tb.data.size(); ++i) n.value.data[i] *= tb.data[i];
    return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double c) {
    Node n;
    n.op = OpKind::Scale;
    n.inputs = {a};
    n.scalar = c;
    n.value = node(a).value;
    for (double& v : n.value.data) v *= c;
    return push(std::move(n));
}

NodeId Graph::relu(NodeId a) {
    Node n;
    n.op = OpKind::Relu;
    n.inputs = {a};
    n.value = node(a).value;
    for (double& v : n.value.data) v = std::max(0.0, v);
    return push(std::move(n));
}

NodeId Graph::log(NodeId a) {
    Node n;
    n.op = OpKind::Log;
    n.inputs = {a};
    n.value = node(a).value;
    for (double& v : n.value.data) v = std::log(std::max(v, kLogClamp));
    return push(std::move(n));
}

NodeId Graph::exp(NodeId a) {
    Node n;
    n.op = OpKind::Exp;
    n.inputs = {a};
    n.value = node(a).value;
    for (double& v : n.value.data) v = std::exp(v);
    return push(std::move(n));
}

NodeId Graph::square(NodeId a) {
    Node n;
    n.op = OpKind::Square;
    n.inputs = {a};
    n.value = node(a).value;
    for (double& v : n.value.data) v *= v;
    return push(std::move(n));
}

NodeId Graph::sum(NodeId a) {
    Node n;
    n.op = OpKind::Sum;
    n.inputs = {a};
    double acc = 0.0;
    for (double v : node(a).value.data) acc += v;
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

NodeId Graph::mean(NodeId a) {
    const Tensor& ta = node(a).value;
    if (ta.numel() == 0) throw InvalidArgument("mean of empty tensor");
    Node n;
    n.op = OpKind::Mean;
    n.inputs = {a};
    double acc = 0.0;
    for (double v : ta.data) acc += v;
    n.value = Tensor::scalar(acc / static_cast<double>(ta.numel()));
    return push(std::move(n));
}

NodeId Graph::slice_rows(NodeId a, std::size_t r0, std::size_t r1) {
    const Tensor& ta = node(a).value;
    if (ta.rank() != 2 || r0 > r1 || r1 > ta.rows())
        throw InvalidArgument("slice_rows: [" + std::to_string(r0) + ", " +
                              std::to_string(r1) + ") out of " + shape_str(ta));
    Node n;
    n.op = OpKind::SliceRows;
    n.inputs = {a};
    n.r0 = r0;
    n.r1 = r1;
    const std::size_t c = ta.cols();
    n.value = Tensor({r1 - r0, c},
                     std::vector<double>(ta.data.begin() + r0 * c,
                                         ta.data.begin() + r1 * c));
    return push(std::move(n));
}

NodeId Graph::slice_cols(NodeId a, std::size_t c0, std::size_t c1) {
    const Tensor& ta = node(a).value;
    if (ta.rank() != 2 || c0 > c1 || c1 > ta.cols())
        throw InvalidArgument("slice_cols: [" + std::to_string(c0) + ", " +
                              std::to_string(c1) + ") out of " + shape_str(ta));
    Node n;
    n.op = OpKind::SliceCols;
    n.inputs = {a};
    n.r0 = c0;
    n.r1 = c1;
    n.value = Tensor::zeros({ta.rows(), c1 - c0});
    for (std::size_t r = 0; r < ta.rows(); ++r)
        std::copy(ta.data.begin() + r * ta.cols() + c0,
                  ta.data.begin() + r * ta.cols() + c1,
                  n.value.data.begin() + r * (c1 - c0));
    return push(std::move(n));
}

NodeId Graph::concat(const std::vector<NodeId>& parts, int axis) {
    if (parts.empty()) throw InvalidArgument("concat of zero tensors");
    if (axis != 0 && axis != 1)
        throw InvalidArgument("concat axis must be 0 or 1, got " +
                              std::to_string(axis));
    const Tensor& first = node(parts[0]).value;
    if (first.rank() != 2) throw InvalidArgument("concat expects rank-2 tensors");
    std::size_t rows = first.rows(), cols = first.cols();
    for (std::size_t i = 1; i < parts.size(); ++i) {
        const Tensor& t = node(parts[i]).value;
        if (t.rank() != 2 ||
            (axis == 0 ? t.cols() != cols : t.rows() != rows))
            throw InvalidArgument("concat: shape mismatch " + shape_str(first) +
                                  " vs " + shape_str(t));
        if (axis == 0)
            rows += t.rows();
        else
            cols += t.cols();
    }
    Node n;
    n.op = OpKind::Concat;
    n.inputs = parts;
    n.axis = axis;
    n.value = Tensor::zeros({rows, cols});
    if (axis == 0) {
        std::size_t r = 0;
        for (NodeId id : parts) {
            const Tensor& t = node(id).value;
            std::copy(t.data.begin(), t.data.end(),
                      n.value.data.begin() + r * cols);
            r += t.rows();
        }
    } else {
        std::size_t c0 = 0;
        for (NodeId id : parts) {
            const Tensor& t = node(id).value;
            for (std::size_t r = 0; r < rows; ++r)
                std::copy(t.data.begin() + r * t.cols(),
                          t.data.begin() + (r + 1) * t.cols(),
                          n.value.data.begin() + r * cols + c0);
            c0 += t.cols();
        }
    }
    return push(std::move(n));
}

NodeId Graph::log_softmax(NodeId a) {
    const Tensor& ta = node(a).value;
    if (ta.rank() != 2)
        throw InvalidArgument("log_softmax expects a matrix, got " + shape_str(ta));
    Node n;
    n.op = OpKind::LogSoftmax;
    n.inputs = {a};
    n.value = ta;
    const std::size_t cols = ta.cols();
    for (std::size_t r = 0; r < ta.rows(); ++r) {
        double* row = n.value.data.data() + r * cols;
        double m = row[0];
        for (std::size_t c = 1; c < cols; ++c) m = std::max(m, row[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += std::exp(row[c] - m);
        const double lse = m + std::log(std::max(z, kLogClamp));
        for (std::size_t c = 0; c < cols; ++c) row[c] -= lse;
    }
    return push(std::move(n));
}

NodeId Graph::custom_grad(const std::vector<NodeId>& inputs, Tensor value,
                          std::vector<Tensor> input_grads) {
    if (!value.is_scalar())
        throw InvalidArgument("custom_grad produces scalars, got " +
                              shape_str(value));
    if (inputs.size() != input_grads.size())
        throw InvalidArgument("custom_grad: " + std::to_string(inputs.size()) +
                              " inputs vs " + std::to_string(input_grads.size()) +
                              " gradients");
    for (std::size_t i = 0; i < inputs.size(); ++i)
        require_same_shape(node(inputs[i]).value, input_grads[i], "custom_grad");
    Node n;
    n.op = OpKind::CustomGrad;
    n.inputs = inputs;
    n.value = std::move(value);
    n.custom_grads = std::move(input_grads);
    return push(std::move(n));
}

const Tensor& Graph::value(NodeId id) const { return node(id).value; }

const Tensor& Graph::gradient(NodeId id) const {
    const Node& n = node(id);
    if (!backward_done_ || n.grad.data.empty())
        throw InvalidArgument("gradient requested before backward");
    return n.grad;
}

void Graph::backward(NodeId loss) {
    const Node& ln = node(loss);
    if (!ln.value.is_scalar())
        throw InvalidArgument("backward: loss must be scalar, got " +
                              shape_str(ln.value));
    for (Node& n : nodes_) n.grad = Tensor::zeros(n.value.shape);
    nodes_[loss].grad.data[0] = 1.0;

    for (NodeId id = loss; id >= 0; --id) {
        Node& n = nodes_[id];
        const Tensor& g = n.grad;
        switch (n.op) {
            case OpKind::Leaf:
                break;
            case OpKind::MatMul: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                const Tensor& b = nodes_[n.inputs[1]].value;
                Tensor& ga = nodes_[n.inputs[0]].grad;
                Tensor& gb = nodes_[n.inputs[1]].grad;
                gemm_nt_acc(a.rows(), a.cols(), b.cols(), g.data.data(),
                                    b.data.data(), ga.data.data());
                gemm_tn_acc(a.cols(), b.cols(), a.rows(), a.data.data(),
                                    g.data.data(), gb.data.data());
                break;
            }
            case OpKind::FixedMatMul: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                Tensor& ga = nodes_[n.inputs[0]].grad;
                gemm_nt_acc(a.rows(), a.cols(), n.fixed->cols(),
                                    g.data.data(), n.fixed->data.data(),
                                    ga.data.data());
                break;
            }
            case OpKind::Add: {
                for (NodeId in : n.inputs) {
                    Tensor& gi = nodes_[in].grad;
                    for (std::size_t i = 0; i < g.data.size(); ++i)
                        gi.data[i] += g.data[i];
                }
                break;
            }
            case OpKind::BiasAdd: {
                Tensor& ga = nodes_[n.inputs[0]].grad;
                Tensor& gb = nodes_[n.inputs[1]].grad;
                const std::size_t cols = n.value.cols();
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    ga.data[i] += g.data[i];
                    gb.data[i % cols] += g.data[i];
                }
                break;
            }
            case OpKind::Mul: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                const Tensor& b = nodes_[n.inputs[1]].value;
                Tensor& ga = nodes_[n.inputs[0]].grad;
                Tensor& gb = nodes_[n.inputs[1]].grad;
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    ga.data[i] += g.data[i] * b.data[i];
                    gb.data[i] += g.data[i] * a.data[i];
                }
                break;
            }
            case OpKind::Scale: {
                Tensor& ga = nodes_[n.inputs[0]].grad;
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    ga.data[i] += g.data[i] * n.scalar;
                break;
            }
            case OpKind::Relu: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                Tensor& ga = nodes_[n.inputs[0]].grad;
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    if (a.data[i] > 0.0) ga.data[i] += g.data[i];
                break;
            }
            case OpKind::Log: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                Tensor& ga = nodes_[n.inputs[0]].grad;
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    if (a.data[i] > kLogClamp) ga.data[i] += g.data[i] / a.data[i];
                break;
            }
            case OpKind::Exp: {
                Tensor& ga = nodes_[n.inputs[0]].grad;
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    ga.data[i] += g.data[i] * n.value.data[i];
                break;
            }
            case OpKind::Square: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                Tensor& ga = nodes_[n.inputs[0]].grad;
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    ga.data[i] += 2.0 * g.data[i] * a.data[i];
                break;
            }
            case OpKind::Sum: {
                Tensor& ga = nodes_[n.inputs[0]].grad;
                for (double& v : ga.data) v += g.data[0];
                break;
            }
            case OpKind::Mean: {
                Tensor& ga = nodes_[n.inputs[0]].grad;
                const double s = g.data[0] / static_cast<double>(ga.numel());
                for (double& v : ga.data) v += s;
                break;
            }
            case OpKind::SliceRows: {
                Tensor& ga = nodes_[n.inputs[0]].grad;
                const std::size_t cols = ga.cols();
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    ga.data[n.r0 * cols + i] += g.data[i];
                break;
            }
            case OpKind::SliceCols: {
                Tensor& ga = nodes_[n.inputs[0]].grad;
                const std::size_t cols = ga.cols();
                const std::size_t w = n.value.cols();
                for (std::size_t r = 0; r < n.value.rows(); ++r)
                    for (std::size_t c = 0; c < w; ++c)
                        ga.data[r * cols + n.r0 + c] += g.data[r * w + c];
                break;
            }
            case OpKind::Concat: {
                const std::size_t cols = n.value.cols();
                if (n.axis == 0) {
                    std::size_t r = 0;
                    for (NodeId in : n.inputs) {
                        Tensor& gi = nodes_[in].grad;
                        for (std::size_t i = 0; i < gi.data.size(); ++i)
                            gi.data[i] += g.data[r * cols + i];
                        r += gi.rows();
                    }
                } else {
                    std::size_t c0 = 0;
                    for (NodeId in : n.inputs) {
                        Tensor& gi = nodes_[in].grad;
                        const std::size_t w = gi.cols();
                        for (std::size_t r = 0; r < gi.rows(); ++r)
                            for (std::size_t c = 0; c < w; ++c)
                                gi.data[r * w + c] += g.data[r * cols + c0 + c];
                        c0 += w;
                    }
                }
                break;
            }
            case OpKind::LogSoftmax: {
                Tensor& ga = nodes_[n.inputs[0]].grad;
                const std::size_t cols = n.value.cols();
                for (std::size_t r = 0; r < n.value.rows(); ++r) {
                    const double* grow = g.data.data() + r * cols;
                    const double* vrow = n.value.data.data() + r * cols;
                    double gsum = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) gsum += grow[c];
                    double* garow = ga.data.data() + r * cols;
                    for (std::size_t c = 0; c < cols; ++c)
                        garow[c] += grow[c] - std::exp(vrow[c]) * gsum;
                }
                break;
            }
            case OpKind::CustomGrad: {
                const double s = g.data[0];
                for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                    Tensor& gi = nodes_[n.inputs[i]].grad;
                    const Tensor& ci = n.custom_grads[i];
                    for (std::size_t j = 0; j < gi.data.size(); ++j)
                        gi.data[j] += s * ci.data[j];
                }
                break;
            }
        }
    }
    backward_done_ = true;
}

double grad_check(const std::function<NodeId(Graph&, NodeId)>& build,
                  const Tensor& point, double eps) {
    Graph g;
    const NodeId x = g.leaf(point);
    const NodeId loss = build(g, x);
    g.backward(loss);
    const Tensor analytic = g.gradient(x);

    auto eval = [&](const Tensor& p) {
        Graph h;
        const NodeId xi = h.leaf(p);
        const NodeId l = build(h, xi);
        return h.value(l).data[0];
    };

    double worst = 0.0;
    Tensor p = point;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
        const double saved = p.data[i];
        p.data[i] = saved + eps;
        const double up = eval(p);
        p.data[i] = saved - eps;
        const double dn = eval(p);
        p.data[i] = saved;
        const double fd = (up - dn) / (2.0 * eps);
        const double a = analytic.data[i];
        worst = std::max(worst, std::abs(a - fd) / std::max(1.0, std::abs(a)));
    }
    return worst;
}

namespace {

constexpr char kMagic[4] = {'C', 'G', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff),
                 static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

uint32_t take_u32(std::istream& is, const char* field) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(std::string("cgpt: truncated ") + field);
    return b[0] | (b[1] << 8) | (b[2] << 16) | (uint32_t(b[3]) << 24);
}

}  // namespace

Tensor& ParameterSet::add(const std::string& name, Tensor init, bool trainable) {
    if (contains(name)) throw InvalidArgument("duplicate parameter name " + name);
    params_.push_back({name, std::move(init), trainable});
    return params_.back().value;
}

Tensor& ParameterSet::at(const std::string& name) {
    for (Parameter& p : params_)
        if (p.name == name) return p.value;
    throw InvalidArgument("no parameter named " + name);
}

const Tensor& ParameterSet::at(const std::string& name) const {
    for (const Parameter& p : params_)
        if (p.name == name) return p.value;
    throw InvalidArgument("no parameter named " + name);
}

bool ParameterSet::contains(const std::string& name) const {
    for (const Parameter& p : params_)
        if (p.name == name) return true;
    return false;
}

void ParameterSet::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cgpt: cannot open " + path + " for writing");
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<uint32_t>(params_.size()));
    for (const Parameter& p : params_) {
        put_u32(os, static_cast<uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put_u32(os, static_cast<uint32_t>(p.value.rank()));
        for (std::size_t d : p.value.shape) put_u32(os, static_cast<uint32_t>(d));
        os.write(reinterpret_cast<const char*>(p.value.data.data()),
                 static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
    }
    if (!os) throw FormatError("cgpt: short write to " + path);
}

ParameterSet ParameterSet::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cgpt: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("cgpt: magic mismatch in " + path);
    const uint32_t version = take_u32(is, "version");
    if (version != kVersion)
        throw FormatError("cgpt: version=" + std::to_string(version) +
                          " (want " + std::to_string(kVersion) + ")");
    const uint32_t count = take_u32(is, "count");
    ParameterSet ps;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = take_u32(is, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len))
            throw FormatError("cgpt: truncated name");
        const uint32_t rank = take_u32(is, "rank");
        std::vector<std::size_t> shape(rank);
        std::size_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = take_u32(is, "dim");
            numel *= shape[d];
        }
        std::vector<double> data(numel);
        if (!is.read(reinterpret_cast<char*>(data.data()),
                     static_cast<std::streamsize>(numel * sizeof(double))))
            throw FormatError("cgpt: truncated tensor data for " + name);
        ps.add(name, Tensor(std::move(shape), std::move(data)));
    }
    return ps;
}

}  // namespace rvqlab::autodiff
