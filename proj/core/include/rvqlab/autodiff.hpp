#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace rvqlab::autodiff {

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor scalar(double v);
    static Tensor matrix(std::size_t rows, std::size_t cols,
                         std::vector<double> d);
    static Tensor vector(std::vector<double> d);

    std::size_t numel() const;
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const;
    std::size_t cols() const;
    bool is_scalar() const { return numel() == 1; }
    double& operator()(std::size_t r, std::size_t c);
    double operator()(std::size_t r, std::size_t c) const;
};

std::string shape_str(const Tensor& t);

using NodeId = int;

enum class OpKind {
    Leaf,
    MatMul,
    FixedMatMul,
    Add,
    BiasAdd,
    Mul,
    Scale,
    Relu,
    Log,
    Exp,
    Square,
    Sum,
    Mean,
    SliceRows,
    SliceCols,
    Concat,
    LogSoftmax,
    CustomGrad,
};

struct Node {
    OpKind op = OpKind::Leaf;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;
    std::shared_ptr<const Tensor> fixed;  // FixedMatMul right-hand side
    double scalar = 0.0;                  // Scale factor
    std::size_t r0 = 0, r1 = 0;           // SliceRows / SliceCols range
    int axis = 0;                         // Concat axis (0 rows, 1 cols)
    std::vector<Tensor> custom_grads;     // CustomGrad: d(value)/d(input_i)
};

// Define-by-run tape. Build a fresh graph per forward pass; backward fills
// adjoints for every node in one deterministic reverse sweep.
class Graph {
public:
    NodeId leaf(Tensor t);
    NodeId matmul(NodeId a, NodeId b);
    // a (m x k) times a fixed matrix (k x n) that is not part of the graph;
    // backward is a plain multiply by its transpose.
    NodeId fixed_matmul(NodeId a, std::shared_ptr<const Tensor> m);
    NodeId add(NodeId a, NodeId b);
    // bias (length n) broadcast over the rows of a (m x n)
    NodeId bias_add(NodeId a, NodeId bias);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double c);
    NodeId relu(NodeId a);
    NodeId log(NodeId a);  // clamps inputs below 1e-12
    NodeId exp(NodeId a);
    NodeId square(NodeId a);
    NodeId sum(NodeId a);
    NodeId mean(NodeId a);
    NodeId slice_rows(NodeId a, std::size_t r0, std::size_t r1);
    NodeId slice_cols(NodeId a, std::size_t c0, std::size_t c1);
    NodeId concat(const std::vector<NodeId>& parts, int axis);
    NodeId log_softmax(NodeId a);  // per row
    // Scalar-valued node whose input gradients were computed by the caller
    // during the forward pass (one tensor per input, matching shapes).
    NodeId custom_grad(const std::vector<NodeId>& inputs, Tensor value,
                       std::vector<Tensor> input_grads);

    const Tensor& value(NodeId id) const;
    const Tensor& gradient(NodeId id) const;
    void backward(NodeId loss);
    std::size_t size() const { return nodes_.size(); }

private:
    NodeId push(Node n);
    const Node& node(NodeId id) const;
    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for the scalar function built by `build` at `point`.
double grad_check(const std::function<NodeId(Graph&, NodeId)>& build,
                  const Tensor& point, double eps = 1e-5);

struct Parameter {
    std::string name;
    Tensor value;
    bool trainable = true;
};

class ParameterSet {
public:
    Tensor& add(const std::string& name, Tensor init, bool trainable = true);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const;
    std::vector<Parameter>& items() { return params_; }
    const std::vector<Parameter>& items() const { return params_; }
    std::size_t size() const { return params_.size(); }

    void save(const std::string& path) const;
    static ParameterSet load(const std::string& path);

private:
    std::vector<Parameter> params_;
};

}  // namespace rvqlab::autodiff
