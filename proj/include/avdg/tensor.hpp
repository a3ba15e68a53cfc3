#pragma once

// Dense row-major float64 tensors and a define-by-run tape for reverse-mode
// differentiation.
//
// Shape rules (rank-1 tensors of extent n behave as a [1, n] row):
//   matmul        [m,k] x [k,n] -> [m,n]
//   add/sub/mul   a [m,n] with b of shape [m,n], [1,n] (row broadcast),
//                 [m,1] (column broadcast) or a single element -> [m,n]
//   scale         any -> same, multiplied by attrs.scalar
//   row_softmax   softmax along the last axis; rows sum to 1
//   log           log(max(x, 1e-12)), elementwise
//   exp, relu, sigmoid, tanh   elementwise
//   gather_rows   [m,n] with attrs.indices (each < m) -> [k,n]
//   concat        rank-2 inputs along attrs.axis (0 or 1)
//   additive_mask x + attrs.mask (same shape, not differentiated)
//   layer_norm    x [m,n], gamma [n] or [1,n], beta [n] or [1,n]; per row
//   mean, sum     full reduction -> scalar (shape {})
//   transpose     [m,n] -> [n,m]

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace avdg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
public:
    // Scalar zero.
    Tensor();
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value);
    static Tensor row(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    // Matrix view: scalars are [1,1], rank-1 tensors are [1,n].
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& storage() { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double item() const;

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

    std::optional<std::vector<double>> grad;
    int node_id = -1;

private:
    Shape shape_;
    std::vector<double> data_;
};

enum class OpKind : std::uint8_t {
    Leaf,
    MatMul,
    Add,
    Multiply,
    Subtract,
    Scale,
    RowSoftmax,
    Log,
    Exp,
    GatherRows,
    Concat,
    AdditiveMask,
    LayerNorm,
    Relu,
    Mean,
    Sum,
    Transpose,
    Sigmoid,
    Tanh,
};

std::string_view op_kind_name(OpKind kind);
// Throws ConfigError for names outside the catalog.
OpKind op_kind_from_name(std::string_view name);

struct OpAttrs {
    double scalar = 1.0;
    std::size_t axis = 0;
    std::vector<std::size_t> indices;
    std::shared_ptr<const Tensor> mask;
    double eps = 1e-5;
};

using NodeId = std::size_t;

inline constexpr double kLogClamp = 1e-12;

class Tape;

// Per-node gradients produced by Tape::backward. Nodes that do not require
// gradients, or were unreachable from the loss, read as zeros.
class Gradients {
public:
    Gradients() = default;
    Gradients(const Tape* tape, std::vector<std::vector<double>> grads)
        : tape_(tape), grads_(std::move(grads)) {}

    // Gradient of node `id`, zero-filled when the node was not reached.
    std::vector<double> operator[](NodeId id) const;
    Tensor tensor(NodeId id) const;
    // Empty when the node was not reached.
    std::span<const double> view(NodeId id) const {
        return id < grads_.size() ? std::span<const double>(grads_[id]) : std::span<const double>();
    }
    bool reached(NodeId id) const { return id < grads_.size() && !grads_[id].empty(); }

private:
    const Tape* tape_ = nullptr;
    std::vector<std::vector<double>> grads_;
};

class Tape {
public:
    Tape() { nodes_.reserve(256); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    NodeId leaf(Tensor value, bool requires_grad = true);
    // Borrowed leaf: `value` must outlive the tape and stay unmodified.
    NodeId borrow(const Tensor& value, bool requires_grad = true);
    NodeId constant(Tensor value) { return leaf(std::move(value), false); }

    NodeId apply(OpKind kind, std::span<const NodeId> inputs, const OpAttrs& attrs = {});

    const Tensor& value(NodeId id) const;
    bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
    OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
    std::span<const NodeId> inputs(NodeId id) const { return nodes_.at(id).inputs; }
    std::size_t size() const { return nodes_.size(); }
    // Drops every node with id >= n. Handles to dropped nodes become invalid.
    void truncate(std::size_t n) {
        if (n < nodes_.size()) nodes_.erase(nodes_.begin() + static_cast<std::ptrdiff_t>(n), nodes_.end());
    }

    Gradients backward(NodeId loss) const;

private:
    struct Node {
        OpKind kind = OpKind::Leaf;
        std::vector<NodeId> inputs;
        Tensor value;
        const Tensor* borrowed = nullptr;
        bool requires_grad = false;
        OpAttrs attrs;
        std::vector<double> saved;
    };

    const Tensor& val(const Node& n) const { return n.borrowed ? *n.borrowed : n.value; }
    void backward_node(const Node& node, std::span<const double> gout,
                       std::vector<std::vector<double>>& grads) const;

    std::vector<Node> nodes_;
};

// Handle to a node on a tape, for writing expressions.
struct Var {
    Tape* tape = nullptr;
    NodeId id = 0;

    const Tensor& value() const { return tape->value(id); }
    const Shape& shape() const { return value().shape(); }
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var row_softmax(Var a);
Var log(Var a);
Var exp(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var gather_rows(Var a, std::vector<std::size_t> indices);
Var concat(std::span<const Var> parts, std::size_t axis);
Var additive_mask(Var a, std::shared_ptr<const Tensor> mask);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var mean(Var a);
Var sum(Var a);
Var transpose(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace avdg
