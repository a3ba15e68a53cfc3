#include "avdg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "avdg/errors.hpp"

namespace avdg {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_shape(const Shape& shape) {
    for (std::size_t d : shape) {
        if (d == 0) throw ContractViolation("tensor extents must be positive, got " + shape_str(shape));
    }
}

}  // namespace

Tensor::Tensor() : data_(1, 0.0) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_numel(shape_) != data_.size()) {
        throw ContractViolation("shape " + shape_str(shape_) + " needs " +
                                std::to_string(shape_numel(shape_)) + " elements, got " +
                                std::to_string(data_.size()));
    }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{1, n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
    if (shape_.size() < 2) return 1;
    return shape_numel(shape_) / shape_.back();
}

std::size_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

double Tensor::item() const {
    if (data_.size() != 1) throw ContractViolation("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

std::string_view op_kind_name(OpKind kind) {
    switch (kind) {
        case OpKind::Leaf: return "leaf";
        case OpKind::MatMul: return "matmul";
        case OpKind::Add: return "add";
        case OpKind::Multiply: return "multiply";
        case OpKind::Subtract: return "subtract";
        case OpKind::Scale: return "scale";
        case OpKind::RowSoftmax: return "row_softmax";
        case OpKind::Log: return "log";
        case OpKind::Exp: return "exp";
        case OpKind::GatherRows: return "gather_rows";
        case OpKind::Concat: return "concat";
        case OpKind::AdditiveMask: return "additive_mask";
        case OpKind::LayerNorm: return "layer_norm";
        case OpKind::Relu: return "relu";
        case OpKind::Mean: return "mean";
        case OpKind::Sum: return "sum";
        case OpKind::Transpose: return "transpose";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Tanh: return "tanh";
    }
    return "unknown";
}

OpKind op_kind_from_name(std::string_view name) {
    for (int k = static_cast<int>(OpKind::MatMul); k <= static_cast<int>(OpKind::Tanh); ++k) {
        const auto kind = static_cast<OpKind>(k);
        if (op_kind_name(kind) == name) return kind;
    }
    throw ConfigError("unknown op kind '" + std::string(name) + "'");
}

namespace {

enum class Broadcast { Same, Row, Col, Scalar };

Broadcast broadcast_mode(const Tensor& a, const Tensor& b, OpKind kind) {
    if (a.shape() == b.shape()) return Broadcast::Same;
    if (b.numel() == 1) return Broadcast::Scalar;
    if (a.rank() <= 2 && b.rank() <= 2) {
        if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
        if (b.rank() == 2 && b.cols() == 1 && b.rows() == a.rows()) return Broadcast::Col;
    }
    throw ContractViolation(std::string(op_kind_name(kind)) + ": shape mismatch " +
                            shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Index into b for element (r, c) of a under the broadcast mode.
inline std::size_t bidx(Broadcast mode, std::size_t r, std::size_t c, std::size_t n) {
    switch (mode) {
        case Broadcast::Same: return r * n + c;
        case Broadcast::Row: return c;
        case Broadcast::Col: return r;
        case Broadcast::Scalar: return 0;
    }
    return 0;
}

// C[m,n] += A[m,k] B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[m,n] += A[m,k] B[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            c[i * n + j] += s;
        }
    }
}

// C[m,n] += A[k,m]^T B[k,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t k, std::size_t m, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = ap[i];
            double* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void require_arity(OpKind kind, std::size_t got, std::size_t want) {
    if (got != want) {
        throw ContractViolation(std::string(op_kind_name(kind)) + " takes " + std::to_string(want) +
                                " inputs, got " + std::to_string(got));
    }
}

void require_matrix(OpKind kind, const Tensor& t) {
    if (t.rank() > 2 || t.rank() == 0) {
        throw ContractViolation(std::string(op_kind_name(kind)) + ": expected a matrix, got shape " +
                                shape_str(t.shape()));
    }
}

inline double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

NodeId Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    const NodeId id = nodes_.size() - 1;
    nodes_.back().value.node_id = static_cast<int>(id);
    return id;
}

NodeId Tape::borrow(const Tensor& value, bool requires_grad) {
    Node n;
    n.borrowed = &value;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

const Tensor& Tape::value(NodeId id) const { return val(nodes_.at(id)); }

NodeId Tape::apply(OpKind kind, std::span<const NodeId> inputs, const OpAttrs& attrs) {
    for (NodeId in : inputs) {
        if (in >= nodes_.size()) throw ContractViolation("input node id out of range");
    }
    Node node;
    node.kind = kind;
    node.inputs.assign(inputs.begin(), inputs.end());
    node.attrs = attrs;
    for (NodeId in : inputs) node.requires_grad = node.requires_grad || nodes_[in].requires_grad;

    auto in = [&](std::size_t i) -> const Tensor& { return val(nodes_[inputs[i]]); };

    switch (kind) {
        case OpKind::Leaf:
            throw ConfigError("leaf is not an applicable op kind");
        case OpKind::MatMul: {
            require_arity(kind, inputs.size(), 2);
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            require_matrix(kind, a);
            require_matrix(kind, b);
            if (a.cols() != b.rows()) {
                throw ContractViolation("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                        shape_str(b.shape()));
            }
            Tensor out(Shape{a.rows(), b.cols()});
            gemm_nn(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(), b.cols());
            node.value = std::move(out);
            break;
        }
        case OpKind::Add:
        case OpKind::Subtract:
        case OpKind::Multiply: {
            require_arity(kind, inputs.size(), 2);
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            const Broadcast mode = broadcast_mode(a, b, kind);
            Tensor out(a.shape());
            const std::size_t m = a.rows(), n = a.cols();
            auto o = out.data();
            auto ad = a.data();
            auto bd = b.data();
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t c = 0; c < n; ++c) {
                    const std::size_t i = r * n + c;
                    const double bv = bd[bidx(mode, r, c, n)];
                    if (kind == OpKind::Add) o[i] = ad[i] + bv;
                    else if (kind == OpKind::Subtract) o[i] = ad[i] - bv;
                    else o[i] = ad[i] * bv;
                }
            }
            node.value = std::move(out);
            break;
        }
        case OpKind::Scale: {
            require_arity(kind, inputs.size(), 1);
            Tensor out = in(0);
            out.node_id = -1;
            for (double& v : out.data()) v *= attrs.scalar;
            node.value = std::move(out);
            break;
        }
        case OpKind::RowSoftmax: {
            require_arity(kind, inputs.size(), 1);
            Tensor out = in(0);
            out.node_id = -1;
            const std::size_t m = out.rows(), n = out.cols();
            auto o = out.data();
            for (std::size_t r = 0; r < m; ++r) {
                double* row = o.data() + r * n;
                const double mx = *std::max_element(row, row + n);
                double s = 0.0;
                for (std::size_t c = 0; c < n; ++c) {
                    row[c] = std::exp(row[c] - mx);
                    s += row[c];
                }
                for (std::size_t c = 0; c < n; ++c) row[c] /= s;
            }
            node.value = std::move(out);
            break;
        }
        case OpKind::Log:
        case OpKind::Exp:
        case OpKind::Relu:
        case OpKind::Sigmoid:
        case OpKind::Tanh: {
            require_arity(kind, inputs.size(), 1);
            Tensor out = in(0);
            out.node_id = -1;
            for (double& v : out.data()) {
                switch (kind) {
                    case OpKind::Log: v = std::log(std::max(v, kLogClamp)); break;
                    case OpKind::Exp: v = std::exp(v); break;
                    case OpKind::Relu: v = v > 0.0 ? v : 0.0; break;
                    case OpKind::Sigmoid: v = sigmoid_scalar(v); break;
                    default: v = std::tanh(v); break;
                }
            }
            node.value = std::move(out);
            break;
        }
        case OpKind::GatherRows: {
            require_arity(kind, inputs.size(), 1);
            const Tensor& a = in(0);
            require_matrix(kind, a);
            if (attrs.indices.empty()) throw ContractViolation("gather_rows: no indices");
            const std::size_t m = a.rows(), n = a.cols();
            Tensor out(Shape{attrs.indices.size(), n});
            for (std::size_t i = 0; i < attrs.indices.size(); ++i) {
                const std::size_t r = attrs.indices[i];
                if (r >= m) {
                    throw ContractViolation("gather_rows: index " + std::to_string(r) +
                                            " out of range for shape " + shape_str(a.shape()));
                }
                std::copy_n(a.data().data() + r * n, n, out.data().data() + i * n);
            }
            node.value = std::move(out);
            break;
        }
        case OpKind::Concat: {
            if (inputs.empty()) throw ContractViolation("concat: no inputs");
            if (attrs.axis > 1) {
                throw ContractViolation("concat: axis " + std::to_string(attrs.axis) + " >= rank 2");
            }
            std::size_t rows = 0, cols = 0;
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                const Tensor& t = in(i);
                require_matrix(kind, t);
                if (attrs.axis == 0) {
                    if (i && t.cols() != cols) {
                        throw ContractViolation("concat: shape mismatch " + shape_str(in(0).shape()) +
                                                " vs " + shape_str(t.shape()));
                    }
                    cols = t.cols();
                    rows += t.rows();
                } else {
                    if (i && t.rows() != rows) {
                        throw ContractViolation("concat: shape mismatch " + shape_str(in(0).shape()) +
                                                " vs " + shape_str(t.shape()));
                    }
                    rows = t.rows();
                    cols += t.cols();
                }
            }
            Tensor out(Shape{rows, cols});
            auto o = out.data();
            if (attrs.axis == 0) {
                std::size_t off = 0;
                for (std::size_t i = 0; i < inputs.size(); ++i) {
                    std::copy(in(i).data().begin(), in(i).data().end(), o.begin() + off);
                    off += in(i).numel();
                }
            } else {
                std::size_t coff = 0;
                for (std::size_t i = 0; i < inputs.size(); ++i) {
                    const Tensor& t = in(i);
                    for (std::size_t r = 0; r < rows; ++r) {
                        std::copy_n(t.data().data() + r * t.cols(), t.cols(), o.data() + r * cols + coff);
                    }
                    coff += t.cols();
                }
            }
            node.value = std::move(out);
            break;
        }
        case OpKind::AdditiveMask: {
            require_arity(kind, inputs.size(), 1);
            if (!attrs.mask) throw ContractViolation("additive_mask: missing mask");
            const Tensor& a = in(0);
            if (attrs.mask->shape() != a.shape()) {
                throw ContractViolation("additive_mask: shape mismatch " + shape_str(a.shape()) + " vs " +
                                        shape_str(attrs.mask->shape()));
            }
            Tensor out = a;
            out.node_id = -1;
            auto md = attrs.mask->data();
            auto o = out.data();
            for (std::size_t i = 0; i < o.size(); ++i) o[i] += md[i];
            node.value = std::move(out);
            break;
        }
        case OpKind::LayerNorm: {
            require_arity(kind, inputs.size(), 3);
            const Tensor& x = in(0);
            const Tensor& g = in(1);
            const Tensor& b = in(2);
            require_matrix(kind, x);
            const std::size_t m = x.rows(), n = x.cols();
            if (g.numel() != n || b.numel() != n) {
                throw ContractViolation("layer_norm: shape mismatch " + shape_str(x.shape()) + " vs " +
                                        shape_str(g.shape()) + "/" + shape_str(b.shape()));
            }
            Tensor out(x.shape());
            std::vector<double> saved(m * n + m);
            auto xd = x.data();
            auto o = out.data();
            for (std::size_t r = 0; r < m; ++r) {
                const double* xr = xd.data() + r * n;
                double mu = 0.0;
                for (std::size_t c = 0; c < n; ++c) mu += xr[c];
                mu /= static_cast<double>(n);
                double var = 0.0;
                for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mu) * (xr[c] - mu);
                var /= static_cast<double>(n);
                const double inv = 1.0 / std::sqrt(var + attrs.eps);
                saved[m * n + r] = inv;
                for (std::size_t c = 0; c < n; ++c) {
                    const double xh = (xr[c] - mu) * inv;
                    saved[r * n + c] = xh;
                    o[r * n + c] = xh * g[c] + b[c];
                }
            }
            node.value = std::move(out);
            if (node.requires_grad) node.saved = std::move(saved);
            break;
        }
        case OpKind::Mean:
        case OpKind::Sum: {
            require_arity(kind, inputs.size(), 1);
            const Tensor& a = in(0);
            double s = 0.0;
            for (double v : a.data()) s += v;
            if (kind == OpKind::Mean) s /= static_cast<double>(a.numel());
            node.value = Tensor::scalar(s);
            break;
        }
        case OpKind::Transpose: {
            require_arity(kind, inputs.size(), 1);
            const Tensor& a = in(0);
            require_matrix(kind, a);
            const std::size_t m = a.rows(), n = a.cols();
            Tensor out(Shape{n, m});
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c) out.data()[c * m + r] = a.data()[r * n + c];
            node.value = std::move(out);
            break;
        }
        default:
            throw ConfigError("unknown op kind");
    }

    nodes_.push_back(std::move(node));
    const NodeId id = nodes_.size() - 1;
    nodes_.back().value.node_id = static_cast<int>(id);
    return id;
}

namespace {

std::vector<double>& slot(std::vector<std::vector<double>>& grads, NodeId id, std::size_t n) {
    auto& g = grads[id];
    if (g.empty()) g.assign(n, 0.0);
    return g;
}

}  // namespace

void Tape::backward_node(const Node& node, std::span<const double> gout,
                         std::vector<std::vector<double>>& grads) const {
    const auto& ins = node.inputs;
    auto needs = [&](std::size_t i) { return nodes_[ins[i]].requires_grad; };
    auto in = [&](std::size_t i) -> const Tensor& { return val(nodes_[ins[i]]); };
    auto gin = [&](std::size_t i) -> std::vector<double>& { return slot(grads, ins[i], in(i).numel()); };
    const Tensor& out = val(node);

    switch (node.kind) {
        case OpKind::Leaf:
            return;
        case OpKind::MatMul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
            if (needs(0)) gemm_nt(gout.data(), b.data().data(), gin(0).data(), m, n, k);
            if (needs(1)) gemm_tn(a.data().data(), gout.data(), gin(1).data(), m, k, n);
            return;
        }
        case OpKind::Add:
        case OpKind::Subtract:
        case OpKind::Multiply: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            const Broadcast mode = broadcast_mode(a, b, node.kind);
            const std::size_t m = a.rows(), n = a.cols();
            if (needs(0)) {
                auto& ga = gin(0);
                for (std::size_t r = 0; r < m; ++r) {
                    for (std::size_t c = 0; c < n; ++c) {
                        const std::size_t i = r * n + c;
                        ga[i] += node.kind == OpKind::Multiply ? gout[i] * b[bidx(mode, r, c, n)] : gout[i];
                    }
                }
            }
            if (needs(1)) {
                auto& gb = gin(1);
                for (std::size_t r = 0; r < m; ++r) {
                    for (std::size_t c = 0; c < n; ++c) {
                        const std::size_t i = r * n + c;
                        double v = gout[i];
                        if (node.kind == OpKind::Subtract) v = -v;
                        else if (node.kind == OpKind::Multiply) v *= a[i];
                        gb[bidx(mode, r, c, n)] += v;
                    }
                }
            }
            return;
        }
        case OpKind::Scale: {
            if (!needs(0)) return;
            auto& ga = gin(0);
            for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += node.attrs.scalar * gout[i];
            return;
        }
        case OpKind::RowSoftmax: {
            if (!needs(0)) return;
            auto& ga = gin(0);
            const std::size_t m = out.rows(), n = out.cols();
            for (std::size_t r = 0; r < m; ++r) {
                const double* y = out.data().data() + r * n;
                const double* gy = gout.data() + r * n;
                double dot = 0.0;
                for (std::size_t c = 0; c < n; ++c) dot += gy[c] * y[c];
                for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += y[c] * (gy[c] - dot);
            }
            return;
        }
        case OpKind::Log: {
            if (!needs(0)) return;
            auto& ga = gin(0);
            const Tensor& x = in(0);
            for (std::size_t i = 0; i < gout.size(); ++i) {
                if (x[i] >= kLogClamp) ga[i] += gout[i] / x[i];
            }
            return;
        }
        case OpKind::Exp: {
            if (!needs(0)) return;
            auto& ga = gin(0);
            for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * out[i];
            return;
        }
        case OpKind::Relu: {
            if (!needs(0)) return;
            auto& ga = gin(0);
            const Tensor& x = in(0);
            for (std::size_t i = 0; i < gout.size(); ++i) {
                if (x[i] > 0.0) ga[i] += gout[i];
            }
            return;
        }
        case OpKind::Sigmoid: {
            if (!needs(0)) return;
            auto& ga = gin(0);
            for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * out[i] * (1.0 - out[i]);
            return;
        }
        case OpKind::Tanh: {
            if (!needs(0)) return;
            auto& ga = gin(0);
            for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * (1.0 - out[i] * out[i]);
            return;
        }
        case OpKind::GatherRows: {
            if (!needs(0)) return;
            auto& ga = gin(0);
            const std::size_t n = out.cols();
            for (std::size_t i = 0; i < node.attrs.indices.size(); ++i) {
                const std::size_t r = node.attrs.indices[i];
                for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += gout[i * n + c];
            }
            return;
        }
        case OpKind::Concat: {
            const std::size_t cols = out.cols();
            if (node.attrs.axis == 0) {
                std::size_t off = 0;
                for (std::size_t i = 0; i < ins.size(); ++i) {
                    const std::size_t n = in(i).numel();
                    if (needs(i)) {
                        auto& g = gin(i);
                        for (std::size_t j = 0; j < n; ++j) g[j] += gout[off + j];
                    }
                    off += n;
                }
            } else {
                std::size_t coff = 0;
                for (std::size_t i = 0; i < ins.size(); ++i) {
                    const std::size_t w = in(i).cols();
                    if (needs(i)) {
                        auto& g = gin(i);
                        for (std::size_t r = 0; r < out.rows(); ++r)
                            for (std::size_t c = 0; c < w; ++c) g[r * w + c] += gout[r * cols + coff + c];
                    }
                    coff += w;
                }
            }
            return;
        }
        case OpKind::AdditiveMask: {
            if (!needs(0)) return;
            auto& ga = gin(0);
            for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
            return;
        }
        case OpKind::LayerNorm: {
            const Tensor& x = in(0);
            const Tensor& g = in(1);
            const std::size_t m = x.rows(), n = x.cols();
            const double* xh = node.saved.data();
            const double* inv = node.saved.data() + m * n;
            if (needs(1)) {
                auto& gg = gin(1);
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < n; ++c) gg[c] += gout[r * n + c] * xh[r * n + c];
            }
            if (needs(2)) {
                auto& gb = gin(2);
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < n; ++c) gb[c] += gout[r * n + c];
            }
            if (needs(0)) {
                auto& gx = gin(0);
                const double nn = static_cast<double>(n);
                for (std::size_t r = 0; r < m; ++r) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t c = 0; c < n; ++c) {
                        const double d = gout[r * n + c] * g[c];
                        s1 += d;
                        s2 += d * xh[r * n + c];
                    }
                    for (std::size_t c = 0; c < n; ++c) {
                        const double d = gout[r * n + c] * g[c];
                        gx[r * n + c] += inv[r] / nn * (nn * d - s1 - xh[r * n + c] * s2);
                    }
                }
            }
            return;
        }
        case OpKind::Mean:
        case OpKind::Sum: {
            if (!needs(0)) return;
            auto& ga = gin(0);
            double v = gout[0];
            if (node.kind == OpKind::Mean) v /= static_cast<double>(ga.size());
            for (double& e : ga) e += v;
            return;
        }
        case OpKind::Transpose: {
            if (!needs(0)) return;
            auto& ga = gin(0);
            const std::size_t m = in(0).rows(), n = in(0).cols();
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += gout[c * m + r];
            return;
        }
    }
}

Gradients Tape::backward(NodeId loss) const {
    if (loss >= nodes_.size()) throw ContractViolation("backward: loss node id out of range");
    const Tensor& lv = val(nodes_[loss]);
    if (lv.numel() != 1) {
        throw ContractViolation("backward: loss must be a scalar, got shape " + shape_str(lv.shape()));
    }
    std::vector<std::vector<double>> grads(nodes_.size());
    if (nodes_[loss].requires_grad) {
        grads[loss].assign(1, 1.0);
        // Ids are assigned in creation order, so a descending sweep is a
        // reverse topological order and visits each node once.
        for (NodeId id = loss + 1; id-- > 0;) {
            const Node& n = nodes_[id];
            if (grads[id].empty() || !n.requires_grad || n.kind == OpKind::Leaf) continue;
            backward_node(n, grads[id], grads);
        }
    }
    return Gradients(this, std::move(grads));
}

std::vector<double> Gradients::operator[](NodeId id) const {
    if (reached(id)) return grads_[id];
    return std::vector<double>(tape_ ? tape_->value(id).numel() : 0, 0.0);
}

Tensor Gradients::tensor(NodeId id) const { return Tensor(tape_->value(id).shape(), (*this)[id]); }

namespace {

Var unary(OpKind kind, Var a, const OpAttrs& attrs = {}) {
    const NodeId ids[] = {a.id};
    return {a.tape, a.tape->apply(kind, ids, attrs)};
}

Var binary(OpKind kind, Var a, Var b) {
    if (a.tape != b.tape) throw ContractViolation("operands live on different tapes");
    const NodeId ids[] = {a.id, b.id};
    return {a.tape, a.tape->apply(kind, ids)};
}

}  // namespace

Var matmul(Var a, Var b) { return binary(OpKind::MatMul, a, b); }
Var add(Var a, Var b) { return binary(OpKind::Add, a, b); }
Var sub(Var a, Var b) { return binary(OpKind::Subtract, a, b); }
Var mul(Var a, Var b) { return binary(OpKind::Multiply, a, b); }

Var scale(Var a, double s) {
    OpAttrs attrs;
    attrs.scalar = s;
    return unary(OpKind::Scale, a, attrs);
}

Var row_softmax(Var a) { return unary(OpKind::RowSoftmax, a); }
Var log(Var a) { return unary(OpKind::Log, a); }
Var exp(Var a) { return unary(OpKind::Exp, a); }
Var relu(Var a) { return unary(OpKind::Relu, a); }
Var sigmoid(Var a) { return unary(OpKind::Sigmoid, a); }
Var tanh(Var a) { return unary(OpKind::Tanh, a); }

Var gather_rows(Var a, std::vector<std::size_t> indices) {
    OpAttrs attrs;
    attrs.indices = std::move(indices);
    return unary(OpKind::GatherRows, a, attrs);
}

Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) throw ContractViolation("concat: no inputs");
    std::vector<NodeId> ids;
    ids.reserve(parts.size());
    for (const Var& v : parts) {
        if (v.tape != parts[0].tape) throw ContractViolation("operands live on different tapes");
        ids.push_back(v.id);
    }
    OpAttrs attrs;
    attrs.axis = axis;
    return {parts[0].tape, parts[0].tape->apply(OpKind::Concat, ids, attrs)};
}

Var additive_mask(Var a, std::shared_ptr<const Tensor> mask) {
    OpAttrs attrs;
    attrs.mask = std::move(mask);
    return unary(OpKind::AdditiveMask, a, attrs);
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    OpAttrs attrs;
    attrs.eps = eps;
    const NodeId ids[] = {x.id, gamma.id, beta.id};
    return {x.tape, x.tape->apply(OpKind::LayerNorm, ids, attrs)};
}

Var mean(Var a) { return unary(OpKind::Mean, a); }
Var sum(Var a) { return unary(OpKind::Sum, a); }
Var transpose(Var a) { return unary(OpKind::Transpose, a); }

}  // namespace avdg
