#include "adalora/tape.hpp"

#include <cmath>
#include <string>

#include "adalora/errors.hpp"

namespace adalora {

namespace {

void check_valid(NodeRef n, const char* op) {
    if (!n.valid()) throw ContractError(std::string(op) + ": invalid node handle");
}

} // namespace

NodeRef Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return NodeRef{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tape::Node& Tape::at(NodeRef n) { return nodes_[static_cast<std::size_t>(n.id)]; }
const Tape::Node& Tape::at(NodeRef n) const { return nodes_[static_cast<std::size_t>(n.id)]; }

NodeRef Tape::constant(Matrix value) {
    Node n;
    n.value = std::move(value);
    n.op = Op::Constant;
    return push(std::move(n));
}

NodeRef Tape::parameter(Matrix value) {
    Node n;
    n.value = std::move(value);
    n.op = Op::Parameter;
    n.needs_grad = true;
    NodeRef ref = push(std::move(n));
    parameters_.push_back(ref.id);
    return ref;
}

NodeRef Tape::matmul(NodeRef a, NodeRef b) {
    check_valid(a, "matmul");
    check_valid(b, "matmul");
    Node n;
    n.value = adalora::matmul(at(a).value, at(b).value);
    n.op = Op::MatMul;
    n.parent = {a.id, b.id};
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::add(NodeRef a, NodeRef b) {
    check_valid(a, "add");
    check_valid(b, "add");
    Node n;
    n.value = adalora::add(at(a).value, at(b).value);
    n.op = Op::Add;
    n.parent = {a.id, b.id};
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::sub(NodeRef a, NodeRef b) {
    check_valid(a, "sub");
    check_valid(b, "sub");
    Node n;
    n.value = adalora::sub(at(a).value, at(b).value);
    n.op = Op::Sub;
    n.parent = {a.id, b.id};
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::scale(NodeRef a, double c) {
    check_valid(a, "scale");
    Node n;
    n.value = adalora::scale(at(a).value, c);
    n.op = Op::Scale;
    n.parent = {a.id, -1};
    n.c0 = c;
    n.needs_grad = at(a).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::transpose(NodeRef a) {
    check_valid(a, "transpose");
    Node n;
    n.value = adalora::transpose(at(a).value);
    n.op = Op::Transpose;
    n.parent = {a.id, -1};
    n.needs_grad = at(a).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::relu(NodeRef a) {
    check_valid(a, "relu");
    Node n;
    n.value = at(a).value;
    for (std::size_t i = 0; i < n.value.size(); ++i)
        if (n.value.at(i) < 0.0) n.value.at(i) = 0.0;
    n.op = Op::Relu;
    n.parent = {a.id, -1};
    n.needs_grad = at(a).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::row_softmax(NodeRef a) {
    check_valid(a, "row_softmax");
    const Matrix& x = at(a).value;
    Matrix s(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i) {
        double mx = x(i, 0);
        for (int j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
        double z = 0.0;
        for (int j = 0; j < x.cols(); ++j) {
            s(i, j) = std::exp(x(i, j) - mx);
            z += s(i, j);
        }
        for (int j = 0; j < x.cols(); ++j) s(i, j) /= z;
    }
    Node n;
    n.value = std::move(s);
    n.op = Op::RowSoftmax;
    n.parent = {a.id, -1};
    n.needs_grad = at(a).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::add_rowvec(NodeRef a, NodeRef v) {
    check_valid(a, "add_rowvec");
    check_valid(v, "add_rowvec");
    const Matrix& x = at(a).value;
    const Matrix& r = at(v).value;
    if (r.rows() != 1 || r.cols() != x.cols()) {
        throw DimensionError("add_rowvec: shape mismatch " + x.shape_str() + " vs " +
                             r.shape_str());
    }
    Matrix y = x;
    for (int i = 0; i < y.rows(); ++i)
        for (int j = 0; j < y.cols(); ++j) y(i, j) += r(0, j);
    Node n;
    n.value = std::move(y);
    n.op = Op::AddRowVec;
    n.parent = {a.id, v.id};
    n.needs_grad = at(a).needs_grad || at(v).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::col_slice(NodeRef a, int col0, int width) {
    check_valid(a, "col_slice");
    const Matrix& x = at(a).value;
    if (col0 < 0 || width <= 0 || col0 + width > x.cols()) {
        throw DimensionError("col_slice: range [" + std::to_string(col0) + ", " +
                             std::to_string(col0 + width) + ") outside " + x.shape_str());
    }
    Matrix y(x.rows(), width);
    for (int i = 0; i < x.rows(); ++i)
        for (int j = 0; j < width; ++j) y(i, j) = x(i, col0 + j);
    Node n;
    n.value = std::move(y);
    n.op = Op::ColSlice;
    n.parent = {a.id, -1};
    n.c0 = col0;
    n.c1 = width;
    n.needs_grad = at(a).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::hconcat(const std::vector<NodeRef>& parts) {
    if (parts.empty()) throw ContractError("hconcat: no parts");
    int rows = at(parts[0]).value.rows();
    int cols = 0;
    bool needs = false;
    for (NodeRef p : parts) {
        check_valid(p, "hconcat");
        const Matrix& v = at(p).value;
        if (v.rows() != rows) {
            throw DimensionError("hconcat: row mismatch " + std::to_string(rows) + " vs " +
                                 v.shape_str());
        }
        cols += v.cols();
        needs = needs || at(p).needs_grad;
    }
    Matrix y(rows, cols);
    int off = 0;
    for (NodeRef p : parts) {
        const Matrix& v = at(p).value;
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < v.cols(); ++j) y(i, off + j) = v(i, j);
        off += v.cols();
    }
    Node n;
    n.value = std::move(y);
    n.op = Op::HConcat;
    n.needs_grad = needs;
    for (NodeRef p : parts) n.extra_parents.push_back(p.id);
    return push(std::move(n));
}

NodeRef Tape::layer_norm(NodeRef a, double eps) {
    check_valid(a, "layer_norm");
    const Matrix& x = at(a).value;
    Matrix y(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (int j = 0; j < x.cols(); ++j) mean += x(i, j);
        mean /= x.cols();
        double var = 0.0;
        for (int j = 0; j < x.cols(); ++j) {
            const double d = x(i, j) - mean;
            var += d * d;
        }
        var /= x.cols();
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < x.cols(); ++j) y(i, j) = (x(i, j) - mean) * inv;
    }
    Node n;
    n.value = std::move(y);
    n.op = Op::LayerNorm;
    n.parent = {a.id, -1};
    n.c0 = eps;
    n.needs_grad = at(a).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::scale_cols(NodeRef a, NodeRef v) {
    check_valid(a, "scale_cols");
    check_valid(v, "scale_cols");
    const Matrix& x = at(a).value;
    const Matrix& r = at(v).value;
    if (r.rows() != 1 || r.cols() != x.cols()) {
        throw DimensionError("scale_cols: shape mismatch " + x.shape_str() + " vs " +
                             r.shape_str());
    }
    Matrix y = x;
    for (int i = 0; i < y.rows(); ++i)
        for (int j = 0; j < y.cols(); ++j) y(i, j) *= r(0, j);
    Node n;
    n.value = std::move(y);
    n.op = Op::ScaleCols;
    n.parent = {a.id, v.id};
    n.needs_grad = at(a).needs_grad || at(v).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::sum(NodeRef a) {
    check_valid(a, "sum");
    Node n;
    n.value = Matrix(1, 1, {adalora::sum(at(a).value)});
    n.op = Op::Sum;
    n.parent = {a.id, -1};
    n.needs_grad = at(a).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::frob_norm_sq(NodeRef a) {
    check_valid(a, "frob_norm_sq");
    Node n;
    n.value = Matrix(1, 1, {frobenius_sq(at(a).value)});
    n.op = Op::FrobNormSq;
    n.parent = {a.id, -1};
    n.needs_grad = at(a).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::mse_loss(NodeRef pred, const Matrix& target) {
    check_valid(pred, "mse_loss");
    require_same_shape(at(pred).value, target, "mse_loss");
    NodeRef t = constant(target);
    const Matrix& p = at(pred).value;
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p.at(i) - target.at(i);
        acc += d * d;
    }
    Node n;
    n.value = Matrix(1, 1, {acc / static_cast<double>(p.size())});
    n.op = Op::MseLoss;
    n.parent = {pred.id, t.id};
    n.needs_grad = at(pred).needs_grad;
    return push(std::move(n));
}

NodeRef Tape::softmax_cross_entropy(NodeRef logits, const std::vector<int>& labels) {
    check_valid(logits, "softmax_cross_entropy");
    const Matrix& x = at(logits).value;
    if (static_cast<int>(labels.size()) != x.rows()) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                             " labels for " + x.shape_str() + " logits");
    }
    for (int lbl : labels) {
        if (lbl < 0 || lbl >= x.cols()) {
            throw InputError("softmax_cross_entropy: label " + std::to_string(lbl) +
                             " outside [0, " + std::to_string(x.cols()) + ")");
        }
    }
    Matrix soft(x.rows(), x.cols());
    double loss = 0.0;
    for (int i = 0; i < x.rows(); ++i) {
        double mx = x(i, 0);
        for (int j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
        double z = 0.0;
        for (int j = 0; j < x.cols(); ++j) {
            soft(i, j) = std::exp(x(i, j) - mx);
            z += soft(i, j);
        }
        for (int j = 0; j < x.cols(); ++j) soft(i, j) /= z;
        loss -= std::log(soft(i, labels[i]));
    }
    Node n;
    n.value = Matrix(1, 1, {loss / x.rows()});
    n.op = Op::CrossEntropy;
    n.parent = {logits.id, -1};
    n.labels = labels;
    n.aux = std::move(soft);
    n.needs_grad = at(logits).needs_grad;
    return push(std::move(n));
}

const Matrix& Tape::value(NodeRef n) const {
    check_valid(n, "value");
    return at(n).value;
}

const Matrix& Tape::grad(NodeRef n) const {
    check_valid(n, "grad");
    if (!backward_done_) throw ContractError("grad: backward has not run");
    return at(n).grad;
}

Matrix& Tape::ensure_grad(std::int32_t id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
}

GradMap Tape::backward(NodeRef loss) {
    check_valid(loss, "backward");
    if (backward_done_) throw ContractError("backward: tape already differentiated");
    const Matrix& lv = at(loss).value;
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw ContractError("backward: loss must be 1x1, got " + lv.shape_str());
    }
    backward_done_ = true;
    ensure_grad(loss.id)(0, 0) = 1.0;
    for (std::int32_t id = loss.id; id >= 0; --id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad || n.grad.empty()) continue;
        backward_node(id);
    }
    GradMap grads;
    for (std::int32_t pid : parameters_) {
        Node& p = nodes_[static_cast<std::size_t>(pid)];
        if (p.grad.empty()) p.grad = Matrix(p.value.rows(), p.value.cols());
        grads.emplace(pid, p.grad);
    }
    return grads;
}

void Tape::backward_node(std::int32_t id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const Matrix& g = n.grad;
    auto parent_needs = [&](int slot) {
        return n.parent[slot] >= 0 &&
               nodes_[static_cast<std::size_t>(n.parent[slot])].needs_grad;
    };
    switch (n.op) {
    case Op::Constant:
    case Op::Parameter:
        break;
    case Op::MatMul: {
        const Node& a = nodes_[static_cast<std::size_t>(n.parent[0])];
        const Node& b = nodes_[static_cast<std::size_t>(n.parent[1])];
        if (parent_needs(0)) {
            // dL/dA = G * B^T
            Matrix& ga = ensure_grad(n.parent[0]);
            const int m = g.rows(), k = b.value.rows(), p = g.cols();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < k; ++j) {
                    double acc = 0.0;
                    for (int t = 0; t < p; ++t) acc += g(i, t) * b.value(j, t);
                    ga(i, j) += acc;
                }
        }
        if (parent_needs(1)) {
            // dL/dB = A^T * G
            Matrix& gb = ensure_grad(n.parent[1]);
            const int m = a.value.rows(), k = a.value.cols(), p = g.cols();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < k; ++j) {
                    const double av = a.value(i, j);
                    if (av == 0.0) continue;
                    for (int t = 0; t < p; ++t) gb(j, t) += av * g(i, t);
                }
        }
        break;
    }
    case Op::Add:
        for (int slot : {0, 1}) {
            if (!parent_needs(slot)) continue;
            Matrix& gp = ensure_grad(n.parent[slot]);
            for (std::size_t i = 0; i < g.size(); ++i) gp.at(i) += g.at(i);
        }
        break;
    case Op::Sub: {
        if (parent_needs(0)) {
            Matrix& ga = ensure_grad(n.parent[0]);
            for (std::size_t i = 0; i < g.size(); ++i) ga.at(i) += g.at(i);
        }
        if (parent_needs(1)) {
            Matrix& gb = ensure_grad(n.parent[1]);
            for (std::size_t i = 0; i < g.size(); ++i) gb.at(i) -= g.at(i);
        }
        break;
    }
    case Op::Scale: {
        if (parent_needs(0)) {
            Matrix& ga = ensure_grad(n.parent[0]);
            for (std::size_t i = 0; i < g.size(); ++i) ga.at(i) += n.c0 * g.at(i);
        }
        break;
    }
    case Op::Transpose: {
        if (parent_needs(0)) {
            Matrix& ga = ensure_grad(n.parent[0]);
            for (int i = 0; i < g.rows(); ++i)
                for (int j = 0; j < g.cols(); ++j) ga(j, i) += g(i, j);
        }
        break;
    }
    case Op::Relu: {
        if (parent_needs(0)) {
            const Node& a = nodes_[static_cast<std::size_t>(n.parent[0])];
            Matrix& ga = ensure_grad(n.parent[0]);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (a.value.at(i) > 0.0) ga.at(i) += g.at(i);
        }
        break;
    }
    case Op::RowSoftmax: {
        if (parent_needs(0)) {
            Matrix& ga = ensure_grad(n.parent[0]);
            const Matrix& s = n.value;
            for (int i = 0; i < s.rows(); ++i) {
                double dot = 0.0;
                for (int j = 0; j < s.cols(); ++j) dot += g(i, j) * s(i, j);
                for (int j = 0; j < s.cols(); ++j) ga(i, j) += s(i, j) * (g(i, j) - dot);
            }
        }
        break;
    }
    case Op::AddRowVec: {
        if (parent_needs(0)) {
            Matrix& ga = ensure_grad(n.parent[0]);
            for (std::size_t i = 0; i < g.size(); ++i) ga.at(i) += g.at(i);
        }
        if (parent_needs(1)) {
            Matrix& gv = ensure_grad(n.parent[1]);
            for (int i = 0; i < g.rows(); ++i)
                for (int j = 0; j < g.cols(); ++j) gv(0, j) += g(i, j);
        }
        break;
    }
    case Op::ColSlice: {
        if (parent_needs(0)) {
            Matrix& ga = ensure_grad(n.parent[0]);
            const int col0 = static_cast<int>(n.c0);
            for (int i = 0; i < g.rows(); ++i)
                for (int j = 0; j < g.cols(); ++j) ga(i, col0 + j) += g(i, j);
        }
        break;
    }
    case Op::HConcat: {
        int off = 0;
        for (std::int32_t pid : n.extra_parents) {
            Node& p = nodes_[static_cast<std::size_t>(pid)];
            if (p.needs_grad) {
                Matrix& gp = ensure_grad(pid);
                for (int i = 0; i < gp.rows(); ++i)
                    for (int j = 0; j < gp.cols(); ++j) gp(i, j) += g(i, off + j);
            }
            off += p.value.cols();
        }
        break;
    }
    case Op::LayerNorm: {
        if (parent_needs(0)) {
            Matrix& ga = ensure_grad(n.parent[0]);
            const Node& a = nodes_[static_cast<std::size_t>(n.parent[0])];
            const Matrix& x = a.value;
            const Matrix& y = n.value;
            const int c = x.cols();
            for (int i = 0; i < x.rows(); ++i) {
                double mean = 0.0;
                for (int j = 0; j < c; ++j) mean += x(i, j);
                mean /= c;
                double var = 0.0;
                for (int j = 0; j < c; ++j) {
                    const double d = x(i, j) - mean;
                    var += d * d;
                }
                var /= c;
                const double inv = 1.0 / std::sqrt(var + n.c0);
                double gmean = 0.0, gydot = 0.0;
                for (int j = 0; j < c; ++j) {
                    gmean += g(i, j);
                    gydot += g(i, j) * y(i, j);
                }
                gmean /= c;
                gydot /= c;
                for (int j = 0; j < c; ++j)
                    ga(i, j) += inv * (g(i, j) - gmean - y(i, j) * gydot);
            }
        }
        break;
    }
    case Op::ScaleCols: {
        const Node& a = nodes_[static_cast<std::size_t>(n.parent[0])];
        const Node& v = nodes_[static_cast<std::size_t>(n.parent[1])];
        if (parent_needs(0)) {
            Matrix& ga = ensure_grad(n.parent[0]);
            for (int i = 0; i < g.rows(); ++i)
                for (int j = 0; j < g.cols(); ++j) ga(i, j) += g(i, j) * v.value(0, j);
        }
        if (parent_needs(1)) {
            Matrix& gv = ensure_grad(n.parent[1]);
            for (int i = 0; i < g.rows(); ++i)
                for (int j = 0; j < g.cols(); ++j) gv(0, j) += g(i, j) * a.value(i, j);
        }
        break;
    }
    case Op::Sum: {
        if (parent_needs(0)) {
            Matrix& ga = ensure_grad(n.parent[0]);
            const double gs = g(0, 0);
            for (std::size_t i = 0; i < ga.size(); ++i) ga.at(i) += gs;
        }
        break;
    }
    case Op::FrobNormSq: {
        if (parent_needs(0)) {
            const Node& a = nodes_[static_cast<std::size_t>(n.parent[0])];
            Matrix& ga = ensure_grad(n.parent[0]);
            const double gs = g(0, 0);
            for (std::size_t i = 0; i < ga.size(); ++i) ga.at(i) += gs * 2.0 * a.value.at(i);
        }
        break;
    }
    case Op::MseLoss: {
        if (parent_needs(0)) {
            const Node& p = nodes_[static_cast<std::size_t>(n.parent[0])];
            const Node& t = nodes_[static_cast<std::size_t>(n.parent[1])];
            Matrix& gp = ensure_grad(n.parent[0]);
            const double gs = g(0, 0) * 2.0 / static_cast<double>(p.value.size());
            for (std::size_t i = 0; i < gp.size(); ++i)
                gp.at(i) += gs * (p.value.at(i) - t.value.at(i));
        }
        break;
    }
    case Op::CrossEntropy: {
        if (parent_needs(0)) {
            Matrix& gl = ensure_grad(n.parent[0]);
            const Matrix& s = n.aux;
            const double gs = g(0, 0) / s.rows();
            for (int i = 0; i < s.rows(); ++i) {
                for (int j = 0; j < s.cols(); ++j) gl(i, j) += gs * s(i, j);
                gl(i, n.labels[static_cast<std::size_t>(i)]) -= gs;
            }
        }
        break;
    }
    }
}

} // namespace adalora
