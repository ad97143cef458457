#pragma once

#include <array>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "adalora/matrix.hpp"

namespace adalora {

/// Handle to a node on a Tape. Cheap to copy; only valid for the tape that
/// created it.
struct NodeRef {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

using GradMap = std::unordered_map<std::int32_t, Matrix>;

/// Reverse-mode automatic differentiation over dense matrices.
///
/// A Tape is an append-only computation record: node ids are dense indices in
/// creation order, and every parent precedes its children, so a single reverse
/// sweep is a valid topological order. Forward values are computed eagerly at
/// node creation; gradients are materialized lazily by backward(). A tape is
/// single-shot: it is built, differentiated once, then discarded. Fan-out is
/// handled by accumulation, so a node used twice receives the sum of both path
/// contributions.
///
/// Tapes are confined to one thread; concurrent work uses independent tapes.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that does not require gradients (inputs, frozen weights).
    NodeRef constant(Matrix value);
    /// Trainable leaf; appears in the map returned by backward().
    NodeRef parameter(Matrix value);

    NodeRef matmul(NodeRef a, NodeRef b);
    NodeRef add(NodeRef a, NodeRef b);
    NodeRef sub(NodeRef a, NodeRef b);
    NodeRef scale(NodeRef a, double c);
    NodeRef transpose(NodeRef a);
    NodeRef relu(NodeRef a);
    /// Softmax along each row, with row-max subtraction for stability.
    NodeRef row_softmax(NodeRef a);
    /// Adds a 1 x cols row vector to every row of a.
    NodeRef add_rowvec(NodeRef a, NodeRef v);
    /// Columns [col0, col0 + width) of a.
    NodeRef col_slice(NodeRef a, int col0, int width);
    /// Horizontal concatenation; all parts must share a row count.
    NodeRef hconcat(const std::vector<NodeRef>& parts);
    /// Row-wise layer normalization with fixed unit gain and zero bias.
    NodeRef layer_norm(NodeRef a, double eps = 1e-5);
    /// Scales column j of a by v(0, j); v is a 1 x cols row vector.
    NodeRef scale_cols(NodeRef a, NodeRef v);
    /// Sum of all entries, as a 1x1 node.
    NodeRef sum(NodeRef a);
    /// Sum of squared entries, as a 1x1 node.
    NodeRef frob_norm_sq(NodeRef a);
    /// Mean squared difference against a fixed target, as a 1x1 node.
    NodeRef mse_loss(NodeRef pred, const Matrix& target);
    /// Mean negative log-softmax of the labelled class per row, as a 1x1 node.
    NodeRef softmax_cross_entropy(NodeRef logits, const std::vector<int>& labels);

    const Matrix& value(NodeRef n) const;
    /// Gradient of the loss w.r.t. node n; valid after backward(). Nodes that
    /// were never reached hold an empty matrix.
    const Matrix& grad(NodeRef n) const;

    /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse, returning
    /// {parameter id -> gradient}. loss must be 1x1. Calling backward a second
    /// time on the same tape is rejected.
    GradMap backward(NodeRef loss);

    std::size_t size() const { return nodes_.size(); }
    const std::vector<std::int32_t>& parameters() const { return parameters_; }

private:
    enum class Op : std::uint8_t {
        Constant,
        Parameter,
        MatMul,
        Add,
        Sub,
        Scale,
        Transpose,
        Relu,
        RowSoftmax,
        AddRowVec,
        ColSlice,
        HConcat,
        LayerNorm,
        ScaleCols,
        Sum,
        FrobNormSq,
        MseLoss,
        CrossEntropy,
    };

    struct Node {
        Matrix value;
        Matrix grad;  // empty until backward touches this node
        Op op = Op::Constant;
        bool needs_grad = false;
        std::array<std::int32_t, 2> parent{-1, -1};
        std::vector<std::int32_t> extra_parents;  // HConcat beyond the first two
        double c0 = 0.0;                          // scale factor / slice start / eps
        double c1 = 0.0;                          // slice width
        std::vector<int> labels;                  // CrossEntropy only
        Matrix aux;                               // CrossEntropy softmax cache
    };

    NodeRef push(Node node);
    Node& at(NodeRef n);
    const Node& at(NodeRef n) const;
    Matrix& ensure_grad(std::int32_t id);
    void backward_node(std::int32_t id);

    std::vector<Node> nodes_;
    std::vector<std::int32_t> parameters_;
    bool backward_done_ = false;
};

} // namespace adalora
