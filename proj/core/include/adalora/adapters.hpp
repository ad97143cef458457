#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "adalora/matrix.hpp"
#include "adalora/rng.hpp"
#include "adalora/tape.hpp"

namespace adalora {

/// The six adapted weight matrices of a transformer block.
enum class MatKind : int { Wq = 0, Wk = 1, Wv = 2, Wo = 3, Wf1 = 4, Wf2 = 5 };
inline constexpr int kNumKinds = 6;
const char* kind_name(MatKind k);
MatKind kind_from_index(int i);

/// Pre-trained weight that never receives updates. Weights map row inputs to
/// row outputs: y = x * w0 (+ bias), with w0 of shape in_dim x out_dim.
struct FrozenLinear {
    Matrix w0;
    std::optional<Matrix> bias;  // 1 x out_dim
    int in_dim() const { return w0.rows(); }
    int out_dim() const { return w0.cols(); }
};

/// Low-rank increment Delta = B*A with doublet i = {A row i, B column i}.
/// A is Gaussian at construction, B is zero, so Delta starts at exactly 0.
struct LoraAdapter {
    Matrix a;                          // rank x d2
    Matrix b;                          // d1 x rank
    int rank = 0;
    double alpha = 16.0;
    std::vector<std::uint8_t> doublet_mask;  // true = doublet active
    int matrix_id = -1;
    MatKind kind = MatKind::Wq;

    int active_count() const;
};

/// SVD-shaped increment Delta = P * diag(lambda) * Q. Triplet i is
/// {P column i, lambda_i, Q row i}; pruning zeroes lambda entries while the
/// singular vectors keep training. lambda starts at zero so Delta starts at 0.
struct SvdAdapter {
    Matrix p;                       // d1 x rank
    Matrix lambda;                  // 1 x rank
    Matrix q;                       // rank x d2
    std::vector<std::uint8_t> mask;  // true = triplet active (last prune decision)
    double alpha = 16.0;
    int matrix_id = -1;
    MatKind kind = MatKind::Wq;

    int rank() const { return lambda.cols(); }
    int active_count() const;
};

inline constexpr double kAdapterInitStd = 0.02;

LoraAdapter make_lora_adapter(int d1, int d2, int rank, double alpha, SplitMix64& rng,
                              int matrix_id, MatKind kind);
SvdAdapter make_svd_adapter(int d1, int d2, int rank, double alpha, SplitMix64& rng,
                            int matrix_id, MatKind kind);

struct LoraNodes {
    NodeRef a, b;
};
struct SvdNodes {
    NodeRef p, lambda, q;
};

LoraNodes register_params(Tape& tape, const LoraAdapter& ad);
SvdNodes register_params(Tape& tape, const SvdAdapter& ad);

/// y = x*W0 (+bias) + (alpha/rank) * masked-doublet contribution of B*A.
NodeRef lora_forward(Tape& tape, const FrozenLinear& layer, const LoraAdapter& ad,
                     const LoraNodes& nodes, NodeRef x);
NodeRef lora_forward(Tape& tape, const FrozenLinear& layer, const LoraAdapter& ad, NodeRef x);

/// y = x*W0 (+bias) + (alpha/rank) * x*P*diag(lambda)*Q. The current lambda
/// is used as-is; pruning zeroes entries destructively, so dropped triplets
/// keep receiving gradients and can regrow between prune events.
NodeRef svd_forward(Tape& tape, const FrozenLinear& layer, const SvdAdapter& ad,
                    const SvdNodes& nodes, NodeRef x);
NodeRef svd_forward(Tape& tape, const FrozenLinear& layer, const SvdAdapter& ad, NodeRef x);

/// ||P^T P - I||_F^2 + ||Q Q^T - I||_F^2 as a 1x1 node.
NodeRef orth_penalty(Tape& tape, const SvdNodes& nodes);
NodeRef orth_penalty(Tape& tape, const SvdAdapter& ad);

/// Both penalty terms evaluated directly (no tape), for traces.
struct OrthPenaltyValue {
    double p_term = 0.0;
    double q_term = 0.0;
};
OrthPenaltyValue orth_penalty_value(const SvdAdapter& ad);

/// (alpha/rank) * P * diag(lambda .* mask) * Q: the active-set increment.
Matrix effective_delta(const SvdAdapter& ad);
/// (alpha/rank) * B * A restricted to active doublets.
Matrix effective_delta(const LoraAdapter& ad);

/// One transformer block: four attention projections and the two FFN weights,
/// all frozen; FFN biases ride on the FrozenLinear entries.
struct Block {
    FrozenLinear mats[kNumKinds];
};

enum class AdapterSet { None, Lora, Svd };

/// Stack of blocks with one adapter per weight matrix. matrix_id of the
/// adapter for kind k in block l is l*6 + k; n = 6 * layers.
struct ToyModel {
    int d = 0;
    int heads = 0;
    int d_ffn = 0;
    std::vector<Block> blocks;
    AdapterSet adapter_set = AdapterSet::None;
    std::vector<SvdAdapter> svd;
    std::vector<LoraAdapter> lora;

    int n_matrices() const { return kNumKinds * static_cast<int>(blocks.size()); }
    int head_dim() const { return d / heads; }
    const FrozenLinear& frozen(int matrix_id) const;
    FrozenLinear& frozen(int matrix_id);
    int total_active() const;
    std::vector<int> active_ranks() const;
};

ToyModel make_base_model(int layers, int d, int heads, int d_ffn, SplitMix64& rng);
void attach_svd_adapters(ToyModel& model, int rank, double alpha, SplitMix64& rng);
void attach_lora_adapters(ToyModel& model, const std::vector<int>& ranks, double alpha,
                          SplitMix64& rng);

/// Per-step tape handles: frozen weights registered as constants (shared
/// across the sequences of a batch) and adapters as parameters.
struct ModelNodes {
    std::vector<NodeRef> w0;     // per matrix_id
    std::vector<NodeRef> bias;   // per matrix_id, invalid when absent
    std::vector<SvdNodes> svd;   // when adapter_set == Svd
    std::vector<LoraNodes> lora; // when adapter_set == Lora
    bool adapters_enabled = true;
};

ModelNodes register_model(Tape& tape, const ToyModel& model, bool adapters_enabled = true);

/// Full block-stack forward for one sequence (seq_len x d rows).
NodeRef model_forward(Tape& tape, const ToyModel& model, const ModelNodes& nodes, NodeRef x);

/// Convenience: forward of the frozen base model, adapters detached.
Matrix base_forward(const ToyModel& model, const Matrix& x);
/// Convenience: forward with adapters through a throwaway tape.
Matrix adapted_forward(const ToyModel& model, const Matrix& x);

} // namespace adalora
