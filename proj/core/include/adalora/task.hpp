#pragma once

#include <cstdint>
#include <vector>

#include "adalora/adapters.hpp"
#include "adalora/matrix.hpp"

namespace adalora {

enum class TaskKind { RegressionTeacher, ClassificationToy };
const char* task_kind_name(TaskKind k);

/// Synthetic teacher-student task description. The teacher is the frozen base
/// model plus one planted low-rank delta per adapted matrix; planted_ranks
/// fixes the true rank of each delta. One sample is a seq_len x d sequence.
struct TaskSpec {
    TaskKind kind = TaskKind::RegressionTeacher;
    int layers = 4;
    int d = 32;
    int heads = 4;
    int d_ffn = 64;
    std::vector<int> planted_ranks;  // one per adapted matrix; empty = all zero
    double noise_std = 0.01;
    int train_count = 256;
    int test_count = 64;
    int seq_len = 8;
    std::uint64_t seed = 42;

    int n_matrices() const { return kNumKinds * layers; }
    void validate() const;  // throws ConfigError
};

struct Dataset {
    std::vector<Matrix> inputs;               // each seq_len x d
    std::vector<Matrix> targets;              // regression: each seq_len x d
    std::vector<std::vector<int>> labels;     // classification: one label per row
    std::size_t size() const { return inputs.size(); }
};

struct GeneratedTask {
    TaskSpec spec;
    ToyModel base;                 // frozen, no adapters attached yet
    ToyModel teacher;              // base weights + planted deltas, never adapted
    std::vector<Matrix> deltas;    // planted delta per matrix_id (zero rank = empty)
    Dataset train;
    Dataset test;
};

/// Deterministic in spec.seed: base weights, planted deltas (thin orthonormal
/// factors times log-uniform [0.5, 2] singular values), standard-normal
/// inputs, and targets = teacher outputs + noise (argmax labels for the
/// classification kind).
GeneratedTask gen_task(const TaskSpec& spec);

/// Mean task loss of the adapted model over a dataset (MSE or cross-entropy).
double evaluate_loss(const ToyModel& model, const Dataset& data, TaskKind kind);

} // namespace adalora
