#include "adalora/task.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "adalora/errors.hpp"
#include "adalora/tape.hpp"

namespace adalora {

const char* task_kind_name(TaskKind k) {
    return k == TaskKind::RegressionTeacher ? "regression_teacher" : "classification_toy";
}

void TaskSpec::validate() const {
    if (layers < 1 || d < 1 || heads < 1 || d_ffn < 1) {
        throw ConfigError("task dimensions must be positive");
    }
    if (d % heads != 0) {
        throw ConfigError("width " + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (!planted_ranks.empty() &&
        static_cast<int>(planted_ranks.size()) != n_matrices()) {
        throw ConfigError("planted_ranks needs " + std::to_string(n_matrices()) +
                          " entries, got " + std::to_string(planted_ranks.size()));
    }
    if (train_count < 1 || test_count < 1 || seq_len < 1) {
        throw ConfigError("sample counts and seq_len must be positive");
    }
    if (noise_std < 0.0) throw ConfigError("noise_std must be non-negative");
}

namespace {

// Thin matrix with orthonormal columns via modified Gram-Schmidt.
Matrix orthonormal_columns(int rows, int cols, SplitMix64& rng) {
    Matrix m = rng.gaussian_matrix(rows, cols, 1.0);
    for (int j = 0; j < cols; ++j) {
        for (int prev = 0; prev < j; ++prev) {
            double dot = 0.0;
            for (int i = 0; i < rows; ++i) dot += m(i, j) * m(i, prev);
            for (int i = 0; i < rows; ++i) m(i, j) -= dot * m(i, prev);
        }
        double norm = 0.0;
        for (int i = 0; i < rows; ++i) norm += m(i, j) * m(i, j);
        norm = std::sqrt(norm);
        if (norm < 1e-12) {
            // Degenerate draw; retry this column.
            for (int i = 0; i < rows; ++i) m(i, j) = rng.normal();
            --j;
            continue;
        }
        for (int i = 0; i < rows; ++i) m(i, j) /= norm;
    }
    return m;
}

Matrix planted_delta(int d1, int d2, int rank, SplitMix64& rng) {
    Matrix u = orthonormal_columns(d1, rank, rng);
    Matrix v = orthonormal_columns(d2, rank, rng);
    std::vector<double> sv(static_cast<std::size_t>(rank));
    for (auto& s : sv) s = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
    // u * diag(sv) * v^T
    for (int j = 0; j < rank; ++j)
        for (int i = 0; i < d1; ++i) u(i, j) *= sv[static_cast<std::size_t>(j)];
    return matmul(u, transpose(v));
}

Dataset make_split(const ToyModel& teacher, const TaskSpec& spec, int count, SplitMix64& rng) {
    Dataset data;
    for (int s = 0; s < count; ++s) {
        Matrix x = rng.gaussian_matrix(spec.seq_len, spec.d, 1.0);
        Matrix y = base_forward(teacher, x);
        if (spec.noise_std > 0.0) {
            for (std::size_t i = 0; i < y.size(); ++i) y.at(i) += spec.noise_std * rng.normal();
        }
        if (spec.kind == TaskKind::ClassificationToy) {
            std::vector<int> lbl(static_cast<std::size_t>(spec.seq_len));
            for (int i = 0; i < spec.seq_len; ++i) {
                int best = 0;
                for (int j = 1; j < spec.d; ++j)
                    if (y(i, j) > y(i, best)) best = j;
                lbl[static_cast<std::size_t>(i)] = best;
            }
            data.labels.push_back(std::move(lbl));
        } else {
            data.targets.push_back(std::move(y));
        }
        data.inputs.push_back(std::move(x));
    }
    return data;
}

} // namespace

GeneratedTask gen_task(const TaskSpec& spec) {
    spec.validate();
    GeneratedTask task;
    task.spec = spec;

    SplitMix64 root(spec.seed);
    SplitMix64 base_rng = root.fork(1);
    task.base = make_base_model(spec.layers, spec.d, spec.heads, spec.d_ffn, base_rng);

    task.teacher = task.base;
    SplitMix64 delta_rng = root.fork(2);
    const int n = spec.n_matrices();
    task.deltas.resize(static_cast<std::size_t>(n));
    for (int id = 0; id < n; ++id) {
        const int rank = spec.planted_ranks.empty()
                             ? 0
                             : spec.planted_ranks[static_cast<std::size_t>(id)];
        const FrozenLinear& fl = task.base.frozen(id);
        if (rank < 0 || rank > std::min(fl.in_dim(), fl.out_dim())) {
            throw ConfigError("planted rank " + std::to_string(rank) + " exceeds matrix " +
                              fl.w0.shape_str());
        }
        if (rank == 0) continue;
        Matrix delta = planted_delta(fl.in_dim(), fl.out_dim(), rank, delta_rng);
        task.teacher.frozen(id).w0 = add(fl.w0, delta);
        task.deltas[static_cast<std::size_t>(id)] = std::move(delta);
    }

    SplitMix64 train_rng = root.fork(3);
    SplitMix64 test_rng = root.fork(4);
    task.train = make_split(task.teacher, spec, spec.train_count, train_rng);
    task.test = make_split(task.teacher, spec, spec.test_count, test_rng);
    return task;
}

double evaluate_loss(const ToyModel& model, const Dataset& data, TaskKind kind) {
    double acc = 0.0;
    for (std::size_t s = 0; s < data.size(); ++s) {
        Tape tape;
        ModelNodes nodes = register_model(tape, model);
        NodeRef y = model_forward(tape, model, nodes, tape.constant(data.inputs[s]));
        NodeRef loss = kind == TaskKind::RegressionTeacher
                           ? tape.mse_loss(y, data.targets[s])
                           : tape.softmax_cross_entropy(y, data.labels[s]);
        acc += tape.value(loss)(0, 0);
    }
    return acc / static_cast<double>(data.size());
}

} // namespace adalora
