#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "adalora/allocator.hpp"
#include "adalora/importance.hpp"
#include "adalora/task.hpp"

namespace adalora {

/// Training regimes: the adaptive method, its no-regularizer ablation, and
/// the three fixed-budget baselines.
enum class TrainMode { AdaLora, AdaLoraNoOrth, LoraFixed, LoraPruned, SvdLora };
const char* mode_name(TrainMode m);

enum class OptimizerKind { Sgd, AdamW };

struct AdamWParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct TrainConfig {
    double eta = 1e-2;                 // learning rate
    double gamma = 0.1;                // orthogonality coefficient
    double beta1 = 0.85;               // sensitivity EMA
    double beta2 = 0.85;               // uncertainty EMA
    int delta_t = 10;                  // prune interval
    BudgetSchedule schedule;
    ScoreVariant variant = ScoreVariant::SmoothedSensitivity;
    TrainMode mode = TrainMode::AdaLora;
    OptimizerKind optimizer = OptimizerKind::AdamW;
    AdamWParams adamw;
    int batch_size = 4;
    std::uint64_t seed = 0;
    double alpha = 16.0;
    UncertaintyTiming uncertainty_timing = UncertaintyTiming::CurrentIbar;
    bool reset_optimizer_on_prune = false;

    void validate(int n_matrices) const;  // throws ConfigError
    bool is_svd_mode() const {
        return mode == TrainMode::AdaLora || mode == TrainMode::AdaLoraNoOrth ||
               mode == TrainMode::SvdLora;
    }
    bool is_prune_mode() const {
        return mode == TrainMode::AdaLora || mode == TrainMode::AdaLoraNoOrth ||
               mode == TrainMode::LoraPruned;
    }
    double effective_gamma() const {
        return (mode == TrainMode::AdaLora || mode == TrainMode::SvdLora) ? gamma : 0.0;
    }
};

struct StepReport {
    std::int64_t step = 0;
    double task_loss = 0.0;   // C
    double reg_loss = 0.0;    // sum of R(P_k, Q_k)
    double total_loss = 0.0;  // C + gamma * sum R
    int budget = 0;
    int active_triplets = 0;
    std::vector<int> active_ranks;  // per adapter
};

enum class PruneAction { Keep, Drop, Reactivate };
const char* action_name(PruneAction a);

struct PruneLogEntry {
    std::int64_t step = 0;
    int matrix_id = 0;
    int triplet_index = 0;
    PruneAction action = PruneAction::Keep;
};

struct OrthTraceEntry {
    std::int64_t step = 0;
    int matrix_id = 0;
    double p_penalty = 0.0;
    double q_penalty = 0.0;
};

/// Per-tensor AdamW moments. The step counter drives bias correction.
struct AdamWState {
    Matrix m;
    Matrix v;
    std::int64_t t = 0;
};

/// Decoupled weight-decay Adam update with bias-corrected moments. Entries
/// where update_mask is zero are left untouched, moments included.
void adamw_step(Matrix& param, const Matrix& grad, AdamWState& state, double eta,
                const AdamWParams& p, const Matrix* update_mask = nullptr);
void sgd_step(Matrix& param, const Matrix& grad, double eta, const Matrix* update_mask = nullptr);

/// Total rank spread as evenly as possible over n adapters:
/// floor(total/n) + 1 for the first (total mod n) matrix ids.
std::vector<int> spread_ranks(int total, int n);

/// Task loss plus gamma times the summed orthogonality penalties, built on the
/// given tape over a mini-batch of dataset indices.
struct ObjectiveNodes {
    NodeRef total;
    NodeRef task;
    double reg_value = 0.0;  // sum of R, zero when no SVD adapters participate
};
ObjectiveNodes objective(Tape& tape, const ToyModel& model, const ModelNodes& nodes,
                         const Dataset& data, std::span<const std::size_t> batch,
                         TaskKind kind, double gamma);

struct RunResult {
    ToyModel model;
    std::vector<StepReport> metrics;
    std::vector<PruneLogEntry> prune_log;
    std::vector<OrthTraceEntry> orth_trace;
    double final_train_loss = 0.0;
    double final_test_loss = 0.0;
};

/// One training run: owns the adapted model, importance statistics, optimizer
/// state and logs. Steps are driven externally (t = 1..T) so tests can stop
/// and inspect mid-run; run() below drives the whole schedule.
class Trainer {
public:
    Trainer(TrainConfig cfg, const GeneratedTask& task);

    StepReport train_step(std::int64_t t);

    const ToyModel& model() const { return model_; }
    ToyModel& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }
    const std::vector<PruneLogEntry>& prune_log() const { return prune_log_; }
    const std::vector<OrthTraceEntry>& orth_trace() const { return orth_trace_; }
    void record_orth_trace(std::int64_t step);
    bool is_prune_step(std::int64_t t) const;

private:
    struct SvdState {
        EntryStats p, lambda, q;
        AdamWState p_opt, l_opt, q_opt;
    };
    struct LoraState {
        EntryStats a, b;
        AdamWState a_opt, b_opt;
    };

    void build_model(const GeneratedTask& task);
    std::vector<std::size_t> sample_batch();
    void apply_prune(std::int64_t t, const std::vector<TripletScore>& scores);
    void enforce_frozen_masks();
    void check_finite(std::int64_t t, double loss) const;

    TrainConfig cfg_;
    BudgetSchedule schedule_;  // b0 adjusted to n * r for prune modes
    const Dataset* train_ = nullptr;
    TaskKind task_kind_ = TaskKind::RegressionTeacher;
    ToyModel model_;
    std::vector<SvdState> svd_state_;
    std::vector<LoraState> lora_state_;
    SplitMix64 batch_rng_;
    std::vector<PruneLogEntry> prune_log_;
    std::vector<OrthTraceEntry> orth_trace_;
    bool any_prune_applied_ = false;
};

/// Executes the full schedule and packages metrics, logs and final losses.
RunResult run(const TrainConfig& cfg, const GeneratedTask& task);

} // namespace adalora
