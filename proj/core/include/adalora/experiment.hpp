#pragma once

#include <string>
#include <vector>

#include "adalora/config.hpp"
#include "adalora/trainer.hpp"

namespace adalora {

/// Directory name of one run under the plan output dir, e.g. "adalora_s3" or
/// "adalora_raw_s0".
std::string run_id(const RunSpec& spec, std::uint64_t seed);

struct RunRecord {
    RunSpec spec;
    std::uint64_t seed = 0;
    std::string dir;
    double final_train_loss = 0.0;
    double final_test_loss = 0.0;
    int active_triplets = 0;
    bool ok = true;
    std::string error;
};

/// Writes metrics.csv, prune_log.csv, orth_trace.csv (SVD modes),
/// checkpoint.json and run_info.json into dir.
void write_run_outputs(const RunResult& result, const TrainConfig& cfg,
                       const TaskSpec& task, const std::string& dir);

/// Executes every (run, seed) pair of the plan; independent runs may be
/// dispatched to a small worker pool. Aborted runs are recorded with their
/// diagnostic and the plan continues. Also writes summary.csv.
std::vector<RunRecord> run_plan(const ExperimentPlan& plan);

/// Final active rank per (layer, kind) from a completed SVD run directory.
/// Writes <run_dir>/heatmap.csv unless out_csv overrides the location.
void export_rank_heatmap(const std::string& run_dir, const std::string& out_csv = "");

/// Re-emits the per-step orthogonality penalties of a completed run.
void export_orth_trace(const std::string& run_dir, const std::string& out_csv = "");

/// Aggregates run_info.json files under root_dir into summary.csv: one row per
/// (mode, variant, final budget) with mean losses across seeds.
void summarize(const std::string& root_dir, const std::string& out_csv = "");

/// Writes the generated datasets and a teacher-delta report for inspection.
void export_task(const GeneratedTask& task, const std::string& dir);

} // namespace adalora
