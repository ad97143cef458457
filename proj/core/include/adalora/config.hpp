#pragma once

#include <string>
#include <vector>

#include "adalora/task.hpp"
#include "adalora/trainer.hpp"

namespace adalora {

/// One planned run: a training mode plus (for pruning modes) the importance
/// variant it scores with.
struct RunSpec {
    TrainMode mode = TrainMode::AdaLora;
    ScoreVariant variant = ScoreVariant::SmoothedSensitivity;
};

/// A full experiment: one synthetic task, a shared base TrainConfig, the runs
/// to execute and how many seeds each run repeats over. All runs share the
/// same final budget, so comparisons are parameter-fair.
struct ExperimentPlan {
    TaskSpec task;
    TrainConfig base;
    std::vector<RunSpec> runs;
    int repetitions = 1;
    std::string output_dir;

    void validate() const;  // throws ConfigError
};

/// Parses the dotted-key plain-text config format (README documents every
/// key). Unknown keys are errors.
ExperimentPlan parse_plan(const std::string& text);
ExperimentPlan load_plan(const std::string& path);

TrainMode mode_from_name(const std::string& name);
ScoreVariant variant_from_name(const std::string& name);
ScheduleForm schedule_form_from_name(const std::string& name);
TaskKind task_kind_from_name(const std::string& name);

} // namespace adalora
