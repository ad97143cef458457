// Command-line driver: synthetic task generation, plan execution, and
// diagnostic exports. Exit code 0 on success; nonzero with a one-line
// "error: <category>: <message>" on stderr otherwise.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "adalora/config.hpp"
#include "adalora/errors.hpp"
#include "adalora/experiment.hpp"
#include "adalora/task.hpp"

namespace {

using namespace adalora;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::int64_t seed = -1;
    std::string mode;
    int budget = -1;
};

ExperimentPlan load_plan_with_overrides(const CommonArgs& args) {
    ExperimentPlan plan = load_plan(args.config_path);
    if (!args.out_dir.empty()) plan.output_dir = args.out_dir;
    if (args.seed >= 0) plan.base.seed = static_cast<std::uint64_t>(args.seed);
    if (!args.mode.empty()) {
        plan.runs.clear();
        plan.runs.push_back(RunSpec{mode_from_name(args.mode), plan.base.variant});
    }
    if (args.budget > 0) {
        plan.base.schedule.bT = args.budget;
        plan.base.schedule.b0 = (3 * args.budget + 1) / 2;
    }
    plan.validate();
    return plan;
}

int cmd_gen_task(const CommonArgs& args) {
    ExperimentPlan plan = load_plan_with_overrides(args);
    if (plan.output_dir.empty()) throw ConfigError("gen-task needs --out or plan.output");
    if (args.seed >= 0) plan.task.seed = static_cast<std::uint64_t>(args.seed);
    GeneratedTask task = gen_task(plan.task);
    export_task(task, plan.output_dir);
    std::cout << "task written to " << plan.output_dir << " (" << task.train.size()
              << " train / " << task.test.size() << " test sequences)\n";
    return 0;
}

int cmd_run(const CommonArgs& args) {
    ExperimentPlan plan = load_plan_with_overrides(args);
    if (plan.output_dir.empty()) throw ConfigError("run needs --out or plan.output");
    const auto records = run_plan(plan);
    int failures = 0;
    for (const RunRecord& rec : records) {
        if (rec.ok) {
            std::cout << run_id(rec.spec, rec.seed)
                      << ": test_loss=" << rec.final_test_loss
                      << " active=" << rec.active_triplets << "\n";
        } else {
            ++failures;
            std::cout << run_id(rec.spec, rec.seed) << ": ABORTED (" << rec.error << ")\n";
        }
    }
    std::cout << "summary: " << plan.output_dir << "/summary.csv\n";
    return failures == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"adaptive low-rank adapter training on synthetic teacher-student tasks"};
    app.require_subcommand(1);

    CommonArgs args;
    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* opt = cmd->add_option("--config", args.config_path, "plan config file");
        if (needs_config) opt->required();
        cmd->add_option("--out", args.out_dir, "output directory");
        cmd->add_option("--seed", args.seed, "base seed override");
        cmd->add_option("--mode", args.mode, "run a single mode from the plan");
        cmd->add_option("--budget", args.budget, "final budget override (b0 becomes 1.5x)");
    };

    CLI::App* gen = app.add_subcommand("gen-task", "generate and export the synthetic task");
    add_common(gen, true);
    CLI::App* runc = app.add_subcommand("run", "execute the experiment plan");
    add_common(runc, true);
    CLI::App* heat = app.add_subcommand("export-heatmap", "final per-matrix rank table of a run");
    add_common(heat, false);
    CLI::App* orth = app.add_subcommand("export-orth", "orthogonality penalty trace of a run");
    add_common(orth, false);
    CLI::App* summ = app.add_subcommand("summarize", "aggregate run_info files into summary.csv");
    add_common(summ, false);

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_gen_task(args);
        if (runc->parsed()) return cmd_run(args);
        if (heat->parsed()) {
            if (args.out_dir.empty()) throw adalora::ConfigError("export-heatmap needs --out <run dir>");
            adalora::export_rank_heatmap(args.out_dir);
            std::cout << args.out_dir << "/heatmap.csv\n";
            return 0;
        }
        if (orth->parsed()) {
            if (args.out_dir.empty()) throw adalora::ConfigError("export-orth needs --out <run dir>");
            adalora::export_orth_trace(args.out_dir);
            std::cout << args.out_dir << "/orth_trace.csv\n";
            return 0;
        }
        if (summ->parsed()) {
            if (args.out_dir.empty()) throw adalora::ConfigError("summarize needs --out <plan dir>");
            adalora::summarize(args.out_dir);
            std::cout << args.out_dir << "/summary.csv\n";
            return 0;
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const adalora::ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 1;
    } catch (const adalora::DimensionError& e) {
        std::cerr << "error: dimension: " << e.what() << "\n";
        return 1;
    } catch (const adalora::InputError& e) {
        std::cerr << "error: input: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
