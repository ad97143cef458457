#include "adalora/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include <json.hpp>

#include "adalora/checkpoint.hpp"
#include "adalora/csv.hpp"
#include "adalora/errors.hpp"

namespace adalora {

namespace fs = std::filesystem;
using nlohmann::json;

std::string run_id(const RunSpec& spec, std::uint64_t seed) {
    std::string id = mode_name(spec.mode);
    if (spec.variant == ScoreVariant::RawSensitivity) id += "_raw";
    if (spec.variant == ScoreVariant::SingularMagnitude) id += "_mag";
    return id + "_s" + std::to_string(seed);
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open " + path + " for writing");
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_metrics_csv(const RunResult& result, int layers, const std::string& path) {
    std::ofstream out = open_out(path);
    out << "step,task_loss,reg_loss,total_loss,budget,active_triplets";
    for (int k = 0; k < kNumKinds; ++k) out << ",rank_" << kind_name(kind_from_index(k));
    out << "\n";
    for (const StepReport& r : result.metrics) {
        out << r.step << ',' << format_double(r.task_loss) << ',' << format_double(r.reg_loss)
            << ',' << format_double(r.total_loss) << ',' << r.budget << ','
            << r.active_triplets;
        // Per-kind active rank sums across layers.
        for (int k = 0; k < kNumKinds; ++k) {
            int acc = 0;
            for (int l = 0; l < layers; ++l) {
                const std::size_t id = static_cast<std::size_t>(l * kNumKinds + k);
                if (id < r.active_ranks.size()) acc += r.active_ranks[id];
            }
            out << ',' << acc;
        }
        out << "\n";
    }
}

void write_prune_log_csv(const RunResult& result, const std::string& path) {
    std::ofstream out = open_out(path);
    out << "step,matrix_id,triplet_index,action\n";
    for (const PruneLogEntry& e : result.prune_log) {
        out << e.step << ',' << e.matrix_id << ',' << e.triplet_index << ','
            << action_name(e.action) << "\n";
    }
}

void write_orth_trace_csv(const RunResult& result, const std::string& path) {
    std::ofstream out = open_out(path);
    out << "step,matrix_id,p_penalty,q_penalty\n";
    for (const OrthTraceEntry& e : result.orth_trace) {
        out << e.step << ',' << e.matrix_id << ',' << format_double(e.p_penalty) << ','
            << format_double(e.q_penalty) << "\n";
    }
}

} // namespace

void write_run_outputs(const RunResult& result, const TrainConfig& cfg,
                       const TaskSpec& task, const std::string& dir) {
    fs::create_directories(dir);
    write_metrics_csv(result, task.layers, dir + "/metrics.csv");
    write_prune_log_csv(result, dir + "/prune_log.csv");
    if (result.model.adapter_set == AdapterSet::Svd) {
        write_orth_trace_csv(result, dir + "/orth_trace.csv");
    }
    save_checkpoint(result.model, dir + "/checkpoint.json");

    json info;
    info["mode"] = mode_name(cfg.mode);
    info["variant"] = variant_name(cfg.variant);
    info["seed"] = cfg.seed;
    info["budget_initial"] = cfg.schedule.b0;
    info["budget_final"] = cfg.schedule.bT;
    info["total_steps"] = cfg.schedule.total_steps;
    info["layers"] = task.layers;
    info["task_kind"] = task_kind_name(task.kind);
    info["final_train_loss"] = result.final_train_loss;
    info["final_test_loss"] = result.final_test_loss;
    info["active_triplets"] = result.model.total_active();
    std::ofstream out = open_out(dir + "/run_info.json");
    out << info.dump(2) << "\n";
}

std::vector<RunRecord> run_plan(const ExperimentPlan& plan) {
    plan.validate();
    if (plan.output_dir.empty()) throw ConfigError("plan output directory not set");
    const GeneratedTask task = gen_task(plan.task);

    struct Job {
        RunSpec spec;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const RunSpec& spec : plan.runs) {
        for (int rep = 0; rep < plan.repetitions; ++rep) {
            jobs.push_back({spec, plan.base.seed + static_cast<std::uint64_t>(rep)});
        }
    }
    std::vector<RunRecord> records(jobs.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            const Job& job = jobs[i];
            RunRecord& rec = records[i];
            rec.spec = job.spec;
            rec.seed = job.seed;
            rec.dir = plan.output_dir + "/" + run_id(job.spec, job.seed);
            try {
                TrainConfig cfg = plan.base;
                cfg.mode = job.spec.mode;
                cfg.variant = job.spec.variant;
                cfg.seed = job.seed;
                RunResult result = run(cfg, task);
                write_run_outputs(result, cfg, plan.task, rec.dir);
                rec.final_train_loss = result.final_train_loss;
                rec.final_test_loss = result.final_test_loss;
                rec.active_triplets = result.model.total_active();
            } catch (const std::exception& e) {
                rec.ok = false;
                rec.error = e.what();
            }
        }
    };
    const unsigned pool = std::min<unsigned>(
        std::max(1u, std::thread::hardware_concurrency()),
        static_cast<unsigned>(jobs.size()));
    std::vector<std::thread> threads;
    for (unsigned w = 0; w + 1 < pool; ++w) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();

    bool any_ok = false;
    for (const RunRecord& rec : records) any_ok = any_ok || rec.ok;
    if (any_ok) summarize(plan.output_dir);
    return records;
}

void export_rank_heatmap(const std::string& run_dir, const std::string& out_csv) {
    const json info = json::parse(read_file(run_dir + "/run_info.json"));
    const json ckpt = json::parse(read_file(run_dir + "/checkpoint.json"));
    if (ckpt.value("adapter_set", "") != "svd") {
        throw InputError("rank heatmap needs an SVD-adapter run, got mode " +
                         info.value("mode", "?"));
    }
    const int layers = info.at("layers").get<int>();
    std::vector<std::vector<int>> cells(static_cast<std::size_t>(layers),
                                        std::vector<int>(kNumKinds, 0));
    for (const json& a : ckpt.at("adapters")) {
        const int id = a.at("matrix_id").get<int>();
        int active = 0;
        for (int m : a.at("mask").get<std::vector<int>>()) active += m ? 1 : 0;
        cells[static_cast<std::size_t>(id / kNumKinds)][static_cast<std::size_t>(id % kNumKinds)] =
            active;
    }
    const std::string path = out_csv.empty() ? run_dir + "/heatmap.csv" : out_csv;
    std::ofstream out = open_out(path);
    out << "layer";
    for (int k = 0; k < kNumKinds; ++k) out << ',' << kind_name(kind_from_index(k));
    out << "\n";
    for (int l = 0; l < layers; ++l) {
        out << l;
        for (int k = 0; k < kNumKinds; ++k) out << ',' << cells[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)];
        out << "\n";
    }
}

void export_orth_trace(const std::string& run_dir, const std::string& out_csv) {
    const std::string src = run_dir + "/orth_trace.csv";
    if (!fs::exists(src)) {
        throw InputError("run has no orthogonality trace (not an SVD-adapter run?): " + src);
    }
    const std::string text = read_file(src);
    if (text.rfind("step,matrix_id,p_penalty,q_penalty", 0) != 0) {
        throw InputError("malformed orthogonality trace header in " + src);
    }
    const std::string path = out_csv.empty() ? src : out_csv;
    if (path != src) {
        std::ofstream out = open_out(path);
        out << text;
    }
}

void summarize(const std::string& root_dir, const std::string& out_csv) {
    struct Group {
        int count = 0;
        double train_acc = 0.0;
        double test_acc = 0.0;
        int budget_final = 0;
    };
    std::map<std::pair<std::string, std::string>, Group> groups;
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root_dir)) {
        if (entry.is_directory() && fs::exists(entry.path() / "run_info.json")) {
            dirs.push_back(entry.path());
        }
    }
    std::sort(dirs.begin(), dirs.end());
    for (const fs::path& dir : dirs) {
        const json info = json::parse(read_file((dir / "run_info.json").string()));
        Group& g = groups[{info.at("mode").get<std::string>(),
                           info.at("variant").get<std::string>()}];
        ++g.count;
        g.train_acc += info.at("final_train_loss").get<double>();
        g.test_acc += info.at("final_test_loss").get<double>();
        g.budget_final = info.at("budget_final").get<int>();
    }
    if (groups.empty()) throw InputError("no completed runs under " + root_dir);
    const std::string path = out_csv.empty() ? root_dir + "/summary.csv" : out_csv;
    std::ofstream out = open_out(path);
    out << "mode,variant,budget_final,runs,mean_train_loss,mean_test_loss\n";
    for (const auto& [key, g] : groups) {
        out << key.first << ',' << key.second << ',' << g.budget_final << ',' << g.count << ','
            << format_double(g.train_acc / g.count) << ','
            << format_double(g.test_acc / g.count) << "\n";
    }
}

void export_task(const GeneratedTask& task, const std::string& dir) {
    fs::create_directories(dir);
    auto write_split = [&](const Dataset& data, const std::string& name) {
        std::ofstream out = open_out(dir + "/" + name);
        out << "sample,row";
        for (int j = 0; j < task.spec.d; ++j) out << ",x" << j;
        if (task.spec.kind == TaskKind::RegressionTeacher) {
            for (int j = 0; j < task.spec.d; ++j) out << ",y" << j;
        } else {
            out << ",label";
        }
        out << "\n";
        for (std::size_t s = 0; s < data.size(); ++s) {
            for (int i = 0; i < task.spec.seq_len; ++i) {
                out << s << ',' << i;
                for (int j = 0; j < task.spec.d; ++j)
                    out << ',' << format_double(data.inputs[s](i, j));
                if (task.spec.kind == TaskKind::RegressionTeacher) {
                    for (int j = 0; j < task.spec.d; ++j)
                        out << ',' << format_double(data.targets[s](i, j));
                } else {
                    out << ',' << data.labels[s][static_cast<std::size_t>(i)];
                }
                out << "\n";
            }
        }
    };
    write_split(task.train, "train.csv");
    write_split(task.test, "test.csv");

    std::ofstream out = open_out(dir + "/teacher_deltas.csv");
    out << "matrix_id,layer,kind,planted_rank,delta_frobenius\n";
    for (int id = 0; id < task.spec.n_matrices(); ++id) {
        const int rank = task.spec.planted_ranks.empty()
                             ? 0
                             : task.spec.planted_ranks[static_cast<std::size_t>(id)];
        const Matrix& delta = task.deltas[static_cast<std::size_t>(id)];
        out << id << ',' << id / kNumKinds << ',' << kind_name(kind_from_index(id % kNumKinds))
            << ',' << rank << ','
            << format_double(delta.empty() ? 0.0 : std::sqrt(frobenius_sq(delta))) << "\n";
    }
}

} // namespace adalora
