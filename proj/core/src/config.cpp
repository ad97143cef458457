#include "adalora/config.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "adalora/errors.hpp"

namespace adalora {

TrainMode mode_from_name(const std::string& name) {
    if (name == "adalora") return TrainMode::AdaLora;
    if (name == "adalora_no_orth") return TrainMode::AdaLoraNoOrth;
    if (name == "lora_fixed") return TrainMode::LoraFixed;
    if (name == "lora_pruned") return TrainMode::LoraPruned;
    if (name == "svd_lora") return TrainMode::SvdLora;
    throw ConfigError("unknown mode '" + name + "'");
}

ScoreVariant variant_from_name(const std::string& name) {
    if (name == "smoothed_sensitivity") return ScoreVariant::SmoothedSensitivity;
    if (name == "raw_sensitivity") return ScoreVariant::RawSensitivity;
    if (name == "singular_magnitude") return ScoreVariant::SingularMagnitude;
    throw ConfigError("unknown importance variant '" + name + "'");
}

ScheduleForm schedule_form_from_name(const std::string& name) {
    if (name == "as_printed") return ScheduleForm::AsPrinted;
    if (name == "ti_only") return ScheduleForm::TiOnly;
    throw ConfigError("unknown schedule form '" + name + "'");
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "regression_teacher") return TaskKind::RegressionTeacher;
    if (name == "classification_toy") return TaskKind::ClassificationToy;
    throw ConfigError("unknown task kind '" + name + "'");
}

void ExperimentPlan::validate() const {
    task.validate();
    if (runs.empty()) throw ConfigError("plan has no runs");
    if (repetitions < 1) throw ConfigError("plan repetitions must be >= 1");
    // Budget parity across compared runs: all runs share base.schedule.bT by
    // construction; reject overridden configs that broke it.
    for (const RunSpec& r : runs) {
        TrainConfig cfg = base;
        cfg.mode = r.mode;
        cfg.variant = r.variant;
        cfg.validate(task.n_matrices());
        if (cfg.schedule.bT != base.schedule.bT) {
            throw ConfigError("budget parity violated: runs must share the final budget");
        }
    }
}

namespace {

class KeyValueReader {
public:
    explicit KeyValueReader(const std::string& text) {
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
            }
            std::string key = trim(line.substr(0, eq));
            std::string value = trim(line.substr(eq + 1));
            if (key.empty()) {
                throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
            }
            if (!entries_.emplace(key, value).second) {
                throw ConfigError("duplicate config key '" + key + "'");
            }
        }
    }

    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        used_.insert(key);
        return it->second;
    }

    double get_double(const std::string& key, double fallback) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        used_.insert(key);
        return parse_double(key, it->second);
    }

    std::int64_t get_int(const std::string& key, std::int64_t fallback) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        used_.insert(key);
        return parse_int(key, it->second);
    }

    bool get_bool(const std::string& key, bool fallback) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        used_.insert(key);
        if (it->second == "true") return true;
        if (it->second == "false") return false;
        throw ConfigError("key '" + key + "' expects true or false");
    }

    std::vector<std::string> get_list(const std::string& key) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return {};
        used_.insert(key);
        std::vector<std::string> items;
        std::string cur;
        for (char c : it->second + ",") {
            if (c == ',') {
                std::string t = trim(cur);
                if (!t.empty()) items.push_back(t);
                cur.clear();
            } else {
                cur += c;
            }
        }
        return items;
    }

    void reject_unknown() const {
        for (const auto& [key, value] : entries_) {
            if (used_.find(key) == used_.end()) {
                throw ConfigError("unknown config key '" + key + "'");
            }
        }
    }

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    static double parse_double(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            const double x = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': '" + v + "' is not a number");
        }
    }

    static std::int64_t parse_int(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            const long long x = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
        }
    }

    std::map<std::string, std::string> entries_;
    std::set<std::string> used_;
};

RunSpec parse_run_spec(const std::string& item) {
    RunSpec spec;
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
        spec.mode = mode_from_name(item);
    } else {
        spec.mode = mode_from_name(item.substr(0, colon));
        spec.variant = variant_from_name(item.substr(colon + 1));
    }
    return spec;
}

} // namespace

ExperimentPlan parse_plan(const std::string& text) {
    KeyValueReader kv(text);
    ExperimentPlan plan;

    plan.task.kind = task_kind_from_name(kv.get_string("task.kind", "regression_teacher"));
    plan.task.layers = static_cast<int>(kv.get_int("task.layers", 4));
    plan.task.d = static_cast<int>(kv.get_int("task.width", 32));
    plan.task.heads = static_cast<int>(kv.get_int("task.heads", 4));
    plan.task.d_ffn = static_cast<int>(kv.get_int("task.ffn_width", 64));
    plan.task.noise_std = kv.get_double("task.noise_std", 0.01);
    plan.task.train_count = static_cast<int>(kv.get_int("task.train_count", 256));
    plan.task.test_count = static_cast<int>(kv.get_int("task.test_count", 64));
    plan.task.seq_len = static_cast<int>(kv.get_int("task.seq_len", 8));
    plan.task.seed = static_cast<std::uint64_t>(kv.get_int("task.seed", 42));
    for (const std::string& item : kv.get_list("task.planted_ranks")) {
        try {
            plan.task.planted_ranks.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw ConfigError("task.planted_ranks: '" + item + "' is not an integer");
        }
    }

    TrainConfig& t = plan.base;
    t.eta = kv.get_double("train.eta", t.eta);
    t.gamma = kv.get_double("train.gamma", t.gamma);
    t.beta1 = kv.get_double("train.beta1", t.beta1);
    t.beta2 = kv.get_double("train.beta2", t.beta2);
    t.delta_t = static_cast<int>(kv.get_int("train.delta_t", t.delta_t));
    t.variant = variant_from_name(
        kv.get_string("train.variant", variant_name(t.variant)));
    t.mode = mode_from_name(kv.get_string("train.mode", mode_name(t.mode)));
    const std::string opt = kv.get_string("train.optimizer", "adamw");
    if (opt == "adamw") {
        t.optimizer = OptimizerKind::AdamW;
    } else if (opt == "sgd") {
        t.optimizer = OptimizerKind::Sgd;
    } else {
        throw ConfigError("unknown optimizer '" + opt + "'");
    }
    t.adamw.beta1 = kv.get_double("train.adam.beta1", t.adamw.beta1);
    t.adamw.beta2 = kv.get_double("train.adam.beta2", t.adamw.beta2);
    t.adamw.eps = kv.get_double("train.adam.eps", t.adamw.eps);
    t.adamw.weight_decay = kv.get_double("train.adam.weight_decay", t.adamw.weight_decay);
    t.batch_size = static_cast<int>(kv.get_int("train.batch_size", t.batch_size));
    t.seed = static_cast<std::uint64_t>(kv.get_int("train.seed", 0));
    t.alpha = kv.get_double("train.alpha", t.alpha);
    t.uncertainty_timing = kv.get_bool("train.uncertainty_uses_current_ibar", true)
                               ? UncertaintyTiming::CurrentIbar
                               : UncertaintyTiming::PreviousIbar;
    t.reset_optimizer_on_prune =
        kv.get_bool("train.reset_optimizer_on_prune", t.reset_optimizer_on_prune);

    t.schedule.total_steps = kv.get_int("budget.total_steps", 3000);
    t.schedule.bT = static_cast<int>(kv.get_int("budget.final", 64));
    // Default initial budget: 1.5x the final budget.
    t.schedule.b0 = static_cast<int>(
        kv.get_int("budget.initial", (3 * static_cast<std::int64_t>(t.schedule.bT) + 1) / 2));
    t.schedule.ti = static_cast<int>(kv.get_int("budget.warmup_steps", 500));
    t.schedule.tf = static_cast<int>(kv.get_int("budget.final_steps", 500));
    t.schedule.form =
        schedule_form_from_name(kv.get_string("budget.schedule_form", "as_printed"));

    for (const std::string& item : kv.get_list("plan.runs")) {
        plan.runs.push_back(parse_run_spec(item));
    }
    if (plan.runs.empty()) plan.runs.push_back(RunSpec{t.mode, t.variant});
    plan.repetitions = static_cast<int>(kv.get_int("plan.repetitions", 1));
    plan.output_dir = kv.get_string("plan.output", "");

    kv.reject_unknown();
    plan.validate();
    return plan;
}

ExperimentPlan load_plan(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_plan(text);
}

} // namespace adalora
