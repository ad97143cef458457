#include "adalora/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "adalora/errors.hpp"

namespace adalora {

const char* mode_name(TrainMode m) {
    switch (m) {
    case TrainMode::AdaLora: return "adalora";
    case TrainMode::AdaLoraNoOrth: return "adalora_no_orth";
    case TrainMode::LoraFixed: return "lora_fixed";
    case TrainMode::LoraPruned: return "lora_pruned";
    case TrainMode::SvdLora: return "svd_lora";
    }
    return "?";
}

const char* action_name(PruneAction a) {
    switch (a) {
    case PruneAction::Keep: return "keep";
    case PruneAction::Drop: return "drop";
    case PruneAction::Reactivate: return "reactivate";
    }
    return "?";
}

void TrainConfig::validate(int n_matrices) const {
    if (eta <= 0.0) throw ConfigError("eta must be positive");
    if (gamma < 0.0) throw ConfigError("gamma must be non-negative");
    if (delta_t < 1) throw ConfigError("delta_t must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("EMA betas must lie in [0,1)");
    }
    if (alpha <= 0.0) throw ConfigError("alpha must be positive");
    schedule.validate();
    if (is_prune_mode()) {
        if (schedule.b0 < n_matrices) {
            throw ConfigError("initial budget " + std::to_string(schedule.b0) +
                              " below one rank per matrix (n=" + std::to_string(n_matrices) + ")");
        }
    } else {
        if (schedule.bT < n_matrices) {
            throw ConfigError("fixed-rank mode needs final budget >= n, got " +
                              std::to_string(schedule.bT));
        }
        if (variant != ScoreVariant::SmoothedSensitivity) {
            throw ConfigError(std::string("importance variant ") + variant_name(variant) +
                              " has no effect in mode " + mode_name(mode));
        }
    }
    if (mode == TrainMode::LoraPruned && variant == ScoreVariant::SingularMagnitude) {
        throw ConfigError("singular_magnitude scoring is undefined for LoRA doublets");
    }
}

void adamw_step(Matrix& param, const Matrix& grad, AdamWState& state, double eta,
                const AdamWParams& p, const Matrix* update_mask) {
    require_same_shape(param, grad, "adamw_step");
    if (state.m.empty()) {
        state.m = Matrix(param.rows(), param.cols());
        state.v = Matrix(param.rows(), param.cols());
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(p.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(p.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        if (update_mask && update_mask->at(i) == 0.0) continue;
        const double g = grad.at(i);
        state.m.at(i) = p.beta1 * state.m.at(i) + (1.0 - p.beta1) * g;
        state.v.at(i) = p.beta2 * state.v.at(i) + (1.0 - p.beta2) * g * g;
        const double m_hat = state.m.at(i) / bc1;
        const double v_hat = state.v.at(i) / bc2;
        param.at(i) -= eta * (m_hat / (std::sqrt(v_hat) + p.eps) + p.weight_decay * param.at(i));
    }
}

void sgd_step(Matrix& param, const Matrix& grad, double eta, const Matrix* update_mask) {
    require_same_shape(param, grad, "sgd_step");
    for (std::size_t i = 0; i < param.size(); ++i) {
        if (update_mask && update_mask->at(i) == 0.0) continue;
        param.at(i) -= eta * grad.at(i);
    }
}

std::vector<int> spread_ranks(int total, int n) {
    if (n < 1) throw ConfigError("spread_ranks: n must be >= 1");
    std::vector<int> ranks(static_cast<std::size_t>(n), total / n);
    for (int i = 0; i < total % n; ++i) ++ranks[static_cast<std::size_t>(i)];
    return ranks;
}

ObjectiveNodes objective(Tape& tape, const ToyModel& model, const ModelNodes& nodes,
                         const Dataset& data, std::span<const std::size_t> batch,
                         TaskKind kind, double gamma) {
    if (batch.empty()) throw ContractError("objective: empty batch");
    NodeRef task_sum;
    for (std::size_t idx : batch) {
        NodeRef y = model_forward(tape, model, nodes, tape.constant(data.inputs[idx]));
        NodeRef li = kind == TaskKind::RegressionTeacher
                         ? tape.mse_loss(y, data.targets[idx])
                         : tape.softmax_cross_entropy(y, data.labels[idx]);
        task_sum = task_sum.valid() ? tape.add(task_sum, li) : li;
    }
    ObjectiveNodes out;
    out.task = batch.size() == 1 ? task_sum
                                 : tape.scale(task_sum, 1.0 / static_cast<double>(batch.size()));
    out.total = out.task;
    if (model.adapter_set == AdapterSet::Svd && nodes.adapters_enabled && gamma > 0.0) {
        NodeRef reg_sum;
        for (const SvdNodes& an : nodes.svd) {
            NodeRef r = orth_penalty(tape, an);
            reg_sum = reg_sum.valid() ? tape.add(reg_sum, r) : r;
        }
        out.reg_value = tape.value(reg_sum)(0, 0);
        out.total = tape.add(out.task, tape.scale(reg_sum, gamma));
    }
    return out;
}

Trainer::Trainer(TrainConfig cfg, const GeneratedTask& task)
    : cfg_(std::move(cfg)),
      schedule_(cfg_.schedule),
      train_(&task.train),
      task_kind_(task.spec.kind),
      batch_rng_(SplitMix64(cfg_.seed).fork(0xBA7C8)) {
    cfg_.validate(task.spec.n_matrices());
    build_model(task);
}

void Trainer::build_model(const GeneratedTask& task) {
    model_ = task.base;
    const int n = model_.n_matrices();
    SplitMix64 adapter_rng = SplitMix64(cfg_.seed).fork(0xADA9);
    if (cfg_.is_svd_mode()) {
        if (cfg_.is_prune_mode()) {
            const int r = initial_rank(schedule_.b0, n);
            schedule_.b0 = n * r;  // warm-up is prune-free by construction
            attach_svd_adapters(model_, r, cfg_.alpha, adapter_rng);
        } else {
            // Fixed-rank SVD baseline at the final budget.
            const std::vector<int> ranks = spread_ranks(schedule_.bT, n);
            model_.adapter_set = AdapterSet::Svd;
            for (int id = 0; id < n; ++id) {
                const FrozenLinear& fl = model_.frozen(id);
                model_.svd.push_back(make_svd_adapter(fl.in_dim(), fl.out_dim(),
                                                      ranks[static_cast<std::size_t>(id)],
                                                      cfg_.alpha, adapter_rng, id,
                                                      kind_from_index(id % kNumKinds)));
            }
        }
        svd_state_.resize(static_cast<std::size_t>(n));
    } else {
        std::vector<int> ranks;
        if (cfg_.mode == TrainMode::LoraPruned) {
            const int r = initial_rank(schedule_.b0, n);
            schedule_.b0 = n * r;
            ranks.assign(static_cast<std::size_t>(n), r);
        } else {
            ranks = spread_ranks(schedule_.bT, n);
        }
        attach_lora_adapters(model_, ranks, cfg_.alpha, adapter_rng);
        lora_state_.resize(static_cast<std::size_t>(n));
    }
}

std::vector<std::size_t> Trainer::sample_batch() {
    std::vector<std::size_t> idx(static_cast<std::size_t>(cfg_.batch_size));
    for (auto& i : idx) i = static_cast<std::size_t>(batch_rng_.below(train_->size()));
    return idx;
}

bool Trainer::is_prune_step(std::int64_t t) const {
    if (!cfg_.is_prune_mode()) return false;
    const std::int64_t fix_step = schedule_.total_steps - schedule_.tf;
    if (schedule_.ti >= fix_step) return false;  // empty shrink window: never prune
    if (t == fix_step) return true;              // fixes the final distribution at exactly bT
    return t >= schedule_.ti && t < fix_step && t % cfg_.delta_t == 0;
}

void Trainer::check_finite(std::int64_t t, double loss) const {
    if (std::isfinite(loss)) return;
    std::string where = "no adapter parameter is non-finite";
    for (const auto& ad : model_.svd) {
        if (!all_finite(ad.p) || !all_finite(ad.lambda) || !all_finite(ad.q)) {
            where = "adapter " + std::to_string(ad.matrix_id) + " (" + kind_name(ad.kind) + ")";
            break;
        }
    }
    for (const auto& ad : model_.lora) {
        if (!all_finite(ad.a) || !all_finite(ad.b)) {
            where = "adapter " + std::to_string(ad.matrix_id) + " (" + kind_name(ad.kind) + ")";
            break;
        }
    }
    throw InputError("non-finite loss at step " + std::to_string(t) + "; " + where);
}

void Trainer::record_orth_trace(std::int64_t step) {
    if (model_.adapter_set != AdapterSet::Svd) return;
    for (const auto& ad : model_.svd) {
        const OrthPenaltyValue v = orth_penalty_value(ad);
        orth_trace_.push_back({step, ad.matrix_id, v.p_term, v.q_term});
    }
}

void Trainer::apply_prune(std::int64_t t, const std::vector<TripletScore>& scores) {
    const int budget = budget_at(schedule_, t);
    std::vector<std::vector<std::uint8_t>> prev;
    if (model_.adapter_set == AdapterSet::Svd) {
        for (const auto& ad : model_.svd) prev.push_back(ad.mask);
        PruneDecision d = prune(scores, budget, model_.svd, t);
        for (const auto& [mid, idx] : d.kept) {
            const bool was = prev[static_cast<std::size_t>(mid)][static_cast<std::size_t>(idx)];
            prune_log_.push_back({t, mid, idx, was ? PruneAction::Keep : PruneAction::Reactivate});
        }
        for (const auto& [mid, idx] : d.dropped) {
            prune_log_.push_back({t, mid, idx, PruneAction::Drop});
        }
        if (cfg_.reset_optimizer_on_prune) {
            for (const auto& [mid, idx] : d.dropped) {
                AdamWState& st = svd_state_[static_cast<std::size_t>(mid)].l_opt;
                if (!st.m.empty()) {
                    st.m(0, idx) = 0.0;
                    st.v(0, idx) = 0.0;
                }
            }
        }
    } else {
        for (const auto& ad : model_.lora) prev.push_back(ad.doublet_mask);
        PruneDecision d = select_top(scores, budget, t);
        for (auto& ad : model_.lora) std::fill(ad.doublet_mask.begin(), ad.doublet_mask.end(), 0);
        for (const auto& [mid, idx] : d.kept) {
            model_.lora[static_cast<std::size_t>(mid)].doublet_mask[static_cast<std::size_t>(idx)] = 1;
            const bool was = prev[static_cast<std::size_t>(mid)][static_cast<std::size_t>(idx)];
            prune_log_.push_back({t, mid, idx, was ? PruneAction::Keep : PruneAction::Reactivate});
        }
        for (const auto& [mid, idx] : d.dropped) {
            prune_log_.push_back({t, mid, idx, PruneAction::Drop});
            LoraAdapter& ad = model_.lora[static_cast<std::size_t>(mid)];
            LoraState& st = lora_state_[static_cast<std::size_t>(mid)];
            // Destructive: zero the doublet and its moments; it will not train
            // again while dropped, and stays exactly zero if ever re-selected.
            for (int j = 0; j < ad.a.cols(); ++j) ad.a(idx, j) = 0.0;
            for (int i = 0; i < ad.b.rows(); ++i) ad.b(i, idx) = 0.0;
            if (!st.a_opt.m.empty()) {
                for (int j = 0; j < ad.a.cols(); ++j) {
                    st.a_opt.m(idx, j) = 0.0;
                    st.a_opt.v(idx, j) = 0.0;
                }
                for (int i = 0; i < ad.b.rows(); ++i) {
                    st.b_opt.m(i, idx) = 0.0;
                    st.b_opt.v(i, idx) = 0.0;
                }
            }
        }
    }
    any_prune_applied_ = true;
}

void Trainer::enforce_frozen_masks() {
    // Final phase: the budget distribution is fixed; dropped lambdas are held
    // at zero while surviving triplets keep training.
    for (auto& ad : model_.svd) {
        for (int i = 0; i < ad.rank(); ++i) {
            if (!ad.mask[static_cast<std::size_t>(i)]) ad.lambda(0, i) = 0.0;
        }
    }
}

StepReport Trainer::train_step(std::int64_t t) {
    if (t < 1 || t > schedule_.total_steps) {
        throw ContractError("train_step: step " + std::to_string(t) + " outside schedule");
    }
    const double gamma = cfg_.effective_gamma();
    Tape tape;
    ModelNodes nodes = register_model(tape, model_);
    const std::vector<std::size_t> batch = sample_batch();
    ObjectiveNodes obj = objective(tape, model_, nodes, *train_, batch, task_kind_, gamma);

    StepReport report;
    report.step = t;
    report.task_loss = tape.value(obj.task)(0, 0);
    report.reg_loss = obj.reg_value;
    report.total_loss = tape.value(obj.total)(0, 0);
    check_finite(t, report.total_loss);

    tape.backward(obj.total);

    const bool scoring = cfg_.is_prune_mode();
    std::vector<TripletScore> all_scores;

    if (model_.adapter_set == AdapterSet::Svd) {
        for (std::size_t k = 0; k < model_.svd.size(); ++k) {
            SvdAdapter& ad = model_.svd[k];
            const SvdNodes& an = nodes.svd[k];
            SvdState& st = svd_state_[k];
            const Matrix& gp = tape.grad(an.p);
            const Matrix& gl = tape.grad(an.lambda);
            const Matrix& gq = tape.grad(an.q);
            if (scoring) {
                if (cfg_.variant == ScoreVariant::SmoothedSensitivity) {
                    update_stats(st.p, sensitivity_matrix(ad.p, gp), cfg_.beta1, cfg_.beta2,
                                 cfg_.uncertainty_timing);
                    update_stats(st.lambda, sensitivity_matrix(ad.lambda, gl), cfg_.beta1,
                                 cfg_.beta2, cfg_.uncertainty_timing);
                    update_stats(st.q, sensitivity_matrix(ad.q, gq), cfg_.beta1, cfg_.beta2,
                                 cfg_.uncertainty_timing);
                }
                SvdScoreInputs in;
                in.p_grad = &gp;
                in.lambda_grad = &gl;
                in.q_grad = &gq;
                in.p_stats = &st.p;
                in.lambda_stats = &st.lambda;
                in.q_stats = &st.q;
                auto scores = triplet_score(ad, in, cfg_.variant);
                all_scores.insert(all_scores.end(), scores.begin(), scores.end());
            }
            if (cfg_.optimizer == OptimizerKind::AdamW) {
                adamw_step(ad.p, gp, st.p_opt, cfg_.eta, cfg_.adamw);
                adamw_step(ad.lambda, gl, st.l_opt, cfg_.eta, cfg_.adamw);
                adamw_step(ad.q, gq, st.q_opt, cfg_.eta, cfg_.adamw);
            } else {
                sgd_step(ad.p, gp, cfg_.eta);
                sgd_step(ad.lambda, gl, cfg_.eta);
                sgd_step(ad.q, gq, cfg_.eta);
            }
        }
    } else {
        for (std::size_t k = 0; k < model_.lora.size(); ++k) {
            LoraAdapter& ad = model_.lora[k];
            const LoraNodes& an = nodes.lora[k];
            LoraState& st = lora_state_[k];
            const Matrix& ga = tape.grad(an.a);
            const Matrix& gb = tape.grad(an.b);
            if (scoring) {
                if (cfg_.variant == ScoreVariant::SmoothedSensitivity) {
                    update_stats(st.a, sensitivity_matrix(ad.a, ga), cfg_.beta1, cfg_.beta2,
                                 cfg_.uncertainty_timing);
                    update_stats(st.b, sensitivity_matrix(ad.b, gb), cfg_.beta1, cfg_.beta2,
                                 cfg_.uncertainty_timing);
                }
                LoraScoreInputs in;
                in.a_grad = &ga;
                in.b_grad = &gb;
                in.a_stats = &st.a;
                in.b_stats = &st.b;
                auto scores = doublet_score(ad, in, cfg_.variant);
                all_scores.insert(all_scores.end(), scores.begin(), scores.end());
            }
            if (cfg_.mode == TrainMode::LoraPruned) {
                // Dropped doublets are frozen: skip their A rows / B columns.
                Matrix ma = Matrix::full(ad.a.rows(), ad.a.cols(), 1.0);
                Matrix mb = Matrix::full(ad.b.rows(), ad.b.cols(), 1.0);
                bool any_frozen = false;
                for (int i = 0; i < ad.rank; ++i) {
                    if (ad.doublet_mask[static_cast<std::size_t>(i)]) continue;
                    any_frozen = true;
                    for (int j = 0; j < ad.a.cols(); ++j) ma(i, j) = 0.0;
                    for (int r = 0; r < ad.b.rows(); ++r) mb(r, i) = 0.0;
                }
                if (cfg_.optimizer == OptimizerKind::AdamW) {
                    adamw_step(ad.a, ga, st.a_opt, cfg_.eta, cfg_.adamw, any_frozen ? &ma : nullptr);
                    adamw_step(ad.b, gb, st.b_opt, cfg_.eta, cfg_.adamw, any_frozen ? &mb : nullptr);
                } else {
                    sgd_step(ad.a, ga, cfg_.eta, any_frozen ? &ma : nullptr);
                    sgd_step(ad.b, gb, cfg_.eta, any_frozen ? &mb : nullptr);
                }
            } else if (cfg_.optimizer == OptimizerKind::AdamW) {
                adamw_step(ad.a, ga, st.a_opt, cfg_.eta, cfg_.adamw);
                adamw_step(ad.b, gb, st.b_opt, cfg_.eta, cfg_.adamw);
            } else {
                sgd_step(ad.a, ga, cfg_.eta);
                sgd_step(ad.b, gb, cfg_.eta);
            }
        }
    }

    if (is_prune_step(t)) {
        apply_prune(t, all_scores);
    } else if (cfg_.is_prune_mode() && model_.adapter_set == AdapterSet::Svd &&
               t > schedule_.total_steps - schedule_.tf) {
        enforce_frozen_masks();
    }

    report.budget = cfg_.is_prune_mode() ? budget_at(schedule_, t)
                                         : model_.total_active();
    report.active_triplets = model_.total_active();
    report.active_ranks = model_.active_ranks();
    return report;
}

RunResult run(const TrainConfig& cfg, const GeneratedTask& task) {
    Trainer trainer(cfg, task);
    RunResult result;
    result.metrics.reserve(static_cast<std::size_t>(cfg.schedule.total_steps));
    for (std::int64_t t = 1; t <= cfg.schedule.total_steps; ++t) {
        trainer.record_orth_trace(t - 1);
        result.metrics.push_back(trainer.train_step(t));
    }
    trainer.record_orth_trace(cfg.schedule.total_steps);
    result.model = trainer.model();
    result.prune_log = trainer.prune_log();
    result.orth_trace = trainer.orth_trace();
    result.final_train_loss = result.metrics.empty() ? 0.0 : result.metrics.back().task_loss;
    result.final_test_loss = evaluate_loss(result.model, task.test, task.spec.kind);
    return result;
}

} // namespace adalora
