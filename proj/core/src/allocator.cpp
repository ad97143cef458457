#include "adalora/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "adalora/errors.hpp"

namespace adalora {

const char* schedule_form_name(ScheduleForm f) {
    return f == ScheduleForm::AsPrinted ? "as_printed" : "ti_only";
}

void BudgetSchedule::validate() const {
    if (b0 < bT || bT < 0) {
        throw ConfigError("budget schedule needs b0 >= bT >= 0, got b0=" + std::to_string(b0) +
                          " bT=" + std::to_string(bT));
    }
    if (ti < 0 || tf < 0 || static_cast<std::int64_t>(ti) + tf > total_steps) {
        throw ConfigError("budget schedule needs ti, tf >= 0 and ti + tf <= T");
    }
}

int budget_at(const BudgetSchedule& s, std::int64_t t) {
    if (t < 0 || t > s.total_steps) {
        throw ContractError("budget_at: step " + std::to_string(t) + " outside [0, " +
                            std::to_string(s.total_steps) + "]");
    }
    if (t < s.ti) return s.b0;
    if (t >= s.total_steps - s.tf) return s.bT;
    const double shift = s.form == ScheduleForm::AsPrinted
                             ? static_cast<double>(s.ti) + s.tf
                             : static_cast<double>(s.ti);
    const double span = static_cast<double>(s.total_steps - s.ti - s.tf);
    const double coeff = 1.0 - (static_cast<double>(t) - shift) / span;
    const double value = s.bT + (s.b0 - s.bT) * coeff * coeff * coeff;
    // Nearest integer, ties up.
    return static_cast<int>(std::floor(value + 0.5));
}

int initial_rank(int b0, int n) {
    if (n < 1) throw ConfigError("initial_rank: n must be >= 1");
    if (b0 < 1) throw ConfigError("initial_rank: b0 must be >= 1");
    return (b0 + n - 1) / n;
}

PruneDecision select_top(const std::vector<TripletScore>& scores, int budget,
                         std::int64_t step) {
    if (budget < 0) throw ContractError("select_top: negative budget");
    std::set<std::pair<int, int>> seen;
    for (const auto& s : scores) {
        if (!seen.insert({s.matrix_id, s.triplet_index}).second) {
            throw ContractError("select_top: duplicate triplet (" +
                                std::to_string(s.matrix_id) + ", " +
                                std::to_string(s.triplet_index) + ")");
        }
    }
    std::vector<TripletScore> order = scores;
    std::sort(order.begin(), order.end(), [](const TripletScore& a, const TripletScore& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.matrix_id != b.matrix_id) return a.matrix_id < b.matrix_id;
        return a.triplet_index < b.triplet_index;
    });
    PruneDecision d;
    d.step = step;
    d.budget = budget;
    const std::size_t keep_n = std::min<std::size_t>(order.size(), static_cast<std::size_t>(budget));
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto key = std::make_pair(order[i].matrix_id, order[i].triplet_index);
        (i < keep_n ? d.kept : d.dropped).push_back(key);
    }
    std::sort(d.kept.begin(), d.kept.end());
    std::sort(d.dropped.begin(), d.dropped.end());
    return d;
}

PruneDecision prune(const std::vector<TripletScore>& scores, int budget,
                    std::vector<SvdAdapter>& adapters, std::int64_t step) {
    PruneDecision d = select_top(scores, budget, step);
    for (auto& ad : adapters) std::fill(ad.mask.begin(), ad.mask.end(), 0);
    auto adapter_by_id = [&](int id) -> SvdAdapter& {
        for (auto& ad : adapters)
            if (ad.matrix_id == id) return ad;
        throw ContractError("prune: no adapter with matrix_id " + std::to_string(id));
    };
    for (const auto& [mid, idx] : d.kept) adapter_by_id(mid).mask[static_cast<std::size_t>(idx)] = 1;
    for (const auto& [mid, idx] : d.dropped) adapter_by_id(mid).lambda(0, idx) = 0.0;
    return d;
}

} // namespace adalora
