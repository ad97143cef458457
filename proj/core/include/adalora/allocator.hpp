#pragma once

#include <cstdint>
#include <vector>

#include "adalora/adapters.hpp"
#include "adalora/importance.hpp"

namespace adalora {

/// Which cubic-branch numerator the schedule uses. AsPrinted subtracts both
/// warm-up and final-phase lengths inside the numerator; TiOnly subtracts the
/// warm-up only, which makes the schedule continuous and monotone everywhere.
enum class ScheduleForm { AsPrinted, TiOnly };
const char* schedule_form_name(ScheduleForm f);

/// Total-rank budget over training: constant b0 for t < ti, a cubic decay in
/// the middle, constant bT from T - tf on.
struct BudgetSchedule {
    int b0 = 0;      // initial total rank
    int bT = 0;      // final total rank
    int ti = 0;      // warm-up steps
    int tf = 0;      // final fixed steps
    std::int64_t total_steps = 0;
    ScheduleForm form = ScheduleForm::AsPrinted;

    void validate() const;  // throws ConfigError
};

/// Budget at step t (0 <= t <= T), rounded to nearest integer, ties up.
int budget_at(const BudgetSchedule& s, std::int64_t t);

/// ceil(b0 / n); callers redefine b0 as n * r so warm-up is prune-free.
int initial_rank(int b0, int n);

/// Outcome of one global pruning pass.
struct PruneDecision {
    std::int64_t step = 0;
    std::vector<std::pair<int, int>> kept;     // (matrix_id, triplet_index), sorted
    std::vector<std::pair<int, int>> dropped;  // sorted
    int budget = 0;
};

/// Pure top-b selection over the global score set. Ties break by
/// (score desc, matrix_id asc, triplet_index asc). Throws ContractError on a
/// duplicate (matrix_id, triplet_index) or negative budget.
PruneDecision select_top(const std::vector<TripletScore>& scores, int budget,
                         std::int64_t step = 0);

/// Applies a global top-b decision to the adapters: kept triplets retain
/// lambda and get mask=true; dropped ones get mask=false and lambda zeroed.
PruneDecision prune(const std::vector<TripletScore>& scores, int budget,
                    std::vector<SvdAdapter>& adapters, std::int64_t step = 0);

} // namespace adalora
